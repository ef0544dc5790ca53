//! Float formatting shared by every CSV writer.

/// Scientific notation with 12 significant digits; `inf`/`-inf`/`NaN`
/// otherwise. `str::parse::<f64>` reads every form back.
pub fn sig12(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.11e}")
    } else {
        format!("{x}")
    }
}

/// Round `x` to what [`sig12`] would print.
pub fn round_sig12(x: f64) -> f64 {
    sig12(x).parse().expect("sig12 output parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prints_twelve_significant_digits() {
        assert_eq!(sig12(1.0), "1.00000000000e0");
        assert_eq!(sig12(-0.000123456789012345), "-1.23456789012e-4");
        assert_eq!(sig12(f64::INFINITY), "inf");
        assert_eq!("inf".parse::<f64>().unwrap(), f64::INFINITY);
    }

    #[test]
    fn round_trip_is_stable() {
        for &x in &[std::f64::consts::PI, 1e-300, 6.02214076e23, -2.5] {
            let r = round_sig12(x);
            assert_eq!(round_sig12(r), r);
            assert!(((r - x) / x).abs() < 1e-11);
        }
    }
}
