//! Simulatable dynamical systems.
//!
//! A [`SystemModel`] is either a continuous-time vector field `ẋ = f(x, u)`
//! or a discrete-time map `x_{k+1} = f(x_k, u_k)`, together with an output
//! map `y = h(x)`. Continuous systems are advanced with classical fixed-step
//! RK4, holding the input constant over each step.

use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },
    #[error("degenerate output evaluation: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeKind {
    Continuous,
    Discrete,
}

/// Angular outputs live on the circle; their differences are wrapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Linear,
    Angular,
}

pub type Dynamics = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type OutputMap = Arc<dyn Fn(&DVector<f64>) -> Result<DVector<f64>, SimError> + Send + Sync>;

/// Immutable system description. Cheap to clone; the maps are shared.
#[derive(Clone)]
pub struct SystemModel {
    n: usize,
    m: usize,
    p: usize,
    time_kind: TimeKind,
    output_kinds: Vec<OutputKind>,
    state_names: Vec<String>,
    output_names: Vec<String>,
    dynamics: Dynamics,
    output_map: OutputMap,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("p", &self.p)
            .field("time_kind", &self.time_kind)
            .field("output_kinds", &self.output_kinds)
            .finish_non_exhaustive()
    }
}

impl SystemModel {
    pub fn new(
        n: usize,
        m: usize,
        time_kind: TimeKind,
        output_kinds: Vec<OutputKind>,
        dynamics: Dynamics,
        output_map: OutputMap,
    ) -> Result<Self, SimError> {
        if n == 0 {
            return Err(SimError::InvalidArgument("state dimension must be positive".into()));
        }
        let p = output_kinds.len();
        if p == 0 {
            return Err(SimError::InvalidArgument("output dimension must be positive".into()));
        }
        Ok(Self {
            n,
            m,
            p,
            time_kind,
            output_kinds,
            state_names: (0..n).map(|i| format!("x{i}")).collect(),
            output_names: (0..p).map(|i| format!("y{i}")).collect(),
            dynamics,
            output_map,
        })
    }

    pub fn with_names(mut self, states: &[&str], outputs: &[&str]) -> Self {
        assert_eq!(states.len(), self.n, "one name per state");
        assert_eq!(outputs.len(), self.p, "one name per output");
        self.state_names = states.iter().map(|s| s.to_string()).collect();
        self.output_names = outputs.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn time_kind(&self) -> TimeKind {
        self.time_kind
    }
    pub fn output_kinds(&self) -> &[OutputKind] {
        &self.output_kinds
    }
    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }
    pub fn output_names(&self) -> &[String] {
        &self.output_names
    }

    /// `f(x, u)`: vector field or one-step map, depending on time kind.
    pub fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.dynamics)(x, u)
    }

    /// `h(x)`, with its length checked.
    pub fn output(&self, x: &DVector<f64>) -> Result<DVector<f64>, SimError> {
        let y = (self.output_map)(x)?;
        if y.len() != self.p {
            return Err(SimError::DimensionMismatch {
                what: "output",
                expected: self.p,
                got: y.len(),
            });
        }
        Ok(y)
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> DVector<f64> {
        match self.time_kind {
            TimeKind::Discrete => self.dynamics(x, u),
            TimeKind::Continuous => {
                let k1 = self.dynamics(x, u);
                let k2 = self.dynamics(&(x + &k1 * (0.5 * dt)), u);
                let k3 = self.dynamics(&(x + &k2 * (0.5 * dt)), u);
                let k4 = self.dynamics(&(x + &k3 * dt), u);
                x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
            }
        }
    }
}

/// Piecewise-constant input sequence `u_0, …, u_{w−1}` with step `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSchedule {
    pub values: Vec<DVector<f64>>,
    pub dt: f64,
}

impl InputSchedule {
    pub fn new(values: Vec<DVector<f64>>, dt: f64) -> Result<Self, SimError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if let Some(first) = values.first() {
            if let Some(bad) = values.iter().find(|v| v.len() != first.len()) {
                return Err(SimError::DimensionMismatch {
                    what: "input vector",
                    expected: first.len(),
                    got: bad.len(),
                });
            }
        }
        Ok(Self { values, dt })
    }

    /// `len` copies of the zero input of dimension `m`.
    pub fn zeros(m: usize, len: usize, dt: f64) -> Result<Self, SimError> {
        Self::new(vec![DVector::zeros(m); len], dt)
    }

    pub fn constant(u: DVector<f64>, len: usize, dt: f64) -> Result<Self, SimError> {
        Self::new(vec![u; len], dt)
    }

    /// Expand `(value, duration)` segments into per-step values. Each
    /// segment must cover a whole number of steps.
    pub fn from_segments(segments: &[(Vec<f64>, f64)], dt: f64) -> Result<Self, SimError> {
        let mut values = Vec::new();
        for (i, (u, duration)) in segments.iter().enumerate() {
            let steps = duration / dt;
            let rounded = steps.round();
            if !(rounded >= 1.0) || (steps - rounded).abs() > 1e-6 * rounded.max(1.0) {
                return Err(SimError::InvalidArgument(format!(
                    "segment {i}: duration {duration} is not a positive multiple of dt {dt}"
                )));
            }
            let u = DVector::from_column_slice(u);
            values.extend(std::iter::repeat_n(u, rounded as usize));
        }
        Self::new(values, dt)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Restriction to `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self, SimError> {
        let end = start + len;
        if end > self.values.len() {
            return Err(SimError::InvalidArgument(format!(
                "input window [{start}, {end}) exceeds schedule length {}",
                self.values.len()
            )));
        }
        Ok(Self {
            values: self.values[start..end].to_vec(),
            dt: self.dt,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Simulate `steps` samples starting at `x0`; sample `k + 1` is obtained
/// from sample `k` under input `u_k`.
pub fn simulate(
    system: &SystemModel,
    x0: &DVector<f64>,
    inputs: &InputSchedule,
    steps: usize,
) -> Result<Trajectory, SimError> {
    if x0.len() != system.n {
        return Err(SimError::DimensionMismatch {
            what: "initial state",
            expected: system.n,
            got: x0.len(),
        });
    }
    if steps == 0 {
        return Err(SimError::InvalidArgument("steps must be positive".into()));
    }
    if steps > inputs.len() + 1 {
        return Err(SimError::InvalidArgument(format!(
            "{steps} steps need at least {} inputs, schedule has {}",
            steps - 1,
            inputs.len()
        )));
    }
    if let Some(u) = inputs.values.first() {
        if u.len() != system.m {
            return Err(SimError::DimensionMismatch {
                what: "input vector",
                expected: system.m,
                got: u.len(),
            });
        }
    }
    if !(inputs.dt > 0.0) {
        return Err(SimError::InvalidArgument("dt must be positive".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite { what: "state", step: 0 });
    }

    let mut states = Vec::with_capacity(steps);
    let mut outputs = Vec::with_capacity(steps);
    let mut x = x0.clone();
    for k in 0..steps {
        let y = system.output(&x)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite {
                what: "output",
                step: k,
            });
        }
        outputs.push(y);
        if k + 1 < steps {
            let next = system.step(&x, &inputs.values[k], inputs.dt);
            if next.len() != system.n {
                return Err(SimError::DimensionMismatch {
                    what: "dynamics result",
                    expected: system.n,
                    got: next.len(),
                });
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonFinite {
                    what: "state",
                    step: k + 1,
                });
            }
            states.push(std::mem::replace(&mut x, next));
        } else {
            states.push(x.clone());
        }
    }
    Ok(Trajectory {
        states,
        outputs,
        dt: inputs.dt,
    })
}

/// Autonomous linear system `ẋ = Ax` (or `x_{k+1} = Ax_k`), `y = Cx`.
pub fn linear_system(a: DMatrix<f64>, c: DMatrix<f64>, time_kind: TimeKind) -> Result<SystemModel, SimError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(SimError::DimensionMismatch {
            what: "A columns",
            expected: n,
            got: a.ncols(),
        });
    }
    if c.ncols() != n {
        return Err(SimError::DimensionMismatch {
            what: "C columns",
            expected: n,
            got: c.ncols(),
        });
    }
    let p = c.nrows();
    let a = Arc::new(a);
    let c = Arc::new(c);
    SystemModel::new(
        n,
        0,
        time_kind,
        vec![OutputKind::Linear; p],
        Arc::new(move |x: &DVector<f64>, _u: &DVector<f64>| a.as_ref() * x),
        Arc::new(move |x: &DVector<f64>| Ok(c.as_ref() * x)),
    )
}

/// Indices into the fly model's state vector.
pub mod fly {
    pub const ALTITUDE: usize = 0;
    pub const GROUND_SPEED: usize = 1;
    pub const WIND_SPEED: usize = 2;
    pub const HEADING: usize = 3;
    pub const WIND_DIRECTION: usize = 4;

    pub const OUT_HEADING: usize = 0;
    pub const OUT_OPTIC_FLOW: usize = 1;
    pub const OUT_AIRSPEED_ANGLE: usize = 2;
}

/// Flying-insect model with state `(d, g, w, φ, ζ)`, inputs `(u_g, u_φ)`
/// and outputs `(φ, g/d, γ)`, where γ is the direction of the airspeed
/// vector `(−g cos φ + w cos ζ, −g sin φ + w sin ζ)`.
///
/// Only `g` and `φ` are driven; altitude, wind speed and wind direction are
/// constant.
pub fn fly_model() -> SystemModel {
    let dynamics: Dynamics =
        Arc::new(|_x: &DVector<f64>, u: &DVector<f64>| DVector::from_column_slice(&[0.0, u[0], 0.0, u[1], 0.0]));
    let output_map: OutputMap = Arc::new(|x: &DVector<f64>| {
        let (d, g, w, phi, zeta) = (x[0], x[1], x[2], x[3], x[4]);
        if d == 0.0 {
            return Err(SimError::Degenerate("optic flow g/d with zero altitude".into()));
        }
        let num = -g * phi.sin() + w * zeta.sin();
        let den = -g * phi.cos() + w * zeta.cos();
        if num == 0.0 && den == 0.0 {
            return Err(SimError::Degenerate("airspeed vector vanishes".into()));
        }
        Ok(DVector::from_column_slice(&[phi, g / d, num.atan2(den)]))
    });
    SystemModel::new(
        5,
        2,
        TimeKind::Continuous,
        vec![OutputKind::Angular, OutputKind::Linear, OutputKind::Angular],
        dynamics,
        output_map,
    )
    .expect("fly model dimensions are valid")
    .with_names(
        &["altitude", "ground_speed", "wind_speed", "heading", "wind_direction"],
        &["heading", "optic_flow", "airspeed_angle"],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn identity_1d() -> SystemModel {
        linear_system(DMatrix::identity(1, 1), DMatrix::identity(1, 1), TimeKind::Discrete).unwrap()
    }

    #[test]
    fn identity_discrete_holds_state() {
        let sys = identity_1d();
        let u = InputSchedule::zeros(0, 3, 1.0).unwrap();
        let tr = simulate(&sys, &DVector::from_element(1, 2.0), &u, 3).unwrap();
        assert_eq!(tr.states.iter().map(|s| s[0]).collect::<Vec<_>>(), vec![2.0; 3]);
        assert_eq!(tr.outputs.iter().map(|s| s[0]).collect::<Vec<_>>(), vec![2.0; 3]);
    }

    #[test]
    fn zero_dynamics_keeps_output_at_x0() {
        let sys = linear_system(DMatrix::zeros(1, 1), DMatrix::identity(1, 1), TimeKind::Continuous).unwrap();
        let u = InputSchedule::zeros(0, 10, 0.1).unwrap();
        let tr = simulate(&sys, &DVector::from_element(1, 0.7), &u, 11).unwrap();
        assert!(tr.outputs.iter().all(|y| y[0] == 0.7));
    }

    #[test]
    fn fly_model_constant_without_inputs() {
        let sys = fly_model();
        let x0 = DVector::from_column_slice(&[1.0, 1.0, 1.0, 0.0, PI / 2.0]);
        let u = InputSchedule::zeros(2, 20, 0.1).unwrap();
        let tr = simulate(&sys, &x0, &u, 21).unwrap();
        assert!(tr.states.iter().all(|s| s == &x0));
    }

    #[test]
    fn fly_outputs_hand_values() {
        let sys = fly_model();
        let y = sys
            .output(&DVector::from_column_slice(&[1.0, 1.0, 1.0, 0.0, PI]))
            .unwrap();
        assert_eq!(y[0], 0.0);
        assert_eq!(y[1], 1.0);
        // atan2(0·(−1) + 1·sin π, −1 + cos π): the numerator is sin π ≈ 1.2e−16,
        // so the angle sits on the positive side of the branch cut.
        let expected = (PI.sin()).atan2(-1.0 + PI.cos());
        assert_eq!(y[2], expected);
        assert!((y[2] - PI).abs() < 1e-15);

        let y = sys
            .output(&DVector::from_column_slice(&[2.0, 1.0, 0.0, 0.3, 5.0]))
            .unwrap();
        assert_eq!(y[1], 0.5);
        assert!((y[2] - (0.3 - PI)).abs() < 1e-14);
    }

    #[test]
    fn fly_degenerate_points_error() {
        let sys = fly_model();
        let zero_alt = DVector::from_column_slice(&[0.0, 1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(sys.output(&zero_alt), Err(SimError::Degenerate(_))));
        let still_air = DVector::from_column_slice(&[1.0, 0.8, 0.8, 0.4, 0.4]);
        assert!(matches!(sys.output(&still_air), Err(SimError::Degenerate(_))));
    }

    #[test]
    fn simulate_rejects_bad_arguments() {
        let sys = identity_1d();
        let u = InputSchedule::zeros(0, 2, 1.0).unwrap();
        let x0 = DVector::from_element(1, 0.0);
        assert!(simulate(&sys, &x0, &u, 4).is_err());
        assert!(simulate(&sys, &DVector::zeros(2), &u, 2).is_err());
        let fly = fly_model();
        let wrong_u = InputSchedule::zeros(1, 3, 0.1).unwrap();
        let fx0 = DVector::from_column_slice(&[1.0, 1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            simulate(&fly, &fx0, &wrong_u, 2),
            Err(SimError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_dynamics_abort() {
        let sys = SystemModel::new(
            1,
            0,
            TimeKind::Discrete,
            vec![OutputKind::Linear],
            Arc::new(|x: &DVector<f64>, _u: &DVector<f64>| x * 1e300),
            Arc::new(|x: &DVector<f64>| Ok(x.clone())),
        )
        .unwrap();
        let u = InputSchedule::zeros(0, 5, 1.0).unwrap();
        let err = simulate(&sys, &DVector::from_element(1, 1e10), &u, 5).unwrap_err();
        assert_eq!(err, SimError::NonFinite { what: "state", step: 1 });
    }

    #[test]
    fn linear_system_dimension_checks() {
        assert!(linear_system(DMatrix::zeros(2, 3), DMatrix::zeros(1, 2), TimeKind::Discrete).is_err());
        assert!(linear_system(DMatrix::zeros(2, 2), DMatrix::zeros(1, 3), TimeKind::Discrete).is_err());
    }

    #[test]
    fn segments_expand_per_step() {
        let s = InputSchedule::from_segments(&[(vec![1.0], 0.3), (vec![-1.0], 0.2)], 0.1).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.values[2][0], 1.0);
        assert_eq!(s.values[3][0], -1.0);
        assert!(InputSchedule::from_segments(&[(vec![1.0], 0.25)], 0.1).is_err());
        assert_eq!(s.window(1, 3).unwrap().len(), 3);
        assert!(s.window(3, 3).is_err());
    }
}
