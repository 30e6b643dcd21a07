//! Vector fields and integrators for the preconditioned flow, the mirror
//! flow and the discrete preconditioned iteration.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objectives::Objective;
use crate::refpotential::ReferencePotential;

/// State norm above which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
    #[error("tolerance {name} = {value:e} outside [1e-13, 1e-2]")]
    Tolerance { name: &'static str, value: f64 },
    #[error("record interval must be positive, got {0}")]
    RecordEvery(f64),
    #[error("step size must satisfy 0 < h <= t_end, got {0}")]
    Step(f64),
    #[error("gamma must be positive, got {0}")]
    Gamma(f64),
    #[error("iteration budget must be at least 1")]
    Iterations,
    #[error("initial state has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalReason {
    HorizonReached,
    VelocityTolerance,
    Divergence,
    StepFloor,
}

impl TerminalReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalReason::HorizonReached => "horizon-reached",
            TerminalReason::VelocityTolerance => "velocity-tolerance",
            TerminalReason::Divergence => "divergence",
            TerminalReason::StepFloor => "step-floor",
        }
    }

    /// Divergence and step-floor aborts.
    pub fn is_numerical_failure(self) -> bool {
        matches!(self, TerminalReason::Divergence | TerminalReason::StepFloor)
    }
}

/// Whether a trajectory samples a continuous flow or a discrete iteration
/// (with times `γk`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TrajectoryKind {
    Flow,
    Discrete { gamma: f64 },
}

/// Recorded samples of a flow or an iterate sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// The field evaluated at each recorded state.
    pub velocities: Vec<DVector<f64>>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub terminal: TerminalReason,
}

impl Trajectory {
    fn new(kind: TrajectoryKind) -> Self {
        Self {
            kind,
            times: Vec::new(),
            states: Vec::new(),
            velocities: Vec::new(),
            accepted_steps: 0,
            rejected_steps: 0,
            terminal: TerminalReason::HorizonReached,
        }
    }

    fn push(&mut self, t: f64, x: DVector<f64>, v: DVector<f64>) {
        self.times.push(t);
        self.states.push(x);
        self.velocities.push(v);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }

    pub fn final_time(&self) -> Option<f64> {
        self.times.last().copied()
    }
}

/// `F(x) = −∇φ*(∇f(x))`.
pub fn field_precondflow<'a>(
    o: &'a dyn Objective,
    p: &'a ReferencePotential,
) -> impl Fn(f64, &DVector<f64>) -> DVector<f64> + 'a {
    move |_t, x| -p.grad_conjugate(&o.gradient(x))
}

/// `G(z) = −∇f(∇φ*(z))`.
pub fn field_mirrorflow<'a>(
    o: &'a dyn Objective,
    p: &'a ReferencePotential,
) -> impl Fn(f64, &DVector<f64>) -> DVector<f64> + 'a {
    move |_t, z| -o.gradient(&p.grad_conjugate(z))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub record_every: f64,
    /// Stop once `‖ẋ‖` falls to this level.
    pub stop_velocity: Option<f64>,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            record_every: 1e-2,
            stop_velocity: None,
        }
    }
}

fn check_tol(name: &'static str, value: f64) -> Result<(), FlowError> {
    if (1e-13..=1e-2).contains(&value) {
        Ok(())
    } else {
        Err(FlowError::Tolerance { name, value })
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Continuous extension (4th order).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;
const PI_BETA: f64 = 0.04;
const PI_ALPHA: f64 = 0.2 - 0.75 * PI_BETA;

/// Dense-output interpolant over one accepted step.
struct DenseStep {
    t0: f64,
    h: f64,
    r1: DVector<f64>,
    r2: DVector<f64>,
    r3: DVector<f64>,
    r4: DVector<f64>,
    r5: DVector<f64>,
}

impl DenseStep {
    fn eval(&self, t: f64) -> DVector<f64> {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        &self.r1 + (&self.r2 + (&self.r3 + (&self.r4 + &self.r5 * s1) * s) * s1) * s
    }
}

fn error_norm(
    err: &DVector<f64>,
    y0: &DVector<f64>,
    y1: &DVector<f64>,
    opts: &AdaptiveOptions,
) -> f64 {
    let n = err.len().max(1) as f64;
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1.iter()))
        .map(|(e, (a, b))| {
            let sk = opts.abs_tol + opts.rel_tol * a.abs().max(b.abs());
            (e / sk).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn weighted_norm(v: &DVector<f64>, y: &DVector<f64>, opts: &AdaptiveOptions) -> f64 {
    let n = v.len().max(1) as f64;
    let sum: f64 = v
        .iter()
        .zip(y.iter())
        .map(|(e, a)| (e / (opts.abs_tol + opts.rel_tol * a.abs())).powi(2))
        .sum();
    (sum / n).sqrt()
}

fn diverged(x: &DVector<f64>) -> bool {
    !x.iter().all(|v| v.is_finite()) || x.norm() > DIVERGENCE_NORM
}

/// Integrates `ẋ = F(t, x)` on `[0, t_end]` with the Dormand–Prince 5(4)
/// pair, PI step control and 4th-order dense output sampled every
/// `record_every` plus the final time.
pub fn integrate_adaptive<F>(
    field: F,
    x0: &DVector<f64>,
    t_end: f64,
    opts: AdaptiveOptions,
) -> Result<Trajectory, FlowError>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(FlowError::Horizon(t_end));
    }
    check_tol("rel_tol", opts.rel_tol)?;
    check_tol("abs_tol", opts.abs_tol)?;
    if !(opts.record_every > 0.0) {
        return Err(FlowError::RecordEvery(opts.record_every));
    }

    let mut traj = Trajectory::new(TrajectoryKind::Flow);
    let mut t = 0.0;
    let mut y = x0.clone();
    let mut k1 = field(t, &y);
    traj.push(t, y.clone(), k1.clone());
    if diverged(&y) {
        traj.terminal = TerminalReason::Divergence;
        return Ok(traj);
    }
    if let Some(stop) = opts.stop_velocity {
        if k1.norm() <= stop {
            traj.terminal = TerminalReason::VelocityTolerance;
            return Ok(traj);
        }
    }

    let end_guard = 1e-12 * t_end;
    let mut next_record: usize = 1;
    let record_time = |k: usize| k as f64 * opts.record_every;

    // initial step guess
    let mut h = {
        let d0 = weighted_norm(&y, &y, &opts);
        let d1 = weighted_norm(&k1, &y, &opts);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let y1 = &y + &k1 * h0;
        let f1 = field(h0, &y1);
        let d2 = weighted_norm(&(&f1 - &k1), &y, &opts) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(t_end)
    };
    let h_floor = 1e-14 * t_end;
    let mut err_prev: f64 = 1e-4;

    loop {
        if t_end - t <= end_guard {
            break;
        }
        if h < h_floor {
            traj.terminal = TerminalReason::StepFloor;
            return Ok(traj);
        }
        let last = t + h >= t_end - end_guard;
        if last {
            h = t_end - t;
        }

        let k2 = field(t + C2 * h, &(&y + &k1 * (A21 * h)));
        let k3 = field(t + C3 * h, &(&y + (&k1 * A31 + &k2 * A32) * h));
        let k4 = field(t + C4 * h, &(&y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h));
        let k5 = field(
            t + C5 * h,
            &(&y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
        );
        let k6 = field(
            t + h,
            &(&y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
        );
        let y_new = &y + (&k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
        let t_new = if last { t_end } else { t + h };
        let k7 = field(t_new, &y_new);
        let err_vec = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
        let err = error_norm(&err_vec, &y, &y_new, &opts);

        if !err.is_finite() || err > 1.0 {
            traj.rejected_steps += 1;
            let fac = if err.is_finite() {
                (SAFETY * err.powf(-0.2)).max(FAC_MIN)
            } else {
                FAC_MIN
            };
            h *= fac;
            continue;
        }

        traj.accepted_steps += 1;
        let dense = DenseStep {
            t0: t,
            h: t_new - t,
            r1: y.clone(),
            r2: &y_new - &y,
            r3: &k1 * (t_new - t) - (&y_new - &y),
            r4: (&y_new - &y) - &k7 * (t_new - t) - (&k1 * (t_new - t) - (&y_new - &y)),
            r5: (&k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * (t_new - t),
        };

        while record_time(next_record) <= t_new && record_time(next_record) < t_end - end_guard {
            let tr = record_time(next_record);
            let xr = dense.eval(tr);
            let vr = field(tr, &xr);
            traj.push(tr, xr, vr);
            next_record += 1;
        }

        t = t_new;
        y = y_new;
        k1 = k7;

        if diverged(&y) {
            traj.terminal = TerminalReason::Divergence;
            return Ok(traj);
        }
        if let Some(stop) = opts.stop_velocity {
            if k1.norm() <= stop {
                if traj.times.last().is_some_and(|&tl| t > tl) {
                    traj.push(t, y.clone(), k1.clone());
                }
                traj.terminal = TerminalReason::VelocityTolerance;
                return Ok(traj);
            }
        }

        let err_c = err.max(1e-10);
        let fac = (SAFETY * err_c.powf(-PI_ALPHA) * err_prev.powf(PI_BETA)).clamp(FAC_MIN, FAC_MAX);
        err_prev = err_c;
        h = (h * fac).min(t_end);
    }

    if traj.times.last().is_some_and(|&tl| t > tl) {
        traj.push(t, y, k1);
    }
    traj.terminal = TerminalReason::HorizonReached;
    Ok(traj)
}

/// Classical fixed-step RK4 on `[0, t_end]`, recording every
/// `round(record_every / h)` steps plus the final state.
pub fn integrate_rk4<F>(
    field: F,
    x0: &DVector<f64>,
    t_end: f64,
    h: f64,
    record_every: f64,
) -> Result<Trajectory, FlowError>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(FlowError::Horizon(t_end));
    }
    if !(h > 0.0 && h <= t_end) {
        return Err(FlowError::Step(h));
    }
    if !(record_every > 0.0) {
        return Err(FlowError::RecordEvery(record_every));
    }
    let steps = ((t_end / h) - 1e-9).ceil().max(1.0) as usize;
    let stride = ((record_every / h).round() as usize).max(1);

    let mut traj = Trajectory::new(TrajectoryKind::Flow);
    let mut y = x0.clone();
    let mut t = 0.0;
    traj.push(t, y.clone(), field(t, &y));
    for k in 1..=steps {
        let t_next = if k == steps { t_end } else { k as f64 * h };
        let dt = t_next - t;
        let k1 = field(t, &y);
        let k2 = field(t + 0.5 * dt, &(&y + &k1 * (0.5 * dt)));
        let k3 = field(t + 0.5 * dt, &(&y + &k2 * (0.5 * dt)));
        let k4 = field(t + dt, &(&y + &k3 * dt));
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        t = t_next;
        traj.accepted_steps += 1;
        if diverged(&y) {
            traj.terminal = TerminalReason::Divergence;
            return Ok(traj);
        }
        if k % stride == 0 || k == steps {
            let v = field(t, &y);
            traj.push(t, y.clone(), v);
        }
    }
    traj.terminal = TerminalReason::HorizonReached;
    Ok(traj)
}

/// The discrete iteration `xᵏ⁺¹ = xᵏ − γ∇φ*(∇f(xᵏ))`, recorded at times
/// `γk`. Stops early once `‖∇f(xᵏ)‖ ≤ stop_grad`.
pub fn iterate_npgm(
    o: &dyn Objective,
    p: &ReferencePotential,
    x0: &DVector<f64>,
    gamma: f64,
    k_max: usize,
    stop_grad: f64,
) -> Result<Trajectory, FlowError> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(FlowError::Gamma(gamma));
    }
    if k_max == 0 {
        return Err(FlowError::Iterations);
    }
    if x0.len() != o.dim() {
        return Err(FlowError::Dimension {
            expected: o.dim(),
            got: x0.len(),
        });
    }
    let mut traj = Trajectory::new(TrajectoryKind::Discrete { gamma });
    let mut x = x0.clone();
    for k in 0..=k_max {
        let g = o.gradient(&x);
        let v = -p.grad_conjugate(&g);
        let t = gamma * k as f64;
        traj.push(t, x.clone(), v.clone());
        if diverged(&x) {
            traj.terminal = TerminalReason::Divergence;
            return Ok(traj);
        }
        if g.norm() <= stop_grad {
            traj.terminal = TerminalReason::VelocityTolerance;
            return Ok(traj);
        }
        if k == k_max {
            break;
        }
        x += v * gamma;
        traj.accepted_steps += 1;
    }
    traj.terminal = TerminalReason::HorizonReached;
    Ok(traj)
}
