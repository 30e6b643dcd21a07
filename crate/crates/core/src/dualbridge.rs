//! Mirror-descent duality and the optimal-control reading of the flow.
//!
//! With `zᵏ = ∇f(xᵏ)` the discrete preconditioned iteration is mirror descent
//! on `φ*` with mirror potential `f`. In continuous time the feedback
//! `u = −∇φ*(∇f(x))` minimizes the running cost
//! `q(x, u) = φ*(∇f(x)) + φ(−u) + ⟨u, y⟩` and its total cost equals the
//! Bregman value `V(x₀) = D_f(x₀, ∇f*(y))`.

use std::sync::Arc;

use nalgebra::DVector;
use thiserror::Error;

use crate::certify::{simpson, ClaimEntry, ClaimId};
use crate::integrate::{
    integrate_adaptive, AdaptiveOptions, FlowError, TerminalReason, Trajectory,
};
use crate::objectives::{grad_fstar, Objective, ObjectiveError};
use crate::refpotential::ReferencePotential;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DualError {
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("step size must be positive and finite, got {0}")]
    Gamma(f64),
    #[error("objective must be strictly convex and supercoercive")]
    Hypotheses,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// `D_f(x, x̄) = f(x) − f(x̄) − ⟨∇f(x̄), x − x̄⟩`.
pub fn bregman(o: &dyn Objective, x: &DVector<f64>, xbar: &DVector<f64>) -> f64 {
    o.value(x) - o.value(xbar) - o.gradient(xbar).dot(&(x - xbar))
}

/// `z⁺ = ∇f(∇f*(z) − γ∇φ*(z))`.
pub fn mirror_descent_step(
    o: &dyn Objective,
    p: &ReferencePotential,
    z: &DVector<f64>,
    gamma: f64,
    newton_tol: f64,
) -> Result<DVector<f64>, DualError> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(DualError::Gamma(gamma));
    }
    let x = grad_fstar(o, z, newton_tol)?;
    Ok(o.gradient(&(x - p.grad_conjugate(z) * gamma)))
}

/// Runs the preconditioned iteration from `x0` and the mirror recursion from
/// `∇f(x0)`, reporting `max_k ‖zᵏ − ∇f(xᵏ)‖` against `tol`.
pub fn check_discrete_duality(
    o: &dyn Objective,
    p: &ReferencePotential,
    x0: &DVector<f64>,
    gamma: f64,
    k_max: usize,
    tol: f64,
    newton_tol: f64,
) -> Result<ClaimEntry, DualError> {
    let flags = o.flags();
    if !(flags.strictly_convex && flags.supercoercive) {
        return Err(DualError::Hypotheses);
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(DualError::Gamma(gamma));
    }
    if k_max == 0 {
        return Ok(ClaimEntry::from_margin(ClaimId::MdDuality, 0.0, 0.0, tol));
    }
    let traj = crate::integrate::iterate_npgm(o, p, x0, gamma, k_max, 0.0)?;
    let mut z = o.gradient(x0);
    let (mut worst, mut at) = (0.0_f64, 0.0);
    for (k, x) in traj.states.iter().enumerate().skip(1) {
        z = mirror_descent_step(o, p, &z, gamma, newton_tol)?;
        let r = (&z - o.gradient(x)).norm();
        if r > worst || r.is_nan() {
            worst = r;
            at = k as f64;
        }
    }
    let mut e = ClaimEntry::from_margin(ClaimId::MdDuality, worst, at, tol);
    e.worst_observed = Some(worst);
    if traj.terminal == TerminalReason::Divergence {
        e = e.with_note(format!("iteration diverged after {} steps", traj.len() - 1));
    }
    Ok(e)
}

/// Objective, potential and dual target `y` of the control problem.
#[derive(Debug, Clone)]
pub struct ControlSetup {
    objective: Arc<dyn Objective>,
    potential: ReferencePotential,
    target: DVector<f64>,
    reference: DVector<f64>,
    minimizer: DVector<f64>,
}

impl ControlSetup {
    /// Target `y = 0`, so that `V(x) = f(x) − f⋆`.
    pub fn new(
        objective: Arc<dyn Objective>,
        potential: ReferencePotential,
    ) -> Result<Self, DualError> {
        let target = DVector::zeros(objective.dim());
        Self::with_target(objective, potential, target)
    }

    pub fn with_target(
        objective: Arc<dyn Objective>,
        potential: ReferencePotential,
        target: DVector<f64>,
    ) -> Result<Self, DualError> {
        let flags = objective.flags();
        if !(flags.strictly_convex && flags.supercoercive) {
            return Err(DualError::Hypotheses);
        }
        if target.len() != objective.dim() {
            return Err(DualError::Dimension {
                expected: objective.dim(),
                got: target.len(),
            });
        }
        let tol = 1e-13;
        let reference = grad_fstar(objective.as_ref(), &target, tol)?;
        let minimizer = match objective.minimizer() {
            Some(m) => m,
            None => grad_fstar(objective.as_ref(), &DVector::zeros(objective.dim()), tol)?,
        };
        Ok(Self {
            objective,
            potential,
            target,
            reference,
            minimizer,
        })
    }

    pub fn objective(&self) -> &dyn Objective {
        self.objective.as_ref()
    }

    pub fn potential(&self) -> &ReferencePotential {
        &self.potential
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    /// `V(x) = D_f(x, ∇f*(y))`.
    pub fn value_at(&self, x: &DVector<f64>) -> f64 {
        bregman(self.objective(), x, &self.reference)
    }

    /// Optimal feedback `−∇φ*(∇f(x))`.
    pub fn feedback(&self, x: &DVector<f64>) -> DVector<f64> {
        -self.potential.grad_conjugate(&self.objective.gradient(x))
    }

    /// `φ*(∇f(x)) + φ(−u) + ⟨u, ∇f(x)⟩`, which equals `q + dV/dt` along
    /// `ẋ = u`. Nonnegative, zero exactly for the optimal feedback.
    pub fn hamiltonian_gap(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let g = self.objective.gradient(x);
        self.potential.conjugate(&g) + self.potential.phi(&-u) + u.dot(&g)
    }
}

/// `q(x, u) = φ*(∇f(x)) + φ(−u) + ⟨u, y⟩`; `+∞` when `−u ∉ dom φ`.
pub fn control_cost_q(setup: &ControlSetup, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let g = setup.objective.gradient(x);
    setup.potential.conjugate(&g) + setup.potential.phi(&-u) + u.dot(&setup.target)
}

/// Feedback law used in the closed loop.
#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    /// `u = −∇φ*(∇f(x))`.
    None,
    /// `u = −∇φ*(∇f(x)) + a·e^{−rt}·d`.
    Additive {
        amplitude: f64,
        rate: f64,
        direction: DVector<f64>,
    },
    /// `u = −c·∇φ*(∇f(x))`.
    Scaled { factor: f64 },
}

impl Perturbation {
    fn control(&self, setup: &ControlSetup, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let base = setup.feedback(x);
        match self {
            Perturbation::None => base,
            Perturbation::Additive {
                amplitude,
                rate,
                direction,
            } => base + direction * (amplitude * (-rate * t).exp()),
            Perturbation::Scaled { factor } => base * *factor,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Perturbation::None => "optimal".to_string(),
            Perturbation::Additive {
                amplitude, rate, ..
            } => format!("additive(a={amplitude}, r={rate})"),
            Perturbation::Scaled { factor } => format!("scaled({factor})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedLoopOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub record_every: f64,
    /// The run stops once `‖ẋ‖` falls below this.
    pub stop_velocity: f64,
    /// Tolerance of the running lower bound `∫₀ᵗ q ≥ V(x₀) − V(x(t))`,
    /// relative to `max(1, V(x₀))`.
    pub lower_bound_tol: f64,
}

impl Default for ClosedLoopOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            record_every: 1e-3,
            stop_velocity: 1e-9,
            lower_bound_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClosedLoopValue {
    /// Quadrature of `q` plus the tail estimate.
    pub j: f64,
    /// `V(x₀) − V(x⋆)`; equals `f(x₀) − f⋆` for target 0.
    pub v0: f64,
    /// `|J − V0| / max(1, V0)`.
    pub gap: f64,
    /// `q(T)/λ` with `λ` the decay rate of `q` over the last samples.
    pub tail: f64,
    /// False when the velocity stop never fired or the tail could not be
    /// estimated.
    pub tail_reliable: bool,
    pub lower_bound: ClaimEntry,
    pub trajectory: Trajectory,
}

impl ClosedLoopValue {
    pub fn value_identity(&self, tol: f64) -> ClaimEntry {
        let mut e = ClaimEntry::from_margin(
            ClaimId::ValueIdentity,
            self.gap,
            self.trajectory.final_time().unwrap_or(0.0),
            tol,
        );
        e.worst_observed = Some(self.j);
        if !self.tail_reliable {
            e = e.with_note("unreliable tail: the velocity stop never fired");
        }
        e
    }
}

fn run_loop(
    setup: &ControlSetup,
    x0: &DVector<f64>,
    t_end: f64,
    law: &Perturbation,
    opts: &ClosedLoopOptions,
) -> Result<ClosedLoopValue, DualError> {
    if x0.len() != setup.objective.dim() {
        return Err(DualError::Dimension {
            expected: setup.objective.dim(),
            got: x0.len(),
        });
    }
    let field = |t: f64, x: &DVector<f64>| law.control(setup, t, x);
    let aopts = AdaptiveOptions {
        rel_tol: opts.rel_tol,
        abs_tol: opts.abs_tol,
        record_every: opts.record_every,
        stop_velocity: Some(opts.stop_velocity),
    };
    let traj = integrate_adaptive(field, x0, t_end, aopts)?;
    let q: Vec<f64> = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&t, x)| control_cost_q(setup, x, &law.control(setup, t, x)))
        .collect();
    let integral = simpson(&traj.times, &q);
    let n = q.len();
    let (tail, mut tail_reliable) = match n {
        _ if q[n - 1] == 0.0 => (0.0, true),
        _ if n >= 2 && q[n - 2] > q[n - 1] && q[n - 1] > 0.0 => {
            let rate = (q[n - 2] / q[n - 1]).ln() / (traj.times[n - 1] - traj.times[n - 2]);
            (q[n - 1] / rate, true)
        }
        _ => (0.0, false),
    };
    tail_reliable &= traj.terminal == TerminalReason::VelocityTolerance;

    let v_inf = setup.value_at(&setup.minimizer);
    let v_start = setup.value_at(x0);
    let v0 = v_start - v_inf;
    let j = integral + tail;
    let scale = v0.max(1.0);

    // running bound ∫₀ᵗ q ≥ V(x₀) − V(x(t))
    let mut acc = 0.0;
    let (mut worst, mut at) = (0.0_f64, 0.0);
    for i in 1..n {
        acc += 0.5 * (traj.times[i] - traj.times[i - 1]) * (q[i] + q[i - 1]);
        let m = (v_start - setup.value_at(&traj.states[i]) - acc) / scale;
        if m > worst || m.is_nan() {
            worst = m;
            at = traj.times[i];
        }
    }
    let lower_bound =
        ClaimEntry::from_margin(ClaimId::LowerBoundAudit, worst, at, opts.lower_bound_tol);

    Ok(ClosedLoopValue {
        j,
        v0,
        gap: (j - v0).abs() / scale,
        tail,
        tail_reliable,
        lower_bound,
        trajectory: traj,
    })
}

/// Total cost of the optimal feedback from `x0` against `V(x₀)`.
pub fn closed_loop_value(
    setup: &ControlSetup,
    x0: &DVector<f64>,
    t_end: f64,
    opts: &ClosedLoopOptions,
) -> Result<ClosedLoopValue, DualError> {
    run_loop(setup, x0, t_end, &Perturbation::None, opts)
}

/// One audited control law.
#[derive(Debug, Clone)]
pub struct AuditRun {
    pub perturbation: Perturbation,
    pub j: Option<f64>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AuditReport {
    pub entry: ClaimEntry,
    pub v0: f64,
    pub runs: Vec<AuditRun>,
}

/// Measures `J` for each control law and checks `J ≥ V0 − tol`. Runs that
/// diverge or fail to stabilize are skipped and listed.
pub fn suboptimal_control_audit(
    setup: &ControlSetup,
    x0: &DVector<f64>,
    t_end: f64,
    perturbations: &[Perturbation],
    tol: f64,
    opts: &ClosedLoopOptions,
) -> Result<AuditReport, DualError> {
    let v0 = setup.value_at(x0) - setup.value_at(&setup.minimizer);
    let scale = v0.max(1.0);
    let g0 = setup.objective.gradient(x0).norm();
    let mut runs = Vec::with_capacity(perturbations.len());
    let (mut worst, mut at) = (f64::NEG_INFINITY, 0.0);
    for (i, law) in perturbations.iter().enumerate() {
        let res = match run_loop(setup, x0, t_end, law, opts) {
            Ok(r) => r,
            Err(DualError::Flow(e)) => {
                runs.push(AuditRun {
                    perturbation: law.clone(),
                    j: None,
                    skipped: Some(e.to_string()),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let last = res
            .trajectory
            .final_state()
            .cloned()
            .unwrap_or_else(|| x0.clone());
        let skipped = if res.trajectory.terminal.is_numerical_failure() {
            Some(format!(
                "run ended with {}",
                res.trajectory.terminal.as_str()
            ))
        } else if setup.objective.gradient(&last).norm() > 1e-3 * (1.0 + g0) {
            Some("control did not stabilize the system".to_string())
        } else {
            None
        };
        if skipped.is_none() {
            let m = (v0 - res.j) / scale;
            if m > worst || m.is_nan() {
                worst = m;
                at = i as f64;
            }
        }
        runs.push(AuditRun {
            perturbation: law.clone(),
            j: skipped.is_none().then_some(res.j),
            skipped,
        });
    }
    let measured = runs.iter().filter(|r| r.j.is_some()).count();
    let entry = if measured == 0 {
        ClaimEntry::not_applicable(ClaimId::LowerBoundAudit, "every control law was skipped")
    } else {
        let mut e = ClaimEntry::from_margin(ClaimId::LowerBoundAudit, worst, at, tol);
        e.worst_observed = runs.iter().filter_map(|r| r.j).reduce(f64::min);
        let skipped = runs.len() - measured;
        if skipped > 0 {
            e = e.with_note(format!("{skipped} control law(s) skipped"));
        }
        e
    };
    Ok(AuditReport { entry, v0, runs })
}
