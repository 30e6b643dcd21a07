//! Executable Lyapunov, monotonicity and rate claims evaluated along
//! recorded trajectories.
//!
//! Margins in a [`ClaimEntry`] are normalized violations: a claim passes when
//! its worst margin does not exceed the tolerance used. Monotonicity claims
//! allow a slack of `10·rel_tol·(1 + |channel|)` to absorb integration error.

use std::fmt;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::{TerminalReason, Trajectory, TrajectoryKind};
use crate::objectives::Objective;
use crate::refpotential::ReferencePotential;

/// Stable claim identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClaimId {
    #[serde(rename = "decrease-identity")]
    DecreaseIdentity,
    #[serde(rename = "conj-grad-decrease")]
    ConjGradDecrease,
    #[serde(rename = "V-monotone")]
    VMonotone,
    #[serde(rename = "rate-1-over-t")]
    RateOneOverT,
    #[serde(rename = "fejer-grad")]
    FejerGrad,
    #[serde(rename = "fejer-dist")]
    FejerDist,
    #[serde(rename = "gap-rate")]
    GapRate,
    #[serde(rename = "exp-rate")]
    ExpRate,
    #[serde(rename = "energy-identity")]
    EnergyIdentity,
    #[serde(rename = "l2-bound")]
    L2Bound,
    #[serde(rename = "velocity-vanishes")]
    VelocityVanishes,
    #[serde(rename = "md-duality")]
    MdDuality,
    #[serde(rename = "value-identity")]
    ValueIdentity,
    #[serde(rename = "lower-bound-audit")]
    LowerBoundAudit,
    #[serde(rename = "fenchel-young")]
    FenchelYoung,
    #[serde(rename = "cocoercivity")]
    Cocoercivity,
    #[serde(rename = "lipschitz")]
    Lipschitz,
    #[serde(rename = "evenness")]
    Evenness,
    #[serde(rename = "range-in-domain")]
    RangeInDomain,
}

impl ClaimId {
    /// Claims evaluated by [`run_certificate_suite`], in report order.
    pub const FLOW_CATALOG: [ClaimId; 11] = [
        ClaimId::DecreaseIdentity,
        ClaimId::ConjGradDecrease,
        ClaimId::VMonotone,
        ClaimId::RateOneOverT,
        ClaimId::FejerGrad,
        ClaimId::FejerDist,
        ClaimId::GapRate,
        ClaimId::ExpRate,
        ClaimId::EnergyIdentity,
        ClaimId::L2Bound,
        ClaimId::VelocityVanishes,
    ];

    /// Claims produced by the duality and control checks.
    pub const DUAL_CATALOG: [ClaimId; 3] = [
        ClaimId::MdDuality,
        ClaimId::ValueIdentity,
        ClaimId::LowerBoundAudit,
    ];

    pub const PAIR_CATALOG: [ClaimId; 5] = [
        ClaimId::FenchelYoung,
        ClaimId::Cocoercivity,
        ClaimId::Lipschitz,
        ClaimId::Evenness,
        ClaimId::RangeInDomain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClaimId::DecreaseIdentity => "decrease-identity",
            ClaimId::ConjGradDecrease => "conj-grad-decrease",
            ClaimId::VMonotone => "V-monotone",
            ClaimId::RateOneOverT => "rate-1-over-t",
            ClaimId::FejerGrad => "fejer-grad",
            ClaimId::FejerDist => "fejer-dist",
            ClaimId::GapRate => "gap-rate",
            ClaimId::ExpRate => "exp-rate",
            ClaimId::EnergyIdentity => "energy-identity",
            ClaimId::L2Bound => "l2-bound",
            ClaimId::VelocityVanishes => "velocity-vanishes",
            ClaimId::MdDuality => "md-duality",
            ClaimId::ValueIdentity => "value-identity",
            ClaimId::LowerBoundAudit => "lower-bound-audit",
            ClaimId::FenchelYoung => "fenchel-young",
            ClaimId::Cocoercivity => "cocoercivity",
            ClaimId::Lipschitz => "lipschitz",
            ClaimId::Evenness => "evenness",
            ClaimId::RangeInDomain => "range-in-domain",
        }
    }
}

impl fmt::Display for ClaimId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unknown claim id `{0}`")]
pub struct UnknownClaim(pub String);

impl std::str::FromStr for ClaimId {
    type Err = UnknownClaim;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClaimId::FLOW_CATALOG
            .iter()
            .chain(&ClaimId::DUAL_CATALOG)
            .chain(&ClaimId::PAIR_CATALOG)
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownClaim(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClaimStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimEntry {
    pub claim: ClaimId,
    pub status: ClaimStatus,
    pub worst_margin: f64,
    /// Time (or sample index / iteration) of the worst margin.
    pub worst_time: f64,
    pub tolerance_used: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst_observed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ClaimEntry {
    pub fn from_margin(claim: ClaimId, margin: f64, time: f64, tol: f64) -> Self {
        let status = if margin <= tol {
            ClaimStatus::Pass
        } else {
            ClaimStatus::Fail
        };
        Self {
            claim,
            status,
            worst_margin: margin,
            worst_time: time,
            tolerance_used: tol,
            worst_observed: None,
            note: None,
        }
    }

    pub fn not_applicable(claim: ClaimId, reason: impl Into<String>) -> Self {
        Self {
            claim,
            status: ClaimStatus::NotApplicable,
            worst_margin: 0.0,
            worst_time: 0.0,
            tolerance_used: 0.0,
            worst_observed: None,
            note: Some(reason.into()),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status == ClaimStatus::Pass
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub trajectory_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub provenance: Provenance,
    pub entries: Vec<ClaimEntry>,
}

impl CertificateReport {
    pub fn get(&self, claim: ClaimId) -> Option<&ClaimEntry> {
        self.entries.iter().find(|e| e.claim == claim)
    }

    /// No entry failed (not-applicable entries are ignored).
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.status != ClaimStatus::Fail)
    }

    pub fn failed(&self) -> impl Iterator<Item = &ClaimEntry> {
        self.entries
            .iter()
            .filter(|e| e.status == ClaimStatus::Fail)
    }

    pub fn retain_claims(&mut self, keep: &[ClaimId]) {
        self.entries.retain(|e| keep.contains(&e.claim));
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("objective has no known optimal value")]
    NoOptimalValue,
    #[error("all {0} samples were degenerate (gap below threshold)")]
    DegenerateSamples(usize),
    #[error("sampling box must have positive half-width, got {0}")]
    BadBox(f64),
}

/// Scalar channels of a trajectory together with the hypotheses of the
/// objective/potential pair that gate each claim.
#[derive(Debug, Clone, PartialEq)]
pub struct Channels {
    pub kind: TrajectoryKind,
    pub terminal: TerminalReason,
    pub times: Vec<f64>,
    pub f: Vec<f64>,
    pub grad_norm: Vec<f64>,
    /// `φ*(∇f(x))`.
    pub conj: Vec<f64>,
    /// `φ(∇φ*(∇f(x)))`.
    pub phi_pre: Vec<f64>,
    /// `⟨∇f(x), ∇φ*(∇f(x))⟩`.
    pub energy: Vec<f64>,
    pub xdot_norm: Vec<f64>,
    /// `‖x − x⋆‖` when the minimizer is known.
    pub dist: Option<Vec<f64>>,
    pub f_star: Option<f64>,
    pub convex: bool,
    pub isotropic: bool,
    pub ratio_nonincreasing: bool,
    /// `‖∇f(x₀)‖ / (h*)′(‖∇f(x₀)‖)` for isotropic potentials (0 at a
    /// stationary start).
    pub gap_rate_coeff: Option<f64>,
    pub mu_phi: f64,
    pub strong_convexity: Option<f64>,
    pub smoothness: Option<f64>,
}

impl Channels {
    pub fn compute(traj: &Trajectory, o: &dyn Objective, p: &ReferencePotential) -> Self {
        let minimizer = o.minimizer();
        let mut c = Channels {
            kind: traj.kind,
            terminal: traj.terminal,
            times: traj.times.clone(),
            f: Vec::with_capacity(traj.len()),
            grad_norm: Vec::with_capacity(traj.len()),
            conj: Vec::with_capacity(traj.len()),
            phi_pre: Vec::with_capacity(traj.len()),
            energy: Vec::with_capacity(traj.len()),
            xdot_norm: traj.velocities.iter().map(|v| v.norm()).collect(),
            dist: minimizer
                .as_ref()
                .map(|xm| traj.states.iter().map(|x| (x - xm).norm()).collect()),
            f_star: o.f_star(),
            convex: o.flags().convex,
            isotropic: p.profile().is_some(),
            ratio_nonincreasing: p.ratio_nonincreasing(),
            gap_rate_coeff: None,
            mu_phi: p.mu_phi(),
            strong_convexity: o.strong_convexity(),
            smoothness: o.smoothness(),
        };
        for x in &traj.states {
            let g = o.gradient(x);
            let pre = p.grad_conjugate(&g);
            c.f.push(o.value(x));
            c.grad_norm.push(g.norm());
            c.conj.push(p.conjugate(&g));
            c.phi_pre.push(p.phi(&pre));
            c.energy.push(g.dot(&pre));
        }
        if let (Some(profile), Some(&g0)) = (p.profile(), c.grad_norm.first()) {
            c.gap_rate_coeff = Some(if g0 > 0.0 {
                g0 / (profile.dh_conj)(g0)
            } else {
                0.0
            });
        }
        c
    }

    /// `V(t) = t·φ*(∇f(x(t))) + f(x(t))`.
    pub fn v_channel(&self) -> Vec<f64> {
        self.times
            .iter()
            .zip(self.conj.iter().zip(&self.f))
            .map(|(t, (cj, f))| t * cj + f)
            .collect()
    }

    /// `W(t) = t·(f(x(t)) − f⋆)/c + ½‖x(t) − x⋆‖²` with `c` the gap-rate
    /// coefficient; needs a profile, `f⋆` and `x⋆`.
    pub fn w_channel(&self) -> Option<Vec<f64>> {
        let (coeff, f_star, dist) = (self.gap_rate_coeff?, self.f_star?, self.dist.as_ref()?);
        Some(
            self.times
                .iter()
                .zip(self.f.iter().zip(dist))
                .map(|(t, (f, d))| {
                    let scaled = if coeff > 0.0 {
                        t * (f - f_star) / coeff
                    } else {
                        0.0
                    };
                    scaled + 0.5 * d * d
                })
                .collect(),
        )
    }

    fn is_flow(&self) -> bool {
        matches!(self.kind, TrajectoryKind::Flow)
    }

    fn len(&self) -> usize {
        self.times.len()
    }
}

/// Options shared by the claim checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    /// Relative tolerance of the integrator that produced the trajectory.
    pub rel_tol: f64,
    /// Tolerance of the decrease identity, relative to `1 + |RHS|`.
    pub decrease_tol: f64,
    /// Relative tolerance of the energy identity.
    pub energy_tol: f64,
    /// Absolute slack on the `L²` bound.
    pub l2_slack: f64,
    /// Terminal velocity threshold of `velocity-vanishes`.
    pub velocity_tol: f64,
    /// Rate for `exp-rate`; estimated with [`estimate_aniso_mu`] when absent.
    pub mu: Option<f64>,
    pub mu_samples: usize,
    pub seed: u64,
    pub provenance: Provenance,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            decrease_tol: 1e-5,
            energy_tol: 1e-6,
            l2_slack: 1e-8,
            velocity_tol: 1e-6,
            mu: None,
            mu_samples: 2000,
            seed: 7,
            provenance: Provenance::default(),
        }
    }
}

impl SuiteOptions {
    fn mono_tol(&self) -> f64 {
        10.0 * self.rel_tol
    }
}

/// Largest `(values[i+1] − values[i]) / (1 + |values[i]|)` and its time.
fn worst_increase(times: &[f64], values: &[f64]) -> (f64, f64) {
    values
        .windows(2)
        .zip(&times[1..])
        .map(|(w, &t)| ((w[1] - w[0]) / (1.0 + w[0].abs()), t))
        .fold((0.0, 0.0), |acc, cur| {
            if cur.0 > acc.0 || cur.0.is_nan() {
                cur
            } else {
                acc
            }
        })
}

fn worst_of(items: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    items.fold((f64::NEG_INFINITY, 0.0), |acc, cur| {
        if cur.0 > acc.0 || cur.0.is_nan() {
            cur
        } else {
            acc
        }
    })
}

fn finish(claim: ClaimId, worst: (f64, f64), tol: f64) -> ClaimEntry {
    let margin = if worst.0 == f64::NEG_INFINITY {
        0.0
    } else {
        worst.0
    };
    let margin = if margin.is_nan() {
        f64::INFINITY
    } else {
        margin
    };
    ClaimEntry::from_margin(claim, margin, worst.1, tol)
}

/// Cumulative trapezoid integral.
pub fn cumulative_trapezoid(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..times.len() {
        acc += 0.5 * (times[i] - times[i - 1]) * (values[i] + values[i - 1]);
        out.push(acc);
    }
    out
}

/// Integral over the whole sample range: composite Simpson on
/// consecutive (possibly uneven) interval pairs, trapezoid on a leftover
/// interval.
pub fn simpson(times: &[f64], values: &[f64]) -> f64 {
    let n = times.len();
    if n < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut i = 0;
    while i + 2 < n {
        acc += simpson_window(&times[i..i + 3], &values[i..i + 3]);
        i += 2;
    }
    if i + 1 < n {
        acc += 0.5 * (times[i + 1] - times[i]) * (values[i] + values[i + 1]);
    }
    acc
}

/// Simpson's rule over three points with uneven spacing.
fn simpson_window(t: &[f64], y: &[f64]) -> f64 {
    let h0 = t[1] - t[0];
    let h1 = t[2] - t[1];
    let s = h0 + h1;
    s / 6.0 * ((2.0 - h1 / h0) * y[0] + s * s / (h0 * h1) * y[1] + (2.0 - h0 / h1) * y[2])
}

/// `d/dt f(x(t)) = −[φ*(∇f) + φ(∇φ*(∇f))]`.
///
/// For flows, the change of `f` across each symmetric sample window is
/// compared with the Simpson integral of the right-hand side; the
/// discrepancy is divided by the window length and by `1 + |RHS|`. Discrete
/// runs compare forward differences with the averaged right-hand side, at a
/// tolerance of at least `10γ`, and are not applicable for `γ > 0.01`.
pub fn check_decrease_identity_on(c: &Channels, tol: f64) -> ClaimEntry {
    let claim = ClaimId::DecreaseIdentity;
    let rhs: Vec<f64> = c
        .conj
        .iter()
        .zip(&c.phi_pre)
        .map(|(a, b)| -(a + b))
        .collect();
    match c.kind {
        TrajectoryKind::Discrete { gamma } => {
            if gamma > 0.01 {
                return ClaimEntry::not_applicable(
                    claim,
                    format!("step {gamma} too coarse for a slope test"),
                );
            }
            let tol = tol.max(10.0 * gamma);
            let worst = worst_of((0..c.len().saturating_sub(1)).map(|k| {
                let slope = (c.f[k + 1] - c.f[k]) / gamma;
                let avg = 0.5 * (rhs[k] + rhs[k + 1]);
                ((slope - avg).abs() / (1.0 + rhs[k].abs()), c.times[k])
            }));
            finish(claim, worst, tol)
        }
        TrajectoryKind::Flow => {
            let worst = worst_of((1..c.len().saturating_sub(1)).filter_map(|i| {
                let t = &c.times[i - 1..=i + 1];
                let (h0, h1) = (t[1] - t[0], t[2] - t[1]);
                if h0.min(h1) < 0.1 * h0.max(h1) {
                    return None;
                }
                let integral = simpson_window(t, &rhs[i - 1..=i + 1]);
                let df = c.f[i + 1] - c.f[i - 1];
                Some((
                    (df - integral).abs() / (h0 + h1) / (1.0 + rhs[i].abs()),
                    t[1],
                ))
            }));
            finish(claim, worst, tol)
        }
    }
}

pub fn check_decrease_identity(
    traj: &Trajectory,
    o: &dyn Objective,
    p: &ReferencePotential,
    tol: f64,
) -> ClaimEntry {
    check_decrease_identity_on(&Channels::compute(traj, o, p), tol)
}

/// `φ*(∇f(x(t)))` is nonincreasing (convex objectives).
pub fn check_conj_gradient_decrease_on(c: &Channels, opts: &SuiteOptions) -> ClaimEntry {
    let claim = ClaimId::ConjGradDecrease;
    if !c.convex {
        return ClaimEntry::not_applicable(claim, "objective is not convex");
    }
    if !c.is_flow() {
        return ClaimEntry::not_applicable(claim, "stated for the continuous flow");
    }
    finish(claim, worst_increase(&c.times, &c.conj), opts.mono_tol())
}

pub fn check_conj_gradient_decrease(
    traj: &Trajectory,
    o: &dyn Objective,
    p: &ReferencePotential,
    opts: &SuiteOptions,
) -> ClaimEntry {
    check_conj_gradient_decrease_on(&Channels::compute(traj, o, p), opts)
}

/// `V(t) = t·φ*(∇f(x(t))) + f(x(t))` is nonincreasing.
pub fn check_v_monotone_on(c: &Channels, opts: &SuiteOptions) -> ClaimEntry {
    let claim = ClaimId::VMonotone;
    if !c.convex {
        return ClaimEntry::not_applicable(claim, "objective is not convex");
    }
    if !c.is_flow() {
        return ClaimEntry::not_applicable(claim, "stated for the continuous flow");
    }
    finish(
        claim,
        worst_increase(&c.times, &c.v_channel()),
        opts.mono_tol(),
    )
}

/// `φ*(∇f(x(t))) ≤ (f(x₀) − f⋆)/t` for `t > 0`.
pub fn check_rate_one_over_t_on(c: &Channels, opts: &SuiteOptions) -> ClaimEntry {
    let claim = ClaimId::RateOneOverT;
    if !c.convex {
        return ClaimEntry::not_applicable(claim, "objective is not convex");
    }
    let Some(f_star) = c.f_star else {
        return ClaimEntry::not_applicable(claim, "optimal value unknown");
    };
    let gap0 = c.f[0] - f_star;
    let worst = worst_of(c.times.iter().zip(&c.conj).filter(|(t, _)| **t > 0.0).map(
        |(&t, &cj)| {
            let bound = gap0 / t;
            ((cj - bound) / (1.0 + bound.abs()), t)
        },
    ));
    finish(claim, worst, opts.mono_tol())
}

/// Both sub-checks of the `V` Lyapunov claim.
pub fn check_v_monotone_and_rate(
    traj: &Trajectory,
    o: &dyn Objective,
    p: &ReferencePotential,
    opts: &SuiteOptions,
) -> (ClaimEntry, ClaimEntry) {
    let c = Channels::compute(traj, o, p);
    (
        check_v_monotone_on(&c, opts),
        check_rate_one_over_t_on(&c, opts),
    )
}

fn fejer_gate(c: &Channels, claim: ClaimId) -> Option<ClaimEntry> {
    if !c.convex {
        return Some(ClaimEntry::not_applicable(claim, "objective is not convex"));
    }
    if !c.isotropic {
        return Some(ClaimEntry::not_applicable(
            claim,
            "potential has no scalar profile",
        ));
    }
    if c.dist.is_none() {
        return Some(ClaimEntry::not_applicable(claim, "minimizer unknown"));
    }
    if !c.is_flow() {
        return Some(ClaimEntry::not_applicable(
            claim,
            "stated for the continuous flow",
        ));
    }
    None
}

/// `‖∇f(x(t))‖` and `‖x(t) − x⋆‖` are nonincreasing.
pub fn check_fejer_on(c: &Channels, opts: &SuiteOptions) -> (ClaimEntry, ClaimEntry) {
    let grad = fejer_gate(c, ClaimId::FejerGrad).unwrap_or_else(|| {
        finish(
            ClaimId::FejerGrad,
            worst_increase(&c.times, &c.grad_norm),
            opts.mono_tol(),
        )
    });
    let dist = fejer_gate(c, ClaimId::FejerDist).unwrap_or_else(|| {
        let d = c.dist.as_deref().unwrap_or_default();
        finish(
            ClaimId::FejerDist,
            worst_increase(&c.times, d),
            opts.mono_tol(),
        )
    });
    (grad, dist)
}

pub fn check_fejer(
    traj: &Trajectory,
    o: &dyn Objective,
    p: &ReferencePotential,
    opts: &SuiteOptions,
) -> (ClaimEntry, ClaimEntry) {
    check_fejer_on(&Channels::compute(traj, o, p), opts)
}

/// `f(x(t)) − f⋆ ≤ ‖∇f(x₀)‖‖x₀ − x⋆‖² / ((h*)′(‖∇f(x₀)‖)·t)`.
pub fn check_gap_rate_on(c: &Channels, opts: &SuiteOptions) -> ClaimEntry {
    let claim = ClaimId::GapRate;
    if !c.convex {
        return ClaimEntry::not_applicable(claim, "objective is not convex");
    }
    let Some(coeff) = c.gap_rate_coeff else {
        return ClaimEntry::not_applicable(claim, "potential has no scalar profile");
    };
    if !c.ratio_nonincreasing {
        return ClaimEntry::not_applicable(claim, "(h*)'(r)/r is not nonincreasing");
    }
    let (Some(f_star), Some(dist)) = (c.f_star, c.dist.as_ref()) else {
        return ClaimEntry::not_applicable(claim, "minimizer unknown");
    };
    let d0 = dist[0];
    let worst = worst_of(
        c.times
            .iter()
            .zip(&c.f)
            .filter(|(t, _)| **t > 0.0)
            .map(|(&t, &f)| {
                let bound = coeff * d0 * d0 / t;
                ((f - f_star - bound) / (1.0 + f.abs()), t)
            }),
    );
    finish(claim, worst, opts.mono_tol())
}

pub fn check_gap_rate(
    traj: &Trajectory,
    o: &dyn Objective,
    p: &ReferencePotential,
    opts: &SuiteOptions,
) -> ClaimEntry {
    check_gap_rate_on(&Channels::compute(traj, o, p), opts)
}

/// `φ(∇φ*(∇f(x))) / (f(x) − f⋆)`, or `None` when the gap is below
/// `max(1e−12, 1e−10·|f⋆|)`.
pub fn aniso_ratio(
    o: &dyn Objective,
    p: &ReferencePotential,
    x: &DVector<f64>,
    f_star: f64,
) -> Option<f64> {
    let gap = o.value(x) - f_star;
    if gap < 1e-12_f64.max(1e-10 * f_star.abs()) {
        return None;
    }
    Some(p.phi(&p.grad_conjugate(&o.gradient(x))) / gap)
}

/// Rejection sampling of a sublevel set `{f ≤ level}` inside a box.
#[derive(Debug, Clone, PartialEq)]
pub struct MuSampleSpec {
    pub count: usize,
    pub seed: u64,
    pub center: DVector<f64>,
    pub half_width: f64,
    pub level: f64,
}

impl MuSampleSpec {
    /// Sublevel set of `x₀`, boxed around the minimizer (or `x₀`) with half
    /// width `1.5‖x₀ − center‖`.
    pub fn around(o: &dyn Objective, x0: &DVector<f64>, count: usize, seed: u64) -> Self {
        let center = o.minimizer().unwrap_or_else(|| x0.clone());
        let half_width = (1.5 * (x0 - &center).amax()).max(1e-8);
        Self {
            count,
            seed,
            center,
            half_width,
            level: o.value(x0),
        }
    }
}

/// `μ̂ = min φ(∇φ*(∇f(x))) / (f(x) − f⋆)` over samples of the sublevel set.
pub fn estimate_aniso_mu(
    o: &dyn Objective,
    p: &ReferencePotential,
    spec: &MuSampleSpec,
) -> Result<f64, CertifyError> {
    let f_star = o.f_star().ok_or(CertifyError::NoOptimalValue)?;
    if !(spec.half_width > 0.0) {
        return Err(CertifyError::BadBox(spec.half_width));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut best = f64::INFINITY;
    let mut accepted = 0usize;
    let max_attempts = spec.count.saturating_mul(1000).max(1);
    for _ in 0..max_attempts {
        if accepted >= spec.count {
            break;
        }
        let x = DVector::from_fn(spec.center.len(), |i, _| {
            spec.center[i] + spec.half_width * rng.random_range(-1.0..=1.0)
        });
        if o.value(&x) > spec.level {
            continue;
        }
        accepted += 1;
        if let Some(r) = aniso_ratio(o, p, &x, f_star) {
            best = best.min(r);
        }
    }
    if best.is_finite() {
        Ok(best.max(0.0))
    } else {
        Err(CertifyError::DegenerateSamples(accepted))
    }
}

/// `f(x(t)) − f⋆ ≤ e^{−μt}(f(x₀) − f⋆)`, with relative slack `1e−6` on the
/// bound plus the monotonicity slack.
pub fn check_exponential_rate_on(c: &Channels, mu: f64, opts: &SuiteOptions) -> ClaimEntry {
    let claim = ClaimId::ExpRate;
    let Some(f_star) = c.f_star else {
        return ClaimEntry::not_applicable(claim, "optimal value unknown");
    };
    let gap0 = c.f[0] - f_star;
    let worst = worst_of(c.times.iter().zip(&c.f).map(|(&t, &f)| {
        let bound = (-mu * t).exp() * gap0 * (1.0 + 1e-6);
        ((f - f_star - bound) / (1.0 + f.abs()), t)
    }));
    finish(claim, worst, opts.mono_tol()).with_note(format!("mu = {mu:e}"))
}

pub fn check_exponential_rate(
    traj: &Trajectory,
    o: &dyn Objective,
    p: &ReferencePotential,
    mu: f64,
    opts: &SuiteOptions,
) -> ClaimEntry {
    check_exponential_rate_on(&Channels::compute(traj, o, p), mu, opts)
}

/// Trapezoid of `⟨∇f, ∇φ*(∇f)⟩` against `f(x₀) − f(x(t))`, relative to the
/// total decrease.
pub fn check_energy_identity_on(c: &Channels, opts: &SuiteOptions) -> ClaimEntry {
    let claim = ClaimId::EnergyIdentity;
    if !c.is_flow() {
        return ClaimEntry::not_applicable(claim, "stated for the continuous flow");
    }
    let integral = cumulative_trapezoid(&c.times, &c.energy);
    let total = (c.f[0] - c.f[c.len() - 1]).abs();
    let worst = worst_of(integral.iter().zip(&c.f).zip(&c.times).map(|((i, f), &t)| {
        let d = (i - (c.f[0] - f)).abs();
        (if d == 0.0 { 0.0 } else { d / total }, t)
    }));
    finish(claim, worst, opts.energy_tol)
}

/// `∫‖ẋ‖² ≤ (f(x₀) − f⋆)/μ_φ`, with `f(x(T))` in place of an unknown `f⋆`.
pub fn check_l2_bound_on(c: &Channels, opts: &SuiteOptions) -> ClaimEntry {
    let claim = ClaimId::L2Bound;
    if !c.is_flow() {
        return ClaimEntry::not_applicable(claim, "stated for the continuous flow");
    }
    let sq: Vec<f64> = c.xdot_norm.iter().map(|v| v * v).collect();
    let integral = simpson(&c.times, &sq);
    let f_ref = c.f_star.unwrap_or(c.f[c.len() - 1]);
    let bound = (c.f[0] - f_ref) / c.mu_phi;
    let mut e =
        ClaimEntry::from_margin(claim, integral - bound, c.times[c.len() - 1], opts.l2_slack);
    e.worst_observed = Some(integral);
    e
}

/// `‖ẋ(T)‖ ≤ velocity_tol` when the run stopped on velocity, or when the
/// exponential estimate `‖ẋ‖ ≤ √(2L·e^{−μT}(f(x₀) − f⋆))/μ_φ` already
/// predicts it.
pub fn check_velocity_vanishes_on(
    c: &Channels,
    mu: Option<f64>,
    opts: &SuiteOptions,
) -> ClaimEntry {
    let claim = ClaimId::VelocityVanishes;
    if !c.is_flow() {
        return ClaimEntry::not_applicable(claim, "stated for the continuous flow");
    }
    let last = c.len() - 1;
    let (t_end, v_end) = (c.times[last], c.xdot_norm[last]);
    if c.terminal != TerminalReason::VelocityTolerance {
        if c.strong_convexity.is_none() {
            return ClaimEntry::not_applicable(claim, "no rate available without strong convexity");
        }
        let (Some(l), Some(f_star), Some(mu)) = (c.smoothness, c.f_star, mu.filter(|m| *m > 0.0))
        else {
            return ClaimEntry::not_applicable(claim, "no rate available");
        };
        let predicted =
            (2.0 * l * (-mu * t_end).exp() * (c.f[0] - f_star).max(0.0)).sqrt() / c.mu_phi;
        if predicted > opts.velocity_tol {
            return ClaimEntry::not_applicable(
                claim,
                format!("horizon too short: predicted terminal velocity {predicted:e}"),
            );
        }
    }
    let mut e = ClaimEntry::from_margin(claim, v_end - opts.velocity_tol, t_end, 0.0);
    e.worst_observed = Some(v_end);
    e
}

/// Rate used by `exp-rate`: the supplied one, or the sampled estimate
/// (taken over the sublevel set and the trajectory itself) minus `1e−6`.
pub fn resolve_mu(
    traj: &Trajectory,
    o: &dyn Objective,
    p: &ReferencePotential,
    opts: &SuiteOptions,
) -> Option<f64> {
    if let Some(mu) = opts.mu {
        return Some(mu);
    }
    if !o.flags().convex {
        return None;
    }
    let f_star = o.f_star()?;
    let x0 = traj.states.first()?;
    let gap0 = o.value(x0) - f_star;
    let spec = MuSampleSpec::around(o, x0, opts.mu_samples, opts.seed);
    let sampled = estimate_aniso_mu(o, p, &spec).ok();
    let along = traj
        .states
        .iter()
        .filter(|x| o.value(x) - f_star >= 1e-6 * gap0)
        .filter_map(|x| aniso_ratio(o, p, x, f_star))
        .fold(f64::INFINITY, f64::min);
    let est = match sampled {
        Some(s) => s.min(along),
        None if along.is_finite() => along,
        None => 0.0,
    };
    Some((est - 1e-6).max(0.0))
}

/// Runs every claim of [`ClaimId::FLOW_CATALOG`] once, in catalog order.
pub fn run_certificate_suite(
    traj: &Trajectory,
    o: &dyn Objective,
    p: &ReferencePotential,
    opts: &SuiteOptions,
) -> CertificateReport {
    let channels = Channels::compute(traj, o, p);
    let mu = resolve_mu(traj, o, p, opts);
    let mut report = run_certificate_suite_on(&channels, mu, opts);
    if report.provenance.trajectory_id.is_empty() {
        report.provenance.trajectory_id = trajectory_fingerprint(traj);
    }
    report
}

/// The suite on precomputed channels.
pub fn run_certificate_suite_on(
    c: &Channels,
    mu: Option<f64>,
    opts: &SuiteOptions,
) -> CertificateReport {
    let (fejer_grad, fejer_dist) = check_fejer_on(c, opts);
    let exp = match mu {
        Some(mu) => check_exponential_rate_on(c, mu, opts),
        None => ClaimEntry::not_applicable(ClaimId::ExpRate, "no rate supplied or estimable"),
    };
    let entries = vec![
        check_decrease_identity_on(c, opts.decrease_tol),
        check_conj_gradient_decrease_on(c, opts),
        check_v_monotone_on(c, opts),
        check_rate_one_over_t_on(c, opts),
        fejer_grad,
        fejer_dist,
        check_gap_rate_on(c, opts),
        exp,
        check_energy_identity_on(c, opts),
        check_l2_bound_on(c, opts),
        check_velocity_vanishes_on(c, mu, opts),
    ];
    CertificateReport {
        provenance: opts.provenance.clone(),
        entries,
    }
}

/// FNV-1a hash over the bit patterns of times and states, as hex.
pub fn trajectory_fingerprint(traj: &Trajectory) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |x: f64| {
        for b in x.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for (t, x) in traj.times.iter().zip(&traj.states) {
        feed(*t);
        x.iter().copied().for_each(&mut feed);
    }
    format!("{h:016x}")
}
