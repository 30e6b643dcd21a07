//! Reference functions `φ`, their conjugates `φ*` and the preconditioner
//! `∇φ*`.
//!
//! Every potential is even, nonnegative, vanishes at the origin and is
//! strongly convex with modulus `μ_φ`, so `∇φ*` is a `1/μ_φ`-Lipschitz,
//! `μ_φ`-cocoercive bijection onto the interior of `dom φ`.
//!
//! Isotropic potentials `φ = h∘‖·‖` carry a [`ScalarProfile`]
//! `(h, h′, h*, (h*)′)`; then `φ*(y) = h*(‖y‖)` and
//! `∇φ*(y) = (h*)′(‖y‖)/‖y‖ · y`, with `∇φ*(0) = 0`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::{CertificateReport, ClaimEntry, ClaimId, ClaimStatus, Provenance};

/// Distance to the boundary of an open domain below which `φ` reports `+∞`.
pub const BOUNDARY_GUARD: f64 = 1e-12;

/// Upper end of the grid on which the `(h*)′(r)/r` monotonicity flag is tested.
const RATIO_GRID_MAX: f64 = 1e3;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type VectorScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type VectorMapFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("strong convexity modulus must be positive, got {0}")]
    NonPositiveModulus(f64),
    #[error("domain radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositiveParam { name: String, value: f64 },
    #[error("unknown reference family `{0}`")]
    UnknownFamily(String),
    #[error("family `{family}` does not accept parameter `{param}`")]
    UnknownParam { family: String, param: String },
    #[error("potential has no scalar profile; the operation needs an isotropic family")]
    NoProfile,
}

/// Tag of a reference family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FamilyId {
    #[serde(rename = "quadratic")]
    Quadratic,
    #[serde(rename = "eps-normalized")]
    EpsNormalized,
    #[serde(rename = "cosh-clip")]
    CoshClip,
    #[serde(rename = "ball-moreau")]
    BallMoreau,
    /// User-built isotropic profile.
    #[serde(rename = "isotropic")]
    Isotropic,
    /// User-supplied evaluators without a scalar profile.
    #[serde(rename = "custom")]
    Custom,
}

impl FamilyId {
    pub const CATALOG: [FamilyId; 4] = [
        FamilyId::Quadratic,
        FamilyId::EpsNormalized,
        FamilyId::CoshClip,
        FamilyId::BallMoreau,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FamilyId::Quadratic => "quadratic",
            FamilyId::EpsNormalized => "eps-normalized",
            FamilyId::CoshClip => "cosh-clip",
            FamilyId::BallMoreau => "ball-moreau",
            FamilyId::Isotropic => "isotropic",
            FamilyId::Custom => "custom",
        }
    }
}

impl fmt::Display for FamilyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FamilyId {
    type Err = PotentialError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::CATALOG
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| PotentialError::UnknownFamily(s.to_string()))
    }
}

/// The scalar quadruple `(h, h′, h*, (h*)′)` of an isotropic potential.
#[derive(Clone)]
pub struct ScalarProfile {
    pub h: ScalarFn,
    pub dh: ScalarFn,
    pub h_conj: ScalarFn,
    pub dh_conj: ScalarFn,
}

impl ScalarProfile {
    pub fn new(
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dh: impl Fn(f64) -> f64 + Send + Sync + 'static,
        h_conj: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dh_conj: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            h: Arc::new(h),
            dh: Arc::new(dh),
            h_conj: Arc::new(h_conj),
            dh_conj: Arc::new(dh_conj),
        }
    }
}

impl fmt::Debug for ScalarProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ScalarProfile { .. }")
    }
}

#[derive(Clone)]
enum Evaluators {
    Isotropic(ScalarProfile),
    General {
        phi: VectorScalarFn,
        conj: VectorScalarFn,
        grad_conj: VectorMapFn,
    },
}

/// A conjugate pair `(φ, φ*, ∇φ*)` with its strong convexity modulus and
/// domain metadata.
#[derive(Clone)]
pub struct ReferencePotential {
    family: FamilyId,
    params: BTreeMap<String, f64>,
    mu_phi: f64,
    dom_radius: f64,
    closed_domain: bool,
    ratio_nonincreasing: bool,
    eval: Evaluators,
}

impl fmt::Debug for ReferencePotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReferencePotential")
            .field("family", &self.family)
            .field("params", &self.params)
            .field("mu_phi", &self.mu_phi)
            .field("dom_radius", &self.dom_radius)
            .field("closed_domain", &self.closed_domain)
            .field("ratio_nonincreasing", &self.ratio_nonincreasing)
            .finish()
    }
}

fn check_modulus(mu: f64, dom_radius: f64) -> Result<(), PotentialError> {
    if !(mu > 0.0) {
        return Err(PotentialError::NonPositiveModulus(mu));
    }
    if !(dom_radius > 0.0) {
        return Err(PotentialError::NonPositiveRadius(dom_radius));
    }
    Ok(())
}

fn positive_param(name: &str, value: f64) -> Result<f64, PotentialError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(PotentialError::NonPositiveParam {
            name: name.to_string(),
            value,
        })
    }
}

/// Tests whether `(h*)′(r)/r` is nonincreasing on a geometric grid over
/// `(0, 10³]`.
fn ratio_is_nonincreasing(dh_conj: &ScalarFn) -> bool {
    const POINTS: usize = 2000;
    let lo: f64 = 1e-6;
    let step = (RATIO_GRID_MAX / lo).ln() / (POINTS - 1) as f64;
    let mut prev = f64::INFINITY;
    for k in 0..POINTS {
        let r = lo * (step * k as f64).exp();
        let ratio = dh_conj(r) / r;
        if !ratio.is_finite() {
            return false;
        }
        if ratio > prev * (1.0 + 1e-12) + 1e-15 {
            return false;
        }
        prev = ratio;
    }
    true
}

/// Builds an isotropic potential `φ = h∘‖·‖` from its scalar profile.
///
/// `dom_radius` is the radius of the open domain `{‖v‖ < dom_radius}`
/// (`f64::INFINITY` for full domain). The returned potential records whether
/// `(h*)′(r)/r` is nonincreasing on `ℝ₊`, tested on a grid.
pub fn make_isotropic(
    profile: ScalarProfile,
    mu: f64,
    dom_radius: f64,
) -> Result<ReferencePotential, PotentialError> {
    check_modulus(mu, dom_radius)?;
    Ok(ReferencePotential {
        family: FamilyId::Isotropic,
        params: BTreeMap::new(),
        mu_phi: mu,
        dom_radius,
        closed_domain: false,
        ratio_nonincreasing: ratio_is_nonincreasing(&profile.dh_conj),
        eval: Evaluators::Isotropic(profile),
    })
}

impl ReferencePotential {
    /// `φ = (a/2)‖·‖²`, `φ* = ‖·‖²/(2a)`, `∇φ* = y/a`.
    pub fn quadratic(a: f64) -> Result<Self, PotentialError> {
        let a = positive_param("a", a)?;
        let profile = ScalarProfile::new(
            move |s| 0.5 * a * s * s,
            move |s| a * s,
            move |r| 0.5 * r * r / a,
            move |r| r / a,
        );
        let mut p = make_isotropic(profile, a, f64::INFINITY)?;
        p.family = FamilyId::Quadratic;
        p.params.insert("a".into(), a);
        Ok(p)
    }

    /// `φ(v) = −ε(ln(1−‖v‖) + ‖v‖)` on the open unit ball, giving
    /// `∇φ*(y) = y/(‖y‖+ε)`.
    pub fn eps_normalized(eps: f64) -> Result<Self, PotentialError> {
        let eps = positive_param("eps", eps)?;
        let profile = ScalarProfile::new(
            move |s| -eps * ((-s).ln_1p() + s),
            move |s| eps * s / (1.0 - s),
            move |r| r - eps * (r / eps).ln_1p(),
            move |r| r / (r + eps),
        );
        let mut p = make_isotropic(profile, eps, 1.0)?;
        p.family = FamilyId::EpsNormalized;
        p.params.insert("eps".into(), eps);
        Ok(p)
    }

    /// `φ(v) = cosh(‖v‖) − 1`, a soft clipping preconditioner with
    /// `(h*)′ = arcsinh`.
    pub fn cosh_clip() -> Result<Self, PotentialError> {
        let profile = ScalarProfile::new(
            |s| {
                // cosh(s) − 1 = 2 sinh²(s/2), accurate near 0
                let half = (0.5 * s).sinh();
                2.0 * half * half
            },
            f64::sinh,
            |r| {
                // r·asinh(r) − (√(1+r²) − 1)
                r * r.asinh() - r * r / (1.0 + r.hypot(1.0))
            },
            f64::asinh,
        );
        let mut p = make_isotropic(profile, 1.0, f64::INFINITY)?;
        p.family = FamilyId::CoshClip;
        Ok(p)
    }

    /// `φ = ½‖·‖² + δ_{‖·‖≤1}`; `∇φ*` is the projection onto the closed
    /// unit ball.
    pub fn ball_moreau() -> Result<Self, PotentialError> {
        let profile = ScalarProfile::new(
            |s| 0.5 * s * s,
            |s| s,
            |r| if r <= 1.0 { 0.5 * r * r } else { r - 0.5 },
            |r| r.min(1.0),
        );
        let mut p = make_isotropic(profile, 1.0, 1.0)?;
        p.family = FamilyId::BallMoreau;
        p.closed_domain = true;
        Ok(p)
    }

    /// A potential given by raw evaluators, without a scalar profile.
    ///
    /// No structural property is checked here; run [`verify_pair`] on it.
    pub fn custom(
        phi: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        conj: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        grad_conj: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        mu: f64,
        dom_radius: f64,
    ) -> Result<Self, PotentialError> {
        check_modulus(mu, dom_radius)?;
        Ok(Self {
            family: FamilyId::Custom,
            params: BTreeMap::new(),
            mu_phi: mu,
            dom_radius,
            closed_domain: false,
            ratio_nonincreasing: false,
            eval: Evaluators::General {
                phi: Arc::new(phi),
                conj: Arc::new(conj),
                grad_conj: Arc::new(grad_conj),
            },
        })
    }

    /// Catalog lookup by string id with a flat parameter map.
    ///
    /// `quadratic` takes `a` (default 1), `eps-normalized` takes `eps`
    /// (default 1); the other families take no parameters.
    pub fn from_id(id: &str, params: &BTreeMap<String, f64>) -> Result<Self, PotentialError> {
        let family: FamilyId = id.parse()?;
        let allowed: &[&str] = match family {
            FamilyId::Quadratic => &["a"],
            FamilyId::EpsNormalized => &["eps"],
            _ => &[],
        };
        if let Some(bad) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(PotentialError::UnknownParam {
                family: id.to_string(),
                param: bad.clone(),
            });
        }
        match family {
            FamilyId::Quadratic => Self::quadratic(params.get("a").copied().unwrap_or(1.0)),
            FamilyId::EpsNormalized => {
                Self::eps_normalized(params.get("eps").copied().unwrap_or(1.0))
            }
            FamilyId::CoshClip => Self::cosh_clip(),
            FamilyId::BallMoreau => Self::ball_moreau(),
            FamilyId::Isotropic | FamilyId::Custom => {
                Err(PotentialError::UnknownFamily(id.to_string()))
            }
        }
    }

    pub fn family(&self) -> FamilyId {
        self.family
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn mu_phi(&self) -> f64 {
        self.mu_phi
    }

    pub fn dom_radius(&self) -> f64 {
        self.dom_radius
    }

    /// Whether `dom φ` includes its boundary sphere.
    pub fn closed_domain(&self) -> bool {
        self.closed_domain
    }

    pub fn profile(&self) -> Option<&ScalarProfile> {
        match &self.eval {
            Evaluators::Isotropic(p) => Some(p),
            Evaluators::General { .. } => None,
        }
    }

    /// `(h*)′(r)/r` is nonincreasing on `ℝ₊` (false without a profile).
    pub fn ratio_nonincreasing(&self) -> bool {
        self.ratio_nonincreasing
    }

    fn in_domain(&self, s: f64) -> bool {
        if self.closed_domain {
            // a projection onto the sphere may land a few ulps outside
            s <= self.dom_radius * (1.0 + 4.0 * f64::EPSILON)
        } else {
            s < self.dom_radius - BOUNDARY_GUARD
        }
    }

    /// `φ(v)`, or `+∞` outside `dom φ`.
    pub fn phi(&self, v: &DVector<f64>) -> f64 {
        match &self.eval {
            Evaluators::Isotropic(profile) => {
                let s = v.norm();
                if self.in_domain(s) {
                    (profile.h)(s)
                } else {
                    f64::INFINITY
                }
            }
            Evaluators::General { phi, .. } => phi(v),
        }
    }

    /// `φ*(y)`.
    pub fn conjugate(&self, y: &DVector<f64>) -> f64 {
        match &self.eval {
            Evaluators::Isotropic(profile) => (profile.h_conj)(y.norm()),
            Evaluators::General { conj, .. } => conj(y),
        }
    }

    /// `∇φ*(y)`; exactly zero at `y = 0`.
    pub fn grad_conjugate(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.eval {
            Evaluators::Isotropic(profile) => {
                let r = y.norm();
                if r == 0.0 {
                    DVector::zeros(y.len())
                } else {
                    y * ((profile.dh_conj)(r) / r)
                }
            }
            Evaluators::General { grad_conj, .. } => grad_conj(y),
        }
    }
}

/// Search parameters for [`numeric_conjugate_oracle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleGrid {
    /// Uniform grid points used to bracket the maximizer.
    pub points: usize,
    /// Bracket width at which golden-section refinement stops.
    pub tol: f64,
}

impl Default for OracleGrid {
    fn default() -> Self {
        Self {
            points: 2001,
            tol: 1e-10,
        }
    }
}

/// Brute-force `φ*(y) = sup_r { r‖y‖ − h(r) }` over the scalar profile.
///
/// Only `h` and `h′` are used, never the closed-form conjugate. Returns the
/// supremum and the maximizer `r·y/‖y‖`.
pub fn numeric_conjugate_oracle(
    p: &ReferencePotential,
    y: &DVector<f64>,
    grid: OracleGrid,
) -> Result<(f64, DVector<f64>), PotentialError> {
    let profile = p.profile().ok_or(PotentialError::NoProfile)?;
    let norm_y = y.norm();
    if norm_y == 0.0 {
        return Ok((0.0, DVector::zeros(y.len())));
    }
    let h = &profile.h;
    let objective = |r: f64| {
        let hv = h(r);
        if hv.is_finite() {
            r * norm_y - hv
        } else {
            f64::NEG_INFINITY
        }
    };

    // Search interval: the open domain or, for full domains, a doubling
    // bracket on the concave scalar objective.
    let upper = if p.dom_radius().is_finite() {
        if p.closed_domain() {
            p.dom_radius()
        } else {
            p.dom_radius() * (1.0 - 1e-15)
        }
    } else {
        let mut hi = 1.0;
        while objective(2.0 * hi) > objective(hi) && hi < 1e300 {
            hi *= 2.0;
        }
        2.0 * hi
    };

    let points = grid.points.max(3);
    let dr = upper / (points - 1) as f64;
    let (best, _) = (0..points).map(|k| (k, objective(k as f64 * dr))).fold(
        (0, f64::NEG_INFINITY),
        |acc, (k, v)| if v > acc.1 { (k, v) } else { acc },
    );
    let mut lo = best.saturating_sub(1) as f64 * dr;
    let mut hi = ((best + 1).min(points - 1)) as f64 * dr;
    let (bracket_lo, bracket_hi) = (lo, hi);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while hi - lo > grid.tol {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = objective(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = objective(d);
        }
    }
    let mut r_best = 0.5 * (lo + hi);
    let mut v_best = objective(r_best);

    // The value is flat at the maximizer, so polish the location with the
    // stationarity condition h′(r) = ‖y‖ inside the grid bracket.
    let dh = &profile.dh;
    let slope = |r: f64| norm_y - dh(r);
    let (mut a, mut b) = (bracket_lo, bracket_hi);
    if slope(a) > 0.0 && slope(b) < 0.0 {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if slope(m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        let r = 0.5 * (a + b);
        let v = objective(r);
        if v >= v_best - 1e-15 * (1.0 + v_best.abs()) {
            r_best = r;
            v_best = v.max(v_best);
        }
    }
    Ok((v_best, y * (r_best / norm_y)))
}

/// Deterministic sampling of dual points for [`verify_pair`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSampleSpec {
    pub count: usize,
    pub dim: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for PairSampleSpec {
    fn default() -> Self {
        Self {
            count: 100,
            dim: 3,
            radius: 10.0,
            seed: 7,
        }
    }
}

pub(crate) fn sample_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..=1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v * radius;
        }
    }
}

/// Checks the conjugate-pair properties on seeded dual samples.
///
/// Margins are normalized violations (positive means violated by that
/// amount):
/// - `fenchel-young`: `|φ*(y) + φ(∇φ*(y)) − ⟨y,∇φ*(y)⟩| / (1 + |⟨y,∇φ*(y)⟩|)`
/// - `cocoercivity`: `(μ‖Δg‖² − ⟨Δg,Δy⟩) / ‖Δy‖²`
/// - `lipschitz`: `‖Δg‖/‖Δy‖ − 1/μ_φ`; `worst_observed` holds `μ_φ‖Δg‖/‖Δy‖`
/// - `evenness`: `|φ*(−y) − φ*(y)| / (1 + |φ*(y)|)`
/// - `range-in-domain`: `‖∇φ*(y)‖ − dom_radius`
pub fn verify_pair(p: &ReferencePotential, spec: PairSampleSpec) -> CertificateReport {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ys: Vec<DVector<f64>> = (0..spec.count)
        .map(|_| sample_ball(&mut rng, spec.dim, spec.radius))
        .collect();
    let gs: Vec<DVector<f64>> = ys.iter().map(|y| p.grad_conjugate(y)).collect();
    let mu = p.mu_phi();

    let mut fy = Worst::default();
    let mut even = Worst::default();
    let mut range = Worst::default();
    let mut range_ok = true;
    for (i, (y, g)) in ys.iter().zip(&gs).enumerate() {
        let inner = y.dot(g);
        let residual = (p.conjugate(y) + p.phi(g) - inner).abs() / (1.0 + inner.abs());
        fy.update(
            if residual.is_nan() {
                f64::INFINITY
            } else {
                residual
            },
            i,
        );

        let cy = p.conjugate(y);
        even.update((p.conjugate(&(-y)) - cy).abs() / (1.0 + cy.abs()), i);

        let gn = g.norm();
        range_ok &= p.in_domain(gn) && p.phi(g).is_finite();
        range.update(gn - p.dom_radius(), i);
    }

    let mut coco = Worst::default();
    let mut lip = Worst::default();
    let mut lip_ratio_max = 0.0f64;
    for i in 0..ys.len() {
        for j in (i + 1)..ys.len() {
            let dy = &ys[i] - &ys[j];
            let dg = &gs[i] - &gs[j];
            let dy2 = dy.norm_squared();
            if dy2 == 0.0 {
                continue;
            }
            coco.update((mu * dg.norm_squared() - dg.dot(&dy)) / dy2, i);
            let ratio = dg.norm() / dy2.sqrt();
            lip_ratio_max = lip_ratio_max.max(mu * ratio);
            lip.update(ratio - 1.0 / mu, i);
        }
    }

    let mut entries = vec![
        fy.entry(ClaimId::FenchelYoung, 1e-8),
        coco.entry(ClaimId::Cocoercivity, 1e-10),
        lip.entry(ClaimId::Lipschitz, 1e-10 / mu),
        even.entry(ClaimId::Evenness, 1e-12),
    ];
    entries[2].worst_observed = Some(lip_ratio_max);
    let slack = if p.closed_domain() {
        4.0 * f64::EPSILON * p.dom_radius()
    } else {
        0.0
    };
    let mut range_entry = range.entry(ClaimId::RangeInDomain, slack);
    range_entry.status = if range_ok {
        ClaimStatus::Pass
    } else {
        ClaimStatus::Fail
    };
    entries.push(range_entry);

    CertificateReport {
        provenance: Provenance {
            config_hash: format!(
                "{}:{}:seed={}:n={}:dim={}:radius={}",
                p.family(),
                p.params()
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect::<Vec<_>>()
                    .join(","),
                spec.seed,
                spec.count,
                spec.dim,
                spec.radius
            ),
            trajectory_id: String::new(),
        },
        entries,
    }
}

#[derive(Debug, Clone, Copy)]
struct Worst {
    margin: f64,
    at: usize,
}

impl Default for Worst {
    fn default() -> Self {
        Self {
            margin: f64::NEG_INFINITY,
            at: 0,
        }
    }
}

impl Worst {
    fn update(&mut self, margin: f64, at: usize) {
        if margin > self.margin || margin.is_nan() {
            self.margin = if margin.is_nan() {
                f64::INFINITY
            } else {
                margin
            };
            self.at = at;
        }
    }

    fn entry(self, claim: ClaimId, tol: f64) -> ClaimEntry {
        let margin = if self.margin == f64::NEG_INFINITY {
            0.0
        } else {
            self.margin
        };
        ClaimEntry::from_margin(claim, margin, self.at as f64, tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn catalog() -> Vec<ReferencePotential> {
        vec![
            ReferencePotential::quadratic(1.0).unwrap(),
            ReferencePotential::quadratic(2.5).unwrap(),
            ReferencePotential::eps_normalized(1.0).unwrap(),
            ReferencePotential::eps_normalized(0.1).unwrap(),
            ReferencePotential::cosh_clip().unwrap(),
            ReferencePotential::ball_moreau().unwrap(),
        ]
    }

    #[test]
    fn phi_examples() {
        let q = ReferencePotential::quadratic(1.0).unwrap();
        assert_eq!(q.phi(&v(&[0.0, 0.0])), 0.0);

        let e = ReferencePotential::eps_normalized(1.0).unwrap();
        let x = v(&[0.5, 4.0 / 6.0 * 1.0]).normalize() * (5.0 / 6.0);
        assert_abs_diff_eq!(e.phi(&x), 6f64.ln() - 5.0 / 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.phi(&x), 0.958426, epsilon = 1e-6);
        assert_eq!(e.phi(&v(&[0.6, 0.8])), f64::INFINITY);
        assert_eq!(e.phi(&v(&[1.0 - 1e-13, 0.0])), f64::INFINITY);
        assert_eq!(e.phi(&v(&[2.0, 0.0])), f64::INFINITY);
    }

    #[test]
    fn conjugate_examples() {
        let y = v(&[3.0, 4.0]);
        let q = ReferencePotential::quadratic(1.0).unwrap();
        assert_abs_diff_eq!(q.conjugate(&y), 12.5, epsilon = 1e-14);
        let e = ReferencePotential::eps_normalized(1.0).unwrap();
        assert_abs_diff_eq!(e.conjugate(&y), 5.0 - 6f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(e.conjugate(&y), 3.208241, epsilon = 1e-6);
        for p in catalog() {
            assert_eq!(p.conjugate(&v(&[0.0, 0.0])), 0.0, "{:?}", p.family());
        }
    }

    #[test]
    fn grad_conjugate_examples() {
        let y = v(&[3.0, 4.0]);
        let e = ReferencePotential::eps_normalized(1.0).unwrap();
        let g = e.grad_conjugate(&y);
        assert_abs_diff_eq!(g[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 2.0 / 3.0, epsilon = 1e-15);
        let q = ReferencePotential::quadratic(1.0).unwrap();
        assert_eq!(q.grad_conjugate(&y), y);
        for p in catalog() {
            assert_eq!(p.grad_conjugate(&v(&[0.0, 0.0, 0.0])), DVector::zeros(3));
        }
    }

    #[test]
    fn ball_moreau_is_projection() {
        let b = ReferencePotential::ball_moreau().unwrap();
        let g = b.grad_conjugate(&v(&[3.0, 4.0]));
        assert_abs_diff_eq!(g[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 0.8, epsilon = 1e-15);
        let inner = v(&[0.3, 0.4]);
        assert_eq!(b.grad_conjugate(&inner), inner);
        assert_eq!(b.phi(&v(&[0.6, 0.8])), 0.5);
        assert_eq!(b.phi(&v(&[0.61, 0.8])), f64::INFINITY);
    }

    #[test]
    fn isotropic_ratio_flags() {
        for p in catalog() {
            assert!(p.ratio_nonincreasing(), "{:?}", p.family());
        }
        // (h*)′(r) = r³ gives an increasing ratio
        let bad = ScalarProfile::new(
            |s: f64| 0.75 * s.abs().powf(4.0 / 3.0),
            |s: f64| s.cbrt(),
            |r| 0.25 * r.powi(4),
            |r| r.powi(3),
        );
        assert!(!make_isotropic(bad, 1.0, f64::INFINITY)
            .unwrap()
            .ratio_nonincreasing());
    }

    #[test]
    fn make_isotropic_rejects_bad_constants() {
        let prof = || ScalarProfile::new(|s| 0.5 * s * s, |s| s, |r| 0.5 * r * r, |r| r);
        assert_eq!(
            make_isotropic(prof(), 0.0, 1.0).unwrap_err(),
            PotentialError::NonPositiveModulus(0.0)
        );
        assert_eq!(
            make_isotropic(prof(), 1.0, -1.0).unwrap_err(),
            PotentialError::NonPositiveRadius(-1.0)
        );
        assert!(ReferencePotential::eps_normalized(0.0).is_err());
    }

    #[test]
    fn from_id_catalog_and_errors() {
        let mut params = BTreeMap::new();
        params.insert("eps".to_string(), 0.25);
        let p = ReferencePotential::from_id("eps-normalized", &params).unwrap();
        assert_eq!(p.mu_phi(), 0.25);
        assert_eq!(p.family(), FamilyId::EpsNormalized);
        assert!(matches!(
            ReferencePotential::from_id("cosh-clip", &params),
            Err(PotentialError::UnknownParam { .. })
        ));
        assert!(matches!(
            ReferencePotential::from_id("hyperbolic", &BTreeMap::new()),
            Err(PotentialError::UnknownFamily(_))
        ));
        for id in FamilyId::CATALOG {
            assert_eq!(
                ReferencePotential::from_id(id.as_str(), &BTreeMap::new())
                    .unwrap()
                    .family(),
                id
            );
        }
    }

    #[test]
    fn oracle_examples() {
        let y = v(&[3.0, 4.0]);
        let q = ReferencePotential::quadratic(1.0).unwrap();
        let (val, arg) = numeric_conjugate_oracle(&q, &y, OracleGrid::default()).unwrap();
        assert_abs_diff_eq!(val, 12.5, epsilon = 1e-8);
        assert_abs_diff_eq!((arg - &y).norm(), 0.0, epsilon = 1e-7);

        let e = ReferencePotential::eps_normalized(1.0).unwrap();
        let (val, arg) = numeric_conjugate_oracle(&e, &y, OracleGrid::default()).unwrap();
        assert_abs_diff_eq!(val, 5.0 - 6f64.ln(), epsilon = 1e-8);
        assert_abs_diff_eq!(arg[0], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(arg[1], 2.0 / 3.0, epsilon = 1e-8);

        let (val, arg) =
            numeric_conjugate_oracle(&e, &v(&[0.0, 0.0]), OracleGrid::default()).unwrap();
        assert_eq!(val, 0.0);
        assert_eq!(arg, DVector::zeros(2));
    }

    #[test]
    fn oracle_needs_profile() {
        let c = ReferencePotential::custom(
            |v| 0.5 * v.norm_squared(),
            |y| 0.5 * y.norm_squared(),
            |y| y.clone(),
            1.0,
            f64::INFINITY,
        )
        .unwrap();
        assert_eq!(
            numeric_conjugate_oracle(&c, &v(&[1.0]), OracleGrid::default()).unwrap_err(),
            PotentialError::NoProfile
        );
    }

    #[test]
    fn closed_forms_match_oracle() {
        let dirs = [v(&[1.0, 0.0]), v(&[0.6, -0.8]), v(&[-1.0, 2.0]).normalize()];
        for p in catalog() {
            for &r in &[0.01, 0.3, 1.0, 2.5, 7.0, 20.0] {
                for d in &dirs {
                    let y = d * r;
                    let (val, arg) =
                        numeric_conjugate_oracle(&p, &y, OracleGrid::default()).unwrap();
                    let closed = p.conjugate(&y);
                    assert!(
                        (val - closed).abs() <= 1e-8 * (1.0 + closed.abs()),
                        "{:?} r={r}: oracle {val} closed {closed}",
                        p.family()
                    );
                    let g = p.grad_conjugate(&y);
                    assert!((arg - g).norm() <= 1e-6, "{:?} r={r}", p.family());
                }
            }
        }
    }

    #[test]
    fn grad_matches_finite_differences() {
        let h = 1e-6;
        let pts = [
            v(&[0.3, -0.2, 0.5]),
            v(&[2.0, 1.0, -3.0]),
            v(&[-0.05, 0.7, 0.1]),
        ];
        for p in catalog() {
            for y in &pts {
                let g = p.grad_conjugate(y);
                for i in 0..y.len() {
                    let mut yp = y.clone();
                    let mut ym = y.clone();
                    yp[i] += h;
                    ym[i] -= h;
                    let fd = (p.conjugate(&yp) - p.conjugate(&ym)) / (2.0 * h);
                    assert!(
                        (fd - g[i]).abs() <= 1e-5 * (1.0 + g[i].abs()),
                        "{:?}: fd {fd} vs {}",
                        p.family(),
                        g[i]
                    );
                }
            }
        }
    }

    #[test]
    fn eps_to_zero_approaches_normalization() {
        let y = v(&[3.0, -1.0, 2.0]);
        let mut prev_gap = f64::INFINITY;
        for eps in [1.0, 0.1, 0.01, 1e-3, 1e-6] {
            let p = ReferencePotential::eps_normalized(eps).unwrap();
            let gap = 1.0 - p.grad_conjugate(&y).norm();
            assert!(gap > 0.0 && gap < prev_gap);
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-6);
    }

    #[test]
    fn verify_pair_quadratic() {
        let q = ReferencePotential::quadratic(1.0).unwrap();
        let report = verify_pair(
            &q,
            PairSampleSpec {
                seed: 7,
                ..Default::default()
            },
        );
        assert!(report.all_pass(), "{report:#?}");
        let lip = report.get(ClaimId::Lipschitz).unwrap();
        assert_abs_diff_eq!(lip.worst_observed.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn verify_pair_catalog() {
        for p in catalog() {
            let report = verify_pair(&p, PairSampleSpec::default());
            assert!(report.all_pass(), "{:?}: {report:#?}", p.family());
        }
        let e = ReferencePotential::eps_normalized(0.1).unwrap();
        let coco = verify_pair(&e, PairSampleSpec::default());
        assert!(coco.get(ClaimId::Cocoercivity).unwrap().worst_margin <= 1e-10);
    }

    #[test]
    fn verify_pair_rejects_mismatched_conjugate() {
        let corrupted = ReferencePotential::custom(
            |v| 0.5 * v.norm_squared(),
            |y| y.norm_squared(),
            |y| y.clone(),
            1.0,
            f64::INFINITY,
        )
        .unwrap();
        let report = verify_pair(&corrupted, PairSampleSpec::default());
        assert_eq!(
            report.get(ClaimId::FenchelYoung).unwrap().status,
            ClaimStatus::Fail
        );
    }
}
