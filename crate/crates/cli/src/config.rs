//! Experiment configuration: a JSON document with a fixed schema.
//!
//! Unknown keys are rejected. [`ExperimentConfig::validate`] resolves ids and
//! checks every numeric field, naming the offending key on failure.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use precond_flow::certify::ClaimId;
use precond_flow::objectives::{make_quadratic, make_quartic, make_rosenbrock, Objective};
use precond_flow::refpotential::ReferencePotential;
use precond_flow::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid `{key}`: {reason}")]
    Field { key: String, reason: String },
}

fn field(key: impl Into<String>, reason: impl ToString) -> ConfigError {
    ConfigError::Field {
        key: key.into(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveSpec,
    pub potential: PotentialSpec,
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub checks: ChecksSpec,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Rate used by `exp-rate` instead of the sampled estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub id: String,
    #[serde(default)]
    pub params: ObjectiveParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub id: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Adaptive,
    Rk4,
    Npgm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_grad: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_velocity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
}

/// `"all"` or an explicit list of claim ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChecksSpec {
    Keyword(String),
    List(Vec<String>),
}

impl Default for ChecksSpec {
    fn default() -> Self {
        ChecksSpec::Keyword("all".to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svg: Option<String>,
    #[serde(default = "default_float_format")]
    pub float_format: String,
}

fn default_float_format() -> String {
    "sci17".to_string()
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            csv: None,
            json: None,
            svg: None,
            float_format: default_float_format(),
        }
    }
}

/// A config whose ids and numbers have been checked.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub objective: Arc<dyn Objective>,
    pub potential: ReferencePotential,
    pub x0: DVector<f64>,
    pub checks: Vec<ClaimId>,
    /// Significant digits of floats in CSV output.
    pub digits: usize,
    pub config_hash: String,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn validate(self) -> Result<Experiment, ConfigError> {
        let n = self.objective.x0.len();
        if n == 0 {
            return Err(field("objective.x0", "must be non-empty"));
        }
        if let Some(d) = self.objective.dimension {
            if d != n {
                return Err(field(
                    "objective.dimension",
                    format!("{d} does not match x0 length {n}"),
                ));
            }
        }
        check_finite("objective.x0", &self.objective.x0)?;
        let objective = build_objective(&self.objective)?;
        let potential = ReferencePotential::from_id(&self.potential.id, &self.potential.params)
            .map_err(|e| {
                let key = match e {
                    precond_flow::refpotential::PotentialError::UnknownFamily(_) => "potential.id",
                    _ => "potential.params",
                };
                field(key, e)
            })?;
        self.integrator.check()?;
        let checks = resolve_checks(&self.checks)?;
        let digits = parse_float_format(&self.outputs.float_format)?;
        if let Some(mu) = self.mu {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(field(
                    "mu",
                    format!("must be finite and nonnegative, got {mu}"),
                ));
            }
        }
        let x0 = DVector::from_column_slice(&self.objective.x0);
        let config_hash = self.hash();
        Ok(Experiment {
            config: self,
            objective,
            potential,
            x0,
            checks,
            digits,
            config_hash,
        })
    }
}

fn check_finite(key: &str, xs: &[f64]) -> Result<(), ConfigError> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(field(format!("{key}[{i}]"), "must be finite")),
        None => Ok(()),
    }
}

fn positive(key: &str, v: Option<f64>) -> Result<(), ConfigError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => {
            Err(field(key, format!("must be positive and finite, got {x}")))
        }
        _ => Ok(()),
    }
}

impl IntegratorSpec {
    fn check(&self) -> Result<(), ConfigError> {
        for (key, v) in [
            ("integrator.rel_tol", self.rel_tol),
            ("integrator.abs_tol", self.abs_tol),
            ("integrator.step", self.step),
            ("integrator.t_end", self.t_end),
            ("integrator.gamma", self.gamma),
            ("integrator.record_every", self.record_every),
            ("integrator.stop_velocity", self.stop_velocity),
        ] {
            positive(key, v)?;
        }
        if let Some(s) = self.stop_grad {
            if !(s >= 0.0) {
                return Err(field(
                    "integrator.stop_grad",
                    format!("must be nonnegative, got {s}"),
                ));
            }
        }
        if let Some(gammas) = &self.gammas {
            if gammas.is_empty() {
                return Err(field("integrator.gammas", "must be non-empty"));
            }
            for (i, g) in gammas.iter().enumerate() {
                positive(&format!("integrator.gammas[{i}]"), Some(*g))?;
            }
        }
        match self.method {
            Method::Adaptive => {
                self.t_end
                    .ok_or_else(|| field("integrator.t_end", "required for adaptive"))?;
            }
            Method::Rk4 => {
                let t_end = self
                    .t_end
                    .ok_or_else(|| field("integrator.t_end", "required for rk4"))?;
                let h = self
                    .step
                    .ok_or_else(|| field("integrator.step", "required for rk4"))?;
                if h > t_end {
                    return Err(field(
                        "integrator.step",
                        format!("{h} exceeds t_end {t_end}"),
                    ));
                }
            }
            Method::Npgm => {
                if self.gamma.is_none() && self.gammas.is_none() {
                    return Err(field("integrator.gamma", "required for npgm"));
                }
                match self.k_max {
                    None => return Err(field("integrator.k_max", "required for npgm")),
                    Some(0) => return Err(field("integrator.k_max", "must be at least 1")),
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }
}

fn build_objective(spec: &ObjectiveSpec) -> Result<Arc<dyn Objective>, ConfigError> {
    let n = spec.x0.len();
    let no_params = |id: &str| -> Result<(), ConfigError> {
        if spec.params != ObjectiveParams::default() {
            return Err(field(
                "objective.params",
                format!("`{id}` takes no parameters"),
            ));
        }
        Ok(())
    };
    match spec.id.as_str() {
        "quadratic" => {
            let rows = spec.params.matrix.clone().unwrap_or_else(|| {
                (0..n)
                    .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                    .collect()
            });
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(field("objective.params.matrix", format!("must be {n}x{n}")));
            }
            for (i, r) in rows.iter().enumerate() {
                check_finite(&format!("objective.params.matrix[{i}]"), r)?;
            }
            let b = spec.params.vector.clone().unwrap_or_else(|| vec![0.0; n]);
            if b.len() != n {
                return Err(field(
                    "objective.params.vector",
                    format!("must have length {n}"),
                ));
            }
            check_finite("objective.params.vector", &b)?;
            let a = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
            make_quadratic(a, DVector::from_vec(b))
                .map(|q| Arc::new(q) as Arc<dyn Objective>)
                .map_err(|e| field("objective.params", e))
        }
        "quartic" => {
            no_params("quartic")?;
            make_quartic(n)
                .map(|q| Arc::new(q) as Arc<dyn Objective>)
                .map_err(|e| field("objective.x0", e))
        }
        "rosenbrock" => {
            no_params("rosenbrock")?;
            make_rosenbrock(n)
                .map(|q| Arc::new(q) as Arc<dyn Objective>)
                .map_err(|e| field("objective.x0", e))
        }
        other => Err(field(
            "objective.id",
            format!("unknown objective `{other}`"),
        )),
    }
}

fn resolve_checks(spec: &ChecksSpec) -> Result<Vec<ClaimId>, ConfigError> {
    match spec {
        ChecksSpec::Keyword(k) if k == "all" => Ok(ClaimId::FLOW_CATALOG
            .iter()
            .chain(&ClaimId::DUAL_CATALOG)
            .copied()
            .collect()),
        ChecksSpec::Keyword(k) => Err(field(
            "checks",
            format!("expected \"all\" or a list, got \"{k}\""),
        )),
        ChecksSpec::List(items) => items
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let id: ClaimId = s.parse().map_err(|e| field(format!("checks[{i}]"), e))?;
                if ClaimId::PAIR_CATALOG.contains(&id) {
                    return Err(field(
                        format!("checks[{i}]"),
                        format!("`{s}` is not a trajectory claim"),
                    ));
                }
                Ok(id)
            })
            .collect(),
    }
}

/// `"sciN"`: scientific notation with `N` significant digits, `1 ≤ N ≤ 17`.
fn parse_float_format(s: &str) -> Result<usize, ConfigError> {
    s.strip_prefix("sci")
        .and_then(|d| d.parse::<usize>().ok())
        .filter(|d| (1..=17).contains(d))
        .ok_or_else(|| {
            field(
                "outputs.float_format",
                format!("expected sci1..sci17, got \"{s}\""),
            )
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "objective": {"id": "quadratic", "params": {"matrix": [[1, 0], [0, 2]]}, "x0": [1, 1]},
        "potential": {"id": "quadratic"},
        "integrator": {"method": "adaptive", "t_end": 5}
    }"#;

    fn with(path: &[&str], value: serde_json::Value) -> String {
        let mut v: serde_json::Value = serde_json::from_str(BASE).unwrap();
        let mut cur = &mut v;
        for p in &path[..path.len() - 1] {
            cur = cur.get_mut(*p).unwrap();
        }
        cur[path[path.len() - 1]] = value;
        v.to_string()
    }

    fn error_key(text: &str) -> String {
        match ExperimentConfig::from_json(text).and_then(|c| c.validate()) {
            Err(ConfigError::Field { key, .. }) => key,
            Err(e) => e.to_string(),
            Ok(_) => panic!("config accepted"),
        }
    }

    #[test]
    fn base_config_validates() {
        let e = ExperimentConfig::from_json(BASE)
            .unwrap()
            .validate()
            .unwrap();
        assert_eq!(e.checks.len(), 14);
        assert_eq!(e.digits, 17);
        assert_eq!(e.config_hash.len(), 64);
        assert_eq!(e.config.seed, 7);
    }

    #[test]
    fn rejections_name_the_key() {
        assert_eq!(
            error_key(&with(&["objective", "id"], "logistic".into())),
            "objective.id"
        );
        assert_eq!(
            error_key(&with(&["potential", "id"], "huber".into())),
            "potential.id"
        );
        assert_eq!(
            error_key(&with(&["integrator", "t_end"], 0.into())),
            "integrator.t_end"
        );
        assert_eq!(
            error_key(&with(
                &["checks"],
                serde_json::json!(["V-monotone", "bogus"])
            )),
            "checks[1]"
        );
        assert_eq!(
            error_key(&with(
                &["outputs"],
                serde_json::json!({"float_format": "fixed3"})
            )),
            "outputs.float_format"
        );
        assert_eq!(
            error_key(&with(
                &["integrator"],
                serde_json::json!({"method": "npgm", "gammas": [0.0], "k_max": 5})
            )),
            "integrator.gammas[0]"
        );
        assert_eq!(
            error_key(&with(
                &["objective", "params"],
                serde_json::json!({"matrix": [[1, 2], [0, 1]]})
            )),
            "objective.params"
        );
        let unknown = with(&["integrator", "tolerance"], 1e-8.into());
        assert!(error_key(&unknown).contains("tolerance"));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::from_json(BASE).unwrap();
        let b = ExperimentConfig::from_json(&BASE.replace("\n", " ")).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::from_json(&with(&["seed"], 8.into())).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn empty_check_list_is_allowed() {
        let e = ExperimentConfig::from_json(&with(&["checks"], serde_json::json!([])))
            .unwrap()
            .validate()
            .unwrap();
        assert!(e.checks.is_empty());
    }
}
