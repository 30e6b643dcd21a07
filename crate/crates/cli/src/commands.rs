//! Subcommands and the exit-code contract.

use std::path::{Path, PathBuf};

use precond_flow::certify::{
    run_certificate_suite, CertificateReport, ClaimEntry, ClaimId, Provenance, SuiteOptions,
};
use precond_flow::dualbridge::{
    check_discrete_duality, closed_loop_value, suboptimal_control_audit, ClosedLoopOptions,
    ControlSetup, Perturbation,
};
use precond_flow::integrate::{
    field_precondflow, integrate_adaptive, integrate_rk4, iterate_npgm, AdaptiveOptions, FlowError,
    Trajectory,
};
use precond_flow::refpotential::ReferencePotential;
use precond_flow::{DVector, Objective};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, Experiment, ExperimentConfig, Method};
use crate::svg::{render, Panel};
use crate::table::{trajectory_rows, write_table, write_table_with_prefix, TRAJECTORY_HEADER};

/// Relative output paths are resolved against this directory when set.
pub const OUTPUT_DIR_ENV: &str = "PFLOW_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok = 0,
    ClaimFailure = 1,
    Config = 2,
    Numerical = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid run setup: {0}")]
    Setup(String),
    #[error("cannot write {path}: {reason}")]
    Output { path: String, reason: String },
}

impl CliError {
    pub fn exit_status(&self) -> ExitStatus {
        match self {
            CliError::Config(_) | CliError::Setup(_) => ExitStatus::Config,
            // an unwritable output path is a configuration problem too
            CliError::Output { .. } => ExitStatus::Config,
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        CliError::Setup(e.to_string())
    }
}

/// What a command did, for the binary to print and exit with.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub status: ExitStatus,
    pub written: Vec<PathBuf>,
    pub messages: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            status: ExitStatus::Ok,
            written: Vec::new(),
            messages: Vec::new(),
        }
    }
}

pub fn resolve_output(path: &str) -> PathBuf {
    let p = Path::new(path);
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if p.is_relative() => Path::new(&dir).join(p),
        _ => p.to_path_buf(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let err = |e: std::io::Error| CliError::Output {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(err)?;
    }
    std::fs::write(path, text).map_err(err)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Output {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

pub fn load(path: &Path) -> Result<Experiment, CliError> {
    Ok(ExperimentConfig::load(path)?.validate()?)
}

/// Produces the trajectory described by the integrator section.
pub fn simulate(
    exp: &Experiment,
    potential: &ReferencePotential,
    default_record: f64,
) -> Result<Trajectory, CliError> {
    let o = exp.objective.as_ref();
    let spec = &exp.config.integrator;
    let record_every = spec.record_every.unwrap_or(default_record);
    let traj = match spec.method {
        Method::Adaptive => {
            let opts = AdaptiveOptions {
                rel_tol: spec.rel_tol.unwrap_or(1e-10),
                abs_tol: spec.abs_tol.unwrap_or(1e-12),
                record_every,
                stop_velocity: spec.stop_velocity,
            };
            integrate_adaptive(
                field_precondflow(o, potential),
                &exp.x0,
                spec.t_end.unwrap_or(1.0),
                opts,
            )?
        }
        Method::Rk4 => integrate_rk4(
            field_precondflow(o, potential),
            &exp.x0,
            spec.t_end.unwrap_or(1.0),
            spec.step.unwrap_or(1e-3),
            record_every,
        )?,
        Method::Npgm => {
            let gamma = spec
                .gamma
                .or_else(|| spec.gammas.as_ref().map(|g| g[0]))
                .unwrap_or(0.1);
            iterate_npgm(
                o,
                potential,
                &exp.x0,
                gamma,
                spec.k_max.unwrap_or(1),
                spec.stop_grad.unwrap_or(0.0),
            )?
        }
    };
    Ok(traj)
}

fn channel_panel(
    title: &str,
    traj: &Trajectory,
    exp: &Experiment,
    potential: &ReferencePotential,
) -> Panel {
    let rows = trajectory_rows(traj, exp.objective.as_ref(), potential);
    let mut panel = Panel::new(title, "t", "value (log scale)", true);
    for (col, label) in [
        (1, "f - f*"),
        (2, "phi*(grad f)"),
        (3, "V(t)"),
        (5, "|x - x*|"),
    ] {
        panel.push(label, rows.iter().map(|r| (r[0], r[col])).collect());
    }
    panel
}

fn numerical_message(traj: &Trajectory) -> String {
    format!(
        "run ended with {} at t = {:e}",
        traj.terminal.as_str(),
        traj.final_time().unwrap_or(0.0)
    )
}

/// Integrates and writes the trajectory CSV and, if requested, an SVG plot.
pub fn cmd_run(exp: &Experiment) -> Result<Outcome, CliError> {
    let mut out = Outcome::new();
    let traj = simulate(exp, &exp.potential, 1e-2)?;
    let csv_path = resolve_output(
        exp.config
            .outputs
            .csv
            .as_deref()
            .unwrap_or("trajectory.csv"),
    );
    let rows = trajectory_rows(&traj, exp.objective.as_ref(), &exp.potential);
    write_table(&csv_path, &TRAJECTORY_HEADER, &rows, exp.digits).map_err(csv_err(&csv_path))?;
    out.written.push(csv_path);
    if let Some(svg) = &exp.config.outputs.svg {
        let path = resolve_output(svg);
        let title = format!("{} / {}", exp.objective.name(), exp.potential.family());
        write_text(
            &path,
            &render(&[channel_panel(&title, &traj, exp, &exp.potential)]),
        )?;
        out.written.push(path);
    }
    if traj.terminal.is_numerical_failure() {
        out.status = ExitStatus::Numerical;
        out.messages.push(numerical_message(&traj));
    }
    Ok(out)
}

fn failed_entry(claim: ClaimId, reason: String) -> ClaimEntry {
    let mut e = ClaimEntry::from_margin(claim, f64::INFINITY, 0.0, 0.0);
    e.note = Some(reason);
    e
}

fn has_closed_conjugate(o: &dyn Objective) -> bool {
    o.grad_conjugate_closed(&DVector::zeros(o.dim())).is_some()
}

/// Duality and control claims: md-duality, value-identity, lower-bound-audit.
fn dual_entries(exp: &Experiment, wanted: &[ClaimId]) -> Vec<ClaimEntry> {
    let o = exp.objective.as_ref();
    let flags = o.flags();
    let wanted_dual: Vec<ClaimId> = ClaimId::DUAL_CATALOG
        .iter()
        .copied()
        .filter(|c| wanted.contains(c))
        .collect();
    if wanted_dual.is_empty() {
        return Vec::new();
    }
    if !(flags.strictly_convex && flags.supercoercive) {
        return wanted_dual
            .into_iter()
            .map(|c| {
                ClaimEntry::not_applicable(c, "objective is not strictly convex and supercoercive")
            })
            .collect();
    }
    let spec = &exp.config.integrator;
    let mut entries = Vec::new();
    if wanted.contains(&ClaimId::MdDuality) {
        let (tol, newton) = if has_closed_conjugate(o) {
            (1e-10, 1e-13)
        } else {
            (1e-7, 1e-9)
        };
        let gamma = spec.gamma.unwrap_or(0.1);
        let k = spec.k_max.unwrap_or(50);
        entries.push(
            check_discrete_duality(o, &exp.potential, &exp.x0, gamma, k, tol, newton)
                .unwrap_or_else(|e| failed_entry(ClaimId::MdDuality, e.to_string())),
        );
    }
    if wanted.contains(&ClaimId::ValueIdentity) || wanted.contains(&ClaimId::LowerBoundAudit) {
        let setup = match ControlSetup::new(exp.objective.clone(), exp.potential.clone()) {
            Ok(s) => s,
            Err(e) => {
                for c in [ClaimId::ValueIdentity, ClaimId::LowerBoundAudit] {
                    if wanted.contains(&c) {
                        entries.push(failed_entry(c, e.to_string()));
                    }
                }
                return entries;
            }
        };
        let opts = ClosedLoopOptions::default();
        let horizon = spec.t_end.unwrap_or(0.0).max(100.0);
        if wanted.contains(&ClaimId::ValueIdentity) {
            entries.push(match closed_loop_value(&setup, &exp.x0, horizon, &opts) {
                Ok(v) => v.value_identity(1e-4),
                Err(e) => failed_entry(ClaimId::ValueIdentity, e.to_string()),
            });
        }
        if wanted.contains(&ClaimId::LowerBoundAudit) {
            let mut direction = DVector::zeros(o.dim());
            direction[0] = 1.0;
            let laws = [
                Perturbation::None,
                Perturbation::Additive {
                    amplitude: 0.1,
                    rate: 1.0,
                    direction,
                },
                Perturbation::Scaled { factor: 2.0 },
                Perturbation::Scaled { factor: 0.5 },
            ];
            entries.push(
                match suboptimal_control_audit(&setup, &exp.x0, horizon, &laws, 1e-5, &opts) {
                    Ok(a) => a.entry,
                    Err(e) => failed_entry(ClaimId::LowerBoundAudit, e.to_string()),
                },
            );
        }
    }
    entries
}

/// Runs the selected claims and writes the JSON report. Exit 1 when an
/// applicable claim fails, 3 when the run itself failed numerically.
pub fn cmd_certify(exp: &Experiment) -> Result<Outcome, CliError> {
    let mut out = Outcome::new();
    let traj = simulate(exp, &exp.potential, 1e-4)?;
    let opts = SuiteOptions {
        rel_tol: exp.config.integrator.rel_tol.unwrap_or(1e-10),
        mu: exp.config.mu,
        // Dense output across a projection kink is only accurate to about 1e-5.
        decrease_tol: if exp.potential.closed_domain() {
            1e-4
        } else {
            1e-5
        },
        seed: exp.config.seed,
        provenance: Provenance {
            config_hash: exp.config_hash.clone(),
            trajectory_id: String::new(),
        },
        ..SuiteOptions::default()
    };
    let mut report = if exp.checks.iter().any(|c| ClaimId::FLOW_CATALOG.contains(c)) {
        run_certificate_suite(&traj, exp.objective.as_ref(), &exp.potential, &opts)
    } else {
        CertificateReport {
            provenance: Provenance {
                config_hash: exp.config_hash.clone(),
                trajectory_id: precond_flow::certify::trajectory_fingerprint(&traj),
            },
            entries: Vec::new(),
        }
    };
    report.entries.extend(dual_entries(exp, &exp.checks));
    report.retain_claims(&exp.checks);

    let path = resolve_output(
        exp.config
            .outputs
            .json
            .as_deref()
            .unwrap_or("certificate.json"),
    );
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write_text(&path, &json)?;
    out.written.push(path);

    for e in report.failed() {
        out.messages.push(format!(
            "claim {} failed (margin {:e}, tolerance {:e})",
            e.claim, e.worst_margin, e.tolerance_used
        ));
    }
    if traj.terminal.is_numerical_failure() {
        out.status = ExitStatus::Numerical;
        out.messages.push(numerical_message(&traj));
    } else if !report.all_pass() {
        out.status = ExitStatus::ClaimFailure;
    }
    Ok(out)
}

pub const COMPARE_HEADER: [&str; 5] = [
    "gamma",
    "steps",
    "duality_residual",
    "euler_gap",
    "gap_ratio",
];

/// For each step size: the mirror-descent duality residual and the largest
/// distance between the discrete iterates and the flow at times `γk`.
/// `gap_ratio` divides the previous row's gap by this row's.
pub fn cmd_compare(exp: &Experiment) -> Result<Outcome, CliError> {
    let mut out = Outcome::new();
    let spec = &exp.config.integrator;
    let gammas = spec
        .gammas
        .clone()
        .or_else(|| spec.gamma.map(|g| vec![g]))
        .ok_or_else(|| {
            CliError::Setup("compare needs `integrator.gammas` or `integrator.gamma`".into())
        })?;
    let horizon = spec.t_end.unwrap_or(1.0);
    let o = exp.objective.as_ref();
    let p = &exp.potential;
    let invertible = o.flags().strictly_convex && o.flags().supercoercive;
    let newton = if has_closed_conjugate(o) { 1e-13 } else { 1e-9 };

    let mut rows: Vec<[f64; 5]> = Vec::with_capacity(gammas.len());
    for &gamma in &gammas {
        let steps = ((horizon / gamma).round() as usize).max(1);
        let discrete = iterate_npgm(o, p, &exp.x0, gamma, steps, 0.0)?;
        if discrete.terminal.is_numerical_failure() {
            out.status = ExitStatus::Numerical;
            out.messages
                .push(format!("gamma = {gamma}: {}", numerical_message(&discrete)));
        }
        let duality = if invertible {
            check_discrete_duality(o, p, &exp.x0, gamma, steps, f64::INFINITY, newton)
                .map(|e| e.worst_margin)
                .unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        let opts = AdaptiveOptions {
            rel_tol: spec.rel_tol.unwrap_or(1e-12),
            abs_tol: spec.abs_tol.unwrap_or(1e-13),
            record_every: gamma,
            stop_velocity: None,
        };
        let flow =
            integrate_adaptive(field_precondflow(o, p), &exp.x0, gamma * steps as f64, opts)?;
        if flow.terminal.is_numerical_failure() {
            out.status = ExitStatus::Numerical;
            out.messages.push(format!(
                "gamma = {gamma}: flow {}",
                numerical_message(&flow)
            ));
        }
        let gap = flow
            .states
            .iter()
            .zip(&discrete.states)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        let ratio = rows.last().map_or(f64::NAN, |prev| prev[3] / gap);
        rows.push([gamma, steps as f64, duality, gap, ratio]);
    }
    let path = resolve_output(exp.config.outputs.csv.as_deref().unwrap_or("compare.csv"));
    write_table(&path, &COMPARE_HEADER, &rows, exp.digits).map_err(csv_err(&path))?;
    out.written.push(path);
    Ok(out)
}

pub const SWEEP_SUMMARY_HEADER: [&str; 4] =
    ["value", "final_t", "terminal_f_gap", "final_grad_norm"];

fn swept(
    exp: &Experiment,
    param: &str,
    value: f64,
) -> Result<(ReferencePotential, Experiment), CliError> {
    let mut exp = exp.clone();
    match param {
        "gamma" => {
            if exp.config.integrator.method != Method::Npgm {
                return Err(CliError::Setup(
                    "sweeping `gamma` requires the npgm method".into(),
                ));
            }
            if !(value > 0.0 && value.is_finite()) {
                return Err(CliError::Setup(format!(
                    "gamma must be positive, got {value}"
                )));
            }
            exp.config.integrator.gamma = Some(value);
            Ok((exp.potential.clone(), exp))
        }
        name => {
            let mut params = exp.config.potential.params.clone();
            params.insert(name.to_string(), value);
            let p = ReferencePotential::from_id(&exp.config.potential.id, &params)
                .map_err(|e| CliError::Setup(format!("sweep parameter `{name}`: {e}")))?;
            exp.config.potential.params = params;
            Ok((p, exp))
        }
    }
}

fn sibling(base: &Path, suffix: &str) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    base.with_file_name(format!("{stem}_{suffix}.csv"))
}

/// Trajectory, its table rows and the path they were written to.
type SweepRun = (Trajectory, Vec<[f64; 9]>, PathBuf);

/// One run per value, in parallel. Each run's table is written as soon as it
/// completes; the combined table, a summary and the SVG follow.
pub fn cmd_sweep(exp: &Experiment, param: &str, values: &[f64]) -> Result<Outcome, CliError> {
    if values.is_empty() {
        return Err(CliError::Setup("sweep needs at least one value".into()));
    }
    let runs: Vec<(ReferencePotential, Experiment)> = values
        .iter()
        .map(|&v| swept(exp, param, v))
        .collect::<Result<_, _>>()?;
    let base = resolve_output(exp.config.outputs.csv.as_deref().unwrap_or("sweep.csv"));

    let results: Vec<Result<SweepRun, CliError>> = runs
        .par_iter()
        .zip(values.par_iter())
        .map(|((p, e), v)| {
            let traj = simulate(e, p, 1e-2)?;
            let rows = trajectory_rows(&traj, e.objective.as_ref(), p);
            let path = sibling(&base, &format!("{param}={v}"));
            write_table(&path, &TRAJECTORY_HEADER, &rows, exp.digits).map_err(csv_err(&path))?;
            Ok((traj, rows, path))
        })
        .collect();
    let results: Vec<(Trajectory, Vec<[f64; 9]>, PathBuf)> =
        results.into_iter().collect::<Result<_, _>>()?;

    let mut out = Outcome::new();
    let combined = results.iter().zip(values).flat_map(|((_, rows, _), v)| {
        rows.iter().map(move |r| {
            (
                vec![param.to_string(), crate::table::fmt_float(*v, exp.digits)],
                &r[..],
            )
        })
    });
    write_table_with_prefix(
        &base,
        &["param", "value"],
        &TRAJECTORY_HEADER,
        combined,
        exp.digits,
    )
    .map_err(csv_err(&base))?;

    let summary: Vec<[f64; 4]> = results
        .iter()
        .zip(values)
        .map(|((_, rows, _), v)| {
            let last = rows.last().copied().unwrap_or([f64::NAN; 9]);
            [*v, last[0], last[1], last[6]]
        })
        .collect();
    let summary_path = sibling(&base, "summary");
    write_table(&summary_path, &SWEEP_SUMMARY_HEADER, &summary, exp.digits)
        .map_err(csv_err(&summary_path))?;

    for ((traj, _, path), v) in results.iter().zip(values) {
        out.written.push(path.clone());
        if traj.terminal.is_numerical_failure() {
            out.status = ExitStatus::Numerical;
            out.messages
                .push(format!("{param} = {v}: {}", numerical_message(traj)));
        }
    }
    out.written.push(base.clone());
    out.written.push(summary_path);

    let svg_path = resolve_output(exp.config.outputs.svg.as_deref().unwrap_or("sweep.svg"));
    let mut profiles = Panel::new("preconditioner profile", "r", "|grad phi*(r e)|", false);
    let mut gaps = Panel::new("objective gap", "t", "f - f* (log scale)", true);
    let dim = exp.objective.dim();
    let mut e1 = DVector::zeros(dim);
    e1[0] = 1.0;
    let r_max = 5.0;
    for (((p, _), (_, rows, _)), v) in runs.iter().zip(&results).zip(values) {
        let label = format!("{param} = {v}");
        let curve = (0..=200)
            .map(|i| {
                let r = r_max * i as f64 / 200.0;
                (r, p.grad_conjugate(&(&e1 * r)).norm())
            })
            .collect();
        profiles.push(label.clone(), curve);
        gaps.push(label, rows.iter().map(|r| (r[0], r[1])).collect());
    }
    write_text(&svg_path, &render(&[profiles, gaps]))?;
    out.written.push(svg_path);
    Ok(out)
}
