//! Acceptance gate: one line per criterion, then a single assertion.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use precond_flow::certify::{
    check_energy_identity_on, check_exponential_rate, check_l2_bound_on, estimate_aniso_mu,
    run_certificate_suite, Channels, ClaimId, ClaimStatus, MuSampleSpec, SuiteOptions,
};
use precond_flow::dualbridge::{
    check_discrete_duality, closed_loop_value, suboptimal_control_audit, ClosedLoopOptions,
    ControlSetup, Perturbation,
};
use precond_flow::integrate::{field_precondflow, integrate_adaptive, AdaptiveOptions, Trajectory};
use precond_flow::objectives::{make_quadratic, make_quartic, Objective, Quadratic};
use precond_flow::refpotential::{
    numeric_conjugate_oracle, verify_pair, OracleGrid, PairSampleSpec, ReferencePotential,
};
use precond_flow::{DMatrix, DVector};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn diag(d: &[f64]) -> Quadratic {
    make_quadratic(DMatrix::from_diagonal(&v(d)), DVector::zeros(d.len())).unwrap()
}

fn catalog() -> Vec<ReferencePotential> {
    vec![
        ReferencePotential::quadratic(1.0).unwrap(),
        ReferencePotential::eps_normalized(1.0).unwrap(),
        ReferencePotential::cosh_clip().unwrap(),
        ReferencePotential::ball_moreau().unwrap(),
    ]
}

fn flow(
    o: &dyn Objective,
    p: &ReferencePotential,
    x0: &[f64],
    t_end: f64,
    record_every: f64,
) -> Trajectory {
    let opts = AdaptiveOptions {
        rel_tol: 1e-10,
        abs_tol: 1e-12,
        record_every,
        stop_velocity: None,
    };
    integrate_adaptive(field_precondflow(o, p), &v(x0), t_end, opts).unwrap()
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn conjugate_pairs() -> Outcome {
    let mut worst_fy = 0.0f64;
    for p in catalog() {
        let report = verify_pair(&p, PairSampleSpec::default());
        for claim in [
            ClaimId::FenchelYoung,
            ClaimId::Cocoercivity,
            ClaimId::Lipschitz,
        ] {
            let e = report.get(claim).unwrap();
            ensure(
                e.passed(),
                format!("{} {claim}: margin {:e}", p.family(), e.worst_margin),
            )?;
        }
        worst_fy = worst_fy.max(report.get(ClaimId::FenchelYoung).unwrap().worst_margin);
        for y in [v(&[3.0, 4.0]), v(&[0.3, -0.1]), v(&[-1.5, 0.7, 2.0])] {
            let (val, grad) = numeric_conjugate_oracle(&p, &y, OracleGrid::default())
                .map_err(|e| e.to_string())?;
            ensure(
                (val - p.conjugate(&y)).abs() <= 1e-8,
                format!("{} conjugate at {y:?}", p.family()),
            )?;
            ensure(
                (grad - p.grad_conjugate(&y)).norm() <= 1e-8,
                format!("{} gradient at {y:?}", p.family()),
            )?;
        }
    }
    let eps = ReferencePotential::eps_normalized(1.0).unwrap();
    let (val, _) = numeric_conjugate_oracle(&eps, &v(&[3.0, 4.0]), OracleGrid::default())
        .map_err(|e| e.to_string())?;
    let expected = 5.0 - 6f64.ln();
    ensure(
        (val - expected).abs() <= 1e-8,
        format!("eps-normalized oracle {val} vs {expected}"),
    )?;
    Ok(format!("4 potentials x 100 samples, worst Fenchel-Young residual {worst_fy:.1e}; phi*(3,4) = {val:.12}"))
}

fn flow_oracle() -> Outcome {
    let o = diag(&[1.0, 2.0]);
    let p = ReferencePotential::quadratic(1.0).unwrap();
    let x0 = [0.7, -1.3];
    let traj = flow(&o, &p, &x0, 1.0, 0.25);
    let x = traj.final_state().unwrap();
    let exact = v(&[x0[0] * (-1f64).exp(), x0[1] * (-2f64).exp()]);
    let err = (x - &exact).amax();
    ensure(err <= 1e-8, format!("error {err:e}"))?;
    Ok(format!("max error at t = 1: {err:.1e}"))
}

fn convex_pairings() -> Vec<(Box<dyn Objective>, ReferencePotential)> {
    let mut out: Vec<(Box<dyn Objective>, ReferencePotential)> = Vec::new();
    for p in &catalog()[..3] {
        out.push((Box::new(diag(&[1.0, 2.0])), p.clone()));
        out.push((Box::new(make_quartic(2).unwrap()), p.clone()));
    }
    out
}

const LYAPUNOV_CLAIMS: [ClaimId; 6] = [
    ClaimId::ConjGradDecrease,
    ClaimId::VMonotone,
    ClaimId::RateOneOverT,
    ClaimId::FejerGrad,
    ClaimId::FejerDist,
    ClaimId::GapRate,
];

fn lyapunov_suite() -> Outcome {
    let opts = SuiteOptions::default();
    for (o, p) in convex_pairings() {
        let traj = flow(o.as_ref(), &p, &[1.0, -0.8], 10.0, 1e-3);
        let report = run_certificate_suite(&traj, o.as_ref(), &p, &opts);
        for c in LYAPUNOV_CLAIMS {
            let e = report.get(c).unwrap();
            ensure(
                e.status == ClaimStatus::Pass && e.tolerance_used == 10.0 * opts.rel_tol,
                format!("{} / {}: {c} {:?}", o.name(), p.family(), e),
            )?;
        }
    }
    let o = diag(&[1.0]);
    let p = ReferencePotential::quadratic(1.0).unwrap();
    let c = Channels::compute(&flow(&o, &p, &[1.0], 2.0, 0.5), &o, &p);
    let i = c
        .times
        .iter()
        .position(|&t| t == 1.0)
        .ok_or("no sample at t = 1")?;
    let expected = 0.5 * (-2f64).exp();
    ensure(
        (c.conj[i] - expected).abs() <= 1e-9,
        format!("phi*(grad f(x(1))) = {}", c.conj[i]),
    )?;
    ensure(
        c.conj[i] <= 0.5 / c.times[i],
        "rate bound violated at t = 1",
    )?;
    Ok(format!(
        "6 claims on 6 pairings; 1-D channel at t = 1: {:.6} <= 0.5",
        c.conj[i]
    ))
}

fn energy_and_l2() -> Outcome {
    let opts = SuiteOptions::default();
    let mut worst = 0.0f64;
    for (o, p) in convex_pairings() {
        let traj = flow(o.as_ref(), &p, &[1.0, -0.8], 10.0, 1e-4);
        let c = Channels::compute(&traj, o.as_ref(), &p);
        let e = check_energy_identity_on(&c, &opts);
        ensure(
            e.passed(),
            format!("{} / {} energy: {:e}", o.name(), p.family(), e.worst_margin),
        )?;
        let l2 = check_l2_bound_on(&c, &opts);
        ensure(
            l2.passed(),
            format!("{} / {} L2: {:e}", o.name(), p.family(), l2.worst_margin),
        )?;
        worst = worst.max(e.worst_margin);
    }
    let o = diag(&[1.0]);
    let p = ReferencePotential::quadratic(1.0).unwrap();
    let c = Channels::compute(&flow(&o, &p, &[1.0], 20.0, 1e-3), &o, &p);
    let l2 = check_l2_bound_on(&c, &opts);
    let integral = l2.worst_observed.unwrap();
    ensure(
        l2.passed() && (integral - 0.5).abs() <= 1e-6,
        format!("1-D L2 integral {integral}"),
    )?;
    Ok(format!(
        "worst energy discrepancy {worst:.1e}; 1-D L2 integral {integral:.9} vs 0.5"
    ))
}

fn exponential_rate() -> Outcome {
    let o = diag(&[1.0, 2.0]);
    let p = ReferencePotential::quadratic(1.0).unwrap();
    let x0 = [1.0, 1.0];
    let spec = MuSampleSpec::around(&o, &v(&x0), 2000, 7);
    let mu = estimate_aniso_mu(&o, &p, &spec).map_err(|e| e.to_string())?;
    ensure((1.0..1.05).contains(&mu), format!("mu estimate {mu}"))?;
    let traj = flow(&o, &p, &x0, 10.0, 1e-3);
    let opts = SuiteOptions::default();
    let good = check_exponential_rate(&traj, &o, &p, mu - 1e-6, &opts);
    ensure(good.passed(), format!("exp-rate with estimate: {good:?}"))?;
    let bad = check_exponential_rate(&traj, &o, &p, 3.0, &opts);
    ensure(
        bad.status == ClaimStatus::Fail,
        "mu = 3 control did not fail",
    )?;
    Ok(format!(
        "mu estimate {mu:.6}; mu = 3 fails with margin {:.2e}",
        bad.worst_margin
    ))
}

fn discrete_duality() -> Outcome {
    let quad = check_discrete_duality(
        &diag(&[1.0, 2.0]),
        &ReferencePotential::quadratic(1.0).unwrap(),
        &v(&[1.0, 1.0]),
        0.1,
        50,
        1e-10,
        1e-13,
    )
    .map_err(|e| e.to_string())?;
    ensure(
        quad.passed(),
        format!("quadratic residual {:e}", quad.worst_margin),
    )?;
    let quartic = check_discrete_duality(
        &make_quartic(2).unwrap(),
        &ReferencePotential::eps_normalized(1.0).unwrap(),
        &v(&[1.0, -0.5]),
        0.05,
        30,
        1e-7,
        1e-9,
    )
    .map_err(|e| e.to_string())?;
    ensure(
        quartic.passed(),
        format!("quartic residual {:e}", quartic.worst_margin),
    )?;
    Ok(format!(
        "residuals {:.1e} (quadratic, 50 steps), {:.1e} (quartic, 30 steps)",
        quad.worst_margin, quartic.worst_margin
    ))
}

fn run_pflow(dir: &Path, args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_pflow"))
        .args(args)
        .current_dir(dir)
        .env_remove("PFLOW_OUTPUT_DIR")
        .output()
        .expect("pflow runs")
        .status
        .code()
        .unwrap_or(-1)
}

fn write(dir: &Path, name: &str, json: serde_json::Value) {
    std::fs::write(dir.join(name), json.to_string()).unwrap();
}

fn quadratic_config() -> serde_json::Value {
    serde_json::json!({
        "objective": {"id": "quadratic", "params": {"matrix": [[1, 0], [0, 2]]}, "x0": [1, 1]},
        "potential": {"id": "quadratic"},
        "integrator": {"method": "adaptive", "t_end": 40}
    })
}

fn euler_consistency() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = quadratic_config();
    cfg["integrator"] = serde_json::json!({"method": "npgm", "gammas": [0.1, 0.05, 0.025], "k_max": 40, "t_end": 1});
    cfg["outputs"] = serde_json::json!({"csv": "compare.csv"});
    write(dir.path(), "compare.json", cfg);
    let code = run_pflow(dir.path(), &["compare", "compare.json"]);
    ensure(code == 0, format!("compare exited {code}"))?;
    let mut rdr =
        csv::Reader::from_path(dir.path().join("compare.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| {
            r.unwrap()
                .iter()
                .map(|s| s.parse::<f64>().unwrap())
                .collect()
        })
        .collect();
    let ratios: Vec<f64> = rows[1..].iter().map(|r| r[4]).collect();
    for r in &ratios {
        ensure((1.7..=2.3).contains(r), format!("gap ratio {r}"))?;
    }
    for r in &rows {
        ensure(r[2] <= 1e-8, format!("duality residual {}", r[2]))?;
    }
    Ok(format!("gap ratios {:.3}, {:.3}", ratios[0], ratios[1]))
}

fn value_identity() -> Outcome {
    let opts = ClosedLoopOptions::default();
    let one = ControlSetup::new(
        Arc::new(diag(&[1.0])),
        ReferencePotential::quadratic(1.0).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let r1 = closed_loop_value(&one, &v(&[1.0]), 100.0, &opts).map_err(|e| e.to_string())?;
    ensure(
        r1.gap <= 1e-4 && r1.tail_reliable,
        format!("1-D gap {}", r1.gap),
    )?;
    ensure((r1.j - 0.5).abs() <= 1e-4, format!("1-D J = {}", r1.j))?;
    let two = ControlSetup::new(
        Arc::new(diag(&[1.0, 2.0])),
        ReferencePotential::eps_normalized(0.5).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let r2 = closed_loop_value(&two, &v(&[1.0, 1.0]), 100.0, &opts).map_err(|e| e.to_string())?;
    ensure(
        r2.gap <= 1e-4 && r2.tail_reliable,
        format!("eps gap {}", r2.gap),
    )?;
    ensure(
        r1.lower_bound.passed() && r2.lower_bound.passed(),
        "running lower bound violated",
    )?;

    let laws = [
        Perturbation::None,
        Perturbation::Additive {
            amplitude: 0.1,
            rate: 1.0,
            direction: v(&[1.0]),
        },
        Perturbation::Additive {
            amplitude: -0.5,
            rate: 2.0,
            direction: v(&[1.0]),
        },
        Perturbation::Scaled { factor: 2.0 },
        Perturbation::Scaled { factor: 0.5 },
    ];
    let audit = suboptimal_control_audit(&one, &v(&[1.0]), 100.0, &laws, 1e-5, &opts)
        .map_err(|e| e.to_string())?;
    ensure(audit.entry.passed(), format!("audit {:?}", audit.entry))?;
    let measured = audit.runs.iter().filter(|r| r.j.is_some()).count();
    ensure(
        measured == laws.len(),
        format!("only {measured} laws stabilized"),
    )?;
    let laws2 = [
        Perturbation::Additive {
            amplitude: 0.2,
            rate: 1.0,
            direction: v(&[0.0, 1.0]),
        },
        Perturbation::Scaled { factor: 3.0 },
    ];
    let audit2 = suboptimal_control_audit(&two, &v(&[1.0, 1.0]), 100.0, &laws2, 1e-5, &opts)
        .map_err(|e| e.to_string())?;
    ensure(audit2.entry.passed(), format!("audit {:?}", audit2.entry))?;
    Ok(format!(
        "gaps {:.1e}, {:.1e}; min audited J {:.6} >= V0 {:.6}",
        r1.gap,
        r2.gap,
        audit.entry.worst_observed.unwrap(),
        audit.v0
    ))
}

fn determinism_and_exit_codes() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let mut cfg = quadratic_config();
    cfg["outputs"] = serde_json::json!({"json": "a.json"});
    write(d, "a.cfg.json", cfg.clone());
    cfg["outputs"] = serde_json::json!({"json": "b.json"});
    write(d, "b.cfg.json", cfg.clone());
    ensure(
        run_pflow(d, &["certify", "a.cfg.json"]) == 0,
        "full suite did not exit 0",
    )?;
    ensure(
        run_pflow(d, &["certify", "b.cfg.json"]) == 0,
        "second run did not exit 0",
    )?;
    // outputs differ only in the file name, which is part of the hashed config
    let a = std::fs::read_to_string(d.join("a.json")).unwrap();
    let b = std::fs::read_to_string(d.join("b.json")).unwrap();
    let strip = |s: &str| {
        s.lines()
            .filter(|l| !l.contains("config_hash"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    ensure(
        strip(&a) == strip(&b),
        "reports differ beyond the config hash",
    )?;
    let first = std::fs::read(d.join("a.json")).unwrap();
    ensure(
        run_pflow(d, &["certify", "a.cfg.json"]) == 0,
        "repeat run did not exit 0",
    )?;
    ensure(
        first == std::fs::read(d.join("a.json")).unwrap(),
        "repeated certify output differs",
    )?;

    cfg["mu"] = 3.0.into();
    cfg["checks"] = serde_json::json!(["exp-rate", "V-monotone"]);
    cfg["integrator"]["t_end"] = 10.into();
    cfg["outputs"] = serde_json::json!({"json": "mu3.json"});
    write(d, "mu3.cfg.json", cfg.clone());
    ensure(
        run_pflow(d, &["certify", "mu3.cfg.json"]) == 1,
        "mu = 3 did not exit 1",
    )?;
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("mu3.json")).unwrap()).unwrap();
    let failed: Vec<&str> = report["entries"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["status"] == "fail")
        .map(|e| e["claim"].as_str().unwrap())
        .collect();
    ensure(failed == ["exp-rate"], format!("failed claims {failed:?}"))?;

    cfg["checks"] = serde_json::json!([]);
    cfg["outputs"] = serde_json::json!({"json": "empty.json"});
    write(d, "empty.cfg.json", cfg.clone());
    ensure(
        run_pflow(d, &["certify", "empty.cfg.json"]) == 0,
        "empty checks did not exit 0",
    )?;

    cfg["integrator"]["t_end"] = 0.into();
    write(d, "t0.cfg.json", cfg.clone());
    ensure(
        run_pflow(d, &["run", "t0.cfg.json"]) == 2,
        "t_end = 0 did not exit 2",
    )?;

    cfg["integrator"] = serde_json::json!({"method": "npgm", "gamma": 1000.0, "k_max": 20});
    write(d, "big.cfg.json", cfg);
    ensure(
        run_pflow(d, &["run", "big.cfg.json"]) == 3,
        "gamma = 1e3 did not exit 3",
    )?;
    Ok("byte-identical reports; exits 0/1/0/2/3 on full/mu=3/empty/t_end=0/gamma=1e3".to_string())
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("conjugate-pair soundness", conjugate_pairs),
        ("flow correctness oracle", flow_oracle),
        ("Lyapunov monotonicity and rate suite", lyapunov_suite),
        ("energy identity and L2 bound", energy_and_l2),
        ("exponential rate and negative control", exponential_rate),
        ("discrete duality", discrete_duality),
        ("Euler consistency", euler_consistency),
        ("value identity and control audit", value_identity),
        ("determinism and exit codes", determinism_and_exit_codes),
    ];
    // Written to the raw stderr handle so the lines survive output capture.
    let mut err = std::io::stderr();
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let line = match check() {
            Ok(detail) => format!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failures += 1;
                format!("criterion {}: FAIL {name}: {why}", i + 1)
            }
        };
        writeln!(err, "{line}").unwrap();
    }
    assert_eq!(failures, 0, "{failures} acceptance criteria failed");
}
