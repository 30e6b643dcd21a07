//! CSV output of trajectory channels.

use std::path::Path;

use precond_flow::certify::{cumulative_trapezoid, Channels};
use precond_flow::integrate::{Trajectory, TrajectoryKind};
use precond_flow::{Objective, ReferencePotential};

/// Column order of trajectory tables.
pub const TRAJECTORY_HEADER: [&str; 9] = [
    "t",
    "f_gap",
    "conj_grad_channel",
    "V",
    "W",
    "dist_to_min",
    "grad_norm",
    "xdot_norm",
    "q_running",
];

/// Scientific notation with `digits` significant digits.
pub fn fmt_float(x: f64, digits: usize) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{:.*e}", digits.saturating_sub(1), x)
    }
}

/// One row per recorded sample, columns as in [`TRAJECTORY_HEADER`].
///
/// `f_gap` uses `f⋆` when known and `f(x(T))` otherwise; `q_running` is the
/// running integral of `φ*(∇f) + φ(∇φ*(∇f))` and is only filled for flows.
pub fn trajectory_rows(
    traj: &Trajectory,
    o: &dyn Objective,
    p: &ReferencePotential,
) -> Vec<[f64; 9]> {
    let c = Channels::compute(traj, o, p);
    let n = c.times.len();
    if n == 0 {
        return Vec::new();
    }
    let f_ref = c.f_star.unwrap_or(c.f[n - 1]);
    let v = c.v_channel();
    let w = c.w_channel();
    let q_running = match traj.kind {
        TrajectoryKind::Flow => {
            let q: Vec<f64> = c.conj.iter().zip(&c.phi_pre).map(|(a, b)| a + b).collect();
            Some(cumulative_trapezoid(&c.times, &q))
        }
        TrajectoryKind::Discrete { .. } => None,
    };
    (0..n)
        .map(|i| {
            [
                c.times[i],
                c.f[i] - f_ref,
                c.conj[i],
                v[i],
                w.as_ref().map_or(f64::NAN, |w| w[i]),
                c.dist.as_ref().map_or(f64::NAN, |d| d[i]),
                c.grad_norm[i],
                c.xdot_norm[i],
                q_running.as_ref().map_or(f64::NAN, |q| q[i]),
            ]
        })
        .collect()
}

pub fn write_table<R: AsRef<[f64]>>(
    path: &Path,
    header: &[&str],
    rows: &[R],
    digits: usize,
) -> Result<(), csv::Error> {
    write_table_with_prefix(
        path,
        &[],
        header,
        rows.iter().map(|r| (Vec::new(), r.as_ref())),
        digits,
    )
}

/// Like [`write_table`], with leading text columns on every row.
pub fn write_table_with_prefix<'a>(
    path: &Path,
    prefix_header: &[&str],
    header: &[&str],
    rows: impl Iterator<Item = (Vec<String>, &'a [f64])>,
    digits: usize,
) -> Result<(), csv::Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(prefix_header.iter().chain(header))?;
    for (prefix, row) in rows {
        w.write_record(
            prefix
                .into_iter()
                .chain(row.iter().map(|x| fmt_float(*x, digits))),
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_has_requested_digits() {
        assert_eq!(fmt_float(0.1, 17), "1.0000000000000001e-1");
        assert_eq!(fmt_float(-2.5, 3), "-2.50e0");
        assert_eq!(fmt_float(f64::NAN, 17), "NaN");
        assert_eq!(fmt_float(f64::INFINITY, 17), "inf");
        let back: f64 = fmt_float(std::f64::consts::PI, 17).parse().unwrap();
        assert_eq!(back, std::f64::consts::PI);
    }
}
