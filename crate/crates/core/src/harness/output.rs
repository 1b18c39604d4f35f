use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{plant, ExperimentConfig, HarnessError, RunTrace};
use crate::plant::TransitionBatch;

/// Schema version written as the first comment line of every `.dat` file.
pub const SCHEMA_VERSION: u32 = 1;

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn num(x: f64) -> String {
    format!("{x:.17e}")
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn trajectories_dat(batch: &TransitionBatch<f64>) -> String {
    let mut out = format!("# v{SCHEMA_VERSION} rollout time s0 s1\n");
    for (i, r) in batch.rollouts.iter().enumerate() {
        for (k, t) in r.iter().enumerate() {
            let _ = writeln!(out, "{i} {k} {} {}", num(t.s[0]), num(t.s[1]));
        }
        if let Some(t) = r.last() {
            let _ = writeln!(
                out,
                "{i} {} {} {}",
                r.len(),
                num(t.s_plus[0]),
                num(t.s_plus[1])
            );
        }
        out.push_str("\n\n");
    }
    out
}

fn residuals_dat(batch: &TransitionBatch<f64>, theta: &crate::mpc::ThetaParams<f64>) -> String {
    let mut out = format!("# v{SCHEMA_VERSION} r0 r1 (s+ - F0(s, a))\n");
    for t in batch.transitions() {
        let r = &t.s_plus - theta.nominal_step(&t.s, &t.a);
        let _ = writeln!(out, "{} {}", num(r[0]), num(r[1]));
    }
    out
}

fn polytope_dat(theta: &crate::mpc::ThetaParams<f64>) -> String {
    let mut out = format!("# v{SCHEMA_VERSION} w0 w1 (closed polygon)\n");
    let v = &theta.w.vertices;
    for p in v.iter().chain(v.first()) {
        let _ = writeln!(out, "{} {}", num(p[0]), num(p[1]));
    }
    out
}

/// Writes the CSV traces, gnuplot data files and, if `error` is set, a
/// `failure.toml` bundle with the configuration and the last parameters.
pub fn write_artifacts(
    dir: &Path,
    config: &ExperimentConfig,
    trace: &RunTrace,
    error: Option<&HarnessError>,
) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let steps = trace.j_mean.len();

    let rows: Vec<_> = (0..steps)
        .map(|i| vec![i.to_string(), num(trace.j_mean[i]), num(trace.j_std[i])])
        .collect();
    write_csv(
        &dir.join("rl_trace.csv"),
        &header(&["step", "j_mean", "j_std"]),
        &rows,
    )?;

    if let Some(th0) = trace.thetas.first() {
        let layout = th0.layout();
        let mut h = vec!["step".to_string()];
        h.extend(layout.names());
        let rows: Vec<_> = trace
            .thetas
            .iter()
            .enumerate()
            .map(|(i, th)| {
                let mut r = vec![i.to_string()];
                r.extend(th.flatten().iter().map(|&x| num(x)));
                r
            })
            .collect();
        write_csv(&dir.join("theta_trace.csv"), &h, &rows)?;

        let p = plant(config);
        let rows: Vec<_> = trace
            .thetas
            .iter()
            .enumerate()
            .map(|(i, th)| {
                vec![
                    i.to_string(),
                    num((&th.a0 - &p.a_real).norm()),
                    num((&th.b0 - &p.b_real).norm()),
                    num(th.bias.norm()),
                ]
            })
            .collect();
        write_csv(
            &dir.join("model_gap.csv"),
            &header(&["step", "a0_gap_fro", "b0_gap_fro", "bias_norm"]),
            &rows,
        )?;

        let mut h = vec!["step".to_string()];
        h.extend(layout.names().into_iter().filter(|n| n.starts_with('W')));
        let rows: Vec<_> = trace
            .thetas
            .iter()
            .enumerate()
            .map(|(i, th)| {
                let mut r = vec![i.to_string()];
                for v in &th.w.vertices {
                    r.extend(v.iter().map(|&x| num(x)));
                }
                r
            })
            .collect();
        write_csv(&dir.join("polytope_trace.csv"), &h, &rows)?;

        let rows: Vec<_> = trace
            .thetas
            .iter()
            .enumerate()
            .map(|(i, th)| vec![i.to_string(), num((&th.k - &th0.k).norm())])
            .collect();
        write_csv(
            &dir.join("feedback_trace.csv"),
            &header(&["step", "k_change_fro"]),
            &rows,
        )?;
    }

    let rows: Vec<_> = trace
        .safety
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                r.retained.to_string(),
                r.outside_before_update.to_string(),
                r.membership_violations.to_string(),
                num(r.max_membership_violation),
                r.state_violations.to_string(),
                num(r.max_state_norm),
            ]
        })
        .collect();
    write_csv(
        &dir.join("safety_report.csv"),
        &header(&[
            "step",
            "retained",
            "outside_before_update",
            "membership_violations",
            "max_membership_violation",
            "state_violations",
            "max_state_norm",
        ]),
        &rows,
    )?;

    let mut j = format!("# v{SCHEMA_VERSION} step j_mean j_std\n");
    for i in 0..steps {
        let _ = writeln!(j, "{i} {} {}", num(trace.j_mean[i]), num(trace.j_std[i]));
    }
    fs::write(dir.join("j.dat"), j)?;
    for (tag, batch, theta) in [
        ("first", &trace.first_batch, trace.thetas.first()),
        ("last", &trace.last_batch, trace.thetas.last()),
    ] {
        if let (Some(b), Some(th)) = (batch, theta) {
            fs::write(
                dir.join(format!("trajectories_{tag}.dat")),
                trajectories_dat(b),
            )?;
            fs::write(
                dir.join(format!("residuals_{tag}.dat")),
                residuals_dat(b, th),
            )?;
            fs::write(dir.join(format!("polytope_{tag}.dat")), polytope_dat(th))?;
        }
    }

    if let Some(e) = error {
        let mut bundle = toml::Table::new();
        bundle.insert("error".into(), toml::Value::String(e.to_string()));
        bundle.insert(
            "exit_code".into(),
            toml::Value::Integer(e.exit_code().into()),
        );
        if let Some(th) = trace.thetas.last() {
            let flat: Vec<toml::Value> = th
                .flatten()
                .iter()
                .map(|&x| toml::Value::Float(x))
                .collect();
            bundle.insert("theta".into(), toml::Value::Array(flat));
        }
        bundle.insert(
            "config".into(),
            toml::Value::try_from(config).expect("serializable"),
        );
        fs::write(
            dir.join("failure.toml"),
            toml::to_string(&bundle).expect("serializable"),
        )?;
    }
    Ok(())
}
