use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fgflow::flow::TRACE_HEADER;
use fgflow::io::{read_dataset, read_measure, read_moments, write_labels_csv, write_measure, write_moments};
use fgflow::lifting::{class_moments, fit_embedding, lift_dataset, ClassMoments};
use fgflow::mmd::{dissipation, loss, mmd_squared};
use fgflow::scenario::{agreement, build_instance, nearest_target_labels, MixtureScenario};
use fgflow::transport::{project_labels_knn, project_labels_lp};
use fgflow::{EmpiricalMeasure, FlowConfig, FlowEngine, FlowState, KernelParams};
use serde_json::json;

use crate::config::{LabelMethod, RunConfig, UsageFailure};

pub fn out_dir(out: &Option<PathBuf>) -> Result<PathBuf> {
    let Some(dir) = out else {
        anyhow::bail!(UsageFailure("missing required --out <dir>".into()));
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.clone())
}

fn load_measure(path: &Path) -> Result<EmpiricalMeasure<f64>> {
    read_measure(path).with_context(|| format!("reading measure {}", path.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn lift(c: &RunConfig, out: &Path) -> Result<()> {
    let path = c.require(&c.dataset, "dataset")?;
    let data = read_dataset::<f64>(path).with_context(|| format!("reading dataset {}", path.display()))?;
    let n = c.embedding_dim.unwrap_or(data.m());
    let emb = fit_embedding(&data, c.embedding.into(), n)?;
    let moments = class_moments(&data, &emb, c.reg_eps)?;
    let measure = lift_dataset(&data, &moments)?;
    c.write(out)?;
    write_measure(&out.join("measure.jsonl"), &measure)?;
    write_moments(&out.join("moments.jsonl"), &moments)?;
    let rows: Vec<Vec<f64>> = emb.projection.row_iter().map(|r| r.iter().copied().collect()).collect();
    write_json(
        &out.join("embedding.json"),
        &json!({
            "kind": emb.kind,
            "projection": rows,
            "center": emb.center.iter().copied().collect::<Vec<_>>(),
            "rank_deficient": emb.rank_deficient,
        }),
    )
}

/// Streams trace rows to `trace.csv` (flushed per row) and measure snapshots
/// to `snapshots/`, returning the final measure and the MMD² sequence with
/// the final value appended.
fn drive(
    p: &KernelParams<f64>,
    target: &EmpiricalMeasure<f64>,
    flow: &FlowConfig<f64>,
    rho0: EmpiricalMeasure<f64>,
    snapshot_every: usize,
    out: &Path,
) -> Result<(EmpiricalMeasure<f64>, Vec<f64>)> {
    rho0.same_shape(target)?;
    let engine = FlowEngine::new(p, target, flow)?;
    let mut trace = BufWriter::new(File::create(out.join("trace.csv"))?);
    writeln!(trace, "{TRACE_HEADER}")?;
    trace.flush()?;
    let snapshots = out.join("snapshots");
    let snapshot = |tau: usize, m: &EmpiricalMeasure<f64>| -> Result<()> {
        if snapshot_every > 0 && tau % snapshot_every == 0 {
            std::fs::create_dir_all(&snapshots)?;
            write_measure(&snapshots.join(format!("step_{tau:06}.jsonl")), m)?;
        }
        Ok(())
    };
    snapshot(0, &rho0)?;
    let mut state = FlowState::new(rho0, flow);
    let mut values = Vec::with_capacity(flow.iterations + 1);
    for tau in 0..flow.iterations {
        let (next, row) = engine.step(&state, flow.step_at(tau), flow.noise_at(tau))?;
        writeln!(trace, "{}", row.csv_line())?;
        trace.flush()?;
        values.push(row.mmd2);
        state = next;
        snapshot(tau + 1, &state.measure)?;
    }
    values.push(engine.mmd_squared(&state.measure)?);
    Ok((state.measure, values))
}

pub fn flow(c: &RunConfig, out: &Path) -> Result<()> {
    let source = load_measure(c.require(&c.source, "source")?)?;
    let target = load_measure(c.require(&c.target, "target")?)?;
    let p = c.kernel()?;
    let f = c.flow()?;
    c.write(out)?;
    let (last, _) = drive(&p, &target, &f, source, c.snapshot_every, out)?;
    write_measure(&out.join("final.jsonl"), &last)?;
    Ok(())
}

fn labels_for(c: &RunConfig, measure: &EmpiricalMeasure<f64>, moments: Option<&ClassMoments<f64>>, target: Option<&EmpiricalMeasure<f64>>) -> Result<Vec<String>> {
    match c.label_method {
        LabelMethod::Lp => {
            let derived;
            let moments = match (moments, target) {
                (Some(m), _) => m,
                (None, Some(t)) => {
                    derived = ClassMoments::from_labeled_measure(t)?;
                    &derived
                }
                (None, None) => anyhow::bail!(UsageFailure("lp projection needs --moments or --target".into())),
            };
            Ok(project_labels_lp(measure, moments)?)
        }
        LabelMethod::Knn => {
            let Some(target) = target else {
                anyhow::bail!(UsageFailure("knn projection needs --target".into()));
            };
            Ok(project_labels_knn(measure, target, c.knn_k)?)
        }
    }
}

pub fn project(c: &RunConfig, out: &Path) -> Result<()> {
    let measure = load_measure(c.require(&c.measure, "measure")?)?;
    let moments = match &c.moments {
        Some(p) => Some(read_moments::<f64>(p).with_context(|| format!("reading moments {}", p.display()))?),
        None => None,
    };
    let target = match &c.target {
        Some(p) => Some(load_measure(p)?),
        None => None,
    };
    let labels = labels_for(c, &measure, moments.as_ref(), target.as_ref())?;
    c.write(out)?;
    write_labels_csv(File::create(out.join("labels.csv"))?, &labels)?;
    Ok(())
}

pub fn mixture_demo(c: &RunConfig, scenario: MixtureScenario, out: &Path) -> Result<()> {
    let p = c.kernel()?;
    let f = c.flow()?;
    let inst = build_instance::<f64>(scenario, c.seed)?;
    c.write(out)?;
    write_measure(&out.join("source.jsonl"), &inst.source)?;
    write_measure(&out.join("target.jsonl"), &inst.target)?;
    write_moments(&out.join("target_moments.jsonl"), &inst.target_moments)?;
    let (last, values) = drive(&p, &inst.target, &f, inst.source.clone(), c.snapshot_every, out)?;
    write_measure(&out.join("final.jsonl"), &last)?;
    let labels = labels_for(c, &last, Some(&inst.target_moments), Some(&inst.target))?;
    write_labels_csv(File::create(out.join("labels.csv"))?, &labels)?;

    let nearest = nearest_target_labels(&last, &inst.target)?;
    let source_labels = inst.source.labels().unwrap_or_default();
    let mut modes = std::collections::BTreeMap::<&str, std::collections::BTreeSet<&str>>::new();
    for (s, y) in source_labels.iter().zip(&labels) {
        modes.entry(s).or_default().insert(y);
    }
    let groups: std::collections::BTreeSet<&str> = labels.iter().map(String::as_str).collect();
    let (initial, fin) = (values[0], values[values.len() - 1]);
    let summary = json!({
        "scenario": scenario,
        "seed": c.seed,
        "initial_mmd2": initial,
        "final_mmd2": fin,
        "ratio": fin / initial,
        "agreement_with_nearest": agreement(&labels, &nearest),
        "label_groups": groups.len(),
        "labels_per_source_mode": modes.iter().map(|(k, v)| (k.to_string(), v.len())).collect::<std::collections::BTreeMap<_, _>>(),
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

pub fn eval(c: &RunConfig, out: Option<&Path>) -> Result<()> {
    let measure = load_measure(c.require(&c.measure, "measure")?)?;
    let target = load_measure(c.require(&c.target, "target")?)?;
    let p = c.kernel()?;
    let report = json!({
        "mmd2": mmd_squared(&p, &measure, &target)?,
        "loss": loss(&p, &measure, &target)?,
        "dissipation": dissipation(&p, &measure, &target)?,
    });
    println!("{}", serde_json::to_string(&report)?);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        c.write(dir)?;
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(())
}
