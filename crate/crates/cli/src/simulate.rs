use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use lookalike::experiment::{
    baseline_comparison, imbalance_sweep, run_experiment, run_trial, BaselineReport, ExperimentConfig,
    ExperimentReport, SweepReport, Trial,
};
use lookalike::forest::decision_grid;
use lookalike::training::bounding_box;
use lookalike::{Embedding, NegativeStrategy, UserBase};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{create_dir, load_embedding, write_file};
use crate::manifest::Manifest;

#[derive(Debug, Clone, Default)]
pub struct SimulateOptions {
    pub only_class: Option<u8>,
    pub baseline_class: Option<u8>,
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub report: ExperimentReport,
    pub baselines: Vec<BaselineReport>,
    pub sweep: Option<SweepReport>,
}

pub fn experiment_config(cfg: &RunConfig, classes: Vec<u8>, n: usize) -> ExperimentConfig {
    ExperimentConfig {
        classes,
        n1: cfg.n1,
        n0: cfg.negatives(),
        strategy: cfg.strategy,
        repetitions: cfg.repetitions,
        k: cfg.k.resolve(n),
        master_seed: cfg.seed,
        padding: cfg.padding,
        forest: cfg.forest.clone(),
    }
}

/// `id,c0,c1,label,role,score` for every user of a trial, `role` one of
/// `seed`, `selected` or `pool`.
fn write_scatter<W: Write>(mut w: W, base: &UserBase, emb: &Embedding, trial: &Trial) -> lookalike::Result<()> {
    let scores: HashMap<u64, f64> = trial.expansion.ranked.iter().copied().collect();
    let selected: HashSet<u64> = trial.expansion.audience.iter().copied().collect();
    let labels = base.labels().unwrap_or(&[]);
    writeln!(w, "id,c0,c1,label,role,score")?;
    for (r, &id) in emb.ids().iter().enumerate() {
        let p = emb.point(r);
        let role = if trial.seed.contains(id) {
            "seed"
        } else if selected.contains(&id) {
            "selected"
        } else {
            "pool"
        };
        let score = scores.get(&id).map(|s| s.to_string()).unwrap_or_default();
        let label = labels.get(r).map(|l| l.to_string()).unwrap_or_default();
        writeln!(w, "{id},{},{},{label},{role},{score}", p[0], p.get(1).unwrap_or(&0.0))?;
    }
    Ok(())
}

/// Training set, decision grid, and top-k scatter of one trial.
fn export_trial(
    dir: &Path,
    prefix: &str,
    base: &UserBase,
    emb: &Embedding,
    trial: &Trial,
    cfg: &RunConfig,
) -> CliResult<Vec<String>> {
    let mut files = vec![write_file(dir, &format!("{prefix}_training.csv"), |w| trial.training.write_csv(w))?];
    if emb.dim() == 2 {
        let bbox = bounding_box(emb.coords(), cfg.padding)?;
        let grid = decision_grid(&trial.model, &bbox, cfg.grid_resolution)?;
        files.push(write_file(dir, &format!("{prefix}_grid.csv"), |w| grid.write_csv(w))?);
        files.push(write_file(dir, &format!("{prefix}_topk.csv"), |w| {
            write_scatter(w, base, emb, trial)
        })?);
    }
    Ok(files.into_iter().map(|f| format!("figures/{f}")).collect())
}

/// Runs the configured experiment, the optional counter-class baseline and
/// imbalance sweep, and exports plot data for the first seed class.
pub fn cmd_simulate(cfg: &RunConfig, opts: &SimulateOptions) -> CliResult<SimulateOutcome> {
    let out = cfg.out_dir();
    let figures = out.join("figures");
    let mut manifest = Manifest::new("simulate", cfg);

    let (emb, labels) = manifest.time("load", || load_embedding(cfg))?;
    let labels = labels.ok_or_else(|| CliError::Data("simulation needs a label column in the embedding".into()))?;
    let base = UserBase::new(emb.ids().to_vec(), emb.coords().clone(), Some(labels))?;

    let classes = match opts.only_class {
        Some(c) => vec![c],
        None => cfg.classes.clone(),
    };
    let exp = experiment_config(cfg, classes, base.len());
    let report = manifest.time("experiment", || run_experiment(&base, &emb, &exp))?;
    let seed_classes: Vec<u8> = report.class_means().iter().map(|m| m.class).collect();

    create_dir(&out)?;
    let mut outputs = vec![
        write_file(&out, "report.csv", |w| report.write_csv(w))?,
        write_file(&out, "summary.json", |w| {
            serde_json::to_writer_pretty(&mut *w, &report.summary_json())?;
            writeln!(w)?;
            Ok(())
        })?,
    ];

    let first = seed_classes[0];
    let trial = run_trial(&base, &emb, &exp, first, 0, exp.strategy, exp.n0)?;
    outputs.extend(export_trial(&figures, &format!("class{first}_{}", exp.strategy.name()), &base, &emb, &trial, cfg)?);

    let mut baselines = Vec::new();
    if let Some(counter) = opts.baseline_class.or(cfg.baseline_class) {
        let start = std::time::Instant::now();
        for &c in seed_classes.iter().filter(|&&c| c != counter) {
            let rep = baseline_comparison(&base, &emb, &exp, c, counter)?;
            let t = run_trial(&base, &emb, &exp, c, 0, NegativeStrategy::CounterClass(counter), exp.n0)?;
            outputs.extend(export_trial(&figures, &format!("class{c}_counter{counter}"), &base, &emb, &t, cfg)?);
            baselines.push(rep);
        }
        manifest.timings_secs.insert("baseline".into(), start.elapsed().as_secs_f64());
        outputs.push(write_file(&out, "baseline.csv", |w| {
            let rows: Vec<_> = baselines.iter().flat_map(|b| b.uniform.iter().chain(&b.counter)).cloned().collect();
            lookalike::experiment::write_rows_csv(w, &rows)
        })?);
        let means: Vec<_> = baselines
            .iter()
            .map(|b| {
                let (u, c) = b.mean_precision();
                serde_json::json!({ "class": b.class, "counter_class": b.counter_class, "uniform_p_at_k": u, "counter_p_at_k": c })
            })
            .collect();
        manifest.detail("baseline", means);
    }

    let mut sweep = None;
    if !cfg.sweep_ratios.is_empty() {
        let class = cfg.sweep_class.unwrap_or(first);
        let rep = manifest.time("sweep", || {
            imbalance_sweep(&base, &emb, &exp, class, &cfg.sweep_ratios, cfg.grid_resolution)
        })?;
        outputs.push(write_file(&out, "sweep.csv", |w| rep.write_csv(w))?);
        for &ratio in &cfg.sweep_ratios {
            let n0 = lookalike::experiment::negatives_for_ratio(exp.n1, ratio)?;
            let t = run_trial(&base, &emb, &exp, class, 0, NegativeStrategy::Uniform, n0)?;
            outputs.extend(export_trial(&figures, &format!("class{class}_ratio{ratio}"), &base, &emb, &t, cfg)?);
        }
        sweep = Some(rep);
    }

    let (p, r) = report.global_means();
    manifest.detail("global_p_at_k", p);
    manifest.detail("global_r_at_k", r);
    manifest.detail("rows", report.rows.len());
    manifest.detail(
        "rng_derivation",
        "splitmix64(master, [class, repetition, stream]); streams 0 seed sample, 1 negatives, 2 forest",
    );
    manifest.outputs.append(&mut outputs);
    manifest.write(&out)?;

    for m in report.class_means() {
        println!("class {}: P@k {:.4} R@k {:.4} over {} repetitions", m.class, m.p_at_k, m.r_at_k, m.repetitions);
    }
    println!("overall: P@k {p:.4} R@k {r:.4}");
    for b in &baselines {
        let (u, c) = b.mean_precision();
        println!("class {} vs counter class {}: uniform P@k {u:.4}, counter P@k {c:.4}", b.class, b.counter_class);
    }
    Ok(SimulateOutcome {
        report,
        baselines,
        sweep,
    })
}
