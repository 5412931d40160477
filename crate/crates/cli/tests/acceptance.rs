//! End-to-end acceptance run. Prints one PASS/FAIL/SKIP line per criterion
//! and exits nonzero when any criterion fails.
//!
//! `LOOKALIKE_FULL_EMBEDDING` may name a precomputed embedding CSV (ids,
//! coordinates and labels) of the full 70,000-digit corpus to enable the
//! full-scale check.

use std::path::{Path, PathBuf};
use std::time::Instant;

use lookalike::expand;
use lookalike::fixtures::gaussian_clusters;
use lookalike::metrics::{precision_at_k, recall_at_k, EvalCase};
use lookalike::oracle::{decision_thresholds, uniform_regime, univariate_checks};
use lookalike::tsne::{conditional_affinities, neighborhood_preservation, row_perplexities, run_tsne};
use lookalike::TsneConfig;
use lookalike_cli::config::TopKSpec;
use lookalike_cli::embed::cmd_embed;
use lookalike_cli::oracle::{run_fixture, MIN_AGREEMENT};
use lookalike_cli::simulate::{cmd_simulate, SimulateOptions};
use lookalike_cli::RunConfig;
use rand::seq::SliceRandom;
use rand::Rng;

const DESK_BUDGET_SECS: f64 = 15.0 * 60.0;
const DESK_MIN: f64 = 0.75;
const BASELINE_CLASS: u8 = 8;
const COUNTER_CLASS: u8 = 0;
const BASELINE_MARGIN: f64 = 0.15;
const FULL_P: f64 = 0.90;
const FULL_R: f64 = 0.93;
const FULL_TOL: f64 = 0.07;

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Suite {
    failed: usize,
    passed: usize,
    skipped: usize,
}

impl Suite {
    fn report(&mut self, name: &str, verdict: Verdict, detail: impl AsRef<str>) {
        let tag = match verdict {
            Verdict::Pass => {
                self.passed += 1;
                "PASS"
            }
            Verdict::Fail => {
                self.failed += 1;
                "FAIL"
            }
            Verdict::Skip => {
                self.skipped += 1;
                "SKIP"
            }
        };
        println!("{tag} {name}: {}", detail.as_ref());
    }

    fn check(&mut self, name: &str, ok: bool, detail: impl AsRef<str>) {
        self.report(name, if ok { Verdict::Pass } else { Verdict::Fail }, detail);
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&workspace_root().join("configs/desk.conf")).expect("desk config");
    cfg.out = out.to_string_lossy().into_owned();
    cfg
}

fn desk(suite: &mut Suite) {
    let tmp = tempfile::TempDir::new().unwrap();
    let first = tmp.path().join("first");
    let mut cfg = desk_config(&first);
    cfg.baseline_class = Some(COUNTER_CLASS);
    let start = Instant::now();

    let embedded = match cmd_embed(&cfg) {
        Ok(e) => e,
        Err(e) => {
            for name in ["desk_precision_recall", "baseline_contrast", "imbalance_shift", "determinism"] {
                suite.check(name, false, format!("embedding failed: {e}"));
            }
            return;
        }
    };
    let embed_secs = start.elapsed().as_secs_f64();
    let sim = cmd_simulate(&cfg, &SimulateOptions::default()).expect("desk simulation");
    let total = start.elapsed().as_secs_f64();

    let (p, r) = sim.report.global_means();
    let k = match cfg.k {
        TopKSpec::Absolute(k) => k.to_string(),
        other => other.to_string(),
    };
    suite.check(
        "desk_precision_recall",
        p >= DESK_MIN && r >= DESK_MIN && total <= DESK_BUDGET_SECS,
        format!(
            "N={} n1={} n0={} k={k} reps={}: mean P@k {p:.4}, R@k {r:.4} (need >= {DESK_MIN}); \
             embed {embed_secs:.0}s, total {total:.0}s on {} threads (budget {DESK_BUDGET_SECS:.0}s)",
            embedded.embedding.len(),
            cfg.n1,
            cfg.negatives(),
            cfg.repetitions,
            rayon::current_num_threads(),
        ),
    );
    for m in sim.report.class_means() {
        println!("    digit {}: P@k {:.4} R@k {:.4}", m.class, m.p_at_k, m.r_at_k);
    }

    match sim.baselines.iter().find(|b| b.class == BASELINE_CLASS) {
        Some(b) => {
            let (u, c) = b.mean_precision();
            suite.check(
                "baseline_contrast",
                u - c >= BASELINE_MARGIN,
                format!(
                    "seed {BASELINE_CLASS}, counter {COUNTER_CLASS}: uniform P@k {u:.4}, counter P@k {c:.4}, \
                     difference {:.4} (need >= {BASELINE_MARGIN})",
                    u - c
                ),
            );
        }
        None => suite.check("baseline_contrast", false, "no baseline run for the seed class"),
    }

    match &sim.sweep {
        Some(sweep) => {
            let ratios = &cfg.sweep_ratios;
            let (lo, hi) = match (ratios.iter().position(|&q| q == 1.0), ratios.iter().position(|&q| q == 3.0)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    suite.check("imbalance_shift", false, "sweep must include ratios 1 and 3");
                    return;
                }
            };
            let counts: Vec<Vec<usize>> = (0..cfg.repetitions).map(|rep| sweep.region_counts(rep)).collect();
            let larger = counts.iter().filter(|c| c[hi] > c[lo]).count();
            suite.check(
                "imbalance_shift",
                larger >= 4 && cfg.repetitions == 5,
                format!(
                    "digit {}: 0.5-region lattice counts (ratio 1 -> 3) {:?}; larger at ratio 3 in {larger}/{} (need >= 4/5)",
                    sweep.class,
                    counts.iter().map(|c| (c[lo], c[hi])).collect::<Vec<_>>(),
                    cfg.repetitions
                ),
            );
        }
        None => suite.check("imbalance_shift", false, "no sweep configured"),
    }

    let second = tmp.path().join("second");
    let mut again = desk_config(&second);
    again.baseline_class = Some(COUNTER_CLASS);
    again.embedding = Some(first.join("embedding.csv").to_string_lossy().into_owned());
    cmd_simulate(&again, &SimulateOptions::default()).expect("second simulation");
    let a = std::fs::read(first.join("report.csv")).unwrap();
    let b = std::fs::read(second.join("report.csv")).unwrap();
    suite.check(
        "determinism",
        a == b,
        format!("report.csv {} bytes vs {} bytes, identical: {}", a.len(), b.len(), a == b),
    );
}

fn full_scale(suite: &mut Suite) {
    let Some(path) = std::env::var_os("LOOKALIKE_FULL_EMBEDDING") else {
        suite.report("full_scale", Verdict::Skip, "LOOKALIKE_FULL_EMBEDDING is not set");
        return;
    };
    let tmp = tempfile::TempDir::new().unwrap();
    let cfg = RunConfig {
        embedding: Some(PathBuf::from(path).to_string_lossy().into_owned()),
        n1: 250,
        n0: Some(250),
        k: TopKSpec::Absolute(7000),
        repetitions: 30,
        out: tmp.path().to_string_lossy().into_owned(),
        ..RunConfig::default()
    };
    match cmd_simulate(&cfg, &SimulateOptions::default()) {
        Ok(sim) => {
            let (p, r) = sim.report.global_means();
            suite.check(
                "full_scale",
                (p - FULL_P).abs() <= FULL_TOL && (r - FULL_R).abs() <= FULL_TOL,
                format!("mean P@k {p:.4} (target {FULL_P} +- {FULL_TOL}), R@k {r:.4} (target {FULL_R} +- {FULL_TOL})"),
            );
        }
        Err(e) => suite.check("full_scale", false, format!("{e}")),
    }
}

fn oracle_suite(suite: &mut Suite) {
    let checks = univariate_checks();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();

    // roots of f = g for N(3, 1) against U(-6, 12) with equal class sizes
    let half_width = (2.0 * (18.0 / (2.0 * std::f64::consts::PI).sqrt()).ln()).sqrt();
    let expected = [3.0 - half_width, 3.0 + half_width];
    let roots = decision_thresholds(&uniform_regime(1.0, 1.0));
    let closed_form = roots.len() == 2 && roots.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-6);

    suite.check(
        "oracle_suite",
        failed.is_empty() && closed_form,
        format!(
            "{}/{} identity checks pass{}; roots {roots:?} vs closed form {expected:?}",
            checks.len() - failed.len(),
            checks.len(),
            if failed.is_empty() { String::new() } else { format!(" (failed: {})", failed.join(", ")) },
        ),
    );
}

fn kde_agreement(suite: &mut Suite) {
    let cfg = RunConfig::default();
    match run_fixture(&cfg) {
        Ok((a, _, _)) => suite.check(
            "kde_agreement",
            a.rank_correlation >= MIN_AGREEMENT,
            format!(
                "Spearman {:.4} over {} probes (need >= {MIN_AGREEMENT}); training accuracy {:.4}, bandwidth {:.4}",
                a.rank_correlation, a.probes, a.training_accuracy, a.bandwidth
            ),
        ),
        Err(e) => suite.check("kde_agreement", false, format!("{e}")),
    }
}

fn expansion_optimality(suite: &mut Suite) {
    let mut rng = lookalike::rng::seeded(404);
    let (mut cases, mut optimal) = (0, 0);
    for _ in 0..200 {
        let mut ids: Vec<u64> = (0..100).collect();
        ids.shuffle(&mut rng);
        let scores: Vec<(u64, f64)> = ids[..12]
            .iter()
            .map(|&id| (id, f64::from(rng.random_range(0..=32u32)) / 32.0))
            .collect();
        for m in 1..=5 {
            cases += 1;
            let best = (0u32..1 << 12)
                .filter(|s| s.count_ones() as usize == m)
                .map(|s| (0..12).filter(|i| s >> i & 1 == 1).map(|i| scores[i].1).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            let got = expand(&scores, m).map(|r| r.audience_score());
            if got.map(|g| g == best).unwrap_or(false) {
                optimal += 1;
            }
        }
    }
    suite.check(
        "expansion_optimality",
        optimal == cases,
        format!("{optimal}/{cases} selections attain the exhaustive maximum"),
    );
}

fn tsne_quality(suite: &mut Suite) {
    let x = gaussian_clusters(3, 50, 10, 20.0, 1.0, 0);
    let cfg = TsneConfig::default();
    let out = run_tsne(&x, &cfg).expect("t-SNE on the cluster fixture");
    let np = neighborhood_preservation(&x, &out.coords, 10).unwrap();
    let p = conditional_affinities(&x, cfg.perplexity).unwrap();
    let worst = row_perplexities(&p)
        .into_iter()
        .map(|h| (h - cfg.perplexity).abs())
        .fold(0.0, f64::max);
    suite.check(
        "tsne_quality",
        out.meta.final_kl < out.meta.initial_kl && np >= 0.95 && worst < 1e-5,
        format!(
            "KL {:.4} -> {:.4}; neighborhood preservation (k=10) {np:.4} (need >= 0.95); \
             worst perplexity error {worst:.2e} (need < 1e-5)",
            out.meta.initial_kl, out.meta.final_kl
        ),
    );
}

fn metric_identities(suite: &mut Suite) {
    let mut rng = lookalike::rng::seeded(1000);
    let mut bad = 0;
    let mut equal_k = 0;
    for _ in 0..1000 {
        let universe = rng.random_range(2..400u64);
        let mut ids: Vec<u64> = (0..universe).collect();
        ids.shuffle(&mut rng);
        let t = rng.random_range(1..=universe as usize);
        let a_true: Vec<u64> = ids[..t].to_vec();
        ids.shuffle(&mut rng);
        let k = if rng.random_bool(0.3) { t } else { rng.random_range(1..=universe as usize) };
        let case = EvalCase::new(a_true, ids[..k].to_vec()).unwrap();
        let (pr, rr) = (case.precision_ratio(), case.recall_ratio());
        let k = case.k() as u64;
        let t = case.true_count() as u64;
        // P*k == R*|A_true| as rationals, cross-multiplied
        if pr.numer() * k * rr.denom() != rr.numer() * t * pr.denom() {
            bad += 1;
        }
        if k == t {
            equal_k += 1;
            if precision_at_k(&case) != recall_at_k(&case) || pr != rr {
                bad += 1;
            }
        }
    }
    suite.check(
        "metric_identities",
        bad == 0 && equal_k > 0,
        format!("1000 cases ({equal_k} with k = |A_true|), {bad} violations"),
    );
}

fn main() {
    let mut suite = Suite {
        failed: 0,
        passed: 0,
        skipped: 0,
    };
    oracle_suite(&mut suite);
    metric_identities(&mut suite);
    expansion_optimality(&mut suite);
    tsne_quality(&mut suite);
    kde_agreement(&mut suite);
    full_scale(&mut suite);
    desk(&mut suite);
    println!(
        "acceptance: {} passed, {} failed, {} skipped",
        suite.passed, suite.failed, suite.skipped
    );
    if suite.failed > 0 {
        std::process::exit(1);
    }
}
