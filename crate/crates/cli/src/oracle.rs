use std::io::Write;

use lookalike::fixtures::seed_map_fixture;
use lookalike::forest::{fit, grid_with};
use lookalike::oracle::{
    fixture_agreement, kde_posterior, univariate_checks, CheckOutcome, FixtureAgreement, KdeOracle,
    SEED_REGION_PADDING,
};
use lookalike::rng::derive_seed;
use lookalike::training::bounding_box;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{create_dir, write_file};
use crate::manifest::Manifest;

pub const STREAM_ORACLE: u64 = 104;
pub const FIXTURE_N1: usize = 250;
pub const FIXTURE_N0: usize = 250;
pub const MIN_AGREEMENT: f64 = 0.9;
pub const MIN_TRAINING_ACCURACY: f64 = 0.95;
const DUMP_RESOLUTION: usize = 100;

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub checks: Vec<CheckOutcome>,
    pub agreement: FixtureAgreement,
}

/// Fits the seed-map fixture with the configured forest and compares it to the KDE oracle.
pub fn run_fixture(cfg: &RunConfig) -> CliResult<(FixtureAgreement, lookalike::fixtures::SeedMapFixture, lookalike::TreeEnsemble)> {
    let fixture_seed = derive_seed(cfg.seed, &[STREAM_ORACLE, 0]);
    let fixture = seed_map_fixture(FIXTURE_N1, FIXTURE_N0, fixture_seed)?;
    let model = fit(&fixture.training, &cfg.forest, derive_seed(cfg.seed, &[STREAM_ORACLE, 1]))?;
    let agreement = fixture_agreement(&fixture, &model)?;
    Ok((agreement, fixture, model))
}

/// Prints one line per check and fails when any check fails.
pub fn cmd_oracle(cfg: &RunConfig) -> CliResult<OracleOutcome> {
    let out = cfg.out_dir();
    let mut manifest = Manifest::new("oracle", cfg);
    manifest.seed("fixture", derive_seed(cfg.seed, &[STREAM_ORACLE, 0]));
    manifest.seed("forest", derive_seed(cfg.seed, &[STREAM_ORACLE, 1]));

    let mut checks = manifest.time("univariate", univariate_checks);
    let (agreement, fixture, model) = manifest.time("fixture", || run_fixture(cfg))?;
    let rho = agreement.rank_correlation;
    checks.push(CheckOutcome {
        name: "rank_agreement_in_range".into(),
        passed: (-1.0..=1.0).contains(&rho),
        detail: format!("{rho:.4}"),
    });
    checks.push(CheckOutcome {
        name: "fixture_rank_agreement".into(),
        passed: rho >= MIN_AGREEMENT,
        detail: format!("Spearman {rho:.4} over {} probes (need >= {MIN_AGREEMENT})", agreement.probes),
    });
    checks.push(CheckOutcome {
        name: "fixture_training_accuracy".into(),
        passed: agreement.training_accuracy >= MIN_TRAINING_ACCURACY,
        detail: format!("{:.4}", agreement.training_accuracy),
    });
    checks.push(CheckOutcome {
        name: "fixture_centroid_above_corner".into(),
        passed: agreement.centroid_mean > agreement.corner_mean,
        detail: format!("centroid {:.4}, corner {:.4}", agreement.centroid_mean, agreement.corner_mean),
    });

    create_dir(&out)?;
    let region = bounding_box(&fixture.positives, SEED_REGION_PADDING)?;
    let kde = KdeOracle::silverman(
        fixture.positives.clone(),
        fixture.bbox.clone(),
        FIXTURE_N0 as f64,
        FIXTURE_N1 as f64,
    )?;
    let kde_grid = grid_with(&region, DUMP_RESOLUTION, |p| kde_posterior(&kde, p))?;
    let forest_grid = grid_with(&region, DUMP_RESOLUTION, |p| Ok(model.predict_proba(p)?.p1))?;
    let mut outputs = vec![
        write_file(&out, "oracle_checks.csv", |w| {
            writeln!(w, "name,passed,detail")?;
            for c in &checks {
                writeln!(w, "{},{},\"{}\"", c.name, c.passed, c.detail.replace('"', "'"))?;
            }
            Ok(())
        })?,
        write_file(&out, "kde_grid.csv", |w| kde_grid.write_csv(w))?,
        write_file(&out, "classifier_grid.csv", |w| forest_grid.write_csv(w))?,
        write_file(&out, "fixture_training.csv", |w| fixture.training.write_csv(w))?,
    ];
    manifest.outputs.append(&mut outputs);
    manifest.detail("agreement", &agreement);
    manifest.detail("checks", &checks);
    manifest.write(&out)?;

    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::Checks {
            failed,
            total: checks.len(),
        });
    }
    Ok(OracleOutcome { checks, agreement })
}
