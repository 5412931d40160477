//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, so an empty file is a valid configuration. Relative paths are
//! resolved against the directory holding the config file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lookalike::experiment::TopK;
use lookalike::forest::ForestParams;
use lookalike::tsne::TsneConfig;
use lookalike::NegativeStrategy;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Keys that may appear in a config file.
pub const KEYS: &[&str] = &[
    "images",
    "labels",
    "test_images",
    "test_labels",
    "features",
    "embedding",
    "per_class",
    "perplexity",
    "iterations",
    "learning_rate",
    "exaggeration",
    "strategy",
    "n1",
    "n0",
    "ratio",
    "k",
    "m",
    "repetitions",
    "seed",
    "padding",
    "trees",
    "max_features",
    "min_samples_split",
    "leaf_smoothing",
    "classes",
    "baseline_class",
    "sweep_class",
    "sweep_ratios",
    "grid_resolution",
    "out",
];

/// Keys left out of the config hash because they do not change any result.
const UNHASHED: &[&str] = &["out"];

/// How many users an experiment expands to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TopKSpec {
    Absolute(usize),
    /// Percentage of the user base, rounded to nearest.
    Percent(f64),
    /// Class members left after removing the seed.
    ClassPool,
}

impl TopKSpec {
    pub fn resolve(&self, n: usize) -> TopK {
        match *self {
            TopKSpec::Absolute(k) => TopK::Fixed(k),
            TopKSpec::Percent(p) => TopK::Fixed((p / 100.0 * n as f64).round() as usize),
            TopKSpec::ClassPool => TopK::ClassPool,
        }
    }
}

impl Display for TopKSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TopKSpec::Absolute(k) => write!(f, "{k}"),
            TopKSpec::Percent(p) => write!(f, "{p}%"),
            TopKSpec::ClassPool => f.write_str("class_pool"),
        }
    }
}

impl FromStr for TopKSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "class_pool" {
            return Ok(TopKSpec::ClassPool);
        }
        if let Some(p) = s.strip_suffix('%') {
            let p: f64 = p.trim().parse().map_err(|_| format!("bad percentage {s:?}"))?;
            if !(p > 0.0 && p <= 100.0) {
                return Err(format!("percentage {p} outside (0, 100]"));
            }
            return Ok(TopKSpec::Percent(p));
        }
        let k: usize = s.parse().map_err(|_| format!("bad k {s:?}"))?;
        if k == 0 {
            return Err("k must be at least 1".into());
        }
        Ok(TopKSpec::Absolute(k))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    pub images: Option<String>,
    pub labels: Option<String>,
    pub test_images: Option<String>,
    pub test_labels: Option<String>,
    pub features: Option<String>,
    pub embedding: Option<String>,
    pub per_class: Option<usize>,
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub strategy: NegativeStrategy,
    pub n1: usize,
    pub n0: Option<usize>,
    pub ratio: Option<f64>,
    pub k: TopKSpec,
    pub m: Option<String>,
    pub repetitions: usize,
    pub seed: u64,
    pub padding: f64,
    pub forest: ForestParams,
    pub classes: Vec<u8>,
    pub baseline_class: Option<u8>,
    pub sweep_class: Option<u8>,
    pub sweep_ratios: Vec<f64>,
    pub grid_resolution: usize,
    pub out: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let tsne = TsneConfig::default();
        RunConfig {
            base_dir: PathBuf::from("."),
            images: None,
            labels: None,
            test_images: None,
            test_labels: None,
            features: None,
            embedding: None,
            per_class: None,
            perplexity: tsne.perplexity,
            iterations: tsne.iterations,
            learning_rate: tsne.learning_rate,
            exaggeration: tsne.early_exaggeration,
            strategy: NegativeStrategy::Uniform,
            n1: 250,
            n0: None,
            ratio: None,
            k: TopKSpec::Absolute(7000),
            m: None,
            repetitions: 30,
            seed: 0,
            padding: lookalike::training::DEFAULT_PADDING,
            forest: ForestParams::default(),
            classes: Vec::new(),
            baseline_class: None,
            sweep_class: None,
            sweep_ratios: Vec::new(),
            grid_resolution: 200,
            out: "out".to_string(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> CliResult<Vec<T>>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse(key, v))
        .collect()
}

fn join<T: Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Splits config text into key/value pairs, rejecting unknown and repeated keys.
pub fn parse_pairs(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut pairs = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(CliError::Config(format!("line {}: unknown key {key:?}", i + 1)));
        }
        if pairs.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(CliError::Config(format!("line {}: duplicate key {key:?}", i + 1)));
        }
    }
    Ok(pairs)
}

impl RunConfig {
    pub fn from_pairs(pairs: &BTreeMap<String, String>, base_dir: &Path) -> CliResult<Self> {
        let mut c = RunConfig {
            base_dir: base_dir.to_path_buf(),
            ..RunConfig::default()
        };
        for (key, v) in pairs {
            let v = v.as_str();
            let k = key.as_str();
            match k {
                "images" => c.images = Some(v.to_string()),
                "labels" => c.labels = Some(v.to_string()),
                "test_images" => c.test_images = Some(v.to_string()),
                "test_labels" => c.test_labels = Some(v.to_string()),
                "features" => c.features = Some(v.to_string()),
                "embedding" => c.embedding = Some(v.to_string()),
                "per_class" => c.per_class = Some(parse(k, v)?),
                "perplexity" => c.perplexity = parse(k, v)?,
                "iterations" => c.iterations = parse(k, v)?,
                "learning_rate" => c.learning_rate = parse(k, v)?,
                "exaggeration" => c.exaggeration = parse(k, v)?,
                "strategy" => c.strategy = parse(k, v)?,
                "n1" => c.n1 = parse(k, v)?,
                "n0" => c.n0 = Some(parse(k, v)?),
                "ratio" => c.ratio = Some(parse(k, v)?),
                "k" => c.k = parse(k, v)?,
                "m" => c.m = Some(v.to_string()),
                "repetitions" => c.repetitions = parse(k, v)?,
                "seed" => c.seed = parse(k, v)?,
                "padding" => c.padding = parse(k, v)?,
                "trees" => c.forest.n_trees = parse(k, v)?,
                "max_features" => c.forest.max_features = Some(parse(k, v)?),
                "min_samples_split" => c.forest.min_samples_split = parse(k, v)?,
                "leaf_smoothing" => c.forest.leaf_smoothing = parse(k, v)?,
                "classes" => c.classes = parse_list(k, v)?,
                "baseline_class" => c.baseline_class = Some(parse(k, v)?),
                "sweep_class" => c.sweep_class = Some(parse(k, v)?),
                "sweep_ratios" => c.sweep_ratios = parse_list(k, v)?,
                "grid_resolution" => c.grid_resolution = parse(k, v)?,
                "out" => c.out = v.to_string(),
                _ => unreachable!("keys are checked while parsing"),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn parse_str(text: &str, base_dir: &Path) -> CliResult<Self> {
        RunConfig::from_pairs(&parse_pairs(text)?, base_dir)
    }

    /// Reads a config file; a missing file is a config error.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        RunConfig::parse_str(&text, dir)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.n0.is_some() && self.ratio.is_some() {
            return bad("set either n0 or ratio, not both".into());
        }
        if let Some(r) = self.ratio {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("ratio must be positive, got {r}"));
            }
        }
        if self.n1 == 0 || self.n0 == Some(0) {
            return bad("n1 and n0 must be positive".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.per_class == Some(0) {
            return bad("per_class must be positive".into());
        }
        if !(self.perplexity > 0.0) || !(self.learning_rate > 0.0) || !(self.exaggeration > 0.0) {
            return bad("perplexity, learning_rate and exaggeration must be positive".into());
        }
        if self.iterations < lookalike::tsne::EXAGGERATION_ITERS {
            return bad(format!(
                "iterations must be at least {}",
                lookalike::tsne::EXAGGERATION_ITERS
            ));
        }
        if !(self.padding >= 0.0 && self.padding.is_finite()) {
            return bad(format!("padding must be non-negative, got {}", self.padding));
        }
        if self.forest.n_trees == 0 || self.forest.min_samples_split < 2 {
            return bad("trees must be positive and min_samples_split at least 2".into());
        }
        if self.forest.max_features == Some(0) {
            return bad("max_features must be positive".into());
        }
        if !(self.forest.leaf_smoothing >= 0.0) {
            return bad("leaf_smoothing must be non-negative".into());
        }
        if self.sweep_ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return bad("sweep ratios must be positive".into());
        }
        if self.grid_resolution < 2 {
            return bad("grid_resolution must be at least 2".into());
        }
        if self.images.is_some() && self.features.is_some() {
            return bad("set either images or features, not both".into());
        }
        if self.test_images.is_some() != self.test_labels.is_some() {
            return bad("test_images and test_labels go together".into());
        }
        if let Some(m) = &self.m {
            match m.parse::<TopKSpec>() {
                Ok(TopKSpec::ClassPool) | Err(_) => {
                    return bad(format!("m must be a count or a percentage, got {m:?}"))
                }
                Ok(_) => {}
            }
        }
        Ok(())
    }

    /// Resolves a configured path against the config directory.
    pub fn path(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Resolves a path that must already exist.
    pub fn existing(&self, key: &str, p: &str) -> CliResult<PathBuf> {
        let path = self.path(p);
        if !path.exists() {
            return Err(CliError::Config(format!("{key}: {} does not exist", path.display())));
        }
        Ok(path)
    }

    /// Output directory; relative paths are taken from the working directory.
    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out)
    }

    /// Negative count implied by `n0` or `ratio`, defaulting to `n1`.
    pub fn negatives(&self) -> usize {
        match (self.n0, self.ratio) {
            (Some(n0), _) => n0,
            (None, Some(r)) => ((self.n1 as f64 / r).round() as usize).max(1),
            (None, None) => self.n1,
        }
    }

    pub fn tsne(&self, rng_seed: u64) -> TsneConfig {
        TsneConfig {
            perplexity: self.perplexity,
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            early_exaggeration: self.exaggeration,
            rng_seed,
            checkpoint_every: Some(50),
            ..TsneConfig::default()
        }
    }

    /// Every setting, defaults included, as sorted key/value pairs.
    pub fn canonical(&self) -> BTreeMap<&'static str, String> {
        let opt = |v: &Option<String>| v.clone().unwrap_or_default();
        let opt_n = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        let opt_c = |v: Option<u8>| v.map(|x| x.to_string()).unwrap_or_default();
        let f = &self.forest;
        BTreeMap::from([
            ("images", opt(&self.images)),
            ("labels", opt(&self.labels)),
            ("test_images", opt(&self.test_images)),
            ("test_labels", opt(&self.test_labels)),
            ("features", opt(&self.features)),
            ("embedding", opt(&self.embedding)),
            ("per_class", opt_n(self.per_class)),
            ("perplexity", self.perplexity.to_string()),
            ("iterations", self.iterations.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("exaggeration", self.exaggeration.to_string()),
            ("strategy", self.strategy.to_string()),
            ("n1", self.n1.to_string()),
            ("n0", opt_n(self.n0)),
            ("ratio", self.ratio.map(|r| r.to_string()).unwrap_or_default()),
            ("k", self.k.to_string()),
            ("m", opt(&self.m)),
            ("repetitions", self.repetitions.to_string()),
            ("seed", self.seed.to_string()),
            ("padding", self.padding.to_string()),
            ("trees", f.n_trees.to_string()),
            ("max_features", opt_n(f.max_features)),
            ("min_samples_split", f.min_samples_split.to_string()),
            ("leaf_smoothing", f.leaf_smoothing.to_string()),
            ("classes", join(&self.classes)),
            ("baseline_class", opt_c(self.baseline_class)),
            ("sweep_class", opt_c(self.sweep_class)),
            ("sweep_ratios", join(&self.sweep_ratios)),
            ("grid_resolution", self.grid_resolution.to_string()),
            ("out", self.out.clone()),
        ])
    }

    /// Canonical `key=value` lines, sorted by key.
    pub fn canonical_text(&self) -> String {
        self.canonical()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// SHA-256 of the canonical text without output-only keys.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.canonical() {
            if !UNHASHED.contains(&k) {
                h.update(format!("{k}={v}\n"));
            }
        }
        hex::encode(h.finalize())
    }
}
