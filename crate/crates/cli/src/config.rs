//! Run configuration: flat `key = value` files with section prefixes
//! (`ingest.*`, `gan.*`, `baselines.*`, `eval.*`), merged with command-line
//! overrides. Flags beat the file; the MOBINET_SEED environment variable
//! beats everything for the root seed. The fully resolved config is written
//! next to the outputs so any run can be reproduced from its artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mobinet_core::baselines::derive_seed;
use mobinet_core::harness::MetricName;
use mobinet_core::mogan::GanConfig;
use mobinet_core::net::BBox;

/// Environment variable that overrides the root seed.
pub const SEED_ENV: &str = "MOBINET_SEED";

const KNOWN_KEYS: [&str; 24] = [
    "seed",
    "out_dir",
    "threads",
    "ingest.inputs",
    "ingest.bbox",
    "ingest.rows",
    "ingest.cols",
    "ingest.min_duration_s",
    "ingest.test_count",
    "ingest.split",
    "ingest.split_seed",
    "gan.latent_dim",
    "gan.epochs",
    "gan.batch_size",
    "gan.lr",
    "gan.b1",
    "gan.b2",
    "gan.seed",
    "gan.scale_log1p",
    "gan.early_stop",
    "gan.round_samples",
    "baselines.mode",
    "eval.metrics",
    "eval.cd_exact",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Random,
    Chronological,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    Expected,
    Multinomial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSection {
    pub inputs: Vec<PathBuf>,
    pub bbox: BBox,
    pub rows: usize,
    pub cols: usize,
    pub min_duration_s: f64,
    pub test_count: usize,
    pub split: SplitKind,
    /// Concrete after resolution; derived from the root seed unless set.
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub metrics: Vec<MetricName>,
    /// Exact cut-distance enumeration instead of the SDP bound; only
    /// feasible on small fixtures (n <= 20).
    pub cd_exact: bool,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker thread cap for pairwise sweeps; 0 = all cores.
    pub threads: usize,
    pub ingest: IngestSection,
    /// GAN hyperparameters with the seed already resolved.
    pub gan: GanConfig,
    pub baseline_mode: BaselineMode,
    pub eval: EvalSection,
}

/// Accumulates key/value pairs from defaults, file and flags, then
/// resolves them into a typed [`RunConfig`].
pub struct ConfigBuilder {
    entries: BTreeMap<String, String>,
}

impl Default for ConfigBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl ConfigBuilder {
    pub fn new() -> Self {
        let gan = GanConfig::default();
        let mut entries = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            entries.insert(k.to_string(), v);
        };
        put("seed", "0".into());
        put("out_dir", "out".into());
        put("threads", "0".into());
        put("ingest.inputs", String::new());
        // New York City extent; override per dataset.
        put("ingest.bbox", "-74.263242,40.476578,-73.700029,40.917577".into());
        put("ingest.rows", "8".into());
        put("ingest.cols", "8".into());
        put("ingest.min_duration_s", "60".into());
        put("ingest.test_count", "146".into());
        put("ingest.split", "random".into());
        put("ingest.split_seed", String::new());
        put("gan.latent_dim", gan.latent_dim.to_string());
        put("gan.epochs", gan.epochs.to_string());
        put("gan.batch_size", gan.batch_size.to_string());
        put("gan.lr", gan.lr.to_string());
        put("gan.b1", gan.b1.to_string());
        put("gan.b2", gan.b2.to_string());
        put("gan.seed", String::new());
        put("gan.scale_log1p", gan.scale_log1p.to_string());
        put("gan.early_stop", gan.early_stop.to_string());
        put("gan.round_samples", gan.round_samples.to_string());
        put("baselines.mode", "multinomial".into());
        put(
            "eval.metrics",
            "rmse,cpc,cut_distance,weights_js,weight_distance_js".into(),
        );
        put("eval.cd_exact", "false".into());
        ConfigBuilder { entries }
    }

    /// Merge a config file: `key = value` lines, `#` comments, blank lines.
    pub fn load_file(&mut self, path: &Path) -> Result<&mut Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected 'key = value', got {raw:?}", path.display(), lineno + 1);
            };
            self.set(key.trim(), value.trim())
                .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        }
        Ok(self)
    }

    /// Set one key, validating the name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<&mut Self> {
        if !KNOWN_KEYS.contains(&key) {
            bail!("unknown config key {key:?}");
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(self)
    }

    /// Resolve into a typed config: apply the seed env override, derive
    /// unset seeds from the root seed, and validate every field.
    pub fn finish(&self) -> Result<RunConfig> {
        let get = |k: &str| self.entries.get(k).map(String::as_str).unwrap_or("");
        let parse_num = |k: &str| -> Result<f64> {
            get(k).parse().with_context(|| format!("config key {k}: bad number {:?}", get(k)))
        };
        let parse_usize = |k: &str| -> Result<usize> {
            get(k).parse().with_context(|| format!("config key {k}: bad integer {:?}", get(k)))
        };
        let parse_bool = |k: &str| -> Result<bool> {
            get(k).parse().with_context(|| format!("config key {k}: bad bool {:?}", get(k)))
        };

        let mut seed: u64 = get("seed")
            .parse()
            .with_context(|| format!("config key seed: bad integer {:?}", get("seed")))?;
        if let Ok(env) = std::env::var(SEED_ENV) {
            seed = env
                .parse()
                .with_context(|| format!("{SEED_ENV}: bad integer {env:?}"))?;
        }

        let bbox_parts: Vec<f64> = get("ingest.bbox")
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("config key ingest.bbox: {:?}", get("ingest.bbox")))?;
        if bbox_parts.len() != 4 {
            bail!("config key ingest.bbox: need min_lon,min_lat,max_lon,max_lat");
        }
        let bbox = BBox::new(bbox_parts[0], bbox_parts[1], bbox_parts[2], bbox_parts[3]);

        let inputs: Vec<PathBuf> = get("ingest.inputs")
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| PathBuf::from(p.trim()))
            .collect();

        let split = match get("ingest.split") {
            "random" => SplitKind::Random,
            "chronological" => SplitKind::Chronological,
            other => bail!("config key ingest.split: expected random or chronological, got {other:?}"),
        };
        let opt_seed = |k: &str, label: &str| -> Result<u64> {
            let v = get(k);
            if v.is_empty() {
                Ok(derive_seed(seed, label))
            } else {
                v.parse().with_context(|| format!("config key {k}: bad integer {v:?}"))
            }
        };

        let gan = GanConfig {
            latent_dim: parse_usize("gan.latent_dim")?,
            epochs: parse_usize("gan.epochs")?,
            batch_size: parse_usize("gan.batch_size")?,
            lr: parse_num("gan.lr")?,
            b1: parse_num("gan.b1")?,
            b2: parse_num("gan.b2")?,
            seed: opt_seed("gan.seed", "gan")?,
            scale_log1p: parse_bool("gan.scale_log1p")?,
            early_stop: parse_bool("gan.early_stop")?,
            round_samples: parse_bool("gan.round_samples")?,
        };
        gan.validate().map_err(|e| anyhow::anyhow!("{e}"))?;

        let baseline_mode = match get("baselines.mode") {
            "expected" => BaselineMode::Expected,
            "multinomial" => BaselineMode::Multinomial,
            other => bail!("config key baselines.mode: expected expected or multinomial, got {other:?}"),
        };

        let mut metrics = Vec::new();
        for part in get("eval.metrics").split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            metrics.push(part.parse::<MetricName>().map_err(|e| anyhow::anyhow!("{e}"))?);
        }
        if metrics.is_empty() {
            bail!("config key eval.metrics: need at least one metric");
        }

        let cfg = RunConfig {
            seed,
            out_dir: PathBuf::from(get("out_dir")),
            threads: parse_usize("threads")?,
            ingest: IngestSection {
                inputs,
                bbox,
                rows: parse_usize("ingest.rows")?,
                cols: parse_usize("ingest.cols")?,
                min_duration_s: parse_num("ingest.min_duration_s")?,
                test_count: parse_usize("ingest.test_count")?,
                split,
                split_seed: opt_seed("ingest.split_seed", "split")?,
            },
            gan,
            baseline_mode,
            eval: EvalSection { metrics, cd_exact: parse_bool("eval.cd_exact")? },
        };
        if cfg.ingest.rows == 0 || cfg.ingest.cols == 0 {
            bail!("config keys ingest.rows/ingest.cols must be >= 1");
        }
        if cfg.ingest.test_count == 0 {
            bail!("config key ingest.test_count must be >= 1");
        }
        Ok(cfg)
    }
}

impl RunConfig {
    /// Canonical flat serialization; parsing it back yields an equal config.
    pub fn to_flat(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        writeln!(w, "seed = {}", self.seed).unwrap();
        writeln!(w, "out_dir = {}", self.out_dir.display()).unwrap();
        writeln!(w, "threads = {}", self.threads).unwrap();
        let inputs: Vec<String> =
            self.ingest.inputs.iter().map(|p| p.display().to_string()).collect();
        writeln!(w, "ingest.inputs = {}", inputs.join(",")).unwrap();
        writeln!(
            w,
            "ingest.bbox = {},{},{},{}",
            self.ingest.bbox.min_lon,
            self.ingest.bbox.min_lat,
            self.ingest.bbox.max_lon,
            self.ingest.bbox.max_lat
        )
        .unwrap();
        writeln!(w, "ingest.rows = {}", self.ingest.rows).unwrap();
        writeln!(w, "ingest.cols = {}", self.ingest.cols).unwrap();
        writeln!(w, "ingest.min_duration_s = {}", self.ingest.min_duration_s).unwrap();
        writeln!(w, "ingest.test_count = {}", self.ingest.test_count).unwrap();
        let split = match self.ingest.split {
            SplitKind::Random => "random",
            SplitKind::Chronological => "chronological",
        };
        writeln!(w, "ingest.split = {split}").unwrap();
        writeln!(w, "ingest.split_seed = {}", self.ingest.split_seed).unwrap();
        writeln!(w, "gan.latent_dim = {}", self.gan.latent_dim).unwrap();
        writeln!(w, "gan.epochs = {}", self.gan.epochs).unwrap();
        writeln!(w, "gan.batch_size = {}", self.gan.batch_size).unwrap();
        writeln!(w, "gan.lr = {}", self.gan.lr).unwrap();
        writeln!(w, "gan.b1 = {}", self.gan.b1).unwrap();
        writeln!(w, "gan.b2 = {}", self.gan.b2).unwrap();
        writeln!(w, "gan.seed = {}", self.gan.seed).unwrap();
        writeln!(w, "gan.scale_log1p = {}", self.gan.scale_log1p).unwrap();
        writeln!(w, "gan.early_stop = {}", self.gan.early_stop).unwrap();
        writeln!(w, "gan.round_samples = {}", self.gan.round_samples).unwrap();
        let mode = match self.baseline_mode {
            BaselineMode::Expected => "expected",
            BaselineMode::Multinomial => "multinomial",
        };
        writeln!(w, "baselines.mode = {mode}").unwrap();
        let metrics: Vec<&str> = self.eval.metrics.iter().map(|m| m.as_str()).collect();
        writeln!(w, "eval.metrics = {}", metrics.join(",")).unwrap();
        writeln!(w, "eval.cd_exact = {}", self.eval.cd_exact).unwrap();
        s
    }

    /// Write the resolved config next to the outputs.
    pub fn persist(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        let path = self.out_dir.join("config.resolved");
        std::fs::write(&path, self.to_flat())
            .with_context(|| format!("writing {}", path.display()))
    }
}
