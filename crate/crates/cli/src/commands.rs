//! One function per subcommand. Each stage reads and writes only the
//! documented artifacts under the output directory, so expensive stages
//! can be re-run independently.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use mobinet_core::baselines::{
    derive_seed, fit_gravity, gravity_generate_set, radiation_generate_set, GenerationMode,
    GravityFit,
};
use mobinet_core::harness::{
    regenerate_report, run_protocol, save_artifacts, save_report, DivergenceReport, MetricContext,
    REFERENCE_MODEL,
};
use mobinet_core::ingest::{run_ingest, split_networks, split_networks_chronological};
use mobinet_core::metrics::CutMode;
use mobinet_core::mogan::{train_with, GanModel};
use mobinet_core::net::{
    build_grid_tessellation, distance_matrix, load_networks, load_tessellation, save_networks,
    save_tessellation, DistanceMatrix, MobilityNetwork, Tessellation,
};

use crate::config::{BaselineMode, RunConfig, SplitKind};

/// Artifact locations under the output directory.
struct Paths {
    out: PathBuf,
}

impl Paths {
    fn new(cfg: &RunConfig) -> Self {
        Paths { out: cfg.out_dir.clone() }
    }

    fn tessellation(&self) -> PathBuf {
        self.out.join("tessellation.json")
    }
    fn ingest_report(&self) -> PathBuf {
        self.out.join("ingest_report.json")
    }
    fn split_dir(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
    fn gravity_fit(&self) -> PathBuf {
        self.out.join("gravity_fit.json")
    }
    fn mogan_ckpt(&self) -> PathBuf {
        self.out.join("mogan.ckpt")
    }
    fn mogan_history(&self) -> PathBuf {
        self.out.join("mogan_history.csv")
    }
    fn generated_root(&self) -> PathBuf {
        self.out.join("generated")
    }
    fn generated(&self, model: &str) -> PathBuf {
        self.generated_root().join(model)
    }
    fn eval_dir(&self) -> PathBuf {
        self.out.join("eval")
    }
}

fn load_split(paths: &Paths, name: &str) -> Result<Vec<MobilityNetwork>> {
    let dir = paths.split_dir(name);
    load_networks(&dir)
        .with_context(|| format!("loading the {name} networks from {} (run ingest first?)", dir.display()))
}

fn load_distances(paths: &Paths) -> Result<(Tessellation, DistanceMatrix)> {
    let tess = load_tessellation(&paths.tessellation())
        .with_context(|| format!("loading {} (run ingest first?)", paths.tessellation().display()))?;
    let dist = distance_matrix(&tess);
    Ok((tess, dist))
}

pub fn cmd_ingest(cfg: &RunConfig, extra_inputs: &[PathBuf]) -> Result<()> {
    let mut inputs = cfg.ingest.inputs.clone();
    inputs.extend(extra_inputs.iter().cloned());
    if inputs.is_empty() {
        bail!("no trip files: set ingest.inputs in the config or pass --input");
    }

    let paths = Paths::new(cfg);
    let tess = build_grid_tessellation(cfg.ingest.bbox, cfg.ingest.rows, cfg.ingest.cols)?;
    let (nets, report) = run_ingest(&inputs, &tess, cfg.ingest.min_duration_s)?;
    println!(
        "parsed {} trips ({} malformed, {} too short, {} outside the grid) over {} days",
        report.parsed,
        report.malformed,
        report.filtered_short,
        report.dropped_outside,
        nets.len()
    );

    let (train, test) = match cfg.ingest.split {
        SplitKind::Random => split_networks(nets, cfg.ingest.test_count, cfg.ingest.split_seed)?,
        SplitKind::Chronological => split_networks_chronological(nets, cfg.ingest.test_count)?,
    };
    cfg.persist()?;
    save_tessellation(&tess, &paths.tessellation())?;
    save_networks(&train, &paths.split_dir("train"))?;
    save_networks(&test, &paths.split_dir("test"))?;
    report.save(&paths.ingest_report())?;
    println!(
        "split {} train / {} test days into {}",
        train.len(),
        test.len(),
        paths.out.display()
    );
    Ok(())
}

pub fn cmd_fit_gravity(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    let train = load_split(&paths, "train")?;
    let (_, dist) = load_distances(&paths)?;
    let started = Instant::now();
    let fit = fit_gravity(&train, &dist)?;
    cfg.persist()?;
    fit.save(&paths.gravity_fit())?;
    println!(
        "fitted gravity model in {:.1}s: beta1 {:.6}, beta2 {:.6}, log-likelihood {:.3}",
        started.elapsed().as_secs_f64(),
        fit.beta1,
        fit.beta2,
        fit.loglik
    );
    Ok(())
}

pub fn cmd_train_mogan(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    let train = load_split(&paths, "train")?;
    let gan_cfg = cfg.gan.clone();
    let total = gan_cfg.epochs;
    let every = (total / 100).max(1);
    let started = Instant::now();
    eprintln!(
        "training on {} networks, batch {}, {} epochs, seed {}",
        train.len(),
        gan_cfg.batch_size,
        total,
        gan_cfg.seed
    );
    let (model, history) = train_with(&train, &gan_cfg, |epoch, _, history| {
        if (epoch + 1) % every == 0 || epoch + 1 == total {
            if let Some(r) = history.records.last() {
                eprintln!(
                    "epoch {:>6}/{total}  d_loss {:.4}  g_loss {:.4}  D(real) {:.3}  D(fake) {:.3}  [{:.0}s]",
                    epoch + 1,
                    r.d_loss,
                    r.g_loss,
                    r.real_score,
                    r.fake_score,
                    started.elapsed().as_secs_f64()
                );
            }
        }
        Ok(())
    })?;
    cfg.persist()?;
    model.save(&paths.mogan_ckpt())?;
    history.save_csv(&paths.mogan_history())?;
    let batches_per_epoch = train.len() / gan_cfg.batch_size;
    if history.len() < total * batches_per_epoch {
        println!("stopped early at the score plateau after {} iterations", history.len());
    }
    println!(
        "trained {} iterations in {:.1}s; checkpoint {}",
        history.len(),
        started.elapsed().as_secs_f64(),
        paths.mogan_ckpt().display()
    );
    Ok(())
}

pub fn cmd_generate(
    cfg: &RunConfig,
    model: &str,
    days: &str,
    count: Option<usize>,
) -> Result<()> {
    if days != "train" && days != "test" {
        bail!("--days must be train or test, got {days:?}");
    }
    let paths = Paths::new(cfg);
    let reference = load_split(&paths, days)?;
    let mode_for = |label: &str| match cfg.baseline_mode {
        BaselineMode::Expected => GenerationMode::Expected,
        BaselineMode::Multinomial => GenerationMode::Multinomial {
            seed: derive_seed(cfg.seed, label),
        },
    };
    let nets = match model {
        "gravity" => {
            let fit = GravityFit::load(&paths.gravity_fit())
                .with_context(|| "loading the gravity fit (run fit-gravity first?)")?;
            let (_, dist) = load_distances(&paths)?;
            gravity_generate_set(&reference, &dist, &fit.params(), mode_for("gravity"))?
        }
        "radiation" => {
            let (_, dist) = load_distances(&paths)?;
            radiation_generate_set(&reference, &dist, mode_for("radiation"))?
        }
        "mogan" => {
            let mut gan = GanModel::load(&paths.mogan_ckpt())
                .with_context(|| "loading the checkpoint (run train-mogan first?)")?;
            let k = count.unwrap_or(reference.len());
            gan.sample(k, derive_seed(cfg.seed, "sample"))?
        }
        other => bail!("unknown model {other:?} (expected gravity, radiation or mogan)"),
    };
    cfg.persist()?;
    let dir = paths.generated(model);
    save_networks(&nets, &dir)?;
    println!("generated {} networks into {}", nets.len(), dir.display());
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig, models: Option<&str>) -> Result<()> {
    let paths = Paths::new(cfg);
    let test = load_split(&paths, "test")?;
    let (_, dist) = load_distances(&paths)?;

    let names: Vec<String> = match models {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        None => {
            let root = paths.generated_root();
            let mut found = Vec::new();
            let entries = std::fs::read_dir(&root)
                .with_context(|| format!("listing {} (run generate first?)", root.display()))?;
            for entry in entries {
                let entry = entry.with_context(|| format!("listing {}", root.display()))?;
                if entry.path().is_dir() {
                    found.push(entry.file_name().to_string_lossy().into_owned());
                }
            }
            found.sort();
            found
        }
    };
    if names.is_empty() {
        bail!("no generated model sets found under {}", paths.generated_root().display());
    }

    let mut sources = Vec::with_capacity(names.len());
    for name in &names {
        let dir = paths.generated(name);
        let nets = load_networks(&dir)
            .with_context(|| format!("loading model {name} from {}", dir.display()))?;
        sources.push((name.clone(), nets));
    }

    let cut_mode = if cfg.eval.cd_exact {
        CutMode::Exact
    } else {
        CutMode::Sdp { seed: derive_seed(cfg.seed, "sdp") }
    };
    let ctx = MetricContext { dist: Some(&dist), cut_mode };
    eprintln!(
        "scoring {} test networks against {} model sets over {} metrics",
        test.len(),
        sources.len(),
        cfg.eval.metrics.len()
    );
    let started = Instant::now();
    let result = run_protocol(&test, &sources, &cfg.eval.metrics, &ctx, cfg.seed)?;
    eprintln!("scored in {:.1}s", started.elapsed().as_secs_f64());
    cfg.persist()?;
    save_artifacts(&result, &paths.eval_dir())?;
    print_report(&result.report);
    println!("report written to {}", paths.eval_dir().display());
    Ok(())
}

pub fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    let report = regenerate_report(&paths.eval_dir())
        .with_context(|| format!("regenerating from {} (run evaluate first?)", paths.eval_dir().display()))?;
    save_report(&report, &paths.eval_dir())?;
    print_report(&report);
    Ok(())
}

fn print_report(report: &DivergenceReport) {
    println!("root seed {}", report.root_seed);
    println!("{:<20} {:<12} {:>10} {:>10}", "metric", "model", "js_m", "js_s");
    for entry in &report.entries {
        println!(
            "{:<20} {:<12} {:>10.4} {:>10.4}",
            entry.metric.as_str(),
            entry.model,
            entry.js_m,
            entry.js_s
        );
    }
    if !report.deltas.is_empty() {
        println!();
        println!(
            "{:<20} {:<12} {:>10} {:>10}   improvement of {REFERENCE_MODEL} (%)",
            "metric", "baseline", "delta_m", "delta_s"
        );
        for d in &report.deltas {
            let fmt = |v: Option<f64>| match v {
                Some(x) => format!("{x:>10.1}"),
                None => format!("{:>10}", "-"),
            };
            println!(
                "{:<20} {:<12} {} {}",
                d.metric.as_str(),
                d.baseline,
                fmt(d.delta_m),
                fmt(d.delta_s)
            );
        }
    }
}
