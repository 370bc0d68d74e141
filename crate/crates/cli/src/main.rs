//! `hsad`: hyperspectral anomaly detection from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hsad_core::detection::{rx_baseline, DetectionMap};
use hsad_core::eval::{roc_curve, roc_from_labels, RocCurve};
use hsad_core::hsi::{self, normalize, GroundTruthMask};
use hsad_core::nn::{load_checkpoint, save_checkpoint, EncoderPath};
use hsad_core::pipeline::{self, files, load_inputs, segment, RunConfig};
use hsad_core::segmentation::{build_repository, RegionMap};
use hsad_core::training::train;

#[derive(Parser)]
#[command(
    name = "hsad",
    version,
    about = "Region-trained selective-scan hyperspectral anomaly detector",
    allow_negative_numbers = true,
    args_override_self = true
)]
struct Cli {
    #[command(flatten)]
    global: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags mirror config keys and win over the config file.
#[derive(Args)]
struct Overrides {
    /// TOML file with run settings
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input cube (HSC1); a synthetic scene is generated when absent
    #[arg(long, global = true)]
    cube: Option<PathBuf>,
    /// Ground-truth mask (HSC1, u8)
    #[arg(long, global = true)]
    mask: Option<PathBuf>,
    #[arg(long, global = true)]
    height: Option<usize>,
    #[arg(long, global = true)]
    width: Option<usize>,
    #[arg(long, global = true)]
    bands: Option<usize>,
    #[arg(long, global = true)]
    n_endmembers: Option<usize>,
    #[arg(long, global = true)]
    n_anomalies: Option<usize>,
    #[arg(long, global = true)]
    anomaly_fraction: Option<f64>,
    #[arg(long, global = true)]
    noise_sigma: Option<f64>,
    #[arg(long, global = true)]
    compactness: Option<f64>,
    #[arg(long, global = true)]
    slic_iters: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    weight_decay: Option<f64>,
    #[arg(long, global = true)]
    norm_k: Option<f64>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    psi: Option<f64>,
    #[arg(long, global = true)]
    beta_max: Option<f64>,
    #[arg(long, global = true)]
    eta: Option<f64>,
    #[arg(long, global = true)]
    hidden: Option<usize>,
    #[arg(long, global = true)]
    state_dim: Option<usize>,
    #[arg(long, global = true)]
    chunk: Option<usize>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    full_covariance: bool,
    /// Encoder used for the detail map
    #[arg(long, global = true, value_enum)]
    encoder: Option<EncoderArg>,
    /// Skip scoring against a mask
    #[arg(long, global = true)]
    no_eval: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderArg {
    Original,
    Masked,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and its anomaly mask
    Synth,
    /// Segment a cube into regions
    Segment,
    /// Segment and train; writes a model checkpoint and the loss history
    Train,
    /// Score a cube with a trained model
    Detect {
        /// Checkpoint directory written by `train`
        #[arg(long)]
        model: PathBuf,
    },
    /// Global RX baseline
    Rx,
    /// ROC/AUC of a score map against a mask
    Eval {
        /// Score map (HSC1, f32)
        #[arg(long)]
        scores: PathBuf,
    },
    /// Segment, train, detect and evaluate
    Run,
    /// Repeat `run` over values of one parameter
    Sweep {
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    Psi,
    Beta,
    Eta,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::Psi => "psi",
            SweepParam::Beta => "beta",
            SweepParam::Eta => "eta",
        }
    }

    fn apply(self, cfg: &mut RunConfig, v: f64) {
        match self {
            SweepParam::Psi => cfg.psi = v,
            SweepParam::Beta => cfg.beta_max = v,
            SweepParam::Eta => cfg.eta = v,
        }
    }
}

fn resolve_config(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = o.$f.clone() { cfg.$f = v; })* };
    }
    set!(
        seed, out, height, width, bands, n_endmembers, n_anomalies, anomaly_fraction, noise_sigma, compactness,
        slic_iters, epochs, lr, weight_decay, psi, beta_max, eta, norm_k, hidden, state_dim, chunk
    );
    if o.cube.is_some() {
        cfg.cube = o.cube.clone();
    }
    if o.mask.is_some() {
        cfg.mask = o.mask.clone();
    }
    if o.threshold.is_some() {
        cfg.threshold = o.threshold;
    }
    if o.full_covariance {
        cfg.full_covariance = true;
    }
    if o.no_eval {
        cfg.evaluate = false;
    }
    if let Some(e) = o.encoder {
        cfg.encoder = match e {
            EncoderArg::Original => EncoderPath::Original,
            EncoderArg::Masked => EncoderPath::Masked,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("write: cannot create {}", cfg.out.display()))?;
    Ok(&cfg.out)
}

/// Scores against the mask; an all-tied score map is reported as 0.5.
fn score(scores: &[f64], mask: &GroundTruthMask) -> Result<RocCurve> {
    let roc = roc_curve(scores, mask).context("eval")?;
    if scores.iter().all(|&s| s == scores[0]) {
        eprintln!("warning: all scores are tied; AUC is 0.5 by convention");
    }
    Ok(roc)
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.scene_spec();
    let (cube, mask) = hsi::synth_scene(&spec).context("synth")?;
    let dir = out_dir(cfg)?;
    let (cp, mp) = (dir.join("cube.hsc"), dir.join("mask.hsc"));
    hsi::save_cube(&cube, &cp).context("write")?;
    hsi::save_mask(&mask, &mp).context("write")?;
    let n = mask.anomaly_count();
    println!("cube {}x{}x{} -> {}", cube.height(), cube.width(), cube.bands(), cp.display());
    println!("mask -> {}", mp.display());
    println!(
        "anomaly fraction {:.4} ({n} of {} pixels)",
        n as f64 / cube.n_pixels() as f64,
        cube.n_pixels()
    );
    Ok(())
}

fn prepared(cfg: &RunConfig) -> Result<(hsi::HsiCube, Option<GroundTruthMask>, RegionMap)> {
    let (cube, mask) = load_inputs(cfg)?;
    let cube = normalize(&cube);
    let map = segment(&cube, cfg)?;
    Ok((cube, mask, map))
}

fn cmd_segment(cfg: &RunConfig) -> Result<()> {
    let (cube, _, map) = prepared(&RunConfig {
        evaluate: false,
        ..cfg.clone()
    })?;
    let dir = out_dir(cfg)?;
    map.save(dir.join(files::REGIONS), dir.join(files::REGION_ORDER))
        .context("write")?;
    println!(
        "{} regions (target {}) for {} pixels",
        map.n_regions(),
        cfg.region_target(cube.n_pixels()),
        cube.n_pixels()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let (cube, _, map) = prepared(&RunConfig {
        evaluate: false,
        ..cfg.clone()
    })?;
    let repo = build_repository(&cube, &map).context("segment")?;
    let t0 = Instant::now();
    let (model, report) = train(&cube, &map, &repo, &cfg.train_config()).context("train")?;
    let secs = t0.elapsed().as_secs_f64();
    let dir = out_dir(cfg)?;
    report.write_csv(dir.join(files::LOSS)).context("write")?;
    save_checkpoint(&model, &dir.join(files::MODEL), pipeline::checkpoint_metadata(cfg)).context("write")?;
    if let Some(last) = report.last() {
        println!("epoch {} L_ori {:.6} L_mask {:.6}", last.epoch, last.l_ori, last.l_mask);
    }
    println!("{} regions, trained in {secs:.2}s -> {}", map.n_regions(), dir.join(files::MODEL).display());
    Ok(())
}

fn cmd_detect(cfg: &RunConfig, model_dir: &Path) -> Result<()> {
    let (cube, mask, map) = prepared(cfg)?;
    let (model, _) = load_checkpoint(model_dir).with_context(|| format!("detect: loading {}", model_dir.display()))?;
    let repo = build_repository(&cube, &map).context("segment")?;
    let det = pipeline::detect(&model, &cube, &repo, &map, cfg)?;
    let dir = out_dir(cfg)?;
    det.fused.save(dir.join(files::DETECTION)).context("write")?;
    println!("detection map -> {}", dir.join(files::DETECTION).display());
    if let Some(bin) = det.fused.binary() {
        let n = bin.iter().filter(|&&b| b).count();
        println!("{n} pixels above threshold {}", cfg.threshold.unwrap());
    }
    if let Some(mask) = mask {
        let roc = score(&det.fused.scores, &mask)?;
        roc.write_csv(dir.join(files::ROC)).context("write")?;
        println!("AUC {:.6}", roc.auc);
    }
    Ok(())
}

fn cmd_rx(cfg: &RunConfig) -> Result<()> {
    let (cube, mask) = load_inputs(cfg)?;
    let map: DetectionMap = rx_baseline(&normalize(&cube));
    let dir = out_dir(cfg)?;
    let path = dir.join("rx.hsc");
    map.save(&path).context("write")?;
    println!("rx map -> {}", path.display());
    if let Some(mask) = mask {
        let roc = score(&map.scores, &mask)?;
        roc.write_csv(dir.join("rx_roc.csv")).context("write")?;
        println!("AUC {:.6}", roc.auc);
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, scores: &Path) -> Result<()> {
    let Some(mask_path) = &cfg.mask else {
        bail!("eval: no mask given (use --mask)");
    };
    let (h, w, values) = hsi::load_score_map(scores).context("eval")?;
    let mask = hsi::load_mask(mask_path).with_context(|| format!("eval: mask {}", mask_path.display()))?;
    if (h, w) != (mask.height(), mask.width()) {
        bail!("eval: score map is {h}x{w}, mask is {}x{}", mask.height(), mask.width());
    }
    let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
    let labels: Vec<bool> = (0..v.len()).map(|p| mask.is_anomaly(p)).collect();
    let roc = roc_from_labels(&v, &labels).context("eval")?;
    let dir = out_dir(cfg)?;
    roc.write_csv(dir.join(files::ROC)).context("write")?;
    println!("AUC {:.6}", roc.auc);
    Ok(())
}

fn cmd_run(cfg: &RunConfig) -> Result<f64> {
    let (cube, mask) = load_inputs(cfg)?;
    let outcome = pipeline::run(&cube, mask.as_ref(), cfg)?;
    let dir = out_dir(cfg)?;
    pipeline::write_outputs(&outcome, cfg, dir)?;
    if outcome.detection.fused.scores.iter().all(|&s| s == outcome.detection.fused.scores[0]) && mask.is_some() {
        eprintln!("warning: all scores are tied; AUC is 0.5 by convention");
    }
    println!(
        "{} regions, train {:.2}s, detect {:.2}s",
        outcome.bench.n_regions, outcome.bench.train_seconds, outcome.bench.infer_seconds
    );
    println!("outputs -> {}", dir.display());
    match outcome.auc() {
        Some(a) => {
            println!("AUC {a:.6}");
            Ok(a)
        }
        None => Ok(f64::NAN),
    }
}

fn cmd_sweep(cfg: &RunConfig, param: SweepParam, values: &[f64]) -> Result<()> {
    let (cube, mask) = load_inputs(cfg)?;
    let Some(mask) = mask else {
        bail!("sweep: needs a mask to score runs");
    };
    let mut csv = String::from("param,value,auc,train_seconds\n");
    for &v in values {
        let mut c = cfg.clone();
        param.apply(&mut c, v);
        c.validate()?;
        let outcome = pipeline::run(&cube, Some(&mask), &c)?;
        let auc = outcome.auc().unwrap();
        println!("{} = {v}: AUC {auc:.6}, train {:.2}s", param.name(), outcome.bench.train_seconds);
        csv += &format!("{},{v},{auc},{}\n", param.name(), outcome.bench.train_seconds);
    }
    let dir = out_dir(cfg)?;
    let path = dir.join("sweep.csv");
    fs::write(&path, csv).with_context(|| format!("write: {}", path.display()))?;
    println!("sweep -> {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain joined with `: `, skipping causes already quoted by
/// the message above them.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out += ": ";
            }
            out += &msg;
        }
    }
    out
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.global)?;
    match cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Segment => cmd_segment(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Detect { model } => cmd_detect(&cfg, &model),
        Command::Rx => cmd_rx(&cfg),
        Command::Eval { scores } => cmd_eval(&cfg, &scores),
        Command::Run => cmd_run(&cfg).map(|_| ()),
        Command::Sweep { param, values } => cmd_sweep(&cfg, param, &values),
    }
}
