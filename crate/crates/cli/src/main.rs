use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::de::DeserializeOwned;

use nowcast_core::ablation::{desk_recipe, run_ablation, AblationData, AblationPlan};
use nowcast_core::ensemble::{equivariance_gap, EnsembleConfig, PRESET_NAMES};
use nowcast_core::flow::{audit_policy, block_matching_flow, motion_frames, AuditParams};
use nowcast_core::forecaster::{Forecaster, ModelParams};
use nowcast_core::geometry::{AugPolicy, GeomTransform};
use nowcast_core::gradcheck::{run_gradcheck, TOLERANCE};
use nowcast_core::metrics::{evaluate, rain_frequency_map, summary_csv, EvalReport, DEFAULT_PROB_THRESHOLD};
use nowcast_core::plots::{frequency_ppm, probability_ppm, render_flow_svg};
use nowcast_core::rng::{name_tag, stream_id};
use nowcast_core::synth::{build_benchmark, BenchmarkConfig, DatasetManifest, Split};
use nowcast_core::tensor::sigmoid;
use nowcast_core::trainer::{train_with_hook, TrainConfig};
use nowcast_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "nowcast", version, about = "Shift-robust nowcasting training toolkit")]
struct Cli {
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate the synthetic benchmark.
    GenData {
        /// Override the number of sequences in every region.
        #[arg(long)]
        sequences: Option<usize>,
    },
    /// Train the reference forecaster.
    Train(TrainArgs),
    /// Score a trained model.
    Eval {
        #[command(flatten)]
        data: DataModel,
        #[arg(long, default_value = "identity")]
        ensemble: String,
        #[arg(long, default_value_t = DEFAULT_PROB_THRESHOLD)]
        prob_threshold: f64,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Compare every ensemble preset on one split.
    TtaCompare {
        #[command(flatten)]
        data: DataModel,
        #[arg(long, default_value_t = DEFAULT_PROB_THRESHOLD)]
        prob_threshold: f64,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Check which transforms keep the training motion directions.
    AuditAug {
        #[arg(long)]
        data: PathBuf,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        /// Number of random loss instances.
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
    /// Component ablation over smoothing loss, augmentation and ensembling.
    Ablate {
        /// Benchmark directory; generated in memory when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of seeds per cell.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Emit rain-frequency, flow and probability figures.
    Plot {
        #[arg(long)]
        data: PathBuf,
        /// Trained model; enables probability maps.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Pixel upscaling of the PPM images.
        #[arg(long, default_value_t = 8)]
        scale: usize,
    },
}

#[derive(Args, Debug)]
struct DataModel {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    aug: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    pos_weight: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    features: Option<usize>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn config_or<T: DeserializeOwned>(path: Option<&Path>, default: impl FnOnce() -> T) -> Result<T> {
    path.map_or_else(|| Ok(default()), read_json)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn ensure_fresh(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn gen_data(cli: &Cli, sequences: Option<usize>) -> Result<()> {
    let mut cfg = config_or(cli.config.as_deref(), BenchmarkConfig::default_benchmark)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = sequences {
        for r in &mut cfg.regions {
            r.sequences = n;
        }
    }
    let m = build_benchmark(&cfg, &cli.out, cli.force)?;
    println!("wrote {} sequences to {}", m.files.len(), cli.out.display());
    Ok(())
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = config_or(cli.config.as_deref(), TrainConfig::default)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(v) = &a.aug {
        cfg.aug_policy = v.clone();
    }
    if let Some(v) = a.alpha {
        cfg.loss.alpha = v;
    }
    if let Some(v) = a.beta {
        cfg.loss.beta = v;
    }
    if let Some(v) = a.pos_weight {
        cfg.loss.pos_weight = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.features {
        cfg.features = v;
    }
    cfg.validate()?;
    let model_dir = cli.out.join("model");
    ensure_fresh(&model_dir, cli.force)?;

    let manifest = DatasetManifest::load(&a.data)?;
    let train_set = manifest.dataset(Split::Train)?;
    let val_set = manifest.dataset(Split::Val)?;
    let init = ModelParams::init(manifest.layout, cfg.features, stream_id(&[cfg.seed, name_tag("init")]))?
        .with_dropout(cfg.dropout_rate);
    info!("training {} parameters on {} sequences", init.parameter_count(), train_set.len());

    let every = cfg.checkpoint_every;
    let (model, log) = train_with_hook(init, &train_set, &val_set, &cfg, |epoch, params| {
        if every > 0 && (epoch + 1) % every == 0 {
            params.save(cli.out.join("checkpoints").join(format!("epoch_{:03}", epoch + 1)))?;
        }
        Ok(())
    })?;
    model.save(&model_dir)?;
    write(&cli.out.join("train_log.csv"), log.to_csv())?;
    write(&cli.out.join("train_config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    if let Some(last) = log.rows.last() {
        println!("final train total {:.6}, val total {:.6}", last.total, last.val_total);
    }
    Ok(())
}

fn fmt_miou(r: &EvalReport) -> String {
    r.miou().map_or("undefined".into(), |v| format!("{:.2}", 100.0 * v))
}

fn load_pair(d: &DataModel) -> Result<(DatasetManifest, ModelParams)> {
    let manifest = DatasetManifest::load(&d.data)?;
    let model = ModelParams::load(&d.model)?;
    if model.layout != manifest.layout {
        return Err(Error::Config(format!(
            "model layout {:?} does not match dataset layout {:?}",
            model.layout, manifest.layout
        )));
    }
    Ok((manifest, model))
}

fn eval_cmd(cli: &Cli, d: &DataModel, ensemble: &str, thr: f64, split: Split) -> Result<()> {
    let ens = EnsembleConfig::preset(ensemble)?;
    let (manifest, model) = load_pair(d)?;
    let data = manifest.dataset(split)?;
    let report = evaluate(&model, &data.samples, Some(&ens), thr)?;
    write(&cli.out.join("eval.csv"), report.to_csv())?;
    write(&cli.out.join("summary.csv"), summary_csv(&[(ensemble.to_string(), report.clone())]))?;
    println!("{} mIoU ({ensemble}, threshold {thr}): {}", split.name(), fmt_miou(&report));
    Ok(())
}

fn tta_compare(cli: &Cli, d: &DataModel, thr: f64, split: Split) -> Result<()> {
    let (manifest, model) = load_pair(d)?;
    let data = manifest.dataset(split)?;
    let mut rows = Vec::new();
    for name in PRESET_NAMES {
        let report = evaluate(&model, &data.samples, Some(&EnsembleConfig::preset(name)?), thr)?;
        println!("{name:>10}: mIoU {}", fmt_miou(&report));
        rows.push((name.to_string(), report));
    }
    let mut gaps = String::from("transform,mean_abs_gap\n");
    for g in GeomTransform::ALL {
        let mut total = 0.0;
        for s in &data.samples {
            total += equivariance_gap(&model, &s.input, g)?;
        }
        gaps.push_str(&format!("{g},{:.6e}\n", total / data.len() as f64));
    }
    write(&cli.out.join("tta_summary.csv"), summary_csv(&rows))?;
    write(&cli.out.join("equivariance_gap.csv"), gaps)?;
    Ok(())
}

fn audit_cmd(cli: &Cli, data: &Path) -> Result<()> {
    let params: AuditParams = config_or(cli.config.as_deref(), AuditParams::default)?;
    let manifest = DatasetManifest::load(data)?;
    let report = audit_policy(&manifest, &AugPolicy::paper(), &params)?;
    for w in &report.warnings {
        eprintln!("{w}");
    }
    write(&cli.out.join("audit.csv"), report.to_csv(&params))?;
    for r in &report.regions {
        let ok: Vec<String> = r.verdicts.iter().filter(|v| v.1).map(|v| v.0.to_string()).collect();
        println!("{}: admissible {}", r.region, ok.join(" "));
    }
    Ok(())
}

fn gradcheck_cmd(cli: &Cli, instances: usize) -> Result<bool> {
    let r = run_gradcheck(instances, cli.seed.unwrap_or(0))?;
    println!("instances {}", r.instances);
    for (name, v) in [
        ("bce", r.bce),
        ("spatial", r.spatial),
        ("temporal", r.temporal),
        ("total", r.total),
        ("model", r.model),
    ] {
        println!("{name:>9}: max rel err {v:.3e}");
    }
    println!("{} (tolerance {TOLERANCE:e})", if r.passed() { "PASS" } else { "FAIL" });
    Ok(r.passed())
}

fn ablate_cmd(cli: &Cli, data: Option<&Path>, seeds: u64, epochs: Option<usize>, lr: Option<f64>) -> Result<()> {
    let mut plan: AblationPlan = config_or(cli.config.as_deref(), || {
        AblationPlan::new(desk_recipe(), (0..seeds).collect())
    })?;
    if let Some(s) = cli.seed {
        plan.seeds = (0..seeds).map(|k| s + k).collect();
    }
    if let Some(e) = epochs {
        plan.train.epochs = e;
    }
    if let Some(v) = lr {
        plan.train.lr = v;
    }
    let (train, val, test) = match data {
        Some(dir) => {
            let m = DatasetManifest::load(dir)?;
            (m.dataset(Split::Train)?, m.dataset(Split::Val)?, m.dataset(Split::Test)?)
        }
        None => {
            let b = BenchmarkConfig::default_benchmark();
            (b.dataset(Split::Train)?, b.dataset(Split::Val)?, b.dataset(Split::Test)?)
        }
    };
    let result = run_ablation(&plan, &AblationData { train: &train, val: &val, test: &test }, Some(&cli.out))?;
    print!("{}", result.summary_csv());
    Ok(())
}

fn plot_cmd(cli: &Cli, data: &Path, model: Option<&Path>, scale: usize) -> Result<()> {
    let manifest = DatasetManifest::load(data)?;
    let model = model.map(ModelParams::load).transpose()?;
    let params = AuditParams::default();
    let dir = cli.out.join("plots");
    for r in &manifest.regions {
        let id = &r.spec.region_id;
        let freq = rain_frequency_map(&manifest, id)?;
        write(&dir.join(format!("freq_{id}.ppm")), frequency_ppm(&freq, scale)?)?;
        let Some(first) = manifest.files_for(id, r.split).next() else {
            continue;
        };
        let input = manifest.read_input(first)?;
        let (a, b) = motion_frames(&input)?;
        let flow = block_matching_flow(&a, &b, &params.matching)?;
        let svg = render_flow_svg(&flow, params.matching.block, scale as f64, 1.0);
        write(&dir.join(format!("flow_{id}.svg")), svg)?;
        if let Some(m) = &model {
            let prob = sigmoid(&m.logits(&input)?);
            let label = manifest.read_label(first)?;
            let img = probability_ppm(&prob.plane(0)?, DEFAULT_PROB_THRESHOLD, Some(&label.plane(0)?), scale)?;
            write(&dir.join(format!("prob_{id}.ppm")), img)?;
        }
    }
    println!("wrote figures to {}", dir.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        nowcast_core::set_threads(n)?;
    }
    match &cli.cmd {
        Cmd::GenData { sequences } => gen_data(cli, *sequences)?,
        Cmd::Train(a) => train_cmd(cli, a)?,
        Cmd::Eval {
            data,
            ensemble,
            prob_threshold,
            split,
        } => eval_cmd(cli, data, ensemble, *prob_threshold, *split)?,
        Cmd::TtaCompare {
            data,
            prob_threshold,
            split,
        } => tta_compare(cli, data, *prob_threshold, *split)?,
        Cmd::AuditAug { data } => audit_cmd(cli, data)?,
        Cmd::Gradcheck { seeds } => return gradcheck_cmd(cli, *seeds),
        Cmd::Ablate {
            data,
            seeds,
            epochs,
            lr,
        } => ablate_cmd(cli, data.as_deref(), *seeds, *epochs, *lr)?,
        Cmd::Plot { data, model, scale } => plot_cmd(cli, data, model.as_deref(), *scale)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
