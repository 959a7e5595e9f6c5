use crate::config::ConfigFile;
use crate::{
    AblationArgs, AugmentArgs, Cli, Command, EvalArgs, HyperArgs, PredictArgs, SplitArgs, SynthArgs, TrainArgs,
    VerifyArgs,
};
use anyhow::{anyhow, Context, Result};
use ducknet::blocks::BlockKind;
use ducknet::data::io::write_atomic;
use ducknet::data::synth::{synth_dataset, write_dataset};
use ducknet::data::{split_dataset, AugmentConfig, Dataset, Sample, Section, SplitManifest};
use ducknet::metrics::{self, MetricsReport, DEFAULT_THRESHOLD};
use ducknet::net::{predict_file, Checkpoint, DuckNet, NetSpec, TrainConfig, TrainOutcome, Trainer};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Failures that are not library errors but still map to exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

/// 3 for numerical failures anywhere in the chain, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<ducknet::Error>(),
            Some(ducknet::Error::NonFinite { .. })
        )
    });
    if numerical {
        3
    } else {
        2
    }
}

/// The error chain joined by ": ", skipping causes a parent already quotes.
pub fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if out.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("DUCKNET_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("DUCKNET_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(format!("cannot size the worker pool: {e}")))
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    init_threads()?;
    let cfg = match &cli.config {
        Some(path) => ConfigFile::load(path).map_err(|e| usage(describe(&e)))?,
        None => ConfigFile::default(),
    };
    let with_cfg = |r: Result<()>| r.map_err(|e| usage(format!("config: {}", describe(&e))));
    match cli.command {
        Command::Split(mut a) => {
            with_cfg(cfg.fill(&mut a.seed, "seed").and_then(|_| cfg.finish()))?;
            split(a)
        }
        Command::Train(mut a) => {
            with_cfg(fill_train(&cfg, &mut a))?;
            train(a)
        }
        Command::Eval(mut a) => {
            with_cfg(
                cfg.fill(&mut a.section, "section")
                    .and_then(|_| cfg.fill(&mut a.threshold, "threshold"))
                    .and_then(|_| cfg.finish()),
            )?;
            eval(a)
        }
        Command::Predict(mut a) => {
            with_cfg(cfg.fill(&mut a.threshold, "threshold").and_then(|_| cfg.finish()))?;
            predict(a)
        }
        Command::Verify(a) => {
            with_cfg(cfg.finish())?;
            verify(a)
        }
        Command::Ablation(mut a) => {
            with_cfg(fill_hyper(&cfg, &mut a.hyper).and_then(|_| cfg.finish()))?;
            ablation(a)
        }
        Command::Synth(mut a) => {
            with_cfg(
                cfg.fill(&mut a.count, "count")
                    .and_then(|_| cfg.fill(&mut a.size, "size"))
                    .and_then(|_| cfg.fill(&mut a.seed, "seed"))
                    .and_then(|_| cfg.finish()),
            )?;
            synth(a)
        }
    }
}

fn fill_train(cfg: &ConfigFile, a: &mut TrainArgs) -> Result<()> {
    cfg.fill(&mut a.block, "block")?;
    fill_hyper(cfg, &mut a.hyper)?;
    cfg.finish()
}

fn fill_hyper(cfg: &ConfigFile, h: &mut HyperArgs) -> Result<()> {
    cfg.fill(&mut h.filters, "filters")?;
    cfg.fill(&mut h.depth, "depth")?;
    cfg.fill(&mut h.epochs, "epochs")?;
    cfg.fill(&mut h.seed, "seed")?;
    cfg.fill(&mut h.lr, "lr")?;
    cfg.fill(&mut h.batch_size, "batch-size")?;
    cfg.fill(&mut h.size, "size")?;
    cfg.fill(&mut h.augment, "augment")?;
    cfg.fill(&mut h.threshold, "threshold")?;
    let g = &mut h.aug;
    cfg.fill(&mut g.flip_h_prob, "flip-h-prob")?;
    cfg.fill(&mut g.flip_v_prob, "flip-v-prob")?;
    cfg.fill(&mut g.brightness_min, "brightness-min")?;
    cfg.fill(&mut g.brightness_max, "brightness-max")?;
    cfg.fill(&mut g.contrast, "contrast")?;
    cfg.fill(&mut g.saturation, "saturation")?;
    cfg.fill(&mut g.hue, "hue")?;
    cfg.fill(&mut g.rotation_min, "rotation-min")?;
    cfg.fill(&mut g.rotation_max, "rotation-max")?;
    cfg.fill(&mut g.translate_min, "translate-min")?;
    cfg.fill(&mut g.translate_max, "translate-max")?;
    cfg.fill(&mut g.scale_min, "scale-min")?;
    cfg.fill(&mut g.scale_max, "scale-max")?;
    cfg.fill(&mut g.shear_min, "shear-min")?;
    cfg.fill(&mut g.shear_max, "shear-max")
}

fn augment_config(g: &AugmentArgs) -> AugmentConfig {
    let d = AugmentConfig::default();
    AugmentConfig {
        flip_h_prob: g.flip_h_prob.unwrap_or(d.flip_h_prob),
        flip_v_prob: g.flip_v_prob.unwrap_or(d.flip_v_prob),
        brightness: (
            g.brightness_min.unwrap_or(d.brightness.0),
            g.brightness_max.unwrap_or(d.brightness.1),
        ),
        contrast: g.contrast.unwrap_or(d.contrast),
        saturation: g.saturation.unwrap_or(d.saturation),
        hue: g.hue.unwrap_or(d.hue),
        rotation_deg: (
            g.rotation_min.unwrap_or(d.rotation_deg.0),
            g.rotation_max.unwrap_or(d.rotation_deg.1),
        ),
        translate: (
            g.translate_min.unwrap_or(d.translate.0),
            g.translate_max.unwrap_or(d.translate.1),
        ),
        scale: (g.scale_min.unwrap_or(d.scale.0), g.scale_max.unwrap_or(d.scale.1)),
        shear_deg: (
            g.shear_min.unwrap_or(d.shear_deg.0),
            g.shear_max.unwrap_or(d.shear_deg.1),
        ),
    }
}

/// Resolved network spec and training configuration.
fn resolve(h: &HyperArgs, block: BlockKind) -> Result<(NetSpec, TrainConfig)> {
    let d = TrainConfig::default();
    let side = h.size.unwrap_or(NetSpec::DEFAULT_INPUT);
    let spec = NetSpec::new(h.filters.unwrap_or(17), (side, side))
        .with_depth(h.depth.unwrap_or(NetSpec::DEFAULT_DEPTH))
        .with_block(block);
    spec.validate()?;
    let cfg = TrainConfig {
        lr: h.lr.unwrap_or(d.lr),
        batch_size: h.batch_size.unwrap_or(d.batch_size),
        epochs: h.epochs.unwrap_or(d.epochs),
        input_size: (side, side),
        seed: h.seed.unwrap_or(d.seed),
        augment: h.augment.unwrap_or(d.augment),
        augment_cfg: augment_config(&h.aug),
        smooth: d.smooth,
        threshold: h.threshold.unwrap_or(d.threshold),
    };
    cfg.validate()?;
    Ok((spec, cfg))
}

fn parse_block(name: Option<&str>) -> Result<BlockKind> {
    match name.unwrap_or("duck") {
        "duck" => Ok(BlockKind::Duck),
        "simple" => Ok(BlockKind::SimpleDouble),
        other => Err(usage(format!("--block must be duck or simple, got {other:?}"))),
    }
}

fn parse_section(name: Option<&str>) -> Result<Section> {
    Ok(name.unwrap_or("test").parse::<Section>()?)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn split(a: SplitArgs) -> Result<ExitCode> {
    let ds = Dataset::open(&a.data)?;
    let manifest = split_dataset(&ds.ids(), a.seed.unwrap_or(0))?;
    manifest.write(&a.out)?;
    eprintln!(
        "{} samples: {} train, {} val, {} test",
        ds.len(),
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len()
    );
    Ok(ExitCode::SUCCESS)
}

/// Loads the train and val sections at the network's input size.
fn load_training(data: &Path, split: &Path, size: (usize, usize)) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let ds = Dataset::open(data)?;
    let manifest = SplitManifest::read(split)?;
    let train = ds.load_all(manifest.section(Section::Train), Some(size))?;
    let val = ds.load_all(manifest.section(Section::Val), Some(size))?;
    Ok((train, val))
}

fn fit(spec: NetSpec, cfg: TrainConfig, train: &[Sample], val: &[Sample], label: &str) -> Result<TrainOutcome> {
    let mut net = DuckNet::<f32>::new(spec, cfg.seed)?;
    let epochs = cfg.epochs;
    let mut trainer = Trainer::new(&mut net, cfg)?;
    let outcome = trainer.fit_with(train, val, |r| {
        eprintln!(
            "{label}epoch {}/{epochs} loss {:.6} val_dice {:.4}",
            r.epoch, r.train_loss, r.val_dice
        );
    })?;
    eprintln!(
        "{label}best epoch {} val_dice {:.4}",
        outcome.best_epoch, outcome.best_val_dice
    );
    Ok(outcome)
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let block = parse_block(a.block.as_deref())?;
    let (spec, cfg) = resolve(&a.hyper, block)?;
    let (train, val) = load_training(&a.data, &a.split, cfg.input_size)?;
    let outcome = fit(spec, cfg, &train, &val, "")?;
    outcome.best.save(&a.out)?;
    outcome.last.save(&with_suffix(&a.out, ".last"))?;
    let history = a.history.unwrap_or_else(|| with_suffix(&a.out, ".history"));
    write_atomic(&history, outcome.history.to_text().as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let section = parse_section(a.section.as_deref())?;
    let mut net = Checkpoint::load(&a.ckpt)?.to_network::<f32>()?;
    let ds = Dataset::open(&a.data)?;
    let manifest = SplitManifest::read(&a.split)?;
    let samples = ds.load_all(manifest.section(section), Some(net.spec().input_size))?;
    let report = metrics::evaluate(&mut net, &samples, a.threshold.unwrap_or(DEFAULT_THRESHOLD))?;
    write_atomic(&a.report, report.to_table().as_bytes())?;
    if let Some(csv) = &a.csv {
        write_atomic(csv, report.to_csv().as_bytes())?;
    }
    eprintln!("{} images, mean dice {:.4}", report.n(), report.mean[0]);
    Ok(ExitCode::SUCCESS)
}

fn predict(a: PredictArgs) -> Result<ExitCode> {
    let mut net = Checkpoint::load(&a.ckpt)?.to_network::<f32>()?;
    let panel = a.panel.as_deref().map(|p| (p, a.gt.as_deref()));
    predict_file(
        &mut net,
        &a.image,
        &a.out,
        panel,
        a.threshold.unwrap_or(DEFAULT_THRESHOLD),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn verify(a: VerifyArgs) -> Result<ExitCode> {
    let report = ducknet::verify::run_suite(a.suite)?;
    print!("{report}");
    Ok(if report.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn ablation(a: AblationArgs) -> Result<ExitCode> {
    let ds = Dataset::open(&a.data)?;
    let manifest = SplitManifest::read(&a.split)?;
    let mut reports: Vec<(String, MetricsReport)> = Vec::new();
    for (name, kind) in [("duck", BlockKind::Duck), ("simple", BlockKind::SimpleDouble)] {
        let (spec, cfg) = resolve(&a.hyper, kind)?;
        let size = cfg.input_size;
        let threshold = cfg.threshold;
        let train = ds.load_all(manifest.section(Section::Train), Some(size))?;
        let val = ds.load_all(manifest.section(Section::Val), Some(size))?;
        let test = ds.load_all(manifest.section(Section::Test), Some(size))?;
        let outcome = fit(spec, cfg, &train, &val, &format!("[{name}] "))?;
        let mut net = outcome.best.to_network::<f32>()?;
        let report = metrics::evaluate(&mut net, &test, threshold)?;
        reports.push((format!("{name} F={}", spec.filters), report));
    }
    let rows: Vec<(String, &MetricsReport)> = reports.iter().map(|(n, r)| (n.clone(), r)).collect();
    let table = metrics::comparison_table(&rows);
    write_atomic(&a.out, table.as_bytes())?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    let side = a.size.unwrap_or(64);
    if side == 0 {
        return Err(usage("--size must be positive"));
    }
    let samples = synth_dataset(a.seed.unwrap_or(0), a.count.unwrap_or(8), (side, side));
    write_dataset(&a.out, &samples).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(ExitCode::SUCCESS)
}
