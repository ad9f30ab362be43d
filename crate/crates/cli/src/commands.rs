use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use log::info;
use stormseg::data::{
    format_timestamp, rasterize_labels, split_by_year, stack_temporal, synth_dataset, timestamp_stem, DatasetSplit,
    GridFrame, GridSpec, LabelTable, Mask, Sample, SynthParams, YearAssignment,
};
use stormseg::kv::KvWriter;
use stormseg::loss::MetricsReport;
use stormseg::roi::{
    benchmark, extract_rois, threshold_mask, write_overlay, write_rois_csv, Inference, Overlay, RoiBox,
    FRAMES_PER_MONTH,
};
use stormseg::train::{evaluate_checkpoint, train_with_hook, EpochControl};
use stormseg::unet::{Checkpoint, Preset};
use stormseg::{parallel, Error, Result, Rng};

use crate::config::{RunConfig, KEYS};
use crate::dataset::{self, create_dir};
use crate::{
    BenchArgs, Cli, Command, EvalArgs, GlobalArgs, GridChoice, InferArgs, OverlayChoice, RasterizeArgs,
    ReportFormat, SplitArgs, Subset, SynthArgs, TrainArgs,
};

pub const THREADS_ENV: &str = "STORMSEG_THREADS";

/// Worker count: one when deterministic, otherwise the machine's parallelism
/// capped by `STORMSEG_THREADS`.
fn configure_threads(deterministic: bool) -> Result<usize> {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?,
        Err(_) => available,
    };
    let n = if deterministic { 1 } else { cap.min(available) };
    Ok(parallel::set_threads(n))
}

fn load_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(g.config.as_deref(), g.preset.as_deref())?;
    if let Some(seed) = g.seed {
        cfg.train.seed = seed;
    }
    if let Some(t) = g.threshold {
        cfg.train.threshold = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let threads = configure_threads(cli.global.deterministic)?;
    log::debug!("using {threads} worker thread(s)");
    let out = cli.global.out.clone();
    match cli.command {
        Command::Synth(a) => synth(&cfg, a, out),
        Command::Rasterize(a) => rasterize(&cfg, a, out),
        Command::Split(a) => split(&cfg, a, out),
        Command::Train(a) => train(cfg, a, out),
        Command::Eval(a) => eval(&cfg, a, out),
        Command::Infer(a) => infer(&cfg, a, out),
        Command::Bench(a) => bench(&cfg, a),
        Command::Config(a) => {
            if a.keys {
                for (k, doc) in KEYS {
                    println!("{k:<18} {doc}");
                }
            } else {
                print!("{}", cfg.to_text());
            }
            Ok(())
        }
    }
}

fn synth(cfg: &RunConfig, a: SynthArgs, out: Option<PathBuf>) -> Result<()> {
    let out = out.ok_or_else(|| Error::Config("synth needs --out DIR".into()))?;
    if a.scenes == 0 {
        return Err(Error::Config("--scenes must be >= 1".into()));
    }
    if a.years.is_empty() {
        return Err(Error::Config("--years must list at least one year".into()));
    }
    if a.size < 32 {
        return Err(Error::Config("--size must be >= 32".into()));
    }
    let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
    for i in 0..a.scenes {
        *counts.entry(a.years[i % a.years.len()]).or_default() += 1;
    }
    let counts: Vec<(i32, usize)> = counts.into_iter().collect();
    let spec = GridSpec::regional(a.size, a.size, 40.0, 120.0, -0.5, 0.5);
    let params = SynthParams {
        cadence: cfg.cadence(),
        ..SynthParams::default()
    };
    let mut rng = Rng::new(cfg.train.seed);
    let scenes = synth_dataset(&mut rng, &spec, &counts, &params)?;

    let frames = dataset::frames_dir(&out);
    create_dir(&frames)?;
    let mut labels = LabelTable::default();
    for scene in &scenes {
        for f in &scene.frames {
            f.write(&dataset::frame_path(&frames, f.timestamp))?;
        }
        labels.extend(scene.labels.clone());
    }
    labels.write(&dataset::labels_path(&out))?;
    println!(
        "wrote {} scenes ({} frames, {} label records) to {}",
        scenes.len(),
        scenes.len() * 3,
        labels.len(),
        out.display()
    );
    Ok(())
}

fn rasterize(cfg: &RunConfig, a: RasterizeArgs, out: Option<PathBuf>) -> Result<()> {
    let box_size = a.box_size.unwrap_or(cfg.box_size);
    if box_size == 0 {
        return Err(Error::Config("--box must be >= 1".into()));
    }
    let wind_min = match &a.wind_min {
        Some(v) => crate::config::parse_wind(v)?,
        None => cfg.wind_min,
    };
    let labels = LabelTable::read(&a.labels.unwrap_or_else(|| dataset::labels_path(&a.data)))?;
    let masks = out.unwrap_or_else(|| dataset::masks_dir(&a.data));
    create_dir(&masks)?;

    let targets: Vec<(DateTime<Utc>, GridSpec)> = match a.grid {
        GridChoice::Frames => dataset::read_frames(&dataset::frames_dir(&a.data))?
            .into_iter()
            .map(|f| (f.timestamp, f.spec))
            .collect(),
        GridChoice::Gfs => {
            let mut times: Vec<DateTime<Utc>> = labels.records.iter().map(|r| r.timestamp).collect();
            times.sort();
            times.dedup();
            times.into_iter().map(|t| (t, GridSpec::gfs())).collect()
        }
    };
    let (mut drawn, mut skipped, mut pixels) = (0, 0, 0);
    for (t, spec) in &targets {
        let r = rasterize_labels(&labels.at(*t), spec, box_size, wind_min)?;
        drawn += r.drawn;
        skipped += r.skipped;
        let mask = Mask::new(*spec, *t, r.mask)?;
        pixels += mask.count();
        mask.write(&dataset::mask_path(&masks, *t))?;
    }
    println!(
        "wrote {} masks to {}: {drawn} boxes drawn, {skipped} records off-grid, {pixels} positive pixels",
        targets.len(),
        masks.display()
    );
    Ok(())
}

fn year_assignment(cfg: &RunConfig, a: &SplitArgs) -> YearAssignment {
    YearAssignment::new(
        a.train_years.clone().unwrap_or_else(|| cfg.train_years.clone()),
        a.val_years.clone().unwrap_or_else(|| cfg.val_years.clone()),
        a.test_years.clone().unwrap_or_else(|| cfg.test_years.clone()),
    )
}

fn split(cfg: &RunConfig, a: SplitArgs, out: Option<PathBuf>) -> Result<()> {
    let years = year_assignment(cfg, &a);
    years.validate().map_err(|e| Error::Config(e.to_string()))?;
    let frames = dataset::read_frames(&dataset::frames_dir(&a.data))?;
    let stacks = stack_temporal(&frames, cfg.cadence())?;
    let mut rows = Vec::with_capacity(stacks.len());
    let mut unassigned = std::collections::BTreeSet::new();
    for s in &stacks {
        let year = chrono::Datelike::year(&s.timestamp);
        match years.split_of(year) {
            Some(name) => rows.push((s.timestamp, name)),
            None => {
                unassigned.insert(year);
            }
        }
    }
    if !unassigned.is_empty() {
        let list: Vec<String> = unassigned.iter().map(i32::to_string).collect();
        return Err(Error::Config(format!("no split assigned for year(s) {}", list.join(", "))));
    }
    let path = out.unwrap_or_else(|| dataset::split_path(&a.data));
    dataset::write_split(&path, &rows)?;
    let count = |n: &str| rows.iter().filter(|(_, s)| *s == n).count();
    println!(
        "wrote {}: train {}, validation {}, test {}",
        path.display(),
        count("train"),
        count("validation"),
        count("test")
    );
    Ok(())
}

/// Loads and partitions the dataset: an explicit split table, then
/// DIR/split.csv, then the configured years.
fn load_split(cfg: &RunConfig, data: &Path, table: Option<&Path>) -> Result<DatasetSplit> {
    let samples = dataset::load_samples(data, cfg.cadence())?;
    let default_table = dataset::split_path(data);
    let table = match table {
        Some(p) => Some(p.to_path_buf()),
        None if default_table.exists() => Some(default_table),
        None => None,
    };
    match table {
        Some(p) => dataset::apply_split(samples, &dataset::read_split(&p)?),
        None => {
            let years = YearAssignment::new(
                cfg.train_years.clone(),
                cfg.val_years.clone(),
                cfg.test_years.clone(),
            );
            split_by_year(samples, &years)
        }
    }
}

fn train(mut cfg: RunConfig, a: TrainArgs, out: Option<PathBuf>) -> Result<()> {
    if let Some(n) = a.epochs {
        cfg.train.max_epochs = n;
    }
    if let Some(n) = a.batch_size {
        cfg.train.batch_size = n;
    }
    if let Some(lr) = a.learning_rate {
        cfg.train.optimizer.learning_rate = lr;
    }
    cfg.validate()?;
    let out = out.unwrap_or_else(|| PathBuf::from("run"));
    let split = load_split(&cfg, &a.data, a.split.as_deref())?;
    let first = split
        .train
        .first()
        .ok_or_else(|| Error::Contract("the training split is empty".into()))?;
    let mut model = cfg.model.clone();
    model.input_height = first.height();
    model.input_width = first.width();
    info!(
        "training on {} samples, validating on {} ({}x{}, depth {}, base {})",
        split.train.len(),
        split.validation.len(),
        model.input_width,
        model.input_height,
        model.depth,
        model.base_channels
    );
    let outcome = train_with_hook(&cfg.train, model, &split.train, &split.validation, |r| {
        info!(
            "epoch {:>3}  train loss {:.4}  val loss {:.4}  val dice {:.4}  val acc {:.4}  {:.1}s",
            r.epoch, r.train_loss, r.val_loss, r.val_dice, r.val_accuracy, r.seconds
        );
        EpochControl::Continue
    })?;
    create_dir(&out)?;
    let ckpt_path = out.join("model.ckpt");
    let history_path = out.join("history.csv");
    outcome.checkpoint.save(&ckpt_path)?;
    outcome.history.write(&history_path)?;
    let h = &outcome.checkpoint.history;
    println!(
        "stopped after {} epochs ({:?}); best epoch {} with validation loss {:.6}",
        h.epochs_run, outcome.stop, h.best_epoch, h.best_val_loss
    );
    println!("wrote {} and {}", ckpt_path.display(), history_path.display());
    Ok(())
}

fn subset_samples(split: DatasetSplit, subset: Subset) -> Vec<Sample> {
    match subset {
        Subset::Train => split.train,
        Subset::Validation => split.validation,
        Subset::Test => split.test,
        Subset::All => split.train.into_iter().chain(split.validation).chain(split.test).collect(),
    }
}

fn subset_name(s: Subset) -> &'static str {
    match s {
        Subset::Train => "train",
        Subset::Validation => "validation",
        Subset::Test => "test",
        Subset::All => "all",
    }
}

/// `key = value` form of an evaluation, parseable with [`stormseg::kv::KeyValues`].
pub fn metrics_kv(subset: &str, samples: usize, loss: &str, threshold: f64, m: &MetricsReport, binarized: bool) -> String {
    let mut w = KvWriter::new();
    w.put("subset", subset)
        .put("samples", samples)
        .put("pixels", m.pixels)
        .put("threshold", threshold)
        .put("loss_kind", loss)
        .put("loss", m.loss_value)
        .put("accuracy", m.accuracy)
        .put("dice", m.dice_coefficient)
        .put("tversky", m.tversky_coefficient);
    if binarized {
        w.put("hard_dice", m.hard_dice).put("hard_tversky", m.hard_tversky);
    }
    w.finish()
}

fn eval(cfg: &RunConfig, a: EvalArgs, out: Option<PathBuf>) -> Result<()> {
    let ckpt = Checkpoint::<f32>::load(&a.checkpoint)?;
    let batch = a.batch_size.unwrap_or(cfg.train.batch_size);
    if batch == 0 {
        return Err(Error::Config("--batch-size must be >= 1".into()));
    }
    let samples = subset_samples(load_split(cfg, &a.data, a.split.as_deref())?, a.subset);
    if samples.is_empty() {
        return Err(Error::Contract(format!("the {} subset is empty", subset_name(a.subset))));
    }
    let threshold = cfg.train.threshold;
    let m = evaluate_checkpoint(&ckpt, &samples, batch, threshold)?;
    let loss = ckpt.model.config().loss.kind.to_string();
    if matches!(a.format, ReportFormat::Human | ReportFormat::Both) {
        println!("{} subset: {} samples, {} pixels", subset_name(a.subset), samples.len(), m.pixels);
        println!("  loss ({loss}):      {:.6}", m.loss_value);
        println!("  pixel accuracy:    {:.6}", m.accuracy);
        println!("  dice coefficient:  {:.6}", m.dice_coefficient);
        println!("  tversky coeff.:    {:.6}", m.tversky_coefficient);
        if a.binarized {
            println!("  hard dice:         {:.6}", m.hard_dice);
            println!("  hard tversky:      {:.6}", m.hard_tversky);
        }
    }
    let kv = metrics_kv(subset_name(a.subset), samples.len(), &loss, threshold, &m, a.binarized);
    if a.format == ReportFormat::Both {
        println!();
    }
    if matches!(a.format, ReportFormat::Kv | ReportFormat::Both) {
        print!("{kv}");
    }
    if let Some(dir) = out {
        create_dir(&dir)?;
        let path = dir.join("metrics.txt");
        std::fs::write(&path, &kv).map_err(|e| Error::Io { path, source: e })?;
    }
    Ok(())
}

fn infer(cfg: &RunConfig, a: InferArgs, out: Option<PathBuf>) -> Result<()> {
    let tau = a.tau.unwrap_or(cfg.tau);
    let min_area = a.min_area.unwrap_or(cfg.min_area);
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config("--tau must lie in (0, 1]".into()));
    }
    if min_area == 0 {
        return Err(Error::Config("--min-area must be >= 1".into()));
    }
    let ckpt = Checkpoint::<f32>::load(&a.checkpoint)?;
    let model = Inference::new(&ckpt);
    let frames = dataset::read_frames(&a.frames)?;
    let stacks = stack_temporal(&frames, cfg.cadence())?;
    if stacks.is_empty() {
        return Err(Error::Contract("no frame has two predecessors on the cadence".into()));
    }
    let out = out.unwrap_or_else(|| PathBuf::from("infer"));
    let prob_dir = out.join("prob");
    create_dir(&prob_dir)?;
    let overlay_dir = out.join("overlays");
    if a.overlay != OverlayChoice::None {
        create_dir(&overlay_dir)?;
    }
    let mut rows: Vec<(DateTime<Utc>, RoiBox)> = Vec::new();
    for s in &stacks {
        let probs = model.predict_raw(&s.spec, &s.data)?;
        let prob = GridFrame::new(s.spec, s.timestamp, probs)?;
        prob.write(&dataset::frame_path(&prob_dir, s.timestamp))?;
        let rois = extract_rois(&threshold_mask(&prob, tau)?, &prob, min_area)?;
        let newest = frames
            .iter()
            .find(|f| f.timestamp == s.timestamp)
            .expect("stacked timestamps come from the frames");
        let overlay = match a.overlay {
            OverlayChoice::None => None,
            OverlayChoice::Boxes => Some(Overlay::Boxes(&rois)),
            OverlayChoice::Probability => Some(Overlay::Probability(&prob)),
        };
        if let Some(o) = overlay {
            let path = overlay_dir.join(format!("{}.ppm", timestamp_stem(s.timestamp)));
            write_overlay(&path, newest, o)?;
        }
        info!("{}: {} ROI(s)", format_timestamp(s.timestamp), rois.len());
        rows.extend(rois.into_iter().map(|r| (s.timestamp, r)));
    }
    let csv_path = out.join("rois.csv");
    let file = File::create(&csv_path).map_err(|e| Error::Io {
        path: csv_path.clone(),
        source: e,
    })?;
    write_rois_csv(BufWriter::new(file), &rows)?;
    println!(
        "{} frame(s), {} ROI(s) at tau {tau}; wrote {}",
        stacks.len(),
        rows.len(),
        out.display()
    );
    Ok(())
}

fn bench(cfg: &RunConfig, a: BenchArgs) -> Result<()> {
    if a.n == 0 {
        return Err(Error::Config("--n must be >= 1".into()));
    }
    let ckpt = Checkpoint::<f32>::load(&a.checkpoint)?;
    let model = Inference::new(&ckpt);
    let mc = ckpt.model.config();
    let h = a.height.unwrap_or(mc.input_height);
    let w = a.width.unwrap_or(mc.input_width);
    if h < 2 || w < 2 {
        return Err(Error::Config("--height and --width must be >= 2".into()));
    }
    let spec = GridSpec::regional(w, h, 40.0, 120.0, -0.5, 0.5);
    let mut rng = Rng::new(cfg.train.seed);
    let input: Vec<f32> = (0..model.in_channels() * spec.len()).map(|_| rng.uniform() as f32).collect();
    let r = benchmark(&model, &spec, &input, a.n, a.month)?;
    println!("frame size:        {w}x{h}, {} worker thread(s)", parallel::threads());
    println!("per frame:         {:.6} s over {} frames", r.seconds_per_frame, r.frames_timed);
    println!(
        "per {FRAMES_PER_MONTH} frames:    {:.3} s ({})",
        r.seconds_per_month,
        if r.month_measured { "measured" } else { "extrapolated" }
    );
    if r.month_measured {
        println!(
            "month/frame ratio: {:.4} ({})",
            r.month_ratio(),
            if r.consistent() { "consistent within 10%" } else { "INCONSISTENT beyond 10%" }
        );
    }
    println!("published GPU reference timings (not comparable to this machine):");
    let presets: Vec<Preset> = match cfg.preset {
        Some(p) => vec![p],
        None => Preset::ALL.to_vec(),
    };
    for p in presets {
        let t = p.values().timing;
        println!(
            "  {:<15} {:.2} s per frame, {:.2} s per month, {:.0} s training",
            p.name(),
            t.single_run,
            t.month_of_runs,
            t.training
        );
    }
    Ok(())
}
