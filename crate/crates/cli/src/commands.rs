use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use frera_core::analysis::{
    self, baseline_augment, generate_synthetic, BaselineKind, FrequencyFeature, SyntheticSpec,
};
use frera_core::frera::ImportanceVector;
use frera_core::pipeline::{
    evaluate_encoder, frera_view, linear_evaluate, load_checkpoint, load_dataset_raw,
    save_checkpoint, write_csv_dir, Augmentation, Checkpoint, DataFormat, Dataset, DatasetSplits,
    LinearEvalReport, ProbeConfig, Split, TrainConfig, MANIFEST_FILE,
};
use frera_core::properties::{run_properties, PropertyConfig, Suite};
use frera_core::spectral::TimeSeries;
use frera_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::failure::Failure;
use crate::manifest::RunManifest;
use crate::{Analysis, AnalyzeArgs, AugmentArgs, EvalArgs, PropertiesArgs, SuiteArg, SynthArgs, TrainArgs};

/// Random stream used to carve validation and test splits.
const SPLIT_STREAM: u64 = 3;
/// Random stream used by `augment` and `analyze`.
const VIEW_STREAM: u64 = 4;

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LOG_FILE: &str = "log.jsonl";

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn usage<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Failure::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Failure::io(path, e))
}

fn data_format(path: &Path, format: Option<&str>) -> Result<DataFormat, Failure> {
    match format {
        Some(f) => usage(f.parse()),
        None if path.is_dir() && path.join("manifest.json").is_file() => Ok(DataFormat::CsvDir),
        None => Ok(DataFormat::UcrTsv),
    }
}

/// Reads a dataset, fills in missing splits and z-scores with training
/// statistics.
fn load_splits(path: &Path, format: DataFormat, seed: u64) -> Result<DatasetSplits, Failure> {
    let raw = load_dataset_raw(path, format)?;
    let completed = raw.complete(&mut seeded(seed, SPLIT_STREAM))?;
    Ok(completed.normalized()?.0)
}

fn all_samples(splits: &DatasetSplits) -> Result<Dataset, Failure> {
    let samples: Vec<TimeSeries> = std::iter::once(&splits.train)
        .chain(splits.val.as_ref())
        .chain(splits.test.as_ref())
        .flat_map(|d| d.samples().iter().cloned())
        .collect();
    let classes = [Some(&splits.train), splits.val.as_ref(), splits.test.as_ref()]
        .into_iter()
        .flatten()
        .map(Dataset::classes)
        .max()
        .unwrap_or(0);
    Ok(Dataset::new(samples, classes, Split::Train)?)
}

fn resolve_checkpoint(path: &Path) -> PathBuf {
    let nested = path.join(CHECKPOINT_DIR);
    if nested.join(MANIFEST_FILE).is_file() {
        nested
    } else {
        path.to_path_buf()
    }
}

fn check_shape(ckpt: &Checkpoint, data: &Dataset) -> Result<(), Failure> {
    if (ckpt.length, ckpt.channels) != (data.length(), data.channels()) {
        return Err(Failure::Data(format!(
            "checkpoint expects series of shape {}x{}, data has {}x{}",
            ckpt.length,
            ckpt.channels,
            data.length(),
            data.channels()
        )));
    }
    Ok(())
}

pub fn properties(args: PropertiesArgs) -> Result<(), Failure> {
    let cfg = PropertyConfig {
        sizes: args.sizes,
        channels: args.channels,
        trials: args.trials,
        seed: args.seed,
        suites: match args.suite {
            None => vec![Suite::Spectral, Suite::Frera],
            Some(SuiteArg::Spectral) => vec![Suite::Spectral],
            Some(SuiteArg::Frera) => vec![Suite::Frera],
        },
        mutation: args.mutation.as_deref().map(str::parse).transpose()?,
    };
    cfg.validate()?;
    if let Some(out) = &args.out {
        RunManifest::new("properties", to_json(&cfg), Some(cfg.seed))
            .output(out.join("properties.json"))
            .write(out)?;
    }
    let report = run_properties(&cfg)?;
    println!("{report}");
    if let Some(out) = &args.out {
        write_json(&out.join("properties.json"), &report)?;
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Numerical(format!(
            "violated identities: {}",
            report.violated().join(", ")
        )))
    }
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg: TrainConfig = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            usage(serde_json::from_str(&text))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.tau_w {
        cfg.tau_w = v;
    }
    if let Some(v) = args.tau {
        cfg.tau = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr_model {
        cfg.lr_model = v;
    }
    if let Some(v) = args.lr_s {
        cfg.lr_s = v;
    }
    if let Some(v) = args.probe_every {
        cfg.probe_every = v;
    }
    if let Some(p) = &args.profile {
        cfg.profile = p.parse()?;
    }
    if let Some(t) = &args.threshold {
        cfg.threshold = t.parse()?;
    }
    if let Some(b) = &args.baseline {
        cfg.augmentation = Augmentation::Baseline(b.parse()?);
    }
    if let Some(p) = args.random_mask {
        cfg.augmentation = Augmentation::RandomMask { proportion: p };
    }
    if args.no_distortion {
        cfg.augmentation = Augmentation::NoDistortion;
    }
    if args.no_balanced {
        cfg.balanced_sampling = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(args: TrainArgs) -> Result<(), Failure> {
    let cfg = train_config(&args)?;
    let format = data_format(&args.data.data, args.data.format.as_deref())?;
    let out = &args.out;
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    let log_path = out.join(LOG_FILE);
    let mut manifest = RunManifest::new("train", to_json(&cfg), Some(cfg.seed)).input(&args.data.data)?;
    if let Some(c) = &args.config {
        manifest = manifest.input(c)?;
    }
    manifest
        .output(ckpt_dir.clone())
        .output(log_path.clone())
        .output(out.join("normalization.json"))
        .write(out)?;

    let raw = load_dataset_raw(&args.data.data, format)?;
    let splits = raw.complete(&mut seeded(cfg.seed, SPLIT_STREAM))?;
    let (splits, norm) = splits.normalized()?;
    write_json(&out.join("normalization.json"), &norm)?;

    let file = fs::File::create(&log_path).map_err(|e| Failure::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let quiet = args.quiet;
    let ckpt = frera_core::pipeline::pretrain_with(&splits.train, splits.val.as_ref(), &cfg, |record| {
        let line = serde_json::to_string(record)?;
        writeln!(log, "{line}")
            .and_then(|_| log.flush())
            .map_err(|e| Error::Checkpoint(format!("cannot write {}: {e}", log_path.display())))?;
        if !quiet {
            println!("{line}");
        }
        Ok(())
    })?;
    save_checkpoint(&ckpt, &ckpt_dir)?;
    let last = ckpt.history.last().expect("at least one epoch");
    eprintln!(
        "trained {} epochs ({}): loss {:.4}, mask mean {}, selected epoch {}",
        ckpt.epoch,
        last.augmentation,
        last.total,
        last.mask_mean.map_or("-".into(), |m| format!("{m:.4}")),
        ckpt.selected.as_ref().map_or("-".into(), |s| s.epoch.to_string()),
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), Failure> {
    let probe = ProbeConfig {
        iterations: args.iterations,
        ..ProbeConfig::default()
    };
    if probe.iterations == 0 {
        return Err(Failure::Usage("iterations must be >= 1".into()));
    }
    let ckpt_dir = resolve_checkpoint(&args.checkpoint);
    let format = data_format(&args.data.data, args.data.format.as_deref())?;
    if let Some(out) = &args.out {
        RunManifest::new(
            "eval",
            serde_json::json!({ "probe": probe, "final_encoder": args.final_encoder }),
            None,
        )
        .input(&ckpt_dir)?
        .input(&args.data.data)?
        .output(out.join("eval.json"))
        .write(out)?;
    }
    let ckpt = load_checkpoint(&ckpt_dir)?;
    let splits = load_splits(&args.data.data, format, ckpt.config.seed)?;
    check_shape(&ckpt, &splits.train)?;
    let report: LinearEvalReport = if args.final_encoder {
        let mut r = evaluate_encoder(&ckpt.model.encoder, &splits, &probe)?;
        r.encoder_epoch = ckpt.epoch;
        r
    } else {
        linear_evaluate(&ckpt, &splits, &probe)?
    };
    let headline = report.val_selected_test.unwrap_or(report.best_test);
    println!("encoder_epoch {}", report.encoder_epoch);
    println!("accuracy {:.4}", headline.accuracy);
    println!("macro_f1 {:.4}", headline.macro_f1);
    println!(
        "best_accuracy {:.4} (probe iteration {})",
        report.best_test.accuracy, report.best_iteration
    );
    if !report.unseen_classes.is_empty() {
        println!("unseen_classes {:?}", report.unseen_classes);
    }
    if let Some(out) = &args.out {
        write_json(&out.join("eval.json"), &report)?;
    }
    Ok(())
}

fn write_scores(path: &Path, scores: &ImportanceVector) -> Result<(), Failure> {
    let text: String = scores.scores().iter().map(|v| format!("{v:?}\n")).collect();
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

pub fn analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let ckpt_dir = args.checkpoint.as_deref().map(resolve_checkpoint);
    let needs_data = args.what != Analysis::ExportS;
    if needs_data && args.data.is_none() {
        return Err(Failure::Usage("this analysis needs --data".into()));
    }
    if !needs_data && ckpt_dir.is_none() {
        return Err(Failure::Usage("export_s needs --checkpoint".into()));
    }
    let baseline: Option<BaselineKind> = args.baseline.as_deref().map(str::parse).transpose()?;
    let feature = match args.feature.as_str() {
        "magnitude" => FrequencyFeature::Magnitude,
        "complex" => FrequencyFeature::Complex,
        other => return Err(Failure::Usage(format!("unknown feature '{other}' (expected magnitude or complex)"))),
    };
    let format = args
        .data
        .as_deref()
        .map(|d| data_format(d, args.format.as_deref()))
        .transpose()?;

    let what = format!("{:?}", args.what);
    let mut manifest = RunManifest::new(
        "analyze",
        serde_json::json!({
            "what": what,
            "bins": args.bins,
            "baseline": baseline,
            "feature": feature,
        }),
        args.seed,
    );
    if let Some(c) = &ckpt_dir {
        manifest = manifest.input(c)?;
    }
    if let Some(d) = &args.data {
        manifest = manifest.input(d)?;
    }
    let out = &args.out;
    let outputs: Vec<PathBuf> = match args.what {
        Analysis::ExportS => vec![out.join("scores.txt")],
        Analysis::Energy => vec![out.join("energy.csv")],
        Analysis::MiFreq => vec![out.join("mi_freq.csv")],
        Analysis::MiTime => {
            let mut v = vec![out.join("mi_time_identity.csv")];
            if ckpt_dir.is_some() {
                v.push(out.join("mi_time_frera.csv"));
            }
            if let Some(b) = &baseline {
                v.push(out.join(format!("mi_time_{}.csv", b.name())));
            }
            v
        }
    };
    for o in &outputs {
        manifest = manifest.output(o.clone());
    }
    manifest.write(out)?;

    let ckpt = ckpt_dir.as_deref().map(load_checkpoint).transpose()?;
    if args.what == Analysis::ExportS {
        let ckpt = ckpt.expect("checked above");
        write_scores(&outputs[0], &ckpt.scores)?;
        println!("wrote {} scores to {}", ckpt.scores.len(), outputs[0].display());
        return Ok(());
    }
    let seed = args
        .seed
        .or(ckpt.as_ref().map(|c| c.config.seed))
        .unwrap_or(0);
    let data_path = args.data.as_deref().expect("checked above");
    let splits = load_splits(data_path, format.expect("data given"), seed)?;
    if let Some(c) = &ckpt {
        check_shape(c, &splits.train)?;
    }
    match args.what {
        Analysis::ExportS => unreachable!(),
        Analysis::Energy => {
            let profile = analysis::mean_energy_profile(&splits.train);
            analysis::write_index_value_csv(&outputs[0], &profile)?;
            println!("wrote energy profile of {} components", profile.len());
        }
        Analysis::MiFreq => {
            let pooled = all_samples(&splits)?;
            let curve = analysis::mi_frequency_profile(&pooled, args.bins, feature)?;
            curve.write_csv(&outputs[0])?;
            println!("mi_freq mean {:.4} nats (bias bound {:.4})", curve.mean(), curve.bias_bound);
        }
        Analysis::MiTime => {
            let pooled = all_samples(&splits)?;
            let identity = analysis::mi_timestamp_curve(&pooled, args.bins, |x| Ok(x.values().clone()))?;
            identity.write_csv(&outputs[0])?;
            println!("identity mean {:.4} nats (bias bound {:.4})", identity.mean(), identity.bias_bound);
            let mut next = 1;
            if let Some(c) = &ckpt {
                let mut rng = seeded(seed, VIEW_STREAM);
                let cfg = &c.config;
                let curve = analysis::mi_timestamp_curve(&pooled, args.bins, |x| {
                    frera_view(x, &c.scores, cfg.tau_w, cfg.threshold, false, &mut rng)
                })?;
                curve.write_csv(&outputs[next])?;
                next += 1;
                println!("frera mean {:.4} nats", curve.mean());
            }
            if let Some(kind) = &baseline {
                let mut rng = seeded(seed, VIEW_STREAM + 1);
                let curve = analysis::mi_timestamp_curve(&pooled, args.bins, |x| {
                    Ok(baseline_augment(x, kind, &mut rng)?.values)
                })?;
                curve.write_csv(&outputs[next])?;
                println!("{} mean {:.4} nats", kind.name(), curve.mean());
            }
        }
    }
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<(), Failure> {
    let spec = match &args.spec {
        Some(p) => SyntheticSpec::from_json_file(p).map_err(|e| match e {
            Error::Json(_) | Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            other => other.into(),
        })?,
        None => SyntheticSpec::three_class(),
    };
    let mut manifest = RunManifest::new("synth", to_json(&spec), Some(args.seed));
    if let Some(p) = &args.spec {
        manifest = manifest.input(p)?;
    }
    manifest
        .output(args.out.join("manifest.json"))
        .output(args.out.join("train.csv"))
        .output(args.out.join("spec.json"))
        .write(&args.out)?;
    let data = generate_synthetic(&spec, &mut ChaCha8Rng::seed_from_u64(args.seed))?;
    let splits = DatasetSplits {
        train: data,
        val: None,
        test: None,
    };
    write_csv_dir(&args.out, &splits)?;
    write_json(&args.out.join("spec.json"), &spec)?;
    println!(
        "wrote {} samples ({} classes, L={}, D={}) to {}",
        splits.train.len(),
        splits.train.classes(),
        spec.length,
        spec.channels,
        args.out.display()
    );
    Ok(())
}

pub fn augment(args: AugmentArgs) -> Result<(), Failure> {
    let baseline: Option<BaselineKind> = args.baseline.as_deref().map(str::parse).transpose()?;
    let ckpt_dir = args.checkpoint.as_deref().map(resolve_checkpoint);
    if baseline.is_none() && ckpt_dir.is_none() {
        return Err(Failure::Usage("augment needs --checkpoint or --baseline".into()));
    }
    let format = data_format(&args.data.data, args.data.format.as_deref())?;
    let mut manifest = RunManifest::new(
        "augment",
        serde_json::json!({ "hard": args.hard, "baseline": baseline }),
        Some(args.seed),
    );
    if let Some(c) = &ckpt_dir {
        manifest = manifest.input(c)?;
    }
    manifest
        .input(&args.data.data)?
        .output(args.out.join("manifest.json"))
        .write(&args.out)?;

    let ckpt = ckpt_dir.as_deref().map(load_checkpoint).transpose()?;
    let split_seed = ckpt.as_ref().map_or(args.seed, |c| c.config.seed);
    let splits = load_splits(&args.data.data, format, split_seed)?;
    if let Some(c) = &ckpt {
        check_shape(c, &splits.train)?;
    }
    let mut rng = seeded(args.seed, VIEW_STREAM);
    let mut view_of = |d: &Dataset| -> Result<Dataset, Failure> {
        let samples = d
            .samples()
            .iter()
            .map(|x| {
                let values = match (&baseline, &ckpt) {
                    (Some(kind), _) => baseline_augment(x, kind, &mut rng)?.values,
                    (None, Some(c)) => frera_view(x, &c.scores, c.config.tau_w, c.config.threshold, args.hard, &mut rng)?,
                    (None, None) => unreachable!(),
                };
                Ok(TimeSeries::new(values, x.label())?)
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        Ok(Dataset::new(samples, d.classes(), d.split())?)
    };
    let views = DatasetSplits {
        train: view_of(&splits.train)?,
        val: splits.val.as_ref().map(&mut view_of).transpose()?,
        test: splits.test.as_ref().map(&mut view_of).transpose()?,
    };
    write_csv_dir(&args.out, &views)?;
    println!("wrote views of {} samples to {}", all_samples(&views)?.len(), args.out.display());
    Ok(())
}
