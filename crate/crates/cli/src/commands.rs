use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cafv_autodiff::RngStream;
use cafv_core::data::{
    class_histogram, histogram_csv, load_features, load_prototypes, make_synthetic_benchmark, save_features,
    save_prototypes, Dataset, FeatureFormat, Split, SyntheticSpec,
};
use cafv_core::eval::{
    augmentation_experiment, compute_metrics_binned, histogram_to_csv, pair_up, table_csv, ExperimentResult,
    ExperimentSummary, HistogramBin,
};
use cafv_core::gradcheck::{run_gradchecks, GradcheckConfig};
use cafv_core::losses::write_jsonl;
use cafv_core::models::checkpoint::{read_manifest, MANIFEST_FILE, OPTIMIZER_FILE, WEIGHTS_FILE};
use cafv_core::training::{
    admissible_sources, load_bundle, load_classifier, pretrain_classifier, save_classifier, synthesize_for_targets,
    GanTrainer, TrainConfig, TrainerState, STATE_FILE,
};
use cafv_core::Error;
use log::{info, warn};
use serde_json::json;

use crate::error::{CliError, CliResult, Phase};
use crate::manifest::{now, sha256_file, FileDigest, Outputs, RunManifest};
use crate::svg::{bar_chart, Series};
use crate::{Cli, Command, GlobalArgs};

const PROTOTYPES_FILE: &str = "prototypes.csv";
const CHECKPOINT_FILES: [&str; 4] = [MANIFEST_FILE, WEIGHTS_FILE, OPTIMIZER_FILE, STATE_FILE];

struct Ctx<'a> {
    global: &'a GlobalArgs,
    command: &'static str,
    argv: &'a [String],
    started_at: String,
    inputs: Vec<FileDigest>,
}

impl Ctx<'_> {
    fn out(&self) -> CliResult<&Path> {
        self.global
            .out
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("{} needs --out", self.command)))
    }

    fn input(&mut self, path: &Path) -> CliResult<()> {
        let (bytes, sha256) = sha256_file(path).invalid()?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            bytes,
            sha256,
        });
        Ok(())
    }

    fn checkpoint_input(&mut self, dir: &Path) -> CliResult<()> {
        for name in CHECKPOINT_FILES {
            let p = dir.join(name);
            if p.is_file() {
                self.input(&p)?;
            }
        }
        Ok(())
    }

    fn manifest(&self, seed: Option<u64>, config: serde_json::Value) -> RunManifest {
        RunManifest {
            command: self.command.to_string(),
            argv: self.argv.to_vec(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: self.inputs.clone(),
            output_dir: String::new(),
            outputs: Vec::new(),
            started_at: self.started_at.clone(),
            finished_at: String::new(),
        }
    }

    fn reject(&self, flag: &str, present: bool) -> CliResult<()> {
        if present {
            return Err(CliError::Usage(format!("{} does not take {flag}", self.command)));
        }
        Ok(())
    }
}

pub fn dispatch(cli: &Cli, argv: &[String]) -> CliResult<()> {
    let mut ctx = Ctx {
        global: &cli.global,
        command: cli.command.name(),
        argv,
        started_at: now(),
        inputs: Vec::new(),
    };
    match &cli.command {
        Command::GenData { spec } => gen_data(&mut ctx, spec.as_deref()),
        Command::TrainClassifier { data } => train_classifier(&mut ctx, data),
        Command::TrainGan {
            data,
            classifier,
            resume,
            stop_at,
            checkpoint_every,
        } => train_gan(&mut ctx, data, classifier.as_deref(), resume.as_deref(), *stop_at, *checkpoint_every),
        Command::Synthesize {
            data,
            gan,
            targets,
            count,
        } => synthesize(&mut ctx, data, gan, targets, *count),
        Command::Evaluate {
            data,
            classifier,
            bin_width,
        } => evaluate(&mut ctx, data, classifier, *bin_width),
        Command::AugmentEval { data, rare, seeds } => augment_eval(&mut ctx, data, rare, seeds.as_deref()),
        Command::Gradcheck { trials, learned } => gradcheck(&mut ctx, *trials, *learned),
        Command::InspectCheckpoint { dir } => inspect_checkpoint(&mut ctx, dir),
    }
}

/// `<dir>/<stem>.csv` or `<dir>/<stem>.bin`, preferring `preferred`.
fn find_split(dir: &Path, stem: &str, preferred: FeatureFormat) -> Option<(PathBuf, FeatureFormat)> {
    let other = match preferred {
        FeatureFormat::Csv => FeatureFormat::Binary,
        FeatureFormat::Binary => FeatureFormat::Csv,
    };
    [preferred, other]
        .into_iter()
        .map(|f| (dir.join(format!("{stem}.{}", f.extension())), f))
        .find(|(p, _)| p.is_file())
}

fn load_split(ctx: &mut Ctx<'_>, dir: &Path, split: Split) -> CliResult<Dataset> {
    let stem = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    let (path, format) = find_split(dir, stem, ctx.global.format).ok_or_else(|| {
        CliError::Invalid(Error::Dataset(format!(
            "{}: no {stem}.csv or {stem}.bin",
            dir.display()
        )))
    })?;
    ctx.input(&path)?;
    let ds = load_features(&path, format, split).invalid()?;
    info!("loaded {} {stem} records from {}", ds.len(), path.display());
    Ok(ds)
}

fn load_oracle(ctx: &mut Ctx<'_>, dir: &Path) -> CliResult<Option<BTreeMap<i32, Vec<f64>>>> {
    let path = dir.join(PROTOTYPES_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    ctx.input(&path)?;
    Ok(Some(load_prototypes(&path).invalid()?))
}

/// `--config` (or defaults) with `--seed` applied. Without an explicit
/// `feature_dim` the data's dimension is used.
fn load_config(ctx: &mut Ctx<'_>, feature_dim: usize) -> CliResult<TrainConfig> {
    let mut cfg = match ctx.global.config.clone() {
        Some(path) => {
            ctx.input(&path)?;
            let cfg = TrainConfig::load(&path).invalid()?;
            let text = fs::read_to_string(&path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            });
            let raw: serde_json::Value = serde_json::from_str(&text.invalid()?).map_err(Error::from).invalid()?;
            if raw.get("feature_dim").is_none() {
                cfg_with_dim(cfg, feature_dim)
            } else {
                cfg
            }
        }
        None => cfg_with_dim(TrainConfig::default(), feature_dim),
    };
    if let Some(seed) = ctx.global.seed {
        cfg.seed = seed;
    }
    cfg.validate().invalid()?;
    if cfg.feature_dim != feature_dim {
        return Err(CliError::Invalid(Error::Dimension(format!(
            "config feature_dim is {} but the data has {feature_dim}",
            cfg.feature_dim
        ))));
    }
    Ok(cfg)
}

fn cfg_with_dim(cfg: TrainConfig, feature_dim: usize) -> TrainConfig {
    TrainConfig { feature_dim, ..cfg }
}

fn to_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("plain data serializes")
}

fn pretty<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s.into_bytes()
}

fn record_checkpoint(out: &mut Outputs, rel: &str) -> CliResult<()> {
    for name in CHECKPOINT_FILES {
        let r = if rel.is_empty() { name.to_string() } else { format!("{rel}/{name}") };
        if out.path(&r).is_file() {
            out.record(&r)?;
        }
    }
    Ok(())
}

fn gen_data(ctx: &mut Ctx<'_>, spec_path: Option<&Path>) -> CliResult<()> {
    ctx.reject("--config", ctx.global.config.is_some())?;
    let mut spec = match spec_path {
        Some(p) => {
            ctx.input(p)?;
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Io {
                    path: p.into(),
                    source: e,
                })
                .invalid()?;
            serde_json::from_str::<SyntheticSpec>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
                .invalid()?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = ctx.global.seed {
        spec.seed = seed;
    }
    spec.validate().invalid()?;
    let out_dir = ctx.out()?.to_path_buf();
    let bench = make_synthetic_benchmark(&spec).invalid()?;

    let mut out = Outputs::create(&out_dir)?;
    let fmt = ctx.global.format;
    for (stem, ds) in [("train", &bench.train), ("test", &bench.test)] {
        out.write_with(&format!("{stem}.{}", fmt.extension()), |p| save_features(ds, p, fmt))?;
    }
    out.write_with(PROTOTYPES_FILE, |p| save_prototypes(&bench.prototypes, p))?;
    out.write("train_histogram.csv", histogram_csv(&class_histogram(&bench.train)).as_bytes())?;
    out.write("test_histogram.csv", histogram_csv(&class_histogram(&bench.test)).as_bytes())?;
    out.write("spec.json", &pretty(&spec))?;
    info!(
        "wrote {} train and {} test records to {}",
        bench.train.len(),
        bench.test.len(),
        out_dir.display()
    );
    out.finish(ctx.manifest(Some(spec.seed), to_value(&spec)))
}

fn train_classifier(ctx: &mut Ctx<'_>, data: &Path) -> CliResult<()> {
    let train = load_split(ctx, data, Split::Train)?;
    let cfg = load_config(ctx, train.feature_dim())?;
    let out_dir = ctx.out()?.to_path_buf();

    let mut out = Outputs::create(&out_dir)?;
    let trained = pretrain_classifier(&train, &cfg).failed()?;
    info!(
        "classifier: {} labels, train accuracy {:.4} after {} epochs",
        trained.classifier.labels.len(),
        trained.train_accuracy,
        trained.epochs
    );
    save_classifier(out.root(), &trained, &cfg).failed()?;
    record_checkpoint(&mut out, "")?;
    out.write("config.json", cfg.to_json().as_bytes())?;
    out.finish(ctx.manifest(Some(cfg.seed), to_value(&cfg)))
}

fn train_gan(
    ctx: &mut Ctx<'_>,
    data: &Path,
    classifier: Option<&Path>,
    resume: Option<&Path>,
    stop_at: Option<u64>,
    checkpoint_every: Option<u64>,
) -> CliResult<()> {
    if checkpoint_every == Some(0) {
        return Err(CliError::Usage("--checkpoint-every must be positive".into()));
    }
    let train = load_split(ctx, data, Split::Train)?;
    let mut trainer = match resume {
        Some(dir) => {
            ctx.reject("--config with --resume (the checkpoint carries its config)", ctx.global.config.is_some())?;
            ctx.reject("--seed with --resume", ctx.global.seed.is_some())?;
            ctx.reject("--classifier with --resume", classifier.is_some())?;
            ctx.checkpoint_input(dir)?;
            let t = GanTrainer::resume(dir, &train).invalid()?;
            info!("resuming at step {}/{}", t.step(), t.total_steps());
            t
        }
        None => {
            let dir = classifier.ok_or_else(|| CliError::Usage("train-gan needs --classifier or --resume".into()))?;
            ctx.checkpoint_input(dir)?;
            let (cls, _) = load_classifier(dir).invalid()?;
            let cfg = load_config(ctx, train.feature_dim())?;
            GanTrainer::new(&cfg, &train, &cls).invalid()?
        }
    };
    let stop = stop_at.unwrap_or(trainer.total_steps()).min(trainer.total_steps());
    if stop < trainer.step() {
        return Err(CliError::Usage(format!(
            "--stop-at {stop} is before the checkpoint's step {}",
            trainer.step()
        )));
    }
    let out_dir = ctx.out()?.to_path_buf();

    let mut out = Outputs::create(&out_dir)?;
    info!("training to step {stop} of {}", trainer.total_steps());
    while trainer.step() < stop {
        let next = match checkpoint_every {
            Some(k) => ((trainer.step() / k + 1) * k).min(stop),
            None => stop,
        };
        trainer.run_until(next).failed()?;
        if checkpoint_every.is_some() && trainer.step() < stop {
            trainer.checkpoint(out.root()).failed()?;
            info!("checkpoint at step {}", trainer.step());
        }
    }
    trainer.checkpoint(out.root()).failed()?;
    record_checkpoint(&mut out, "")?;
    let history = trainer.history().to_vec();
    out.write_with("losses.jsonl", |p| write_jsonl(p, &history))?;
    let cfg = trainer.config().clone();
    out.finish(ctx.manifest(Some(cfg.seed), to_value(&cfg)))
}

fn synthesize(ctx: &mut Ctx<'_>, data: &Path, gan: &Path, targets: &[i32], count: usize) -> CliResult<()> {
    ctx.reject("--config", ctx.global.config.is_some())?;
    if targets.is_empty() {
        return Err(CliError::Usage("synthesize needs --targets".into()));
    }
    if count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    let train = load_split(ctx, data, Split::Train)?;
    ctx.checkpoint_input(gan)?;
    let bundle = load_bundle(gan).invalid()?;
    if bundle.dims.feature_dim != train.feature_dim() {
        return Err(CliError::Invalid(Error::Dimension(format!(
            "generator expects {} features but the data has {}",
            bundle.dims.feature_dim,
            train.feature_dim()
        ))));
    }
    for &t in targets {
        if admissible_sources(&bundle, &train, t).is_empty() {
            return Err(CliError::Invalid(Error::NoAdmissibleSource {
                target: t,
                intervals: bundle.embedding.intervals.clone(),
            }));
        }
    }
    let seed = match ctx.global.seed {
        Some(s) => s,
        None => read_manifest(gan).invalid()?.seed,
    };
    let out_dir = ctx.out()?.to_path_buf();

    let mut out = Outputs::create(&out_dir)?;
    let mut rng = RngStream::new(seed, "synthesize");
    let records = synthesize_for_targets(&bundle, &train, targets, count, &mut rng).failed()?;
    let ds = Dataset::new(records, train.feature_dim(), Split::Train).failed()?;
    let fmt = ctx.global.format;
    out.write_with(&format!("synthetic.{}", fmt.extension()), |p| save_features(&ds, p, fmt))?;
    out.write("synthetic_histogram.csv", histogram_csv(&class_histogram(&ds)).as_bytes())?;
    info!("synthesized {} records for {targets:?}", ds.len());
    let config = json!({ "targets": targets, "count": count, "gan": gan.display().to_string() });
    out.finish(ctx.manifest(Some(seed), config))
}

fn histogram_svg(title: &str, series: &[(&str, &[HistogramBin])]) -> String {
    let s: Vec<Series<'_>> = series.iter().map(|&(name, bins)| Series { name, bins }).collect();
    bar_chart(title, "absolute error (m/s)", &s)
}

fn evaluate(ctx: &mut Ctx<'_>, data: &Path, classifier: &Path, bin_width: Option<f64>) -> CliResult<()> {
    ctx.reject("--config", ctx.global.config.is_some())?;
    let test = load_split(ctx, data, Split::Test)?;
    ctx.checkpoint_input(classifier)?;
    let (cls, cfg) = load_classifier(classifier).invalid()?;
    if cls.classifier.feature_dim != test.feature_dim() {
        return Err(CliError::Invalid(Error::Dimension(format!(
            "classifier expects {} features but the data has {}",
            cls.classifier.feature_dim,
            test.feature_dim()
        ))));
    }
    if test.is_empty() {
        return Err(CliError::Invalid(Error::Dataset("empty test set".into())));
    }
    let w = bin_width.unwrap_or(cfg.histogram_bin_width);
    if !(w > 0.0 && w.is_finite()) {
        return Err(CliError::Invalid(Error::Config(format!("bin width must be positive, got {w}"))));
    }
    let out_dir = ctx.out()?.to_path_buf();

    let mut out = Outputs::create(&out_dir)?;
    let predicted = cls.predict_dataset(&test).failed()?;
    let truth: Vec<i32> = test.records().iter().map(|r| r.label).collect();
    let report = compute_metrics_binned(&pair_up(&predicted, &truth).failed()?, w).failed()?;
    let mut preds = String::from("id,truth,predicted\n");
    for (r, p) in test.records().iter().zip(&predicted) {
        let _ = writeln!(preds, "{},{},{p}", r.id, r.label);
    }
    out.write("metrics.json", report.to_json().as_bytes())?;
    out.write("metrics.csv", report.to_csv().as_bytes())?;
    out.write("predictions.csv", preds.as_bytes())?;
    out.write("error_histogram.csv", histogram_to_csv(&report.error_histogram).as_bytes())?;
    out.write(
        "error_histogram.svg",
        histogram_svg("Absolute error distribution", &[("classifier", &report.error_histogram)]).as_bytes(),
    )?;
    info!(
        "macro f1 {:.4}, weighted f1 {:.4}, MAE {:.4}, RMSE {:.4}",
        report.macro_f1, report.weighted_f1, report.mae, report.rmse
    );
    let config = json!({ "classifier_config": cfg, "bin_width": w });
    out.finish(ctx.manifest(Some(cfg.seed), config))
}

fn write_seed(out: &mut Outputs, r: &ExperimentResult, cfg: &TrainConfig, fmt: FeatureFormat) -> CliResult<()> {
    let dir = format!("seed-{}", r.seed);
    out.dir(&dir)?;
    out.write(&format!("{dir}/result.json"), &pretty(r))?;
    out.write(&format!("{dir}/table.csv"), table_csv(r).as_bytes())?;
    out.write(&format!("{dir}/config.json"), cfg.to_json().as_bytes())?;
    let (b, a) = (&r.baseline.metrics.error_histogram, &r.augmented.metrics.error_histogram);
    out.write(&format!("{dir}/histogram_baseline.csv"), histogram_to_csv(b).as_bytes())?;
    out.write(&format!("{dir}/histogram_augmented.csv"), histogram_to_csv(a).as_bytes())?;
    out.write(
        &format!("{dir}/error_histogram.svg"),
        histogram_svg(
            &format!("Absolute error distribution, seed {}", r.seed),
            &[("baseline", b), ("augmented", a)],
        )
        .as_bytes(),
    )?;
    if !r.loss_history.is_empty() {
        out.write_with(&format!("{dir}/losses.jsonl"), |p| write_jsonl(p, &r.loss_history))?;
    }
    if !r.synthetic.is_empty() {
        let dim = r.synthetic[0].features.len();
        let ds = Dataset::new(r.synthetic.clone(), dim, Split::Train).failed()?;
        out.write_with(&format!("{dir}/synthetic.{}", fmt.extension()), |p| save_features(&ds, p, fmt))?;
    }
    Ok(())
}

fn augment_eval(ctx: &mut Ctx<'_>, data: &Path, rare: &[i32], seeds: Option<&[u64]>) -> CliResult<()> {
    if rare.is_empty() {
        return Err(CliError::Usage("augment-eval needs --rare".into()));
    }
    if seeds.is_some() && ctx.global.seed.is_some() {
        return Err(CliError::Usage("give either --seed or --seeds".into()));
    }
    let train = load_split(ctx, data, Split::Train)?;
    let test = load_split(ctx, data, Split::Test)?;
    let prototypes = load_oracle(ctx, data)?;
    let cfg = load_config(ctx, train.feature_dim())?;
    if test.is_empty() {
        return Err(CliError::Invalid(Error::Dataset("empty test set".into())));
    }
    for &l in rare {
        if !train.labels().contains(&l) {
            return Err(CliError::Invalid(Error::UnknownLabel {
                label: l,
                labels: train.labels().to_vec(),
            }));
        }
        let has_source = train.labels().iter().any(|&s| s != l && cfg.interval_set.contains(&(l - s)));
        if cfg.synthetic_per_class > 0 && !has_source {
            return Err(CliError::Invalid(Error::NoAdmissibleSource {
                target: l,
                intervals: cfg.interval_set.clone(),
            }));
        }
    }
    if prototypes.is_none() {
        warn!("no {PROTOTYPES_FILE} in {}; synthesis quality is not scored", data.display());
    }
    let mut seeds: Vec<u64> = seeds.map_or_else(|| vec![cfg.seed], <[u64]>::to_vec);
    seeds.sort_unstable();
    seeds.dedup();
    let out_dir = ctx.out()?.to_path_buf();

    let mut out = Outputs::create(&out_dir)?;
    let mut results = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let c = TrainConfig { seed, ..cfg.clone() };
        let r = augmentation_experiment(&train, &test, rare, &c, prototypes.as_ref()).failed()?;
        info!(
            "seed {seed}: rare macro f1 {:.4} -> {:.4}, MAE {:.4} -> {:.4}",
            r.rare_macro_f1_baseline, r.rare_macro_f1_augmented, r.baseline.metrics.mae, r.augmented.metrics.mae
        );
        write_seed(&mut out, &r, &c, ctx.global.format)?;
        results.push(r);
    }
    let summary = ExperimentSummary::from_results(&results).failed()?;
    out.write("summary.json", &pretty(&summary))?;
    let config = json!({ "train": cfg, "rare_labels": rare, "seeds": seeds });
    out.finish(ctx.manifest(seeds.first().copied(), config))
}

fn gradcheck(ctx: &mut Ctx<'_>, trials: u64, learned: bool) -> CliResult<()> {
    ctx.reject("--config", ctx.global.config.is_some())?;
    if trials == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    let start = ctx.global.seed.unwrap_or(0);
    let seeds: Vec<u64> = (start..start + trials).collect();
    let cfg = GradcheckConfig {
        learned_embedding: learned,
        ..GradcheckConfig::default()
    };
    let rows = run_gradchecks(&seeds, &cfg).failed()?;
    println!("{:<26} {:>7} {:>7} {:>12}  status", "term", "checked", "skipped", "max_rel_err");
    for r in &rows {
        println!(
            "{:<26} {:>7} {:>7} {:>12.3e}  {}",
            r.term,
            r.checked,
            r.skipped,
            r.max_relative_error,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    if let Some(dir) = ctx.global.out.clone() {
        let mut out = Outputs::create(&dir)?;
        out.write("gradcheck.json", &pretty(&json!({ "config": cfg, "seeds": seeds, "rows": rows })))?;
        out.finish(ctx.manifest(Some(start), to_value(&cfg)))?;
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.term.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "gradients exceed tolerance {:e}: {}",
            cfg.tolerance,
            failed.join(", ")
        )))
    }
}

fn inspect_checkpoint(ctx: &mut Ctx<'_>, dir: &Path) -> CliResult<()> {
    ctx.reject("--config", ctx.global.config.is_some())?;
    ctx.reject("--out", ctx.global.out.is_some())?;
    let m = read_manifest(dir).invalid()?;
    let hyper = m.hyperparameters.get("config").unwrap_or(&m.hyperparameters);
    let config: Option<TrainConfig> = serde_json::from_value(hyper.clone()).ok();
    let state: Option<TrainerState> = fs::read_to_string(dir.join(STATE_FILE))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());

    let mut s = String::new();
    let _ = writeln!(s, "kind: {}", m.kind);
    let _ = writeln!(s, "format_version: {}", m.format_version);
    let _ = writeln!(s, "seed: {}", m.seed);
    if let Some(d) = m.dims {
        let _ = writeln!(s, "feature_dim: {}", d.feature_dim);
        let _ = writeln!(s, "noise_dim: {}", d.noise_dim);
        let _ = writeln!(s, "generator_hidden: {}", d.generator_hidden);
        let _ = writeln!(s, "critic_hidden: {}", d.critic_hidden);
        let _ = writeln!(s, "leaky_slope: {}", d.leaky_slope);
    }
    if !m.interval_set.is_empty() {
        let _ = writeln!(s, "interval_set: {:?}", m.interval_set);
    }
    let _ = writeln!(s, "labels: {:?}", m.labels);
    let values: usize = m.parameters.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    let _ = writeln!(s, "parameters: {} tensors, {values} values", m.parameters.len());
    match &config {
        Some(c) => {
            if m.dims.is_none() {
                let _ = writeln!(s, "feature_dim: {}", c.feature_dim);
                let _ = writeln!(s, "noise_dim: {}", c.noise_dim);
                let _ = writeln!(s, "critic_hidden: {}", c.critic_hidden);
            }
            let w = &c.loss_weights;
            let _ = writeln!(s, "lambda1: {}", w.lambda1);
            let _ = writeln!(s, "lambda2: {}", w.lambda2);
            let _ = writeln!(s, "beta: {}", w.beta);
            let _ = writeln!(s, "generator_lr: {}", c.generator_lr);
            let _ = writeln!(s, "critic_lr: {}", c.critic_lr);
            let _ = writeln!(s, "n_critic: {}", c.n_critic);
            let _ = writeln!(s, "batch_size: {}", c.batch_size);
            let _ = writeln!(s, "classifier_lr: {}", c.classifier_lr);
            let _ = writeln!(s, "classifier_lr_decay: {}", c.classifier_lr_decay);
            let _ = writeln!(s, "classifier_decay_every: {}", c.classifier_decay_every);
            let _ = writeln!(s, "config_hash: {}", c.hash());
        }
        None => {
            let _ = writeln!(s, "hyperparameters: {}", m.hyperparameters);
        }
    }
    if let Some(st) = state {
        let _ = writeln!(s, "trainer_step: {}/{}", st.step, st.total_steps);
        let _ = writeln!(s, "recorded_losses: {}", st.history.len());
    }
    print!("{s}");
    Ok(())
}
