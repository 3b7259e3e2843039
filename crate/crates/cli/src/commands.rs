use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use ascn::adaptive::{choose_from_neighbors, AdaptiveConfig};
use ascn::cloudio::{generate_dataset, load_cloud, load_dataset, save_dataset, CloudFormat, Dataset, DatasetSpec, PointCloud};
use ascn::network::{
    build_model, check_classes, evaluate, load_model, save_model, train_with, Model, ModelConfig, Neighborhood,
    TrainConfig,
};
use ascn::spatial::SpatialIndex;
use ascn::structconv::KernelMode;

use crate::error::{CliError, CliResult};
use crate::experiment::{read_json, ExperimentSpec};
use crate::report::{CrossDomainReport, SeedRow};
use crate::{AnalyzeArgs, Cli, CrossdomainArgs, DatagenArgs, EvalArgs, Format, InferArgs, Kernels, TrainArgs};

pub const MODEL_FILE: &str = "model.ascn";
pub const LOG_FILE: &str = "train_log.jsonl";

fn require_out(cli: &Cli) -> CliResult<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| CliError::Usage("this command needs --out".into()))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports always serialise");
    s.push('\n');
    s
}

fn load_cloud_file(path: &Path) -> CliResult<PointCloud> {
    Ok(load_cloud(path, CloudFormat::from_path(path))?)
}

pub fn datagen(cli: &Cli, args: &DatagenArgs) -> CliResult<String> {
    let out = require_out(cli)?;
    let mut spec: DatasetSpec = match &cli.config {
        Some(p) => read_json(p)?,
        None => DatasetSpec::three_class(args.count.unwrap_or(50)),
    };
    if let Some(n) = args.count {
        spec.classes.iter_mut().for_each(|c| c.count = n);
    }
    if args.no_rotation {
        spec.random_rotation = false;
    }
    if args.decimate.contains(&0) {
        return Err(CliError::Usage("--decimate needs k >= 1".into()));
    }
    let seed = cli.seed.unwrap_or(0);
    let data = generate_dataset(&spec, seed)?;
    save_dataset(&data, out)?;
    let mut written = vec![(out.to_path_buf(), data.len())];
    for &k in &args.decimate {
        let dir = out.join(format!("decimated_x{k}"));
        let thin = data.decimated(k, ascn::rng::derive_seed(seed, &[k as u64]))?;
        save_dataset(&thin, &dir)?;
        written.push((dir, thin.len()));
    }
    Ok(match cli.format {
        Format::Json => to_json(&json!({
            "classes": data.class_names,
            "datasets": written.iter().map(|(p, n)| json!({"path": p, "items": n})).collect::<Vec<_>>(),
        })),
        Format::Text => written
            .iter()
            .map(|(p, n)| format!("wrote {n} clouds to {}\n", p.display()))
            .collect(),
    })
}

fn fmt_entropy(e: f64) -> String {
    if e.is_finite() {
        format!("{e:.12}")
    } else {
        "inf".into()
    }
}

pub fn analyze(cli: &Cli, args: &AnalyzeArgs) -> CliResult<String> {
    let cfg = AdaptiveConfig::new(args.m_min, args.m_max).map_err(|e| CliError::Usage(e.to_string()))?;
    let cloud = load_cloud_file(&args.cloud)?;
    if cloud.len() < 2 {
        return Err(ascn::AscnError::DegenerateCloud("analysis needs at least 2 points".into()).into());
    }
    let index = SpatialIndex::build(&cloud);
    let choices: Vec<_> = (0..cloud.len())
        .map(|n| choose_from_neighbors(&cloud, n, &index.k_nearest(n, cfg.m_max), &cfg))
        .collect();

    let mut csv = String::from("point_index,m_star");
    for m in cfg.candidates() {
        write!(csv, ",entropy_m{m}").unwrap();
    }
    csv.push('\n');
    for (n, c) in choices.iter().enumerate() {
        write!(csv, "{n},{}", c.m_star).unwrap();
        for e in &c.entropies {
            write!(csv, ",{}", fmt_entropy(*e)).unwrap();
        }
        csv.push('\n');
    }
    let mut histogram = vec![0usize; cfg.m_max + 1];
    for c in &choices {
        histogram[c.m_star] += 1;
    }
    if let Some(out) = &cli.out {
        write_file(out, &csv)?;
    }
    Ok(match (cli.format, &cli.out) {
        (Format::Json, _) => to_json(&json!({
            "m_min": cfg.m_min,
            "m_max": cfg.m_max,
            "points": choices.iter().enumerate().map(|(n, c)| json!({
                "point_index": n,
                "m_star": c.m_star,
                "entropies": c.entropies.iter().map(|e| e.is_finite().then_some(*e)).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        })),
        (Format::Text, None) => csv,
        (Format::Text, Some(out)) => {
            let mut s = format!("wrote {} rows to {}\nM* histogram:", choices.len(), out.display());
            for m in cfg.candidates() {
                write!(s, " {m}:{}", histogram[m]).unwrap();
            }
            s.push('\n');
            s
        }
    })
}

/// Contents of a `--config` file for `train`.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    #[serde(default)]
    model: Option<ModelConfig>,
    #[serde(default)]
    train: Option<TrainConfig>,
}

fn kernel_mode(k: Kernels) -> KernelMode {
    match k {
        Kernels::StrConv => KernelMode::StrConv,
        Kernels::DirOnly => KernelMode::DirOnly,
        Kernels::DistOnly => KernelMode::DistOnly,
    }
}

/// Model configuration for `data`: the given one (which must agree on
/// classes) or the standard stack.
fn model_config_for(base: Option<ModelConfig>, data: &Dataset) -> CliResult<ModelConfig> {
    let cfg = match base {
        Some(mut cfg) => {
            if cfg.num_classes != data.num_classes() {
                return Err(ascn::AscnError::ClassMismatch(format!(
                    "configuration has {} classes, dataset has {}",
                    cfg.num_classes,
                    data.num_classes()
                ))
                .into());
            }
            if cfg.class_names.is_empty() {
                cfg.class_names = data.class_names.clone();
            }
            cfg
        }
        None => ModelConfig::standard(data.num_classes()).with_classes(&data.class_names),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(cli: &Cli, args: &TrainArgs) -> CliResult<String> {
    let out = require_out(cli)?;
    let file: TrainFile = match &cli.config {
        Some(p) => read_json(p)?,
        None => TrainFile::default(),
    };
    let data = load_dataset(&args.dataset)?;
    let mut cfg = model_config_for(file.model, &data)?;
    let mut tc = file.train.unwrap_or_default();
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        tc.seed = seed;
    }
    if let Some(m) = args.fixed_m {
        cfg.neighborhood = Neighborhood::Fixed(m);
    }
    if let Some(k) = args.kernels {
        cfg.kernel_mode = kernel_mode(k);
    }
    if let Some(e) = args.epochs {
        tc.epochs = e;
    }
    if let Some(b) = args.batch_size {
        tc.batch_size = b;
    }
    if let Some(lr) = args.lr {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(CliError::Usage(format!("--lr must be finite and >= 0, got {lr}")));
        }
        tc.optimizer = tc.optimizer.with_lr(lr);
    }
    cfg.validate()?;

    create_dir(out)?;
    let mut model = build_model(&cfg)?;
    let log_path = out.join(LOG_FILE);
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?);
    let mut write_err = None;
    let log = train_with(&mut model, &data, &tc, cli.workers, |rec| {
        let line = serde_json::to_string(rec).expect("records serialise");
        if let Err(e) = writeln!(log_file, "{line}").and_then(|_| log_file.flush()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(CliError::io(&log_path, e));
    }
    let model_path = out.join(MODEL_FILE);
    save_model(&model, &model_path)?;

    let summary = json!({
        "model": model_path,
        "log": log_path,
        "epochs": log.epochs.len(),
        "final_loss": log.final_loss(),
        "final_train_acc": log.epochs.last().map(|e| e.train_acc),
        "skipped": log.skipped,
        "parameters": model.num_parameters(),
    });
    Ok(match cli.format {
        Format::Json => to_json(&summary),
        Format::Text => {
            let mut s = String::new();
            if let Some(last) = log.epochs.last() {
                writeln!(
                    s,
                    "trained {} epochs: loss {:.4}, train accuracy {:.1}%",
                    log.epochs.len(),
                    last.loss,
                    100.0 * last.train_acc
                )
                .unwrap();
            }
            if log.skipped > 0 {
                writeln!(s, "skipped {} degenerate clouds", log.skipped).unwrap();
            }
            writeln!(s, "model: {}\nlog: {}", model_path.display(), log_path.display()).unwrap();
            s
        }
    })
}

fn class_name(model: &Model, label: usize) -> String {
    model
        .config
        .class_names
        .get(label)
        .cloned()
        .unwrap_or_else(|| label.to_string())
}

pub fn eval(cli: &Cli, args: &EvalArgs) -> CliResult<String> {
    let model = load_model(&args.model)?;
    let data = load_dataset(&args.dataset)?;
    check_classes(&model, &data)?;
    let ev = evaluate(&model, &data, cli.workers)?;
    let report = json!({
        "accuracy": ev.accuracy,
        "failed": ev.failed,
        "class_names": data.class_names,
        "confusion": ev.confusion,
        "per_class_accuracy": ev.per_class_accuracy(),
    });
    let json_text = to_json(&report);
    if let Some(out) = &cli.out {
        write_file(out, &json_text)?;
    }
    Ok(match cli.format {
        Format::Json => json_text,
        Format::Text => {
            let mut s = format!(
                "Accuracy: {:.1}% ({}/{})\n",
                ev.accuracy.percent, ev.accuracy.correct, ev.accuracy.total
            );
            if ev.failed > 0 {
                writeln!(s, "{} clouds could not be classified", ev.failed).unwrap();
            }
            s.push_str("confusion (rows = truth, columns = prediction):\n");
            let width = data.class_names.iter().map(|n| n.len()).max().unwrap_or(0).max(6);
            write!(s, "{:width$}", "").unwrap();
            for n in &data.class_names {
                write!(s, " {n:>width$}").unwrap();
            }
            s.push('\n');
            for (name, row) in data.class_names.iter().zip(&ev.confusion) {
                write!(s, "{name:width$}").unwrap();
                for v in row {
                    write!(s, " {v:>width$}").unwrap();
                }
                s.push('\n');
            }
            s
        }
    })
}

pub fn infer(cli: &Cli, args: &InferArgs) -> CliResult<String> {
    let model = load_model(&args.model)?;
    let cloud = load_cloud_file(&args.cloud)?;
    let p = model.predict(&cloud)?;
    let names: Vec<String> = (0..model.num_classes()).map(|c| class_name(&model, c)).collect();
    let report = json!({
        "label": p.label,
        "class": names[p.label],
        "scores": names.iter().zip(&p.probabilities).map(|(n, s)| json!({"class": n, "score": s})).collect::<Vec<_>>(),
        "logits": p.logits,
    });
    let json_text = to_json(&report);
    if let Some(out) = &cli.out {
        write_file(out, &json_text)?;
    }
    Ok(match cli.format {
        Format::Json => json_text,
        Format::Text => {
            let mut s = format!("class: {} ({})\n", names[p.label], p.label);
            for (n, score) in names.iter().zip(&p.probabilities) {
                writeln!(s, "  {n}: {score:.6}").unwrap();
            }
            s
        }
    })
}

pub fn crossdomain(cli: &Cli, args: &CrossdomainArgs) -> CliResult<String> {
    let spec_path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage("crossdomain needs --config <experiment.json>".into()))?;
    let spec = ExperimentSpec::load(spec_path)?;
    let out: PathBuf = match (&cli.out, &spec.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => spec_path.parent().unwrap_or(Path::new(".")).join(o),
        (None, None) => return Err(CliError::Usage("give --out or `output_dir` in the experiment".into())),
    };
    let epochs = args.epochs.unwrap_or(spec.epochs);

    let train_set = spec.train.load()?;
    let tests: Vec<(String, Dataset)> = spec
        .tests
        .iter()
        .map(|t| Ok((t.tag.clone(), t.source.load()?)))
        .collect::<CliResult<_>>()?;
    let base = match (&spec.model, &spec.model_config) {
        (Some(m), _) => Some(m.clone()),
        (None, Some(p)) => Some(read_json(p)?),
        (None, None) => None,
    };
    let cfg = model_config_for(base, &train_set)?;
    for (tag, data) in &tests {
        if data.class_names != train_set.class_names {
            return Err(ascn::AscnError::ClassMismatch(format!(
                "test set '{tag}' has classes {:?}, training set has {:?}",
                data.class_names, train_set.class_names
            ))
            .into());
        }
    }
    create_dir(&out)?;

    let mut rows = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let tc = TrainConfig {
            epochs,
            seed,
            ..spec.training.unwrap_or_default()
        };
        let mut model = build_model(&cfg.clone().with_seed(seed))?;
        let log = train_with(&mut model, &train_set, &tc, cli.workers, |_| {})?;
        save_model(&model, out.join(format!("model_seed{seed}.ascn")))?;
        let mut accuracies = Vec::with_capacity(tests.len());
        for (tag, data) in &tests {
            let ev = evaluate(&model, data, cli.workers)?;
            log::info!("seed {seed}, {tag}: {:.1}%", ev.accuracy.percent);
            accuracies.push(ev.accuracy.percent);
        }
        rows.push(SeedRow {
            seed,
            final_loss: log.final_loss().unwrap_or(f64::NAN),
            accuracies,
        });
    }
    let report = CrossDomainReport::new(
        tests.iter().map(|(t, _)| t.clone()).collect(),
        rows,
        epochs,
        cfg,
    );
    let json_text = to_json(&report);
    let markdown = report.to_markdown();
    write_file(&out.join("results.json"), &json_text)?;
    write_file(&out.join("results.md"), &markdown)?;
    Ok(match cli.format {
        Format::Json => json_text,
        Format::Text => markdown,
    })
}

