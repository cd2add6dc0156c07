use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vlf_core::fusion::{
    detect_document, evaluate_metrics, explain, load_checkpoint, prepare_samples, save_checkpoint,
    train_prepared, Dataset, LabeledSample, TrainConfig,
};
use vlf_core::pipeline::corpus::{labeled_samples, load_labels, seed_corpus, split};
use vlf_core::pipeline::synthetic::synthetic_dataset;
use vlf_core::pipeline::{
    collect_inputs, report_metrics, run_lifecycle, LifecycleConfig, RunManifest, MANIFEST_FILE,
};
use vlf_core::repair::{repair_sample, RepairOutcome};
use vlf_core::uast::{detect_language, serialize_document};
use vlf_core::validation::{
    validate_sample, Planner, ValidationConfig, ValidationSample, ValidationTrace,
};

#[derive(Parser)]
#[command(
    name = "vlf",
    version,
    about = "Detect, validate and repair vulnerabilities in Python, Java and C++"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Lifecycle configuration (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the universal AST of a source file as JSON
    Parse {
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the fusion detector
    Train {
        /// Labeled corpus directory (with labels.json)
        #[arg(long, conflicts_with = "synthetic")]
        corpus: Option<PathBuf>,
        /// Train on a generated corpus of this many samples instead
        #[arg(long)]
        synthetic: Option<usize>,
        /// Training hyperparameters (JSON)
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run detection on files or directories
    Detect {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Validate one file in the configured sandbox
    Validate {
        file: PathBuf,
        /// Detection flag to use instead of running the model
        #[arg(long)]
        flag: Option<u8>,
    },
    /// Repair one file given its exploited validation trace
    Repair {
        file: PathBuf,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Run the full lifecycle over files or directories
    Lifecycle {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Metrics for a finished run against ground-truth labels
    Report {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write the bundled labeled desk corpus
    SeedCorpus { dir: PathBuf },
    /// Seeded 80/10/10 split of a labeled corpus
    Split {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn lifecycle_config(g: &Global) -> Result<LifecycleConfig> {
    let path = g
        .config
        .as_ref()
        .context("--config is required for this command")?;
    let mut cfg = LifecycleConfig::load(path)?.with_env_overrides();
    if let Some(d) = &g.run_dir {
        cfg.run_dir = d.clone();
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
        if let Planner::Rule { seed } = &mut cfg.planner {
            *seed = s;
        }
    }
    Ok(cfg)
}

fn read_sample(file: &Path) -> Result<ValidationSample> {
    let source = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let language = detect_language(file, source.as_bytes())?;
    let id = file.display().to_string();
    Ok(ValidationSample::parse(id, language, source)?)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn train(
    corpus: Option<PathBuf>,
    synthetic: Option<usize>,
    train_config: Option<PathBuf>,
    out: &Path,
    g: &Global,
) -> Result<()> {
    let mut cfg: TrainConfig = match train_config {
        Some(p) => serde_json::from_str(&fs::read_to_string(&p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let embedder = vlf_core::semantic::EmbedderConfig::stub(cfg.seed).with_env_overrides();
    let (data, test): (Dataset, Vec<LabeledSample>) = match (corpus, synthetic) {
        (Some(dir), _) => {
            let samples = labeled_samples(&dir)?;
            let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
            let lists = split(&ids, cfg.seed);
            let pick = |names: &[String]| -> Vec<LabeledSample> {
                samples
                    .iter()
                    .filter(|s| names.contains(&s.id))
                    .cloned()
                    .collect()
            };
            (
                Dataset {
                    train: pick(&lists.train),
                    val: pick(&lists.val),
                },
                pick(&lists.test),
            )
        }
        (None, Some(n)) => (synthetic_dataset(n, cfg.seed), Vec::new()),
        (None, None) => bail!("give --corpus or --synthetic"),
    };
    let train = prepare_samples(&data.train, &embedder)?;
    let val = prepare_samples(&data.val, &embedder)?;
    let (model, history) = train_prepared(&train, &val, &cfg, &embedder)?;
    for e in &history.epochs {
        eprintln!(
            "epoch {:>3}  loss {:.4}  val acc {:.4}  f1 {:.4}",
            e.epoch, e.loss.total, e.val.accuracy, e.val.f1
        );
    }
    save_checkpoint(out, &model, Some(&cfg))?;
    if !test.is_empty() {
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for s in &test {
            preds.push(vlf_core::fusion::detect(s.source.as_bytes(), s.language, &model)?.flag);
            labels.push(s.label);
        }
        let m = evaluate_metrics(&preds, &labels)?;
        eprintln!("test acc {:.4}  f1 {:.4}", m.accuracy, m.f1);
    }
    eprintln!(
        "best epoch {}; model written to {}",
        history.best_epoch,
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Parse { file, out } => {
            let sample = read_sample(&file)?;
            let bytes = serialize_document(&sample.doc)?;
            match out {
                Some(p) => fs::write(&p, bytes)?,
                None => println!("{}", String::from_utf8_lossy(&bytes)),
            }
        }
        Command::Train {
            corpus,
            synthetic,
            train_config,
            out,
        } => train(corpus, synthetic, train_config, &out, g)?,
        Command::Detect { model, inputs } => {
            let model = match (model, &g.config) {
                (Some(p), _) => load_checkpoint(&p)?,
                (None, Some(_)) => lifecycle_config(g)?.model()?,
                (None, None) => bail!("give --model or --config"),
            };
            for input in collect_inputs(&inputs)? {
                let sample = read_sample(&input.path)?;
                let det = detect_document(&sample.doc, &sample.source, &model)?;
                let line = serde_json::json!({
                    "sample_id": input.id,
                    "flag": det.flag,
                    "prob_vulnerable": det.prob_vulnerable,
                    "explanation": explain(&det),
                });
                println!("{line}");
            }
        }
        Command::Validate { file, flag } => {
            let cfg = lifecycle_config(g)?;
            let sample = read_sample(&file)?;
            let flag = match flag {
                Some(f) => f,
                None => detect_document(&sample.doc, &sample.source, &cfg.model()?)?.flag,
            };
            let vcfg = ValidationConfig {
                planner: cfg.planner.clone(),
                harness_timeout_s: cfg.harness_timeout_s,
            };
            let trace = validate_sample(&sample, flag, &vcfg, cfg.driver()?.as_ref());
            print_json(&trace)?;
        }
        Command::Repair { file, trace } => {
            let cfg = lifecycle_config(g)?;
            let sample = read_sample(&file)?;
            let trace: ValidationTrace = serde_json::from_str(&fs::read_to_string(&trace)?)?;
            let outcome = repair_sample(&sample, &trace, &cfg.model()?, &cfg.generator)?;
            if let RepairOutcome::Success { patched_source, .. } = &outcome {
                eprintln!("{patched_source}");
            }
            print_json(&outcome)?;
        }
        Command::Lifecycle { inputs } => {
            let cfg = lifecycle_config(g)?;
            let files = collect_inputs(&inputs)?;
            let m = run_lifecycle(&files, &cfg)?;
            let a = &m.aggregate;
            println!(
                "run {}: {} samples, {} flagged, {} validated, {} exploited, {} repaired, {} non-convergent, {} errors",
                m.run_id, a.samples, a.flagged, a.validated, a.exploited, a.repaired, a.non_convergent, a.errors
            );
            println!("manifest: {}", cfg.run_dir.join(MANIFEST_FILE).display());
        }
        Command::Report { labels, json } => {
            let dir = match (&g.run_dir, &g.config) {
                (Some(d), _) => d.clone(),
                (None, Some(_)) => lifecycle_config(g)?.run_dir,
                (None, None) => bail!("give --run-dir or --config"),
            };
            let manifest = RunManifest::load(&dir.join(MANIFEST_FILE))?;
            let report = report_metrics(&manifest, &load_labels(&labels)?)?;
            if json {
                print_json(&report)?;
            } else {
                print!("{report}");
            }
        }
        Command::SeedCorpus { dir } => {
            let files = seed_corpus(&dir)?;
            println!(
                "wrote {} files and labels.json to {}",
                files.len(),
                dir.display()
            );
        }
        Command::Split { labels, out } => {
            let ids: Vec<String> = load_labels(&labels)?.into_keys().collect();
            let lists = split(&ids, g.seed.unwrap_or(0));
            let text = serde_json::to_string_pretty(&lists)?;
            match out {
                Some(p) => fs::write(p, text + "\n")?,
                None => println!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
