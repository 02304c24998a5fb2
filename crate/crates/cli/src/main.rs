//! `amrnet` command-line runner.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use amrnet::metrics::MetricReport;
use amrnet::pipeline::report::metrics_table_csv;
use amrnet::pipeline::{
    configure_workers, emit_reports, evaluate_prediction_file, load_dataset, load_model, prepare_task,
    run_experiment, save_model, train_cnn, train_gbt, train_rf, write_explanations, ExperimentConfig,
    ExperimentResult, ModelKind, ReportFormat, SavedModel,
};
use amrnet::synthetic::{planted_motif, write_dataset, MotifSpec};
use amrnet::Error;

#[derive(Parser)]
#[command(name = "amrnet", version, about = "Antimicrobial resistance prediction from SNP sequences")]
struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, env = "AMRNET_WORKERS", global = true)]
    workers: Option<usize>,

    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full protocol: split, train, evaluate, explain and report for every antibiotic.
    Run(ExperimentArgs),
    /// Train one model for one antibiotic and save it.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        antibiotic: String,
        /// cnn, xgb or rf.
        #[arg(long)]
        model: String,
        /// Defaults to <output_dir>/<antibiotic>/<model>.amrm.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Score a saved model on the test split, or re-score a predictions file.
    Evaluate {
        #[command(flatten)]
        exp: OptionalExperimentArgs,
        #[arg(long, requires = "config")]
        antibiotic: Option<String>,
        #[arg(long, conflicts_with = "predictions", requires = "antibiotic")]
        model_file: Option<PathBuf>,
        /// predictions.csv written by `run`.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Write the metrics table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// TreeSHAP attributions and gene report for a saved GBT model on the test split.
    Explain {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        antibiotic: String,
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
        /// Output directory; defaults to <output_dir>/<antibiotic>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-emit report files from a stored result.json.
    Report {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "csv,json,svg")]
        formats: Vec<String>,
    },
    /// Write a planted-motif dataset (snps.tsv, phenotypes.tsv).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 600)]
        samples: usize,
        #[arg(long, default_value_t = 2048)]
        length: usize,
        #[arg(long, default_value = "SYN")]
        antibiotic: String,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct OptionalExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Comma-separated subset of cnn,xgb,rf,ensemble.
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    antibiotics: Vec<String>,
    /// Maximum CNN epochs.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    no_svg: bool,
}

fn load_config(path: &Path, o: &Overrides) -> amrnet::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(d) = &o.output_dir {
        cfg.output_dir = d.clone();
    }
    if !o.models.is_empty() {
        cfg.models = o.models.iter().map(|m| ModelKind::parse(m)).collect::<amrnet::Result<_>>()?;
    }
    if !o.antibiotics.is_empty() {
        cfg.antibiotics = o.antibiotics.clone();
    }
    if let Some(e) = o.epochs {
        cfg.cnn.train.epochs = e;
    }
    if o.no_svg {
        cfg.explain.svg = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit_table(table: &BTreeMap<ModelKind, MetricReport>, out: Option<&Path>) -> anyhow::Result<()> {
    let text = metrics_table_csv(table)?;
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Exit status of a completed command: 0 clean, 1 when some antibiotic failed.
fn execute(cli: Cli) -> anyhow::Result<u8> {
    if let Some(n) = cli.workers {
        configure_workers(n)?;
    }
    match cli.command {
        Command::Run(args) => {
            let cfg = load_config(&args.config, &args.overrides)?;
            let result = run_experiment(&cfg)?;
            for ab in &result.antibiotics {
                println!("{}", ab.antibiotic);
                print!("{}", metrics_table_csv(&ab.metrics)?);
            }
            for f in &result.failures {
                eprintln!("{} failed: {}", f.antibiotic, f.error);
            }
            println!("outputs in {}", cfg.output_dir.display());
            Ok(u8::from(!result.failures.is_empty()))
        }
        Command::Train {
            exp,
            antibiotic,
            model,
            model_out,
        } => {
            let cfg = load_config(&exp.config, &exp.overrides)?;
            let data = load_dataset(&cfg)?;
            let task = prepare_task(&cfg, &data, &antibiotic)?;
            let kind = ModelKind::parse(&model)?;
            let saved = match kind {
                ModelKind::Cnn => train_cnn(&cfg, &task)?.0,
                ModelKind::Xgb => SavedModel::Gbt(train_gbt(&cfg, &task)?.0),
                ModelKind::Rf => SavedModel::Rf(train_rf(&cfg, &task)?),
                ModelKind::Ensemble => bail!(Error::Config(
                    "the ensemble has no parameters; train cnn and xgb".into()
                )),
            };
            let path = model_out.unwrap_or_else(|| cfg.output_dir.join(&antibiotic).join(format!("{}.amrm", kind.name())));
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            save_model(&saved, &path)?;
            println!("saved {} model to {}", saved.kind_name(), path.display());
            Ok(0)
        }
        Command::Evaluate {
            exp,
            antibiotic,
            model_file,
            predictions,
            out,
        } => {
            let table = if let Some(p) = predictions {
                evaluate_prediction_file(&p)?
            } else if let (Some(config), Some(ab), Some(mf)) = (&exp.config, &antibiotic, &model_file) {
                let cfg = load_config(config, &exp.overrides)?;
                let data = load_dataset(&cfg)?;
                let task = prepare_task(&cfg, &data, ab)?;
                let model = load_model(mf)?;
                let kind = match model {
                    SavedModel::Cnn32(_) | SavedModel::Cnn64(_) => ModelKind::Cnn,
                    SavedModel::Gbt(_) => ModelKind::Xgb,
                    SavedModel::Rf(_) => ModelKind::Rf,
                };
                let probs = model.predict_rows(&task.matrix, &task.split.test)?;
                let y = task.labels_of(&task.split.test);
                let report = amrnet::metrics::evaluate(&y, &amrnet::ensemble::classify(&probs))?;
                BTreeMap::from([(kind, report)])
            } else {
                bail!(Error::Config(
                    "evaluate needs --predictions, or --config with --antibiotic and --model-file".into()
                ));
            };
            emit_table(&table, out.as_deref())?;
            Ok(0)
        }
        Command::Explain {
            exp,
            antibiotic,
            model_file,
            top_k,
            out,
        } => {
            let mut cfg = load_config(&exp.config, &exp.overrides)?;
            if let Some(k) = top_k {
                cfg.explain.top_k = k;
            }
            let data = load_dataset(&cfg)?;
            let task = prepare_task(&cfg, &data, &antibiotic)?;
            let gbt = load_model(&model_file)?.into_gbt()?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.join(&antibiotic));
            let (genes, _) = write_explanations(&cfg, &task, &gbt, &data.annotation, &dir)?;
            println!("rank,feature,position,gene,mean_abs_shap");
            for g in &genes {
                println!("{},{},{},{},{:.6}", g.rank, g.feature, g.position, g.gene, g.mean_abs_shap);
            }
            Ok(0)
        }
        Command::Report { result, out, formats } => {
            let formats = formats
                .iter()
                .map(|f| ReportFormat::parse(f))
                .collect::<amrnet::Result<Vec<_>>>()?;
            let result = ExperimentResult::load(&result)?;
            for p in emit_reports(&result, &out, &formats)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
        Command::Synth {
            out,
            seed,
            samples,
            length,
            antibiotic,
        } => {
            let spec = MotifSpec {
                n_samples: samples,
                seq_len: length,
                locus: length / 2,
                ..MotifSpec::standard(seed)
            };
            let (matrix, labels) = planted_motif(&spec)?;
            fs::create_dir_all(&out)?;
            let (snps, phenos) = write_dataset(&out, &matrix, &labels, &antibiotic)?;
            let mut cfg = ExperimentConfig::new("snps.tsv".into(), "phenotypes.tsv".into(), "results".into());
            cfg.seed = seed;
            fs::write(out.join("config.toml"), cfg.to_toml()?)?;
            info!(
                "wrote {} and {}; motif {:?} at locus {}",
                snps.display(),
                phenos.display(),
                spec.motif,
                spec.locus
            );
            println!("{}", out.join("config.toml").display());
            Ok(0)
        }
    }
}

fn is_config_error(e: &anyhow::Error) -> bool {
    matches!(e.downcast_ref::<Error>(), Some(Error::Config(_)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}
