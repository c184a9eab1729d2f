use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semcross::episodes::{generate_synthetic, load_manifest, Split, SyntheticConfig};
use semcross::error::{Error, Result};
use semcross::model::Model;
use semcross::plot::{plot_file, PlotKind};
use semcross::semantics::WordVectorTable;
use semcross::trainer::{
    self, ablate, evaluate_model, metrics_csv, model_config, sweep, write_ablation_csv, write_sweep_csv, MetricsRow,
    RunConfig, SweepParam, TaskData,
};
use semcross::verify::{self, CheckResult};

#[derive(Parser, Debug)]
#[command(name = "semcross", version, about = "Multi-task few-shot learning with semantic cross-attention")]
struct Cli {
    /// Worker threads for evaluation episodes.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write model.sct1, metrics.csv and config.txt.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Defaults to the config's eval_episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Directory for eval.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train once per value of one hyperparameter and score on validation.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare baseline, MT, MT+SE, MT+CAM and MT+CONCAT on the test split.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seeds to average over; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Write a synthetic dataset with a matching word-vector file.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        classes: usize,
        #[arg(long, default_value_t = 40)]
        items: usize,
        #[arg(long, default_value_t = 84)]
        image_size: usize,
        #[arg(long, default_value_t = 0.5)]
        mismatch: f64,
        #[arg(long, default_value_t = 300)]
        word_dim: usize,
        #[arg(long, default_value_t = 6)]
        train_classes: usize,
        #[arg(long, default_value_t = 5)]
        val_classes: usize,
    },
    /// Check reverse-mode gradients against finite differences.
    Gradcheck {
        #[arg(long, value_parser = ["ops", "end2end"])]
        scope: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt the named primitive's gradient (negative control).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Render a CSV as an SVG chart.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path)
}

fn load_data(cfg: &RunConfig) -> Result<TaskData> {
    let root = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("config has no dataset path".into()))?;
    if !root.is_dir() {
        return Err(Error::Config(format!("dataset path {} does not exist", root.display())));
    }
    let vectors = cfg.vectors_path().expect("dataset is set");
    if !vectors.is_file() {
        return Err(Error::Config(format!("vector file {} does not exist", vectors.display())));
    }
    let dataset = load_manifest(root)?;
    let table = WordVectorTable::load(&vectors)?;
    TaskData::new(dataset, &table, cfg.tau_t)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn report(results: &[CheckResult]) -> Result<()> {
    for r in results {
        println!(
            "{:<20} cases {:>3}  max rel err {:.3e}  {}",
            r.name,
            r.cases,
            r.max_rel_error,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    verify::ensure_passed(results)
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads.max(1);
    match cli.command {
        Command::Train { config, out } => {
            let cfg = load_config(&config)?;
            let data = load_data(&cfg)?;
            let run = trainer::train(&cfg, &data, threads, None)?;
            create_dir(&out)?;
            run.model.params.save(&out.join("model.sct1"))?;
            write(&out.join("metrics.csv"), metrics_csv(&run.rows))?;
            write(&out.join("config.txt"), cfg.to_text())?;
            if let Some(last) = run.rows.iter().rev().find(|r| r.split == Split::Val) {
                println!("final val accuracy {:.4} ± {:.4}", last.mean_acc, last.ci95);
            }
        }
        Command::Eval {
            config,
            checkpoint,
            split,
            episodes,
            out,
        } => {
            let cfg = load_config(&config)?;
            let data = load_data(&cfg)?;
            let mut model = Model::<f64>::new(model_config(&cfg, data.word_dim), 0)?;
            model.params.load_from(&checkpoint)?;
            let n = episodes.unwrap_or(cfg.eval_episodes);
            let rep = evaluate_model(&model, &data.dataset, split, &cfg, n, threads)?;
            println!("{split} accuracy {:.4} ± {:.4} over {} episodes", rep.mean_acc, rep.ci95, rep.episodes);
            if let Some(dir) = out {
                create_dir(&dir)?;
                let row = MetricsRow {
                    epoch: cfg.epochs,
                    split,
                    mean_acc: rep.mean_acc,
                    ci95: rep.ci95,
                    loss_cls: rep.mean_loss(),
                    loss_aux: 0.0,
                    lr: 0.0,
                };
                write(&dir.join("eval.csv"), metrics_csv(&[row]))?;
            }
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let cfg = load_config(&config)?;
            let data = load_data(&cfg)?;
            let rows = sweep(&cfg, &data, param, &values, threads)?;
            create_dir(&out)?;
            let csv = out.join("sweep.csv");
            write_sweep_csv(&csv, &rows)?;
            plot_file(&csv, PlotKind::Sweep, &out.join("sweep.svg"))?;
            for r in &rows {
                println!("{} = {}: {:.4} ± {:.4}", r.param, r.value, r.mean_acc, r.ci95);
            }
        }
        Command::Ablate { config, out, seeds } => {
            let cfg = load_config(&config)?;
            let data = load_data(&cfg)?;
            let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds };
            let rows = ablate(&cfg, &seeds, threads, |_| Ok(data.clone()))?;
            create_dir(&out)?;
            let csv = out.join("ablation.csv");
            write_ablation_csv(&csv, &rows)?;
            plot_file(&csv, PlotKind::Ablation, &out.join("ablation.svg"))?;
            for r in &rows {
                println!("{:<10} {:.4} ± {:.4}", r.variant, r.mean_acc, r.ci95);
            }
        }
        Command::GenSynthetic {
            out,
            seed,
            classes,
            items,
            image_size,
            mismatch,
            word_dim,
            train_classes,
            val_classes,
        } => {
            let cfg = SyntheticConfig {
                classes,
                items_per_class: items,
                image_size,
                mismatch,
                word_dim,
                train_classes,
                val_classes,
                ..SyntheticConfig::default()
            };
            let syn = generate_synthetic(&cfg, seed)?;
            syn.write(&out)?;
            println!("wrote {} classes to {}", syn.dataset.classes.len(), out.display());
        }
        Command::Gradcheck {
            scope,
            seed,
            inject_fault,
        } => {
            let results = if scope == "ops" {
                verify::gradcheck_ops(seed, inject_fault.as_deref())?
            } else {
                vec![verify::gradcheck_end2end(seed)?]
            };
            report(&results)?;
        }
        Command::Plot { csv, kind, out } => plot_file(&csv, kind, &out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
