//! Command-line front end: generate data, train, select auxiliary
//! samples, fine-tune, evaluate, and aggregate reports.
//!
//! Every subcommand reads one plain-text `key = value` config file
//! (all keys optional; built-in benchmark defaults apply) plus flag
//! overrides, and exits nonzero with a phase-tagged message on any
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use metafg::config::KeyValues;
use metafg::data::{load_index_list, save_index_list};
use metafg::harness::{aggregate_results, evaluate, mix_seed, run_experiment, summarize};
use metafg::metatrain::{finetune, train_loop, warmup, LoopData, Method};
use metafg::model::{Head, TwoHeadParams};
use metafg::selection::{rank_and_select, score_dataset, write_scores_csv, SelectionConfig};
use metafg::{Dataset, ExperimentConfig, SyntheticTask};

#[derive(Parser)]
#[command(name = "metafg", version, about = "Two-head meta-training on synthetic tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Plain-text key=value config file; omitted keys use benchmark defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory of dataset files from `generate`; generated in memory
    /// from the config when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic task splits as dataset files.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Warm-up plus the method's main training phase.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training method: finetune, joint or metafgnet.
        #[arg(long, value_parser = parse_method)]
        method: Method,
        /// Start from this checkpoint instead of initializing and warming up.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Restrict the auxiliary set to the indices in this file.
        #[arg(long)]
        aux_indices: Option<PathBuf>,
    },
    /// Score auxiliary samples with a trained checkpoint and select the top ratio.
    Select {
        #[command(flatten)]
        common: Common,
        /// Trained model checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Fraction of auxiliary samples to keep.
        #[arg(long)]
        select_ratio: Option<f64>,
    },
    /// Re-initialize the target head and fine-tune on the target set.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Print target test accuracy of a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Merge per-run result files under --out into results.csv and
    /// print per-method means.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the full experiment matrix from the config.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Run only this method (with its configured selection runs).
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        /// Run only this seed (overrides the config's seed list).
        #[arg(long)]
        only_seed: Option<u64>,
        #[arg(long)]
        select_ratio: Option<f64>,
    },
}

fn load_config(common: &Common) -> metafg::Result<ExperimentConfig> {
    let kv = match &common.config {
        Some(path) => KeyValues::load(path)?,
        None => KeyValues::parse("").expect("empty config"),
    };
    ExperimentConfig::from_key_values(&kv, common.out.clone())
}

fn load_or_generate(
    cfg: &ExperimentConfig,
    common: &Common,
) -> metafg::Result<SyntheticTask<f64>> {
    match &common.data {
        Some(dir) => Ok(SyntheticTask {
            target_train: Dataset::load(&dir.join("target_train.ds"))?,
            target_test: Dataset::load(&dir.join("target_test.ds"))?,
            auxiliary: Dataset::load(&dir.join("auxiliary.ds"))?,
        }),
        None => {
            let mut spec = cfg.task.clone();
            spec.seed = mix_seed(cfg.task.seed, common.seed);
            metafg::data::generate_task(&spec)
        }
    }
}

fn load_model(cfg: &ExperimentConfig, path: &Path) -> metafg::Result<TwoHeadParams<f64>> {
    TwoHeadParams::load(path, cfg.model_config()?)
}

fn run(cli: Cli) -> metafg::Result<()> {
    match cli.command {
        Command::Generate { common } => {
            let cfg = load_config(&common)?;
            let task = load_or_generate(&cfg, &common)?;
            std::fs::create_dir_all(&common.out)?;
            task.target_train.save(&common.out.join("target_train.ds"))?;
            task.target_test.save(&common.out.join("target_test.ds"))?;
            task.auxiliary.save(&common.out.join("auxiliary.ds"))?;
            println!(
                "wrote {} train / {} test / {} auxiliary examples to {}",
                task.target_train.len(),
                task.target_test.len(),
                task.auxiliary.len(),
                common.out.display()
            );
            Ok(())
        }
        Command::Train {
            common,
            method,
            init,
            aux_indices,
        } => {
            let cfg = load_config(&common)?;
            let task = load_or_generate(&cfg, &common)?;
            std::fs::create_dir_all(&common.out)?;

            let auxiliary = match &aux_indices {
                Some(path) => {
                    let indices = load_index_list(path)?;
                    task.auxiliary.subset_by_indices(&indices)?
                }
                None => task.auxiliary.clone(),
            };

            let mut model = match &init {
                Some(path) => load_model(&cfg, path)?,
                None => {
                    let mut m =
                        TwoHeadParams::init(cfg.model_config()?, mix_seed(common.seed, 1))?;
                    let mut wcfg = cfg.warmup.clone();
                    wcfg.seed = mix_seed(common.seed, 2);
                    let report = warmup(&mut m, &auxiliary, &wcfg)?;
                    report.write_csv(&common.out.join("warmup.csv"))?;
                    m
                }
            };

            if method != Method::Finetune {
                let mut mcfg = cfg.main.clone();
                mcfg.seed = mix_seed(common.seed, 3);
                let data = LoopData {
                    target_train: &task.target_train,
                    auxiliary: Some(&auxiliary),
                    target_eval: Some(&task.target_test),
                };
                let report = train_loop(&mut model, method, &data, &mcfg)?;
                report.write_csv(&common.out.join("main.csv"))?;
            }
            let ckpt = common.out.join("model.ckpt");
            model.save(&ckpt)?;
            println!("wrote {}", ckpt.display());
            Ok(())
        }
        Command::Select {
            common,
            ckpt,
            select_ratio,
        } => {
            let cfg = load_config(&common)?;
            let task = load_or_generate(&cfg, &common)?;
            let model = load_model(&cfg, &ckpt)?;
            std::fs::create_dir_all(&common.out)?;
            let scores = score_dataset(&model, &task.auxiliary)?;
            let keep_ratio = select_ratio.unwrap_or(cfg.keep_ratio);
            let selected = rank_and_select(&scores, &SelectionConfig { keep_ratio })?;
            write_scores_csv(&common.out.join("scores.csv"), &scores, &selected)?;
            save_index_list(&common.out.join("selected.idx"), &selected)?;
            println!(
                "selected {} of {} auxiliary samples",
                selected.len(),
                scores.len()
            );
            Ok(())
        }
        Command::Finetune { common, ckpt } => {
            let cfg = load_config(&common)?;
            let task = load_or_generate(&cfg, &common)?;
            let mut model = load_model(&cfg, &ckpt)?;
            std::fs::create_dir_all(&common.out)?;
            model.reinit_head(Head::Target, mix_seed(common.seed, 5));
            let mut fcfg = cfg.finetune.clone();
            fcfg.seed = mix_seed(common.seed, 6);
            let data = LoopData {
                target_train: &task.target_train,
                auxiliary: None,
                target_eval: Some(&task.target_test),
            };
            let report = finetune(&mut model, &data, &fcfg)?;
            report.write_csv(&common.out.join("finetune.csv"))?;
            let out_ckpt = common.out.join("final.ckpt");
            model.save(&out_ckpt)?;
            println!("wrote {}", out_ckpt.display());
            Ok(())
        }
        Command::Evaluate { common, ckpt } => {
            let cfg = load_config(&common)?;
            let task = load_or_generate(&cfg, &common)?;
            let model = load_model(&cfg, &ckpt)?;
            let accuracy = evaluate(&model, &task.target_test)?;
            println!("accuracy {accuracy}");
            Ok(())
        }
        Command::Report { out } => {
            let table = aggregate_results(&out)?;
            print!("{}", summarize(&table));
            Ok(())
        }
        Command::Experiment {
            common,
            method,
            only_seed,
            select_ratio,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(m) = method {
                cfg.methods.retain(|&x| x == m);
                cfg.select_methods.retain(|&x| x == m);
            }
            if let Some(seed) = only_seed {
                cfg.seeds = vec![seed];
            }
            if let Some(ratio) = select_ratio {
                cfg.keep_ratio = ratio;
            }
            let table = run_experiment(&cfg)?;
            print!("{}", summarize(&table));
            println!(
                "results written to {}",
                cfg.out_dir.join("results.csv").display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
