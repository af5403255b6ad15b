//! Experiment orchestration.
//!
//! One run executes the full protocol for a (method, selection, seed)
//! triple: warm-up on the auxiliary set, the method's main training
//! phase, optional sample selection plus re-training on the selected
//! subset, fine-tuning on the target set with a re-initialized target
//! head, and evaluation on the target test split. An experiment is the
//! cross product over the configured methods and seeds; every run
//! leaves its checkpoints and per-iteration reports on disk.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::KeyValues;
use crate::data::{generate_task, save_index_list, Dataset, TaskSpec};
use crate::error::{Error, PhaseExt, Result};
use crate::metatrain::{
    finetune, train_loop, warmup, LoopData, Method, TrainConfig, TrainReport,
};
use crate::model::{Head, ModelConfig, TwoHeadParams};
use crate::scalar::Scalar;
use crate::selection::{rank_and_select, score_dataset, write_scores_csv, SelectionConfig};

/// Derives independent sub-seeds from a run seed; splitmix64 finalizer.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fraction of test examples whose target-head argmax matches the
/// label; argmax ties break toward the lowest class index.
pub fn evaluate<S: Scalar>(model: &TwoHeadParams<S>, test: &Dataset<S>) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for i in 0..test.len() {
        let logits = model.forward_target(test.feature(i))?;
        let mut best = 0usize;
        for (c, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = c;
            }
        }
        if best == test.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// One (method, selection, seed) outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub selection: bool,
    pub seed: u64,
    pub accuracy: f64,
    /// Final target-term loss of the last main-phase iteration (zero
    /// for the fine-tuning baseline, which has no main phase).
    pub final_meta_loss: f64,
    pub final_reg_loss: f64,
    /// Final loss of the fine-tuning phase.
    pub final_finetune_loss: f64,
}

/// All rows of one experiment, one per (method, selection, seed).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(
            w,
            "method,selection,seed,accuracy,final_meta_loss,final_reg_loss,final_finetune_loss"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.method,
                if r.selection { 1 } else { 0 },
                r.seed,
                r.accuracy,
                r.final_meta_loss,
                r.final_reg_loss,
                r.final_finetune_loss
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<ResultTable> {
        let malformed = |detail: String| Error::MalformedFile {
            path: path.to_path_buf(),
            detail,
        };
        let r = BufReader::new(File::open(path)?);
        let mut lines = r.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| malformed("empty file".to_string()))?;
        if header
            != "method,selection,seed,accuracy,final_meta_loss,final_reg_loss,final_finetune_loss"
        {
            return Err(malformed(format!("unexpected header `{header}`")));
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(malformed(format!("line {}: wrong field count", lineno + 2)));
            }
            let bad = |what: &str| malformed(format!("line {}: bad {what}", lineno + 2));
            rows.push(ResultRow {
                method: Method::from_str(fields[0]).map_err(|_| bad("method"))?,
                selection: match fields[1] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad("selection flag")),
                },
                seed: fields[2].parse().map_err(|_| bad("seed"))?,
                accuracy: fields[3].parse().map_err(|_| bad("accuracy"))?,
                final_meta_loss: fields[4].parse().map_err(|_| bad("loss"))?,
                final_reg_loss: fields[5].parse().map_err(|_| bad("loss"))?,
                final_finetune_loss: fields[6].parse().map_err(|_| bad("loss"))?,
            });
        }
        Ok(ResultTable { rows })
    }

    fn rows_of(&self, method: Method, selection: bool) -> impl Iterator<Item = &ResultRow> {
        self.rows
            .iter()
            .filter(move |r| r.method == method && r.selection == selection)
    }

    /// Mean test accuracy over seeds for one (method, selection) cell.
    pub fn mean_accuracy(&self, method: Method, selection: bool) -> Option<f64> {
        mean(self.rows_of(method, selection).map(|r| r.accuracy))
    }

    pub fn mean_final_finetune_loss(&self, method: Method, selection: bool) -> Option<f64> {
        mean(self.rows_of(method, selection).map(|r| r.final_finetune_loss))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let collected: Vec<f64> = values.collect();
    if collected.is_empty() {
        None
    } else {
        Some(collected.iter().sum::<f64>() / collected.len() as f64)
    }
}

/// Full experiment description: task, architecture, the three training
/// phases, and the run matrix.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    /// Hidden widths of the base network; input and head sizes follow
    /// the task.
    pub hidden: Vec<usize>,
    pub warmup: TrainConfig,
    pub main: TrainConfig,
    pub finetune: TrainConfig,
    /// Methods run without selection.
    pub methods: Vec<Method>,
    /// Methods additionally run with sample selection.
    pub select_methods: Vec<Method>,
    pub keep_ratio: f64,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// The desk-scale benchmark defaults: a few-shot target task over a
    /// shared subspace, half-related auxiliary classes with 10% noise.
    pub fn default_benchmark(out_dir: PathBuf) -> Self {
        ExperimentConfig {
            task: default_task(),
            hidden: vec![128],
            warmup: default_warmup(),
            main: default_main(),
            finetune: default_finetune(),
            methods: vec![Method::Finetune, Method::Joint, Method::MetaFgNet],
            select_methods: vec![Method::MetaFgNet],
            keep_ratio: 0.5,
            seeds: (0..10).collect(),
            out_dir,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.warmup.validate()?;
        self.main.validate()?;
        self.finetune.validate()?;
        if self.methods.is_empty() && self.select_methods.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one method must be configured".to_string(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one seed must be configured".to_string(),
            ));
        }
        if self.select_methods.contains(&Method::Finetune) {
            return Err(Error::InvalidConfig(
                "sample selection needs a trained two-head model; the finetune \
                 baseline trains no source head"
                    .to_string(),
            ));
        }
        SelectionConfig {
            keep_ratio: self.keep_ratio,
        }
        .validate()?;
        self.model_config()?;
        Ok(())
    }

    /// The two-head architecture implied by the task and hidden widths.
    pub fn model_config(&self) -> Result<ModelConfig> {
        ModelConfig::new(
            self.task.input_dim,
            self.hidden.clone(),
            self.task.n_target_classes,
            self.task.n_aux_classes,
        )
    }

    /// Reads an experiment description from parsed `key = value`
    /// assignments, falling back to the benchmark defaults key by key.
    pub fn from_key_values(kv: &KeyValues, out_dir: PathBuf) -> Result<Self> {
        let d = ExperimentConfig::default_benchmark(out_dir.clone());
        let task = TaskSpec {
            input_dim: kv.get_usize("task.input_dim", d.task.input_dim)?,
            subspace_dim: kv.get_usize("task.subspace_dim", d.task.subspace_dim)?,
            n_target_classes: kv.get_usize("task.target_classes", d.task.n_target_classes)?,
            shots: kv.get_usize("task.shots", d.task.shots)?,
            n_aux_classes: kv.get_usize("task.aux_classes", d.task.n_aux_classes)?,
            aux_shots: kv.get_usize("task.aux_shots", d.task.aux_shots)?,
            related_fraction: kv.get_f64("task.related_fraction", d.task.related_fraction)?,
            related_coverage: kv.get_f64("task.related_coverage", d.task.related_coverage)?,
            noise_fraction: kv.get_f64("task.noise_fraction", d.task.noise_fraction)?,
            spread: kv.get_f64("task.spread", d.task.spread)?,
            center_separation: kv.get_f64("task.center_separation", d.task.center_separation)?,
            noise_spread: kv.get_f64("task.noise_spread", d.task.noise_spread)?,
            ambient_noise: kv.get_f64("task.ambient_noise", d.task.ambient_noise)?,
            seed: kv.get_u64("task.seed", d.task.seed)?,
        };
        let phase = |prefix: &str, d: &TrainConfig| -> Result<TrainConfig> {
            Ok(TrainConfig {
                eta: kv.get_f64(&format!("{prefix}.eta"), d.eta)?,
                alpha: kv.get_f64(&format!("{prefix}.alpha"), d.alpha)?,
                lr_decay_epochs: kv
                    .get_usize_list(&format!("{prefix}.lr_decay_epochs"), &d.lr_decay_epochs)?,
                batch_target: kv.get_usize(&format!("{prefix}.batch_target"), d.batch_target)?,
                batch_meta: kv.get_usize(&format!("{prefix}.batch_meta"), d.batch_meta)?,
                batch_aux: kv.get_usize(&format!("{prefix}.batch_aux"), d.batch_aux)?,
                epochs: kv.get_usize(&format!("{prefix}.epochs"), d.epochs)?,
                momentum: kv.get_f64(&format!("{prefix}.momentum"), d.momentum)?,
                weight_decay: kv.get_f64(&format!("{prefix}.weight_decay"), d.weight_decay)?,
                reg_weight: kv.get_f64(&format!("{prefix}.reg_weight"), d.reg_weight)?,
                seed: 0,
            })
        };
        let methods = kv
            .get_string_list(
                "experiment.methods",
                &["finetune", "joint", "metafgnet"],
            )
            .iter()
            .map(|s| Method::from_str(s))
            .collect::<Result<Vec<_>>>()?;
        let select_methods = kv
            .get_string_list("experiment.select_methods", &["metafgnet"])
            .iter()
            .map(|s| Method::from_str(s))
            .collect::<Result<Vec<_>>>()?;
        let cfg = ExperimentConfig {
            task,
            hidden: kv.get_usize_list("model.hidden", &d.hidden)?,
            warmup: phase("warmup", &d.warmup)?,
            main: phase("main", &d.main)?,
            finetune: phase("finetune", &d.finetune)?,
            methods,
            select_methods,
            keep_ratio: kv.get_f64("experiment.keep_ratio", d.keep_ratio)?,
            seeds: kv.get_u64_list("experiment.seeds", &d.seeds)?,
            out_dir,
        };
        kv.reject_unknown_keys()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn default_task() -> TaskSpec {
    TaskSpec {
        input_dim: 32,
        subspace_dim: 6,
        n_target_classes: 5,
        shots: 10,
        n_aux_classes: 24,
        aux_shots: 40,
        related_fraction: 0.5,
        related_coverage: 0.8,
        noise_fraction: 0.1,
        spread: 0.8,
        center_separation: 3.0,
        noise_spread: 1.6,
        ambient_noise: 0.2,
        seed: 1000,
    }
}

fn default_warmup() -> TrainConfig {
    TrainConfig {
        eta: 0.0,
        alpha: 0.1,
        lr_decay_epochs: vec![],
        batch_target: 16,
        batch_meta: 16,
        batch_aux: 32,
        epochs: 40,
        momentum: 0.9,
        weight_decay: 1e-4,
        reg_weight: 1.0,
        seed: 0,
    }
}

fn default_main() -> TrainConfig {
    TrainConfig {
        eta: 0.05,
        alpha: 0.05,
        lr_decay_epochs: vec![40, 80],
        batch_target: 16,
        batch_meta: 16,
        batch_aux: 32,
        epochs: 100,
        momentum: 0.9,
        weight_decay: 1e-4,
        reg_weight: 1.0,
        seed: 0,
    }
}

fn default_finetune() -> TrainConfig {
    TrainConfig {
        eta: 0.0,
        alpha: 0.005,
        lr_decay_epochs: vec![],
        batch_target: 16,
        batch_meta: 16,
        batch_aux: 32,
        epochs: 15,
        momentum: 0.9,
        weight_decay: 1e-4,
        reg_weight: 0.0,
        seed: 0,
    }
}

/// Writes the result table and any named per-run loss-curve reports
/// into `dir`.
pub fn emit_reports(
    dir: &Path,
    table: &ResultTable,
    table_name: &str,
    reports: &[(String, &TrainReport)],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    table.write_csv(&dir.join(table_name))?;
    for (name, report) in reports {
        report.write_csv(&dir.join(format!("{name}.csv")))?;
    }
    Ok(())
}

fn run_one(cfg: &ExperimentConfig, method: Method, selection: bool, seed: u64) -> Result<ResultRow> {
    let mut task_spec = cfg.task.clone();
    task_spec.seed = mix_seed(cfg.task.seed, seed);
    let task = generate_task::<f64>(&task_spec).in_phase("generate")?;
    let run_dir = cfg.out_dir.join(run_name(method, selection, seed));
    std::fs::create_dir_all(&run_dir).map_err(Error::from).in_phase("generate")?;

    let mut model =
        TwoHeadParams::<f64>::init(cfg.model_config()?, mix_seed(seed, 1)).in_phase("init")?;
    let mut reports: Vec<(String, TrainReport)> = Vec::new();

    // Pre-training analog: source view only, on the full auxiliary set.
    let mut warmup_cfg = cfg.warmup.clone();
    warmup_cfg.seed = mix_seed(seed, 2);
    let warmup_report = warmup(&mut model, &task.auxiliary, &warmup_cfg).in_phase("warmup")?;
    reports.push(("warmup".to_string(), warmup_report));

    // Main phase; the fine-tuning baseline goes straight to fine-tuning.
    let mut final_meta_loss = 0.0;
    let mut final_reg_loss = 0.0;
    if method != Method::Finetune {
        let mut main_cfg = cfg.main.clone();
        main_cfg.seed = mix_seed(seed, 3);
        let data = LoopData {
            target_train: &task.target_train,
            auxiliary: Some(&task.auxiliary),
            target_eval: None,
        };
        let report = train_loop(&mut model, method, &data, &main_cfg).in_phase("main")?;
        final_meta_loss = report.final_meta_loss().unwrap_or(0.0);
        final_reg_loss = report.final_reg_loss().unwrap_or(0.0);
        reports.push(("main".to_string(), report));
    }

    // Selection happens on the trained model before any fine-tuning;
    // re-training continues from the current parameters on the
    // selected subset.
    if selection {
        let scores = score_dataset(&model, &task.auxiliary).in_phase("select")?;
        let selected = rank_and_select(
            &scores,
            &SelectionConfig {
                keep_ratio: cfg.keep_ratio,
            },
        )
        .in_phase("select")?;
        write_scores_csv(&run_dir.join("scores.csv"), &scores, &selected).in_phase("select")?;
        save_index_list(&run_dir.join("selected.idx"), &selected).in_phase("select")?;
        let refined = task.auxiliary.subset_by_indices(&selected).in_phase("select")?;

        let mut retrain_cfg = cfg.main.clone();
        retrain_cfg.seed = mix_seed(seed, 4);
        let data = LoopData {
            target_train: &task.target_train,
            auxiliary: Some(&refined),
            target_eval: None,
        };
        let report =
            train_loop(&mut model, method, &data, &retrain_cfg).in_phase("select-retrain")?;
        final_meta_loss = report.final_meta_loss().unwrap_or(0.0);
        final_reg_loss = report.final_reg_loss().unwrap_or(0.0);
        reports.push(("retrain".to_string(), report));
    }

    model.save(&run_dir.join("post_main.ckpt")).in_phase("checkpoint")?;

    // Fine-tune the (base, target head) pair with a fresh target head.
    model.reinit_head(Head::Target, mix_seed(seed, 5));
    let mut ft_cfg = cfg.finetune.clone();
    ft_cfg.seed = mix_seed(seed, 6);
    let data = LoopData {
        target_train: &task.target_train,
        auxiliary: None,
        target_eval: Some(&task.target_test),
    };
    let ft_report = finetune(&mut model, &data, &ft_cfg).in_phase("finetune")?;
    let final_finetune_loss = ft_report.final_meta_loss().unwrap_or(0.0);
    reports.push(("finetune".to_string(), ft_report));

    model.save(&run_dir.join("final.ckpt")).in_phase("checkpoint")?;
    let accuracy = evaluate(&model, &task.target_test).in_phase("evaluate")?;

    let row = ResultRow {
        method,
        selection,
        seed,
        accuracy,
        final_meta_loss,
        final_reg_loss,
        final_finetune_loss,
    };
    let single = ResultTable { rows: vec![row.clone()] };
    let named: Vec<(String, &TrainReport)> = reports
        .iter()
        .map(|(n, r)| (n.clone(), r))
        .collect();
    emit_reports(&run_dir, &single, "result.csv", &named).in_phase("report")?;
    Ok(row)
}

fn run_name(method: Method, selection: bool, seed: u64) -> String {
    format!(
        "{method}{}-seed{seed}",
        if selection { "-sel" } else { "" }
    )
}

/// Runs the whole experiment matrix and writes `results.csv` plus
/// per-run artifacts under the configured output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let mut table = ResultTable::default();
    for &seed in &cfg.seeds {
        for &method in &cfg.methods {
            table.rows.push(run_one(cfg, method, false, seed)?);
        }
        for &method in &cfg.select_methods {
            table.rows.push(run_one(cfg, method, true, seed)?);
        }
    }
    emit_reports(&cfg.out_dir, &table, "results.csv", &[]).in_phase("report")?;
    Ok(table)
}

/// Re-aggregates `results.csv` from the per-run `result.csv` files
/// under `dir`, returning the merged table.
pub fn aggregate_results(dir: &Path) -> Result<ResultTable> {
    let mut rows = Vec::new();
    let mut run_dirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("result.csv").is_file())
        .collect();
    run_dirs.sort();
    for run in run_dirs {
        rows.extend(ResultTable::read_csv(&run.join("result.csv"))?.rows);
    }
    if rows.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no run results found under {}",
            dir.display()
        )));
    }
    let table = ResultTable { rows };
    table.write_csv(&dir.join("results.csv"))?;
    Ok(table)
}

/// Per-(method, selection) mean accuracy lines, for console summaries.
pub fn summarize(table: &ResultTable) -> String {
    let mut cells: Vec<(Method, bool)> = Vec::new();
    for row in &table.rows {
        if !cells.contains(&(row.method, row.selection)) {
            cells.push((row.method, row.selection));
        }
    }
    let mut out = String::new();
    for (method, selection) in cells {
        let acc = table.mean_accuracy(method, selection).unwrap_or(f64::NAN);
        let loss = table
            .mean_final_finetune_loss(method, selection)
            .unwrap_or(f64::NAN);
        let n = table.rows_of(method, selection).count();
        fmt::Write::write_fmt(
            &mut out,
            format_args!(
                "{method}{}: mean accuracy {acc:.4}, mean final finetune loss {loss:.4} ({n} seeds)\n",
                if selection { " +selection" } else { "" }
            ),
        )
        .expect("string formatting");
    }
    out
}
