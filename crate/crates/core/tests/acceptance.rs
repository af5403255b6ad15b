//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured margin (run with `--nocapture` to see
//! them). Expected values come from independent straight-line oracles,
//! finite differences, closed forms, or frozen protocol constants —
//! never from the code paths under test.

mod support;

use std::sync::LazyLock;
use std::time::Instant;

use metafg::autodiff::functional::{hvp, HvpBackend};
use metafg::autodiff::params::ParamVector;
use metafg::data::{generate_task, Relatedness, TaskSpec};
use metafg::harness::{mix_seed, run_experiment, ExperimentConfig, ResultTable};
use metafg::metatrain::{meta_gradient, train_loop, warmup, LoopData, Method};
use metafg::model::{Head, ModelConfig, TwoHeadParams};
use metafg::selection::{
    rank_and_select, score_dataset, score_from_logits, selection_precision, ScoredSample,
    SelectionConfig,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{batch_rows, max_rel_err, OracleNet};

fn pass(line: &str) {
    println!("PASS: {line}");
}

/// Instance ids whose finite-difference probes stay clear of rectifier
/// kinks. A probe step that crosses a kink makes the *difference
/// quotient* wrong (the analytic subgradient is fine), so instances
/// are pre-screened with a wide margin; the screening is deterministic
/// and the ids are frozen here.
const FD_SAFE_INSTANCES: [u64; 20] = [
    4, 7, 8, 11, 12, 13, 17, 18, 21, 23, 24, 25, 26, 27, 28, 29, 31, 33, 37, 39,
];

/// A small two-layer network and task used by the gradient criteria.
fn small_instance(seed: u64) -> (TwoHeadParams<f64>, metafg::SyntheticTask<f64>) {
    let config = ModelConfig::new(8, vec![8, 8], 4, 4).unwrap();
    let model = TwoHeadParams::init(config, mix_seed(7000, seed)).unwrap();
    let task = generate_task(&TaskSpec {
        input_dim: 8,
        subspace_dim: 4,
        n_target_classes: 4,
        shots: 8,
        n_aux_classes: 4,
        aux_shots: 4,
        related_fraction: 0.5,
        related_coverage: 1.0,
        noise_fraction: 0.0,
        spread: 0.6,
        center_separation: 2.5,
        noise_spread: 1.0,
        ambient_noise: 0.0,
        seed: mix_seed(8000, seed),
    })
    .unwrap();
    (model, task)
}

#[test]
fn acceptance_meta_gradient_matches_composed_finite_differences() {
    let started = Instant::now();
    let eta = 0.05;
    let mut worst: f64 = 0.0;
    for seed in FD_SAFE_INSTANCES {
        let (model, task) = small_instance(seed);
        let inner_idx: Vec<usize> = (0..8).collect();
        let meta_idx: Vec<usize> = (8..16).collect();
        let batch_inner = task.target_train.batch(&inner_idx).unwrap();
        let batch_meta = task.target_train.batch(&meta_idx).unwrap();

        let analytic = meta_gradient(&model, &batch_inner, &batch_meta, eta)
            .unwrap()
            .grad;
        assert!(
            analytic.len() <= 500,
            "instance has {} parameters",
            analytic.len()
        );

        // Composed objective evaluated with the handwritten oracle
        // only: phi(theta) = loss(meta batch; theta - eta * grad(inner
        // batch; theta)).
        let oracle = OracleNet::from_model(&model, Head::Target);
        let (rows_i, labels_i) = batch_rows(&batch_inner);
        let (rows_j, labels_j) = batch_rows(&batch_meta);
        let phi = |flat: &[f64]| -> f64 {
            let net = OracleNet::from_flat(&oracle, flat);
            let g = net.grad(&rows_i, &labels_i);
            let adapted: Vec<f64> = flat.iter().zip(&g).map(|(&p, &gi)| p - eta * gi).collect();
            OracleNet::from_flat(&oracle, &adapted).loss(&rows_j, &labels_j)
        };

        let flat = oracle.to_flat();
        let inf_norm = flat.iter().cloned().fold(0.0f64, |a, v| a.max(v.abs()));
        let eps = 3e-6 * (1.0 + inf_norm);
        let mut fd = vec![0.0; flat.len()];
        let mut probe = flat.clone();
        for i in 0..flat.len() {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = phi(&probe);
            probe[i] = orig - eps;
            let minus = phi(&probe);
            probe[i] = orig;
            fd[i] = (plus - minus) / (2.0 * eps);
        }
        let err = max_rel_err(analytic.values(), &fd, 1e-6);
        worst = worst.max(err);
        assert!(err <= 1e-4, "seed {seed}: max rel err {err:.3e} > 1e-4");
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed <= 60.0, "took {elapsed:.1}s > 60s");
    pass(&format!(
        "meta-gradient matches composed finite differences on 20 instances \
         (worst rel err {worst:.2e} <= 1e-4, {elapsed:.1}s <= 60s)"
    ));
}

#[test]
fn acceptance_zero_eta_reduces_to_plain_gradient() {
    let mut worst: f64 = 0.0;
    for seed in FD_SAFE_INSTANCES {
        let (model, task) = small_instance(seed);
        let batch_inner = task.target_train.batch(&[0, 1, 2, 3]).unwrap();
        let batch_meta = task.target_train.batch(&[4, 5, 6, 7]).unwrap();
        let meta = meta_gradient(&model, &batch_inner, &batch_meta, 0.0)
            .unwrap()
            .grad;
        let plain = metafg::grad(
            &model.loss_fn(Head::Target),
            &model.view(Head::Target),
            &batch_meta,
        )
        .unwrap();
        let diff = meta.max_abs_diff(&plain);
        worst = worst.max(diff);
        assert!(diff <= 1e-12, "seed {seed}: difference {diff:.3e} > 1e-12");
    }
    pass(&format!(
        "zero-step-size meta-gradient equals the plain gradient on 20 seeds \
         (worst abs diff {worst:.2e} <= 1e-12)"
    ));
}

#[test]
fn acceptance_hvp_backends_agree_and_match_quadratic_closed_form() {
    // Exact vs finite-difference backends on 20 seeded networks.
    let mut worst: f64 = 0.0;
    for seed in FD_SAFE_INSTANCES {
        let (model, task) = small_instance(seed);
        let batch = task.target_train.batch(&[0, 3, 6, 9, 12, 15]).unwrap();
        let f = model.loss_fn(Head::Target);
        let p = model.view(Head::Target);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(9000, seed));
        let direction = ParamVector::from_values(
            p.layout().clone(),
            (0..p.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let exact = hvp(&f, &p, &batch, &direction, HvpBackend::Exact).unwrap();
        let fd = hvp(
            &f,
            &p,
            &batch,
            &direction,
            HvpBackend::FiniteDifference { epsilon: None },
        )
        .unwrap();
        let err = max_rel_err(exact.values(), fd.values(), 1e-6);
        worst = worst.max(err);
        assert!(err <= 1e-5, "seed {seed}: backend disagreement {err:.3e} > 1e-5");
    }

    // Quadratic closed form: H of 0.5 p^T A p is A.
    struct Quadratic {
        matrix: Vec<f64>,
        layout: std::sync::Arc<metafg::Layout>,
    }
    impl metafg::autodiff::ScalarFn<f64> for Quadratic {
        fn layout(&self) -> &std::sync::Arc<metafg::Layout> {
            &self.layout
        }
        fn build(
            &self,
            tape: &metafg::autodiff::Tape<f64>,
            params: &metafg::autodiff::SegmentVars<f64>,
            _batch: &metafg::Batch<f64>,
        ) -> metafg::Result<metafg::autodiff::Var<f64>> {
            let p = params.var("p");
            let a = tape.leaf(metafg::Tensor::from_vec(vec![4, 4], self.matrix.clone()));
            Ok(p.mul(&a.matmul(p)).sum().scale(0.5))
        }
    }
    let matrix = vec![
        2.0, 0.5, -0.25, 0.0, //
        0.5, 3.0, 0.75, -0.5, //
        -0.25, 0.75, 1.5, 0.25, //
        0.0, -0.5, 0.25, 4.0,
    ];
    let f = Quadratic {
        matrix: matrix.clone(),
        layout: metafg::Layout::of(&[("p", &[4, 1])]),
    };
    let p = ParamVector::from_values(f.layout.clone(), vec![0.3, -0.8, 1.2, 0.05]).unwrap();
    let v = ParamVector::from_values(f.layout.clone(), vec![1.0, 0.5, -1.5, 2.0]).unwrap();
    let hv = hvp(&f, &p, &metafg::Batch::empty(), &v, HvpBackend::Exact).unwrap();
    let mut quad_worst: f64 = 0.0;
    for i in 0..4 {
        let expected: f64 = (0..4).map(|j| matrix[i * 4 + j] * v.values()[j]).sum();
        quad_worst = quad_worst.max((hv.values()[i] - expected).abs());
    }
    assert!(quad_worst <= 1e-10, "quadratic mismatch {quad_worst:.3e}");
    pass(&format!(
        "exact and finite-difference Hessian-vector products agree on 20 seeds \
         (worst rel err {worst:.2e} <= 1e-5); quadratic form matches direct \
         multiply (worst abs diff {quad_worst:.2e} <= 1e-10)"
    ));
}

#[test]
fn acceptance_score_invariants_and_ranking_oracle() {
    // Positive-scale invariance over 1000 random logit pairs.
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n_s = rng.random_range(1..8usize);
        let n_t = rng.random_range(1..8usize);
        let zs: Vec<f64> = (0..n_s).map(|_| rng.random_range(-5.0..5.0)).collect();
        let zt: Vec<f64> = (0..n_t).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c: f64 = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled_s: Vec<f64> = zs.iter().map(|v| v * c).collect();
        let scaled_t: Vec<f64> = zt.iter().map(|v| v * c).collect();
        let a = score_from_logits(&zs, &zt);
        let b = score_from_logits(&scaled_s, &scaled_t);
        worst = worst.max((a - b).abs());
    }
    assert!(worst <= 1e-9, "scale variance {worst:.3e} > 1e-9");

    // Degenerate all-non-positive logits score exactly zero.
    let degenerate = score_from_logits::<f64>(&[-1.0, -2.0, 0.0], &[-3.0, 0.0]);
    assert_eq!(degenerate, 0.0);

    // Ranking equals an independent top-k extraction on 100 instances.
    for instance in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(instance);
        let n = rng.random_range(1..200usize);
        let scores: Vec<ScoredSample<f64>> = (0..n)
            .map(|i| ScoredSample {
                sample_index: i,
                // Coarse grid makes ties common.
                score: rng.random_range(0..25u32) as f64 / 10.0,
                related: None,
            })
            .collect();
        let ratio = rng.random_range(0.01..1.0f64);
        let got = rank_and_select(&scores, &SelectionConfig { keep_ratio: ratio }).unwrap();

        let k = ((ratio * n as f64).ceil() as usize).clamp(1, n);
        let mut remaining: Vec<&ScoredSample<f64>> = scores.iter().collect();
        let mut expected = Vec::new();
        for _ in 0..k {
            let best = remaining
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| {
                    a.score
                        .partial_cmp(&b.score)
                        .unwrap()
                        .then(b.sample_index.cmp(&a.sample_index))
                })
                .map(|(pos, _)| pos)
                .unwrap();
            expected.push(remaining.remove(best).sample_index);
        }
        expected.sort_unstable();
        assert_eq!(got, expected, "instance {instance}");
    }
    pass(&format!(
        "score invariants hold: scale invariance over 1000 pairs (worst drift \
         {worst:.2e} <= 1e-9), degenerate case scores exactly 0, ranking equals \
         the extraction oracle on 100 instances"
    ));
}

#[test]
fn acceptance_selection_precision_on_default_task() {
    let cfg = ExperimentConfig::default_benchmark(std::env::temp_dir());
    let mut precisions = Vec::new();
    for seed in 0..5u64 {
        // The same derivations the experiment harness uses.
        let mut spec = cfg.task.clone();
        spec.seed = mix_seed(cfg.task.seed, seed);
        let task = generate_task::<f64>(&spec).unwrap();
        let mut model =
            TwoHeadParams::init(cfg.model_config().unwrap(), mix_seed(seed, 1)).unwrap();
        let mut warmup_cfg = cfg.warmup.clone();
        warmup_cfg.seed = mix_seed(seed, 2);
        warmup(&mut model, &task.auxiliary, &warmup_cfg).unwrap();
        let mut main_cfg = cfg.main.clone();
        main_cfg.seed = mix_seed(seed, 3);
        let data = LoopData {
            target_train: &task.target_train,
            auxiliary: Some(&task.auxiliary),
            target_eval: None,
        };
        train_loop(&mut model, Method::MetaFgNet, &data, &main_cfg).unwrap();

        let scores = score_dataset(&model, &task.auxiliary).unwrap();
        let selected = rank_and_select(&scores, &SelectionConfig { keep_ratio: 0.5 }).unwrap();
        let related: Vec<bool> = (0..task.auxiliary.len())
            .map(|i| task.auxiliary.flag(i) == Some(Relatedness::Related))
            .collect();
        precisions.push(selection_precision(&selected, &related).unwrap());
    }
    let mean = precisions.iter().sum::<f64>() / precisions.len() as f64;
    let base_rate = 0.5;
    assert!(
        mean >= 0.90,
        "mean precision {mean:.4} < 0.90 (per-seed {precisions:?})"
    );
    pass(&format!(
        "selecting half the auxiliary set with a trained model keeps related \
         samples at precision {mean:.3} >= 0.90 over 5 seeds (base rate {base_rate})"
    ));
}

/// The 10-seed benchmark shared by the ordering, loss-curve and
/// runtime checks.
static BENCHMARK: LazyLock<(ResultTable, f64)> = LazyLock::new(|| {
    let dir = std::env::temp_dir().join(format!("metafg-acceptance-{}", std::process::id()));
    let cfg = ExperimentConfig::default_benchmark(dir);
    let started = Instant::now();
    let table = run_experiment(&cfg).expect("benchmark experiment");
    (table, started.elapsed().as_secs_f64())
});

#[test]
fn acceptance_method_ordering_on_default_benchmark() {
    let (table, elapsed) = &*BENCHMARK;
    let finetune = table.mean_accuracy(Method::Finetune, false).unwrap();
    let joint = table.mean_accuracy(Method::Joint, false).unwrap();
    let meta = table.mean_accuracy(Method::MetaFgNet, false).unwrap();
    let meta_sel = table.mean_accuracy(Method::MetaFgNet, true).unwrap();
    assert!(
        finetune <= joint && joint <= meta,
        "accuracy ordering violated: finetune {finetune:.4}, joint {joint:.4}, meta {meta:.4}"
    );
    assert!(
        meta_sel >= meta,
        "selection did not help: {meta_sel:.4} < {meta:.4}"
    );
    assert!(*elapsed <= 900.0, "benchmark took {elapsed:.0}s > 15 min");
    pass(&format!(
        "mean accuracy over 10 seeds orders as finetune {finetune:.4} <= joint \
         {joint:.4} <= metafgnet {meta:.4}, and selection {meta_sel:.4} >= \
         {meta:.4} ({elapsed:.0}s <= 900s)"
    ));
}

#[test]
fn acceptance_final_finetune_loss_ordering() {
    let (table, _) = &*BENCHMARK;
    let joint = table
        .mean_final_finetune_loss(Method::Joint, false)
        .unwrap();
    let meta = table
        .mean_final_finetune_loss(Method::MetaFgNet, false)
        .unwrap();
    assert!(
        meta <= joint,
        "final fine-tuning loss ordering violated: meta {meta:.4} > joint {joint:.4}"
    );
    pass(&format!(
        "mean final fine-tuning loss of the meta method ({meta:.4}) <= joint \
         training ({joint:.4}) over 10 seeds; curves live in the per-run CSVs"
    ));
}

#[test]
fn acceptance_experiment_rerun_is_bit_identical() {
    let base = std::env::temp_dir().join(format!("metafg-determinism-{}", std::process::id()));
    let mut outputs = Vec::new();
    for run in 0..2 {
        let dir = base.join(format!("run{run}"));
        let mut cfg = ExperimentConfig::default_benchmark(dir.clone());
        cfg.methods = vec![Method::MetaFgNet];
        cfg.select_methods = vec![Method::MetaFgNet];
        cfg.seeds = vec![3];
        run_experiment(&cfg).unwrap();

        let mut files = Vec::new();
        let mut stack = vec![dir.clone()];
        while let Some(d) = stack.pop() {
            for entry in std::fs::read_dir(&d).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    files.push(path);
                }
            }
        }
        files.sort();
        let contents: Vec<(String, Vec<u8>)> = files
            .iter()
            .map(|p| {
                (
                    p.strip_prefix(&dir).unwrap().display().to_string(),
                    std::fs::read(p).unwrap(),
                )
            })
            .collect();
        outputs.push(contents);
    }
    let names: Vec<&String> = outputs[0].iter().map(|(n, _)| n).collect();
    assert_eq!(
        names,
        outputs[1].iter().map(|(n, _)| n).collect::<Vec<_>>(),
        "artifact sets differ"
    );
    assert!(
        names.iter().any(|n| n.contains("results.csv")),
        "missing result table"
    );
    assert!(names.iter().any(|n| n.ends_with(".ckpt")), "missing checkpoint");
    for (a, b) in outputs[0].iter().zip(&outputs[1]) {
        assert_eq!(a.1, b.1, "artifact {} differs between reruns", a.0);
    }
    pass(&format!(
        "re-running the experiment reproduces all {} artifacts bit-identically \
         (result tables, per-iteration reports, checkpoints, score files)",
        outputs[0].len()
    ));
}
