//! The two-head classifier.
//!
//! A multi-layer rectifier base network feeds two parallel linear
//! heads: the target head over the target classes and the source head
//! over the auxiliary classes. The base parameters are shared — target
//! parameters are (base, target head) and source parameters are (base,
//! source head), stored together in one flat vector so a base update
//! made through either view is seen by both.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::functional::{value, ScalarFn, SegmentVars};
use crate::autodiff::params::{Layout, ParamVector};
use crate::autodiff::tape::{Tape, Var};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which classifier head an operation goes through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Target,
    Source,
}

/// Architecture of the two-head network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Hidden layer widths of the shared base; each layer is linear +
    /// rectifier.
    pub hidden: Vec<usize>,
    pub n_target_classes: usize,
    pub n_source_classes: usize,
}

fn weight_name(layer: usize) -> String {
    format!("base.w{layer}")
}

fn bias_name(layer: usize) -> String {
    format!("base.b{layer}")
}

impl ModelConfig {
    pub fn new(
        input_dim: usize,
        hidden: Vec<usize>,
        n_target_classes: usize,
        n_source_classes: usize,
    ) -> Result<Self> {
        let cfg = ModelConfig {
            input_dim,
            hidden,
            n_target_classes,
            n_source_classes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig(
                "all layer widths must be positive".to_string(),
            ));
        }
        if self.n_target_classes < 2 || self.n_source_classes < 2 {
            return Err(Error::InvalidConfig(
                "both heads need at least two classes".to_string(),
            ));
        }
        Ok(())
    }

    /// Width of the base output feeding both heads.
    pub fn base_output_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }

    fn base_parts(&self) -> Vec<(String, Vec<usize>)> {
        let mut parts = Vec::new();
        let mut fan_in = self.input_dim;
        for (l, &width) in self.hidden.iter().enumerate() {
            parts.push((weight_name(l), vec![fan_in, width]));
            parts.push((bias_name(l), vec![width]));
            fan_in = width;
        }
        parts
    }

    fn head_parts(&self, head: Head) -> Vec<(String, Vec<usize>)> {
        let base_out = self.base_output_dim();
        match head {
            Head::Target => vec![
                ("head_t.w".to_string(), vec![base_out, self.n_target_classes]),
                ("head_t.b".to_string(), vec![self.n_target_classes]),
            ],
            Head::Source => vec![
                ("head_s.w".to_string(), vec![base_out, self.n_source_classes]),
                ("head_s.b".to_string(), vec![self.n_source_classes]),
            ],
        }
    }

    /// Layout of the full parameter triple (base, target head, source head).
    pub fn full_layout(&self) -> Arc<Layout> {
        let mut parts = self.base_parts();
        parts.extend(self.head_parts(Head::Target));
        parts.extend(self.head_parts(Head::Source));
        Layout::new(parts)
    }

    /// Layout of one view: base plus the given head.
    pub fn view_layout(&self, head: Head) -> Arc<Layout> {
        let mut parts = self.base_parts();
        parts.extend(self.head_parts(head));
        Layout::new(parts)
    }

    /// Segment names of the shared base.
    pub fn base_segment_names(&self) -> Vec<String> {
        self.base_parts().into_iter().map(|(n, _)| n).collect()
    }

    pub fn head_segment_names(&self, head: Head) -> Vec<String> {
        self.head_parts(head).into_iter().map(|(n, _)| n).collect()
    }

    fn classes(&self, head: Head) -> usize {
        match head {
            Head::Target => self.n_target_classes,
            Head::Source => self.n_source_classes,
        }
    }

    fn head_prefix(head: Head) -> &'static str {
        match head {
            Head::Target => "head_t",
            Head::Source => "head_s",
        }
    }
}

/// The parameter triple of a two-head network.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoHeadParams<S = f64> {
    config: ModelConfig,
    params: ParamVector<S>,
}

impl<S: Scalar> TwoHeadParams<S> {
    /// Seeded initialization: every weight matrix is uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases start at zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamVector::zeros(config.full_layout());
        let mut model = TwoHeadParams { config, params };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.init_segments(&mut rng, None);
        Ok(model)
    }

    /// Redraws one head with the construction-time scheme, leaving the
    /// base and the other head untouched.
    pub fn reinit_head(&mut self, head: Head, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prefix = ModelConfig::head_prefix(head);
        self.init_segments(&mut rng, Some(prefix));
    }

    fn init_segments(&mut self, rng: &mut ChaCha8Rng, only_prefix: Option<&str>) {
        let layout = Arc::clone(self.params.layout());
        for seg in layout.segments() {
            if let Some(prefix) = only_prefix {
                if !seg.name.starts_with(prefix) {
                    continue;
                }
            }
            let slice = self.params.segment_mut(&seg.name);
            if seg.shape.len() == 2 {
                let bound = 1.0 / (seg.shape[0] as f64).sqrt();
                for v in slice.iter_mut() {
                    *v = S::from_f64_lossy(rng.random_range(-bound..bound));
                }
            } else {
                for v in slice.iter_mut() {
                    *v = S::zero();
                }
            }
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamVector<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector<S> {
        &mut self.params
    }

    pub fn from_params(config: ModelConfig, params: ParamVector<S>) -> Result<Self> {
        if !config.full_layout().same_as(params.layout()) {
            return Err(Error::LayoutMismatch {
                expected: config.full_layout().describe(),
                found: params.layout().describe(),
            });
        }
        Ok(TwoHeadParams { config, params })
    }

    /// Copies the (base, head) view out of the shared storage.
    pub fn view(&self, head: Head) -> ParamVector<S> {
        self.params.gather(&self.config.view_layout(head))
    }

    /// Adds `a * delta` into the shared storage; `delta` may carry any
    /// subset of the full segments (a view gradient, for instance).
    pub fn apply_scaled(&mut self, a: S, delta: &ParamVector<S>) {
        self.params.scatter_axpy(a, delta);
    }

    /// Records base + head logits for a `[m, input_dim]` feature matrix.
    fn build_logits(
        config: &ModelConfig,
        tape: &Tape<S>,
        params: &SegmentVars<S>,
        batch: &Batch<S>,
        head: Head,
    ) -> Result<Var<S>> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if batch.features.shape()[1] != config.input_dim {
            return Err(Error::DimensionMismatch {
                what: "batch feature width",
                expected: config.input_dim,
                found: batch.features.shape()[1],
            });
        }
        let classes = config.classes(head);
        for &label in &batch.labels {
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
        }
        let mut h = tape.leaf(batch.features.clone());
        for l in 0..config.hidden.len() {
            let w = params.var(&weight_name(l));
            let b = params.var(&bias_name(l));
            h = h.matmul(w).add_bias(b).relu();
        }
        let prefix = ModelConfig::head_prefix(head);
        let hw = params.var(&format!("{prefix}.w"));
        let hb = params.var(&format!("{prefix}.b"));
        Ok(h.matmul(hw).add_bias(hb))
    }

    /// Plain (untaped) forward pass through one head for a single
    /// feature vector; returns raw pre-softmax logits.
    pub fn forward(&self, head: Head, x: &[S]) -> Result<Vec<S>> {
        if x.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                what: "input vector",
                expected: self.config.input_dim,
                found: x.len(),
            });
        }
        let mut h = x.to_vec();
        for l in 0..self.config.hidden.len() {
            let w = self.params.segment(&weight_name(l));
            let b = self.params.segment(&bias_name(l));
            let out_dim = b.len();
            let mut next = b.to_vec();
            for (i, &hi) in h.iter().enumerate() {
                if hi == S::zero() {
                    continue;
                }
                for j in 0..out_dim {
                    next[j] += hi * w[i * out_dim + j];
                }
            }
            for v in next.iter_mut() {
                if *v < S::zero() {
                    *v = S::zero();
                }
            }
            h = next;
        }
        let prefix = ModelConfig::head_prefix(head);
        let w = self.params.segment(&format!("{prefix}.w"));
        let b = self.params.segment(&format!("{prefix}.b"));
        let classes = self.config.classes(head);
        let mut z = b.to_vec();
        for (i, &hi) in h.iter().enumerate() {
            for c in 0..classes {
                z[c] += hi * w[i * classes + c];
            }
        }
        Ok(z)
    }

    pub fn forward_target(&self, x: &[S]) -> Result<Vec<S>> {
        self.forward(Head::Target, x)
    }

    pub fn forward_source(&self, x: &[S]) -> Result<Vec<S>> {
        self.forward(Head::Source, x)
    }

    /// The mean softmax cross-entropy loss builder for one head.
    pub fn loss_fn(&self, head: Head) -> HeadLoss {
        HeadLoss::new(self.config.clone(), head)
    }

    /// Mean cross-entropy of the target head over a batch.
    pub fn loss_target(&self, batch: &Batch<S>) -> Result<S> {
        value(&self.loss_fn(Head::Target), &self.view(Head::Target), batch)
    }

    /// Mean cross-entropy of the source head over a batch.
    pub fn loss_source(&self, batch: &Batch<S>) -> Result<S> {
        value(&self.loss_fn(Head::Source), &self.view(Head::Source), batch)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.params)
    }

    pub fn load(path: &Path, config: ModelConfig) -> Result<Self> {
        let params = load_checkpoint(path)?;
        TwoHeadParams::from_params(config, params)
    }
}

/// Mean softmax cross-entropy through one head, over the matching
/// (base, head) view layout.
pub struct HeadLoss {
    config: ModelConfig,
    head: Head,
    layout: Arc<Layout>,
}

impl HeadLoss {
    pub fn new(config: ModelConfig, head: Head) -> Self {
        let layout = config.view_layout(head);
        HeadLoss {
            config,
            head,
            layout,
        }
    }
}

impl<S: Scalar> ScalarFn<S> for HeadLoss {
    fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    fn build(&self, tape: &Tape<S>, params: &SegmentVars<S>, batch: &Batch<S>) -> Result<Var<S>> {
        let logits =
            TwoHeadParams::<S>::build_logits(&self.config, tape, params, batch, self.head)?;
        Ok(logits.softmax_xent_mean(&batch.labels))
    }
}

/// Writes a parameter vector: a plain-text header naming each segment
/// with its shape, then the flat f64 payload. Round-trips bit-exactly.
pub fn save_checkpoint<S: Scalar>(path: &Path, params: &ParamVector<S>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "metafg-params v1")?;
    writeln!(w, "segments {}", params.layout().segments().len())?;
    for seg in params.layout().segments() {
        let dims: Vec<String> = seg.shape.iter().map(|d| d.to_string()).collect();
        writeln!(w, "{} {} {}", seg.name, seg.len(), dims.join(" "))?;
    }
    writeln!(w, "end")?;
    for v in params.values() {
        w.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<ParamVector<S>> {
    let malformed = |detail: &str| Error::MalformedFile {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != "metafg-params v1" {
        return Err(malformed("bad magic line"));
    }
    line.clear();
    r.read_line(&mut line)?;
    let count: usize = line
        .trim_end()
        .strip_prefix("segments ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| malformed("bad `segments` line"))?;
    let mut parts = Vec::with_capacity(count);
    for _ in 0..count {
        line.clear();
        r.read_line(&mut line)?;
        let mut fields = line.split_whitespace();
        let name = fields.next().ok_or_else(|| malformed("missing name"))?;
        let len: usize = fields
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| malformed("bad segment length"))?;
        let shape: Vec<usize> = fields.map(|v| v.parse().unwrap_or(0)).collect();
        if shape.iter().product::<usize>() != len || shape.iter().any(|&d| d == 0) {
            return Err(malformed(&format!("segment `{name}` shape/length disagree")));
        }
        parts.push((name.to_string(), shape));
    }
    line.clear();
    r.read_line(&mut line)?;
    if line.trim_end() != "end" {
        return Err(malformed("missing `end` line"));
    }
    let layout = Layout::new(parts);
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != layout.total_len() * 8 {
        return Err(malformed(&format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            layout.total_len() * 8
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|chunk| S::from_f64_lossy(f64::from_le_bytes(chunk.try_into().unwrap())))
        .collect();
    ParamVector::from_values(layout, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::functional::grad;
    use crate::autodiff::tensor::Tensor;

    fn tiny_config() -> ModelConfig {
        ModelConfig::new(3, vec![4], 2, 3).unwrap()
    }

    fn batch_of(features: Vec<f64>, dim: usize, labels: Vec<usize>) -> Batch<f64> {
        Batch {
            features: Tensor::from_vec(vec![labels.len(), dim], features),
            labels,
        }
    }

    #[test]
    fn zero_parameters_give_zero_logits() {
        let cfg = tiny_config();
        let model = TwoHeadParams::from_params(
            cfg.clone(),
            ParamVector::zeros(cfg.full_layout()),
        )
        .unwrap();
        assert_eq!(model.forward_target(&[1.0, -2.0, 3.0]).unwrap(), [0.0, 0.0]);
        assert_eq!(
            model.forward_source(&[1.0, -2.0, 3.0]).unwrap(),
            [0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn identity_base_and_head_pass_first_coordinates_through() {
        let cfg = ModelConfig::new(3, vec![3], 2, 2).unwrap();
        let mut model =
            TwoHeadParams::from_params(cfg.clone(), ParamVector::zeros(cfg.full_layout()))
                .unwrap();
        for i in 0..3 {
            model.params_mut().segment_mut("base.w0")[i * 3 + i] = 1.0;
        }
        for c in 0..2 {
            model.params_mut().segment_mut("head_t.w")[c * 2 + c] = 1.0;
        }
        let x = [0.7, 0.2, 0.9];
        assert_eq!(model.forward_target(&x).unwrap(), [0.7, 0.2]);
    }

    #[test]
    fn uniform_logits_lose_log_class_count() {
        let cfg = tiny_config();
        let model = TwoHeadParams::from_params(
            cfg.clone(),
            ParamVector::zeros(cfg.full_layout()),
        )
        .unwrap();
        let batch = batch_of(vec![0.5, 1.0, -1.0, 0.2, 0.1, 0.3], 3, vec![0, 1]);
        let lt = model.loss_target(&batch).unwrap();
        assert!((lt - 2.0f64.ln()).abs() < 1e-14);
        let batch_s = batch_of(vec![0.5, 1.0, -1.0], 3, vec![2]);
        let ls = model.loss_source(&batch_s).unwrap();
        assert!((ls - 3.0f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let cfg = tiny_config();
        let mut model = TwoHeadParams::from_params(
            cfg.clone(),
            ParamVector::zeros(cfg.full_layout()),
        )
        .unwrap();
        model.params_mut().segment_mut("head_t.b")[0] = 50.0;
        let batch = batch_of(vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0], 3, vec![0, 0]);
        let loss = model.loss_target(&batch).unwrap();
        assert!(loss >= 0.0 && loss < 1e-6, "loss {loss}");
    }

    #[test]
    fn losses_are_nonnegative_for_random_parameters() {
        for seed in 0..20 {
            let model: TwoHeadParams = TwoHeadParams::init(tiny_config(), seed).unwrap();
            let batch = batch_of(vec![0.4, -0.9, 1.7, 2.0, 0.0, -0.5], 3, vec![1, 0]);
            assert!(model.loss_target(&batch).unwrap() >= 0.0);
            assert!(model.loss_source(&batch).unwrap() >= 0.0);
        }
    }

    #[test]
    fn batch_permutation_leaves_losses_bit_identical() {
        let model: TwoHeadParams = TwoHeadParams::init(tiny_config(), 11).unwrap();
        let features = vec![0.4, -0.9, 1.7, 2.0, 0.0, -0.5, 1.1, -1.2, 0.3];
        let labels = vec![1usize, 0, 1];
        let batch = batch_of(features.clone(), 3, labels.clone());
        let perm = [2usize, 0, 1];
        let mut pf = Vec::new();
        for &r in &perm {
            pf.extend_from_slice(&features[r * 3..(r + 1) * 3]);
        }
        let pl: Vec<usize> = perm.iter().map(|&r| labels[r]).collect();
        let permuted = batch_of(pf, 3, pl);
        let a = model.loss_target(&batch).unwrap();
        let b = model.loss_target(&permuted).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn shared_base_couples_heads_and_own_heads_isolate() {
        let model: TwoHeadParams = TwoHeadParams::init(tiny_config(), 5).unwrap();
        let batch_t = batch_of(vec![0.4, -0.9, 1.7, 2.0, 0.0, -0.5], 3, vec![1, 0]);
        let batch_s = batch_of(vec![0.4, -0.9, 1.7, 2.0, 0.0, -0.5], 3, vec![2, 1]);

        let lt = model.loss_target(&batch_t).unwrap();
        let ls = model.loss_source(&batch_s).unwrap();

        // Base perturbation moves both losses and both gradients.
        let mut base_perturbed = model.clone();
        base_perturbed.params_mut().segment_mut("base.w0")[0] += 0.05;
        assert_ne!(base_perturbed.loss_target(&batch_t).unwrap(), lt);
        assert_ne!(base_perturbed.loss_source(&batch_s).unwrap(), ls);
        let g_t = grad(
            &model.loss_fn(Head::Target),
            &model.view(Head::Target),
            &batch_t,
        )
        .unwrap();
        let g_t2 = grad(
            &base_perturbed.loss_fn(Head::Target),
            &base_perturbed.view(Head::Target),
            &batch_t,
        )
        .unwrap();
        assert!(g_t.max_abs_diff(&g_t2) > 0.0);

        // Target-head perturbation leaves the source loss bit-identical.
        let mut head_perturbed = model.clone();
        head_perturbed.params_mut().segment_mut("head_t.w")[1] += 0.5;
        let ls2 = head_perturbed.loss_source(&batch_s).unwrap();
        assert_eq!(ls.to_bits(), ls2.to_bits());

        // And symmetrically for the source head.
        let mut shead_perturbed = model.clone();
        shead_perturbed.params_mut().segment_mut("head_s.b")[0] += 0.5;
        let lt2 = shead_perturbed.loss_target(&batch_t).unwrap();
        assert_eq!(lt.to_bits(), lt2.to_bits());
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let model: TwoHeadParams = TwoHeadParams::init(tiny_config(), 0).unwrap();
        let batch = batch_of(vec![0.1, 0.2, 0.3], 3, vec![2]);
        assert!(matches!(
            model.loss_target(&batch),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let model: TwoHeadParams = TwoHeadParams::init(tiny_config(), 0).unwrap();
        assert!(matches!(
            model.forward_target(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        let batch = batch_of(vec![0.1, 0.2], 2, vec![0]);
        assert!(matches!(
            model.loss_target(&batch),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn init_is_deterministic_and_head_reinit_touches_only_that_head() {
        let a: TwoHeadParams = TwoHeadParams::init(tiny_config(), 9).unwrap();
        let b: TwoHeadParams = TwoHeadParams::init(tiny_config(), 9).unwrap();
        assert_eq!(a, b);

        let mut c = a.clone();
        c.reinit_head(Head::Target, 77);
        assert_eq!(c.params().segment("base.w0"), a.params().segment("base.w0"));
        assert_eq!(c.params().segment("head_s.w"), a.params().segment("head_s.w"));
        assert_ne!(c.params().segment("head_t.w"), a.params().segment("head_t.w"));
        assert_eq!(c.params().segment("head_t.b"), a.params().segment("head_t.b"));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("metafg-model-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("params.ckpt");
        let model: TwoHeadParams = TwoHeadParams::init(tiny_config(), 123).unwrap();
        model.save(&path).unwrap();
        let loaded: TwoHeadParams = TwoHeadParams::load(&path, tiny_config()).unwrap();
        for (a, b) in model
            .params()
            .values()
            .iter()
            .zip(loaded.params().values())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn view_and_scatter_share_the_base() {
        let cfg = tiny_config();
        let mut model: TwoHeadParams = TwoHeadParams::init(cfg.clone(), 3).unwrap();
        let mut delta = ParamVector::zeros(cfg.view_layout(Head::Target));
        delta.segment_mut("base.b0")[1] = 2.0;
        delta.segment_mut("head_t.b")[0] = -1.0;
        let before_source_view = model.view(Head::Source);
        model.apply_scaled(1.0, &delta);
        // Base change is visible through the source view.
        let after_source_view = model.view(Head::Source);
        assert_eq!(after_source_view.segment("base.b0")[1], before_source_view.segment("base.b0")[1] + 2.0);
        assert_eq!(model.params().segment("head_t.b")[0], -1.0);
        // Source head untouched.
        assert_eq!(
            after_source_view.segment("head_s.w"),
            before_source_view.segment("head_s.w")
        );
    }
}
