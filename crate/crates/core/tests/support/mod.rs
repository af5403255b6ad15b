//! Straight-line reference implementations used as oracles.
//!
//! Everything here recomputes the quantities under test with plain
//! nested loops over `f64` slices — no tensors, no tape — so a bug in
//! the library's differentiation machinery cannot cancel out of these
//! comparisons.

// Shared by several test targets; not every target uses every helper.
#![allow(dead_code)]

use metafg::model::{Head, ModelConfig, TwoHeadParams};

/// Plain copies of one head's view of the network parameters.
#[derive(Debug, Clone)]
pub struct OracleNet {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    /// One `[fan_in * width]` row-major matrix per hidden layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl OracleNet {
    /// Extracts the raw parameter values of one head's view.
    pub fn from_model(model: &TwoHeadParams<f64>, head: Head) -> Self {
        let cfg = model.config();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..cfg.hidden.len() {
            weights.push(model.params().segment(&format!("base.w{l}")).to_vec());
            biases.push(model.params().segment(&format!("base.b{l}")).to_vec());
        }
        let (prefix, classes) = match head {
            Head::Target => ("head_t", cfg.n_target_classes),
            Head::Source => ("head_s", cfg.n_source_classes),
        };
        OracleNet {
            input_dim: cfg.input_dim,
            hidden: cfg.hidden.clone(),
            classes,
            weights,
            biases,
            head_w: model.params().segment(&format!("{prefix}.w")).to_vec(),
            head_b: model.params().segment(&format!("{prefix}.b")).to_vec(),
        }
    }

    /// Rebuilds the flat view vector (base then head, matrices then
    /// biases) so library functions can be called at oracle-perturbed
    /// parameters.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            flat.extend_from_slice(w);
            flat.extend_from_slice(b);
        }
        flat.extend_from_slice(&self.head_w);
        flat.extend_from_slice(&self.head_b);
        flat
    }

    pub fn from_flat(template: &OracleNet, flat: &[f64]) -> Self {
        let mut net = template.clone();
        let mut offset = 0;
        for (w, b) in net.weights.iter_mut().zip(net.biases.iter_mut()) {
            let w_len = w.len();
            w.copy_from_slice(&flat[offset..offset + w_len]);
            offset += w_len;
            let b_len = b.len();
            b.copy_from_slice(&flat[offset..offset + b_len]);
            offset += b_len;
        }
        let hw_len = net.head_w.len();
        net.head_w.copy_from_slice(&flat[offset..offset + hw_len]);
        offset += hw_len;
        let hb_len = net.head_b.len();
        net.head_b.copy_from_slice(&flat[offset..offset + hb_len]);
        assert_eq!(offset + hb_len, flat.len());
        net
    }

    pub fn param_count(&self) -> usize {
        self.to_flat().len()
    }

    /// Forward pass for one example: returns every layer activation
    /// (input first) and the final logits.
    pub fn forward_trace(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        assert_eq!(x.len(), self.input_dim);
        let mut activations = vec![x.to_vec()];
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let prev = activations.last().unwrap();
            let out_dim = b.len();
            let mut z = b.clone();
            for (i, &a) in prev.iter().enumerate() {
                for j in 0..out_dim {
                    z[j] += a * w[i * out_dim + j];
                }
            }
            for v in z.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            activations.push(z);
        }
        let last = activations.last().unwrap();
        let mut logits = self.head_b.clone();
        for (i, &a) in last.iter().enumerate() {
            for c in 0..self.classes {
                logits[c] += a * self.head_w[i * self.classes + c];
            }
        }
        (activations, logits)
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).1
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        let mut total = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            let logits = self.logits(x);
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + logits
                    .iter()
                    .map(|z| (z - max).exp())
                    .sum::<f64>()
                    .ln();
            total += lse - logits[y];
        }
        total / labels.len() as f64
    }

    /// Standard handwritten backpropagation of the mean cross-entropy,
    /// returning the gradient in [`to_flat`](Self::to_flat) order.
    pub fn grad(&self, features: &[Vec<f64>], labels: &[usize]) -> Vec<f64> {
        let m = labels.len() as f64;
        let mut gw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut ghw = vec![0.0; self.head_w.len()];
        let mut ghb = vec![0.0; self.head_b.len()];

        for (x, &y) in features.iter().zip(labels) {
            let (activations, logits) = self.forward_trace(x);
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = logits.iter().map(|z| (z - max).exp()).sum();
            let mut dlogits: Vec<f64> = logits
                .iter()
                .map(|z| (z - max).exp() / denom / m)
                .collect();
            dlogits[y] -= 1.0 / m;

            let last = activations.last().unwrap();
            for (i, &a) in last.iter().enumerate() {
                for c in 0..self.classes {
                    ghw[i * self.classes + c] += a * dlogits[c];
                }
            }
            for c in 0..self.classes {
                ghb[c] += dlogits[c];
            }

            let mut da: Vec<f64> = vec![0.0; last.len()];
            for (i, slot) in da.iter_mut().enumerate() {
                for c in 0..self.classes {
                    *slot += self.head_w[i * self.classes + c] * dlogits[c];
                }
            }

            for l in (0..self.weights.len()).rev() {
                let out = &activations[l + 1];
                let inp = &activations[l];
                // Rectifier mask from the stored activation; zero stays zero.
                let dz: Vec<f64> = da
                    .iter()
                    .zip(out)
                    .map(|(&d, &a)| if a > 0.0 { d } else { 0.0 })
                    .collect();
                let out_dim = dz.len();
                for (i, &a) in inp.iter().enumerate() {
                    for j in 0..out_dim {
                        gw[l][i * out_dim + j] += a * dz[j];
                    }
                }
                for j in 0..out_dim {
                    gb[l][j] += dz[j];
                }
                let mut next_da = vec![0.0; inp.len()];
                for (i, slot) in next_da.iter_mut().enumerate() {
                    for j in 0..out_dim {
                        *slot += self.weights[l][i * out_dim + j] * dz[j];
                    }
                }
                da = next_da;
            }
        }

        let mut flat = Vec::new();
        for (w, b) in gw.iter().zip(&gb) {
            flat.extend_from_slice(w);
            flat.extend_from_slice(b);
        }
        flat.extend_from_slice(&ghw);
        flat.extend_from_slice(&ghb);
        flat
    }
}

/// Central finite difference of a scalar function over a flat vector.
pub fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&probe);
        probe[i] = orig - eps;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

/// Worst per-coordinate relative error, with a floor on the denominator
/// so exact zeros compare at absolute scale.
pub fn max_rel_err(actual: &[f64], expected: &[f64], floor: f64) -> f64 {
    assert_eq!(actual.len(), expected.len());
    actual
        .iter()
        .zip(expected)
        .map(|(&a, &e)| (a - e).abs() / a.abs().max(e.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Extracts a batch's rows as plain vectors for the oracle.
pub fn batch_rows(batch: &metafg::Batch<f64>) -> (Vec<Vec<f64>>, Vec<usize>) {
    let dim = batch.features.shape()[1];
    let rows = batch
        .features
        .data()
        .chunks(dim)
        .map(|r| r.to_vec())
        .collect();
    (rows, batch.labels.clone())
}

/// Builds a model whose target view holds the flat values `flat`
/// (oracle order equals the view layout order).
pub fn model_with_target_view(
    config: &ModelConfig,
    base_model: &TwoHeadParams<f64>,
    flat: &[f64],
) -> TwoHeadParams<f64> {
    let mut model = base_model.clone();
    let layout = config.view_layout(Head::Target);
    let view = metafg::ParamVector::from_values(layout, flat.to_vec()).unwrap();
    // Overwrite rather than add: zero the view first.
    let current = model.view(Head::Target);
    model.apply_scaled(-1.0, &current);
    model.apply_scaled(1.0, &view);
    model
}
