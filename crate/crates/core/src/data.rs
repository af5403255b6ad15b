//! Synthetic task generation, dataset storage and batch sampling.
//!
//! The synthetic tasks stand in for the real image corpora: target
//! classes are Gaussian clusters inside a low-dimensional "semantic"
//! subspace of feature space, related auxiliary classes are further
//! clusters in the same subspace, unrelated auxiliary classes live in
//! the orthogonal complement, and noise samples are wide isotropic
//! draws with arbitrary labels. Every auxiliary example carries a
//! ground-truth relatedness flag so selection quality is measurable.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ground-truth provenance of an auxiliary example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relatedness {
    /// Cluster in the same subspace as the target classes.
    Related,
    /// Cluster in the orthogonal complement.
    Unrelated,
    /// Isotropic wide-variance draw with an arbitrary label.
    Noise,
}

impl Relatedness {
    fn to_byte(self) -> u8 {
        match self {
            Relatedness::Related => 0,
            Relatedness::Unrelated => 1,
            Relatedness::Noise => 2,
        }
    }

    fn from_byte(byte: u8) -> Option<Self> {
        match byte {
            0 => Some(Relatedness::Related),
            1 => Some(Relatedness::Unrelated),
            2 => Some(Relatedness::Noise),
            _ => None,
        }
    }
}

/// An immutable labeled dataset with row-major features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S = f64> {
    input_dim: usize,
    n_classes: usize,
    features: Vec<S>,
    labels: Vec<usize>,
    flags: Option<Vec<Relatedness>>,
}

/// A sampled mini-batch: an `[m, d]` feature matrix plus labels.
#[derive(Debug, Clone)]
pub struct Batch<S = f64> {
    pub features: Tensor<S>,
    pub labels: Vec<usize>,
}

impl<S: Scalar> Batch<S> {
    /// A zero-example placeholder for loss functions that ignore data.
    pub fn empty() -> Self {
        Batch {
            features: Tensor::zeros(vec![0, 0]),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl<S: Scalar> Dataset<S> {
    pub fn from_parts(
        input_dim: usize,
        n_classes: usize,
        features: Vec<S>,
        labels: Vec<usize>,
        flags: Option<Vec<Relatedness>>,
    ) -> Result<Self> {
        if features.len() != labels.len() * input_dim {
            return Err(Error::DimensionMismatch {
                what: "dataset features",
                expected: labels.len() * input_dim,
                found: features.len(),
            });
        }
        if let Some(f) = &flags {
            if f.len() != labels.len() {
                return Err(Error::DimensionMismatch {
                    what: "dataset flags",
                    expected: labels.len(),
                    found: f.len(),
                });
            }
        }
        for &label in &labels {
            if label >= n_classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: n_classes,
                });
            }
        }
        Ok(Dataset {
            input_dim,
            n_classes,
            features,
            labels,
            flags,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn feature(&self, index: usize) -> &[S] {
        &self.features[index * self.input_dim..(index + 1) * self.input_dim]
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    pub fn flag(&self, index: usize) -> Option<Relatedness> {
        self.flags.as_ref().map(|f| f[index])
    }

    pub fn flags(&self) -> Option<&[Relatedness]> {
        self.flags.as_deref()
    }

    /// Assembles the rows at `indices` into a batch, in order.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch<S>> {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.len(),
                });
            }
            features.extend_from_slice(self.feature(i));
            labels.push(self.labels[i]);
        }
        Ok(Batch {
            features: Tensor::from_vec(vec![indices.len(), self.input_dim], features),
            labels,
        })
    }

    /// Draws `size` distinct examples uniformly without replacement.
    pub fn sample_batch(&self, size: usize, rng: &mut ChaCha8Rng) -> Result<Batch<S>> {
        if size == 0 {
            return Err(Error::EmptyBatch);
        }
        if size > self.len() {
            return Err(Error::BatchTooLarge {
                requested: size,
                available: self.len(),
            });
        }
        let indices = rand::seq::index::sample(rng, self.len(), size).into_vec();
        self.batch(&indices)
    }

    /// Order-preserving subset. Indices must be valid and distinct, and
    /// the result must be non-empty.
    pub fn subset_by_indices(&self, indices: &[usize]) -> Result<Dataset<S>> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut seen = vec![false; self.len()];
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        let mut flags = self.flags.as_ref().map(|_| Vec::with_capacity(indices.len()));
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.len(),
                });
            }
            if seen[i] {
                return Err(Error::DuplicateIndex { index: i });
            }
            seen[i] = true;
            features.extend_from_slice(self.feature(i));
            labels.push(self.labels[i]);
            if let Some(f) = &mut flags {
                f.push(self.flags.as_ref().unwrap()[i]);
            }
        }
        Ok(Dataset {
            input_dim: self.input_dim,
            n_classes: self.n_classes,
            features,
            labels,
            flags,
        })
    }

    /// Writes the dataset: a plain-text header followed by the flat
    /// binary payload (f64 features, u32 labels, one flag byte per
    /// example when flags are present). Round-trips bit-exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "metafg-dataset v1")?;
        writeln!(w, "examples {}", self.len())?;
        writeln!(w, "dim {}", self.input_dim)?;
        writeln!(w, "classes {}", self.n_classes)?;
        writeln!(w, "flags {}", if self.flags.is_some() { 1 } else { 0 })?;
        writeln!(w, "end")?;
        for v in &self.features {
            w.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
        for &label in &self.labels {
            w.write_all(&(label as u32).to_le_bytes())?;
        }
        if let Some(flags) = &self.flags {
            for flag in flags {
                w.write_all(&[flag.to_byte()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset<S>> {
        let malformed = |detail: &str| Error::MalformedFile {
            path: path.to_path_buf(),
            detail: detail.to_string(),
        };
        let mut r = BufReader::new(File::open(path)?);
        let mut header = String::new();
        r.read_line(&mut header)?;
        if header.trim_end() != "metafg-dataset v1" {
            return Err(malformed("bad magic line"));
        }
        let mut fields = [0usize; 4];
        let names = ["examples", "dim", "classes", "flags"];
        for (slot, name) in fields.iter_mut().zip(names) {
            let mut line = String::new();
            r.read_line(&mut line)?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(name) {
                return Err(malformed(&format!("expected `{name}` line")));
            }
            *slot = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| malformed(&format!("bad `{name}` value")))?;
        }
        let mut end = String::new();
        r.read_line(&mut end)?;
        if end.trim_end() != "end" {
            return Err(malformed("missing `end` line"));
        }
        let [n, dim, classes, has_flags] = fields;
        if has_flags > 1 {
            return Err(malformed("flags field must be 0 or 1"));
        }

        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let expected = n * dim * 8 + n * 4 + if has_flags == 1 { n } else { 0 };
        if payload.len() != expected {
            return Err(malformed(&format!(
                "payload is {} bytes, expected {expected}",
                payload.len()
            )));
        }
        let mut features = Vec::with_capacity(n * dim);
        for chunk in payload[..n * dim * 8].chunks_exact(8) {
            features.push(S::from_f64_lossy(f64::from_le_bytes(
                chunk.try_into().unwrap(),
            )));
        }
        let mut labels = Vec::with_capacity(n);
        for chunk in payload[n * dim * 8..n * dim * 8 + n * 4].chunks_exact(4) {
            labels.push(u32::from_le_bytes(chunk.try_into().unwrap()) as usize);
        }
        let flags = if has_flags == 1 {
            let mut flags = Vec::with_capacity(n);
            for &byte in &payload[n * dim * 8 + n * 4..] {
                flags.push(
                    Relatedness::from_byte(byte).ok_or_else(|| malformed("bad flag byte"))?,
                );
            }
            Some(flags)
        } else {
            None
        };
        Dataset::from_parts(dim, classes, features, labels, flags)
    }
}

/// Writes one decimal index per line.
pub fn save_index_list(path: &Path, indices: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &i in indices {
        writeln!(w, "{i}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_index_list(path: &Path) -> Result<Vec<usize>> {
    let r = BufReader::new(File::open(path)?);
    let mut indices = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let index = line.trim().parse().map_err(|_| Error::MalformedFile {
            path: path.to_path_buf(),
            detail: format!("line {}: not an index", lineno + 1),
        })?;
        indices.push(index);
    }
    Ok(indices)
}

/// Geometry and size of a synthetic task.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub input_dim: usize,
    /// Dimension of the semantic subspace holding target and related classes.
    pub subspace_dim: usize,
    pub n_target_classes: usize,
    /// Training examples per target class; the test split gets the same.
    pub shots: usize,
    pub n_aux_classes: usize,
    /// Examples per auxiliary class before noise replacement.
    pub aux_shots: usize,
    /// Fraction of auxiliary classes placed in the semantic subspace.
    pub related_fraction: f64,
    /// Fraction of target classes (outermost first) that receive
    /// sibling auxiliary classes; the rest stay uncovered by auxiliary
    /// data.
    pub related_coverage: f64,
    /// Fraction of auxiliary examples replaced by isotropic noise.
    pub noise_fraction: f64,
    /// Within-cluster standard deviation.
    pub spread: f64,
    /// Minimum distance enforced between cluster centers.
    pub center_separation: f64,
    /// Standard deviation of isotropic noise samples.
    pub noise_spread: f64,
    /// Standard deviation of isotropic noise injected into every
    /// sample after cluster placement; fills the dimensions a clean
    /// cluster leaves empty.
    pub ambient_noise: f64,
    pub seed: u64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.subspace_dim == 0 || self.subspace_dim > self.input_dim {
            return fail("subspace_dim must be in 1..=input_dim");
        }
        if self.n_target_classes < 2 || self.n_aux_classes < 2 {
            return fail("need at least two target and two auxiliary classes");
        }
        if self.shots == 0 || self.aux_shots == 0 {
            return fail("shots and aux_shots must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.related_fraction)
            || !(0.0..=1.0).contains(&self.noise_fraction)
        {
            return fail("fractions must lie in [0, 1]");
        }
        if !(self.related_coverage > 0.0 && self.related_coverage <= 1.0) {
            return fail("related_coverage must lie in (0, 1]");
        }
        if self.related_count() < self.n_aux_classes && self.subspace_dim == self.input_dim {
            return fail("unrelated classes need a non-empty orthogonal complement");
        }
        if self.spread <= 0.0 || self.center_separation <= 0.0 || self.noise_spread <= 0.0 {
            return fail("spread parameters must be positive");
        }
        let unrelated_share =
            (self.n_aux_classes - self.related_count()) as f64 / self.n_aux_classes as f64;
        if self.noise_fraction > unrelated_share + 1e-12 {
            return fail("noise_fraction cannot exceed the unrelated class share it displaces");
        }
        if self.ambient_noise < 0.0 || !self.ambient_noise.is_finite() {
            return fail("ambient_noise must be finite and >= 0");
        }
        Ok(())
    }

    fn related_count(&self) -> usize {
        ((self.related_fraction * self.n_aux_classes as f64).round() as usize)
            .min(self.n_aux_classes)
    }
}

/// The three splits of one synthetic task.
#[derive(Debug, Clone)]
pub struct SyntheticTask<S = f64> {
    pub target_train: Dataset<S>,
    pub target_test: Dataset<S>,
    pub auxiliary: Dataset<S>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Draws cluster centers uniformly in a `dim`-dimensional ball of the
/// given radius, keeping all pairs at least `separation` apart. Ball
/// sampling keeps center norms comparable across groups regardless of
/// their dimension. The ball grows geometrically on repeated failure,
/// so the procedure always terminates and remains a pure function of
/// the RNG state.
fn draw_centers(
    rng: &mut ChaCha8Rng,
    count: usize,
    dim: usize,
    separation: f64,
    radius: f64,
) -> Vec<Vec<f64>> {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut radius = radius;
    loop {
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
        let mut tries = 0;
        while centers.len() < count {
            tries += 1;
            if tries > 200 * count {
                break;
            }
            let mut candidate: Vec<f64> = (0..dim).map(|_| unit.sample(rng)).collect();
            let norm = candidate.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let r = radius * rng.random_range(0.0f64..1.0).powf(1.0 / dim as f64);
            for v in candidate.iter_mut() {
                *v *= r / norm;
            }
            if centers.iter().all(|c| distance(c, &candidate) >= separation) {
                centers.push(candidate);
            }
        }
        if centers.len() == count {
            return centers;
        }
        radius *= 1.5;
    }
}

/// Starting box size for packing `count` separated centers.
fn packing_radius(count: usize, dim: usize, separation: f64) -> f64 {
    separation * (count as f64).powf(1.0 / dim as f64).max(1.0)
}

/// Generates the target train/test splits and the auxiliary set from a
/// task description. A pure function of its input: the seed fixes
/// every draw, in a fixed order.
pub fn generate_task<S: Scalar>(spec: &TaskSpec) -> Result<SyntheticTask<S>> {
    generate_task_detailed(spec).map(|(task, _)| task)
}

/// [`generate_task`], additionally returning the auxiliary features as
/// they were before ambient noise injection (the clean cluster
/// placements the relatedness flags describe).
pub fn generate_task_detailed<S: Scalar>(
    spec: &TaskSpec,
) -> Result<(SyntheticTask<S>, Vec<f64>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.input_dim;
    let sub = spec.subspace_dim;
    let comp = dim - sub;
    let n_related = spec.related_count();
    let n_unrelated = spec.n_aux_classes - n_related;

    // Target clusters pack the semantic subspace; related auxiliary
    // clusters nest in the same region (distinct from, but adjacent
    // to, the target clusters, like sibling categories); unrelated
    // clusters fill the orthogonal complement.
    let target_radius = packing_radius(spec.n_target_classes, sub, spec.center_separation);
    let target_centers = draw_centers(
        &mut rng,
        spec.n_target_classes,
        sub,
        spec.center_separation,
        target_radius,
    );
    // Each related class is a sibling of one target class, its center a
    // fixed small step from that target center. Under partial coverage
    // the outermost targets take the siblings and the inner ones get no
    // auxiliary coverage at all.
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let sibling_step = 1.5 * spec.spread;
    let anchor_count = ((spec.related_coverage * spec.n_target_classes as f64).ceil() as usize)
        .clamp(1, spec.n_target_classes);
    let anchors: Vec<usize> = {
        let mut order: Vec<usize> = (0..spec.n_target_classes).collect();
        order.sort_by(|&a, &b| {
            let na: f64 = target_centers[a].iter().map(|v| v * v).sum();
            let nb: f64 = target_centers[b].iter().map(|v| v * v).sum();
            nb.partial_cmp(&na).unwrap()
        });
        order.truncate(anchor_count);
        order
    };
    let related_centers: Vec<Vec<f64>> = (0..n_related)
        .map(|j| {
            let anchor = &target_centers[anchors[j % anchor_count]];
            let direction: Vec<f64> = (0..sub).map(|_| unit.sample(&mut rng)).collect();
            let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            anchor
                .iter()
                .zip(&direction)
                .map(|(a, d)| a + d * sibling_step / norm)
                .collect()
        })
        .collect();
    let mut subspace_centers = target_centers;
    subspace_centers.extend(related_centers);
    // Same ball radius as the subspace groups: unrelated content then
    // lives at the same scale as related content, just in other
    // coordinates.
    let complement_centers = if n_unrelated > 0 {
        draw_centers(
            &mut rng,
            n_unrelated,
            comp,
            spec.center_separation,
            target_radius.max(packing_radius(n_unrelated, comp, spec.center_separation)),
        )
    } else {
        Vec::new()
    };

    let cluster_noise = Normal::new(0.0, spec.spread).expect("positive spread");
    let wide_noise = Normal::new(0.0, spec.noise_spread).expect("positive noise spread");

    let draw_subspace_sample = |rng: &mut ChaCha8Rng, center: &[f64]| -> Vec<f64> {
        let mut x = vec![0.0; dim];
        for (i, c) in center.iter().enumerate() {
            x[i] = c + cluster_noise.sample(rng);
        }
        x
    };

    let target_split = |rng: &mut ChaCha8Rng| -> (Vec<f64>, Vec<usize>) {
        let mut features = Vec::with_capacity(spec.n_target_classes * spec.shots * dim);
        let mut labels = Vec::with_capacity(spec.n_target_classes * spec.shots);
        for class in 0..spec.n_target_classes {
            for _ in 0..spec.shots {
                features.extend(draw_subspace_sample(rng, &subspace_centers[class]));
                labels.push(class);
            }
        }
        (features, labels)
    };

    let (train_f, train_l) = target_split(&mut rng);
    let (test_f, test_l) = target_split(&mut rng);

    // Auxiliary composition: related classes keep their full quota (so
    // the related sample share equals the related class fraction);
    // noise displaces unrelated-class samples round-robin.
    let total_aux = spec.n_aux_classes * spec.aux_shots;
    let noise_count = ((spec.noise_fraction * total_aux as f64).round() as usize)
        .min(n_unrelated * spec.aux_shots);
    let mut aux_features = Vec::with_capacity(total_aux * dim);
    let mut aux_labels = Vec::with_capacity(total_aux);
    let mut aux_flags = Vec::with_capacity(total_aux);
    let clustered = total_aux - noise_count;
    let mut class_of_row = Vec::with_capacity(clustered);
    {
        let mut quota: Vec<usize> = vec![spec.aux_shots; spec.n_aux_classes];
        let mut displaced = 0;
        let mut cursor = 0;
        while displaced < noise_count && n_unrelated > 0 {
            let class = n_related + (cursor % n_unrelated);
            if quota[class] > 0 {
                quota[class] -= 1;
                displaced += 1;
            }
            cursor += 1;
        }
        for (class, &count) in quota.iter().enumerate() {
            for _ in 0..count {
                class_of_row.push(class);
            }
        }
    }
    for &class in &class_of_row {
        if class < n_related {
            aux_features.extend(draw_subspace_sample(
                &mut rng,
                &subspace_centers[spec.n_target_classes + class],
            ));
            aux_flags.push(Relatedness::Related);
        } else {
            let mut x = vec![0.0; dim];
            let center = &complement_centers[class - n_related];
            for (i, c) in center.iter().enumerate() {
                x[sub + i] = c + cluster_noise.sample(&mut rng);
            }
            aux_features.extend(x);
            aux_flags.push(Relatedness::Unrelated);
        }
        aux_labels.push(class);
    }
    for _ in 0..noise_count {
        for _ in 0..dim {
            aux_features.push(wide_noise.sample(&mut rng));
        }
        aux_labels.push(rng.random_range(0..spec.n_aux_classes));
        aux_flags.push(Relatedness::Noise);
    }

    // Ambient noise goes in last so the clean cluster geometry above is
    // what the relatedness flags certify.
    let pre_noise_aux = aux_features.clone();
    let mut train_f = train_f;
    let mut test_f = test_f;
    if spec.ambient_noise > 0.0 {
        let ambient = Normal::new(0.0, spec.ambient_noise).expect("ambient_noise validated");
        for split in [&mut train_f, &mut test_f, &mut aux_features] {
            for v in split.iter_mut() {
                *v += ambient.sample(&mut rng);
            }
        }
    }

    let to_scalar = |v: Vec<f64>| v.into_iter().map(S::from_f64_lossy).collect();
    let task = SyntheticTask {
        target_train: Dataset::from_parts(
            dim,
            spec.n_target_classes,
            to_scalar(train_f),
            train_l,
            None,
        )?,
        target_test: Dataset::from_parts(
            dim,
            spec.n_target_classes,
            to_scalar(test_f),
            test_l,
            None,
        )?,
        auxiliary: Dataset::from_parts(
            dim,
            spec.n_aux_classes,
            to_scalar(aux_features),
            aux_labels,
            Some(aux_flags),
        )?,
    };
    Ok((task, pre_noise_aux))
}
