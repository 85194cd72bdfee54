//! Linear probes, PCA and the motion style classifier used for SCS.

use candle_core::{DType, Tensor};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::MotionSequence;
use crate::encoders::{EncoderConfig, StyleEncoder};
use crate::error::{Error, Result};
use crate::losses::{style_cls_loss, ClassifierHead};
use crate::nn::params::ParamStore;
use crate::optim::{Adam, AdamConfig};
use crate::train::epoch_rng;

/// Multinomial logistic regression on standardized features, fitted by
/// full-batch gradient descent from zero weights.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    mean: Array1<f64>,
    scale: Array1<f64>,
    weight: Array2<f64>,
    bias: Array1<f64>,
}

impl LinearProbe {
    pub fn fit(x: ArrayView2<f64>, labels: &[usize], classes: usize, iterations: usize, l2: f64) -> Result<Self> {
        let (n, d) = x.dim();
        if n == 0 || n != labels.len() {
            return Err(Error::Shape(format!("{n} probe rows with {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Range(format!("probe label {bad} outside [0, {classes})")));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        let z = (&x - &mean) / &scale;
        let mut weight = Array2::<f64>::zeros((d, classes));
        let mut bias = Array1::<f64>::zeros(classes);
        let mut onehot = Array2::<f64>::zeros((n, classes));
        for (i, &l) in labels.iter().enumerate() {
            onehot[[i, l]] = 1.0;
        }
        // Adam on the convex objective; deterministic given the data.
        let (mut mw, mut vw) = (weight.clone(), weight.clone());
        let (mut mb, mut vb) = (bias.clone(), bias.clone());
        let (b1, b2, lr, eps) = (0.9, 0.999, 0.05, 1e-8);
        for it in 1..=iterations {
            let probs = softmax_rows(&(z.dot(&weight) + &bias));
            let err = (probs - &onehot) / n as f64;
            let gw = z.t().dot(&err) + &weight * l2;
            let gb = err.sum_axis(Axis(0));
            mw = &mw * b1 + &gw * (1.0 - b1);
            vw = &vw * b2 + &gw.mapv(|g| g * g) * (1.0 - b2);
            mb = &mb * b1 + &gb * (1.0 - b1);
            vb = &vb * b2 + &gb.mapv(|g| g * g) * (1.0 - b2);
            let c1 = 1.0 - b1.powi(it as i32);
            let c2 = 1.0 - b2.powi(it as i32);
            weight = weight - (&mw / c1) / ((&vw / c2).mapv(f64::sqrt) + eps) * lr;
            bias = bias - (&mb / c1) / ((&vb / c2).mapv(f64::sqrt) + eps) * lr;
        }
        Ok(Self { mean, scale, weight, bias })
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        let z = (&x - &self.mean) / &self.scale;
        let logits = z.dot(&self.weight) + &self.bias;
        logits
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            })
            .collect()
    }

    pub fn accuracy(&self, x: ArrayView2<f64>, labels: &[usize]) -> f64 {
        let pred = self.predict(x);
        pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len().max(1) as f64
    }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Fits a probe on one set and reports accuracy on another.
pub fn probe_accuracy(
    train_x: ArrayView2<f64>,
    train_y: &[usize],
    test_x: ArrayView2<f64>,
    test_y: &[usize],
    classes: usize,
) -> Result<f64> {
    let probe = LinearProbe::fit(train_x, train_y, classes, 300, 1e-4)?;
    Ok(probe.accuracy(test_x, test_y))
}

/// Two-component PCA.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `(d, 2)`, unit columns.
    pub components: Array2<f64>,
    pub explained: [f64; 2],
}

impl Pca {
    /// Each component is signed so its largest-magnitude loading (first on
    /// ties) is positive.
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        let (n, d) = x.dim();
        if n < 2 || d < 2 {
            return Err(Error::Shape(format!("PCA needs at least 2 rows and 2 columns, got {n}×{d}")));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let centered = &x - &mean;
        let cov = centered.t().dot(&centered) / n as f64;
        let m = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut components = Array2::zeros((d, 2));
        let mut explained = [0.0; 2];
        for (k, &idx) in order.iter().take(2).enumerate() {
            let col = eig.eigenvectors.column(idx);
            let mut best = 0;
            for i in 1..d {
                if col[i].abs() > col[best].abs() + 1e-12 {
                    best = i;
                }
            }
            let sign = if col[best] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..d {
                components[[i, k]] = sign * col[i];
            }
            explained[k] = eig.eigenvalues[idx].max(0.0);
        }
        Ok(Self { mean, components, explained })
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean).dot(&self.components)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleProbeConfig {
    pub model_dim: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub channels: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub window_frames: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for StyleProbeConfig {
    fn default() -> Self {
        Self {
            model_dim: 32,
            embed_dim: 32,
            layers: 1,
            heads: 2,
            channels: 32,
            epochs: 12,
            batch_size: 8,
            window_frames: 50,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Motion sequence classifier; its pooled feature is the style embedding.
pub struct StyleProbe {
    pub config: StyleProbeConfig,
    pub params: ParamStore,
    encoder: StyleEncoder,
    head: ClassifierHead,
    classes: usize,
}

impl StyleProbe {
    pub fn new(config: StyleProbeConfig, vertices: usize, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config("the style probe needs at least 2 identities".into()));
        }
        let enc = EncoderConfig {
            style_dim: config.embed_dim,
            model_dim: config.model_dim,
            layers: config.layers,
            heads: config.heads,
            tcn_channels: config.channels,
            ..EncoderConfig::default()
        };
        let mut params = ParamStore::new(config.seed, DType::F32);
        let encoder = StyleEncoder::new(&mut params, "probe", &enc, vertices * 3)?;
        let head = ClassifierHead::new(&mut params, "probe_head", config.embed_dim, classes)?;
        Ok(Self { config, params, encoder, head, classes })
    }

    fn batch(&self, motions: &[&MotionSequence]) -> Result<Tensor> {
        let t = motions[0].len();
        let v = motions[0].vertex_count();
        let mut data = Vec::with_capacity(motions.len() * t * v * 3);
        for m in motions {
            if m.len() != t || m.vertex_count() != v {
                return Err(Error::Shape("probe batch motions must share one shape".into()));
            }
            data.extend(m.frames.iter().copied());
        }
        Ok(Tensor::from_vec(data, (motions.len(), t, v * 3), self.params.device())?)
    }

    /// Trains on random windows of the given motions.
    pub fn fit(&mut self, motions: &[&MotionSequence], labels: &[usize]) -> Result<()> {
        if motions.len() != labels.len() || motions.is_empty() {
            return Err(Error::Shape("probe training needs one label per motion".into()));
        }
        let mut distinct = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::Range("probe training split holds a single identity".into()));
        }
        let cfg = self.config.clone();
        let mut adam = Adam::new(AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() });
        for epoch in 0..cfg.epochs {
            let mut rng = epoch_rng(cfg.seed ^ 0x5eed, epoch);
            let mut order: Vec<usize> = (0..motions.len()).collect();
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let windows: Vec<MotionSequence> = chunk
                    .iter()
                    .map(|&i| random_window(motions[i], cfg.window_frames, &mut rng))
                    .collect();
                let refs: Vec<&MotionSequence> = windows.iter().collect();
                let x = self.batch(&refs)?;
                let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let loss = style_cls_loss(&self.encoder.forward(&x)?, &y, &self.head)?;
                let grads = loss.backward()?;
                adam.apply(&self.params, &grads)?;
            }
        }
        Ok(())
    }

    /// Pooled embeddings, one row per motion.
    pub fn embed(&self, motions: &[&MotionSequence]) -> Result<Array2<f64>> {
        let mut rows = Vec::new();
        for chunk in motions.chunks(16) {
            let x = self.batch(chunk)?;
            let e: Vec<Vec<f32>> = self.encoder.forward(&x)?.to_vec2()?;
            rows.extend(e);
        }
        let d = self.config.embed_dim;
        Ok(Array2::from_shape_vec((rows.len(), d), rows.into_iter().flatten().map(f64::from).collect())
            .expect("embedding rows"))
    }

    pub fn classify(&self, motions: &[&MotionSequence]) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for chunk in motions.chunks(16) {
            let x = self.batch(chunk)?;
            let logits: Vec<Vec<f32>> = self.head.forward(&self.encoder.forward(&x)?)?.to_vec2()?;
            out.extend(logits.iter().map(|r| {
                r.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0)
            }));
        }
        Ok(out)
    }

    pub fn accuracy(&self, motions: &[&MotionSequence], labels: &[usize]) -> Result<f64> {
        let pred = self.classify(motions)?;
        Ok(pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len().max(1) as f64)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
}

fn random_window(m: &MotionSequence, frames: usize, rng: &mut impl rand::Rng) -> MotionSequence {
    use ndarray::s;
    let len = frames.min(m.len());
    let start = rng.random_range(0..=m.len() - len);
    MotionSequence { frames: m.frames.slice(s![start..start + len, .., ..]).to_owned(), frame_rate: m.frame_rate }
}

/// Mean cosine between probe embeddings of paired motions.
pub fn scs(probe: &StyleProbe, pred: &[&MotionSequence], gt: &[&MotionSequence]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Shape("SCS needs equally many non-empty prediction and reference lists".into()));
    }
    let a = probe.embed(pred)?;
    let b = probe.embed(gt)?;
    let total: f64 = a
        .rows()
        .into_iter()
        .zip(b.rows())
        .map(|(x, y)| crate::metrics::cosine(x.as_slice().expect("row"), y.as_slice().expect("row")))
        .sum();
    Ok(total / pred.len() as f64)
}
