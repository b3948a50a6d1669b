//! Stacked bidirectional GRU acoustic model with a linear log-softmax head.
//!
//! Each direction of each layer uses the reset-before-candidate GRU:
//!
//! ```text
//! z = σ(W_z·x + U_z·h + b_z)
//! r = σ(W_r·x + U_r·h + b_r)
//! n = tanh(W_n·x + U_n·(r ⊙ h) + b_n)
//! h' = (1 − z) ⊙ h + z ⊙ n
//! ```
//!
//! Layer outputs are `[forward; backward]` hidden states (2H values per
//! frame). All parameters live in one flat `Vec<f64>` described by
//! [`TensorSpec`]s, which keeps the optimizer and gradient checks simple.

mod adam;
mod checkpoint;
mod train;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{
    batch_loss_grad, input_statistics, mean_loss, train, write_training_log, EpochLog, Example, TrainConfig,
    TrainReport,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctc::{ctc_loss, PosteriorLattice};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::spd::Eigenbasis;

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub layers: usize,
    /// Hidden width per direction.
    pub hidden: usize,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            layers: 3,
            hidden: 256,
            input_dim: 961,
            output_dim: 41,
        }
    }
}

/// Location of one named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    /// Matrices are stored with two dimensions, bias vectors with one.
    pub is_vector: bool,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.input_dim == 0 || self.output_dim < 2 {
            return Err(Error::Parameter(format!("invalid model shape {self:?}")));
        }
        Ok(())
    }

    pub fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            2 * self.hidden
        }
    }

    /// Exact number of trainable parameters.
    pub fn param_count(&self) -> usize {
        let h = self.hidden;
        let gru: usize = (0..self.layers)
            .map(|l| 2 * (3 * h * self.layer_input(l) + 3 * h * h + 3 * h))
            .sum();
        gru + self.output_dim * 2 * h + self.output_dim
    }

    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        let h = self.hidden;
        let mut specs = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize, is_vector: bool| {
            specs.push(TensorSpec {
                name,
                rows,
                cols,
                offset,
                is_vector,
            });
            offset += rows * cols;
        };
        for l in 0..self.layers {
            for d in DIRECTIONS {
                push(format!("gru.{l}.{d}.w"), 3 * h, self.layer_input(l), false);
                push(format!("gru.{l}.{d}.u"), 3 * h, h, false);
                push(format!("gru.{l}.{d}.b"), 1, 3 * h, true);
            }
        }
        push("head.w".into(), self.output_dim, 2 * h, false);
        push("head.b".into(), 1, self.output_dim, true);
        specs
    }
}

/// A trained or freshly initialized acoustic model.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticModel {
    shape: ModelShape,
    specs: Vec<TensorSpec>,
    pub params: Vec<f64>,
    /// Per-dimension input standardization applied before the first layer.
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    /// Eigenbasis the SPD input features were computed with.
    pub basis: Option<Eigenbasis>,
    pub seed: u64,
}

/// Activations kept from a forward pass for [`AcousticModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    frames: usize,
    layers: Vec<LayerCache>,
    /// `T × output_dim` log-probabilities.
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// `T × in` inputs to this layer.
    input: Vec<f64>,
    dirs: [DirCache; 2],
    /// `T × 2H` concatenated hidden states.
    output: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct DirCache {
    /// `T × H` hidden state after processing frame t.
    h: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
}

/// Four independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Frame `t` is processed at step `s` of a direction.
fn time_of(dir: usize, s: usize, frames: usize) -> usize {
    if dir == 0 {
        s
    } else {
        frames - 1 - s
    }
}

/// Index of the frame whose hidden state feeds frame `t`, if any.
fn prev_time(dir: usize, t: usize, frames: usize) -> Option<usize> {
    if dir == 0 {
        t.checked_sub(1)
    } else if t + 1 < frames {
        Some(t + 1)
    } else {
        None
    }
}

impl AcousticModel {
    /// Uniform initialization in ±1/√H (±1/√(2H) for the head) from a ChaCha8 stream.
    pub fn new(shape: ModelShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let specs = shape.tensor_specs();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; shape.param_count()];
        for spec in &specs {
            let fan = if spec.name.starts_with("head") {
                2 * shape.hidden
            } else {
                shape.hidden
            };
            let k = 1.0 / (fan as f64).sqrt();
            for p in &mut params[spec.range()] {
                *p = rng.gen_range(-k..k);
            }
        }
        Ok(AcousticModel {
            shape,
            specs,
            params,
            input_mean: vec![0.0; shape.input_dim],
            input_std: vec![1.0; shape.input_dim],
            basis: None,
            seed,
        })
    }

    /// A model whose parameters are all zero.
    pub fn zeros(shape: ModelShape) -> Result<Self> {
        let mut m = AcousticModel::new(shape, 0)?;
        m.params.iter_mut().for_each(|p| *p = 0.0);
        Ok(m)
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn tensor_specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.specs.iter().find(|s| s.name == name).map(|s| &self.params[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.specs.iter().find(|s| s.name == name)?.range();
        Some(&mut self.params[range])
    }

    fn slice(&self, name: &str) -> &[f64] {
        self.tensor(name).expect("tensor names come from tensor_specs")
    }

    fn check_input(&self, features: &FeatureSequence) -> Result<()> {
        if features.frame_dim != self.shape.input_dim {
            return Err(Error::Parameter(format!(
                "feature dim {} does not match model input dim {}",
                features.frame_dim, self.shape.input_dim
            )));
        }
        if features.frames == 0 {
            return Err(Error::Data("empty feature sequence".into()));
        }
        Ok(())
    }

    fn standardize(&self, features: &FeatureSequence) -> Vec<f64> {
        let d = self.shape.input_dim;
        let mut x = features.values.clone();
        for row in x.chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.input_mean).zip(&self.input_std) {
                *v = (*v - m) / s;
            }
        }
        x
    }

    /// Per-frame log-probabilities, `T × output_dim` row-major.
    pub fn forward(&self, features: &FeatureSequence) -> Result<Vec<f64>> {
        Ok(self.forward_cached(features)?.log_probs)
    }

    /// Forward pass wrapped as a CTC lattice (blank is the last class).
    pub fn lattice(&self, features: &FeatureSequence) -> Result<PosteriorLattice> {
        let lp = self.forward(features)?;
        PosteriorLattice::new(features.frames, self.shape.output_dim, self.shape.output_dim - 1, lp)
    }

    pub fn forward_cached(&self, features: &FeatureSequence) -> Result<ForwardCache> {
        self.check_input(features)?;
        let frames = features.frames;
        let h = self.shape.hidden;
        let mut input = self.standardize(features);
        let mut layers = Vec::with_capacity(self.shape.layers);
        for l in 0..self.shape.layers {
            let in_dim = self.shape.layer_input(l);
            let mut output = vec![0.0; frames * 2 * h];
            let mut dirs: [DirCache; 2] = Default::default();
            for (d, name) in DIRECTIONS.iter().enumerate() {
                let w = self.slice(&format!("gru.{l}.{name}.w"));
                let u = self.slice(&format!("gru.{l}.{name}.u"));
                let b = self.slice(&format!("gru.{l}.{name}.b"));
                let c = &mut dirs[d];
                c.h = vec![0.0; frames * h];
                c.z = vec![0.0; frames * h];
                c.r = vec![0.0; frames * h];
                c.n = vec![0.0; frames * h];
                let zero = vec![0.0; h];
                let mut a = vec![0.0; 3 * h];
                let mut rh = vec![0.0; h];
                for s in 0..frames {
                    let t = time_of(d, s, frames);
                    let x = &input[t * in_dim..(t + 1) * in_dim];
                    let hp: Vec<f64> = match prev_time(d, t, frames) {
                        Some(p) => c.h[p * h..(p + 1) * h].to_vec(),
                        None => zero.clone(),
                    };
                    for (i, ai) in a.iter_mut().enumerate() {
                        *ai = b[i] + dot(&w[i * in_dim..(i + 1) * in_dim], x);
                    }
                    for i in 0..h {
                        let z = sigmoid(a[i] + dot(&u[i * h..(i + 1) * h], &hp));
                        let r = sigmoid(a[h + i] + dot(&u[(h + i) * h..(h + i + 1) * h], &hp));
                        c.z[t * h + i] = z;
                        c.r[t * h + i] = r;
                        rh[i] = r * hp[i];
                    }
                    for i in 0..h {
                        let n = (a[2 * h + i] + dot(&u[(2 * h + i) * h..(2 * h + i + 1) * h], &rh)).tanh();
                        let z = c.z[t * h + i];
                        c.n[t * h + i] = n;
                        c.h[t * h + i] = (1.0 - z) * hp[i] + z * n;
                    }
                    output[t * 2 * h + d * h..t * 2 * h + (d + 1) * h].copy_from_slice(&c.h[t * h..(t + 1) * h]);
                }
            }
            let next = output.clone();
            layers.push(LayerCache {
                input: std::mem::replace(&mut input, next),
                dirs,
                output,
            });
        }

        let o = self.shape.output_dim;
        let hw = self.slice("head.w");
        let hb = self.slice("head.b");
        let mut log_probs = vec![0.0; frames * o];
        for t in 0..frames {
            let y = &input[t * 2 * h..(t + 1) * 2 * h];
            let row = &mut log_probs[t * o..(t + 1) * o];
            for (k, v) in row.iter_mut().enumerate() {
                *v = hb[k] + dot(&hw[k * 2 * h..(k + 1) * 2 * h], y);
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        Ok(ForwardCache {
            frames,
            layers,
            log_probs,
        })
    }

    /// Parameter gradient given `∂L/∂log_probs` (`T × output_dim`).
    pub fn backward(&self, cache: &ForwardCache, grad_log_probs: &[f64]) -> Vec<f64> {
        let frames = cache.frames;
        let h = self.shape.hidden;
        let o = self.shape.output_dim;
        let mut grad = vec![0.0; self.params.len()];
        let spec = |name: &str| {
            self.specs
                .iter()
                .find(|s| s.name == name)
                .expect("tensor names come from tensor_specs")
                .range()
        };

        // log-softmax and linear head
        let top = &cache.layers.last().expect("at least one layer").output;
        let hw = self.slice("head.w");
        let (gw_range, gb_range) = (spec("head.w"), spec("head.b"));
        let mut dy = vec![0.0; frames * 2 * h];
        for t in 0..frames {
            let g = &grad_log_probs[t * o..(t + 1) * o];
            let lp = &cache.log_probs[t * o..(t + 1) * o];
            let total: f64 = g.iter().sum();
            let y = &top[t * 2 * h..(t + 1) * 2 * h];
            for k in 0..o {
                let dlogit = g[k] - lp[k].exp() * total;
                if dlogit == 0.0 {
                    continue;
                }
                grad[gb_range.start + k] += dlogit;
                let row = gw_range.start + k * 2 * h;
                axpy(dlogit, y, &mut grad[row..row + 2 * h]);
                axpy(dlogit, &hw[k * 2 * h..(k + 1) * 2 * h], &mut dy[t * 2 * h..(t + 1) * 2 * h]);
            }
        }

        for l in (0..self.shape.layers).rev() {
            let lc = &cache.layers[l];
            let in_dim = self.shape.layer_input(l);
            let mut dx = vec![0.0; frames * in_dim];
            for (d, name) in DIRECTIONS.iter().enumerate() {
                let w = self.slice(&format!("gru.{l}.{name}.w"));
                let u = self.slice(&format!("gru.{l}.{name}.u"));
                let (wr, ur, br) = (
                    spec(&format!("gru.{l}.{name}.w")),
                    spec(&format!("gru.{l}.{name}.u")),
                    spec(&format!("gru.{l}.{name}.b")),
                );
                let c = &lc.dirs[d];
                let mut carry = vec![0.0; h];
                let mut da = vec![0.0; 3 * h];
                let mut rh = vec![0.0; h];
                let mut drh = vec![0.0; h];
                let zero = vec![0.0; h];
                for s in (0..frames).rev() {
                    let t = time_of(d, s, frames);
                    let hp: &[f64] = match prev_time(d, t, frames) {
                        Some(p) => &c.h[p * h..(p + 1) * h],
                        None => &zero,
                    };
                    let dh: Vec<f64> = (0..h).map(|i| dy[t * 2 * h + d * h + i] + carry[i]).collect();
                    for i in 0..h {
                        let (z, r, n) = (c.z[t * h + i], c.r[t * h + i], c.n[t * h + i]);
                        rh[i] = r * hp[i];
                        carry[i] = dh[i] * (1.0 - z);
                        da[i] = dh[i] * (n - hp[i]) * z * (1.0 - z);
                        da[2 * h + i] = dh[i] * z * (1.0 - n * n);
                    }
                    // candidate path through U_n·(r ⊙ h)
                    drh.iter_mut().for_each(|v| *v = 0.0);
                    for i in 0..h {
                        let g = da[2 * h + i];
                        let row = (2 * h + i) * h;
                        axpy(g, &u[row..row + h], &mut drh);
                        axpy(g, &rh, &mut grad[ur.start + row..ur.start + row + h]);
                    }
                    for i in 0..h {
                        let r = c.r[t * h + i];
                        da[h + i] = drh[i] * hp[i] * r * (1.0 - r);
                        carry[i] += drh[i] * r;
                    }
                    for i in 0..2 * h {
                        let g = da[i];
                        let row = i * h;
                        axpy(g, &u[row..row + h], &mut carry);
                        axpy(g, hp, &mut grad[ur.start + row..ur.start + row + h]);
                    }
                    let x = &lc.input[t * in_dim..(t + 1) * in_dim];
                    let dxt = &mut dx[t * in_dim..(t + 1) * in_dim];
                    for (i, &g) in da.iter().enumerate() {
                        grad[br.start + i] += g;
                        let row = i * in_dim;
                        axpy(g, x, &mut grad[wr.start + row..wr.start + row + in_dim]);
                        axpy(g, &w[row..row + in_dim], dxt);
                    }
                }
            }
            dy = dx;
        }
        grad
    }

    /// CTC loss of one labelled sequence and its parameter gradient.
    pub fn loss_and_grad(&self, features: &FeatureSequence, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward_cached(features)?;
        let lattice = PosteriorLattice::new(
            features.frames,
            self.shape.output_dim,
            self.shape.output_dim - 1,
            cache.log_probs.clone(),
        )?;
        let out = ctc_loss(&lattice, labels)?;
        Ok((out.loss, self.backward(&cache, &out.grad)))
    }

    /// CTC loss only.
    pub fn loss(&self, features: &FeatureSequence, labels: &[usize]) -> Result<f64> {
        Ok(ctc_loss(&self.lattice(features)?, labels)?.loss)
    }
}
