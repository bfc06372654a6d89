//! Minimal feedforward action-value network.
//!
//! Fully connected layers with leaky-ReLU hidden activations and a linear
//! output head, trained by exact backpropagation of a masked mean-squared
//! error (only the taken action's output contributes per sample) and the
//! Adam update. No autodiff, no BLAS: the layers are small enough that
//! straightforward loops over contiguous rows are fast.

use crate::env::{Feature, NormStats};
use crate::error::{Result, SimError};
use crate::rng::Rng;
use rand::Rng as _;
use std::io::{Read, Write};
use std::path::Path;

/// Weights are stored row-major per layer: `weights[l][o * n_in + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub leaky_slope: f64,
}

/// Per-layer parameter gradients produced by a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub loss: f64,
}

/// Activations cached by a forward pass for reuse in backward.
#[derive(Debug, Default)]
pub struct ForwardCache {
    /// `layers[0]` is the input batch; `layers[l + 1]` the post-activation
    /// output of layer `l`.
    layers: Vec<Vec<f64>>,
    batch: usize,
}

impl QNetwork {
    /// Fresh network with fan-in-scaled uniform weights and zero biases.
    pub fn new(dims: &[usize], leaky_slope: f64, rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (n_in, n_out) = (dims[l], dims[l + 1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            weights.push((0..n_in * n_out).map(|_| rng.gen_range(-bound..bound)).collect());
            biases.push(vec![0.0; n_out]);
        }
        QNetwork { dims: dims.to_vec(), weights, biases, leaky_slope }
    }

    pub fn zeros(dims: &[usize], leaky_slope: f64) -> Self {
        let weights = (0..dims.len() - 1).map(|l| vec![0.0; dims[l] * dims[l + 1]]).collect();
        let biases = (0..dims.len() - 1).map(|l| vec![0.0; dims[l + 1]]).collect();
        QNetwork { dims: dims.to_vec(), weights, biases, leaky_slope }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }

    fn lrelu(&self, z: f64) -> f64 {
        if z > 0.0 {
            z
        } else {
            self.leaky_slope * z
        }
    }

    fn lrelu_grad(&self, h: f64) -> f64 {
        // The activation is invertible in sign, so the cached output tells
        // us which branch was taken.
        if h > 0.0 {
            1.0
        } else {
            self.leaky_slope
        }
    }

    /// Action values for one observation.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(SimError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
                context: "network input".into(),
            });
        }
        let mut cache = ForwardCache::default();
        self.forward_batch_cached(x, 1, &mut cache)?;
        Ok(cache.layers.last().unwrap().clone())
    }

    /// Row-major batched forward; returns `[batch * output_dim]`.
    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut cache = ForwardCache::default();
        self.forward_batch_cached(x, batch, &mut cache)?;
        Ok(cache.layers.pop().unwrap())
    }

    /// Batched forward keeping every activation for a later backward pass.
    /// The cache's buffers are reused across calls.
    pub fn forward_batch_cached(
        &self,
        x: &[f64],
        batch: usize,
        cache: &mut ForwardCache,
    ) -> Result<()> {
        if x.len() != batch * self.input_dim() {
            return Err(SimError::DimensionMismatch {
                expected: batch * self.input_dim(),
                got: x.len(),
                context: "batched network input".into(),
            });
        }
        cache.batch = batch;
        cache.layers.resize_with(self.layer_count() + 1, Vec::new);
        cache.layers[0].clear();
        cache.layers[0].extend_from_slice(x);
        for l in 0..self.layer_count() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.weights[l];
            let b = &self.biases[l];
            let last = l + 1 == self.layer_count();
            let (input, output) = {
                let (head, tail) = cache.layers.split_at_mut(l + 1);
                (&head[l], &mut tail[0])
            };
            output.clear();
            output.resize(batch * n_out, 0.0);
            for s in 0..batch {
                let xin = &input[s * n_in..(s + 1) * n_in];
                let orow = &mut output[s * n_out..(s + 1) * n_out];
                for o in 0..n_out {
                    let wrow = &w[o * n_in..(o + 1) * n_in];
                    let mut acc = b[o];
                    for i in 0..n_in {
                        acc += wrow[i] * xin[i];
                    }
                    orow[o] = if last { acc } else { self.lrelu(acc) };
                }
            }
        }
        Ok(())
    }

    /// Gradient of the masked mean-squared error over a batch:
    /// `L = (1/b) * sum_j (y_j - Q(s_j, a_j))^2`.
    pub fn backward_batch(
        &self,
        x: &[f64],
        batch: usize,
        actions: &[usize],
        targets: &[f64],
    ) -> Result<Gradients> {
        let mut cache = ForwardCache::default();
        self.forward_batch_cached(x, batch, &mut cache)?;
        let mut grads = Gradients::zeros_like(self);
        self.backward_from_cache(&cache, actions, targets, &mut grads)?;
        Ok(grads)
    }

    /// Backward pass reusing a forward cache; accumulates into zeroed
    /// gradient buffers and returns the batch loss in `grads.loss`.
    pub fn backward_from_cache(
        &self,
        cache: &ForwardCache,
        actions: &[usize],
        targets: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        let batch = cache.batch;
        if actions.len() != batch || targets.len() != batch {
            return Err(SimError::DimensionMismatch {
                expected: batch,
                got: actions.len().min(targets.len()),
                context: "actions/targets batch".into(),
            });
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(SimError::NonFinite("training targets".into()));
        }
        grads.zero();
        let n_out = self.output_dim();
        let outputs = cache.layers.last().unwrap();
        // Output delta: only the taken action's entry is nonzero.
        let mut delta = vec![0.0; batch * n_out];
        let mut loss = 0.0;
        let inv_b = 1.0 / batch as f64;
        for s in 0..batch {
            let a = actions[s];
            if a >= n_out {
                return Err(SimError::DimensionMismatch {
                    expected: n_out,
                    got: a,
                    context: "action index".into(),
                });
            }
            let q = outputs[s * n_out + a];
            let diff = q - targets[s];
            loss += diff * diff * inv_b;
            delta[s * n_out + a] = 2.0 * diff * inv_b;
        }
        grads.loss = loss;

        for l in (0..self.layer_count()).rev() {
            let (n_in, n_o) = (self.dims[l], self.dims[l + 1]);
            let input = &cache.layers[l];
            let w = &self.weights[l];
            let dw = &mut grads.weights[l];
            let db = &mut grads.biases[l];
            for s in 0..batch {
                let drow = &delta[s * n_o..(s + 1) * n_o];
                let xin = &input[s * n_in..(s + 1) * n_in];
                for o in 0..n_o {
                    let d = drow[o];
                    if d != 0.0 {
                        db[o] += d;
                        let wrow = &mut dw[o * n_in..(o + 1) * n_in];
                        for i in 0..n_in {
                            wrow[i] += d * xin[i];
                        }
                    }
                }
            }
            if l > 0 {
                // Propagate through the layer weights and the previous
                // layer's leaky-ReLU.
                let mut prev = vec![0.0; batch * n_in];
                for s in 0..batch {
                    let drow = &delta[s * n_o..(s + 1) * n_o];
                    let prow = &mut prev[s * n_in..(s + 1) * n_in];
                    for o in 0..n_o {
                        let d = drow[o];
                        if d != 0.0 {
                            let wrow = &w[o * n_in..(o + 1) * n_in];
                            for i in 0..n_in {
                                prow[i] += d * wrow[i];
                            }
                        }
                    }
                    let hrow = &input[s * n_in..(s + 1) * n_in];
                    for i in 0..n_in {
                        prow[i] *= self.lrelu_grad(hrow[i]);
                    }
                }
                delta = prev;
            }
        }
        Ok(())
    }

    /// Exact gradient of `Q(x, action)` with respect to the input features.
    pub fn input_gradient(&self, x: &[f64], action: usize) -> Result<Vec<f64>> {
        if action >= self.output_dim() {
            return Err(SimError::DimensionMismatch {
                expected: self.output_dim(),
                got: action,
                context: "action index".into(),
            });
        }
        let mut cache = ForwardCache::default();
        self.forward_batch_cached(x, 1, &mut cache)?;
        let mut delta = vec![0.0; self.output_dim()];
        delta[action] = 1.0;
        for l in (0..self.layer_count()).rev() {
            let (n_in, n_o) = (self.dims[l], self.dims[l + 1]);
            let w = &self.weights[l];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_o {
                let d = delta[o];
                if d != 0.0 {
                    let wrow = &w[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        prev[i] += d * wrow[i];
                    }
                }
            }
            if l > 0 {
                let hrow = &cache.layers[l];
                for i in 0..n_in {
                    prev[i] *= self.lrelu_grad(hrow[i]);
                }
            }
            delta = prev;
        }
        Ok(delta)
    }
}

impl Gradients {
    pub fn zeros_like(net: &QNetwork) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            loss: 0.0,
        }
    }

    pub fn zero(&mut self) {
        for w in &mut self.weights {
            w.iter_mut().for_each(|v| *v = 0.0);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
        self.loss = 0.0;
    }
}

/// Adam optimizer state: first/second moment per parameter plus the step
/// counter for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(net: &QNetwork, learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m_w: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_w: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// One bias-corrected Adam update in place.
    pub fn apply(&mut self, net: &mut QNetwork, grads: &Gradients) -> Result<()> {
        for g in grads.weights.iter().chain(grads.biases.iter()) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonFinite("parameter gradients".into()));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
            }
        };
        for l in 0..net.weights.len() {
            update(&mut net.weights[l], &grads.weights[l], &mut self.m_w[l], &mut self.v_w[l]);
            update(&mut net.biases[l], &grads.biases[l], &mut self.m_b[l], &mut self.v_b[l]);
        }
        Ok(())
    }
}

/// Metadata stored alongside the weights so a checkpoint is self-contained:
/// the feature set, the action fractions, the normalization statistics and
/// the initialization scheme used.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub features: Vec<Feature>,
    pub actions: Vec<f64>,
    pub stats: NormStats,
    pub init: String,
}

const MAGIC: &[u8; 8] = b"QRSIMNET";
const VERSION: u32 = 1;

fn feature_tag(f: Feature) -> u8 {
    Feature::ALL.iter().position(|&g| g == f).unwrap() as u8
}

/// Writes the network and metadata in the documented little-endian layout:
/// magic, version, layer dims, leaky slope, feature tags, normalization
/// statistics, action fractions, init-scheme string, then per layer the
/// row-major weight block followed by the bias block.
pub fn save_weights(net: &QNetwork, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(net.dims.len() as u32).to_le_bytes());
    for &d in &net.dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&net.leaky_slope.to_le_bytes());
    buf.extend_from_slice(&(meta.features.len() as u32).to_le_bytes());
    for &f in &meta.features {
        buf.push(feature_tag(f));
    }
    for (m, s) in [meta.stats.ask_price, meta.stats.bid_volume, meta.stats.ask_volume] {
        buf.extend_from_slice(&m.to_le_bytes());
        buf.extend_from_slice(&s.to_le_bytes());
    }
    buf.extend_from_slice(&(meta.actions.len() as u32).to_le_bytes());
    for &a in &meta.actions {
        buf.extend_from_slice(&a.to_le_bytes());
    }
    buf.extend_from_slice(&(meta.init.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta.init.as_bytes());
    for l in 0..net.layer_count() {
        for &w in &net.weights[l] {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        for &b in &net.biases[l] {
            buf.extend_from_slice(&b.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(SimError::Checkpoint("file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Loads a checkpoint; the reverse of [`save_weights`], bit-exact.
pub fn load_weights(path: &Path) -> Result<(QNetwork, CheckpointMeta)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(SimError::Checkpoint("bad magic: not a network checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(SimError::Checkpoint(format!("unsupported version {version}")));
    }
    let n_dims = r.u32()? as usize;
    if !(2..=64).contains(&n_dims) {
        return Err(SimError::Checkpoint(format!("implausible layer count {n_dims}")));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(r.u32()? as usize);
    }
    let leaky_slope = r.f64()?;
    let n_features = r.u32()? as usize;
    let mut features = Vec::with_capacity(n_features);
    for _ in 0..n_features {
        let tag = r.take(1)?[0] as usize;
        let f = Feature::ALL.get(tag).copied().ok_or_else(|| {
            SimError::Checkpoint(format!("unknown feature tag {tag}"))
        })?;
        features.push(f);
    }
    let mut pairs = [(0.0, 0.0); 3];
    for p in &mut pairs {
        *p = (r.f64()?, r.f64()?);
    }
    let stats = NormStats { ask_price: pairs[0], bid_volume: pairs[1], ask_volume: pairs[2] };
    let n_actions = r.u32()? as usize;
    let mut actions = Vec::with_capacity(n_actions);
    for _ in 0..n_actions {
        actions.push(r.f64()?);
    }
    let init_len = r.u32()? as usize;
    let init = String::from_utf8(r.take(init_len)?.to_vec())
        .map_err(|_| SimError::Checkpoint("init scheme not utf-8".into()))?;
    if dims[0] != features.len() {
        return Err(SimError::Checkpoint(format!(
            "input dim {} does not match feature count {}",
            dims[0],
            features.len()
        )));
    }
    if *dims.last().unwrap() != actions.len() {
        return Err(SimError::Checkpoint(format!(
            "output dim {} does not match action count {}",
            dims.last().unwrap(),
            actions.len()
        )));
    }
    let mut net = QNetwork::zeros(&dims, leaky_slope);
    for l in 0..net.layer_count() {
        for w in &mut net.weights[l] {
            *w = r.f64()?;
        }
        for b in &mut net.biases[l] {
            *b = r.f64()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(SimError::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok((net, CheckpointMeta { features, actions, stats, init }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    fn rng(seed: u64) -> Rng {
        stream(seed, "nn-test", 0)
    }

    #[test]
    fn zero_network_maps_everything_to_zero() {
        let net = QNetwork::zeros(&[4, 8, 3], 0.01);
        let out = net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn identity_layer_passes_positive_input() {
        let mut net = QNetwork::zeros(&[3, 3], 0.01);
        for i in 0..3 {
            net.weights[0][i * 3 + i] = 1.0;
        }
        let out = net.forward(&[0.3, 1.5, 2.0]).unwrap();
        assert_eq!(out, vec![0.3, 1.5, 2.0]);
    }

    #[test]
    fn batched_forward_equals_per_sample() {
        let net = QNetwork::new(&[5, 7, 4], 0.01, &mut rng(1));
        let xs: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let batched = net.forward_batch(&xs, 3).unwrap();
        for s in 0..3 {
            let single = net.forward(&xs[s * 5..(s + 1) * 5]).unwrap();
            assert_eq!(&batched[s * 4..(s + 1) * 4], single.as_slice());
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = QNetwork::new(&[5, 4, 3], 0.01, &mut rng(2));
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(SimError::DimensionMismatch { expected: 5, got: 2, .. })
        ));
    }

    #[test]
    fn loss_minimum_gives_zero_gradient() {
        let net = QNetwork::new(&[3, 6, 2], 0.01, &mut rng(3));
        let x = [0.2, -0.4, 0.9, 0.1, 0.5, -0.7];
        let mut targets = Vec::new();
        for s in 0..2 {
            let q = net.forward(&x[s * 3..(s + 1) * 3]).unwrap();
            targets.push(q[s % 2]);
        }
        let grads = net.backward_batch(&x, 2, &[0, 1], &targets).unwrap();
        assert_relative_eq!(grads.loss, 0.0, epsilon = 1e-24);
        for g in grads.weights.iter().chain(grads.biases.iter()) {
            for &v in g {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let net = QNetwork::new(&[3, 5, 2], 0.01, &mut rng(4));
        let x = [0.2, -0.4, 0.9, 0.1, 0.5, -0.7];
        let actions = [0usize, 1];
        let targets = [0.3, -0.2];
        let g1 = net.backward_batch(&x, 2, &actions, &targets).unwrap();
        let xx: Vec<f64> = x.iter().chain(x.iter()).copied().collect();
        let aa = [0usize, 1, 0, 1];
        let tt = [0.3, -0.2, 0.3, -0.2];
        let g2 = net.backward_batch(&xx, 4, &aa, &tt).unwrap();
        for l in 0..net.layer_count() {
            for (a, b) in g1.weights[l].iter().zip(&g2.weights[l]) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
        }
        assert_relative_eq!(g1.loss, g2.loss, epsilon = 1e-12);
    }

    fn masked_loss(net: &QNetwork, x: &[f64], batch: usize, actions: &[usize], targets: &[f64]) -> f64 {
        let out = net.forward_batch(x, batch).unwrap();
        let n_out = net.output_dim();
        let mut loss = 0.0;
        for s in 0..batch {
            let diff = out[s * n_out + actions[s]] - targets[s];
            loss += diff * diff / batch as f64;
        }
        loss
    }

    #[test]
    fn parameter_gradients_match_central_differences() {
        let h = 1e-5;
        for seed in 0..10 {
            let mut net = QNetwork::new(&[4, 6, 5, 3], 0.01, &mut rng(100 + seed));
            let mut r = rng(200 + seed);
            let batch = 3;
            let x: Vec<f64> = (0..batch * 4).map(|_| r.gen_range(-1.5..1.5)).collect();
            let actions: Vec<usize> = (0..batch).map(|_| r.gen_range(0..3)).collect();
            let targets: Vec<f64> = (0..batch).map(|_| r.gen_range(-1.0..1.0)).collect();
            let grads = net.backward_batch(&x, batch, &actions, &targets).unwrap();
            let mut max_rel: f64 = 0.0;
            for l in 0..net.layer_count() {
                for idx in 0..net.weights[l].len() {
                    let orig = net.weights[l][idx];
                    net.weights[l][idx] = orig + h;
                    let up = masked_loss(&net, &x, batch, &actions, &targets);
                    net.weights[l][idx] = orig - h;
                    let dn = masked_loss(&net, &x, batch, &actions, &targets);
                    net.weights[l][idx] = orig;
                    let fd = (up - dn) / (2.0 * h);
                    let a = grads.weights[l][idx];
                    max_rel = max_rel.max((a - fd).abs() / (a.abs() + fd.abs()).max(1e-8));
                }
                for idx in 0..net.biases[l].len() {
                    let orig = net.biases[l][idx];
                    net.biases[l][idx] = orig + h;
                    let up = masked_loss(&net, &x, batch, &actions, &targets);
                    net.biases[l][idx] = orig - h;
                    let dn = masked_loss(&net, &x, batch, &actions, &targets);
                    net.biases[l][idx] = orig;
                    let fd = (up - dn) / (2.0 * h);
                    let a = grads.biases[l][idx];
                    max_rel = max_rel.max((a - fd).abs() / (a.abs() + fd.abs()).max(1e-8));
                }
            }
            assert!(max_rel < 1e-4, "seed {seed}: max relative error {max_rel}");
        }
    }

    #[test]
    fn input_gradients_match_central_differences() {
        let h = 1e-5;
        for seed in 0..10 {
            let net = QNetwork::new(&[5, 6, 4], 0.01, &mut rng(300 + seed));
            let mut r = rng(400 + seed);
            let mut x: Vec<f64> = (0..5).map(|_| r.gen_range(-1.5..1.5)).collect();
            for action in 0..4 {
                let grad = net.input_gradient(&x, action).unwrap();
                for i in 0..5 {
                    let orig = x[i];
                    x[i] = orig + h;
                    let up = net.forward(&x).unwrap()[action];
                    x[i] = orig - h;
                    let dn = net.forward(&x).unwrap()[action];
                    x[i] = orig;
                    let fd = (up - dn) / (2.0 * h);
                    let rel = (grad[i] - fd).abs() / (grad[i].abs() + fd.abs()).max(1e-8);
                    assert!(rel < 1e-4, "seed {seed} action {action} feature {i}: {rel}");
                }
            }
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut net = QNetwork::zeros(&[2, 1], 0.01);
        let mut opt = AdamState::new(&net, 1e-3);
        let mut grads = Gradients::zeros_like(&net);
        grads.weights[0] = vec![1.0, 1.0];
        grads.biases[0] = vec![1.0];
        opt.apply(&mut net, &grads).unwrap();
        for &w in &net.weights[0] {
            assert_relative_eq!(w, -1e-3, max_relative = 1e-6);
        }
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut net = QNetwork::new(&[3, 4, 2], 0.01, &mut rng(5));
        let before = net.clone();
        let mut opt = AdamState::new(&net, 1e-3);
        let grads = Gradients::zeros_like(&net);
        opt.apply(&mut net, &grads).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut net = QNetwork::zeros(&[2, 1], 0.01);
        let mut opt = AdamState::new(&net, 1e-3);
        let mut grads = Gradients::zeros_like(&net);
        grads.weights[0][0] = f64::NAN;
        assert!(matches!(opt.apply(&mut net, &grads), Err(SimError::NonFinite(_))));
    }

    #[test]
    fn adam_runs_are_deterministic() {
        let make = || {
            let mut net = QNetwork::new(&[3, 8, 2], 0.01, &mut rng(6));
            let mut opt = AdamState::new(&net, 1e-3);
            let x = [0.1, -0.2, 0.3, 0.4, 0.5, -0.6];
            for _ in 0..50 {
                let g = net.backward_batch(&x, 2, &[0, 1], &[0.7, -0.3]).unwrap();
                opt.apply(&mut net, &g).unwrap();
            }
            net
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn supervised_loss_decreases_under_adam() {
        let mut net = QNetwork::new(&[4, 16, 16, 3], 0.01, &mut rng(7));
        let mut opt = AdamState::new(&net, 3e-3);
        let mut r = rng(8);
        let batch = 32;
        let x: Vec<f64> = (0..batch * 4).map(|_| r.gen_range(-1.0..1.0)).collect();
        let actions: Vec<usize> = (0..batch).map(|_| r.gen_range(0..3)).collect();
        let targets: Vec<f64> = (0..batch).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mut losses = Vec::new();
        for _ in 0..100 {
            let g = net.backward_batch(&x, batch, &actions, &targets).unwrap();
            losses.push(g.loss);
            opt.apply(&mut net, &g).unwrap();
        }
        assert!(losses[99] < losses[0] * 0.5, "loss {} -> {}", losses[0], losses[99]);
        let tail_max = losses[90..].iter().cloned().fold(0.0f64, f64::max);
        let head_min = losses[..10].iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(tail_max < head_min);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.qnet");
        let net = QNetwork::new(&[5, 30, 30, 30, 30, 3], 0.01, &mut rng(9));
        let meta = CheckpointMeta {
            features: Feature::ALL.to_vec(),
            actions: vec![0.0, 0.5, 1.0],
            stats: NormStats {
                ask_price: (0.53, 0.72),
                bid_volume: (6.4, 4.1),
                ask_volume: (6.2, 4.3),
            },
            init: "uniform-fan-in".into(),
        };
        save_weights(&net, &meta, &path).unwrap();
        let (loaded, loaded_meta) = load_weights(&path).unwrap();
        assert_eq!(net, loaded);
        assert_eq!(meta, loaded_meta);
        let x = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(net.forward(&x).unwrap(), loaded.forward(&x).unwrap());
    }

    #[test]
    fn checkpoint_rejects_inconsistent_feature_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.qnet");
        let net = QNetwork::new(&[5, 8, 3], 0.01, &mut rng(10));
        let meta = CheckpointMeta {
            features: vec![Feature::Time, Feature::Inventory, Feature::AskPrice],
            actions: vec![0.0, 0.5, 1.0],
            stats: NormStats::identity(),
            init: "uniform-fan-in".into(),
        };
        save_weights(&net, &meta, &path).unwrap();
        let err = load_weights(&path).unwrap_err();
        assert!(err.to_string().contains("does not match feature count"));
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.qnet");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(load_weights(&path).is_err());
    }
}
