//! Single-hidden-layer perceptron for binary classification.
//!
//! `p = sigmoid(w2 · relu(W1ᵀx + b1) + b2)`, trained on mean binary
//! cross-entropy plus an L2 penalty `(alpha / 2n)(‖W1‖² + ‖w2‖²)` with
//! minibatch Adam. Biases are not penalized. The ReLU derivative at exactly
//! zero is taken as zero.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::ingest::AntibioticDataset;
use crate::rng::{seeded, Rng};

#[derive(Debug, thiserror::Error)]
pub enum MlpError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("input has dimension {found}, model expects {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("training set is empty")]
    Empty,
    #[error("malformed model: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub l2_alpha: f64,
    /// `None` means `min(200, n)`.
    pub batch_size: Option<usize>,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: 100,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2_alpha: 1e-4,
            batch_size: None,
            max_epochs: 200,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        let problem = if self.hidden == 0 {
            Some("hidden must be positive")
        } else if !in_unit(self.learning_rate) {
            Some("learning_rate must be in (0, 1)")
        } else if !in_unit(self.beta1) || !in_unit(self.beta2) {
            Some("beta1 and beta2 must be in (0, 1)")
        } else if !(self.epsilon > 0.0) {
            Some("epsilon must be positive")
        } else if !(self.l2_alpha >= 0.0) {
            Some("l2_alpha must be non-negative")
        } else if self.batch_size == Some(0) {
            Some("batch_size must be positive")
        } else {
            None
        };
        problem.map_or(Ok(()), |p| Err(MlpError::Config(p.into())))
    }
}

/// Network weights. `w1` is row-major `dim × hidden`: row `i` holds the
/// outgoing weights of input `i`. The same layout doubles as the gradient
/// and Adam moment containers.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub dim: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpParams {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        MlpParams {
            dim,
            hidden,
            w1: vec![0.0; dim * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    fn slices(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, std::slice::from_ref(&self.b2)]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            std::slice::from_mut(&mut self.b2),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn weight_sq_norm(&self) -> f64 {
        self.w1.iter().chain(&self.w2).map(|w| w * w).sum()
    }

    /// Single-row forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<(f64, ForwardCache), MlpError> {
        self.check_dim(x.len())?;
        let batch = forward_batch(self, x, 1);
        let logit = batch.logits[0];
        let z1 = batch.z1;
        let a1 = z1.iter().map(|&z| relu(z)).collect();
        Ok((
            sigmoid(logit),
            ForwardCache {
                x: x.to_vec(),
                z1,
                a1,
                logit,
            },
        ))
    }

    fn check_dim(&self, found: usize) -> Result<(), MlpError> {
        if found == self.dim {
            Ok(())
        } else {
            Err(MlpError::DimMismatch {
                expected: self.dim,
                found,
            })
        }
    }
}

pub type MlpGradients = MlpParams;

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCache {
    pub x: Vec<f64>,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub logit: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(dim: usize, hidden: usize) -> Self {
        AdamState {
            m: MlpParams::zeros(dim, hidden),
            v: MlpParams::zeros(dim, hidden),
            t: 0,
        }
    }
}

/// `max(z, 0)` with +0.0 for every non-positive input, computed with a bit
/// mask so it never compiles to a data-dependent branch.
#[inline]
fn relu(z: f64) -> f64 {
    f64::from_bits(z.to_bits() & active_mask(z))
}

/// All ones when `z > 0`, else zero.
#[inline]
fn active_mask(z: f64) -> u64 {
    0u64.wrapping_sub(u64::from(z > 0.0))
}

/// Logistic function, clamped so the result stays strictly inside (0, 1).
pub fn sigmoid(logit: f64) -> f64 {
    let p = if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Glorot-uniform weights, zero biases, zeroed Adam state.
pub fn init(dim: usize, config: &MlpConfig) -> (MlpParams, AdamState) {
    init_with(dim, config.hidden, &mut seeded(config.seed))
}

fn init_with(dim: usize, hidden: usize, rng: &mut Rng) -> (MlpParams, AdamState) {
    let mut params = MlpParams::zeros(dim, hidden);
    let bound1 = (6.0 / (dim + hidden) as f64).sqrt();
    for w in &mut params.w1 {
        *w = rng.random_range(-bound1..bound1);
    }
    let bound2 = (6.0 / (hidden + 1) as f64).sqrt();
    for w in &mut params.w2 {
        *w = rng.random_range(-bound2..bound2);
    }
    (params, AdamState::new(dim, hidden))
}

/// Per-batch buffers, reused across minibatches.
#[derive(Default)]
struct BatchForward {
    /// `rows × hidden` pre-activations.
    z1: Vec<f64>,
    logits: Vec<f64>,
    /// `rows × hidden` gradient of the loss with respect to `z1`.
    dz1: Vec<f64>,
    /// The batch inputs transposed, `dim × rows`.
    xt: Vec<f64>,
}

/// `c += a · b` for row-major `a` (`m × k`), `b` (`k × n`) and `c` (`m × n`).
/// Every output sums over `k` in ascending order whatever the blocking, and
/// products and sums are never fused, so all code paths agree bit for bit.
fn gemm_acc(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: AVX-512F support was just checked.
        unsafe { gemm_acc_avx512(a, m, k, b, n, c) };
        return;
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: AVX2 support was just checked.
        unsafe { gemm_acc_avx2(a, m, k, b, n, c) };
        return;
    }
    gemm_blocked::<4, 4>(a, m, k, b, n, c);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_acc_avx2(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    gemm_blocked::<4, 8>(a, m, k, b, n, c);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn gemm_acc_avx512(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    gemm_blocked::<8, 8>(a, m, k, b, n, c);
}

#[inline(always)]
fn gemm_blocked<const RB: usize, const JB: usize>(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    let m_full = m - m % RB;
    let n_full = n - n % JB;
    let n_quad = n_full + (n - n_full) / 4 * 4;
    for r0 in (0..m_full).step_by(RB) {
        for j0 in (0..n_full).step_by(JB) {
            gemm_block::<RB, JB>(a, r0, k, b, n, j0, c);
        }
        for j0 in (n_full..n_quad).step_by(4) {
            gemm_block::<RB, 4>(a, r0, k, b, n, j0, c);
        }
        for r in r0..r0 + RB {
            for j in n_quad..n {
                gemm_block::<1, 1>(a, r, k, b, n, j, c);
            }
        }
    }
    for r in m_full..m {
        for j0 in (0..n_full).step_by(JB) {
            gemm_block::<1, JB>(a, r, k, b, n, j0, c);
        }
        for j in n_full..n {
            gemm_block::<1, 1>(a, r, k, b, n, j, c);
        }
    }
}

#[inline(always)]
fn gemm_block<const R: usize, const J: usize>(
    a: &[f64],
    r0: usize,
    k: usize,
    b: &[f64],
    n: usize,
    j0: usize,
    c: &mut [f64],
) {
    let a_rows: [&[f64]; R] = std::array::from_fn(|rr| &a[(r0 + rr) * k..(r0 + rr + 1) * k]);
    let mut acc = [[0.0; J]; R];
    for (rr, row) in acc.iter_mut().enumerate() {
        row.copy_from_slice(&c[(r0 + rr) * n + j0..(r0 + rr) * n + j0 + J]);
    }
    for (kk, b_row) in b.chunks_exact(n).take(k).enumerate() {
        let bk: &[f64; J] = b_row[j0..j0 + J].try_into().expect("block width");
        for (row, a_row) in acc.iter_mut().zip(&a_rows) {
            let av = a_row[kk];
            for (cj, &bj) in row.iter_mut().zip(bk) {
                *cj += av * bj;
            }
        }
    }
    for (rr, row) in acc.iter().enumerate() {
        c[(r0 + rr) * n + j0..(r0 + rr) * n + j0 + J].copy_from_slice(row);
    }
}

fn forward_batch(params: &MlpParams, x: &[f64], rows: usize) -> BatchForward {
    let mut fwd = BatchForward::default();
    forward_into(params, x, rows, &mut fwd);
    fwd
}

fn forward_into(params: &MlpParams, x: &[f64], rows: usize, fwd: &mut BatchForward) {
    let (dim, h) = (params.dim, params.hidden);
    fwd.z1.clear();
    for _ in 0..rows {
        fwd.z1.extend_from_slice(&params.b1);
    }
    gemm_acc(x, rows, dim, &params.w1, h, &mut fwd.z1);
    fwd.logits.clear();
    fwd.logits.extend(fwd.z1.chunks_exact(h).map(|z| {
        let mut logit = params.b2;
        for (&zj, &w2j) in z.iter().zip(&params.w2) {
            logit += relu(zj) * w2j;
        }
        logit
    }));
}

fn backward_batch(
    params: &MlpParams,
    x: &[f64],
    fwd: &mut BatchForward,
    labels: &[f64],
    l2_alpha: f64,
    grads: &mut MlpParams,
) {
    let (dim, h) = (params.dim, params.hidden);
    let n = labels.len() as f64;
    grads.b2 = 0.0;
    let reg = l2_alpha / n;
    for (g, w) in grads.w1.iter_mut().zip(&params.w1) {
        *g = reg * w;
    }
    for (g, w) in grads.w2.iter_mut().zip(&params.w2) {
        *g = reg * w;
    }
    grads.b1.iter_mut().for_each(|g| *g = 0.0);

    let rows = labels.len();
    fwd.dz1.clear();
    fwd.dz1.resize(rows * h, 0.0);
    let dz1 = &mut fwd.dz1;
    for (r, &y) in labels.iter().enumerate() {
        let dlogit = (sigmoid(fwd.logits[r]) - y) / n;
        grads.b2 += dlogit;
        let z = &fwd.z1[r * h..(r + 1) * h];
        let dz = &mut dz1[r * h..(r + 1) * h];
        // Bit masks rather than branches: the ReLU pattern is effectively
        // random, so branches mispredict about half the time.
        for (((gw2, &w2), &zj), dzj) in grads.w2.iter_mut().zip(&params.w2).zip(z).zip(dz.iter_mut()) {
            *gw2 += dlogit * relu(zj);
            *dzj = f64::from_bits((dlogit * w2).to_bits() & active_mask(zj));
        }
        for (gb, &d) in grads.b1.iter_mut().zip(dz.iter()) {
            *gb += d;
        }
    }
    // dW1 = Xᵀ dZ1, accumulated over rows in order.
    fwd.xt.resize(dim * rows, 0.0);
    for (r, xr) in x.chunks_exact(dim).enumerate() {
        for (i, &v) in xr.iter().enumerate() {
            fwd.xt[i * rows + r] = v;
        }
    }
    gemm_acc(&fwd.xt[..dim * rows], dim, rows, &fwd.dz1, h, &mut grads.w1);
}

/// Mean logistic loss over the batch, computed from logits, plus the L2
/// penalty. `labels` may be soft targets in [0, 1].
pub fn loss(logits: &[f64], labels: &[f64], l2_alpha: f64, params: &MlpParams) -> f64 {
    let n = logits.len() as f64;
    let data: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&l, &y)| (softplus(l) - y * l) / n)
        .sum();
    data + 0.5 * l2_alpha * params.weight_sq_norm() / n
}

/// Exact gradients of [`loss`] for the batch described by `caches`.
pub fn backward(
    params: &MlpParams,
    caches: &[ForwardCache],
    labels: &[f64],
    l2_alpha: f64,
) -> MlpGradients {
    let x: Vec<f64> = caches.iter().flat_map(|c| c.x.iter().copied()).collect();
    let mut fwd = BatchForward {
        z1: caches.iter().flat_map(|c| c.z1.iter().copied()).collect(),
        logits: caches.iter().map(|c| c.logit).collect(),
        ..BatchForward::default()
    };
    let mut grads = MlpParams::zeros(params.dim, params.hidden);
    backward_batch(params, &x, &mut fwd, labels, l2_alpha, &mut grads);
    grads
}

/// One Adam step with bias correction.
pub fn adam_update(params: &mut MlpParams, grads: &MlpGradients, state: &mut AdamState, config: &MlpConfig) {
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    let eps = config.epsilon;
    for (((p, g), m), v) in params
        .slices_mut()
        .into_iter()
        .zip(grads.slices())
        .zip(state.m.slices_mut())
        .zip(state.v.slices_mut())
    {
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub params: MlpParams,
    pub config: MlpConfig,
}

/// Trains on a row-major `x` (`labels.len() × dim`) with 0/1 labels.
pub fn train_matrix(x: &[f64], dim: usize, labels: &[u8], config: &MlpConfig) -> Result<MlpModel, MlpError> {
    config.validate()?;
    let n = labels.len();
    if n == 0 {
        return Err(MlpError::Empty);
    }
    if x.len() != n * dim {
        return Err(MlpError::DimMismatch {
            expected: n * dim,
            found: x.len(),
        });
    }
    let mut rng = seeded(config.seed);
    let (mut params, mut state) = init_with(dim, config.hidden, &mut rng);
    let mut grads = MlpParams::zeros(dim, config.hidden);
    let batch = config.batch_size.unwrap_or(200).min(n);

    let mut order: Vec<usize> = (0..n).collect();
    let mut xb = Vec::with_capacity(batch * dim);
    let mut yb = Vec::with_capacity(batch);
    let mut fwd = BatchForward::default();
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(batch).enumerate() {
            xb.clear();
            yb.clear();
            for &r in chunk {
                xb.extend_from_slice(&x[r * dim..(r + 1) * dim]);
                yb.push(f64::from(labels[r]));
            }
            forward_into(&params, &xb, chunk.len(), &mut fwd);
            let l = loss(&fwd.logits, &yb, config.l2_alpha, &params);
            if !l.is_finite() {
                return Err(MlpError::Divergence { epoch, batch: b });
            }
            backward_batch(&params, &xb, &mut fwd, &yb, config.l2_alpha, &mut grads);
            adam_update(&mut params, &grads, &mut state, config);
        }
    }
    if !params.is_finite() {
        return Err(MlpError::Divergence {
            epoch: config.max_epochs,
            batch: 0,
        });
    }
    Ok(MlpModel {
        params,
        config: config.clone(),
    })
}

pub fn train(dataset: &AntibioticDataset, config: &MlpConfig) -> Result<MlpModel, MlpError> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    train_matrix(&dataset.feature_matrix(&all), dataset.dim(), &dataset.labels(), config)
}

impl MlpModel {
    pub fn dim(&self) -> usize {
        self.params.dim
    }

    /// Probabilities for a row-major matrix.
    pub fn predict_matrix(&self, x: &[f64]) -> Result<Vec<f64>, MlpError> {
        let dim = self.params.dim;
        if x.len() % dim != 0 {
            return Err(MlpError::DimMismatch {
                expected: dim,
                found: x.len() % dim,
            });
        }
        let fwd = forward_batch(&self.params, x, x.len() / dim);
        Ok(fwd.logits.into_iter().map(sigmoid).collect())
    }

    pub fn predict_proba(&self, rows: &[crate::EmbeddingVector]) -> Result<Vec<f64>, MlpError> {
        rows.iter()
            .map(|r| {
                let x: Vec<f64> = r.as_slice().iter().map(|&v| f64::from(v)).collect();
                self.params.forward(&x).map(|(p, _)| p)
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&MlpModelJson::from(self)).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, MlpError> {
        let raw: MlpModelJson = serde_json::from_str(s).map_err(|e| MlpError::Malformed(e.to_string()))?;
        raw.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct MlpModelJson {
    dim: usize,
    hidden: usize,
    config: MlpConfig,
    /// base64 of little-endian f64 values.
    w1: String,
    b1: String,
    w2: String,
    b2: String,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode(s: &str, expected: usize, name: &str) -> Result<Vec<f64>, MlpError> {
    let bytes = B64.decode(s).map_err(|e| MlpError::Malformed(format!("{name}: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(MlpError::Malformed(format!(
            "{name}: expected {expected} values, found {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

impl From<&MlpModel> for MlpModelJson {
    fn from(m: &MlpModel) -> Self {
        let p = &m.params;
        MlpModelJson {
            dim: p.dim,
            hidden: p.hidden,
            config: m.config.clone(),
            w1: encode(&p.w1),
            b1: encode(&p.b1),
            w2: encode(&p.w2),
            b2: encode(&[p.b2]),
        }
    }
}

impl TryFrom<MlpModelJson> for MlpModel {
    type Error = MlpError;

    fn try_from(raw: MlpModelJson) -> Result<Self, Self::Error> {
        let (dim, h) = (raw.dim, raw.hidden);
        let params = MlpParams {
            dim,
            hidden: h,
            w1: decode(&raw.w1, dim * h, "w1")?,
            b1: decode(&raw.b1, h, "b1")?,
            w2: decode(&raw.w2, h, "w2")?,
            b2: decode(&raw.b2, 1, "b2")?[0],
        };
        Ok(MlpModel {
            params,
            config: raw.config,
        })
    }
}
