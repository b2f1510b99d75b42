//! Pilot-supervised online adaptation of the neural demodulator.
//!
//! Each OFDM symbol contributes one heavy-ball SGD step on its pilot loss.
//! A burst of Adam steps over pilots pooled from recent symbols can be
//! triggered externally, after which the heavy-ball velocity is reset.

mod net;

use std::collections::VecDeque;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::OfdmSymbol;
use crate::error::{Error, Result};

pub use net::{log_sum_exp, softmax, Arch, DemodNet, TrunkCache, N_CLASSES, U_FEATURES};

/// Default number of trajectory snapshots kept.
pub const TRAJECTORY_LEN: usize = 200;
/// Default validation window in symbols.
pub const VAL_WINDOW: usize = 10;
const LOSS_HISTORY_LEN: usize = 4096;

/// Received symbol plus the labelled subcarriers used for supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBatch {
    pub y: Vec<Complex64>,
    /// `(subcarrier, 4-bit label)` pairs.
    pub targets: Vec<(usize, u8)>,
}

impl PilotBatch {
    /// The pilot positions of a symbol.
    pub fn from_symbol(sym: &OfdmSymbol) -> Self {
        Self {
            y: sym.y.clone(),
            targets: sym.pilot_indices().map(|k| (k, sym.bits[k])).collect(),
        }
    }

    /// Every subcarrier labelled; used only for offline training where the
    /// transmitted data are known.
    pub fn fully_labelled(sym: &OfdmSymbol) -> Self {
        Self {
            y: sym.y.clone(),
            targets: (0..sym.n()).map(|k| (k, sym.bits[k])).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Mean cross-entropy over the batch's labelled positions.
pub fn pilot_loss(net: &DemodNet, theta: &[f64], batch: &PilotBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty pilot batch".into()));
    }
    Ok(net.nll_sum(theta, &batch.y, &batch.targets)? / batch.len() as f64)
}

/// Mean loss over the union of several batches and its gradient.
pub fn pooled_loss_grad(net: &DemodNet, theta: &[f64], batches: &[&PilotBatch]) -> Result<(f64, Vec<f64>)> {
    let total: usize = batches.iter().map(|b| b.len()).sum();
    if total == 0 {
        return Err(Error::InvalidInput("no labelled positions".into()));
    }
    let w = 1.0 / total as f64;
    let mut grad = vec![0.0; theta.len()];
    let mut loss = 0.0;
    for b in batches {
        loss += net.nll_grad(theta, &b.y, &b.targets, w, &mut grad)?;
    }
    Ok((loss * w, grad))
}

fn l2(v: &[f64]) -> f64 {
    crate::manifold::dot(v, v).sqrt()
}

/// Learning rate with cosine decay over the calibration horizon, then held at
/// its floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub eta0: f64,
    pub floor: f64,
    pub horizon: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            eta0: 1e-3,
            floor: 1e-4,
            horizon: 1000,
        }
    }
}

impl LrSchedule {
    pub fn eta(&self, step: u64) -> f64 {
        if step >= self.horizon || self.horizon == 0 {
            return self.floor;
        }
        let frac = step as f64 / self.horizon as f64;
        self.floor + 0.5 * (self.eta0 - self.floor) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// Parameters, heavy-ball velocity and the recent history the monitor reads.
#[derive(Debug, Clone)]
pub struct ReceiverState {
    pub net: DemodNet,
    pub theta: Vec<f64>,
    /// `theta_t - theta_{t-1}`.
    pub momentum: Vec<f64>,
    pub trajectory: VecDeque<Arc<Vec<f64>>>,
    pub trajectory_len: usize,
    pub step_count: u64,
    pub loss_history: VecDeque<f64>,
    pub last_grad_norm: f64,
    /// When set, steps record losses and gradient norms but leave theta fixed.
    pub frozen: bool,
}

/// What one adaptation step observed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub loss: f64,
    pub grad_norm: f64,
    pub eta: f64,
}

impl ReceiverState {
    pub fn new(net: DemodNet, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != net.n_params() {
            return Err(Error::InvalidInput(format!(
                "theta has {} entries, network needs {}",
                theta.len(),
                net.n_params()
            )));
        }
        let d = theta.len();
        Ok(Self {
            net,
            theta,
            momentum: vec![0.0; d],
            trajectory: VecDeque::with_capacity(TRAJECTORY_LEN),
            trajectory_len: TRAJECTORY_LEN,
            step_count: 0,
            loss_history: VecDeque::with_capacity(LOSS_HISTORY_LEN),
            last_grad_norm: 0.0,
            frozen: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    fn record(&mut self, loss: f64, grad_norm: f64) {
        if self.loss_history.len() == LOSS_HISTORY_LEN {
            self.loss_history.pop_front();
        }
        self.loss_history.push_back(loss);
        self.last_grad_norm = grad_norm;
        if self.trajectory.len() == self.trajectory_len {
            self.trajectory.pop_front();
        }
        self.trajectory.push_back(Arc::new(self.theta.clone()));
        self.step_count += 1;
    }

    /// Snapshot of the trajectory ring, oldest first.
    pub fn trajectory_snapshot(&self) -> Vec<Arc<Vec<f64>>> {
        self.trajectory.iter().cloned().collect()
    }
}

/// Applies `theta <- theta - eta g + mu (theta - theta_prev)` for a given
/// gradient, returning the gradient norm.
pub fn heavy_ball_update(theta: &mut [f64], momentum: &mut [f64], grad: &[f64], eta: f64, mu: f64) {
    for ((t, v), g) in theta.iter_mut().zip(momentum.iter_mut()).zip(grad) {
        *v = mu * *v - eta * g;
        *t += *v;
    }
}

fn check_step(eta: f64, mu: f64) -> Result<()> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidInput(format!("learning rate must be positive, got {eta}")));
    }
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::InvalidInput(format!("momentum must be in [0, 1), got {mu}")));
    }
    Ok(())
}

/// One heavy-ball step on a symbol's pilots.
pub fn sgd_step(state: &mut ReceiverState, batch: &PilotBatch, eta: f64, mu: f64) -> Result<StepInfo> {
    sgd_step_pooled(state, &[batch], eta, mu)
}

/// One heavy-ball step on the mean pilot loss of several symbols.
pub fn sgd_step_pooled(state: &mut ReceiverState, batches: &[&PilotBatch], eta: f64, mu: f64) -> Result<StepInfo> {
    check_step(eta, mu)?;
    let (loss, grad) = pooled_loss_grad(&state.net, &state.theta, batches)?;
    let grad_norm = l2(&grad);
    if !grad_norm.is_finite() || !loss.is_finite() {
        return Err(Error::Diverged(format!(
            "non-finite gradient at step {}",
            state.step_count
        )));
    }
    if !state.frozen {
        heavy_ball_update(&mut state.theta, &mut state.momentum, &grad, eta, mu);
    }
    state.record(loss, grad_norm);
    Ok(StepInfo { loss, grad_norm, eta })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 128,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstReport {
    pub steps_run: usize,
    pub pairs_available: usize,
    /// Set when the pool was empty and nothing ran.
    pub empty_pool: bool,
    pub loss_before: f64,
    pub loss_after: f64,
}

fn pool_loss(net: &DemodNet, theta: &[f64], pool: &[PilotBatch]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for b in pool {
        if b.is_empty() {
            continue;
        }
        total += net.nll_sum(theta, &b.y, &b.targets)?;
        count += b.len();
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Adam on `(symbol, pilot)` pairs drawn with replacement from `pool`.
/// Resets the heavy-ball velocity afterwards. An empty pool is a no-op
/// flagged in the report.
pub fn adam_burst<R: Rng + ?Sized>(
    state: &mut ReceiverState,
    pool: &[PilotBatch],
    cfg: &AdamConfig,
    rng: &mut R,
) -> Result<BurstReport> {
    let pairs: Vec<(usize, usize)> = pool
        .iter()
        .enumerate()
        .flat_map(|(b, batch)| (0..batch.len()).map(move |i| (b, i)))
        .collect();
    if pairs.is_empty() || cfg.steps == 0 {
        return Ok(BurstReport {
            steps_run: 0,
            pairs_available: pairs.len(),
            empty_pool: pairs.is_empty(),
            loss_before: f64::NAN,
            loss_after: f64::NAN,
        });
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidInput("burst batch size must be >= 1".into()));
    }
    let loss_before = pool_loss(&state.net, &state.theta, pool)?;
    let d = state.dim();
    let mut m = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut groups: Vec<Vec<(usize, u8)>> = vec![Vec::new(); pool.len()];
    let w = 1.0 / cfg.batch_size as f64;
    for step in 1..=cfg.steps {
        groups.iter_mut().for_each(Vec::clear);
        for _ in 0..cfg.batch_size {
            let (b, i) = pairs[rng.random_range(0..pairs.len())];
            groups[b].push(pool[b].targets[i]);
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (b, targets) in groups.iter().enumerate() {
            if !targets.is_empty() {
                state
                    .net
                    .nll_grad(&state.theta, &pool[b].y, targets, w, &mut grad)?;
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged(format!("non-finite gradient in burst step {step}")));
        }
        let bc1 = 1.0 - cfg.beta1.powi(step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(step as i32);
        for i in 0..d {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            state.theta[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    state.momentum.iter_mut().for_each(|x| *x = 0.0);
    let loss_after = pool_loss(&state.net, &state.theta, pool)?;
    Ok(BurstReport {
        steps_run: cfg.steps,
        pairs_available: pairs.len(),
        empty_pool: false,
        loss_before,
        loss_after,
    })
}

fn argmax(row: &[f64; N_CLASSES]) -> u8 {
    let mut best = 0;
    for c in 1..N_CLASSES {
        if row[c] > row[best] {
            best = c;
        }
    }
    best as u8
}

/// Hard decisions per subcarrier.
pub fn decisions(rows: &[[f64; N_CLASSES]]) -> Vec<u8> {
    rows.iter().map(argmax).collect()
}

/// Bit error rate over data subcarriers. `rows` may be probabilities or
/// logits; only the argmax matters.
pub fn ber(rows: &[[f64; N_CLASSES]], truth_bits: &[u8], pilot_mask: &[bool]) -> Result<f64> {
    if rows.len() != truth_bits.len() || rows.len() != pilot_mask.len() {
        return Err(Error::InvalidInput(format!(
            "shape mismatch: {} rows, {} labels, {} mask entries",
            rows.len(),
            truth_bits.len(),
            pilot_mask.len()
        )));
    }
    let mut errors = 0u32;
    let mut bits = 0u32;
    for ((row, &truth), &pilot) in rows.iter().zip(truth_bits).zip(pilot_mask) {
        if pilot {
            continue;
        }
        errors += (argmax(row) ^ truth).count_ones();
        bits += 4;
    }
    if bits == 0 {
        return Err(Error::InvalidInput("no data subcarriers".into()));
    }
    Ok(errors as f64 / bits as f64)
}

/// BER of the receiver's current parameters on one symbol.
pub fn symbol_ber(state: &ReceiverState, sym: &OfdmSymbol) -> Result<f64> {
    let logits = state.net.logits(&state.theta, &sym.y)?;
    ber(&logits, &sym.bits, &sym.pilot_mask)
}

/// Mean of the last `min(w, available)` per-symbol losses.
pub fn windowed_val_loss(state: &ReceiverState, w: usize) -> Result<f64> {
    window_mean(state.loss_history.iter().copied(), state.loss_history.len(), w)
}

pub(crate) fn window_mean<I: DoubleEndedIterator<Item = f64>>(it: I, len: usize, w: usize) -> Result<f64> {
    if len == 0 {
        return Err(Error::InsufficientHistory { have: 0, need: 1 });
    }
    let take = w.max(1).min(len);
    Ok(it.rev().take(take).sum::<f64>() / take as f64)
}

/// Versioned parameter container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub d: usize,
    pub net: DemodNet,
    pub theta: Vec<f64>,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn from_state(state: &ReceiverState) -> Self {
        Self {
            version: Self::VERSION,
            d: state.dim(),
            net: state.net.clone(),
            theta: state.theta.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s).map_err(|e| Error::InvalidInput(e.to_string()))?;
        if c.version != Self::VERSION {
            return Err(Error::InvalidInput(format!("unsupported checkpoint version {}", c.version)));
        }
        if c.d != c.theta.len() || c.d != c.net.n_params() {
            return Err(Error::InvalidInput("checkpoint dimension mismatch".into()));
        }
        Ok(c)
    }

    pub fn into_state(self) -> Result<ReceiverState> {
        ReceiverState::new(self.net, self.theta)
    }
}
