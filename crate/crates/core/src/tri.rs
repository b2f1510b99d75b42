//! The Topological Resilience Index.
//!
//! Three normalised components are combined with convex weights:
//!
//! - `phi_ls`: H0 persistence exponent of the local loss landscape,
//!   `exp(-(beta0 - beta0(0)) / beta0_ref)`.
//! - `phi_pm`: H1 persistence exponent of the PCA-projected parameter
//!   trajectory, `(1 + beta1_ref) / (1 + beta1)`.
//! - `phi_cm`: spectral gap over curvature of the recent CIR cloud,
//!   `gap / (1 + |Curv|_F)` divided by its calibration value, then smoothed
//!   by a constant-gain Kalman filter.
//!
//! Every component is clamped to `[1e-9, 1]`.

use std::io::Write;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;

use nalgebra::DMatrix;
use rand::rngs::SmallRng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::estimate_exponent;
use crate::manifold::{self, gaussian_kernel, knn_graph, ollivier_ricci, spectral_gap};
use crate::persistence::{lifetimes, rips_persistence, sublevel_h0, PointCloud};
use crate::receiver::{DemodNet, PilotBatch};

pub const PHI_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriWeights {
    pub ls: f64,
    pub pm: f64,
    pub cm: f64,
}

impl Default for TriWeights {
    fn default() -> Self {
        Self {
            ls: 0.45,
            pm: 0.35,
            cm: 0.20,
        }
    }
}

impl TriWeights {
    pub fn new(ls: f64, pm: f64, cm: f64) -> Result<Self> {
        let w = Self { ls, pm, cm };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.ls, self.pm, self.cm];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) || ((all.iter().sum::<f64>()) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "weights must be non-negative and sum to 1, got {all:?}"
            )));
        }
        Ok(())
    }

    pub fn combine(&self, phi_ls: f64, phi_pm: f64, phi_cm: f64) -> f64 {
        self.ls * phi_ls + self.pm * phi_pm + self.cm * phi_cm
    }
}

/// Calibration constants, all strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriReferences {
    pub beta0_ref: f64,
    pub beta1_ref: f64,
    pub beta0_at_0: f64,
    pub phi_cm_baseline: f64,
    pub sigma_g: f64,
    pub val_loss_ref: f64,
    pub sigma_h: f64,
}

impl TriReferences {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("beta0_ref", self.beta0_ref),
            ("beta0_at_0", self.beta0_at_0),
            ("phi_cm_baseline", self.phi_cm_baseline),
            ("sigma_g", self.sigma_g),
            ("val_loss_ref", self.val_loss_ref),
            ("sigma_h", self.sigma_h),
        ];
        for (name, v) in named {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::CalibrationInvalid(format!("{name} = {v} is not strictly positive")));
            }
        }
        if !(self.beta1_ref >= 0.0) || !self.beta1_ref.is_finite() {
            return Err(Error::CalibrationInvalid(format!("beta1_ref = {} is negative", self.beta1_ref)));
        }
        Ok(())
    }
}

/// Tunable constants of the monitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub n_samples: usize,
    /// Landscape radius as a fraction of the RMS parameter magnitude.
    pub radius_factor: f64,
    pub pca_dim: usize,
    pub cir_window: usize,
    pub knn_k: usize,
    pub kalman_gain: f64,
    /// Kernel bandwidth as a multiple of `sigma_h`.
    pub gamma_factor: f64,
    pub weights: TriWeights,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            radius_factor: 0.01,
            pca_dim: 10,
            cir_window: 100,
            knn_k: 5,
            kalman_gain: 0.3,
            gamma_factor: 0.5,
            weights: TriWeights::default(),
        }
    }
}

/// Which components fell back to their previous value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackFlags {
    pub ls: bool,
    pub pm: bool,
    pub cm: bool,
}

impl FallbackFlags {
    pub fn any(&self) -> bool {
        self.ls || self.pm || self.cm
    }

    /// `ls|pm|cm` style label, empty when no fallback happened.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.ls {
            parts.push("ls");
        }
        if self.pm {
            parts.push("pm");
        }
        if self.cm {
            parts.push("cm");
        }
        parts.join("|")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriSample {
    pub t: u64,
    pub phi_ls: f64,
    pub phi_pm: f64,
    pub phi_cm: f64,
    pub phi_cm_smoothed: f64,
    pub tri: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub gap: f64,
    pub curv_norm: f64,
    pub fallback: FallbackFlags,
}

fn clamp_phi(v: f64) -> f64 {
    if v.is_nan() {
        PHI_FLOOR
    } else {
        v.clamp(PHI_FLOOR, 1.0)
    }
}

pub fn phi_ls(beta0_t: f64, refs: &TriReferences) -> f64 {
    clamp_phi((-(beta0_t - refs.beta0_at_0) / refs.beta0_ref).exp())
}

pub fn phi_pm(beta1_t: f64, refs: &TriReferences) -> f64 {
    clamp_phi((1.0 + refs.beta1_ref) / (1.0 + beta1_t))
}

/// Un-normalised channel-manifold score `gap / (1 + |Curv|_F)`.
pub fn cm_score(gap: f64, curv_norm: f64) -> f64 {
    gap / (1.0 + curv_norm)
}

pub fn phi_cm(gap_t: f64, curv_norm_t: f64, refs: &TriReferences) -> Result<f64> {
    if !(refs.phi_cm_baseline > 0.0) {
        return Err(Error::CalibrationInvalid(format!(
            "channel-manifold baseline {}",
            refs.phi_cm_baseline
        )));
    }
    Ok(clamp_phi(cm_score(gap_t, curv_norm_t) / refs.phi_cm_baseline))
}

pub fn kalman_smooth(prev: f64, observation: f64, gain: f64) -> f64 {
    prev + gain * (observation - prev)
}

/// `n_s` pairs `(|delta|, loss(theta + delta))` with `delta ~ N(0, r^2 I)`.
pub fn sample_landscape<F, R>(theta: &[f64], r: f64, n_s: usize, mut loss: F, rng: &mut R) -> Result<PointCloud>
where
    F: FnMut(&[f64]) -> Result<f64>,
    R: rand::Rng + ?Sized,
{
    if n_s < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {n_s}")));
    }
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidInput(format!("radius must be >= 0, got {r}")));
    }
    let mut probe = vec![0.0; theta.len()];
    let mut data = Vec::with_capacity(2 * n_s);
    for _ in 0..n_s {
        let mut sq = 0.0;
        for (p, t) in probe.iter_mut().zip(theta) {
            let z: f64 = StandardNormal.sample(rng);
            let d = r * z;
            sq += d * d;
            *p = t + d;
        }
        data.push(sq.sqrt());
        data.push(loss(&probe)?);
    }
    PointCloud::from_flat(2, data)
}

pub fn sample_loss_landscape<R: rand::Rng + ?Sized>(
    net: &DemodNet,
    theta: &[f64],
    r: f64,
    n_s: usize,
    batch: &PilotBatch,
    rng: &mut R,
) -> Result<PointCloud> {
    let inv = 1.0 / batch.len().max(1) as f64;
    sample_landscape(theta, r, n_s, |p| Ok(net.nll_sum(p, &batch.y, &batch.targets)? * inv), rng)
}

/// Default landscape radius `factor * |theta| / sqrt(d)`.
pub fn landscape_radius(theta: &[f64], factor: f64) -> f64 {
    factor * manifold::dot(theta, theta).sqrt() / (theta.len().max(1) as f64).sqrt()
}

/// Everything one evaluation reads. Snapshots are immutable and shared.
#[derive(Debug, Clone)]
pub struct MonitorSnapshot {
    pub t: u64,
    pub theta: Arc<Vec<f64>>,
    pub batch: PilotBatch,
    /// Recent CIRs in `R^{2L}`, oldest first.
    pub cir_window: Vec<Vec<f64>>,
    pub trajectory: Vec<Arc<Vec<f64>>>,
    /// Seed for the landscape draws, so results do not depend on scheduling.
    pub seed: u64,
}

/// Landscape exponent `beta0`.
pub fn landscape_beta(net: &DemodNet, snap: &MonitorSnapshot, cfg: &MonitorConfig, fallback: Option<f64>) -> Result<f64> {
    // The perturbations dominate the cost of an evaluation, so a fast
    // generator is used here; it is still seeded per snapshot.
    let mut rng = SmallRng::seed_from_u64(snap.seed);
    let r = landscape_radius(&snap.theta, cfg.radius_factor);
    let cloud = sample_loss_landscape(net, &snap.theta, r, cfg.n_samples, &snap.batch, &mut rng)?;
    let samples: Vec<(f64, f64)> = cloud.points().map(|p| (p[0], p[1])).collect();
    let diagram = sublevel_h0(&samples)?;
    exponent_or_fallback(&lifetimes(&diagram), fallback)
}

fn exponent_or_fallback(l: &crate::persistence::Lifetimes, fallback: Option<f64>) -> Result<f64> {
    estimate_exponent(l, fallback).map(|e| e.beta)
}

/// H1 exponent `beta1` of a PCA-projected trajectory.
pub fn trajectory_beta(projected: &PointCloud, fallback: Option<f64>) -> Result<f64> {
    let radius = projected.diameter();
    if !(radius > 0.0) {
        return Err(Error::DegenerateCloud("trajectory collapsed to a point".into()));
    }
    let dgms = rips_persistence(projected, 1, radius)?;
    exponent_or_fallback(&lifetimes(&dgms[1]), fallback)
}

/// Raw `(beta0, beta1)` of a snapshot without references, as used while
/// calibrating. `prev` supplies the sparse-diagram fallbacks.
pub fn snapshot_betas(
    net: &DemodNet,
    snap: &MonitorSnapshot,
    cfg: &MonitorConfig,
    prev: (Option<f64>, Option<f64>),
) -> (Result<f64>, Result<f64>) {
    let b0 = landscape_beta(net, snap, cfg, prev.0);
    let b1 = manifold::pca_project(&as_slices(&snap.trajectory), cfg.pca_dim)
        .and_then(|c| trajectory_beta(&c, prev.1));
    (b0, b1)
}

/// Spectral gap and curvature norm of a CIR window.
pub fn manifold_terms(cir_window: &[Vec<f64>], gamma: f64, k: usize) -> Result<(f64, f64)> {
    let cloud = PointCloud::new(cir_window)?;
    let kernel = gaussian_kernel(&cloud, gamma)?;
    let gap = spectral_gap(&kernel);
    let graph = knn_graph(&cloud, k)?;
    let curv = ollivier_ricci(&graph, &cloud)?;
    Ok((gap, curv.frobenius_norm()))
}

/// Gram matrix of trajectory snapshots about a fixed anchor, extended
/// incrementally as the window slides. Snapshots are identified by `Arc`
/// pointer, so only newly appended snapshots cost inner products.
#[derive(Debug, Clone, Default)]
pub struct GramCache {
    anchor: Option<Arc<Vec<f64>>>,
    items: Vec<Arc<Vec<f64>>>,
    diffs: Vec<Vec<f64>>,
    gram: Vec<Vec<f64>>,
}

impl GramCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn diff(&self, v: &[f64]) -> Vec<f64> {
        let a = self.anchor.as_ref().expect("anchor set");
        v.iter().zip(a.iter()).map(|(x, y)| x - y).collect()
    }

    /// Gram matrix of `window` (about the cache anchor).
    pub fn update(&mut self, window: &[Arc<Vec<f64>>]) -> DMatrix<f64> {
        let n = window.len();
        // Longest suffix of the cached items that is a prefix of the window.
        let mut start = None;
        if let Some(first) = window.first() {
            if let Some(pos) = self.items.iter().position(|it| Arc::ptr_eq(it, first)) {
                let overlap = self.items.len() - pos;
                if overlap <= n && (0..overlap).all(|i| Arc::ptr_eq(&self.items[pos + i], &window[i])) {
                    start = Some(pos);
                }
            }
        }
        let needs_rebuild = match (&self.anchor, window.first()) {
            (None, _) => true,
            (Some(a), Some(w)) => a.len() != w.len(),
            _ => false,
        };
        if needs_rebuild || start.is_none() {
            self.anchor = window.first().cloned();
            self.items.clear();
            self.diffs.clear();
            self.gram.clear();
            start = Some(0);
        }
        let pos = start.unwrap_or(0);
        self.items.drain(..pos);
        self.diffs.drain(..pos);
        self.gram.drain(..pos);
        for row in self.gram.iter_mut() {
            row.drain(..pos);
        }
        let fresh: Vec<Vec<f64>> = window[self.items.len()..].iter().map(|w| self.diff(w)).collect();
        if !fresh.is_empty() {
            let old = self.diffs.len();
            let fresh_len = fresh.len();
            self.items.extend(window[old..].iter().cloned());
            self.diffs.extend(fresh);
            // Rows for the new snapshots against everything now cached.
            let block = manifold::cross_gram(&self.diffs[old..], &self.diffs);
            for (r, row) in self.gram.iter_mut().enumerate() {
                row.extend((0..fresh_len).map(|m| block[(m, r)]));
            }
            for m in 0..fresh_len {
                self.gram.push((0..self.diffs.len()).map(|c| block[(m, c)]).collect());
            }
            // The new-new block must be symmetric.
            for m in 0..fresh_len {
                for q in 0..m {
                    let v = self.gram[old + m][old + q];
                    self.gram[old + q][old + m] = v;
                }
            }
        }
        DMatrix::from_fn(n, n, |i, j| self.gram[i][j])
    }
}

fn as_slices(v: &[Arc<Vec<f64>>]) -> Vec<&[f64]> {
    v.iter().map(|a| a.as_slice()).collect()
}

/// Carry-over between evaluations: last valid exponents and the smoothed
/// channel-manifold component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorMemory {
    pub beta0: f64,
    pub beta1: f64,
    pub phi_ls: f64,
    pub phi_pm: f64,
    pub phi_cm: f64,
    pub phi_cm_smoothed: f64,
    pub gap: f64,
    pub curv_norm: f64,
}

impl MonitorMemory {
    /// State right after calibration, where every component equals one.
    pub fn initial(refs: &TriReferences) -> Self {
        Self {
            beta0: refs.beta0_at_0,
            beta1: refs.beta1_ref,
            phi_ls: 1.0,
            phi_pm: 1.0,
            phi_cm: 1.0,
            phi_cm_smoothed: 1.0,
            gap: refs.phi_cm_baseline,
            curv_norm: 0.0,
        }
    }
}

fn recover_beta(r: Result<f64>, previous: f64) -> (f64, bool) {
    match r {
        Ok(b) => (b, false),
        Err(Error::UnreliableEstimate { fallback: Some(f), .. }) => (f, true),
        Err(_) => (previous, true),
    }
}

/// One evaluation of the index. Component failures fall back to `memory`
/// and are flagged; `memory` is updated in place.
pub fn compute_tri(
    net: &DemodNet,
    snap: &MonitorSnapshot,
    refs: &TriReferences,
    cfg: &MonitorConfig,
    memory: &mut MonitorMemory,
    gram: Option<&mut GramCache>,
) -> TriSample {
    let mut flags = FallbackFlags::default();

    let (beta0, ls_fb) = recover_beta(landscape_beta(net, snap, cfg, Some(memory.beta0)), memory.beta0);
    flags.ls = ls_fb;
    let p_ls = phi_ls(beta0, refs);

    let pm = (|| -> Result<f64> {
        let projected = match gram {
            Some(cache) => {
                if snap.trajectory.len() < cfg.pca_dim + 1 {
                    return Err(Error::InsufficientHistory {
                        have: snap.trajectory.len(),
                        need: cfg.pca_dim + 1,
                    });
                }
                let g = cache.update(&snap.trajectory);
                manifold::pca_from_gram(&g, cfg.pca_dim, &as_slices(&snap.trajectory))?
            }
            None => manifold::pca_project(&as_slices(&snap.trajectory), cfg.pca_dim)?,
        };
        trajectory_beta(&projected, Some(memory.beta1))
    })();
    let (beta1, pm_fb) = recover_beta(pm, memory.beta1);
    flags.pm = pm_fb;
    let p_pm = phi_pm(beta1, refs);

    let gamma = cfg.gamma_factor * refs.sigma_h;
    let (gap, curv_norm, p_cm) = match manifold_terms(&snap.cir_window, gamma, cfg.knn_k)
        .and_then(|(g, c)| phi_cm(g, c, refs).map(|p| (g, c, p)))
    {
        Ok(v) => v,
        Err(_) => {
            flags.cm = true;
            (memory.gap, memory.curv_norm, memory.phi_cm)
        }
    };
    let smoothed = clamp_phi(kalman_smooth(memory.phi_cm_smoothed, p_cm, cfg.kalman_gain));
    let tri = cfg.weights.combine(p_ls, p_pm, smoothed);

    *memory = MonitorMemory {
        beta0,
        beta1,
        phi_ls: p_ls,
        phi_pm: p_pm,
        phi_cm: p_cm,
        phi_cm_smoothed: smoothed,
        gap,
        curv_norm,
    };
    TriSample {
        t: snap.t,
        phi_ls: p_ls,
        phi_pm: p_pm,
        phi_cm: p_cm,
        phi_cm_smoothed: smoothed,
        tri,
        beta0,
        beta1,
        gap,
        curv_norm,
        fallback: flags,
    }
}

/// Stateful monitor: references, memory and the Gram cache.
#[derive(Debug, Clone)]
pub struct Monitor {
    pub net: DemodNet,
    pub refs: TriReferences,
    pub cfg: MonitorConfig,
    pub memory: MonitorMemory,
    gram: GramCache,
}

impl Monitor {
    pub fn new(net: DemodNet, refs: TriReferences, cfg: MonitorConfig) -> Result<Self> {
        refs.validate()?;
        cfg.weights.validate()?;
        Ok(Self {
            net,
            memory: MonitorMemory::initial(&refs),
            refs,
            cfg,
            gram: GramCache::new(),
        })
    }

    pub fn evaluate(&mut self, snap: &MonitorSnapshot) -> TriSample {
        compute_tri(&self.net, snap, &self.refs, &self.cfg, &mut self.memory, Some(&mut self.gram))
    }
}

/// Runs a [`Monitor`] on a worker thread. At most one evaluation is in
/// flight; results come back tagged with the snapshot's symbol index.
pub struct MonitorWorker {
    tx: Option<mpsc::Sender<MonitorSnapshot>>,
    rx: mpsc::Receiver<TriSample>,
    handle: Option<thread::JoinHandle<()>>,
    in_flight: Option<u64>,
}

impl MonitorWorker {
    pub fn spawn(mut monitor: Monitor) -> Self {
        let (tx, snap_rx) = mpsc::channel::<MonitorSnapshot>();
        let (sample_tx, rx) = mpsc::channel();
        let handle = thread::spawn(move || {
            for snap in snap_rx {
                if sample_tx.send(monitor.evaluate(&snap)).is_err() {
                    break;
                }
            }
        });
        Self {
            tx: Some(tx),
            rx,
            handle: Some(handle),
            in_flight: None,
        }
    }

    pub fn in_flight(&self) -> Option<u64> {
        self.in_flight
    }

    /// Queues a snapshot; waits for any previous evaluation first so only one
    /// is ever outstanding. Returns that previous result, if any.
    pub fn submit(&mut self, snap: MonitorSnapshot) -> Result<Option<TriSample>> {
        let previous = self.wait()?;
        self.in_flight = Some(snap.t);
        self.tx
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("monitor worker closed".into()))?
            .send(snap)
            .map_err(|_| Error::InvalidInput("monitor worker stopped".into()))?;
        Ok(previous)
    }

    /// Blocks until the outstanding evaluation (if any) completes.
    pub fn wait(&mut self) -> Result<Option<TriSample>> {
        match self.in_flight.take() {
            None => Ok(None),
            Some(t) => {
                let s = self
                    .rx
                    .recv()
                    .map_err(|_| Error::InvalidInput("monitor worker stopped".into()))?;
                debug_assert_eq!(s.t, t);
                Ok(Some(s))
            }
        }
    }
}

impl Drop for MonitorWorker {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// What calibration needs from the pre-deployment run under the source.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CalibrationTrace {
    /// Per-symbol pilot losses.
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
    /// Norms of the per-symbol CIR vectors.
    pub cir_norms: Vec<f64>,
    /// `(beta0, beta1)` of the monitor evaluations, in order. `beta1` is
    /// `None` when the trajectory had too few loops to estimate it.
    pub betas: Vec<(f64, Option<f64>)>,
    /// CIR window at the end of calibration.
    pub final_cir_window: Vec<Vec<f64>>,
}

pub const MIN_CALIBRATION: usize = 500;
pub const CONVERGENCE_BLOCK: usize = 50;
pub const CONVERGENCE_TOL: f64 = 0.05;
const REFERENCE_TAIL: usize = 200;
const BETA_TAIL: usize = 5;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Relative change between the last two 50-symbol loss means.
pub fn loss_converged(losses: &[f64]) -> Option<f64> {
    if losses.len() < 2 * CONVERGENCE_BLOCK {
        return None;
    }
    let n = losses.len();
    let last = mean(&losses[n - CONVERGENCE_BLOCK..]);
    let prev = mean(&losses[n - 2 * CONVERGENCE_BLOCK..n - CONVERGENCE_BLOCK]);
    Some((last - prev).abs() / prev.abs().max(1e-12))
}

pub fn calibrate(trace: &CalibrationTrace, cfg: &MonitorConfig) -> Result<TriReferences> {
    let n = trace.losses.len();
    if n < MIN_CALIBRATION {
        return Err(Error::CalibrationFailed(format!(
            "{n} calibration symbols, need {MIN_CALIBRATION}"
        )));
    }
    if trace.grad_norms.len() != n || trace.cir_norms.len() != n {
        return Err(Error::InvalidInput("calibration series lengths differ".into()));
    }
    let change = loss_converged(&trace.losses).unwrap_or(f64::INFINITY);
    if !(change < CONVERGENCE_TOL) {
        return Err(Error::CalibrationFailed(format!(
            "loss not converged: relative change {change:.3} between the last two 50-symbol means"
        )));
    }
    if trace.betas.is_empty() {
        return Err(Error::CalibrationFailed("no monitor evaluations".into()));
    }
    let tail = n.saturating_sub(REFERENCE_TAIL);
    let sigma_g = std_dev(&trace.grad_norms[tail..]);
    let val_loss_ref = mean(&trace.losses[tail..]);
    let sigma_h = std_dev(&trace.cir_norms[tail..]);

    let bt = &trace.betas[trace.betas.len().saturating_sub(BETA_TAIL)..];
    let beta0_ref = bt.iter().map(|b| b.0).sum::<f64>() / bt.len() as f64;
    // A smooth trajectory has no loops at all. That is the calm regime, so
    // the reference becomes zero and the component stays at 1 until enough
    // loops appear to estimate an exponent.
    let b1: Vec<f64> = trace.betas.iter().filter_map(|b| b.1).collect();
    let beta1_ref = if b1.is_empty() {
        0.0
    } else {
        mean(&b1[b1.len().saturating_sub(BETA_TAIL)..])
    };
    let beta0_at_0 = trace.betas.last().map(|b| b.0).unwrap_or(beta0_ref);

    let gamma = cfg.gamma_factor * sigma_h;
    let phi_cm_baseline = if gamma > 0.0 {
        let (gap, curv) = manifold_terms(&trace.final_cir_window, gamma, cfg.knn_k)?;
        cm_score(gap, curv)
    } else {
        0.0
    };
    let refs = TriReferences {
        beta0_ref,
        beta1_ref,
        beta0_at_0,
        phi_cm_baseline,
        sigma_g,
        val_loss_ref,
        sigma_h,
    };
    refs.validate()?;
    Ok(refs)
}

pub const CSV_HEADER: &str = "t,phi_ls,phi_pm,phi_cm,phi_cm_smoothed,tri,beta0,beta1,gap,curv_norm,fallback_flags";

pub fn write_samples_csv<W: Write>(mut w: W, samples: &[TriSample]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for s in samples {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.t,
            s.phi_ls,
            s.phi_pm,
            s.phi_cm,
            s.phi_cm_smoothed,
            s.tri,
            s.beta0,
            s.beta1,
            s.gap,
            s.curv_norm,
            s.fallback.label()
        )?;
    }
    Ok(())
}
