//! Calibration and single-trial simulation.
//!
//! A receiver is pre-trained offline on fully labelled symbols of the source
//! process, then adapted online from pilots for the calibration window, at
//! the end of which the monitor references are fixed. Each trial continues
//! the same source realisation into deployment, where the mixture shift
//! starts at `t_star`.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use tri_core::channel::{self, ChannelProfile, ChannelState, MixtureChannel, ShiftSchedule};
use tri_core::detectors::{self, AlarmRecord, DeploymentSeries, Detector};
use tri_core::receiver::{
    self, adam_burst, sgd_step_pooled, AdamConfig, Checkpoint, DemodNet, LrSchedule, PilotBatch, ReceiverState,
};
use tri_core::tri::{
    self, CalibrationTrace, Monitor, MonitorSnapshot, MonitorWorker, TriReferences, TriSample,
};
use tri_core::Error as CoreError;

use crate::config::{AdaptationMode, ScenarioConfig};
use crate::error::{HarnessError, Result};
use crate::seeding::{self, hash_str, mix, stream, Stream};

/// A receiver ready for deployment, plus the source realisation it was
/// calibrated on.
#[derive(Debug, Clone)]
pub struct Calibrated {
    pub state: ReceiverState,
    pub source: ChannelState,
    pub cir_window: VecDeque<Vec<f64>>,
    pub pool: VecDeque<PilotBatch>,
    pub refs: TriReferences,
    pub summary: CalibrationSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    /// Pre-training losses; absent when starting from a checkpoint.
    pub warm_loss_before: Option<f64>,
    pub warm_loss_after: Option<f64>,
    /// Mean BER over the last 200 calibration symbols.
    pub final_ber: f64,
    pub final_loss: f64,
    pub grad_norm_mean: f64,
}

fn push_bounded<T>(q: &mut VecDeque<T>, v: T, cap: usize) {
    if q.len() == cap {
        q.pop_front();
    }
    q.push_back(v);
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn recent<'a>(pool: &'a VecDeque<PilotBatch>, n: usize) -> Vec<&'a PilotBatch> {
    pool.iter().skip(pool.len().saturating_sub(n)).collect()
}

pub fn calibration_seed(cfg: &ScenarioConfig) -> u64 {
    mix(&[cfg.seed, hash_str("calibration"), hash_str(cfg.source.as_str())])
}

pub fn source_profile(cfg: &ScenarioConfig) -> Result<ChannelProfile> {
    cfg.profile(cfg.source)
}

/// Offline pre-training, then online calibration under the source.
pub fn calibrate_source(cfg: &ScenarioConfig) -> Result<Calibrated> {
    let seed = calibration_seed(cfg);
    let mut rng_init = stream(seed, Stream::Init);
    let mut rng_ch = stream(seed, Stream::Channel);
    let mut rng_noise = stream(seed, Stream::Noise);
    let mut rng_warm = stream(seed, Stream::Warmup);
    let mcfg = cfg.monitor.core()?;
    let profile = Arc::new(source_profile(cfg)?);

    let mut source = ChannelState::stationary(Arc::clone(&profile), &mut rng_ch);
    let (mut state, warm_loss) = match &cfg.warm_start.checkpoint {
        Some(path) => {
            let state = Checkpoint::from_json(&std::fs::read_to_string(path)?)?.into_state()?;
            if state.net.arch != cfg.receiver.arch {
                return Err(HarnessError::Config(format!(
                    "checkpoint {} was saved for a different architecture",
                    path.display()
                )));
            }
            (state, None)
        }
        None => {
            let net = DemodNet::new(cfg.receiver.arch);
            let theta = net.init(&mut rng_init);
            let mut state = ReceiverState::new(net, theta)?;
            let mut warm = Vec::with_capacity(cfg.warm_start.symbols);
            for _ in 0..cfg.warm_start.symbols {
                source = channel::evolve(&source, &mut rng_ch);
                let sym = channel::transmit(&source, cfg.snr_db, &mut rng_noise)?;
                warm.push(PilotBatch::fully_labelled(&sym));
            }
            let report = adam_burst(
                &mut state,
                &warm,
                &AdamConfig {
                    steps: cfg.warm_start.steps,
                    batch_size: cfg.warm_start.batch_size,
                    lr: cfg.warm_start.lr,
                    ..AdamConfig::default()
                },
                &mut rng_warm,
            )?;
            log::debug!("warm start: {report:?}");
            (state, Some((report.loss_before, report.loss_after)))
        }
    };
    state.trajectory_len = cfg.receiver.trajectory_len;

    // Cosine decay over `symbols`, then 50-symbol blocks at the floor until
    // the loss settles. Snapshots are kept for the last few evaluation
    // instants and scored once the run stops.
    let n_min = cfg.calibration.symbols;
    let n_max = cfg.calibration.max_symbols.max(n_min);
    let t_eval = cfg.monitor.t_eval as usize;
    let sched = LrSchedule {
        eta0: cfg.receiver.eta0,
        floor: cfg.receiver.eta_floor,
        horizon: n_min as u64,
    };
    let mut trace = CalibrationTrace::default();
    let mut cir_window = VecDeque::with_capacity(mcfg.cir_window);
    let pool_cap = cfg.burst.pool_symbols.max(cfg.receiver.pool_symbols);
    let mut pool = VecDeque::with_capacity(pool_cap);
    let mut snaps = VecDeque::with_capacity(cfg.calibration.evaluations);
    let mut bers = Vec::with_capacity(n_min);
    let mut genie = Vec::with_capacity(n_min);
    let mut i = 0usize;
    loop {
        source = channel::evolve(&source, &mut rng_ch);
        let sym = channel::transmit(&source, cfg.snr_db, &mut rng_noise)?;
        bers.push(receiver::symbol_ber(&state, &sym)?);
        genie.push(genie_ber(&sym));
        push_bounded(&mut pool, PilotBatch::from_symbol(&sym), pool_cap);
        let info = sgd_step_pooled(
            &mut state,
            &recent(&pool, cfg.receiver.pool_symbols),
            sched.eta(i as u64),
            cfg.receiver.momentum,
        )?;
        let h = source.to_real();
        trace.losses.push(info.loss);
        trace.grad_norms.push(info.grad_norm);
        trace.cir_norms.push(l2(&h));
        push_bounded(&mut cir_window, h, mcfg.cir_window);
        i += 1;

        if i % t_eval == 0 && cfg.calibration.evaluations > 0 {
            let snap = snapshot(&state, &pool, &cir_window, mix(&[seed, Stream::Monitor as u64, i as u64]));
            push_bounded(&mut snaps, snap, cfg.calibration.evaluations);
        }
        let settled = tri::loss_converged(&trace.losses).is_some_and(|c| c < tri::CONVERGENCE_TOL);
        let at_block = i >= n_min && (i - n_min) % tri::CONVERGENCE_BLOCK == 0;
        if (at_block && settled) || i >= n_max {
            break;
        }
    }
    log::debug!("calibration stopped after {i} symbols");

    let mut prev_betas: (Option<f64>, Option<f64>) = (None, None);
    for snap in &snaps {
        let (b0, b1) = tri::snapshot_betas(&state.net, snap, &mcfg, prev_betas);
        match b0 {
            Ok(b0) => {
                let b1 = match b1 {
                    Ok(b) => Some(b),
                    Err(e) => {
                        log::debug!("no trajectory exponent at symbol {}: {e}", snap.t);
                        None
                    }
                };
                trace.betas.push((b0, b1));
                prev_betas = (Some(b0), b1.or(prev_betas.1));
            }
            Err(e) => log::warn!("calibration evaluation at symbol {} skipped: {e}", snap.t),
        }
    }
    drop(snaps);
    trace.final_cir_window = cir_window.iter().cloned().collect();
    log::debug!(
        "calibration losses (50-symbol means): {:?}",
        trace.losses.chunks(50).map(mean).collect::<Vec<_>>()
    );
    log::debug!("calibration BER (100-symbol means): {:?}", bers.chunks(100).map(mean).collect::<Vec<_>>());
    log::debug!("known-channel BER (100-symbol means): {:?}", genie.chunks(100).map(mean).collect::<Vec<_>>());
    let refs = tri::calibrate(&trace, &mcfg)?;
    let tail = i.saturating_sub(200);
    let summary = CalibrationSummary {
        warm_loss_before: warm_loss.map(|w| w.0),
        warm_loss_after: warm_loss.map(|w| w.1),
        final_ber: mean(&bers[tail..]),
        final_loss: mean(&trace.losses[tail..]),
        grad_norm_mean: mean(&trace.grad_norms[tail..]),
    };
    log::info!(
        "calibrated {}: warm loss {:?} -> {:?}, final BER {:.4}, refs {:?}",
        cfg.source,
        summary.warm_loss_before,
        summary.warm_loss_after,
        summary.final_ber,
        refs
    );
    Ok(Calibrated {
        state,
        source,
        cir_window,
        pool,
        refs,
        summary,
    })
}

/// BER of one-tap equalisation with the true channel, for reference.
pub fn genie_ber(sym: &channel::OfdmSymbol) -> f64 {
    let mut errors = 0u32;
    let mut bits = 0u32;
    for k in sym.data_indices() {
        errors += (channel::qam16_demap(sym.y[k] / sym.h[k]) ^ sym.bits[k]).count_ones();
        bits += 4;
    }
    errors as f64 / bits.max(1) as f64
}

/// Monitor input at the receiver's current step.
pub fn snapshot(
    state: &ReceiverState,
    pool: &VecDeque<PilotBatch>,
    cir_window: &VecDeque<Vec<f64>>,
    seed: u64,
) -> MonitorSnapshot {
    let trajectory = state.trajectory_snapshot();
    MonitorSnapshot {
        t: state.step_count,
        theta: trajectory
            .last()
            .cloned()
            .unwrap_or_else(|| Arc::new(state.theta.clone())),
        batch: pool.back().cloned().expect("pool holds the current symbol"),
        cir_window: cir_window.iter().cloned().collect(),
        trajectory,
        seed,
    }
}

/// Calibrated receivers shared across scenarios with the same source and
/// calibration settings.
#[derive(Debug, Default)]
pub struct CalibrationCache {
    entries: Mutex<HashMap<String, Arc<Mutex<Option<Arc<Calibrated>>>>>>,
}

impl CalibrationCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, cfg: &ScenarioConfig) -> Result<Arc<Calibrated>> {
        // One lock per key, so different sources calibrate concurrently.
        let slot = {
            let mut map = self.entries.lock().expect("calibration cache poisoned");
            Arc::clone(map.entry(cfg.calibration_key()).or_default())
        };
        let mut slot = slot.lock().expect("calibration slot poisoned");
        if let Some(c) = slot.as_ref() {
            return Ok(Arc::clone(c));
        }
        let c = Arc::new(calibrate_source(cfg)?);
        *slot = Some(Arc::clone(&c));
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialStatus {
    Completed,
    Failed { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstEvent {
    /// Symbol at which the burst ran.
    pub t: u64,
    /// Evaluation instant whose alarm triggered it.
    pub alarm_t: u64,
    pub steps_run: usize,
    pub pairs_available: usize,
    pub loss_before: f64,
    pub loss_after: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Leads {
    pub tri: Option<i64>,
    pub grad_norm: Option<i64>,
    pub val_loss: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub scenario: String,
    pub trial: u64,
    pub seed: u64,
    pub mode: AdaptationMode,
    pub lambda: f64,
    pub t_star: u64,
    pub horizon: u64,
    #[serde(flatten)]
    pub status: TrialStatus,
    pub refs: TriReferences,
    /// Index of the first entry of every per-symbol series.
    pub t0: u64,
    pub ber: Vec<f64>,
    pub loss: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub alpha: Vec<f64>,
    pub tri: Vec<TriSample>,
    pub alarms: Vec<AlarmRecord>,
    pub leads: Leads,
    pub bursts: Vec<BurstEvent>,
    pub post_adapt_tri: Option<f64>,
    pub min_post_shift_tri: Option<f64>,
}

impl TrialResult {
    pub fn completed(&self) -> bool {
        self.status == TrialStatus::Completed
    }

    pub fn alarm(&self, d: Detector) -> Option<u64> {
        detectors::find(&self.alarms, d).and_then(|r| r.alarm_t)
    }

    /// Mean BER over symbols `[from, to)`.
    pub fn mean_ber(&self, from: u64, to: u64) -> f64 {
        let lo = from.saturating_sub(self.t0) as usize;
        let hi = (to.saturating_sub(self.t0) as usize).min(self.ber.len());
        mean(&self.ber[lo.min(hi)..hi])
    }

    pub fn tri_at(&self, t: u64) -> Option<&TriSample> {
        self.tri.iter().find(|s| s.t == t)
    }
}

/// Runs one deployment trial from a calibrated receiver.
pub fn run_trial(cfg: &ScenarioConfig, cal: &Calibrated, trial: u64) -> Result<TrialResult> {
    let scenario = cfg.id();
    let seed = seeding::trial_seed(cfg.seed, &cfg.realisation_key(), trial);
    let mut rng_ch = stream(seed, Stream::Channel);
    let mut rng_noise = stream(seed, Stream::Noise);
    let mut rng_burst = stream(seed, Stream::Burst);
    let mcfg = cfg.monitor.core()?;

    let schedule = ShiftSchedule::new(
        source_profile(cfg)?,
        cfg.profile(cfg.target)?,
        cfg.t_star,
        cfg.lambda,
    )?;
    let mut mixture = MixtureChannel::new(schedule, cal.source.clone(), 0, &mut rng_ch);
    let mut state = cal.state.clone();
    state.step_count = 0;
    state.frozen = cfg.mode == AdaptationMode::None;
    let mut cir_window = cal.cir_window.clone();
    let mut pool = cal.pool.clone();
    let pool_cap = cfg.burst.pool_symbols.max(cfg.receiver.pool_symbols);

    let monitor = Monitor::new(state.net.clone(), cal.refs, mcfg)?;
    let mut worker = MonitorWorker::spawn(monitor);
    let mut pending: Option<u64> = None;
    let mut samples: Vec<TriSample> = Vec::new();
    let mon_start = cfg.monitor.start.unwrap_or(cfg.monitor.t_eval);
    let mon_stop = cfg.monitor.stop.unwrap_or(cfg.horizon);

    let h = cfg.horizon as usize;
    let mut ber = Vec::with_capacity(h);
    let mut loss = Vec::with_capacity(h);
    let mut grad_norm = Vec::with_capacity(h);
    let mut val_loss = Vec::with_capacity(h);
    let mut alpha = Vec::with_capacity(h);
    let mut bursts = Vec::new();
    let mut last_burst: Option<u64> = None;
    let mut status = TrialStatus::Completed;

    let burst_cfg = AdamConfig {
        steps: cfg.burst.steps,
        batch_size: cfg.burst.batch_size,
        lr: cfg.burst.lr,
        ..AdamConfig::default()
    };

    // Samples are handled in arrival order; a burst may fire on each.
    let mut on_sample = |s: TriSample,
                         t_now: u64,
                         state: &mut ReceiverState,
                         pool: &VecDeque<PilotBatch>,
                         bursts: &mut Vec<BurstEvent>,
                         last_burst: &mut Option<u64>|
     -> std::result::Result<(), CoreError> {
        samples.push(s);
        let armed = last_burst.is_none_or(|b| t_now >= b + cfg.burst.cooldown);
        if cfg.mode == AdaptationMode::SgdBurst && s.tri < cfg.alarms.tri && armed {
            let batches: Vec<PilotBatch> = recent(pool, cfg.burst.pool_symbols).into_iter().cloned().collect();
            let r = adam_burst(state, &batches, &burst_cfg, &mut rng_burst)?;
            bursts.push(BurstEvent {
                t: t_now,
                alarm_t: s.t,
                steps_run: r.steps_run,
                pairs_available: r.pairs_available,
                loss_before: r.loss_before,
                loss_after: r.loss_after,
            });
            *last_burst = Some(t_now);
        }
        Ok(())
    };

    for _ in 0..cfg.horizon {
        let draw = mixture.step(&mut rng_ch);
        let t = draw.state.t;
        if cfg.mode == AdaptationMode::FrozenAtShift && t >= cfg.t_star {
            state.frozen = true;
        }
        let step = (|| -> std::result::Result<(), CoreError> {
            let sym = channel::transmit(&draw.state, cfg.snr_db, &mut rng_noise)?;
            ber.push(receiver::symbol_ber(&state, &sym)?);
            push_bounded(&mut pool, PilotBatch::from_symbol(&sym), pool_cap);
            let info = sgd_step_pooled(
                &mut state,
                &recent(&pool, cfg.receiver.pool_symbols),
                cfg.receiver.eta_floor,
                cfg.receiver.momentum,
            )?;
            loss.push(info.loss);
            grad_norm.push(info.grad_norm);
            val_loss.push(receiver::windowed_val_loss(&state, cfg.receiver.val_window)?);
            alpha.push(draw.alpha);
            push_bounded(&mut cir_window, draw.state.to_real(), mcfg.cir_window);
            Ok(())
        })();
        if let Err(e) = step {
            status = TrialStatus::Failed { reason: e.to_string() };
            break;
        }
        state.step_count = t;

        let mut handle = |s: TriSample, state: &mut ReceiverState| on_sample(s, t, state, &pool, &mut bursts, &mut last_burst);
        if let Some(ts) = pending {
            if t >= ts + cfg.monitor.latency {
                pending = None;
                if let Some(s) = worker.wait()? {
                    if let Err(e) = handle(s, &mut state) {
                        status = TrialStatus::Failed { reason: e.to_string() };
                        break;
                    }
                }
            }
        }
        if t % cfg.monitor.t_eval == 0 && t >= mon_start && t <= mon_stop {
            let snap = snapshot(&state, &pool, &cir_window, mix(&[seed, Stream::Monitor as u64, t]));
            let previous = worker.submit(snap)?;
            pending = Some(t);
            if let Some(s) = previous {
                if let Err(e) = handle(s, &mut state) {
                    status = TrialStatus::Failed { reason: e.to_string() };
                    break;
                }
            }
        }
    }
    let last = worker.wait()?;
    drop(worker);
    samples.extend(last);

    let series = DeploymentSeries {
        t0: 1,
        ber,
        grad_norm,
        val_loss,
        tri: samples,
    };
    let alarms = detectors::scan_alarms(&series, &cal.refs, &cfg.alarms, cfg.t_star);
    let ber_alarm = detectors::find(&alarms, Detector::Ber).expect("ber record");
    let lead = |d| detectors::find(&alarms, d).and_then(|r| detectors::warning_lead(r, ber_alarm));
    let leads = Leads {
        tri: lead(Detector::Tri),
        grad_norm: lead(Detector::GradNorm),
        val_loss: lead(Detector::ValLoss),
    };
    let tail_from = cfg.horizon - cfg.horizon / 10;
    let tail: Vec<f64> = series.tri.iter().filter(|s| s.t > tail_from).map(|s| s.tri).collect();
    let post: Vec<f64> = series.tri.iter().filter(|s| s.t > cfg.t_star).map(|s| s.tri).collect();
    Ok(TrialResult {
        scenario,
        trial,
        seed,
        mode: cfg.mode,
        lambda: cfg.lambda,
        t_star: cfg.t_star,
        horizon: cfg.horizon,
        status,
        refs: cal.refs,
        t0: series.t0,
        ber: series.ber,
        loss,
        grad_norm: series.grad_norm,
        val_loss: series.val_loss,
        alpha,
        tri: series.tri,
        alarms,
        leads,
        bursts,
        post_adapt_tri: (!tail.is_empty()).then(|| mean(&tail)),
        min_post_shift_tri: post.iter().copied().reduce(f64::min),
    })
}
