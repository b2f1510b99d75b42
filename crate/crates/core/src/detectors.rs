//! Alarm generators and warning-lead accounting.
//!
//! Every detector reports the first crossing at or after the shift instant;
//! crossings before it are counted as false alarms (one per rising edge).

use serde::{Deserialize, Serialize};

use crate::tri::{TriReferences, TriSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    Tri,
    Ber,
    GradNorm,
    ValLoss,
}

impl Detector {
    pub const ALL: [Detector; 4] = [Detector::Tri, Detector::Ber, Detector::GradNorm, Detector::ValLoss];

    pub fn as_str(&self) -> &'static str {
        match self {
            Detector::Tri => "tri",
            Detector::Ber => "ber",
            Detector::GradNorm => "grad_norm",
            Detector::ValLoss => "val_loss",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmRecord {
    pub detector: Detector,
    pub alarm_t: Option<u64>,
    pub threshold_used: f64,
    pub false_alarms: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlarmThresholds {
    /// TRI alarm when the index drops below this.
    pub tri: f64,
    /// BER alarm when the trailing-window mean exceeds this.
    pub ber: f64,
    pub ber_window: usize,
    /// Gradient alarm at `grad_sigmas * sigma_g`.
    pub grad_sigmas: f64,
    /// Validation alarm at `val_factor * val_loss_ref`.
    pub val_factor: f64,
}

impl Default for AlarmThresholds {
    fn default() -> Self {
        Self {
            tri: 0.84,
            ber: 1e-2,
            ber_window: 50,
            grad_sigmas: 3.0,
            val_factor: 1.5,
        }
    }
}

/// Per-symbol deployment series. Index `i` of each vector is symbol `t0 + i`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeploymentSeries {
    pub t0: u64,
    pub ber: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub tri: Vec<TriSample>,
}

/// First-crossing scan over `(t, crossed)` pairs.
pub fn first_crossing<I: IntoIterator<Item = (u64, bool)>>(events: I, t_star: u64) -> (Option<u64>, usize) {
    let mut false_alarms = 0;
    let mut was_high = false;
    for (t, crossed) in events {
        if crossed {
            if t >= t_star {
                return (Some(t), false_alarms);
            }
            if !was_high {
                false_alarms += 1;
            }
        }
        was_high = crossed;
    }
    (None, false_alarms)
}

/// Trailing means over up to `w` symbols, including the current one.
pub fn trailing_mean(v: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(v.len());
    let mut sum = 0.0;
    for i in 0..v.len() {
        sum += v[i];
        if i >= w {
            sum -= v[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

fn scan_per_symbol(
    detector: Detector,
    t0: u64,
    values: &[f64],
    threshold: f64,
    t_star: u64,
) -> AlarmRecord {
    let (alarm_t, false_alarms) = first_crossing(
        values.iter().enumerate().map(|(i, &v)| (t0 + i as u64, v > threshold)),
        t_star,
    );
    AlarmRecord {
        detector,
        alarm_t,
        threshold_used: threshold,
        false_alarms,
    }
}

pub fn scan_tri(samples: &[TriSample], threshold: f64, t_star: u64) -> AlarmRecord {
    let (alarm_t, false_alarms) = first_crossing(samples.iter().map(|s| (s.t, s.tri < threshold)), t_star);
    AlarmRecord {
        detector: Detector::Tri,
        alarm_t,
        threshold_used: threshold,
        false_alarms,
    }
}

/// Records in [`Detector::ALL`] order.
pub fn scan_alarms(
    series: &DeploymentSeries,
    refs: &TriReferences,
    th: &AlarmThresholds,
    t_star: u64,
) -> Vec<AlarmRecord> {
    let ber = trailing_mean(&series.ber, th.ber_window);
    vec![
        scan_tri(&series.tri, th.tri, t_star),
        scan_per_symbol(Detector::Ber, series.t0, &ber, th.ber, t_star),
        scan_per_symbol(
            Detector::GradNorm,
            series.t0,
            &series.grad_norm,
            th.grad_sigmas * refs.sigma_g,
            t_star,
        ),
        scan_per_symbol(
            Detector::ValLoss,
            series.t0,
            &series.val_loss,
            th.val_factor * refs.val_loss_ref,
            t_star,
        ),
    ]
}

/// `ber - other`, positive when `other` fired first; `None` unless both fired.
pub fn warning_lead(other: &AlarmRecord, ber: &AlarmRecord) -> Option<i64> {
    Some(ber.alarm_t? as i64 - other.alarm_t? as i64)
}

pub fn find(records: &[AlarmRecord], d: Detector) -> Option<&AlarmRecord> {
    records.iter().find(|r| r.detector == d)
}
