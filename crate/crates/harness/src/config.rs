//! Scenario and benchmark configuration, loaded from TOML.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tri_core::channel::{ChannelProfile, ProfileName};
use tri_core::detectors::AlarmThresholds;
use tri_core::receiver::Arch;
use tri_core::tri::MonitorConfig;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AdaptationMode {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "sgd")]
    Sgd,
    #[serde(rename = "sgd+burst")]
    SgdBurst,
    #[serde(rename = "frozen-at-shift")]
    FrozenAtShift,
}

impl AdaptationMode {
    pub const ALL: [AdaptationMode; 4] = [
        AdaptationMode::None,
        AdaptationMode::Sgd,
        AdaptationMode::SgdBurst,
        AdaptationMode::FrozenAtShift,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AdaptationMode::None => "none",
            AdaptationMode::Sgd => "sgd",
            AdaptationMode::SgdBurst => "sgd+burst",
            AdaptationMode::FrozenAtShift => "frozen-at-shift",
        }
    }
}

impl fmt::Display for AdaptationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdaptationMode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown adaptation mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverSettings {
    pub arch: Arch,
    pub eta0: f64,
    pub eta_floor: f64,
    pub momentum: f64,
    pub trajectory_len: usize,
    pub val_window: usize,
    /// Symbols whose pilots are pooled into each online step.
    pub pool_symbols: usize,
}

impl Default for ReceiverSettings {
    fn default() -> Self {
        Self {
            arch: Arch::default(),
            eta0: 1e-3,
            eta_floor: 1e-4,
            momentum: 0.9,
            trajectory_len: 200,
            val_window: 10,
            pool_symbols: 1,
        }
    }
}

/// Offline pre-training on fully labelled symbols of the source process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmStartSettings {
    pub symbols: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Receiver checkpoint to start from instead of pre-training.
    pub checkpoint: Option<std::path::PathBuf>,
}

impl Default for WarmStartSettings {
    fn default() -> Self {
        Self {
            symbols: 400,
            steps: 3000,
            batch_size: 128,
            lr: 1e-3,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    /// Symbols of cosine-decayed adaptation.
    pub symbols: usize,
    /// Cap on the total once the loss is still moving after `symbols`.
    pub max_symbols: usize,
    /// Monitor evaluations at the end of calibration feeding the exponent
    /// references.
    pub evaluations: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            symbols: 1000,
            max_symbols: 5000,
            evaluations: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSettings {
    pub t_eval: u64,
    /// Symbols between submitting a snapshot and consuming its result.
    pub latency: u64,
    /// First symbol at which the monitor runs; defaults to `t_eval`.
    pub start: Option<u64>,
    /// Last symbol at which the monitor runs; defaults to the horizon.
    pub stop: Option<u64>,
    pub n_samples: usize,
    pub radius_factor: f64,
    pub pca_dim: usize,
    pub cir_window: usize,
    pub knn_k: usize,
    pub kalman_gain: f64,
    pub gamma_factor: f64,
    pub weights: [f64; 3],
}

impl Default for MonitorSettings {
    fn default() -> Self {
        let c = MonitorConfig::default();
        Self {
            t_eval: 50,
            latency: 1,
            start: None,
            stop: None,
            n_samples: c.n_samples,
            radius_factor: c.radius_factor,
            pca_dim: c.pca_dim,
            cir_window: c.cir_window,
            knn_k: c.knn_k,
            kalman_gain: c.kalman_gain,
            gamma_factor: c.gamma_factor,
            weights: [c.weights.ls, c.weights.pm, c.weights.cm],
        }
    }
}

impl MonitorSettings {
    pub fn core(&self) -> Result<MonitorConfig> {
        let weights = tri_core::tri::TriWeights::new(self.weights[0], self.weights[1], self.weights[2])?;
        Ok(MonitorConfig {
            n_samples: self.n_samples,
            radius_factor: self.radius_factor,
            pca_dim: self.pca_dim,
            cir_window: self.cir_window,
            knn_k: self.knn_k,
            kalman_gain: self.kalman_gain,
            gamma_factor: self.gamma_factor,
            weights,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BurstSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Most recent symbols whose pilots form the burst pool.
    pub pool_symbols: usize,
    /// Symbols after a burst during which further alarms do not re-trigger.
    pub cooldown: u64,
}

impl Default for BurstSettings {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 128,
            lr: 1e-3,
            pool_symbols: 50,
            cooldown: 200,
        }
    }
}

/// Override of one row of the built-in profile table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileParams {
    pub rms_delay_spread_ns: f64,
    pub doppler_hz: f64,
}

impl ProfileParams {
    pub fn builtin(name: ProfileName) -> Self {
        let (rms, doppler) = name.defaults();
        Self {
            rms_delay_spread_ns: rms * 1e9,
            doppler_hz: doppler,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: Option<String>,
    pub source: ProfileName,
    pub target: ProfileName,
    pub lambda: f64,
    pub snr_db: f64,
    pub t_star: u64,
    pub horizon: u64,
    pub trials: usize,
    pub seed: u64,
    pub mode: AdaptationMode,
    /// Worker threads for independent trials; 0 means one per core.
    pub workers: usize,
    pub receiver: ReceiverSettings,
    pub warm_start: WarmStartSettings,
    pub calibration: CalibrationSettings,
    pub monitor: MonitorSettings,
    pub alarms: AlarmThresholds,
    pub burst: BurstSettings,
    /// Rows replacing the built-in delay spread and Doppler of a profile.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub profiles: BTreeMap<ProfileName, ProfileParams>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: None,
            source: ProfileName::UMa,
            target: ProfileName::RMa,
            lambda: 1.0,
            snr_db: 15.0,
            t_star: 1000,
            horizon: 2000,
            trials: 10,
            seed: 0,
            mode: AdaptationMode::SgdBurst,
            workers: 0,
            receiver: ReceiverSettings::default(),
            warm_start: WarmStartSettings::default(),
            calibration: CalibrationSettings::default(),
            monitor: MonitorSettings::default(),
            alarms: AlarmThresholds::default(),
            burst: BurstSettings::default(),
            profiles: BTreeMap::new(),
        }
    }
}

impl ScenarioConfig {
    /// Stable identifier, also used as the output directory name.
    pub fn id(&self) -> String {
        match &self.name {
            Some(n) => n.clone(),
            None => format!(
                "{}-{}_l{}_{}",
                self.source,
                self.target,
                self.lambda,
                self.mode.as_str().replace('+', "-")
            ),
        }
    }

    pub fn profile_params(&self, name: ProfileName) -> ProfileParams {
        self.profiles.get(&name).copied().unwrap_or_else(|| ProfileParams::builtin(name))
    }

    pub fn profile(&self, name: ProfileName) -> Result<ChannelProfile> {
        let p = self.profile_params(name);
        Ok(ChannelProfile::with_params(name, p.rms_delay_spread_ns * 1e-9, p.doppler_hz)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        for &name in self.profiles.keys() {
            self.profile(name)?;
        }
        if self.source == self.target {
            return bad(format!("source and target are both {}", self.source));
        }
        if self.horizon <= self.t_star {
            return bad(format!("horizon {} must exceed t_star {}", self.horizon, self.t_star));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(0.0..=25.0).contains(&self.snr_db) {
            return bad(format!("snr_db {} outside [0, 25]", self.snr_db));
        }
        if self.monitor.t_eval == 0 {
            return bad("monitor.t_eval must be >= 1".into());
        }
        if self.calibration.symbols < tri_core::tri::MIN_CALIBRATION {
            return bad(format!(
                "calibration needs at least {} symbols",
                tri_core::tri::MIN_CALIBRATION
            ));
        }
        if self.receiver.pool_symbols == 0 || self.burst.pool_symbols == 0 {
            return bad("pool sizes must be >= 1".into());
        }
        self.monitor.core()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Seeds the channel and noise of a trial. The adaptation mode and the
    /// scenario name are left out so that modes are compared on identical
    /// realisations.
    pub fn realisation_key(&self) -> String {
        let p = |n| {
            let p = self.profile_params(n);
            format!("{}:{}:{}", n, p.rms_delay_spread_ns, p.doppler_hz)
        };
        format!("{}-{}_l{}_s{}", p(self.source), p(self.target), self.lambda, self.snr_db)
    }

    /// Everything that influences calibration for this source. Scenarios that
    /// agree on this share one calibrated receiver.
    pub fn calibration_key(&self) -> String {
        // Where the deployment monitor runs has no bearing on calibration.
        let monitor = MonitorSettings {
            start: None,
            stop: None,
            latency: 0,
            ..self.monitor
        };
        serde_json::json!({
            "source": self.source,
            "source_params": self.profile_params(self.source),
            "snr_db": self.snr_db,
            "seed": self.seed,
            "receiver": self.receiver,
            "warm_start": &self.warm_start,
            "calibration": self.calibration,
            "monitor": monitor,
        })
        .to_string()
    }
}

/// The ten transitions of the lead benchmark.
pub const BENCH_TRANSITIONS: [(ProfileName, ProfileName); 10] = {
    use ProfileName::*;
    [
        (UMa, RMa),
        (UMi, InFDH),
        (InH, UMa),
        (RMa, UMi),
        (UMa, InH),
        (UMi, RMa),
        (InFDH, UMa),
        (RMa, InH),
        (InH, UMi),
        (UMi, UMa),
    ]
};

/// A benchmark matrix: shared settings expanded over transitions, rates and
/// adaptation modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchMatrix {
    pub base: ScenarioConfig,
    pub transitions: Vec<(ProfileName, ProfileName)>,
    pub lambdas: Vec<f64>,
    pub modes: Vec<AdaptationMode>,
}

impl Default for BenchMatrix {
    fn default() -> Self {
        Self {
            base: ScenarioConfig::default(),
            transitions: BENCH_TRANSITIONS.to_vec(),
            lambdas: vec![0.1, 1.0, 10.0],
            modes: vec![AdaptationMode::SgdBurst],
        }
    }
}

impl BenchMatrix {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn scenarios(&self) -> Result<Vec<ScenarioConfig>> {
        let mut out = Vec::new();
        for &(source, target) in &self.transitions {
            for &lambda in &self.lambdas {
                for &mode in &self.modes {
                    let cfg = ScenarioConfig {
                        name: None,
                        source,
                        target,
                        lambda,
                        mode,
                        ..self.base.clone()
                    };
                    cfg.validate()?;
                    out.push(cfg);
                }
            }
        }
        if out.is_empty() {
            return Err(HarnessError::Config("benchmark matrix is empty".into()));
        }
        Ok(out)
    }
}
