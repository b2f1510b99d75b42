//! Tapped-delay-line fading channels, the mixture shift model and the OFDM
//! link.
//!
//! Each environment is an exponential power-delay profile over 16 taps whose
//! RMS delay spread matches the environment, with per-tap Gauss–Markov fading
//! at the environment's Doppler. A shift mixes a source and a target process
//! symbol by symbol: `alpha_t = 1 - exp(-lambda (t - t*)_+)` is the
//! probability that the emitted CIR comes from the target.

use std::cell::RefCell;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::persistence::PointCloud;

pub const N_SUBCARRIERS: usize = 64;
pub const N_TAPS: usize = 16;
pub const CP_LEN: usize = 16;
pub const SUBCARRIER_SPACING_HZ: f64 = 15e3;
/// Every fourth subcarrier carries a pilot.
pub const PILOT_SPACING: usize = 4;

/// Tap spacing `1 / (N df)`.
pub const SAMPLE_PERIOD_S: f64 = 1.0 / (N_SUBCARRIERS as f64 * SUBCARRIER_SPACING_HZ);
/// OFDM symbol duration including the cyclic prefix.
pub const SYMBOL_DURATION_S: f64 =
    (N_SUBCARRIERS + CP_LEN) as f64 / (N_SUBCARRIERS as f64 * SUBCARRIER_SPACING_HZ);

const RHO_MAX: f64 = 1.0 - 1e-9;
const MIN_DELAY_SPREAD_S: f64 = 14e-9;
const MAX_DELAY_SPREAD_S: f64 = 363e-9;
const MIN_DOPPLER_HZ: f64 = 0.5;
const MAX_DOPPLER_HZ: f64 = 926.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProfileName {
    UMa,
    UMi,
    RMa,
    InH,
    #[serde(rename = "InF-DH")]
    InFDH,
}

impl ProfileName {
    pub const ALL: [ProfileName; 5] = [
        ProfileName::UMa,
        ProfileName::UMi,
        ProfileName::RMa,
        ProfileName::InH,
        ProfileName::InFDH,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProfileName::UMa => "UMa",
            ProfileName::UMi => "UMi",
            ProfileName::RMa => "RMa",
            ProfileName::InH => "InH",
            ProfileName::InFDH => "InF-DH",
        }
    }

    /// Default `(rms delay spread [s], Doppler [Hz])`.
    pub fn defaults(self) -> (f64, f64) {
        match self {
            ProfileName::UMa => (300e-9, 100.0),
            ProfileName::UMi => (150e-9, 60.0),
            ProfileName::RMa => (363e-9, 926.0),
            ProfileName::InH => (14e-9, 0.5),
            ProfileName::InFDH => (80e-9, 10.0),
        }
    }
}

impl fmt::Display for ProfileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProfileName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProfileName::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s) || (s.eq_ignore_ascii_case("InFDH") && *p == ProfileName::InFDH))
            .ok_or_else(|| Error::InvalidProfile(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub name: ProfileName,
    pub rms_delay_spread: f64,
    pub doppler_hz: f64,
    pub n_taps: usize,
    pub tap_powers: Vec<f64>,
}

impl ChannelProfile {
    /// Profile with explicit delay spread and Doppler, both checked against
    /// the supported ranges.
    pub fn with_params(name: ProfileName, rms_delay_spread: f64, doppler_hz: f64) -> Result<Self> {
        let tol = 1e-15;
        if !(MIN_DELAY_SPREAD_S - tol..=MAX_DELAY_SPREAD_S + tol).contains(&rms_delay_spread) {
            return Err(Error::InvalidInput(format!(
                "delay spread {rms_delay_spread:e} s outside [14 ns, 363 ns]"
            )));
        }
        if !(MIN_DOPPLER_HZ..=MAX_DOPPLER_HZ).contains(&doppler_hz) {
            return Err(Error::InvalidInput(format!(
                "Doppler {doppler_hz} Hz outside [0.5, 926]"
            )));
        }
        let tap_powers = exponential_pdp(rms_delay_spread, N_TAPS, SAMPLE_PERIOD_S);
        Ok(Self {
            name,
            rms_delay_spread,
            doppler_hz,
            n_taps: N_TAPS,
            tap_powers,
        })
    }

    /// AR(1) coefficient `J0(2 pi f_D T_sym)`, clamped to `[0, 1)`.
    pub fn correlation(&self) -> f64 {
        fading_correlation(self.doppler_hz, SYMBOL_DURATION_S)
    }
}

pub fn make_profile(name: &str) -> Result<ChannelProfile> {
    let name: ProfileName = name.parse()?;
    let (rms, doppler) = name.defaults();
    ChannelProfile::with_params(name, rms, doppler)
}

/// RMS delay spread of a power-delay profile with taps `period` apart.
pub fn rms_delay_spread(powers: &[f64], period: f64) -> f64 {
    let total: f64 = powers.iter().sum();
    let mean: f64 = powers
        .iter()
        .enumerate()
        .map(|(l, p)| p * l as f64)
        .sum::<f64>()
        / total;
    let second: f64 = powers
        .iter()
        .enumerate()
        .map(|(l, p)| p * (l * l) as f64)
        .sum::<f64>()
        / total;
    (second - mean * mean).max(0.0).sqrt() * period
}

fn geometric_pdp(q: f64, taps: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..taps).map(|l| q.powi(l as i32)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / s).collect()
}

/// Normalised `p_l ~ q^l` whose RMS delay spread equals `target`. The spread
/// grows monotonically in `q`, so `q` is found by bisection.
pub fn exponential_pdp(target: f64, taps: usize, period: f64) -> Vec<f64> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rms_delay_spread(&geometric_pdp(mid, taps), period) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    geometric_pdp(0.5 * (lo + hi), taps)
}

/// Bessel function of the first kind, order zero.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x < 12.0 {
        // Power series; terms peak near k = x/2 and stay well inside f64 range.
        let q = -0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200 {
            term *= q / (k * k) as f64;
            sum += term;
            if term.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        sum
    } else {
        // Hankel asymptotic expansion.
        let z = 8.0 * x;
        let z2 = z * z;
        let mut p = 1.0;
        let mut q = 0.0;
        let mut tp = 1.0;
        let mut tq = -1.0 / z;
        q += tq;
        for k in 1..12 {
            let a = (4 * k - 3) as f64;
            let b = (4 * k - 1) as f64;
            let c = (4 * k + 1) as f64;
            tp *= -(a * a) * (b * b) / ((2 * k - 1) as f64 * (2 * k) as f64 * z2);
            tq *= -(b * b) * (c * c) / ((2 * k) as f64 * (2 * k + 1) as f64 * z2);
            p += tp;
            q += tq;
        }
        let chi = x - std::f64::consts::FRAC_PI_4;
        (2.0 / (std::f64::consts::PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
    }
}

pub fn fading_correlation(doppler_hz: f64, symbol_duration: f64) -> f64 {
    let rho = bessel_j0(2.0 * std::f64::consts::PI * doppler_hz * symbol_duration);
    rho.clamp(0.0, RHO_MAX)
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// One CIR realisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub taps: Vec<Complex64>,
    pub profile: Arc<ChannelProfile>,
    pub t: u64,
}

impl ChannelState {
    /// Draws taps from the stationary law `CN(0, p_l)`.
    pub fn stationary<R: Rng + ?Sized>(profile: Arc<ChannelProfile>, rng: &mut R) -> Self {
        let taps = profile
            .tap_powers
            .iter()
            .map(|&p| complex_normal(rng, p))
            .collect();
        Self { taps, profile, t: 0 }
    }

    /// Concatenated real and imaginary parts, in `R^{2L}`.
    pub fn to_real(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.taps.iter().map(|g| g.re).collect();
        v.extend(self.taps.iter().map(|g| g.im));
        v
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|g| g.norm_sqr()).sum()
    }
}

/// One Gauss–Markov step of every tap.
pub fn evolve<R: Rng + ?Sized>(state: &ChannelState, rng: &mut R) -> ChannelState {
    let rho = state.profile.correlation();
    let innov = (1.0 - rho * rho).sqrt();
    let taps = state
        .taps
        .iter()
        .zip(&state.profile.tap_powers)
        .map(|(g, &p)| g * rho + complex_normal(rng, p) * innov)
        .collect();
    ChannelState {
        taps,
        profile: Arc::clone(&state.profile),
        t: state.t + 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSchedule {
    pub source: ChannelProfile,
    pub target: ChannelProfile,
    pub t_star: u64,
    pub lambda: f64,
}

impl ShiftSchedule {
    pub fn new(source: ChannelProfile, target: ChannelProfile, t_star: u64, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidInput(format!("shift rate must be positive, got {lambda}")));
        }
        Ok(Self {
            source,
            target,
            t_star,
            lambda,
        })
    }
}

/// `1 - exp(-lambda (t - t*)_+)`, kept strictly below one.
pub fn mixture_alpha(schedule: &ShiftSchedule, t: u64) -> f64 {
    shift_alpha(schedule.t_star, schedule.lambda, t)
}

pub fn shift_alpha(t_star: u64, lambda: f64, t: u64) -> f64 {
    let dt = t.saturating_sub(t_star) as f64;
    let a = -(-lambda * dt).exp_m1();
    a.min(RHO_MAX)
}

/// Emits the target realisation with probability `alpha`, else the source.
pub fn sample_shifted<R: Rng + ?Sized>(
    src: &ChannelState,
    tgt: &ChannelState,
    alpha: f64,
    rng: &mut R,
) -> ChannelState {
    let alpha = alpha.clamp(0.0, 1.0);
    if rng.random::<f64>() < alpha {
        tgt.clone()
    } else {
        src.clone()
    }
}

/// Source and target processes evolving side by side.
#[derive(Debug, Clone)]
pub struct MixtureChannel {
    pub schedule: ShiftSchedule,
    pub source: ChannelState,
    pub target: ChannelState,
    pub t: u64,
}

/// Output of one mixture step.
#[derive(Debug, Clone)]
pub struct MixtureDraw {
    pub state: ChannelState,
    pub alpha: f64,
    pub from_target: bool,
}

impl MixtureChannel {
    /// Starts from a given source state (e.g. the end of calibration) and a
    /// stationary draw of the target.
    pub fn new<R: Rng + ?Sized>(schedule: ShiftSchedule, source: ChannelState, t: u64, rng: &mut R) -> Self {
        let target = ChannelState::stationary(Arc::new(schedule.target.clone()), rng);
        Self {
            schedule,
            source,
            target,
            t,
        }
    }

    /// Advances both processes one symbol and draws the emitted CIR.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> MixtureDraw {
        self.source = evolve(&self.source, rng);
        self.target = evolve(&self.target, rng);
        self.t += 1;
        let alpha = mixture_alpha(&self.schedule, self.t);
        let from_target = rng.random::<f64>() < alpha;
        let mut state = if from_target {
            self.target.clone()
        } else {
            self.source.clone()
        };
        state.t = self.t;
        MixtureDraw {
            state,
            alpha,
            from_target,
        }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// `H[k] = sum_l g_l exp(-j 2 pi k l / N)`.
pub fn cir_to_freq(state: &ChannelState, n: usize) -> Result<Vec<Complex64>> {
    taps_to_freq(&state.taps, n)
}

pub fn taps_to_freq(taps: &[Complex64], n: usize) -> Result<Vec<Complex64>> {
    if taps.len() > n {
        return Err(Error::InvalidInput(format!(
            "{} taps do not fit {n} subcarriers",
            taps.len()
        )));
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf[..taps.len()].copy_from_slice(taps);
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n));
    fft.process(&mut buf);
    Ok(buf)
}

const GRAY_LEVELS: [f64; 4] = [-3.0, -1.0, 3.0, 1.0];

/// Gray-mapped 16-QAM with unit average power. The 4-bit label `b3 b2 b1 b0`
/// puts `b3 b2` on the in-phase and `b1 b0` on the quadrature axis, with
/// `00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3`.
pub fn qam16_map(label: u8) -> Complex64 {
    let s = 1.0 / 10f64.sqrt();
    let i = GRAY_LEVELS[((label >> 2) & 3) as usize];
    let q = GRAY_LEVELS[(label & 3) as usize];
    Complex64::new(i * s, q * s)
}

/// Nearest constellation label.
pub fn qam16_demap(y: Complex64) -> u8 {
    let s = 10f64.sqrt();
    let axis = |v: f64| -> u8 {
        let v = v * s;
        if v < -2.0 {
            0b00
        } else if v < 0.0 {
            0b01
        } else if v < 2.0 {
            0b11
        } else {
            0b10
        }
    };
    (axis(y.re) << 2) | axis(y.im)
}

pub fn is_pilot(k: usize) -> bool {
    k % PILOT_SPACING == 0
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfdmSymbol {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    pub h: Vec<Complex64>,
    pub pilot_mask: Vec<bool>,
    /// 4-bit label per subcarrier; the transmitted bits.
    pub bits: Vec<u8>,
}

impl OfdmSymbol {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn pilot_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.pilot_mask.iter().enumerate().filter(|(_, p)| **p).map(|(k, _)| k)
    }

    pub fn data_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.pilot_mask.iter().enumerate().filter(|(_, p)| !**p).map(|(k, _)| k)
    }
}

pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// `Y = H X + W` on `N_SUBCARRIERS` subcarriers at the given SNR.
pub fn transmit<R: Rng + ?Sized>(state: &ChannelState, snr_db: f64, rng: &mut R) -> Result<OfdmSymbol> {
    if !(0.0..=25.0).contains(&snr_db) {
        return Err(Error::InvalidInput(format!("SNR {snr_db} dB outside [0, 25]")));
    }
    transmit_with_noise_var(state, noise_variance(snr_db), rng)
}

pub fn transmit_with_noise_var<R: Rng + ?Sized>(
    state: &ChannelState,
    noise_var: f64,
    rng: &mut R,
) -> Result<OfdmSymbol> {
    if !(noise_var >= 0.0) || !noise_var.is_finite() {
        return Err(Error::InvalidInput(format!("noise variance {noise_var}")));
    }
    let n = N_SUBCARRIERS;
    let h = cir_to_freq(state, n)?;
    let mut bits = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut pilot_mask = Vec::with_capacity(n);
    for k in 0..n {
        let pilot = is_pilot(k);
        // Pilots are drawn like data; the receiver knows them through `bits`.
        let label = rng.random_range(0..16u8);
        let xk = qam16_map(label);
        let w = if noise_var > 0.0 {
            complex_normal(rng, noise_var)
        } else {
            Complex64::new(0.0, 0.0)
        };
        bits.push(label);
        x.push(xk);
        y.push(h[k] * xk + w);
        pilot_mask.push(pilot);
    }
    Ok(OfdmSymbol {
        x,
        y,
        h,
        pilot_mask,
        bits,
    })
}

/// `n` independent stationary CIRs of a profile, embedded in `R^{2L}`.
pub fn sample_cirs<R: Rng + ?Sized>(profile: &ChannelProfile, n: usize, rng: &mut R) -> Result<PointCloud> {
    let profile = Arc::new(profile.clone());
    let mut data = Vec::with_capacity(n * 2 * profile.n_taps);
    for _ in 0..n {
        data.extend(ChannelState::stationary(Arc::clone(&profile), rng).to_real());
    }
    PointCloud::from_flat(2 * profile.n_taps, data)
}

/// Writes a CIR trace as CSV: `t, re0..re15, im0..im15`.
pub fn write_cir_trace<W: Write>(mut w: W, states: &[ChannelState]) -> std::io::Result<()> {
    let taps = states.first().map_or(N_TAPS, |s| s.taps.len());
    let mut header = vec!["t".to_string()];
    header.extend((0..taps).map(|l| format!("re{l}")));
    header.extend((0..taps).map(|l| format!("im{l}")));
    writeln!(w, "{}", header.join(","))?;
    for s in states {
        let row: Vec<String> = std::iter::once(s.t.to_string())
            .chain(s.to_real().iter().map(|v| format!("{v:e}")))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn profile_extremes() {
        let inh = make_profile("InH").unwrap();
        assert_eq!(inh.rms_delay_spread, 14e-9);
        let rma = make_profile("RMa").unwrap();
        assert_eq!(rma.rms_delay_spread, 363e-9);
        for name in ProfileName::ALL {
            let p = make_profile(name.as_str()).unwrap();
            assert!((p.tap_powers.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let rms = rms_delay_spread(&p.tap_powers, SAMPLE_PERIOD_S);
            assert!((rms - p.rms_delay_spread).abs() < 1e-9 * p.rms_delay_spread.max(1e-9));
        }
        assert!(matches!(make_profile("LEO"), Err(Error::InvalidProfile(_))));
        assert_eq!("inf-dh".parse::<ProfileName>().unwrap(), ProfileName::InFDH);
    }

    #[test]
    fn symbol_timing() {
        assert!((SYMBOL_DURATION_S - 83.333e-6).abs() < 1e-9);
        assert!((SAMPLE_PERIOD_S - 1.0417e-6).abs() < 1e-9);
    }

    #[test]
    fn bessel_reference_values() {
        assert!((bessel_j0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_j0(1.0) - 0.765_197_686_557_966_6).abs() < 1e-14);
        assert!(bessel_j0(2.404_825_557_695_773).abs() < 1e-14);
        assert!((bessel_j0(5.0) + 0.177_596_771_314_338_3).abs() < 1e-13);
        assert!((bessel_j0(20.0) - 0.167_024_664_340_583).abs() < 1e-10);
        // Both branches agree at the switch.
        assert!((bessel_j0(11.999_999) - bessel_j0(12.0)).abs() < 1e-6);
    }

    #[test]
    fn static_channel_is_frozen() {
        assert_eq!(fading_correlation(0.0, SYMBOL_DURATION_S), RHO_MAX);
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(shift_alpha(10, 1.0, 5), 0.0);
        assert_eq!(shift_alpha(10, 1.0, 10), 0.0);
        assert!((shift_alpha(10, 1.0, 11) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!(shift_alpha(0, 10.0, 1_000_000) < 1.0);
    }

    #[test]
    fn flat_and_delay_channels() {
        let p = Arc::new(make_profile("InH").unwrap());
        let mut s = ChannelState {
            taps: vec![Complex64::new(0.0, 0.0); N_TAPS],
            profile: p,
            t: 0,
        };
        s.taps[0] = Complex64::new(1.0, 0.0);
        let h = cir_to_freq(&s, 64).unwrap();
        assert!(h.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        s.taps[0] = Complex64::new(0.0, 0.0);
        s.taps[1] = Complex64::new(1.0, 0.0);
        let h = cir_to_freq(&s, 64).unwrap();
        for (k, v) in h.iter().enumerate() {
            let expect = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 / 64.0);
            assert!((v - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn gray_round_trip_and_power() {
        let mut power = 0.0;
        for label in 0..16u8 {
            let x = qam16_map(label);
            assert_eq!(qam16_demap(x), label);
            power += x.norm_sqr();
        }
        assert!((power / 16.0 - 1.0).abs() < 1e-12);
        // Neighbouring levels differ in one bit.
        for pair in [[0b00u8, 0b01], [0b01, 0b11], [0b11, 0b10]] {
            assert_eq!((pair[0] ^ pair[1]).count_ones(), 1);
        }
    }

    #[test]
    fn noiseless_flat_link() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Arc::new(make_profile("UMa").unwrap());
        let mut taps = vec![Complex64::new(0.0, 0.0); N_TAPS];
        taps[0] = Complex64::new(1.0, 0.0);
        let s = ChannelState { taps, profile: p, t: 0 };
        let sym = transmit_with_noise_var(&s, 0.0, &mut rng).unwrap();
        assert_eq!(sym.y, sym.x);
        assert_eq!(sym.pilot_indices().count(), 16);
        assert!(sym.pilot_indices().all(|k| k % PILOT_SPACING == 0));
        assert!(transmit(&s, 30.0, &mut rng).is_err());
    }

    #[test]
    fn mixture_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = ChannelState::stationary(Arc::new(make_profile("UMa").unwrap()), &mut rng);
        let b = ChannelState::stationary(Arc::new(make_profile("RMa").unwrap()), &mut rng);
        for _ in 0..100 {
            assert_eq!(sample_shifted(&a, &b, 0.0, &mut rng), a);
            assert_eq!(sample_shifted(&a, &b, 1.0, &mut rng), b);
        }
    }

    #[test]
    fn trace_csv_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = ChannelState::stationary(Arc::new(make_profile("UMi").unwrap()), &mut rng);
        let mut out = Vec::new();
        write_cir_trace(&mut out, &[s.clone(), evolve(&s, &mut rng)]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), 33);
        assert!(lines[2].starts_with("1,"));
    }
}
