use proptest::prelude::*;
use tri_core::detectors::{
    find, first_crossing, scan_alarms, trailing_mean, warning_lead, AlarmThresholds, DeploymentSeries, Detector,
};
use tri_core::tri::{FallbackFlags, TriReferences, TriSample};

fn sample(t: u64, tri: f64) -> TriSample {
    TriSample {
        t,
        phi_ls: 1.0,
        phi_pm: 1.0,
        phi_cm: 1.0,
        phi_cm_smoothed: 1.0,
        tri,
        beta0: 1.0,
        beta1: 0.0,
        gap: 1.0,
        curv_norm: 0.0,
        fallback: FallbackFlags::default(),
    }
}

fn refs() -> TriReferences {
    TriReferences {
        beta0_ref: 1.0,
        beta1_ref: 0.0,
        beta0_at_0: 1.0,
        phi_cm_baseline: 1.0,
        sigma_g: 1.0,
        val_loss_ref: 1.0,
        sigma_h: 1.0,
    }
}

/// A worked deployment: shift at 100, TRI drops at 120, BER climbs at 150,
/// the gradient spikes once before the shift and again at 130.
#[test]
fn worked_deployment() {
    let t0 = 50;
    let n = 200;
    let mut s = DeploymentSeries {
        t0,
        ber: vec![0.0; n],
        grad_norm: vec![1.0; n],
        val_loss: vec![1.0; n],
        tri: (0..20).map(|i| sample(t0 + 10 * i, if t0 + 10 * i >= 120 { 0.5 } else { 0.95 })).collect(),
    };
    for i in 0..n {
        let t = t0 + i as u64;
        if t >= 150 {
            s.ber[i] = 0.2;
        }
        if t == 80 || t == 130 {
            s.grad_norm[i] = 10.0;
        }
    }
    let th = AlarmThresholds {
        ber_window: 1,
        ..AlarmThresholds::default()
    };
    let recs = scan_alarms(&s, &refs(), &th, 100);
    let tri = find(&recs, Detector::Tri).unwrap();
    let ber = find(&recs, Detector::Ber).unwrap();
    let grad = find(&recs, Detector::GradNorm).unwrap();
    let val = find(&recs, Detector::ValLoss).unwrap();
    assert_eq!(tri.alarm_t, Some(120));
    assert_eq!(ber.alarm_t, Some(150));
    assert_eq!((grad.alarm_t, grad.false_alarms), (Some(130), 1));
    assert_eq!(val.alarm_t, None);
    assert_eq!(warning_lead(tri, ber), Some(30));
    assert_eq!(warning_lead(grad, ber), Some(20));
    assert_eq!(warning_lead(val, ber), None);
}

#[test]
fn ber_alarm_uses_the_trailing_window() {
    let mut s = DeploymentSeries {
        t0: 0,
        ber: vec![0.0; 100],
        ..DeploymentSeries::default()
    };
    for v in s.ber.iter_mut().skip(40) {
        *v = 0.03;
    }
    let recs = scan_alarms(&s, &refs(), &AlarmThresholds::default(), 0);
    // 50-symbol window: mean first exceeds 0.01 once 17 bad symbols are in it.
    assert_eq!(find(&recs, Detector::Ber).unwrap().alarm_t, Some(56));
}

proptest! {
    #[test]
    fn trailing_mean_matches_brute_force(v in prop::collection::vec(-5.0f64..5.0, 0..60), w in 1usize..12) {
        let got = trailing_mean(&v, w);
        for i in 0..v.len() {
            let lo = (i + 1).saturating_sub(w);
            let want = v[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64;
            prop_assert!((got[i] - want).abs() <= 1e-9);
        }
    }

    #[test]
    fn first_crossing_counts_rising_edges(flags in prop::collection::vec(any::<bool>(), 0..80), t_star in 0u64..80) {
        let (alarm, fa) = first_crossing(flags.iter().enumerate().map(|(t, &f)| (t as u64, f)), t_star);
        let want_alarm = flags.iter().enumerate().find(|(t, &f)| f && *t as u64 >= t_star).map(|(t, _)| t as u64);
        prop_assert_eq!(alarm, want_alarm);
        let edges = (0..(t_star as usize).min(flags.len()))
            .filter(|&t| flags[t] && (t == 0 || !flags[t - 1]))
            .count();
        prop_assert_eq!(fa, edges);
    }
}
