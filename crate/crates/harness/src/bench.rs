//! Parallel trial execution and the lead summary.
//!
//! Trials are independent, so a fixed pool of workers pulls `(scenario,
//! trial)` jobs from a shared counter. Aggregation happens on the calling
//! thread once every worker has joined.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{HarnessError, Result};
use crate::trial::{run_trial, CalibrationCache, TrialResult};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub trials: u64,
    /// Zero means one worker per available core.
    pub workers: usize,
    /// Per-trial JSON is written under `<out>/<scenario>/<trial>.json`.
    pub out: Option<PathBuf>,
}

pub fn worker_count(requested: usize) -> usize {
    if requested > 0 {
        requested
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}

pub fn trial_path(out: &Path, scenario: &str, trial: u64) -> PathBuf {
    out.join(scenario).join(format!("{trial}.json"))
}

pub fn write_trial(out: &Path, r: &TrialResult) -> Result<()> {
    let path = trial_path(out, &r.scenario, r.trial);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_vec(r)?)?;
    Ok(())
}

/// Every `*.json` trial below `dir`, sorted by scenario then trial.
pub fn load_results(dir: &Path) -> Result<Vec<TrialResult>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let sub = entry?.path();
        if !sub.is_dir() {
            continue;
        }
        for f in fs::read_dir(&sub)? {
            let p = f?.path();
            if p.extension().is_some_and(|e| e == "json") {
                out.push(serde_json::from_slice::<TrialResult>(&fs::read(&p)?)?);
            }
        }
    }
    out.sort_by(|a, b| a.scenario.cmp(&b.scenario).then(a.trial.cmp(&b.trial)));
    Ok(out)
}

/// Runs `opts.trials` trials of every scenario. Results come back in
/// scenario order, then trial order, whatever order the workers finished in.
pub fn run_scenarios(
    scenarios: &[ScenarioConfig],
    opts: &RunOptions,
    cache: &CalibrationCache,
) -> Result<Vec<TrialResult>> {
    let jobs: Vec<(usize, u64)> = scenarios
        .iter()
        .enumerate()
        .flat_map(|(i, _)| (0..opts.trials).map(move |t| (i, t)))
        .collect();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<TrialResult>>> = Mutex::new(vec![None; jobs.len()]);
    let first_error: Mutex<Option<HarnessError>> = Mutex::new(None);
    let workers = worker_count(opts.workers).min(jobs.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(i, trial)) = jobs.get(k) else { break };
                if first_error.lock().expect("error slot").is_some() {
                    break;
                }
                let cfg = &scenarios[i];
                let outcome = cache.get(cfg).and_then(|cal| run_trial(cfg, &cal, trial)).and_then(|r| {
                    if let Some(out) = &opts.out {
                        write_trial(out, &r)?;
                    }
                    Ok(r)
                });
                match outcome {
                    Ok(r) => {
                        log::info!(
                            "{} trial {}: tri lead {:?}, bursts {}",
                            r.scenario,
                            r.trial,
                            r.leads.tri,
                            r.bursts.len()
                        );
                        slots.lock().expect("result slots")[k] = Some(r);
                    }
                    Err(e) => {
                        first_error.lock().expect("error slot").get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });

    if let Some(e) = first_error.into_inner().expect("error slot") {
        return Err(e);
    }
    Ok(slots.into_inner().expect("result slots").into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
}

impl Stat {
    pub fn of<I: IntoIterator<Item = f64>>(values: I) -> Self {
        let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Self::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self {
            mean: Some(mean),
            std: Some(var.sqrt()),
            n: v.len(),
        }
    }

    fn fmt(&self) -> String {
        match (self.mean, self.std) {
            (Some(m), Some(s)) => format!("{m:.1} ± {s:.1} (n={})", self.n),
            _ => "n/a".into(),
        }
    }
}

/// One row of the lead table. Leads are in symbols, positive when the
/// detector fired before the BER alarm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub mode: String,
    pub lambda: f64,
    pub trials: usize,
    pub completed: usize,
    pub tri_lead: Stat,
    pub grad_lead: Stat,
    pub val_lead: Stat,
    pub tri_false_alarms: Stat,
    pub post_adapt_tri: Stat,
    pub min_post_shift_tri: Stat,
    /// Why a lead column is empty, if one is.
    pub note: String,
}

pub fn summarize(results: &[TrialResult]) -> Vec<SummaryRow> {
    let mut order: Vec<&str> = Vec::new();
    for r in results {
        if !order.contains(&r.scenario.as_str()) {
            order.push(&r.scenario);
        }
    }
    order
        .into_iter()
        .map(|name| {
            let rs: Vec<&TrialResult> = results.iter().filter(|r| r.scenario == name).collect();
            let done: Vec<&&TrialResult> = rs.iter().filter(|r| r.completed()).collect();
            let tri_lead = Stat::of(done.iter().filter_map(|r| r.leads.tri).map(|l| l as f64));
            let mut notes = Vec::new();
            if done.len() < rs.len() {
                notes.push(format!("{} trials failed", rs.len() - done.len()));
            }
            if tri_lead.n == 0 {
                let ber_fired = done.iter().any(|r| r.alarm(tri_core::detectors::Detector::Ber).is_some());
                notes.push(if ber_fired {
                    "no TRI alarm after the shift".to_string()
                } else {
                    "no BER alarm after the shift".to_string()
                });
            }
            SummaryRow {
                scenario: name.to_string(),
                mode: rs[0].mode.to_string(),
                lambda: rs[0].lambda,
                trials: rs.len(),
                completed: done.len(),
                tri_lead,
                grad_lead: Stat::of(done.iter().filter_map(|r| r.leads.grad_norm).map(|l| l as f64)),
                val_lead: Stat::of(done.iter().filter_map(|r| r.leads.val_loss).map(|l| l as f64)),
                tri_false_alarms: Stat::of(done.iter().filter_map(|r| {
                    tri_core::detectors::find(&r.alarms, tri_core::detectors::Detector::Tri)
                        .map(|a| a.false_alarms as f64)
                })),
                post_adapt_tri: Stat::of(done.iter().filter_map(|r| r.post_adapt_tri)),
                min_post_shift_tri: Stat::of(done.iter().filter_map(|r| r.min_post_shift_tri)),
                note: notes.join("; "),
            }
        })
        .collect()
}

const SUMMARY_HEADER: [&str; 12] = [
    "scenario",
    "mode",
    "lambda",
    "trials",
    "completed",
    "tri_lead",
    "grad_norm_lead",
    "val_loss_lead",
    "tri_false_alarms",
    "post_adapt_tri",
    "min_post_shift_tri",
    "note",
];

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        let fixed = |s: &Stat| match (s.mean, s.std) {
            (Some(m), Some(sd)) => format!("{m:.3} ± {sd:.3}"),
            _ => String::new(),
        };
        w.write_record([
            r.scenario.clone(),
            r.mode.clone(),
            r.lambda.to_string(),
            r.trials.to_string(),
            r.completed.to_string(),
            r.tri_lead.fmt(),
            r.grad_lead.fmt(),
            r.val_lead.fmt(),
            fixed(&r.tri_false_alarms),
            fixed(&r.post_adapt_tri),
            fixed(&r.min_post_shift_tri),
            r.note.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
