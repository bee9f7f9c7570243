//! Multi-seed comparison of evaluation curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{eval_curve, run, MetricsRow, RunConfig};
use crate::error::{ChiError, Result};

/// Rows of one finished run, or why it is missing.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub label: String,
    pub seed: u64,
    pub rows: std::result::Result<Vec<MetricsRow>, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareEntry {
    pub label: String,
    pub seeds: Vec<u64>,
    /// Seeds whose run failed, with the reason.
    pub missing: Vec<(u64, String)>,
    pub episodes: Vec<usize>,
    pub median: Vec<f64>,
    pub q1: Vec<f64>,
    pub q3: Vec<f64>,
    /// Median evaluation return at the last evaluated episode.
    pub final_median: Option<f64>,
    /// First evaluated episode whose median reaches the report threshold.
    pub episodes_to_threshold: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    /// `best - 0.1·|best|` over the entries' final medians.
    pub threshold: Option<f64>,
    pub entries: Vec<CompareEntry>,
}

/// Linear-interpolation quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Aggregate run outcomes per label, preserving first-seen label order.
pub fn summarise(outcomes: &[RunOutcome]) -> CompareReport {
    let mut order: Vec<String> = Vec::new();
    for o in outcomes {
        if !order.contains(&o.label) {
            order.push(o.label.clone());
        }
    }
    let mut entries: Vec<CompareEntry> = order
        .iter()
        .map(|label| {
            let mine: Vec<&RunOutcome> = outcomes.iter().filter(|o| &o.label == label).collect();
            let mut by_episode: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            let mut seeds = Vec::new();
            let mut missing = Vec::new();
            for o in mine {
                match &o.rows {
                    Ok(rows) => {
                        seeds.push(o.seed);
                        for (ep, v) in eval_curve(rows) {
                            by_episode.entry(ep).or_default().push(v);
                        }
                    }
                    Err(e) => missing.push((o.seed, e.clone())),
                }
            }
            let stat = |q: f64| -> Vec<f64> { by_episode.values().filter_map(|v| quantile(v, q)).collect() };
            let median = stat(0.5);
            CompareEntry {
                label: label.clone(),
                seeds,
                missing,
                episodes: by_episode.keys().copied().collect(),
                final_median: median.last().copied(),
                q1: stat(0.25),
                q3: stat(0.75),
                median,
                episodes_to_threshold: None,
            }
        })
        .collect();
    let best = entries
        .iter()
        .filter_map(|e| e.final_median)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    let threshold = best.map(|b| b - 0.1 * b.abs());
    if let Some(t) = threshold {
        for e in entries.iter_mut() {
            e.episodes_to_threshold = e
                .episodes
                .iter()
                .zip(&e.median)
                .find(|(_, m)| **m >= t)
                .map(|(ep, _)| *ep);
        }
    }
    CompareReport { threshold, entries }
}

impl CompareReport {
    pub fn entry(&self, label: &str) -> Option<&CompareEntry> {
        self.entries.iter().find(|e| e.label == label)
    }

    /// Long-format curves: `label,episode,median,q1,q3`.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("label,episode,median,q1,q3\n");
        for e in &self.entries {
            for i in 0..e.episodes.len() {
                let _ = writeln!(out, "{},{},{},{},{}", e.label, e.episodes[i], e.median[i], e.q1[i], e.q3[i]);
            }
        }
        out
    }

    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(out, "threshold: {}", fmt(self.threshold));
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>12} {:>20}",
            "label", "seeds", "final_median", "episodes_to_threshold"
        );
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:<12} {:>6} {:>12} {:>20}",
                e.label,
                e.seeds.len(),
                fmt(e.final_median),
                e.episodes_to_threshold.map_or("never".to_string(), |v| v.to_string())
            );
            for (seed, why) in &e.missing {
                let _ = writeln!(out, "  missing seed {seed}: {why}");
            }
        }
        out
    }
}

/// Run every labelled config under every seed into `root/<label>/seed-<s>`,
/// then summarise. Failed runs are reported as missing.
pub fn compare(configs: &[(String, RunConfig)], seeds: &[u64], root: &Path) -> Result<CompareReport> {
    if configs.is_empty() || seeds.is_empty() {
        return Err(ChiError::Config("compare needs at least one config and one seed".into()));
    }
    let mut outcomes = Vec::new();
    for (label, config) in configs {
        for &seed in seeds {
            let cfg = RunConfig {
                seed,
                output_dir: None,
                ..config.clone()
            };
            let dir = root.join(label).join(format!("seed-{seed}"));
            let rows = run(&cfg, &dir).map(|s| s.rows).map_err(|e| {
                log::warn!("{label} seed {seed} failed: {e}");
                e.to_string()
            });
            outcomes.push(RunOutcome {
                label: label.clone(),
                seed,
                rows,
            });
        }
    }
    let report = summarise(&outcomes);
    fs::create_dir_all(root)?;
    fs::write(root.join("summary.csv"), report.curves_csv())?;
    fs::write(root.join("summary.txt"), report.table())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(evals: &[(usize, f64)]) -> Vec<MetricsRow> {
        evals
            .iter()
            .map(|&(episode, v)| MetricsRow {
                episode,
                train_return: 0.0,
                eval_return: Some(v),
                eval_success: Some(false),
                mean_sigma: None,
                mean_kl: None,
                ensemble_nll: None,
                elbo: 0.0,
                wall_clock_s: None,
            })
            .collect()
    }

    fn outcome(label: &str, seed: u64, evals: &[(usize, f64)]) -> RunOutcome {
        RunOutcome {
            label: label.into(),
            seed,
            rows: Ok(rows(evals)),
        }
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), Some(2.0));
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), Some(2.5));
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), Some(2.0));
        assert_eq!(quantile(&[], 0.5), None);
    }

    #[test]
    fn single_run_reduces_to_its_curve() {
        let report = summarise(&[outcome("chi", 0, &[(5, -3.0), (10, 4.0)])]);
        let e = &report.entries[0];
        assert_eq!(e.episodes, vec![5, 10]);
        assert_eq!(e.median, vec![-3.0, 4.0]);
        assert_eq!(e.q1, e.median);
        assert_eq!(e.q3, e.median);
    }

    #[test]
    fn medians_thresholds_and_missing_runs() {
        let report = summarise(&[
            outcome("a", 0, &[(5, 1.0), (10, 10.0)]),
            outcome("a", 1, &[(5, 2.0), (10, 9.0)]),
            outcome("a", 2, &[(5, 3.0), (10, 8.0)]),
            outcome("b", 0, &[(5, 9.5), (10, 5.0)]),
            RunOutcome {
                label: "b".into(),
                seed: 1,
                rows: Err("diverged".into()),
            },
        ]);
        let a = report.entry("a").unwrap();
        assert_eq!(a.median, vec![2.0, 9.0]);
        assert_eq!(report.threshold, Some(9.0 - 0.9));
        assert_eq!(a.episodes_to_threshold, Some(10));
        let b = report.entry("b").unwrap();
        assert_eq!(b.episodes_to_threshold, Some(5));
        assert_eq!(b.missing, vec![(1, "diverged".to_string())]);
        assert!(report.table().contains("missing seed 1: diverged"));
    }
}
