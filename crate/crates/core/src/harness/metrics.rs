//! Per-episode metrics rows and their CSV form.
//!
//! One header line, then one comma-separated row per episode. Absent values
//! are written as `NA`. Floats use the shortest representation that parses
//! back to the same bits.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{ChiError, Result};
use crate::tensor::DiagGaussian;

pub const HEADER: &str =
    "episode,train_return,eval_return,eval_success,mean_sigma,mean_kl,ensemble_nll,elbo,wall_clock_s";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    /// 1-based training episode index.
    pub episode: usize,
    pub train_return: f64,
    pub eval_return: Option<f64>,
    pub eval_success: Option<bool>,
    /// Mean amortised σ over visited states.
    pub mean_sigma: Option<f64>,
    /// Mean per-step `KL(refined ‖ init)`.
    pub mean_kl: Option<f64>,
    /// Ensemble NLL of the episode's transitions before training on them.
    pub ensemble_nll: Option<f64>,
    pub elbo: f64,
    pub wall_clock_s: Option<f64>,
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "NA".to_string(), T::to_string)
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        [
            self.episode.to_string(),
            self.train_return.to_string(),
            opt(&self.eval_return),
            opt(&self.eval_success.map(u8::from)),
            opt(&self.mean_sigma),
            opt(&self.mean_kl),
            opt(&self.ensemble_nll),
            self.elbo.to_string(),
            opt(&self.wall_clock_s),
        ]
        .join(",")
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || ChiError::Metrics(format!("malformed row {line:?}"));
        let cols: Vec<&str> = line.trim_end().split(',').collect();
        if cols.len() != HEADER.split(',').count() {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let maybe = |s: &str| if s == "NA" { Ok(None) } else { num(s).map(Some) };
        Ok(Self {
            episode: cols[0].parse().map_err(|_| bad())?,
            train_return: num(cols[1])?,
            eval_return: maybe(cols[2])?,
            eval_success: match cols[3] {
                "NA" => None,
                "0" => Some(false),
                "1" => Some(true),
                _ => return Err(bad()),
            },
            mean_sigma: maybe(cols[4])?,
            mean_kl: maybe(cols[5])?,
            ensemble_nll: maybe(cols[6])?,
            elbo: num(cols[7])?,
            wall_clock_s: maybe(cols[8])?,
        })
    }
}

/// Append-only metrics sink; every row is flushed as it is written.
pub struct MetricsWriter {
    file: File,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path)?;
        writeln!(file, "{HEADER}")?;
        file.flush()?;
        Ok(Self { file })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.file, "{}", row.to_csv())?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim_end) != Some(HEADER) {
        return Err(ChiError::Metrics(format!("{} lacks the metrics header", path.display())));
    }
    lines
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| MetricsRow::parse(&l?))
        .collect()
}

/// Sum of rewards plus the sum of per-step acting entropies.
pub fn elbo_estimate(rewards: &[f64], acting: &[DiagGaussian]) -> Result<f64> {
    if rewards.len() != acting.len() {
        return Err(ChiError::DimensionMismatch {
            context: "elbo trajectory",
            expected: rewards.len(),
            got: acting.len(),
        });
    }
    Ok(rewards.iter().sum::<f64>() + acting.iter().map(DiagGaussian::entropy).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gaussian_with_entropy(h: f64) -> DiagGaussian {
        let log_std = h - 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        DiagGaussian::new(vec![0.0], vec![log_std]).unwrap()
    }

    #[test]
    fn elbo_examples() {
        let acting = [gaussian_with_entropy(0.25), gaussian_with_entropy(0.25)];
        assert!((elbo_estimate(&[1.0, 2.0], &acting).unwrap() - 3.5).abs() < 1e-12);
        assert_eq!(elbo_estimate(&[], &[]).unwrap(), 0.0);
        assert!(elbo_estimate(&[1.0], &[]).is_err());
    }

    #[test]
    fn absent_values_are_na() {
        let row = MetricsRow {
            episode: 3,
            train_return: -50.0,
            eval_return: None,
            eval_success: None,
            mean_sigma: None,
            mean_kl: None,
            ensemble_nll: None,
            elbo: -1.5,
            wall_clock_s: None,
        };
        assert_eq!(row.to_csv(), "3,-50,NA,NA,NA,NA,NA,-1.5,NA");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        assert!(read_metrics(&path).unwrap().is_empty());
        let row = MetricsRow {
            episode: 1,
            train_return: 0.1 + 0.2,
            eval_return: Some(-3.25),
            eval_success: Some(true),
            mean_sigma: Some(0.5),
            mean_kl: Some(1e-300),
            ensemble_nll: Some(-2.0),
            elbo: 7.0,
            wall_clock_s: None,
        };
        w.append(&row).unwrap();
        assert_eq!(read_metrics(&path).unwrap(), vec![row]);
    }

    proptest! {
        #[test]
        fn rows_parse_back_losslessly(
            ep in 0usize..10_000,
            vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 6),
            mask in prop::collection::vec(any::<bool>(), 6),
        ) {
            let pick = |i: usize| mask[i].then_some(vals[i]);
            let row = MetricsRow {
                episode: ep,
                train_return: vals[0],
                eval_return: pick(1),
                eval_success: pick(1).map(|v| v > 0.0),
                mean_sigma: pick(2),
                mean_kl: pick(3),
                ensemble_nll: pick(4),
                elbo: vals[5],
                wall_clock_s: pick(5),
            };
            let back = MetricsRow::parse(&row.to_csv()).unwrap();
            prop_assert_eq!(back.to_csv(), row.to_csv());
            prop_assert_eq!(back, row);
        }
    }
}
