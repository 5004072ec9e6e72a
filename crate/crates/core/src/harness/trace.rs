use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names of the per-episode CSV, in order.
pub const CSV_COLUMNS: [&str; 7] = [
    "episode",
    "oracle_value",
    "learner_value",
    "realized_return",
    "cumulative_regret",
    "band_infeasible_count",
    "solver_iters",
];

/// Largest tolerated amount by which a learner may appear to beat the oracle.
pub const GAP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub oracle_value: f64,
    pub learner_value: f64,
    pub realized_return: f64,
    pub cumulative_regret: f64,
    pub band_infeasible_count: usize,
    pub solver_iters: usize,
}

/// Per-episode regret bookkeeping for one learner on one seed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegretTrace {
    pub records: Vec<EpisodeRecord>,
}

impl RegretTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends episode `len() + 1`.
    pub fn push(
        &mut self,
        oracle_value: f64,
        learner_value: f64,
        realized_return: f64,
        band_infeasible_count: usize,
        solver_iters: usize,
    ) -> Result<()> {
        if oracle_value < learner_value - GAP_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "episode {}: learner value {learner_value} exceeds oracle value {oracle_value}",
                self.len() + 1
            )));
        }
        let cumulative_regret = self.final_regret() + (oracle_value - learner_value);
        self.records.push(EpisodeRecord {
            episode: self.len() + 1,
            oracle_value,
            learner_value,
            realized_return,
            cumulative_regret,
            band_infeasible_count,
            solver_iters,
        });
        Ok(())
    }

    pub fn final_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cumulative_regret)
    }

    /// Cumulative regret after episode `t` (1-based); 0 for `t = 0`.
    pub fn regret_at(&self, t: usize) -> Option<f64> {
        match t {
            0 => Some(0.0),
            _ => self.records.get(t - 1).map(|r| r.cumulative_regret),
        }
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(CSV_COLUMNS)?;
        for r in &self.records {
            writer.write_record([
                r.episode.to_string(),
                format_significant(r.oracle_value),
                format_significant(r.learner_value),
                format_significant(r.realized_return),
                format_significant(r.cumulative_regret),
                r.band_infeasible_count.to_string(),
                r.solver_iters.to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Writes `trace` to `path` as CSV.
pub fn emit_csv(trace: &RegretTrace, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    trace.write_csv(std::io::BufWriter::new(file))
}

/// Positional decimal notation with 12 significant digits.
pub fn format_significant(value: f64) -> String {
    const DIGITS: usize = 12;
    if !value.is_finite() {
        return value.to_string();
    }
    // let the scientific formatter do the rounding, then move the point
    let sci = format!("{:.*e}", DIGITS - 1, value);
    let (mantissa, exponent) = sci.split_once('e').expect("scientific format has an exponent");
    let exponent: i32 = exponent.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    if digits.bytes().all(|b| b == b'0') {
        return format!("0.{}", "0".repeat(DIGITS - 1));
    }
    let body = if exponent < 0 {
        format!("0.{}{}", "0".repeat((-exponent - 1) as usize), digits)
    } else if exponent as usize >= DIGITS - 1 {
        format!("{}{}", digits, "0".repeat(exponent as usize + 1 - DIGITS))
    } else {
        let split = exponent as usize + 1;
        format!("{}.{}", &digits[..split], &digits[split..])
    };
    if negative {
        format!("-{body}")
    } else {
        body
    }
}

/// Mean and standard error of cumulative regret at one episode index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretCheckpoint {
    pub episode: usize,
    pub mean: f64,
    pub standard_error: f64,
}

/// Aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub learner: String,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub final_regret_mean: f64,
    pub final_regret_standard_error: f64,
    pub mean_infeasible_rows: f64,
    /// Checkpoints at powers of two, plus the final episode.
    pub checkpoints: Vec<RegretCheckpoint>,
}

/// Sample mean and standard error (zero for a single sample).
pub fn mean_and_standard_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl Summary {
    pub fn from_traces(learner: &str, traces: &[(u64, RegretTrace)]) -> Result<Self> {
        let episodes = traces.first().map_or(0, |(_, t)| t.len());
        if traces.iter().any(|(_, t)| t.len() != episodes) {
            return Err(Error::InvalidArgument("traces have different lengths".into()));
        }
        let mut marks: Vec<usize> = std::iter::successors(Some(1usize), |&t| t.checked_mul(2))
            .take_while(|&t| t <= episodes)
            .collect();
        if marks.last() != Some(&episodes) && episodes > 0 {
            marks.push(episodes);
        }
        let checkpoints = marks
            .into_iter()
            .map(|episode| {
                let values: Vec<f64> = traces.iter().map(|(_, t)| t.regret_at(episode).unwrap_or(f64::NAN)).collect();
                let (mean, standard_error) = mean_and_standard_error(&values);
                RegretCheckpoint { episode, mean, standard_error }
            })
            .collect();
        let finals: Vec<f64> = traces.iter().map(|(_, t)| t.final_regret()).collect();
        let (final_regret_mean, final_regret_standard_error) = mean_and_standard_error(&finals);
        let infeasible: f64 = traces
            .iter()
            .flat_map(|(_, t)| t.records.iter().map(|r| r.band_infeasible_count as f64))
            .sum();
        Ok(Self {
            learner: learner.to_string(),
            seeds: traces.iter().map(|(s, _)| *s).collect(),
            episodes,
            final_regret_mean,
            final_regret_standard_error,
            mean_infeasible_rows: infeasible / (traces.len() * episodes.max(1)) as f64,
            checkpoints,
        })
    }

    /// Mean cumulative regret at a recorded checkpoint.
    pub fn regret_at(&self, episode: usize) -> Option<f64> {
        self.checkpoints.iter().find(|c| c.episode == episode).map(|c| c.mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_significant(0.0), "0.00000000000");
        assert_eq!(format_significant(-0.0), "0.00000000000");
        assert_eq!(format_significant(1.0), "1.00000000000");
        assert_eq!(format_significant(-2.5), "-2.50000000000");
        assert_eq!(format_significant(123.456), "123.456000000");
        assert_eq!(format_significant(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_significant(0.00123), "0.00123000000000");
        assert_eq!(format_significant(1e13), "10000000000000");
        // rounding carries into a new leading digit
        assert_eq!(format_significant(9.9999999999996), "10.0000000000");
    }

    #[test]
    fn formatted_values_parse_back_closely() {
        for v in [std::f64::consts::PI, 1e-7 * std::f64::consts::E, 4321.123456789, -0.5] {
            let back: f64 = format_significant(v).parse().unwrap();
            assert!((back - v).abs() <= 1e-11 * v.abs());
        }
    }

    #[test]
    fn push_accumulates_and_guards_gap_sign() {
        let mut trace = RegretTrace::new();
        trace.push(2.0, 1.5, 1.0, 0, 3).unwrap();
        trace.push(2.0, 2.0 + 1e-13, 2.0, 1, 0).unwrap();
        assert!((trace.final_regret() - 0.5 + 1e-13).abs() < 1e-15);
        assert_eq!(trace.records[1].episode, 2);
        assert!(trace.push(1.0, 1.1, 1.0, 0, 0).is_err());
        assert_eq!(trace.regret_at(0), Some(0.0));
        assert_eq!(trace.regret_at(3), None);
    }

    #[test]
    fn csv_shape() {
        let mut trace = RegretTrace::new();
        for i in 0..3 {
            trace.push(1.0, 0.5, i as f64, 0, 2).unwrap();
        }
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert_eq!(lines[3], "3,1.00000000000,0.500000000000,2.00000000000,1.50000000000,0,2");
    }

    #[test]
    fn summary_checkpoints_and_standard_error() {
        let mut a = RegretTrace::new();
        let mut b = RegretTrace::new();
        for _ in 0..5 {
            a.push(1.0, 0.0, 0.0, 0, 0).unwrap();
            b.push(1.0, 0.5, 0.0, 1, 0).unwrap();
        }
        let summary = Summary::from_traces("x", &[(1, a), (2, b)]).unwrap();
        let marks: Vec<usize> = summary.checkpoints.iter().map(|c| c.episode).collect();
        assert_eq!(marks, vec![1, 2, 4, 5]);
        assert_eq!(summary.final_regret_mean, 3.75);
        // two samples 5 and 2.5: sd = 1.7678, se = sd / √2 = 1.25
        assert!((summary.final_regret_standard_error - 1.25).abs() < 1e-12);
        assert_eq!(summary.mean_infeasible_rows, 0.5);
        assert_eq!(summary.regret_at(4), Some(3.0));
    }
}
