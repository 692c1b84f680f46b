//! Evaluation (accuracy, macro-F1, cross-entropy), loss-trend diagnostics,
//! and CSV export of per-round history.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, QeflError, Result};
use crate::nn::{argmax, logits, softmax_cross_entropy, ParamVector, QennArchitecture};
use crate::privacy::PrivacyReport;

pub const METRICS_CSV_HEADER: &str = "round,accuracy,macro_f1,mean_loss,epsilon_total";
pub const PRIVACY_CSV_HEADER: &str = "round,delta_sensitivity,epsilon_round,epsilon_total";

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n_classes + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes + predicted]
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n_classes).map(|c| self.get(c, c)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.correct() as f64 / t as f64,
        }
    }

    /// Per-class F1 averaged without weights. A class with no true and no
    /// predicted instances scores 0 and still counts.
    pub fn macro_f1(&self) -> f64 {
        let c = self.n_classes;
        if c == 0 {
            return 0.0;
        }
        let sum: f64 = (0..c)
            .map(|k| {
                let tp = self.get(k, k) as f64;
                let actual: u64 = (0..c).map(|p| self.get(k, p)).sum();
                let predicted: u64 = (0..c).map(|t| self.get(t, k)).sum();
                let denom = (actual + predicted) as f64;
                if denom == 0.0 {
                    0.0
                } else {
                    2.0 * tp / denom
                }
            })
            .sum();
        sum / c as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub mean_loss: f64,
    pub confusion: ConfusionCounts,
}

pub fn evaluate(
    arch: &QennArchitecture,
    params: &ParamVector,
    data: &Dataset,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(QeflError::EmptyDataset);
    }
    let mut confusion = ConfusionCounts::new(arch.output_dim());
    let mut total_loss = 0.0;
    for ex in data.examples() {
        let l = logits(arch, params, &ex.features)?;
        total_loss += softmax_cross_entropy(&l, ex.label)?.0;
        confusion.record(ex.label, argmax(&l));
    }
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        macro_f1: confusion.macro_f1(),
        mean_loss: total_loss / data.len() as f64,
        confusion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub mean_loss: f64,
    pub epsilon_total: f64,
}

impl RoundMetrics {
    pub fn from_evaluation(round: usize, eval: &Evaluation, epsilon_total: f64) -> Self {
        Self {
            round,
            accuracy: eval.accuracy,
            macro_f1: eval.macro_f1,
            mean_loss: eval.mean_loss,
            epsilon_total,
        }
    }

    /// `round=<r> acc=<a> loss=<l>`
    pub fn progress_line(&self) -> String {
        format!(
            "round={} acc={:.6} loss={:.6}",
            self.round, self.accuracy, self.mean_loss
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrendResult {
    Pass,
    /// 1-based round at which the moving average rose by more than the slack.
    Fail {
        round: usize,
    },
    /// Fewer values than the window.
    NotApplicable,
}

impl TrendResult {
    pub fn passed(self) -> bool {
        self == TrendResult::Pass
    }
}

/// Moving average over `window` values must never rise by more than `slack`
/// from one round to the next, starting once the first full window is available.
pub fn trend_check(losses: &[f64], window: usize, slack: f64) -> Result<TrendResult> {
    if window == 0 {
        return Err(invalid("window", "must be at least 1"));
    }
    if losses.len() < window {
        return Ok(TrendResult::NotApplicable);
    }
    let averages: Vec<f64> = losses
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect();
    for (i, pair) in averages.windows(2).enumerate() {
        if pair[1] - pair[0] > slack {
            return Ok(TrendResult::Fail {
                round: window + i + 1,
            });
        }
    }
    Ok(TrendResult::Pass)
}

pub fn write_metrics_csv<W: Write>(history: &[RoundMetrics], mut out: W) -> Result<()> {
    if history.is_empty() {
        return Err(invalid("history", "nothing to export"));
    }
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for m in history {
        writeln!(
            out,
            "{},{},{},{},{}",
            m.round, m.accuracy, m.macro_f1, m.mean_loss, m.epsilon_total
        )?;
    }
    Ok(())
}

/// Metrics history as CSV bytes.
pub fn export_csv(history: &[RoundMetrics]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_metrics_csv(history, &mut buf)?;
    Ok(buf)
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<RoundMetrics>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_CSV_HEADER) {
        return Err(invalid("csv", "missing or unexpected header"));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(invalid("csv", format!("expected 5 columns in `{line}`")));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| invalid("csv", format!("`{s}`: {e}")))
            };
            Ok(RoundMetrics {
                round: f[0]
                    .parse()
                    .map_err(|e| invalid("csv", format!("`{}`: {e}", f[0])))?,
                accuracy: num(f[1])?,
                macro_f1: num(f[2])?,
                mean_loss: num(f[3])?,
                epsilon_total: num(f[4])?,
            })
        })
        .collect()
}

pub fn write_privacy_csv<W: Write>(reports: &[PrivacyReport], mut out: W) -> Result<()> {
    writeln!(out, "{PRIVACY_CSV_HEADER}")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{}",
            r.round, r.sensitivity, r.epsilon_round, r.epsilon_total
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;
    use crate::nn::{pack, LayerParams};
    use proptest::prelude::*;

    fn confusion_from(pairs: &[(usize, usize)], c: usize) -> ConfusionCounts {
        let mut m = ConfusionCounts::new(c);
        for &(t, p) in pairs {
            m.record(t, p);
        }
        m
    }

    #[test]
    fn perfect_predictions() {
        let m = confusion_from(&[(0, 0), (1, 1), (0, 0), (1, 1)], 2);
        assert_eq!(m.accuracy(), 1.0);
        assert_eq!(m.macro_f1(), 1.0);
    }

    #[test]
    fn constant_predictor_on_balanced_binary() {
        // class 0: P = 0.5, R = 1 -> F1 = 2/3; class 1 never predicted -> 0
        let m = confusion_from(&[(0, 0), (0, 0), (1, 0), (1, 0)], 2);
        assert_eq!(m.accuracy(), 0.5);
        assert!((m.macro_f1() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_counts_as_zero() {
        let m = confusion_from(&[(0, 0), (1, 1)], 3);
        assert!((m.macro_f1() - 2.0 / 3.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn accuracy_and_f1_invariants(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let m = confusion_from(&pairs, 4);
            let correct = pairs.iter().filter(|(t, p)| t == p).count();
            prop_assert_eq!(m.accuracy(), correct as f64 / pairs.len() as f64);
            let f1 = m.macro_f1();
            prop_assert!((0.0..=1.0).contains(&f1));
            let diagonal = correct == pairs.len();
            let all_present = (0..4).all(|c| pairs.iter().any(|(t, _)| *t == c));
            prop_assert_eq!(f1 == 1.0, diagonal && all_present);
        }
    }

    #[test]
    fn evaluate_uses_argmax_with_low_index_ties() {
        // Zero network: logits are all zero, so class 0 is always predicted.
        let arch = QennArchitecture::new(1, vec![1], 2).unwrap();
        let params = pack(&[
            LayerParams {
                weights: vec![0.0],
                rows: 1,
                cols: 1,
                bias: vec![0.0],
            },
            LayerParams {
                weights: vec![0.0, 0.0],
                rows: 2,
                cols: 1,
                bias: vec![0.0, 0.0],
            },
        ]);
        let data = Dataset::new(
            vec![
                Example {
                    features: vec![0.1],
                    label: 0,
                },
                Example {
                    features: vec![0.2],
                    label: 1,
                },
            ],
            1,
            2,
        )
        .unwrap();
        let e = evaluate(&arch, &params, &data).unwrap();
        assert_eq!(e.confusion.get(1, 0), 1);
        assert_eq!(e.accuracy, 0.5);
        assert!((e.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert!((e.mean_loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(evaluate(&arch, &params, &data).unwrap(), e);
        let empty = Dataset::new(vec![], 1, 2).unwrap();
        assert!(evaluate(&arch, &params, &empty).is_err());
    }

    #[test]
    fn trend_cases() {
        assert_eq!(
            trend_check(&[1.0, 0.8, 0.5, 0.1], 2, 0.0).unwrap(),
            TrendResult::Pass
        );
        assert_eq!(
            trend_check(&[1.0, 0.5, 0.9], 1, 0.1).unwrap(),
            TrendResult::Fail { round: 3 }
        );
        assert_eq!(trend_check(&[0.3; 8], 3, 0.0).unwrap(), TrendResult::Pass);
        assert_eq!(
            trend_check(&[0.3; 2], 3, 0.0).unwrap(),
            TrendResult::NotApplicable
        );
        assert!(trend_check(&[0.3], 0, 0.0).is_err());
        // window 2: averages 0.75, 0.65, 1.0 -> rise at round 4
        assert_eq!(
            trend_check(&[1.0, 0.5, 0.8, 1.2], 2, 0.1).unwrap(),
            TrendResult::Fail { round: 4 }
        );
    }

    fn sample_history() -> Vec<RoundMetrics> {
        vec![
            RoundMetrics {
                round: 1,
                accuracy: 0.7,
                macro_f1: 0.69,
                mean_loss: 0.6123456789012345,
                epsilon_total: 0.5,
            },
            RoundMetrics {
                round: 2,
                accuracy: 292.0 / 300.0,
                macro_f1: 0.97,
                mean_loss: 0.1,
                epsilon_total: f64::INFINITY,
            },
        ]
    }

    #[test]
    fn csv_layout() {
        let bytes = export_csv(&sample_history()[..1]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.ends_with('\n'));
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], METRICS_CSV_HEADER);
        assert!(export_csv(&[]).is_err());
    }

    #[test]
    fn csv_round_trips() {
        let history = sample_history();
        let text = String::from_utf8(export_csv(&history).unwrap()).unwrap();
        assert!(text.lines().all(|l| l.split(',').count() == 5));
        let parsed = parse_metrics_csv(&text).unwrap();
        assert_eq!(parsed, history);
    }

    #[test]
    fn progress_line_layout() {
        let m = sample_history()[0];
        assert_eq!(m.progress_line(), "round=1 acc=0.700000 loss=0.612346");
    }
}
