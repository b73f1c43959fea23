//! Decision rules, confusion counts and micro/macro scores.
//!
//! A class with an empty denominator scores 0 for that quantity. Accuracy
//! is the fraction of correctly labelled samples for multiclass and the
//! pooled fraction of correct per-class decisions for multilabel.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Result, VigError};
use crate::model::Task;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Turns per-class scores into label sets. Multilabel keeps every class
/// with score strictly above `t`; multiclass keeps the argmax, ties going
/// to the lowest index.
pub fn decide_labels(scores: &[Vec<f64>], task: Task, t: f64) -> Vec<Vec<usize>> {
    scores
        .iter()
        .map(|row| match task {
            Task::Multilabel => row.iter().enumerate().filter(|(_, &p)| p > t).map(|(c, _)| c).collect(),
            Task::Multiclass => {
                let mut best = 0;
                for (c, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = c;
                    }
                }
                if row.is_empty() {
                    Vec::new()
                } else {
                    vec![best]
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn add(&mut self, o: &ClassCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

/// Per-class one-vs-rest counts over a set of samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub classes: Vec<ClassCounts>,
    pub samples: u64,
    /// Number of samples whose predicted set equals the true set.
    pub exact: u64,
    pub task: Task,
}

impl ConfusionCounts {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn pooled(&self) -> ClassCounts {
        let mut p = ClassCounts::default();
        self.classes.iter().for_each(|c| p.add(c));
        p
    }

    /// Adds the counts of another shard.
    pub fn merge(&mut self, other: &ConfusionCounts) -> Result<()> {
        if other.classes.len() != self.classes.len() || other.task != self.task {
            return Err(VigError::Data("cannot merge counts of different shapes".into()));
        }
        self.classes.iter_mut().zip(&other.classes).for_each(|(a, b)| a.add(b));
        self.samples += other.samples;
        self.exact += other.exact;
        Ok(())
    }

    pub fn accuracy(&self) -> f64 {
        match self.task {
            Task::Multiclass => ratio(self.exact, self.samples),
            Task::Multilabel => {
                let p = self.pooled();
                ratio(p.tp + p.tn, p.total())
            }
        }
    }
}

pub fn confusion_counts(
    pred: &[Vec<usize>],
    truth: &[Vec<usize>],
    num_classes: usize,
    task: Task,
) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(VigError::Data(format!(
            "{} predictions for {} ground-truth samples",
            pred.len(),
            truth.len()
        )));
    }
    let mut classes = vec![ClassCounts::default(); num_classes];
    let mut exact = 0;
    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
        let mut pm = vec![false; num_classes];
        let mut tm = vec![false; num_classes];
        for (set, mask, what) in [(p, &mut pm, "predicted"), (t, &mut tm, "true")] {
            for &c in set {
                if c >= num_classes {
                    return Err(VigError::Data(format!(
                        "sample {i}: {what} label {c} out of range for {num_classes} classes"
                    )));
                }
                mask[c] = true;
            }
        }
        if pm == tm {
            exact += 1;
        }
        for (c, cc) in classes.iter_mut().enumerate() {
            match (pm[c], tm[c]) {
                (true, true) => cc.tp += 1,
                (true, false) => cc.fp += 1,
                (false, true) => cc.fn_ += 1,
                (false, false) => cc.tn += 1,
            }
        }
    }
    Ok(ConfusionCounts {
        classes,
        samples: pred.len() as u64,
        exact,
        task,
    })
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}


#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// F1 is taken as 2tp / (2tp + fp + fn), the harmonic mean of precision
/// and recall without the extra rounding step.
pub fn class_scores(c: &ClassCounts) -> ClassScores {
    ClassScores {
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        support: c.tp + c.fn_,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    Micro,
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

/// Micro pools counts before dividing; macro averages per-class scores.
pub fn aggregate(counts: &ConfusionCounts, mode: Averaging) -> Scores {
    let accuracy = counts.accuracy();
    match mode {
        Averaging::Micro => {
            let s = class_scores(&counts.pooled());
            Scores {
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
                accuracy,
            }
        }
        Averaging::Macro => {
            let per: Vec<ClassScores> = counts.classes.iter().map(class_scores).collect();
            let n = per.len().max(1) as f64;
            Scores {
                precision: per.iter().map(|s| s.precision).sum::<f64>() / n,
                recall: per.iter().map(|s| s.recall).sum::<f64>() / n,
                f1: per.iter().map(|s| s.f1).sum::<f64>() / n,
                accuracy,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremes {
    pub max_f1: f64,
    pub min_f1: f64,
    pub max_prec: f64,
    pub min_prec: f64,
    pub max_rec: f64,
    pub min_rec: f64,
}

pub fn per_class_extremes(counts: &ConfusionCounts) -> Extremes {
    let per: Vec<ClassScores> = counts.classes.iter().map(class_scores).collect();
    let max = |f: fn(&ClassScores) -> f64| per.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let min = |f: fn(&ClassScores) -> f64| per.iter().map(f).fold(f64::INFINITY, f64::min);
    Extremes {
        max_f1: max(|s| s.f1),
        min_f1: min(|s| s.f1),
        max_prec: max(|s| s.precision),
        min_prec: min(|s| s.precision),
        max_rec: max(|s| s.recall),
        min_rec: min(|s| s.recall),
    }
}

/// Full evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub task: Task,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub micro: Scores,
    pub macro_: Scores,
    pub per_class: Vec<ClassScores>,
    pub extremes: Extremes,
}

impl MetricReport {
    pub fn new(counts: ConfusionCounts, threshold: f64) -> Self {
        MetricReport {
            task: counts.task,
            threshold,
            micro: aggregate(&counts, Averaging::Micro),
            macro_: aggregate(&counts, Averaging::Macro),
            per_class: counts.classes.iter().map(class_scores).collect(),
            extremes: per_class_extremes(&counts),
            counts,
        }
    }

    pub fn from_scores(scores: &[Vec<f64>], truth: &[Vec<usize>], num_classes: usize, task: Task, t: f64) -> Result<Self> {
        let pred = decide_labels(scores, task, t);
        Ok(Self::new(confusion_counts(&pred, truth, num_classes, task)?, t))
    }

    /// Averaging used for the headline scores: macro for multiclass, micro
    /// for multilabel.
    pub fn headline_averaging(&self) -> Averaging {
        match self.task {
            Task::Multiclass => Averaging::Macro,
            Task::Multilabel => Averaging::Micro,
        }
    }

    pub fn headline(&self) -> Scores {
        match self.headline_averaging() {
            Averaging::Macro => self.macro_,
            Averaging::Micro => self.micro,
        }
    }

    /// Headline columns in report order.
    pub fn summary(&self) -> Vec<(&'static str, f64)> {
        let h = self.headline();
        let e = &self.extremes;
        match self.task {
            Task::Multiclass => vec![
                ("F1", h.f1),
                ("Prec", h.precision),
                ("Rec", h.recall),
                ("MaxF1", e.max_f1),
                ("MinF1", e.min_f1),
                ("MaxPrec", e.max_prec),
                ("MinPrec", e.min_prec),
                ("MaxRec", e.max_rec),
                ("MinRec", e.min_rec),
                ("Acc", h.accuracy),
            ],
            Task::Multilabel => vec![
                ("F1", h.f1),
                ("Prec", h.precision),
                ("Rec", h.recall),
                ("Acc", h.accuracy),
            ],
        }
    }

    /// Aligned plain-text table.
    pub fn render_table(&self) -> String {
        let avg = match self.headline_averaging() {
            Averaging::Macro => "macro",
            Averaging::Micro => "micro",
        };
        let mut s = format!(
            "task {}  averaging {avg}  samples {}  threshold {}\n\n",
            self.task, self.counts.samples, self.threshold
        );
        let cols = self.summary();
        let head: Vec<String> = cols.iter().map(|(k, _)| format!("{k:>8}")).collect();
        let vals: Vec<String> = cols.iter().map(|(_, v)| format!("{:>8.2}", 100.0 * v)).collect();
        let _ = writeln!(s, "{}", head.join(" "));
        let _ = writeln!(s, "{}\n", vals.join(" "));
        let _ = writeln!(
            s,
            "{:>6} {:>8} {:>8} {:>8} {:>8} {:>6} {:>6} {:>6} {:>6}",
            "class", "Prec", "Rec", "F1", "support", "tp", "fp", "fn", "tn"
        );
        for (c, (sc, cc)) in self.per_class.iter().zip(&self.counts.classes).enumerate() {
            let _ = writeln!(
                s,
                "{c:>6} {:>8.2} {:>8.2} {:>8.2} {:>8} {:>6} {:>6} {:>6} {:>6}",
                100.0 * sc.precision,
                100.0 * sc.recall,
                100.0 * sc.f1,
                sc.support,
                cc.tp,
                cc.fp,
                cc.fn_,
                cc.tn
            );
        }
        s
    }

    /// `key=value` lines; values are fractions in [0,1].
    pub fn render_kv(&self) -> String {
        let mut s = format!("task={}\nsamples={}\nthreshold={}\n", self.task, self.counts.samples, self.threshold);
        for (k, v) in self.summary() {
            let _ = writeln!(s, "{k}={v}");
        }
        for (prefix, sc) in [("micro", &self.micro), ("macro", &self.macro_)] {
            let _ = writeln!(s, "{prefix}.F1={}", sc.f1);
            let _ = writeln!(s, "{prefix}.Prec={}", sc.precision);
            let _ = writeln!(s, "{prefix}.Rec={}", sc.recall);
        }
        for (c, sc) in self.per_class.iter().enumerate() {
            let _ = writeln!(s, "class.{c}.F1={}", sc.f1);
            let _ = writeln!(s, "class.{c}.Prec={}", sc.precision);
            let _ = writeln!(s, "class.{c}.Rec={}", sc.recall);
        }
        s
    }
}

/// Numeric `key=value` pairs of a key/value report, in file order.
/// Non-numeric values are skipped.
pub fn parse_kv(text: &str) -> Vec<(String, f64)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .filter_map(|(k, v)| v.trim().parse::<f64>().ok().map(|v| (k.trim().to_string(), v)))
        .collect()
}

/// Mean and sample standard deviation of each key over several runs, in
/// the key order of the first run. Keys missing from any run are dropped.
pub fn mean_std(runs: &[Vec<(String, f64)>]) -> Vec<(String, f64, f64)> {
    let Some(first) = runs.first() else { return Vec::new() };
    let maps: Vec<BTreeMap<&str, f64>> = runs
        .iter()
        .map(|r| r.iter().map(|(k, v)| (k.as_str(), *v)).collect())
        .collect();
    first
        .iter()
        .filter_map(|(k, _)| {
            let vals: Vec<f64> = maps.iter().map(|m| m.get(k.as_str()).copied()).collect::<Option<_>>()?;
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            Some((k.clone(), mean, std))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn threshold_is_strict() {
        let d = decide_labels(&[vec![0.7, 0.5, 0.2]], Task::Multilabel, 0.5);
        assert_eq!(d, vec![vec![0]]);
        let d = decide_labels(&[vec![0.1, 0.3]], Task::Multilabel, 0.5);
        assert_eq!(d, vec![Vec::<usize>::new()]);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(decide_labels(&[vec![0.4, 0.4, 0.2]], Task::Multiclass, 0.5), vec![vec![0]]);
    }

    #[test]
    fn hand_enumerated_counts() {
        let c = confusion_counts(&[vec![2, 3]], &[vec![1, 2]], 4, Task::Multilabel).unwrap();
        assert_eq!(c.classes[0], ClassCounts { tp: 0, fp: 0, fn_: 0, tn: 1 });
        assert_eq!(c.classes[1], ClassCounts { tp: 0, fp: 0, fn_: 1, tn: 0 });
        assert_eq!(c.classes[2], ClassCounts { tp: 1, fp: 0, fn_: 0, tn: 0 });
        assert_eq!(c.classes[3], ClassCounts { tp: 0, fp: 1, fn_: 0, tn: 0 });
        let e = confusion_counts(&[vec![]], &[vec![0]], 2, Task::Multilabel).unwrap();
        assert_eq!(e.classes[0].fn_, 1);
    }

    #[test]
    fn out_of_range_label_is_data_error() {
        assert!(matches!(
            confusion_counts(&[vec![5]], &[vec![0]], 3, Task::Multiclass),
            Err(VigError::Data(_))
        ));
    }

    #[test]
    fn pooled_two_one_one() {
        let counts = ConfusionCounts {
            classes: vec![ClassCounts { tp: 2, fp: 1, fn_: 1, tn: 0 }],
            samples: 4,
            exact: 2,
            task: Task::Multilabel,
        };
        let s = aggregate(&counts, Averaging::Micro);
        assert!(close(s.precision, 2.0 / 3.0) && close(s.recall, 2.0 / 3.0) && close(s.f1, 2.0 / 3.0));
    }

    #[test]
    fn macro_and_micro_differ_with_unequal_support() {
        // class 0: 8 samples all right (F1 1); class 1: tp 1, fn 1, fp 1 (F1 0.5)
        let mut truth = vec![vec![0]; 8];
        let mut pred = vec![vec![0]; 8];
        truth.extend([vec![1], vec![1]]);
        pred.extend([vec![1], vec![]]);
        pred[0] = vec![0, 1];
        let c = confusion_counts(&pred, &truth, 2, Task::Multilabel).unwrap();
        let e = per_class_extremes(&c);
        assert!(close(e.max_f1, 1.0) && close(e.min_f1, 0.5));
        assert!(close(aggregate(&c, Averaging::Macro).f1, 0.75));
        // pooled tp 9, fp 1, fn 1
        assert!(close(aggregate(&c, Averaging::Micro).f1, 0.9));
    }

    #[test]
    fn perfect_predictions_score_one() {
        let t = vec![vec![0], vec![1], vec![2], vec![1]];
        let r = MetricReport::new(confusion_counts(&t, &t, 3, Task::Multiclass).unwrap(), 0.5);
        for (_, v) in r.summary() {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn empty_denominators_score_zero() {
        let c = confusion_counts(&[vec![0], vec![0]], &[vec![0], vec![0]], 2, Task::Multiclass).unwrap();
        let s = class_scores(&c.classes[1]);
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn kv_round_trips_through_mean_std() {
        let t = vec![vec![0], vec![1]];
        let r = MetricReport::new(confusion_counts(&t, &t, 2, Task::Multiclass).unwrap(), 0.5);
        let kv = parse_kv(&r.render_kv());
        let ms = mean_std(&[kv.clone(), kv]);
        let f1 = ms.iter().find(|(k, _, _)| k == "F1").unwrap();
        assert_eq!((f1.1, f1.2), (1.0, 0.0));
    }

    #[test]
    fn sample_std_of_three_runs() {
        let runs: Vec<Vec<(String, f64)>> = [1.0, 2.0, 3.0].iter().map(|&v| vec![("F1".to_string(), v)]).collect();
        let ms = mean_std(&runs);
        assert!(close(ms[0].1, 2.0) && close(ms[0].2, 1.0));
    }
}
