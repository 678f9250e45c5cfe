//! Confusion matrices, error rates, ROC/AUC, per-class AP/AR and model
//! evaluation reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_atomic, FrameSample};
use crate::error::{Error, Result};
use crate::imaging::PreprocessParams;
use crate::loader::ImageLoader;
use crate::model::Model;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    /// Actual negatives, `TN + FP`.
    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    /// Actual positives, `TP + FN`.
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn total(&self) -> u64 {
        self.negatives() + self.positives()
    }

    /// `FP / N`, or `None` without negatives.
    pub fn fp_rate(&self) -> Option<f64> {
        ratio(self.fp, self.negatives())
    }

    /// `FN / P`, or `None` without positives.
    pub fn fn_rate(&self) -> Option<f64> {
        ratio(self.fn_, self.positives())
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    /// Per-class counts for the fish (positive) and no-fish classes.
    pub fn class_counts(&self) -> [ClassCounts; 2] {
        [
            ClassCounts {
                tp: self.tp,
                fp: self.fp,
                fn_: self.fn_,
            },
            ClassCounts {
                tp: self.tn,
                fp: self.fn_,
                fn_: self.fp,
            },
        ]
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// A count as a percentage of `total` with two decimals, e.g. `0.17%`.
pub fn format_rate(count: u64, total: u64) -> String {
    match ratio(count, total) {
        Some(r) => format!("{:.2}%", 100.0 * r),
        None => "n/a".to_string(),
    }
}

fn check_scores<T: Scalar>(scores: &[(T, u8)]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::arg("no scores"));
    }
    for (i, &(s, y)) in scores.iter().enumerate() {
        if y > 1 {
            return Err(Error::arg(format!("label {y} at index {i} is not 0 or 1")));
        }
        if !s.is_finite() {
            return Err(Error::arg(format!("score at index {i} is not finite")));
        }
    }
    Ok(())
}

/// Confusion matrix with `score >= threshold` predicted positive.
pub fn confusion_at<T: Scalar>(scores: &[(T, u8)], threshold: T) -> Result<ConfusionMatrix> {
    check_scores(scores)?;
    let mut m = ConfusionMatrix::default();
    for &(s, y) in scores {
        match (s >= threshold, y == 1) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, false) => m.tn += 1,
            (false, true) => m.fn_ += 1,
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// Decision thresholds, descending. The first entry is `f64::MAX` and
    /// stands for "nothing predicted positive".
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

/// ROC curve over every distinct score, and the Mann-Whitney AUC with
/// midranks for ties.
pub fn roc_auc<T: Scalar>(scores: &[(T, u8)]) -> Result<RocResult> {
    check_scores(scores)?;
    let positives = scores.iter().filter(|s| s.1 == 1).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc {
            positives,
            negatives,
        });
    }
    let mut sorted: Vec<(f64, u8)> = scores.iter().map(|&(s, y)| (s.as_f64(), y)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Midrank sum of the positives (ranks start at 1).
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = sorted[i..j].iter().filter(|s| s.1 == 1).count();
        rank_sum += midrank * pos_in_group as f64;
        i = j;
    }
    let (p, n) = (positives as f64, negatives as f64);
    let auc = (rank_sum - p * (p + 1.0) / 2.0) / (p * n);

    let mut thresholds = vec![f64::MAX];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = sorted.len();
    while k > 0 {
        let t = sorted[k - 1].0;
        while k > 0 && sorted[k - 1].0 == t {
            if sorted[k - 1].1 == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k -= 1;
        }
        thresholds.push(t);
        fpr.push(fp as f64 / n);
        tpr.push(tp as f64 / p);
    }
    Ok(RocResult {
        thresholds,
        fpr,
        tpr,
        auc,
    })
}

/// Area under a piecewise-linear curve (used to cross-check the rank AUC).
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub c: usize,
    pub classes: Vec<ClassCounts>,
    pub ap: f64,
    pub ar: f64,
}

/// Macro-averaged precision and recall. A class with no predictions (or no
/// members) contributes 0 to the corresponding average.
pub fn ap_ar(classes: &[ClassCounts]) -> Result<ClassMetrics> {
    if classes.is_empty() {
        return Err(Error::arg("ap_ar needs at least one class"));
    }
    let c = classes.len() as f64;
    let mut ap = 0.0;
    let mut ar = 0.0;
    for (j, k) in classes.iter().enumerate() {
        match ratio(k.tp, k.tp + k.fp) {
            Some(p) => ap += p,
            None => log::warn!("class {j} has no predicted members; precision counted as 0"),
        }
        match ratio(k.tp, k.tp + k.fn_) {
            Some(r) => ar += r,
            None => log::warn!("class {j} has no members; recall counted as 0"),
        }
    }
    Ok(ClassMetrics {
        c: classes.len(),
        classes: classes.to_vec(),
        ap: ap / c,
        ar: ar / c,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredFrame {
    pub path: PathBuf,
    pub label: u8,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedFrame {
    pub path: PathBuf,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub images_per_sec: f64,
    pub seconds: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub n_scored: usize,
    pub confusion: ConfusionMatrix,
    /// `FP/N` as a percentage with two decimals.
    pub fp_rate: String,
    /// `FN/P` as a percentage with two decimals.
    pub fn_rate: String,
    pub accuracy: Option<f64>,
    pub class_metrics: Option<ClassMetrics>,
    pub roc: Option<RocResult>,
    /// Why `roc` is missing, when it is.
    pub roc_error: Option<String>,
    pub failures: Vec<FailedFrame>,
    pub throughput: Throughput,
}

impl EvalReport {
    /// Summary lines: confusion counts with error rates, then AUC.
    pub fn summary(&self) -> String {
        let c = &self.confusion;
        let mut s = String::new();
        let _ = writeln!(s, "threshold {:.2}, {} frames scored", self.threshold, self.n_scored);
        let _ = writeln!(s, "TN {}  FP {} ({})", c.tn, c.fp, self.fp_rate);
        let _ = writeln!(s, "TP {}  FN {} ({})", c.tp, c.fn_, self.fn_rate);
        match (&self.roc, &self.roc_error) {
            (Some(r), _) => {
                let _ = writeln!(s, "AUC {:.2}%", 100.0 * r.auc);
            }
            (None, Some(e)) => {
                let _ = writeln!(s, "AUC unavailable: {e}");
            }
            _ => {}
        }
        if !self.failures.is_empty() {
            let _ = writeln!(s, "{} frames could not be read", self.failures.len());
        }
        s
    }

    /// The report with timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> EvalReport {
        EvalReport {
            throughput: Throughput {
                images_per_sec: 0.0,
                seconds: 0.0,
                ..self.throughput
            },
            ..self.clone()
        }
    }
}

/// Score every frame; unreadable frames are listed instead of scored.
pub fn score_samples<T: Scalar>(
    model: &Model<T>,
    samples: &[FrameSample],
    preprocess: &PreprocessParams,
    loader: &ImageLoader,
    batch_size: usize,
) -> Result<(Vec<ScoredFrame>, Vec<FailedFrame>)> {
    if batch_size == 0 {
        return Err(Error::arg("batch_size must be >= 1"));
    }
    let mut scored = Vec::with_capacity(samples.len());
    let mut failed = Vec::new();
    for batch in samples.chunks(batch_size) {
        let results: Vec<Result<f64>> = batch
            .par_iter()
            .map(|s| {
                let x = loader.eval_input::<T>(s.path(), preprocess)?;
                Ok(model.score(&x)?.as_f64())
            })
            .collect();
        for (s, r) in batch.iter().zip(results) {
            match r {
                Ok(score) => scored.push(ScoredFrame {
                    path: s.path().to_path_buf(),
                    label: s.label(),
                    score,
                }),
                Err(e @ (Error::Image { .. } | Error::Io { .. })) => failed.push(FailedFrame {
                    path: s.path().to_path_buf(),
                    error: e.to_string(),
                }),
                Err(e) => return Err(e),
            }
        }
    }
    Ok((scored, failed))
}

pub fn report_from_scores(
    scored: &[ScoredFrame],
    failures: Vec<FailedFrame>,
    threshold: f64,
    throughput: Throughput,
) -> Result<EvalReport> {
    let pairs: Vec<(f64, u8)> = scored.iter().map(|s| (s.score, s.label)).collect();
    let confusion = confusion_at(&pairs, threshold)?;
    let (roc, roc_error) = match roc_auc(&pairs) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(EvalReport {
        threshold,
        n_scored: scored.len(),
        confusion,
        fp_rate: format_rate(confusion.fp, confusion.negatives()),
        fn_rate: format_rate(confusion.fn_, confusion.positives()),
        accuracy: confusion.accuracy(),
        class_metrics: Some(ap_ar(&confusion.class_counts())?),
        roc,
        roc_error,
        failures,
        throughput,
    })
}

/// Score `samples` and summarise. Returns the per-frame scores too.
pub fn evaluate_model<T: Scalar>(
    model: &Model<T>,
    samples: &[FrameSample],
    preprocess: &PreprocessParams,
    loader: &ImageLoader,
    batch_size: usize,
    threshold: f64,
) -> Result<(EvalReport, Vec<ScoredFrame>)> {
    if samples.is_empty() {
        return Err(Error::arg("evaluation set is empty"));
    }
    let started = Instant::now();
    let (scored, failures) = score_samples(model, samples, preprocess, loader, batch_size)?;
    let seconds = started.elapsed().as_secs_f64().max(1e-9);
    if scored.is_empty() {
        return Err(Error::arg(format!(
            "none of the {} frames could be read",
            samples.len()
        )));
    }
    let throughput = Throughput {
        images_per_sec: scored.len() as f64 / seconds,
        seconds,
        batch_size,
    };
    let report = report_from_scores(&scored, failures, threshold, throughput)?;
    Ok((report, scored))
}

pub fn write_scores_csv(scored: &[ScoredFrame], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(["path", "label", "score"]).map_err(csv_err)?;
    for s in scored {
        w.write_record([
            s.path.display().to_string(),
            s.label.to_string(),
            format!("{:.9}", s.score),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

/// ROC curve as a standalone SVG document.
pub fn roc_svg(roc: &RocResult, title: &str) -> String {
    const SIZE: f64 = 400.0;
    const MARGIN: f64 = 50.0;
    let x = |v: f64| MARGIN + v * SIZE;
    let y = |v: f64| MARGIN + (1.0 - v) * SIZE;
    let points: Vec<String> = roc
        .fpr
        .iter()
        .zip(&roc.tpr)
        .map(|(&f, &t)| format!("{:.2},{:.2}", x(f), y(t)))
        .collect();
    let total = SIZE + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4"/>"#,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        points.join(" ")
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">false positive rate</text>"#,
        x(0.5),
        total - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">true positive rate</text>"#,
        y(0.5),
        y(0.5)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="30" text-anchor="middle">{} (AUC {:.4})</text>"#,
        x(0.5),
        escape_xml(title),
        roc.auc
    );
    s.push_str("</svg>\n");
    s
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
