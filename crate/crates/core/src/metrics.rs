//! Regression and rank-correlation metrics at utterance and system level.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::shape(
            "correlation",
            format!("lengths {} and {}", x.len(), y.len()),
        ));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two points"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "correlation input".into(),
        });
    }
    Ok(())
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape(
            "mse",
            format!("lengths {} and {}", pred.len(), truth.len()),
        ));
    }
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Counts pairs that are out of order, merge-sorting `v` in place.
fn count_swaps(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_swaps(&mut v[..mid], buf) + count_swaps(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall tau-b in O(n log n) (Knight's algorithm).
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as u64;
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let mut ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    let total = n * (n - 1) / 2;
    let tx = tied_pairs(&xs);
    let mut joint = 0u64;
    let mut run = 1u64;
    for k in 1..order.len() {
        if xs[k] == xs[k - 1] && ys[k] == ys[k - 1] {
            run += 1;
        } else {
            joint += run * (run - 1) / 2;
            run = 1;
        }
    }
    joint += run * (run - 1) / 2;

    let swaps = count_swaps(&mut ys, &mut Vec::with_capacity(order.len()));
    let ty = tied_pairs(&ys);
    if tx == total || ty == total {
        return Err(Error::UndefinedCorrelation("all values tied"));
    }
    let numer = total as f64 - tx as f64 - ty as f64 + joint as f64 - 2.0 * swaps as f64;
    let denom = ((total - tx) as f64).sqrt() * ((total - ty) as f64).sqrt();
    Ok((numer / denom).clamp(-1.0, 1.0))
}

/// Arithmetic mean per system id.
pub fn system_aggregate<K: Ord + Clone>(
    records: impl IntoIterator<Item = (K, f64)>,
) -> BTreeMap<K, f64> {
    let mut acc: BTreeMap<K, (f64, usize)> = BTreeMap::new();
    for (k, v) in records {
        let e = acc.entry(k).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

/// Metrics at one aggregation level. A correlation is `None` when it is
/// undefined for the data, e.g. constant predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub count: usize,
    pub mse: f64,
    pub lcc: Option<f64>,
    pub srcc: Option<f64>,
    pub ktau: Option<f64>,
}

impl LevelMetrics {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        let defined = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedCorrelation(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(LevelMetrics {
            count: pred.len(),
            mse: mse(pred, truth)?,
            lcc: defined(pearson(pred, truth))?,
            srcc: defined(spearman(pred, truth))?,
            ktau: defined(kendall_tau_b(pred, truth))?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub utterance: LevelMetrics,
    pub system: LevelMetrics,
}

impl EvalReport {
    /// Aligned text table, MSE/LCC/SRCC/KTAU per level.
    pub fn to_table(&self) -> String {
        let cell =
            |v: Option<f64>| v.map_or_else(|| format!("{:>8}", "n/a"), |v| format!("{v:>8.3}"));
        let mut out = format!(
            "{:<10}{:>6}{:>8}{:>8}{:>8}{:>8}\n",
            "level", "n", "MSE", "LCC", "SRCC", "KTAU"
        );
        for (name, m) in [("utterance", &self.utterance), ("system", &self.system)] {
            let _ = writeln!(
                out,
                "{name:<10}{:>6}{}{}{}{}",
                m.count,
                cell(Some(m.mse)),
                cell(m.lcc),
                cell(m.srcc),
                cell(m.ktau)
            );
        }
        out
    }
}

/// Scores predictions against per-utterance truths, then against per-system
/// means of both.
pub fn evaluate(
    predictions: &BTreeMap<String, f64>,
    truths: &BTreeMap<String, f64>,
    systems: &BTreeMap<String, String>,
) -> Result<EvalReport> {
    let missing_predictions: Vec<String> = truths
        .keys()
        .filter(|k| !predictions.contains_key(*k))
        .cloned()
        .collect();
    let missing_truths: Vec<String> = predictions
        .keys()
        .filter(|k| !truths.contains_key(*k))
        .cloned()
        .collect();
    if !missing_predictions.is_empty() || !missing_truths.is_empty() {
        return Err(Error::KeyMismatch {
            missing_predictions,
            missing_truths,
        });
    }
    if let Some(k) = truths.keys().find(|k| !systems.contains_key(*k)) {
        return Err(Error::InvalidArgument(format!(
            "no system recorded for utterance {k}"
        )));
    }
    let pred: Vec<f64> = predictions.values().copied().collect();
    let truth: Vec<f64> = truths.values().copied().collect();
    let sys_pred = system_aggregate(predictions.iter().map(|(k, v)| (systems[k].clone(), *v)));
    let sys_truth = system_aggregate(truths.iter().map(|(k, v)| (systems[k].clone(), *v)));
    let sp: Vec<f64> = sys_pred.values().copied().collect();
    let st: Vec<f64> = sys_truth.values().copied().collect();
    Ok(EvalReport {
        utterance: LevelMetrics::compute(&pred, &truth)?,
        system: LevelMetrics::compute(&sp, &st)?,
    })
}
