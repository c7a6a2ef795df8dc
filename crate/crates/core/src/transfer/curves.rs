use serde::{Deserialize, Serialize};

use super::TransferError;

/// Consecutive smoothed updates that must stay at or above a threshold.
pub const SUSTAIN: usize = 10;

/// Pointwise statistics of one arm's seed curves.
///
/// `std` is the population standard deviation (divide by `n_seeds`).
/// When `window > 1` both sequences are trailing moving averages over
/// `window` updates; the first `window - 1` entries average what is
/// available.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateCurve {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_seeds: usize,
    pub window: usize,
}

pub fn aggregate_curves(curves: &[Vec<f64>], window: usize) -> Result<AggregateCurve, TransferError> {
    let first = curves
        .first()
        .ok_or_else(|| TransferError::Curve("no curves to aggregate".into()))?;
    let len = first.len();
    if let Some(c) = curves.iter().find(|c| c.len() != len) {
        return Err(TransferError::Curve(format!(
            "curve lengths differ: {len} vs {}",
            c.len()
        )));
    }
    if window == 0 {
        return Err(TransferError::Curve("smoothing window must be positive".into()));
    }
    let n = curves.len() as f64;
    let mean: Vec<f64> = (0..len).map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..len)
        .map(|i| {
            let var = curves.iter().map(|c| (c[i] - mean[i]).powi(2)).sum::<f64>() / n;
            var.sqrt()
        })
        .collect();
    Ok(AggregateCurve {
        mean: smooth(&mean, window),
        std: smooth(&std, window),
        n_seeds: curves.len(),
        window,
    })
}

/// Trailing moving average; `window = 1` returns the input.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 {
        return values.to_vec();
    }
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// First update whose smoothed mean is `>= threshold` for [`SUSTAIN`]
/// consecutive updates.
pub fn updates_to_threshold(agg: &AggregateCurve, threshold: f64) -> Option<usize> {
    let m = &agg.mean;
    (0..m.len()).find(|&i| i + SUSTAIN <= m.len() && m[i..i + SUSTAIN].iter().all(|v| *v >= threshold))
}

/// Median of optional counts, with `None` ordered above every value.
/// With an even count the lower middle element is returned.
pub fn median_updates(values: &[Option<usize>]) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by_key(|x| x.unwrap_or(usize::MAX));
    v[(v.len() - 1) / 2]
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// `update,mean_cumulative_reward` rows.
pub fn curve_csv(curve: &[f64]) -> String {
    let mut s = String::from("update,mean_cumulative_reward\n");
    for (i, v) in curve.iter().enumerate() {
        s.push_str(&format!("{i},{v:?}\n"));
    }
    s
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<f64>, TransferError> {
    let mut lines = text.lines();
    if lines.next() != Some("update,mean_cumulative_reward") {
        return Err(TransferError::Curve("missing curve.csv header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let (idx, v) = line
                .split_once(',')
                .ok_or_else(|| TransferError::Curve(format!("line {}: expected two columns", i + 2)))?;
            if idx.parse::<usize>().ok() != Some(i) {
                return Err(TransferError::Curve(format!("line {}: bad update index", i + 2)));
            }
            v.parse::<f64>()
                .map_err(|_| TransferError::Curve(format!("line {}: bad value `{v}`", i + 2)))
        })
        .collect()
}
