//! Power-law tail estimation.

use serde::Serialize;

use crate::error::{Error, Result};

/// One Hill estimate with its asymptotic 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HillPoint {
    pub k: usize,
    pub p_hat: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TailFit {
    pub estimate: HillPoint,
    /// The same estimator at `k / 2` and `2 k`, where defined.
    pub sensitivity: Vec<HillPoint>,
    pub samples: usize,
    /// Horizon of the suprema, when the samples are finite-horizon proxies.
    pub horizon: Option<u32>,
    /// Empirical `P(X > u)` on a log-spaced grid.
    pub survival: Vec<(f64, f64)>,
}

/// Default number of order statistics, `floor(sqrt(n))`.
pub fn default_k(n: usize) -> usize {
    (n as f64).sqrt().floor() as usize
}

fn hill_sorted_desc(sorted: &[f64], k: usize) -> Result<HillPoint> {
    if k < 2 || k >= sorted.len() {
        return Err(Error::invalid(
            "run.k",
            format!("need 2 <= k < {} samples, got k = {k}", sorted.len()),
        ));
    }
    let threshold = sorted[k];
    if !(threshold > 0.0) {
        return Err(Error::invalid(
            "samples",
            "the top k + 1 order statistics must be positive",
        ));
    }
    if sorted[0] == threshold {
        return Err(Error::invalid("samples", "the top k + 1 order statistics are all tied"));
    }
    let s: f64 = sorted[..k].iter().map(|x| (x / threshold).ln()).sum();
    let p_hat = k as f64 / s;
    let half = 1.96 / (k as f64).sqrt();
    Ok(HillPoint {
        k,
        p_hat,
        lo: p_hat * (1.0 - half),
        hi: p_hat * (1.0 + half),
    })
}

fn sort_desc(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("samples", "NaN sample"));
    }
    let mut v = samples.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(v)
}

/// Hill estimator `k / sum_{i <= k} log(X_(i) / X_(k+1))` on the upper order
/// statistics, with the interval `p_hat (1 +- 1.96 / sqrt k)`.
pub fn hill_tail(samples: &[f64], k: usize) -> Result<TailFit> {
    let sorted = sort_desc(samples)?;
    let estimate = hill_sorted_desc(&sorted, k)?;
    let sensitivity = [k / 2, 2 * k]
        .into_iter()
        .filter_map(|kk| hill_sorted_desc(&sorted, kk).ok())
        .collect();
    Ok(TailFit {
        estimate,
        sensitivity,
        samples: samples.len(),
        horizon: None,
        survival: survival_curve(&sorted, 24),
    })
}

/// `P(X > u)` at `points` log-spaced levels between the smallest positive
/// sample and the largest sample. `sorted` is in decreasing order.
fn survival_curve(sorted: &[f64], points: usize) -> Vec<(f64, f64)> {
    let n = sorted.len() as f64;
    let Some(&top) = sorted.first() else {
        return Vec::new();
    };
    let Some(&bottom) = sorted.iter().rev().find(|&&x| x > 0.0) else {
        return Vec::new();
    };
    if top <= bottom {
        return vec![(bottom, 0.0)];
    }
    let (a, b) = (bottom.ln(), top.ln());
    (0..points)
        .map(|i| {
            let u = (a + (b - a) * i as f64 / (points - 1) as f64).exp();
            let above = sorted.partition_point(|&x| x > u);
            (u, above as f64 / n)
        })
        .collect()
}
