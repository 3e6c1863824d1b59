use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Renewal structure of the collision times of two independent walks.
///
/// `r[n]` is the return probability, `k[m]` the law of the first collision
/// time (`k[0] = 0`), `q[n] = 1 - sum_{m <= n} k[m]` the survival function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalTable {
    r: Vec<f64>,
    k: Vec<f64>,
    q: Vec<f64>,
    pi_partial: f64,
}

/// Renewal identity tolerance.
pub const RENEWAL_TOL: f64 = 1e-12;

impl RenewalTable {
    pub fn horizon(&self) -> usize {
        self.r.len() - 1
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// `sum_{m <= N} K_m`, the probability of a collision by the horizon.
    pub fn pi_partial(&self) -> f64 {
        self.pi_partial
    }

    /// Largest violation of `r_n = sum_{m=1}^n K_m r_{n-m}` over the table.
    pub fn renewal_residual(&self) -> f64 {
        (1..self.r.len())
            .map(|n| {
                let s: f64 = (1..=n).map(|m| self.k[m] * self.r[n - m]).sum();
                (s - self.r[n]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Recover the first-collision law from return probabilities by inverting
/// the renewal equation `r_n = sum_{m=1}^n K_m r_{n-m}`.
pub fn first_collision_law(r: &[f64]) -> Result<RenewalTable> {
    if r.is_empty() || r[0] != 1.0 {
        return Err(Error::invalid("r", "return series must start with r_0 = 1"));
    }
    let n_max = r.len() - 1;
    let mut k = vec![0.0; n_max + 1];
    for n in 1..=n_max {
        let conv: f64 = (1..n).map(|m| k[m] * r[n - m]).sum();
        let kn = r[n] - conv;
        if kn < -1e-12 {
            return Err(Error::convergence(
                "first_collision_law",
                format!(
                    "K_{n} = {kn:e} < 0 (r_{n} = {}, convolution {conv}); the return series is not a renewal sequence",
                    r[n]
                ),
            ));
        }
        k[n] = kn.max(0.0);
    }
    let mut q = vec![1.0; n_max + 1];
    let mut acc = 0.0;
    for n in 1..=n_max {
        acc += k[n];
        q[n] = 1.0 - acc;
    }
    let table = RenewalTable {
        r: r.to_vec(),
        k,
        q,
        pi_partial: acc,
    };
    // Re-verify on small tables only; the check is quadratic.
    if n_max <= 4096 {
        let res = table.renewal_residual();
        if res > RENEWAL_TOL {
            return Err(Error::convergence(
                "first_collision_law",
                format!("renewal identity violated by {res:e}"),
            ));
        }
    }
    Ok(table)
}
