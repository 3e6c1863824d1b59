//! Return probabilities `r_n = P(X_n = X'_n)` of two independent walks, the
//! Green function `G = sum_n r_n` of their difference and the collision
//! probability `pi = 1 - 1/G`.

use std::f64::consts::PI;

use serde::Serialize;

use super::kernel::{KernelKind, WalkKernel};
use crate::error::{Error, Result};
use crate::numeric::ln_factorials;

/// Refinement tolerance for the quadrature series.
pub const SERIES_REFINE_TOL: f64 = 1e-10;
/// Largest number of quadrature nodes evaluated in one pass.
pub const MAX_QUAD_NODES: u64 = 1 << 28;
/// Largest dense grid used by the box dynamic program.
pub const MAX_BOX_SITES: u64 = 1 << 26;

/// Calls `f` at every node of the half-offset uniform grid with `m` points
/// per axis on `[-pi, pi]^d`.
fn for_each_node<F: FnMut(&[f64])>(dim: usize, m: usize, mut f: F) {
    let h = 2.0 * PI / m as f64;
    let coord = |i: usize| -PI + (i as f64 + 0.5) * h;
    let mut idx = vec![0usize; dim];
    let mut theta: Vec<f64> = vec![coord(0); dim];
    loop {
        f(&theta);
        let mut k = dim;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < m {
                theta[k] = coord(idx[k]);
                break;
            }
            idx[k] = 0;
            theta[k] = coord(0);
        }
    }
}

/// Like [`for_each_node`] but folds the grid onto the positive orthant when
/// `|phi|^2` is even in every coordinate. Returns the node weight.
fn for_each_node_folded<F: FnMut(&[f64])>(kernel: &WalkKernel, m: usize, mut f: F) -> f64 {
    let dim = kernel.dim();
    if kernel.reflection_symmetric() && m.is_multiple_of(2) {
        let half = m / 2;
        let h = 2.0 * PI / m as f64;
        let coord = |i: usize| (i as f64 + 0.5) * h;
        let mut idx = vec![0usize; dim];
        let mut theta: Vec<f64> = vec![coord(0); dim];
        'outer: loop {
            f(&theta);
            let mut k = dim;
            loop {
                if k == 0 {
                    break 'outer;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < half {
                    theta[k] = coord(idx[k]);
                    break;
                }
                idx[k] = 0;
                theta[k] = coord(0);
            }
        }
        1.0 / node_count(dim, half) as f64
    } else {
        for_each_node(dim, m, f);
        1.0 / node_count(dim, m) as f64
    }
}

/// Work (node evaluations times kernel support) of one grid pass.
fn grid_work(kernel: &WalkKernel, m: usize) -> u64 {
    let nodes = if kernel.reflection_symmetric() {
        node_count(kernel.dim(), m / 2)
    } else {
        node_count(kernel.dim(), m)
    };
    let per_node = if kernel.kind() == KernelKind::Srw {
        1
    } else {
        kernel.support_size() as u64
    };
    nodes.saturating_mul(per_node)
}

fn node_count(dim: usize, m: usize) -> u64 {
    (m as u64).saturating_pow(dim as u32)
}

fn quadrature_series(kernel: &WalkKernel, horizon: usize, m: usize) -> Vec<f64> {
    let mut acc = vec![0.0; horizon + 1];
    let w = for_each_node_folded(kernel, m, |theta| {
        let v = kernel.char_fn_sq(theta);
        let mut p = 1.0;
        for a in acc.iter_mut() {
            *a += p;
            p *= v;
        }
    });
    acc.iter().map(|a| a * w).collect()
}

/// Return probabilities `r_0..=r_N` as the torus average of `|phi|^{2n}`.
///
/// The periodic trapezoid rule is exact once `quad_points` exceeds the
/// trigonometric degree, so the grid is doubled until two successive grids
/// agree to `1e-10` for every `n`.
pub fn return_prob_series(kernel: &WalkKernel, horizon: usize, quad_points: usize) -> Result<Vec<f64>> {
    let mut m = quad_points.max(4);
    if m % 2 == 1 {
        m += 1;
    }
    let mut coarse = quadrature_series(kernel, horizon, m);
    let mut last_diff = f64::INFINITY;
    loop {
        let fine_m = 2 * m;
        let work = grid_work(kernel, fine_m).saturating_mul(horizon as u64 + 1);
        if grid_work(kernel, fine_m) > MAX_QUAD_NODES || work > 64 * MAX_QUAD_NODES {
            return Err(Error::convergence(
                "return_prob_series",
                format!(
                    "grid refinement budget exhausted at {m} points per axis before reaching {SERIES_REFINE_TOL:e} (achieved {last_diff:e})"
                ),
            ));
        }
        let fine = quadrature_series(kernel, horizon, fine_m);
        let diff = coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if diff < SERIES_REFINE_TOL {
            let mut out = fine;
            out[0] = 1.0;
            return Ok(out);
        }
        last_diff = diff;
        m = fine_m;
        coarse = fine;
    }
}

/// Exact return probabilities by dynamic programming of the one-walk law on a
/// dense box: `r_n = sum_x P(X_n = x)^2`.
pub fn return_probs_box_dp(kernel: &WalkKernel, horizon: usize) -> Result<Vec<f64>> {
    let dim = kernel.dim();
    let reach = horizon as i64 * kernel.max_step();
    let side = (2 * reach + 1) as u64;
    let sites = side.saturating_pow(dim as u32);
    if sites > MAX_BOX_SITES {
        return Err(Error::budget(
            "return_probs_box_dp grid",
            sites as f64,
            MAX_BOX_SITES as f64,
        ));
    }
    let side = side as i64;
    let strides: Vec<i64> = (0..dim).map(|i| side.pow((dim - 1 - i) as u32)).collect();
    let offsets: Vec<i64> = kernel
        .steps()
        .iter()
        .map(|s| s.iter().zip(&strides).map(|(a, b)| a * b).sum())
        .collect();
    let centre: i64 = strides.iter().map(|s| s * reach).sum();
    let mut cur = vec![0.0; sites as usize];
    let mut next = vec![0.0; sites as usize];
    cur[centre as usize] = 1.0;
    let mut out = vec![1.0; horizon + 1];
    for (n, slot) in out.iter_mut().enumerate().skip(1) {
        next.iter_mut().for_each(|v| *v = 0.0);
        // Points reachable after n-1 steps lie within radius (n-1) * max_step.
        let radius = (n as i64 - 1) * kernel.max_step();
        for_each_box_point(dim, radius, |coords| {
            let idx: i64 = centre + coords.iter().zip(&strides).map(|(a, b)| a * b).sum::<i64>();
            let v = cur[idx as usize];
            if v != 0.0 {
                for (off, m) in offsets.iter().zip(kernel.masses()) {
                    next[(idx + off) as usize] += m * v;
                }
            }
        });
        std::mem::swap(&mut cur, &mut next);
        *slot = cur.iter().map(|p| p * p).sum();
    }
    Ok(out)
}

fn for_each_box_point<F: FnMut(&[i64])>(dim: usize, radius: i64, mut f: F) {
    let mut cur = vec![-radius; dim];
    loop {
        f(&cur);
        let mut k = dim;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            if cur[k] < radius {
                cur[k] += 1;
                break;
            }
            cur[k] = -radius;
        }
    }
}

/// Exact return probabilities of two independent simple random walks on
/// `Z^d`, `r_n = P(S_{2n} = 0)`, by splitting the steps among coordinates.
///
/// The number of steps taken along the last of `k + 1` axes is binomial with
/// parameter `1 / (k + 1)`; the remaining steps form a `k`-dimensional walk.
/// Cost is `O(d N^2)`.
pub fn srw_return_probs(dim: usize, horizon: usize) -> Vec<f64> {
    let steps = 2 * horizon;
    let lf = ln_factorials(steps);
    let ln2 = std::f64::consts::LN_2;
    // One-dimensional return after 2j steps: C(2j, j) / 4^j.
    let ln_one_d: Vec<f64> = (0..=horizon)
        .map(|j| lf[2 * j] - 2.0 * lf[j] - 2.0 * j as f64 * ln2)
        .collect();
    let mut current: Vec<f64> = ln_one_d.iter().map(|l| l.exp()).collect();
    for k in 1..dim {
        let q = 1.0 / (k + 1) as f64;
        let (lq, lp) = (q.ln(), (1.0 - q).ln());
        let mut next = vec![0.0; horizon + 1];
        for (half_m, slot) in next.iter_mut().enumerate() {
            let m = 2 * half_m;
            let mut acc = 0.0;
            for half_l in 0..=half_m {
                let l = 2 * half_l;
                let rest = m - l;
                let lw = lf[m] - lf[l] - lf[rest] + l as f64 * lq + rest as f64 * lp + ln_one_d[half_l];
                acc += lw.exp() * current[half_m - half_l];
            }
            *slot = acc;
        }
        current = next;
    }
    current[0] = 1.0;
    current
}

/// Exact return probabilities by the cheapest applicable exact route.
pub fn return_probs(kernel: &WalkKernel, horizon: usize) -> Result<Vec<f64>> {
    if kernel.kind() == KernelKind::Srw {
        Ok(srw_return_probs(kernel.dim(), horizon))
    } else {
        return_probs_box_dp(kernel, horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GreenMethod {
    /// Single-site kernel: the walks never separate.
    Degenerate,
    /// Offset trapezoid rule with Richardson extrapolation in the mesh size.
    Quadrature,
    /// Partial sums of `r_n` plus a fitted power-law tail.
    Series,
}

/// Collision probability of two independent walks.
#[derive(Debug, Clone, Serialize)]
pub struct Collision {
    /// `P(X_n = X'_n for some n >= 1)`.
    pub pi: f64,
    /// `sum_{n >= 0} r_n`, infinite for recurrent difference walks.
    pub green: f64,
    pub recurrent: bool,
    pub method: GreenMethod,
    /// Difference between the two most refined estimates of `pi`.
    pub error_estimate: f64,
}

impl Collision {
    fn recurrent(method: GreenMethod) -> Self {
        Collision {
            pi: 1.0,
            green: f64::INFINITY,
            recurrent: true,
            method,
            error_estimate: 0.0,
        }
    }

    fn transient(green: f64, green_err: f64, method: GreenMethod) -> Self {
        Collision {
            pi: 1.0 - 1.0 / green,
            green,
            recurrent: false,
            method,
            error_estimate: green_err / (green * green),
        }
    }
}

/// Rank of the covariance matrix of the step law.
fn covariance_rank(kernel: &WalkKernel) -> usize {
    let d = kernel.dim();
    let mut mean = vec![0.0; d];
    for (s, m) in kernel.steps().iter().zip(kernel.masses()) {
        for i in 0..d {
            mean[i] += m * s[i] as f64;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for (s, m) in kernel.steps().iter().zip(kernel.masses()) {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += m * (s[i] as f64 - mean[i]) * (s[j] as f64 - mean[j]);
            }
        }
    }
    // Gaussian elimination with partial pivoting.
    let mut rank = 0;
    let mut row = 0;
    for col in 0..d {
        let piv = (row..d).max_by(|&a, &b| cov[a][col].abs().total_cmp(&cov[b][col].abs()));
        let Some(piv) = piv else { break };
        if cov[piv][col].abs() < 1e-12 {
            continue;
        }
        cov.swap(row, piv);
        for r in row + 1..d {
            let f = cov[r][col] / cov[row][col];
            for c in col..d {
                cov[r][c] -= f * cov[row][c];
            }
        }
        row += 1;
        rank += 1;
        if row == d {
            break;
        }
    }
    rank
}

pub fn green_on_grid(kernel: &WalkKernel, m: usize) -> f64 {
    let mut acc = 0.0;
    let w = for_each_node_folded(kernel, m, |theta| {
        acc += 1.0 / (1.0 - kernel.char_fn_sq(theta));
    });
    acc * w
}

/// Collision probability `pi = 1 - 1/G`, `G` the torus average of
/// `1 / (1 - |phi|^2)`.
///
/// For `d <= 4` the offset trapezoid rule is refined by doubling and the mesh
/// error (powers `h^{r-2}, h^r, h^{r+2}` for a covariance of rank `r`) is
/// removed by Richardson extrapolation. Increments that do not shrink signal
/// divergence, reported as a recurrent difference walk (`pi = 1`). Beyond
/// `d = 4` the series route is used.
pub fn collision_probability(kernel: &WalkKernel, tol: f64) -> Result<Collision> {
    collision_probability_with(kernel, tol, DEFAULT_QUAD_POINTS)
}

/// Initial quadrature points per axis.
pub const DEFAULT_QUAD_POINTS: usize = 16;

/// [`collision_probability`] with the quadrature refinement starting from
/// `quad_points` nodes per axis.
pub fn collision_probability_with(kernel: &WalkKernel, tol: f64, quad_points: usize) -> Result<Collision> {
    if quad_points < 4 {
        return Err(Error::invalid("walk.quad_points", "need at least 4 points per axis"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("run.tol", "must be > 0"));
    }
    if kernel.is_degenerate() {
        return Ok(Collision::recurrent(GreenMethod::Degenerate));
    }
    if kernel.dim() > 4 {
        return green_by_series(kernel, tol);
    }
    let dim = kernel.dim();
    let rank = covariance_rank(kernel);
    let finite_support = matches!(kernel.kind(), KernelKind::Srw | KernelKind::FiniteSupport);
    let mut m = quad_points + quad_points % 2;
    let mut levels: Vec<f64> = Vec::new();
    while levels.len() < 3 {
        levels.push(green_on_grid(kernel, m));
        m *= 2;
    }
    loop {
        let n = levels.len();
        let d1 = levels[n - 2] - levels[n - 3];
        let d2 = levels[n - 1] - levels[n - 2];
        let ratio = if d1 != 0.0 { d2 / d1 } else { 0.0 };
        if ratio >= 0.9 {
            return Ok(Collision::recurrent(GreenMethod::Quadrature));
        }
        let can_refine = grid_work(kernel, m) <= MAX_QUAD_NODES;
        if ratio > 0.75 {
            if !can_refine {
                return Err(Error::convergence(
                    "collision_probability",
                    format!(
                        "indeterminate: increments shrink only by factor {ratio:.3} per refinement; last G estimate {}",
                        levels[n - 1]
                    ),
                ));
            }
        } else {
            let (previous, latest) = if finite_support && rank == dim {
                let a = rank as f64 - 2.0;
                let exps = [a, a + 2.0, a + 4.0, a + 6.0];
                (richardson(&levels[..n - 1], &exps), richardson(&levels, &exps))
            } else {
                if n >= 4 {
                    (aitken(&levels[..n - 1]), aitken(&levels))
                } else {
                    (levels[n - 1], aitken(&levels))
                }
            };
            let g_err = (latest - previous).abs();
            let pi_err = g_err / (latest * latest);
            if pi_err <= tol {
                return Ok(Collision::transient(latest, g_err, GreenMethod::Quadrature));
            }
            if !can_refine {
                return Err(Error::convergence(
                    "collision_probability",
                    format!("achieved {pi_err:e} > requested {tol:e} with {n} grid levels"),
                ));
            }
        }
        levels.push(green_on_grid(kernel, m));
        m *= 2;
    }
}

/// Richardson table on successively halved meshes with error exponents `exps`.
fn richardson(values: &[f64], exps: &[f64]) -> f64 {
    let mut row: Vec<f64> = values.to_vec();
    for &e in exps.iter().take(values.len() - 1) {
        let f = 2f64.powf(e);
        row = row.windows(2).map(|w| (f * w[1] - w[0]) / (f - 1.0)).collect();
        if row.len() == 1 {
            break;
        }
    }
    row[0]
}

/// Aitken delta-squared on the last three values.
fn aitken(values: &[f64]) -> f64 {
    let n = values.len();
    let (a, b, c) = (values[n - 3], values[n - 2], values[n - 1]);
    let denom = (c - b) - (b - a);
    if denom == 0.0 {
        c
    } else {
        c - (c - b) * (c - b) / denom
    }
}

/// Sum of `n^{-s}` over `n > big_n` by Euler-Maclaurin.
fn power_tail(s: f64, big_n: f64) -> f64 {
    big_n.powf(1.0 - s) / (s - 1.0) - big_n.powf(-s) / 2.0 + s * big_n.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * big_n.powf(-s - 3.0) / 720.0
}

/// Tail `sum_{n > N} r_n` from the asymptotic form
/// `r_n ~ C n^{-d/2} (1 + a/n + b/n^2)` fitted at `N/4, N/2, N`.
pub fn fitted_tail(r: &[f64], dim: usize) -> f64 {
    let n = r.len() - 1;
    let s = dim as f64 / 2.0;
    let pts = [n / 4, n / 2, n];
    // Solve for (C, Ca, Cb) in r_n n^s = C + Ca/n + Cb/n^2.
    let mut a = [[0.0; 3]; 3];
    let mut y = [0.0; 3];
    for (i, &p) in pts.iter().enumerate() {
        let x = 1.0 / p as f64;
        a[i] = [1.0, x, x * x];
        y[i] = r[p] * (p as f64).powf(s);
    }
    let coef = solve3(a, y);
    coef[0] * power_tail(s, n as f64)
        + coef[1] * power_tail(s + 1.0, n as f64)
        + coef[2] * power_tail(s + 2.0, n as f64)
}

fn solve3(mut a: [[f64; 3]; 3], mut y: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let piv = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        y.swap(col, piv);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= f * a[col][c];
            }
            y[r] -= f * y[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let mut acc = y[r];
        for c in r + 1..3 {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    x
}

/// Green function from partial sums of the exact series plus a fitted tail.
/// Used for `d > 4`, where tensor quadrature is too expensive.
fn green_by_series(kernel: &WalkKernel, tol: f64) -> Result<Collision> {
    let dim = kernel.dim();
    let mut horizon = 256usize;
    let mut previous: Option<f64> = None;
    loop {
        let r = return_probs(kernel, horizon)?;
        let partial: f64 = r.iter().sum();
        let green = partial + fitted_tail(&r, dim);
        if let Some(prev) = previous {
            let pi_err = (green - prev).abs() / (green * green);
            if pi_err <= tol {
                return Ok(Collision::transient(green, (green - prev).abs(), GreenMethod::Series));
            }
        }
        previous = Some(green);
        if horizon >= 1 << 14 {
            return Err(Error::convergence(
                "collision_probability (series)",
                format!("tail estimate did not stabilise to {tol:e} by horizon {horizon}"),
            ));
        }
        horizon *= 2;
    }
}

/// Green function from the exact series alone (any dimension, exact routes),
/// for cross-checking the quadrature.
pub fn green_series_estimate(kernel: &WalkKernel, horizon: usize) -> Result<(f64, f64)> {
    let r = return_probs(kernel, horizon)?;
    let partial: f64 = r.iter().sum();
    Ok((partial, partial + fitted_tail(&r, kernel.dim())))
}
