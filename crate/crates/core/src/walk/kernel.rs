use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{integrate_to_infinity, unit_sphere_area};

/// A lattice point of `Z^d`.
pub type Site = Vec<i64>;

/// Truncation target for heavy-tailed kernels.
pub const TRUNCATION_TARGET: f64 = 1e-10;
/// Largest support (number of sites) a truncated heavy-tailed kernel may have.
pub const MAX_TRUNCATED_SITES: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Srw,
    FiniteSupport,
    /// One-dimensional law proportional to `log(2+|x|)^2 / (1+|x|)^2`.
    Nu1,
    /// Law on `Z^d` proportional to `log(2+|x|) / (1+|x|)^4`.
    Nu2,
}

/// Step distribution of the reference walk.
#[derive(Debug, Clone)]
pub struct WalkKernel {
    kind: KernelKind,
    dim: usize,
    steps: Vec<Site>,
    masses: Vec<f64>,
    cumulative: Vec<f64>,
    rmax: Option<u64>,
    truncated_mass: f64,
}

impl WalkKernel {
    /// Nearest-neighbour simple random walk on `Z^d`.
    pub fn srw(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("walk.d", "dimension must be >= 1"));
        }
        let mut steps = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            for sign in [-1, 1] {
                let mut s = vec![0; dim];
                s[i] = sign;
                steps.push(s);
            }
        }
        let masses = vec![1.0 / (2 * dim) as f64; 2 * dim];
        Ok(Self::assemble(KernelKind::Srw, dim, steps, masses, None, 0.0))
    }

    /// Arbitrary finitely supported law. Masses must be nonnegative and sum to one
    /// within `1e-12`; zero masses are dropped.
    pub fn finite_support<I>(dim: usize, masses: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Site, f64)>,
    {
        if dim == 0 {
            return Err(Error::invalid("walk.d", "dimension must be >= 1"));
        }
        let mut table: BTreeMap<Site, f64> = BTreeMap::new();
        for (site, m) in masses {
            if site.len() != dim {
                return Err(Error::invalid(
                    "walk.masses",
                    format!("site {site:?} is not in Z^{dim}"),
                ));
            }
            if !(m >= 0.0) || !m.is_finite() {
                return Err(Error::invalid(
                    "walk.masses",
                    format!("mass {m} at {site:?} is not >= 0"),
                ));
            }
            *table.entry(site).or_insert(0.0) += m;
        }
        let total: f64 = table.values().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("walk.masses", format!("masses sum to {total}, not 1")));
        }
        let (steps, masses): (Vec<_>, Vec<_>) = table.into_iter().filter(|(_, m)| *m > 0.0).unzip();
        Ok(Self::assemble(KernelKind::FiniteSupport, dim, steps, masses, None, 0.0))
    }

    /// One-dimensional heavy-tailed law `c1 log(2+|x|)^2 / (1+|x|)^2`, truncated
    /// to `|x| <= rmax` and renormalised.
    pub fn nu1(rmax: Option<u64>) -> Result<Self> {
        let weight = |r: f64| (2.0 + r).ln().powi(2) / (1.0 + r).powi(2);
        Self::heavy_tail(KernelKind::Nu1, 1, rmax, weight)
    }

    /// Heavy-tailed law `c2 log(2+|x|) / (1+|x|)^4` on `Z^d` (Euclidean norm),
    /// truncated to `|x| <= rmax`. Only `d <= 3` is normalisable.
    pub fn nu2(dim: usize, rmax: Option<u64>) -> Result<Self> {
        if dim == 0 || dim > 3 {
            return Err(Error::invalid(
                "walk.d",
                format!("nu2 is a probability law only for 1 <= d <= 3, got {dim}"),
            ));
        }
        let weight = |r: f64| (2.0 + r).ln() / (1.0 + r).powi(4);
        Self::heavy_tail(KernelKind::Nu2, dim, rmax, weight)
    }

    fn heavy_tail<F: Fn(f64) -> f64 + Copy>(
        kind: KernelKind,
        dim: usize,
        rmax: Option<u64>,
        weight: F,
    ) -> Result<Self> {
        let site_count = |r: u64| (2 * r + 1).saturating_pow(dim as u32);
        let tail = |r: u64| {
            let start = r as f64 + 0.5;
            let area = unit_sphere_area(dim);
            integrate_to_infinity(|x| weight(x) * area * x.powi(dim as i32 - 1), start)
        };
        let inside = |r: u64| -> f64 { enumerate_ball(dim, r).iter().map(|s| weight(norm(s))).sum() };
        let r = match rmax {
            Some(0) => return Err(Error::invalid("walk.rmax", "must be >= 1")),
            Some(r) => {
                if site_count(r) > MAX_TRUNCATED_SITES {
                    return Err(Error::budget(
                        "walk.rmax support",
                        site_count(r) as f64,
                        MAX_TRUNCATED_SITES as f64,
                    ));
                }
                r
            }
            None => {
                // Smallest radius meeting the target, capped by the support budget.
                let mut r = 8u64;
                loop {
                    let t = tail(r);
                    if t / (t + inside(r.min(64))) < TRUNCATION_TARGET {
                        break r;
                    }
                    if site_count(2 * r) > MAX_TRUNCATED_SITES {
                        break r;
                    }
                    r *= 2;
                }
            }
        };
        let steps = enumerate_ball(dim, r);
        let raw: Vec<f64> = steps.iter().map(|s| weight(norm(s))).collect();
        let inside_total: f64 = raw.iter().sum();
        let tail_total = tail(r);
        let truncated_mass = tail_total / (inside_total + tail_total);
        let masses = raw.iter().map(|w| w / inside_total).collect();
        Ok(Self::assemble(kind, dim, steps, masses, Some(r), truncated_mass))
    }

    fn assemble(
        kind: KernelKind,
        dim: usize,
        steps: Vec<Site>,
        masses: Vec<f64>,
        rmax: Option<u64>,
        truncated_mass: f64,
    ) -> Self {
        let mut cumulative = Vec::with_capacity(masses.len());
        let mut acc = 0.0;
        for m in &masses {
            acc += m;
            cumulative.push(acc);
        }
        WalkKernel {
            kind,
            dim,
            steps,
            masses,
            cumulative,
            rmax,
            truncated_mass,
        }
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> &[Site] {
        &self.steps
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn support_size(&self) -> usize {
        self.steps.len()
    }

    pub fn rmax(&self) -> Option<u64> {
        self.rmax
    }

    /// Estimated mass of the untruncated law lying outside the kept support.
    pub fn truncated_mass(&self) -> f64 {
        self.truncated_mass
    }

    pub fn truncation_target_met(&self) -> bool {
        self.truncated_mass < TRUNCATION_TARGET
    }

    pub fn mass(&self, step: &[i64]) -> f64 {
        self.steps
            .iter()
            .position(|s| s == step)
            .map_or(0.0, |i| self.masses[i])
    }

    /// Support is a single site: two independent walks never separate.
    pub fn is_degenerate(&self) -> bool {
        self.steps.len() == 1
    }

    /// Largest step in the sup norm.
    pub fn max_step(&self) -> i64 {
        self.steps
            .iter()
            .flat_map(|s| s.iter().map(|c| c.abs()))
            .max()
            .unwrap_or(0)
    }

    /// Largest step in the l1 norm.
    pub fn max_step_l1(&self) -> i64 {
        self.steps
            .iter()
            .map(|s| s.iter().map(|c| c.abs()).sum::<i64>())
            .max()
            .unwrap_or(0)
    }

    /// Index of a step drawn from the kernel.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        self.cumulative.partition_point(|&c| c <= u).min(self.steps.len() - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &[i64] {
        &self.steps[self.sample_index(rng)]
    }

    /// Characteristic function `phi(theta) = sum_x nu(x) exp(i theta.x)`
    /// as `(re, im)`.
    pub fn char_fn(&self, theta: &[f64]) -> (f64, f64) {
        let mut re = 0.0;
        let mut im = 0.0;
        for (s, m) in self.steps.iter().zip(&self.masses) {
            let phase: f64 = s.iter().zip(theta).map(|(&x, t)| x as f64 * t).sum();
            re += m * phase.cos();
            im += m * phase.sin();
        }
        (re, im)
    }

    /// `|phi(theta)|^2`, the characteristic function of the difference walk.
    pub fn char_fn_sq(&self, theta: &[f64]) -> f64 {
        if self.kind == KernelKind::Srw {
            let phi = theta.iter().map(|t| t.cos()).sum::<f64>() / self.dim as f64;
            return phi * phi;
        }
        let (re, im) = self.char_fn(theta);
        re * re + im * im
    }

    /// Polynomial tail exponent `eta = liminf -log nu(|x| > R) / log R` of the
    /// untruncated family.
    pub fn tail_exponent_eta(&self) -> f64 {
        match self.kind {
            KernelKind::Srw | KernelKind::FiniteSupport => f64::INFINITY,
            KernelKind::Nu1 => 1.0,
            KernelKind::Nu2 => 4.0 - self.dim as f64,
        }
    }

    /// True when the law is invariant under every coordinate reflection.
    pub fn reflection_symmetric(&self) -> bool {
        if self.kind == KernelKind::Srw {
            return true;
        }
        self.steps.iter().zip(&self.masses).all(|(s, &m)| {
            (0..self.dim).all(|i| {
                let mut r = s.clone();
                r[i] = -r[i];
                (self.mass(&r) - m).abs() <= 1e-15 * m.max(1e-300)
            })
        })
    }

    /// The time-reversed kernel `x -> nu(-x)`.
    pub fn reversed(&self) -> WalkKernel {
        let steps = self.steps.iter().map(|s| s.iter().map(|c| -c).collect()).collect();
        Self::assemble(
            self.kind,
            self.dim,
            steps,
            self.masses.clone(),
            self.rmax,
            self.truncated_mass,
        )
    }

    /// `(D f)(x) = sum_y nu(y - x) f(y)` for a finitely supported `f`.
    pub fn apply_d(&self, f: &BTreeMap<Site, f64>) -> BTreeMap<Site, f64> {
        let mut out: BTreeMap<Site, f64> = BTreeMap::new();
        for (y, fy) in f {
            for (s, m) in self.steps.iter().zip(&self.masses) {
                let x: Site = y.iter().zip(s).map(|(a, b)| a - b).collect();
                *out.entry(x).or_insert(0.0) += m * fy;
            }
        }
        out
    }
}

fn norm(s: &[i64]) -> f64 {
    s.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt()
}

/// Lattice points with Euclidean norm at most `r`, in lexicographic order.
fn enumerate_ball(dim: usize, r: u64) -> Vec<Site> {
    let r = r as i64;
    let mut out = Vec::new();
    let mut cur = vec![-r; dim];
    loop {
        if cur.iter().map(|c| c * c).sum::<i64>() <= r * r {
            out.push(cur.clone());
        }
        let mut i = dim;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < r {
                cur[i] += 1;
                break;
            }
            cur[i] = -r;
        }
    }
}
