//! The plane-started field `Ytilde(n, x)` and the fluctuation functional.

use serde::{Deserialize, Serialize};

use super::grid::{Grid, Shift};
use super::source::EnvSource;
use crate::env::EnvModel;
use crate::error::{Error, Result};
use crate::numeric::{integrate, unit_sphere_area};
use crate::walk::WalkKernel;

/// Largest periodic box held in memory by [`PlaneField`].
pub const MAX_PLANE_SITES: usize = 1 << 27;

/// A test function `f: R^d -> R` with bounded support.
pub trait TestFunction: Sync {
    fn eval(&self, x: &[f64]) -> f64;
    /// `f` vanishes outside `[-r, r]^d`.
    fn support_radius(&self) -> f64;
    /// `int_{R^d} f`.
    fn integral(&self, dim: usize) -> f64;
}

/// `f(x) = amplitude * exp(1 - 1 / (1 - |x|^2 / radius^2))` on the open ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub radius: f64,
    pub amplitude: f64,
}

impl Bump {
    pub fn new(radius: f64, amplitude: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite() && amplitude.is_finite()) {
            return Err(Error::invalid("fluct.f", "bump needs radius > 0 and finite amplitude"));
        }
        Ok(Bump { radius, amplitude })
    }

    fn profile(rho2: f64) -> f64 {
        if rho2 >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - rho2)).exp()
        }
    }
}

impl TestFunction for Bump {
    fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|c| c * c).sum::<f64>() / (self.radius * self.radius);
        self.amplitude * Self::profile(r2)
    }

    fn support_radius(&self) -> f64 {
        self.radius
    }

    fn integral(&self, dim: usize) -> f64 {
        let radial = integrate(|r| r.powi(dim as i32 - 1) * Self::profile(r * r), 0.0, 1.0, 64, 20);
        self.amplitude * self.radius.powi(dim as i32) * unit_sphere_area(dim) * radial
    }
}

/// `f = 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ZeroFunction;

impl TestFunction for ZeroFunction {
    fn eval(&self, _: &[f64]) -> f64 {
        0.0
    }

    fn support_radius(&self) -> f64 {
        0.0
    }

    fn integral(&self, _: usize) -> f64 {
        0.0
    }
}

/// `Ytilde` on the periodic box `[-B, B]^d`, evolved by
/// `Ytilde(n+1, x) = exp(beta omega(n+1, x) - lambda) (D Ytilde(n))(x)`.
#[derive(Debug, Clone)]
pub struct PlaneField {
    dim: usize,
    half: i64,
    side: usize,
    shifts: Vec<Shift>,
    beta: f64,
    lambda: f64,
    annealed: bool,
    time: u32,
    values: Vec<f64>,
}

impl PlaneField {
    /// `Ytilde(0, .) = 1` on the box.
    pub fn new(kernel: &WalkKernel, env: &EnvModel, beta: f64, half_width: i64) -> Result<Self> {
        let lambda = env.log_mgf(beta)?;
        let dim = kernel.dim();
        if half_width < kernel.max_step() {
            return Err(Error::invalid("field.box", "box narrower than one kernel step"));
        }
        let side = (2 * half_width + 1) as usize;
        let sites = (side as f64).powi(dim as i32);
        if sites > MAX_PLANE_SITES as f64 {
            return Err(Error::budget("plane field box", sites, MAX_PLANE_SITES as f64));
        }
        Ok(PlaneField {
            dim,
            half: half_width,
            side,
            shifts: Shift::backward(kernel),
            beta,
            lambda,
            annealed: beta == 0.0 || env.is_degenerate(),
            time: 0,
            values: vec![1.0; side.pow(dim as u32)],
        })
    }

    pub fn time(&self) -> u32 {
        self.time
    }

    pub fn half_width(&self) -> i64 {
        self.half
    }

    fn index(&self, site: &[i64]) -> usize {
        let side = self.side as i64;
        site.iter().fold(0usize, |acc, &c| {
            acc * self.side + (c + self.half).rem_euclid(side) as usize
        })
    }

    /// `Ytilde(n, x)`, with `x` read periodically.
    pub fn value(&self, site: &[i64]) -> f64 {
        self.values[self.index(site)]
    }

    /// `log Ytilde(n, x)`.
    pub fn log_value(&self, site: &[i64]) -> f64 {
        self.value(site).ln()
    }

    pub fn evolve_step<E: EnvSource>(&mut self, env: &E) -> Result<()> {
        let t = self.time + 1;
        if self.annealed {
            self.time = t;
            return Ok(());
        }
        let mut next = vec![0.0; self.values.len()];
        let mut site = vec![-self.half; self.dim];
        let mut src = vec![0i64; self.dim];
        for slot in next.iter_mut() {
            let mut acc = 0.0;
            for s in &self.shifts {
                let d = self.dim;
                src[..d - 1]
                    .iter_mut()
                    .zip(&site)
                    .zip(&s.pre)
                    .for_each(|((o, x), p)| *o = x - p);
                src[d - 1] = site[d - 1] - s.last;
                acc += s.mass * self.values[self.index(&src)];
            }
            *slot = acc * (self.beta * env.omega(t, &site)? - self.lambda).exp();
            for i in (0..self.dim).rev() {
                site[i] += 1;
                if site[i] <= self.half {
                    break;
                }
                site[i] = -self.half;
            }
        }
        self.values = next;
        self.time = t;
        Ok(())
    }
}

/// One sample of the fluctuation functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneSample {
    pub n: u32,
    /// `X_n(f) = n^{-d/2} sum_x f(x / sqrt n) (Ytilde(n, x) - 1)`.
    pub fluctuation: f64,
    /// `n^{-d/2} sum_x f(x / sqrt n) Ytilde(n, x)`.
    pub weighted_sum: f64,
    /// `n^{-d/2} sum_x f(x / sqrt n)`, the lattice approximation of `int f`.
    pub riemann_sum: f64,
    pub min_y: f64,
    pub max_y: f64,
}

/// Smallest periodic half-width on which `plane_field_functional` is
/// unaffected by the boundary.
pub fn required_half_width(kernel: &WalkKernel, n: u32, f: &dyn TestFunction) -> i64 {
    let s = ((n as f64).sqrt() * f.support_radius()).ceil() as i64;
    s + n as i64 * kernel.max_step()
}

/// Samples `X_n(f)` for `Ytilde` on the periodic box of half-width `half_width`.
///
/// Only the backward light cone of the support of `f(./sqrt n)` is evolved.
/// When the box passes the margin check the cone never wraps around, so the
/// values agree bit for bit with a full [`PlaneField`] evolution.
pub fn plane_field_functional<E: EnvSource>(
    kernel: &WalkKernel,
    model: &EnvModel,
    beta: f64,
    n: u32,
    half_width: i64,
    f: &dyn TestFunction,
    env: &E,
) -> Result<PlaneSample> {
    let lambda = model.log_mgf(beta)?;
    if n == 0 {
        return Err(Error::invalid("field.nmax", "the fluctuation field needs n >= 1"));
    }
    let need = required_half_width(kernel, n, f);
    if half_width < need {
        return Err(Error::invalid(
            "field.box",
            format!("half-width {half_width} is inside the margin {need} needed at n={n}"),
        ));
    }
    let dim = kernel.dim();
    let sqrt_n = (n as f64).sqrt();
    let scale = (n as f64).powf(-(dim as f64) / 2.0);
    let s = (sqrt_n * f.support_radius()).floor() as i64;
    let annealed = beta == 0.0 || model.is_degenerate();

    let sources = Shift::forward(kernel);
    let conv = Shift::backward(kernel);
    let mut y = Grid::cube(dim, s, 1.0);
    if !annealed {
        for _ in 0..n {
            let layout = y.dilate(&sources);
            y.reset(layout, 1.0);
        }
        let mut next = Grid::empty(dim, 1);
        let mut omega = Vec::new();
        for t in 1..=n {
            next.reset(y.erode(&conv), 0.0);
            y.convolve_into(&mut next, &conv);
            next.for_each_row_mut(|site, lo, stride, vals| {
                omega.clear();
                omega.resize(vals.len(), 0.0);
                env.omega_row(t, site, lo, stride, vals, &mut omega)?;
                for (v, &w) in vals.iter_mut().zip(&omega) {
                    *v *= (beta * w - lambda).exp();
                }
                Ok(())
            })?;
            std::mem::swap(&mut y, &mut next);
        }
    }

    let mut out = PlaneSample {
        n,
        fluctuation: 0.0,
        weighted_sum: 0.0,
        riemann_sum: 0.0,
        min_y: f64::INFINITY,
        max_y: f64::NEG_INFINITY,
    };
    let mut x = vec![0.0; dim];
    let target = Grid::cube(dim, s, 0.0);
    target.for_each(|site, _| {
        for (xi, &c) in x.iter_mut().zip(site) {
            *xi = c as f64 / sqrt_n;
        }
        let fx = f.eval(&x);
        let yv = y.get(site);
        out.fluctuation += fx * (yv - 1.0);
        out.weighted_sum += fx * yv;
        out.riemann_sum += fx;
        out.min_y = out.min_y.min(yv);
        out.max_y = out.max_y.max(yv);
    });
    out.fluctuation *= scale;
    out.weighted_sum *= scale;
    out.riemann_sum *= scale;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::source::HashedEnv;
    use crate::rng::{tag, StreamKey};

    fn plane_env(model: EnvModel, seed: u64) -> HashedEnv {
        HashedEnv::new(model, StreamKey::new(seed).child(tag::PLANE_ENVIRONMENT))
    }

    #[test]
    fn bump_integral_matches_direct_quadrature() {
        let b = Bump::new(1.0, 1.0).unwrap();
        // d = 1: integrate f directly on the line.
        let direct = integrate(|x| b.eval(&[x]), -1.0, 1.0, 200, 20);
        assert!((b.integral(1) - direct).abs() < 1e-12);
        // d = 2 on a fine product grid.
        let h = 1e-3;
        let mut s = 0.0;
        for i in -1000..=1000 {
            for j in -1000..=1000 {
                s += b.eval(&[i as f64 * h, j as f64 * h]);
            }
        }
        assert!((b.integral(2) - s * h * h).abs() < 1e-9);
    }

    #[test]
    fn cone_matches_full_periodic_box() {
        for d in 1..=2 {
            let k = WalkKernel::srw(d).unwrap();
            let model = EnvModel::gaussian();
            let env = plane_env(model, 8);
            let f = Bump::new(1.0, 1.0).unwrap();
            let n = 9;
            let b = required_half_width(&k, n, &f);
            let sample = plane_field_functional(&k, &model, 0.6, n, b, &f, &env).unwrap();
            let mut full = PlaneField::new(&k, &model, 0.6, b).unwrap();
            for _ in 0..n {
                full.evolve_step(&env).unwrap();
            }
            let s = ((n as f64).sqrt()).floor() as i64;
            let mut fl = 0.0;
            for site in Grid::cube(d, s, 0.0).sites() {
                let x: Vec<f64> = site.iter().map(|&c| c as f64 / (n as f64).sqrt()).collect();
                fl += f.eval(&x) * (full.value(&site) - 1.0);
            }
            fl *= (n as f64).powf(-(d as f64) / 2.0);
            assert_eq!(fl.to_bits(), sample.fluctuation.to_bits(), "d={d}");
        }
    }

    #[test]
    fn asymmetric_kernel_cone_matches_full_box() {
        let k = WalkKernel::finite_support(2, [(vec![1, 0], 0.3), (vec![0, -1], 0.5), (vec![-2, 1], 0.2)]).unwrap();
        let model = EnvModel::uniform(-1.0, 1.0).unwrap();
        let env = plane_env(model, 2);
        let f = Bump::new(1.5, 2.0).unwrap();
        let n = 5;
        let b = required_half_width(&k, n, &f);
        let sample = plane_field_functional(&k, &model, 1.0, n, b, &f, &env).unwrap();
        let mut full = PlaneField::new(&k, &model, 1.0, b).unwrap();
        for _ in 0..n {
            full.evolve_step(&env).unwrap();
        }
        let s = ((n as f64).sqrt() * 1.5).floor() as i64;
        let mut ws = 0.0;
        for site in Grid::cube(2, s, 0.0).sites() {
            let x: Vec<f64> = site.iter().map(|&c| c as f64 / (n as f64).sqrt()).collect();
            ws += f.eval(&x) * full.value(&site);
        }
        ws *= (n as f64).powf(-1.0);
        assert_eq!(ws.to_bits(), sample.weighted_sum.to_bits());
    }

    #[test]
    fn trivial_cases_vanish() {
        let k = WalkKernel::srw(3).unwrap();
        let model = EnvModel::gaussian();
        let env = plane_env(model, 1);
        let f = Bump::new(1.0, 1.0).unwrap();
        let b = required_half_width(&k, 16, &f);
        let s = plane_field_functional(&k, &model, 0.0, 16, b, &f, &env).unwrap();
        assert_eq!(s.fluctuation, 0.0);
        let z = plane_field_functional(&k, &model, 0.5, 16, b, &ZeroFunction, &env).unwrap();
        assert_eq!(z.fluctuation, 0.0);
        assert!(plane_field_functional(&k, &model, 0.5, 16, b - 1, &f, &env).is_err());
    }

    #[test]
    fn plane_field_starts_flat_and_stays_flat_without_disorder() {
        let k = WalkKernel::srw(2).unwrap();
        let model = EnvModel::gaussian();
        let env = plane_env(model, 3);
        let mut p = PlaneField::new(&k, &model, 0.0, 4).unwrap();
        assert_eq!(p.value(&[4, -4]), 1.0);
        p.evolve_step(&env).unwrap();
        p.evolve_step(&env).unwrap();
        assert_eq!(p.value(&[0, 0]), 1.0);
        assert_eq!(p.log_value(&[1, 2]), 0.0);
    }
}
