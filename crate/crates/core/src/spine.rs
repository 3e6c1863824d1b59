//! Size-biased environments through the spine construction.
//!
//! A walk `X` is drawn from the kernel, the environment on its graph
//! `{(i, X_i)}` is drawn from the tilted law `exp(beta omega - lambda) dP`,
//! and every other point keeps its background value. The resulting
//! environment has the law `W_n dP`.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::env::EnvModel;
use crate::error::{Error, Result};
use crate::exact::{exact_law_of_wn, exact_partition, EnumerationBudget};
use crate::field::{EnvSource, HashedEnv, Overridden, PolymerField, TableEnv};
use crate::numeric::mean_se;
use crate::rng::{tag, StreamKey};
use crate::walk::{Site, WalkKernel};

#[derive(Debug, Clone)]
pub struct SpineSample<E> {
    /// `X_0, ..., X_n`.
    pub path: Vec<Site>,
    /// Tilted values on the spine, `omega_hat_1, ..., omega_hat_n`.
    pub tilted: Vec<f64>,
    /// `log W_n` under the composite environment.
    pub log_w: f64,
    env: Overridden<E>,
}

impl<E: EnvSource> SpineSample<E> {
    /// The composite environment `omega_tilde`.
    pub fn environment(&self) -> &Overridden<E> {
        &self.env
    }

    pub fn w(&self) -> f64 {
        self.log_w.exp()
    }
}

/// Draws a spine over `background` and evaluates `W_n` on the composite environment.
pub fn sample_spine<E: EnvSource, R: Rng + ?Sized>(
    kernel: &WalkKernel,
    model: &EnvModel,
    beta: f64,
    n: u32,
    background: E,
    path_rng: &mut R,
    tilt_rng: &mut R,
) -> Result<SpineSample<E>> {
    if n < 1 {
        return Err(Error::invalid("field.nmax", "the spine needs n >= 1"));
    }
    let tilt = model.tilted(beta)?;
    let mut path = vec![vec![0i64; kernel.dim()]];
    let mut tilted = Vec::with_capacity(n as usize);
    let mut env = Overridden::new(background);
    for i in 1..=n {
        let step = kernel.sample(path_rng);
        let next: Site = path.last().unwrap().iter().zip(step).map(|(x, s)| x + s).collect();
        let w = tilt.sample(tilt_rng);
        env.set(i, next.clone(), w);
        tilted.push(w);
        path.push(next);
    }
    let mut field = PolymerField::init_point(kernel, model, beta)?;
    for _ in 0..n {
        field.evolve_step(&env)?;
    }
    Ok(SpineSample {
        path,
        tilted,
        log_w: field.log_total_mass(),
        env,
    })
}

/// Spine sample `replica` under `master_seed`, with its own background environment.
pub fn spine_replica(
    kernel: &WalkKernel,
    model: &EnvModel,
    beta: f64,
    n: u32,
    master_seed: u64,
    replica: u64,
) -> Result<SpineSample<HashedEnv>> {
    let key = StreamKey::new(master_seed).replica(replica);
    let background = HashedEnv::new(*model, key.child(tag::SPINE_BACKGROUND));
    let mut path_rng = key.child(tag::SPINE_PATH).rng();
    let mut tilt_rng = key.child(tag::SPINE_TILT).rng();
    sample_spine(kernel, model, beta, n, background, &mut path_rng, &mut tilt_rng)
}

/// A test function of `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestG {
    One,
    MinTwo,
    InverseOnePlus,
    AboveOne,
    Inverse,
}

impl TestG {
    /// The bounded battery used for the two-sided comparison.
    pub const BATTERY: [TestG; 4] = [TestG::One, TestG::MinTwo, TestG::InverseOnePlus, TestG::AboveOne];

    pub fn eval(self, w: f64) -> f64 {
        match self {
            TestG::One => 1.0,
            TestG::MinTwo => w.min(2.0),
            TestG::InverseOnePlus => 1.0 / (1.0 + w),
            TestG::AboveOne => {
                if w > 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            TestG::Inverse => 1.0 / w,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TestG::One => "one",
            TestG::MinTwo => "min(w,2)",
            TestG::InverseOnePlus => "1/(1+w)",
            TestG::AboveOne => "1{w>1}",
            TestG::Inverse => "1/w",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SizeBiasedRow {
    pub g: TestG,
    /// Spine estimate of `E_tilde[g(W_n)]`.
    pub spine: f64,
    pub spine_se: f64,
    /// Plain estimate of `E[W_n g(W_n)]`.
    pub plain: f64,
    pub plain_se: f64,
    /// `(spine - plain) / sqrt(spine_se^2 + plain_se^2)`.
    pub z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SizeBiased {
    pub n: u32,
    pub replicas: u64,
    pub rows: Vec<SizeBiasedRow>,
    /// `log W_n` of every spine sample and plain sample, in replica order.
    pub log_w_spine: Vec<f64>,
    pub log_w_plain: Vec<f64>,
}

/// Spine estimates of `E_tilde[g(W_n)]` against plain estimates of
/// `E[W_n g(W_n)]`, on `R` independent samples of each.
pub fn size_biased_expectation(
    kernel: &WalkKernel,
    model: &EnvModel,
    beta: f64,
    n: u32,
    battery: &[TestG],
    replicas: u64,
    master_seed: u64,
) -> Result<SizeBiased> {
    if replicas < 2 {
        return Err(Error::invalid("run.R", "need at least two replicas"));
    }
    let log_w_spine = (0..replicas)
        .into_par_iter()
        .map(|id| spine_replica(kernel, model, beta, n, master_seed, id).map(|s| s.log_w))
        .collect::<Result<Vec<_>>>()?;
    let log_w_plain = (0..replicas)
        .into_par_iter()
        .map(|id| {
            let env = HashedEnv::for_replica(*model, master_seed, id);
            let mut f = PolymerField::init_point(kernel, model, beta)?;
            for _ in 0..n {
                f.evolve_step(&env)?;
            }
            Ok(f.log_total_mass())
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = battery
        .iter()
        .map(|&g| {
            let a: Vec<f64> = log_w_spine.iter().map(|l| g.eval(l.exp())).collect();
            let b: Vec<f64> = log_w_plain
                .iter()
                .map(|l| {
                    let w = l.exp();
                    w * g.eval(w)
                })
                .collect();
            let (spine, spine_se) = mean_se(&a);
            let (plain, plain_se) = mean_se(&b);
            let s = (spine_se * spine_se + plain_se * plain_se).sqrt();
            SizeBiasedRow {
                g,
                spine,
                spine_se,
                plain,
                plain_se,
                z: if s > 0.0 { (spine - plain) / s } else { 0.0 },
            }
        })
        .collect();
    Ok(SizeBiased {
        n,
        replicas,
        rows,
        log_w_spine,
        log_w_plain,
    })
}

fn merge_law(mut law: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    law.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (v, q) in law {
        match merged.last_mut() {
            Some(last) if (v - last.0).abs() <= 1e-12 * v.abs().max(last.0.abs()) => last.1 += q,
            _ => merged.push((v, q)),
        }
    }
    merged
}

/// `{(w, w q)}`: the law of `W_n` under `W_n dP`.
pub fn size_biased_law(law: &[(f64, f64)]) -> Vec<(f64, f64)> {
    law.iter().map(|&(w, q)| (w, w * q)).collect()
}

/// Total variation distance between two finite laws, matching atoms within
/// `1e-12` relative.
pub fn total_variation(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut atoms: Vec<(f64, f64)> = a.to_vec();
    atoms.extend(b.iter().map(|&(v, q)| (v, -q)));
    atoms.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut total = 0.0;
    let mut current: Option<(f64, f64)> = None;
    for (v, q) in atoms {
        current = match current {
            Some((c, s)) if (v - c).abs() <= 1e-12 * v.abs().max(c.abs()) => Some((c, s + q)),
            Some((_, s)) => {
                total += s.abs();
                Some((v, q))
            }
            None => Some((v, q)),
        };
    }
    if let Some((_, s)) = current {
        total += s.abs();
    }
    total / 2.0
}

/// Exact law of `W_n` under the spine construction, by enumerating spine
/// steps, tilted values on the spine and background values elsewhere.
/// Two-point environments only.
pub fn exact_spine_law(
    model: &EnvModel,
    kernel: &WalkKernel,
    beta: f64,
    n: u32,
    budget: &EnumerationBudget,
) -> Result<Vec<(f64, f64)>> {
    let EnvModel::TwoPoint { a, b, p } = *model else {
        return Err(Error::invalid(
            "env.family",
            "the exact spine law needs a two-point environment",
        ));
    };
    if n < 1 {
        return Err(Error::invalid("field.nmax", "the spine needs n >= 1"));
    }
    let pa_tilt = model.tilted(beta)?.two_point_mass_a().unwrap();
    let base = [(a, p), (b, 1.0 - p)];
    let tilted = [(a, pa_tilt), (b, 1.0 - pa_tilt)];

    let mut layers: Vec<Vec<Site>> = vec![vec![vec![0; kernel.dim()]]];
    for _ in 0..n {
        let mut next: Vec<Site> = layers
            .last()
            .unwrap()
            .iter()
            .flat_map(|x| {
                kernel
                    .steps()
                    .iter()
                    .map(move |s| x.iter().zip(s).map(|(u, v)| u + v).collect())
            })
            .collect();
        next.sort();
        next.dedup();
        layers.push(next);
    }
    let points: Vec<(u32, Site)> = layers
        .iter()
        .enumerate()
        .skip(1)
        .flat_map(|(t, l)| l.iter().map(move |x| (t as u32, x.clone())))
        .collect();
    let paths = (kernel.support_size() as f64).powi(n as i32);
    let states = paths * 2f64.powi(points.len() as i32);
    if states > budget.max_env_states {
        return Err(Error::budget("exact spine law states", states, budget.max_env_states));
    }

    let mut out: Vec<(f64, f64)> = Vec::new();
    let steps = kernel.support_size();
    let mut choice = vec![0usize; n as usize];
    loop {
        let mut spine = vec![vec![0i64; kernel.dim()]];
        let mut path_prob = 1.0;
        for &c in &choice {
            let s = &kernel.steps()[c];
            let x: Site = spine.last().unwrap().iter().zip(s).map(|(u, v)| u + v).collect();
            path_prob *= kernel.masses()[c];
            spine.push(x);
        }
        for bits in 0u64..(1u64 << points.len()) {
            let mut prob = path_prob;
            let mut table = TableEnv::new();
            for (j, (t, x)) in points.iter().enumerate() {
                let pick = ((bits >> j) & 1) as usize;
                let on_spine = spine[*t as usize] == *x;
                let (v, q) = if on_spine { tilted[pick] } else { base[pick] };
                prob *= q;
                table.insert(*t, x.clone(), v);
            }
            if prob == 0.0 {
                continue;
            }
            let w = exact_partition(&table, kernel, model, beta, n, budget)?;
            out.push((w, prob));
        }
        let mut j = 0;
        while j < choice.len() {
            choice[j] += 1;
            if choice[j] < steps {
                break;
            }
            choice[j] = 0;
            j += 1;
        }
        if j == choice.len() {
            break;
        }
    }
    Ok(merge_law(out))
}

/// The law of `W_n` under `W_n dP` computed directly from the environment law.
pub fn exact_size_biased_law(
    model: &EnvModel,
    kernel: &WalkKernel,
    beta: f64,
    n: u32,
    budget: &EnumerationBudget,
) -> Result<Vec<(f64, f64)>> {
    Ok(merge_law(size_biased_law(&exact_law_of_wn(
        model, kernel, beta, n, budget,
    )?)))
}
