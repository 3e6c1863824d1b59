use polymerlab::estimators::plane_env;
use polymerlab::field::{
    plane_field_functional, required_half_width, Bump, EnvSource, HashedEnv, PolymerField, TestFunction,
};
use polymerlab::spine::spine_replica;
use polymerlab::{EnvModel, WalkKernel};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// `sqrt(n) * sup |F_n - F|`.
fn ks_scaled(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    d * n.sqrt()
}

/// Asymptotic Kolmogorov critical value at significance 1e-3.
fn ks_critical() -> f64 {
    (-(1e-3f64 / 2.0).ln() / 2.0).sqrt()
}

#[test]
fn plane_field_homogenizes() {
    let kernel = WalkKernel::srw(3).unwrap();
    let model = EnvModel::gaussian();
    let f = Bump::new(1.0, 1.0).unwrap();
    let n = 64;
    let half = required_half_width(&kernel, n, &f);
    let samples: Vec<_> = (0..200)
        .into_par_iter()
        .map(|id| plane_field_functional(&kernel, &model, 0.2, n, half, &f, &plane_env(model, 8, n, id)).unwrap())
        .collect();
    let sums: Vec<f64> = samples.iter().map(|s| s.weighted_sum).collect();
    let (m, se) = mean_se(&sums);
    let integral = f.integral(3);
    assert!((m - integral).abs() <= 4.0 * se, "mean {m}, int f {integral}, se {se}");
    assert!((samples[0].riemann_sum - integral).abs() < 1e-3 * integral);
    assert!(samples.iter().all(|s| s.min_y > 0.0));
}

#[test]
fn martingale_increments_are_centred_and_orthogonal() {
    let kernel = WalkKernel::srw(3).unwrap();
    let model = EnvModel::gaussian();
    let n = 10;
    let pairs: Vec<(f64, f64)> = (0..4000)
        .into_par_iter()
        .map(|id| {
            let env = HashedEnv::for_replica(model, 21, id);
            let mut field = PolymerField::init_point(&kernel, &model, 0.3).unwrap();
            for _ in 0..n {
                field.evolve_step(&env).unwrap();
            }
            let w = field.total_mass();
            field.evolve_step(&env).unwrap();
            (w, field.total_mass())
        })
        .collect();
    let inc: Vec<f64> = pairs.iter().map(|(a, b)| b - a).collect();
    let (m, se) = mean_se(&inc);
    assert!(m.abs() <= 4.0 * se, "E[W_11 - W_10] = {m} +- {se}");
    let cross: Vec<f64> = pairs.iter().map(|(a, b)| (b - a) * a).collect();
    let (m, se) = mean_se(&cross);
    assert!(m.abs() <= 4.0 * se, "E[(W_11 - W_10) W_10] = {m} +- {se}");
    assert!(se > 0.0);
}

#[test]
fn spine_marginals_follow_tilted_and_base_laws() {
    let kernel = WalkKernel::srw(3).unwrap();
    let model = EnvModel::gaussian();
    let beta = 0.5;
    let time = 3u32;
    let fixed = [1i64, 0, 0];
    let draws: Vec<(f64, Option<f64>)> = (0..5000)
        .into_par_iter()
        .map(|id| {
            let s = spine_replica(&kernel, &model, beta, 5, 4, id).unwrap();
            let at = &s.path[time as usize];
            let on = s.environment().omega(time, at).unwrap();
            let off = (at.as_slice() != fixed).then(|| s.environment().omega(time, &fixed).unwrap());
            (on, off)
        })
        .collect();
    let on: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let off: Vec<f64> = draws.iter().filter_map(|d| d.1).collect();
    assert!(off.len() > 4000);

    let tilted = Normal::new(beta, 1.0).unwrap();
    let base = Normal::new(0.0, 1.0).unwrap();
    let k_on = ks_scaled(on.clone(), |x| tilted.cdf(x));
    let k_off = ks_scaled(off, |x| base.cdf(x));
    assert!(k_on < ks_critical(), "on-spine KS {k_on}");
    assert!(k_off < ks_critical(), "off-spine KS {k_off}");
    // and the test has power: the spine values are not base-distributed
    assert!(ks_scaled(on, |x| base.cdf(x)) > ks_critical());
}
