use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde_json::json;

use super::checkpoint;
use super::config::RunConfig;
use super::output::{num, opt, Output, Record};
use crate::env::EnvModel;
use crate::error::{Error, Result};
use crate::estimators::{
    default_k, fluctuation_samples, growth_from_summary, hill_tail, localization_table, overshoot_boundedness,
    overshoot_table, plane_env, scaling_fit, second_moment_check, simulate, supermultiplicativity_check, variance_row,
    EngineConfig, ReplicaSummary, TailFit,
};
use crate::exact::{
    critical_growth_fit, exact_partition, log_grid, pinning_series, replica_moment, second_moment_renewal, solve_beta2,
    Beta2Value, EnumerationBudget,
};
use crate::field::{plane_field_functional, required_half_width, Bump, HashedEnv, PolymerField, TestFunction};
use crate::spine::{exact_size_biased_law, exact_spine_law, size_biased_expectation, total_variation, TestG};
use crate::walk::{collision_probability_with, first_collision_law, return_probs};

pub enum Status {
    Complete,
    Halted,
}

pub fn run(cfg: &RunConfig, out: &mut Output, workers: usize) -> Result<Status> {
    match cfg.command.as_str() {
        "lambda" => lambda(cfg, out),
        "beta2" => beta2(cfg, out),
        "evolve" => evolve(cfg, out),
        "tail" => tail(cfg, out, workers),
        "overshoot" => overshoot(cfg, out, workers),
        "localize" => localize(cfg, out, workers),
        "second-moment" => second_moment(cfg, out, workers),
        "critical-growth" => critical_growth(cfg, out),
        "moment-growth" => moment_growth(cfg, out, workers),
        "fluct" => fluct(cfg, out),
        "spine-check" => spine_check(cfg, out),
        "oracle-check" => oracle_check(cfg, out),
        other => Err(Error::invalid("command", format!("unknown subcommand {other:?}"))),
    }
}

fn done(_: ()) -> Result<Status> {
    Ok(Status::Complete)
}

fn lambda(cfg: &RunConfig, out: &mut Output) -> Result<Status> {
    let model = cfg.model()?;
    let beta = cfg.f64("run.beta")?;
    out.record(Record::new("lambda", model.log_mgf(beta)?, "closed form"));
    out.record(Record::new("chi", model.chi(beta)?, "closed form"));
    out.record(Record::new("log_chi", model.log_chi(beta)?, "closed form"));
    out.detail("model", model)?;
    done(())
}

fn beta2(cfg: &RunConfig, out: &mut Output) -> Result<Status> {
    let kernel = cfg.kernel()?;
    let model = cfg.model()?;
    let tol = cfg.f64("run.tol")?;
    let quad = cfg.usize("walk.quad_points")?;
    let b = solve_beta2(&kernel, &model, tol)?;
    let collision = collision_probability_with(&kernel, tol.max(1e-12), quad)?;
    let value = match b.value {
        Beta2Value::Finite { beta2 } => json!(beta2),
        Beta2Value::InfiniteWithinRange { .. } => json!("inf-within-range"),
        Beta2Value::Infinite => json!("inf"),
    };
    out.record(Record::new("beta2", value.clone(), "bisection on log chi(beta) + log pi").residual(b.residual));
    out.record(Record::new("pi", collision.pi, "collision probability").residual(collision.error_estimate));
    out.detail("beta2", value)?;
    out.detail("residual", b.residual)?;
    out.detail("solution", &b)?;
    done(())
}

fn argmax_cell(site: &[i64]) -> String {
    let parts: Vec<String> = site.iter().map(|c| c.to_string()).collect();
    format!("\"({})\"", parts.join(" "))
}

fn evolve(cfg: &RunConfig, out: &mut Output) -> Result<Status> {
    let kernel = cfg.kernel()?;
    let model = cfg.model()?;
    let beta = cfg.f64("run.beta")?;
    let n_max = cfg.u32("field.nmax")?;
    let replicas = cfg.u64("run.R")?;
    let seed = cfg.u64("run.seed")?;
    match cfg.raw("field.mode") {
        "point" => {
            let rows = (0..replicas)
                .into_par_iter()
                .map(|id| {
                    let env = HashedEnv::for_replica(model, seed, id);
                    let mut f = PolymerField::init_point(&kernel, &model, beta)?;
                    let mut text = String::new();
                    loop {
                        let _ = writeln!(
                            text,
                            "{id},{},{},{},{}",
                            f.time(),
                            num(f.log_total_mass()),
                            num(f.max_endpoint_mass()),
                            argmax_cell(&f.argmax_endpoint())
                        );
                        if f.time() == n_max {
                            break;
                        }
                        f.evolve_step(&env)?;
                    }
                    Ok(text)
                })
                .collect::<Result<Vec<String>>>()?;
            out.raw(
                "trajectories.csv",
                &(String::from("replica,n,logW,maxmu,argmax_x\n") + &rows.concat()),
            )?;
        }
        "plane" => {
            let f = bump(cfg)?;
            let half = match cfg.opt::<i64>("field.box")? {
                Some(h) => h,
                None => required_half_width(&kernel, n_max, &f),
            };
            let samples = (0..replicas)
                .into_par_iter()
                .map(|id| {
                    let env = plane_env(model, seed, n_max, id);
                    plane_field_functional(&kernel, &model, beta, n_max, half, &f, &env)
                })
                .collect::<Result<Vec<_>>>()?;
            out.csv(
                "plane.csv",
                &[
                    "replica",
                    "n",
                    "fluctuation",
                    "weighted_sum",
                    "riemann_sum",
                    "min_y",
                    "max_y",
                ],
                samples.iter().enumerate().map(|(i, s)| {
                    vec![
                        i.to_string(),
                        s.n.to_string(),
                        num(s.fluctuation),
                        num(s.weighted_sum),
                        num(s.riemann_sum),
                        num(s.min_y),
                        num(s.max_y),
                    ]
                }),
            )?;
            out.detail("half_width", half)?;
            out.detail("integral_f", f.integral(kernel.dim()))?;
        }
        other => return Err(Error::invalid("field.mode", format!("unknown mode {other:?}"))),
    }
    done(())
}

fn bump(cfg: &RunConfig) -> Result<Bump> {
    Bump::new(cfg.f64("fluct.radius")?, cfg.f64("fluct.amplitude")?)
}

/// Runs replicas `0..R` of `engine`, resuming from and writing to the
/// checkpoint in the output directory. `None` when halted early on request.
fn run_engine(cfg: &RunConfig, out: &Output, engine: &EngineConfig, workers: usize) -> Result<Option<ReplicaSummary>> {
    let replicas = cfg.u64("run.R")?;
    if replicas < 1 {
        return Err(Error::invalid("run.R", "need R >= 1"));
    }
    engine.validate()?;
    let every = cfg.u64("checkpoint.every")?.max(1);
    let seconds = Duration::from_secs_f64(cfg.f64("checkpoint.seconds")?.max(0.0));
    let halt_after: Option<u64> = cfg.opt("checkpoint.halt_after")?;
    let hash = cfg.run_hash();
    let path = out.path("checkpoint.json");
    let mut summary = if path.exists() {
        let s = checkpoint::load(&path, &hash)?;
        if s.meta != engine.meta() {
            return Err(Error::Checkpoint(format!("{}: run metadata differs", path.display())));
        }
        s
    } else {
        ReplicaSummary::empty(engine.meta())
    };
    let chunk = (4 * workers as u64).max(16).min(every);
    let mut since_save = 0u64;
    let mut last_save = Instant::now();
    let mut done = summary.replicas() as u64;
    let halt_after = halt_after.filter(|&h| h > done);
    while done < replicas {
        let mut end = (done + chunk).min(replicas);
        if let Some(h) = halt_after {
            end = end.min(h.max(done + 1));
        }
        summary = summary.merge(simulate(engine, done..end)?)?;
        since_save += end - done;
        done = end;
        let halting = halt_after.is_some_and(|h| done >= h) && done < replicas;
        if since_save >= every || last_save.elapsed() >= seconds || done == replicas || halting {
            checkpoint::save(&path, &summary, &hash)?;
            since_save = 0;
            last_save = Instant::now();
        }
        if halting {
            return Ok(None);
        }
    }
    Ok(Some(summary))
}

fn engine(cfg: &RunConfig) -> Result<EngineConfig> {
    Ok(EngineConfig::new(
        cfg.kernel()?,
        cfg.model()?,
        cfg.f64("run.beta")?,
        cfg.u64("run.seed")?,
        cfg.u32("field.nmax")?,
    ))
}

fn tail_rows(name: &str, fit: &TailFit, n_max: u32) -> Vec<Vec<String>> {
    std::iter::once(("estimate", &fit.estimate))
        .chain(fit.sensitivity.iter().map(|s| ("sensitivity", s)))
        .map(|(role, h)| {
            vec![
                name.to_string(),
                role.to_string(),
                h.k.to_string(),
                num(h.p_hat),
                num(h.lo),
                num(h.hi),
                n_max.to_string(),
                fit.samples.to_string(),
            ]
        })
        .collect()
}

fn tail(cfg: &RunConfig, out: &mut Output, workers: usize) -> Result<Status> {
    let e = engine(cfg)?;
    let Some(summary) = run_engine(cfg, out, &e, workers)? else {
        return Ok(Status::Halted);
    };
    let n_max = e.n_max;
    out.csv(
        "suprema.csv",
        &["replica", "steps", "log_sup_w", "log_sup_hat_w"],
        summary.records.iter().map(|r| {
            vec![
                r.replica.to_string(),
                r.steps.to_string(),
                num(r.log_sup_w),
                num(r.log_sup_hat_w),
            ]
        }),
    )?;
    let k = cfg
        .opt::<usize>("run.k")?
        .unwrap_or_else(|| default_k(summary.replicas()));
    let mut rows = Vec::new();
    let mut survival = Vec::new();
    let mut fits = Vec::new();
    for (name, samples) in [("sup_w", summary.sup_w()), ("sup_hat_w", summary.sup_hat_w())] {
        match hill_tail(&samples, k) {
            Ok(mut fit) => {
                fit.horizon = Some(n_max);
                rows.extend(tail_rows(name, &fit, n_max));
                survival.extend(
                    fit.survival
                        .iter()
                        .map(|&(u, s)| vec![name.to_string(), num(u), num(s)]),
                );
                out.record(Record::new(&format!("p_hat_{name}"), fit.estimate.p_hat, "Hill").horizon(n_max as u64));
                fits.push(Some(fit));
            }
            // Ties at the starting value 1 are common at short horizons.
            Err(Error::InvalidParameter { reason, .. }) if k < samples.len() => {
                out.detail(&format!("{name}_unfitted"), reason)?;
                fits.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    out.csv(
        "tail.csv",
        &["quantity", "role", "k", "p_hat", "lo", "hi", "n_max", "samples"],
        rows,
    )?;
    out.csv("survival.csv", &["quantity", "u", "survival"], survival)?;
    if let [Some(a), Some(b)] = &fits[..] {
        let overlap = a.estimate.lo <= b.estimate.hi && b.estimate.lo <= a.estimate.hi;
        out.detail("intervals_overlap", overlap)?;
    }
    let cells = supermultiplicativity_check(&summary, &cfg.list::<f64>("run.u")?)?;
    out.csv(
        "supermultiplicativity.csv",
        &[
            "u",
            "v",
            "zeta_u",
            "zeta_v",
            "zeta_uv",
            "difference",
            "sigma",
            "empty",
            "violation",
            "n_max",
        ],
        cells.iter().map(|c| {
            vec![
                num(c.u),
                num(c.v),
                num(c.zeta_u),
                num(c.zeta_v),
                num(c.zeta_uv),
                num(c.difference),
                num(c.sigma),
                c.empty.to_string(),
                c.violation.to_string(),
                n_max.to_string(),
            ]
        }),
    )?;
    out.detail(
        "supermultiplicativity_violations",
        cells.iter().filter(|c| c.violation).count(),
    )?;
    done(())
}

fn overshoot(cfg: &RunConfig, out: &mut Output, workers: usize) -> Result<Status> {
    let mut e = engine(cfg)?.with_levels(cfg.list("run.A")?);
    e.stop_after_hits = true;
    let Some(summary) = run_engine(cfg, out, &e, workers)? else {
        return Ok(Status::Halted);
    };
    let p = cfg.f64("run.p")?;
    let rows = overshoot_table(&summary, p)?;
    out.csv(
        "overshoot.csv",
        &[
            "A",
            "n_max",
            "hits",
            "censored",
            "hit_prob",
            "hit_prob_se",
            "moment",
            "moment_se",
            "p",
        ],
        rows.iter().map(|r| {
            vec![
                num(r.a),
                r.n_max.to_string(),
                r.hits.to_string(),
                r.censored.to_string(),
                num(r.hit_prob),
                num(r.hit_prob_se),
                opt(r.moment),
                opt(r.moment_se),
                num(p),
            ]
        }),
    )?;
    let mut hits = Vec::new();
    for rec in &summary.records {
        for (h, a) in rec.hits.iter().zip(&e.a_grid) {
            if let Some(h) = h {
                hits.push(vec![
                    rec.replica.to_string(),
                    num(*a),
                    h.tau.to_string(),
                    num(h.log_w),
                    num(h.max_mu),
                ]);
            }
        }
    }
    out.csv("hits.csv", &["replica", "A", "tau", "log_w", "max_mu"], hits)?;
    out.detail("boundedness", overshoot_boundedness(&rows))?;
    done(())
}

fn localize(cfg: &RunConfig, out: &mut Output, workers: usize) -> Result<Status> {
    let mut e = engine(cfg)?.with_levels(cfg.list("run.u")?);
    e.stop_after_hits = true;
    let Some(summary) = run_engine(cfg, out, &e, workers)? else {
        return Ok(Status::Halted);
    };
    let loc = localization_table(&summary, &cfg.list::<f64>("run.delta")?)?;
    out.csv(
        "localization.csv",
        &["u", "delta", "n_max", "hits", "censored", "frequency", "frequency_se"],
        loc.rows.iter().map(|r| {
            vec![
                num(r.u),
                num(r.delta),
                r.n_max.to_string(),
                r.hits.to_string(),
                r.censored.to_string(),
                opt(r.frequency),
                opt(r.frequency_se),
            ]
        }),
    )?;
    let mut rows = Vec::new();
    for (i, &u) in e.a_grid.iter().enumerate() {
        for rec in &summary.records {
            if let Some(h) = rec.hits[i] {
                rows.push(vec![num(u), rec.replica.to_string(), h.tau.to_string(), num(h.max_mu)]);
            }
        }
    }
    out.csv("max_mu.csv", &["u", "replica", "tau", "max_mu"], rows)?;
    done(())
}

fn second_moment(cfg: &RunConfig, out: &mut Output, workers: usize) -> Result<Status> {
    let kernel = cfg.kernel()?;
    let model = cfg.model()?;
    let beta = cfg.f64("run.beta")?;
    let n = cfg.u32("field.nmax")?;
    let table = first_collision_law(&return_probs(&kernel, n as usize)?)?;
    let chi = model.chi(beta)?;
    let f = pinning_series(&table, chi)?;
    out.csv(
        "second_moment.csv",
        &["n", "exact"],
        f.iter().enumerate().map(|(i, v)| vec![i.to_string(), num(*v)]),
    )?;
    let exact = f[n as usize];
    out.record(Record::new("second_moment", exact, "pinning recursion").horizon(n as u64));
    if cfg.u64("run.R")? >= 4 {
        let e = engine(cfg)?.with_times(vec![n]);
        let Some(summary) = run_engine(cfg, out, &e, workers)? else {
            return Ok(Status::Halted);
        };
        let check = second_moment_check(&summary.w_at(0), exact)?;
        out.record(
            Record::new(
                "second_moment_mc",
                check.estimate,
                "Monte Carlo, sigma from fourth moment",
            )
            .residual(check.z)
            .horizon(n as u64),
        );
        out.detail("mc_check", check)?;
    }
    done(())
}

fn critical_growth(cfg: &RunConfig, out: &mut Output) -> Result<Status> {
    let kernel = cfg.kernel()?;
    let horizon = cfg.usize("walk.horizon")?;
    let tol = cfg.f64("run.tol")?;
    let collision = collision_probability_with(&kernel, tol.max(1e-12), cfg.usize("walk.quad_points")?)?;
    if collision.recurrent {
        return Err(Error::invalid(
            "walk.d",
            "the difference walk is recurrent; there is no critical point",
        ));
    }
    let pi = collision.pi;
    let chi = 1.0 / pi;
    let table = first_collision_law(&return_probs(&kernel, horizon)?)?;
    let grid: Vec<usize> = match cfg.list::<usize>("run.ngrid")? {
        g if !g.is_empty() => g,
        _ => log_grid(100.min(horizon / 100).max(2), horizon, 10),
    };
    let fit = critical_growth_fit(&table, chi, pi, &grid)?;
    out.csv(
        "critical_growth.csv",
        &["n", "f"],
        fit.points.iter().map(|&(n, v)| vec![n.to_string(), num(v)]),
    )?;
    out.record(
        Record::new("slope", fit.slope, "least squares of log f(n) on log n")
            .residual(fit.slope_se)
            .horizon(horizon as u64),
    );
    out.record(
        Record::new("template_slope", fit.template_slope, "least squares on log(n / log n)").horizon(horizon as u64),
    );
    out.record(Record::new("pi", pi, "collision probability").residual(collision.error_estimate));
    out.detail("fit", &fit)?;
    done(())
}

fn moment_growth(cfg: &RunConfig, out: &mut Output, workers: usize) -> Result<Status> {
    let grid: Vec<u32> = cfg.list("run.ngrid")?;
    let n_max = grid
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::invalid("run.ngrid", "empty grid"))?;
    let mut e = engine(cfg)?.with_times(grid);
    e.n_max = n_max;
    let Some(summary) = run_engine(cfg, out, &e, workers)? else {
        return Ok(Status::Halted);
    };
    let g = growth_from_summary(&summary, cfg.f64("run.p")?, &e.kernel, &e.model)?;
    out.csv(
        "growth.csv",
        &[
            "n",
            "moment",
            "moment_se",
            "rate",
            "rate_se",
            "exact_rate",
            "half_sample_ratio",
            "max_share",
            "verdict",
        ],
        g.rows.iter().map(|r| {
            vec![
                r.n.to_string(),
                num(r.moment),
                num(r.moment_se),
                num(r.rate),
                num(r.rate_se),
                opt(r.exact_rate),
                num(r.half_sample_ratio),
                num(r.max_share),
                serde_json::to_value(r.verdict).unwrap().as_str().unwrap().to_string(),
            ]
        }),
    )?;
    if let Some(rate) = g.exact_asymptotic_rate {
        out.record(Record::new(
            "pinning_free_energy",
            rate,
            "root of chi sum K_m exp(-F m) = 1",
        ));
    }
    out.detail("warning", g.warning)?;
    done(())
}

fn fluct(cfg: &RunConfig, out: &mut Output) -> Result<Status> {
    let kernel = cfg.kernel()?;
    let model = cfg.model()?;
    let beta = cfg.f64("run.beta")?;
    let f = bump(cfg)?;
    let grid: Vec<u32> = cfg.list("run.ngrid")?;
    let replicas = cfg.u64("run.R")?;
    let seed = cfg.u64("run.seed")?;
    let mut rows = Vec::new();
    let mut raw = Vec::new();
    for &n in &grid {
        let s = fluctuation_samples(&kernel, &model, beta, &f, n, 0..replicas, seed)?;
        for (i, x) in s.iter().enumerate() {
            raw.push(vec![
                n.to_string(),
                i.to_string(),
                num(x.fluctuation),
                num(x.weighted_sum),
                num(x.riemann_sum),
                num(x.min_y),
                num(x.max_y),
            ]);
        }
        rows.push(variance_row(n, &s));
    }
    out.csv(
        "fluct_samples.csv",
        &[
            "n",
            "replica",
            "fluctuation",
            "weighted_sum",
            "riemann_sum",
            "min_y",
            "max_y",
        ],
        raw,
    )?;
    out.csv(
        "fluct.csv",
        &["n", "samples", "mean", "variance", "variance_se"],
        rows.iter().map(|r| {
            vec![
                r.n.to_string(),
                r.samples.to_string(),
                num(r.mean),
                num(r.variance),
                num(r.variance_se),
            ]
        }),
    )?;
    let scaling = scaling_fit(kernel.dim(), rows)?;
    if let Some(fit) = scaling.fit {
        out.record(
            Record::new(
                "variance_slope",
                fit.slope,
                "weighted least squares of log Var on log n",
            )
            .residual(fit.slope_se),
        );
    }
    out.record(Record::new("predicted_slope", scaling.predicted_slope, "-(d - 2) / 2"));
    out.detail("scaling", &scaling)?;
    done(())
}

fn test_g(cfg: &RunConfig) -> Result<TestG> {
    Ok(match cfg.raw("run.g") {
        "one" => TestG::One,
        "min2" => TestG::MinTwo,
        "inv1p" => TestG::InverseOnePlus,
        "above1" => TestG::AboveOne,
        "inv" => TestG::Inverse,
        other => return Err(Error::invalid("run.g", format!("unknown test function {other:?}"))),
    })
}

fn spine_check(cfg: &RunConfig, out: &mut Output) -> Result<Status> {
    let kernel = cfg.kernel()?;
    let model = cfg.model()?;
    let beta = cfg.f64("run.beta")?;
    let n = cfg.u32("field.nmax")?;
    let replicas = cfg.u64("run.R")?;
    let g = test_g(cfg)?;
    let mut failures = Vec::new();
    if matches!(model, EnvModel::TwoPoint { .. }) && kernel.dim() == 1 && n <= 2 {
        let b = EnumerationBudget::default();
        let tv = total_variation(
            &exact_spine_law(&model, &kernel, beta, n, &b)?,
            &exact_size_biased_law(&model, &kernel, beta, n, &b)?,
        );
        out.record(Record::new("total_variation", tv, "exact enumeration").horizon(n as u64));
        if tv > 1e-12 {
            failures.push(format!("total variation {tv:e} > 1e-12"));
        }
    }
    let mut battery = TestG::BATTERY.to_vec();
    if !battery.contains(&g) {
        battery.push(g);
    }
    let r = size_biased_expectation(&kernel, &model, beta, n, &battery, replicas, cfg.u64("run.seed")?)?;
    out.csv(
        "spine.csv",
        &["replica", "n", "logW_spine", "g_value"],
        r.log_w_spine
            .iter()
            .enumerate()
            .map(|(i, l)| vec![i.to_string(), n.to_string(), num(*l), num(g.eval(l.exp()))]),
    )?;
    out.csv(
        "plain.csv",
        &["replica", "n", "logW", "w_g_value"],
        r.log_w_plain.iter().enumerate().map(|(i, l)| {
            let w = l.exp();
            vec![i.to_string(), n.to_string(), num(*l), num(w * g.eval(w))]
        }),
    )?;
    out.csv(
        "battery.csv",
        &["g", "spine", "spine_se", "plain", "plain_se", "z"],
        r.rows.iter().map(|row| {
            vec![
                row.g.name().to_string(),
                num(row.spine),
                num(row.spine_se),
                num(row.plain),
                num(row.plain_se),
                num(row.z),
            ]
        }),
    )?;
    for row in &r.rows {
        if row.z.abs() > 4.0 {
            failures.push(format!("{}: z = {:.2}", row.g.name(), row.z));
        }
    }
    out.detail("failures", &failures)?;
    if failures.is_empty() {
        done(())
    } else {
        Err(Error::CheckFailed {
            check: "spine-check".into(),
            detail: failures.join("; "),
        })
    }
}

fn oracle_check(cfg: &RunConfig, out: &mut Output) -> Result<Status> {
    let kernel = cfg.kernel()?;
    let model = cfg.model()?;
    let beta = cfg.f64("run.beta")?;
    let n_max = cfg.u32("field.nmax")?;
    let seeds = cfg.u64("run.R")?;
    let budget = EnumerationBudget::default();
    let per_seed = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let env = HashedEnv::for_replica(model, seed, 0);
            let mut f = PolymerField::init_point(&kernel, &model, beta)?;
            let mut rows = Vec::new();
            for n in 1..=n_max {
                f.evolve_step(&env)?;
                let exact = exact_partition(&env, &kernel, &model, beta, n, &budget)?;
                let w = f.total_mass();
                rows.push(("field-vs-path-sum", seed, n, w, exact, (w - exact).abs() / exact));
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<_> = per_seed.into_iter().flatten().collect();
    let field_max = rows.iter().map(|r| r.5).fold(0.0, f64::max);

    let replica_horizon = n_max.min(8);
    let table = first_collision_law(&return_probs(&kernel, replica_horizon as usize)?)?;
    let chi = model.chi(beta)?;
    let mut replica_max: f64 = 0.0;
    for n in 1..=replica_horizon {
        let rep = match replica_moment(&kernel, &model, beta, 2, n, &budget) {
            Ok(v) => v,
            Err(Error::Budget { .. }) => break,
            Err(e) => return Err(e),
        };
        let ren = second_moment_renewal(&table, chi, n as usize)?;
        let rel = (rep - ren).abs() / ren;
        replica_max = replica_max.max(rel);
        rows.push(("replica-vs-renewal", 0, n, rep, ren, rel));
    }
    out.csv(
        "oracle.csv",
        &["check", "seed", "n", "value", "reference", "rel_diff"],
        rows.iter().map(|r| {
            vec![
                r.0.to_string(),
                r.1.to_string(),
                r.2.to_string(),
                num(r.3),
                num(r.4),
                num(r.5),
            ]
        }),
    )?;
    out.record(
        Record::new(
            "max_rel_diff_field",
            field_max,
            "field evolution vs exhaustive path sum",
        )
        .horizon(n_max as u64),
    );
    out.record(
        Record::new(
            "max_rel_diff_replica",
            replica_max,
            "replica dynamic program vs pinning recursion",
        )
        .horizon(replica_horizon as u64),
    );
    let mut failures = Vec::new();
    if field_max > 1e-12 {
        failures.push(format!("field vs path sum: {field_max:e} > 1e-12"));
    }
    if replica_max > 1e-10 {
        failures.push(format!("replica vs renewal: {replica_max:e} > 1e-10"));
    }
    if failures.is_empty() {
        done(())
    } else {
        Err(Error::CheckFailed {
            check: "oracle-check".into(),
            detail: failures.join("; "),
        })
    }
}
