//! One function per command; each returns the summary and tables it produced.

use rpf_core::certify::{certify, xi_growth_check, CertifyOptions};
use rpf_core::config::RunConfig;
use rpf_core::escape::lambda_vs_epsilon;
use rpf_core::interval_fn::PiecewiseFn;
use rpf_core::oracle::{oracle_lyapunov, ulam_density, ulam_matrices};
use rpf_core::rpf::{
    correlation_decay, duality_residual, equivariant_density, invariance_residuals, log_lambda_plus,
    lyapunov_exponent, mean_correlation_decay, multipliers, nu_table, rpf_residuals, InvariantMeasure,
};
use rpf_core::stats::{line_fit, Estimate};
use rpf_core::transfer::Ensemble;
use rpf_core::{Result, RpfError};
use serde_json::json;

use crate::output::{num, Outcome, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Task {
    Certify,
    Density,
    Conformal,
    Invariant,
    Lyapunov,
    Correlations,
    Residual,
    Escape,
    Oracle,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Certify => "certify",
            Task::Density => "density",
            Task::Conformal => "conformal",
            Task::Invariant => "invariant",
            Task::Lyapunov => "lyapunov",
            Task::Correlations => "correlations",
            Task::Residual => "residual",
            Task::Escape => "escape",
            Task::Oracle => "oracle",
        }
    }
}

pub fn run(task: Task, cfg: &RunConfig) -> Result<Outcome> {
    let ens = cfg.ensemble()?;
    match task {
        Task::Certify => run_certify(&ens, cfg),
        Task::Density => run_density(&ens, cfg),
        Task::Conformal => run_conformal(&ens, cfg),
        Task::Invariant => run_invariant(&ens, cfg),
        Task::Lyapunov => run_lyapunov(&ens, cfg),
        Task::Correlations => run_correlations(&ens, cfg),
        Task::Residual => run_residual(&ens, cfg),
        Task::Escape => run_escape(&ens, cfg),
        Task::Oracle => run_oracle(&ens, cfg),
    }
}

fn est(e: &Estimate) -> serde_json::Value {
    json!({ "mean": e.mean, "stderr": e.stderr, "K": e.samples })
}

/// Observables used by `invariant`: `x`, `x^2`, the indicator of the left half, `cos(2 pi x)`.
fn observables(ens: &Ensemble) -> Result<Vec<(&'static str, PiecewiseFn)>> {
    let (a, b) = ens.base();
    let x = PiecewiseFn::affine(a, b, 1.0, 0.0);
    let mid = 0.5 * (a + b);
    Ok(vec![
        ("x", x.clone()),
        ("x^2", PiecewiseFn::pointwise_mul(&x, &x)?),
        ("1_left_half", PiecewiseFn::indicator(a, b, a, mid)?),
        ("cos_2pi_x", PiecewiseFn::from_fn(a, b, ens.resolution(), |t| (std::f64::consts::TAU * t).cos())?),
    ])
}

/// Midpoints of `m` equal cells of the base.
fn midpoints(ens: &Ensemble, m: usize) -> Vec<f64> {
    let (a, b) = ens.base();
    let h = (b - a) / m as f64;
    (0..m).map(|i| a + (i as f64 + 0.5) * h).collect()
}

fn run_certify(ens: &Ensemble, cfg: &RunConfig) -> Result<Outcome> {
    let r = &cfg.run;
    let opts = CertifyOptions {
        n_max: r.n_max,
        samples: r.base_points,
        base: r.fiber,
        a_tol: r.a_tol,
        kingman_n: r.n_max,
        xi_growth: r.xi_growth,
        ..CertifyOptions::default()
    };
    let cert = certify(ens, &opts)?;
    let xi = xi_growth_check(ens, r.n_max, r.base_points, r.fiber)?;
    xi.check()?;

    let mut blocks = Table::new("certify_blocks", &["n", "K", "mean_log_c", "stderr"]);
    for (n, e) in &cert.search.per_n {
        blocks.push(vec![num(n), num(e.samples), num(e.mean), num(e.stderr)]);
    }
    let mut a_tab = Table::new("a_omega", &["fiber", "n", "terms", "a", "tail"]);
    if let Some(n) = cert.search.n_star {
        for (w, a) in &cert.a_omega {
            a_tab.push(vec![num(w), num(n), num(a.terms), num(a.value), num(a.tail)]);
        }
    }
    let mut king = Table::new(
        "kingman",
        &["n", "K", "beta_f", "beta_f_stderr", "neg_phi_minus", "neg_phi_minus_stderr"],
    );
    for ((n, b), (_, p)) in cert.kingman.beta_f.iter().zip(&cert.kingman.neg_phi_minus) {
        king.push(vec![num(n), num(b.samples), num(b.mean), num(b.stderr), num(p.mean), num(p.stderr)]);
    }

    let c = &cert.conditions;
    let summary = json!({
        "command": "certify",
        "strongly_contracting": cert.strongly_contracting(),
        "n_star": cert.search.n_star,
        "gamma": cert.search.gamma,
        "K": r.base_points,
        "n_max": r.n_max,
        "sufficient_conditions": {
            "one_step": est(&c.one_step),
            "general": est(&c.general),
            "xi_bounded": est(&c.xi_bounded),
            "xi_growth": { "K": c.xi_growth.0, "xi": c.xi_growth.1 },
            "beta_f": est(&c.beta_f),
        },
        "kingman_worst_violation_se": cert.kingman.worst_violation(),
        "xi_growth_check": { "words_checked": xi.words_checked, "worst_ratio": xi.worst_ratio },
    });
    let lines = vec![
        match (cert.search.n_star, cert.search.gamma) {
            (Some(n), Some(g)) => format!("strongly contracting: block length {n}, gamma {g:.6}"),
            _ => format!("not certified up to block length {}", r.n_max),
        },
        format!(
            "sufficient conditions (mean, K={}): one-step {:.6}, general {:.6}, xi-bounded {:.6}",
            r.base_points, c.one_step.mean, c.general.mean, c.xi_bounded.mean
        ),
    ];
    Ok(Outcome { summary, tables: vec![blocks, a_tab, king], lines })
}

fn run_density(ens: &Ensemble, cfg: &RunConfig) -> Result<Outcome> {
    let d = equivariant_density(ens, cfg.run.fiber, &cfg.rpf_params())?;
    let nodes = cfg.resolution.nodes;
    let mut tab = Table::new("density", &["x", "q", "fiber", "n", "N"]);
    for x in midpoints(ens, nodes) {
        tab.push(vec![num(x), num(d.q.eval(x)?), num(d.fiber), num(d.depth), num(nodes)]);
    }
    let mut inc = Table::new("density_increments", &["n", "sup_increment", "N"]);
    for (n, v) in &d.increments {
        inc.push(vec![num(n), num(v), num(nodes)]);
    }
    let summary = json!({
        "command": "density",
        "fiber": d.fiber,
        "n": d.depth,
        "N": nodes,
        "converged": d.converged,
        "lambda_minus": d.lambda_minus,
        "essinf": d.q.essinf(),
        "esssup": d.q.esssup(),
        "variation": d.q.variation(),
        "integral": d.q.integrate(),
    });
    let lines = vec![format!(
        "q at fiber {}: depth {}, converged {}, sup {:.6}, lambda- {:.6}",
        d.fiber,
        d.depth,
        d.converged,
        d.q.esssup(),
        d.lambda_minus
    )];
    Ok(Outcome { summary, tables: vec![tab, inc], lines })
}

fn run_conformal(ens: &Ensemble, cfg: &RunConfig) -> Result<Outcome> {
    let p = cfg.rpf_params();
    let w = cfg.run.fiber;
    let cells = cfg.resolution.nu_cells;
    let table = nu_table(ens, w, cells, &p)?;
    let mut cdf = Table::new("conformal_cdf", &["x", "cdf", "fiber", "N"]);
    for (x, c) in table.grid.iter().zip(&table.cdf) {
        cdf.push(vec![num(x), num(c), num(w), num(cells)]);
    }
    let mut lam = Table::new("log_lambda_plus", &["n", "log_lambda_plus", "fiber"]);
    let mut last = 0.0;
    for n in 1..=cfg.run.n {
        last = log_lambda_plus(ens, w, n, &p)?;
        lam.push(vec![num(n), num(last), num(w)]);
    }
    let m = multipliers(ens, w, cfg.run.n)?;
    let summary = json!({
        "command": "conformal",
        "lambda_minus": m.lambda_minus,
        "lambda_plus": m.lambda_plus,
        "fiber": w,
        "N": cells,
        "n": cfg.run.n,
        "cdf_max_bracket_width": table.max_width,
        "log_lambda_plus": last,
        "pressure_estimate": last / cfg.run.n as f64,
    });
    let lines = vec![format!(
        "nu at fiber {w}: {cells} cells, bracket width {:.2e}; (1/n) log lambda+ = {:.6} at n = {}",
        table.max_width,
        last / cfg.run.n as f64,
        cfg.run.n
    )];
    Ok(Outcome { summary, tables: vec![cdf, lam], lines })
}

fn run_invariant(ens: &Ensemble, cfg: &RunConfig) -> Result<Outcome> {
    let p = cfg.rpf_params();
    let w = cfg.run.fiber;
    let nodes = cfg.resolution.nodes;
    let mut im = InvariantMeasure::new(ens, w, &p)?;
    let psi = im.psi();
    let mut dens = Table::new("invariant_density", &["x", "psi", "fiber", "N"]);
    for x in midpoints(ens, nodes) {
        dens.push(vec![num(x), num(psi.eval(x)?), num(w), num(nodes)]);
    }
    let obs = observables(ens)?;
    let fs: Vec<PiecewiseFn> = obs.iter().map(|(_, f)| f.clone()).collect();
    let mut means = Table::new("invariant_means", &["observable", "mu", "fiber"]);
    let mut mus = serde_json::Map::new();
    for (name, f) in &obs {
        let m = im.mu(f)?;
        means.push(vec![name.to_string(), num(m), num(w)]);
        mus.insert(name.to_string(), json!(m));
    }
    // duality and invariance along K consecutive fibers
    let k = cfg.run.base_points.min(8);
    let mut checks = Table::new("invariant_checks", &["fiber", "duality_residual", "max_invariance_residual"]);
    let (mut worst_d, mut worst_i) = (0.0f64, 0.0f64);
    for i in 0..k as i64 {
        let d = duality_residual(ens, w + i, &p)?.residual;
        let inv = invariance_residuals(ens, w + i, &fs, &p)?.into_iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst_d = worst_d.max(d.abs());
        worst_i = worst_i.max(inv);
        checks.push(vec![num(w + i), num(d), num(inv)]);
    }
    let summary = json!({
        "command": "invariant",
        "fiber": w,
        "N": nodes,
        "nu_of_q": im.nu_q,
        "mu": mus,
        "K": k,
        "max_duality_residual": worst_d,
        "max_invariance_residual": worst_i,
    });
    let lines = vec![format!(
        "mu at fiber {w}: nu(q) = {:.6}; over {k} fibers max duality residual {worst_d:.2e}, max invariance residual {worst_i:.2e}",
        im.nu_q
    )];
    Ok(Outcome { summary, tables: vec![dens, means, checks], lines })
}

fn run_lyapunov(ens: &Ensemble, cfg: &RunConfig) -> Result<Outcome> {
    let r = &cfg.run;
    let l = lyapunov_exponent(ens, r.n, r.base_points, r.fiber, r.burn_in)?;
    let mut tab = Table::new("lyapunov", &["base_point", "n", "burn_in", "K", "sample"]);
    for (b, s) in l.base_points.iter().zip(&l.samples) {
        tab.push(vec![num(b), num(l.n), num(l.burn_in), num(l.samples.len()), num(s)]);
    }
    let summary = json!({
        "command": "lyapunov",
        "n": l.n,
        "burn_in": l.burn_in,
        "K": l.samples.len(),
        "lyapunov": est(&l.estimate),
        "bv_growth": est(&l.bv_growth),
    });
    let lines = vec![format!(
        "Lambda = {:.6} +- {:.1e} (n = {}, K = {})",
        l.estimate.mean,
        l.estimate.stderr,
        l.n,
        l.samples.len()
    )];
    Ok(Outcome { summary, tables: vec![tab], lines })
}

fn run_correlations(ens: &Ensemble, cfg: &RunConfig) -> Result<Outcome> {
    let p = cfg.rpf_params();
    let r = &cfg.run;
    let n = r.correlation_n;
    let (a, b) = ens.base();
    let x = PiecewiseFn::affine(a, b, 1.0, 0.0);
    let single = correlation_decay(ens, r.fiber, &x, &x, n, &p)?;
    let k = r.base_points.min(16);
    let fibers: Vec<i64> = (0..k as i64).map(|i| r.fiber + i * (n as i64 + 1)).collect();
    let mean = mean_correlation_decay(ens, &fibers, &x, &x, n, &p)?;
    let mut tab = Table::new("correlations", &["n", "cor_at_fiber", "mean_abs_cor", "K"]);
    for ((m, c), (_, mc)) in single.values.iter().zip(&mean.values) {
        tab.push(vec![num(m), num(c), num(mc), num(k)]);
    }
    let summary = json!({
        "command": "correlations",
        "observables": "f = h = x",
        "fiber": r.fiber,
        "n": n,
        "K": k,
        "fiber_fit": { "rate": single.rate, "r": single.fit.r },
        "mean_fit": { "rate": mean.rate, "r": mean.fit.r },
    });
    let lines = vec![format!(
        "correlations of x: rate {:.4} (r = {:.4}) at fiber {}, mean over {k} fibers rate {:.4} (r = {:.4})",
        single.rate, single.fit.r, r.fiber, mean.rate, mean.fit.r
    )];
    Ok(Outcome { summary, tables: vec![tab], lines })
}

fn run_residual(ens: &Ensemble, cfg: &RunConfig) -> Result<Outcome> {
    let p = cfg.rpf_params();
    let w = cfg.run.fiber;
    let n = cfg.run.n;
    let psi = InvariantMeasure::new(ens, w, &p)?.psi();
    let (a, b) = ens.base();
    let fs = [
        ("psi", psi),
        ("x", PiecewiseFn::affine(a, b, 1.0, 0.0)),
        ("1_left_half", PiecewiseFn::indicator(a, b, a, 0.5 * (a + b))?),
    ];
    let rows = rpf_residuals(ens, w, &fs.iter().map(|(_, f)| f.clone()).collect::<Vec<_>>(), n, &p)?;
    let mut tab = Table::new("residual", &["function", "n", "sup_residual", "fiber"]);
    let mut fits = serde_json::Map::new();
    for ((name, _), row) in fs.iter().zip(&rows) {
        for (i, v) in row.iter().enumerate() {
            tab.push(vec![name.to_string(), num(i + 1), num(v), num(w)]);
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) =
            row.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, v)| ((i + 1) as f64, v.ln())).unzip();
        let fit = line_fit(&xs, &ys);
        fits.insert(name.to_string(), json!({ "log_rate": fit.slope, "r": fit.r, "max": row.iter().cloned().fold(0.0, f64::max) }));
    }
    let summary = json!({ "command": "residual", "fiber": w, "n": n, "functions": fits });
    let lines = vec![format!(
        "residual sup norms over n <= {n}: psi max {:.2e}; fitted log-rates x {:.4}, indicator {:.4}",
        rows[0].iter().cloned().fold(0.0, f64::max),
        fits["x"]["log_rate"].as_f64().unwrap_or(f64::NAN),
        fits["1_left_half"]["log_rate"].as_f64().unwrap_or(f64::NAN),
    )];
    Ok(Outcome { summary, tables: vec![tab], lines })
}

fn run_escape(ens: &Ensemble, cfg: &RunConfig) -> Result<Outcome> {
    let family = cfg
        .escape
        .as_ref()
        .ok_or_else(|| RpfError::InvalidInput("config has no \"escape\" hole family".into()))?;
    let r = &cfg.run;
    let t = lambda_vs_epsilon(ens, family, r.n, r.base_points, r.fiber, r.burn_in, &cfg.rpf_params())?;
    let mut tab = Table::new(
        "escape",
        &["eps", "n", "K", "lambda", "lambda_stderr", "lambda_drop", "escape_rate", "identity_residual"],
    );
    let mut rows = Vec::new();
    for row in &t.rows {
        let e = &row.lyapunov.estimate;
        let (d, rate, res) = match row.escape {
            Some((d, rate, res)) => (num(d), num(rate), num(res)),
            None => (String::new(), String::new(), String::new()),
        };
        tab.push(vec![num(row.eps), num(r.n), num(e.samples), num(e.mean), num(e.stderr), d, rate, res]);
        rows.push(json!({
            "eps": row.eps,
            "lambda": est(e),
            "escape": row.escape,
            "branch_counts": row.branch_counts.iter().map(|(b, x)| json!({ "b_f": b, "xi": x })).collect::<Vec<_>>(),
        }));
    }
    let worst = t.rows.iter().filter_map(|r| r.escape.map(|e| e.2.abs())).fold(0.0, f64::max);
    let summary = json!({
        "command": "escape",
        "n": r.n,
        "K": r.base_points,
        "rows": rows,
        "worst_increase_se": t.worst_increase,
        "uniform_bounds": { "b_f_min": t.uniform_bounds.0, "xi_max": t.uniform_bounds.1 },
        "max_identity_residual": worst,
    });
    let lines = vec![format!(
        "Lambda over eps grid {:?}: {:?}; max |drop - escape rate| {worst:.2e}",
        family.grid,
        t.rows.iter().map(|r| (r.lyapunov.estimate.mean * 1e6).round() / 1e6).collect::<Vec<_>>()
    )];
    Ok(Outcome { summary, tables: vec![tab], lines })
}

fn run_oracle(ens: &Ensemble, cfg: &RunConfig) -> Result<Outcome> {
    let r = &cfg.run;
    let cells = cfg.resolution.ulam_cells;
    let mats = ulam_matrices(ens, cells)?;
    let or = oracle_lyapunov(ens, &mats, r.n, r.base_points, r.fiber, r.burn_in)?;
    let main = lyapunov_exponent(ens, r.n, r.base_points, r.fiber, r.burn_in)?.estimate;
    let depth = cfg.run.density_depth;
    let v = ulam_density(ens, &mats, r.fiber, depth);
    let q = equivariant_density(ens, r.fiber, &cfg.rpf_params())?.q;
    let mass = q.integrate();
    let (a, b) = ens.base();
    let h = (b - a) / cells as f64;
    let mut dens = Table::new("oracle_density", &["x", "ulam", "main", "N", "n"]);
    let mut l1 = 0.0;
    for (k, x) in midpoints(ens, cells).into_iter().enumerate() {
        let lo = a + k as f64 * h;
        let m = q.integrate_on(lo, lo + h) / (mass * h);
        l1 += (m - v[k]).abs() * h;
        dens.push(vec![num(x), num(v[k]), num(m), num(cells), num(depth)]);
    }
    let mut lyap = Table::new("oracle_lyapunov", &["N", "n", "burn_in", "K", "main", "oracle", "difference"]);
    lyap.push(vec![
        num(cells),
        num(r.n),
        num(r.burn_in),
        num(r.base_points),
        num(main.mean),
        num(or.mean),
        num(main.mean - or.mean),
    ]);
    let summary = json!({
        "command": "oracle",
        "N": cells,
        "n": r.n,
        "K": r.base_points,
        "lyapunov_main": est(&main),
        "lyapunov_oracle": est(&or),
        "difference": main.mean - or.mean,
        "density_l1": l1,
    });
    let lines = vec![format!(
        "Lambda main {:.6}, oracle {:.6} (N = {cells}, n = {}, K = {}); density L1 distance {l1:.2e}",
        main.mean, or.mean, r.n, r.base_points
    )];
    Ok(Outcome { summary, tables: vec![lyap, dens], lines })
}
