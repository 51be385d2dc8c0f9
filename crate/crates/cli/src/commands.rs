use crate::report::{Check, Report};
use crate::{artifact, ensure_out_dir, write_artifact, CommonArgs, ConfigEcho};
use entropic_control::jump::{thinned_paths_across_betas, write_jump_csv, Intensity, JumpProcessSpec};
use entropic_control::malliavin::{
    malliavin_control, MaxMalliavinCost, QuadraticMalliavinCost,
};
use entropic_control::measure::{
    entropy_weighted_cost, gibbs_measure, optimal_value, CostVector, DiscreteMeasure,
};
use entropic_control::path::{
    estimate_cost, integrate_controlled, map_paths, mean_and_se, optimal_value_mc, sample_paths,
    CostFunctional, ScalarPolicy, SdeCoefficients, TimeGrid,
};
use entropic_control::pde::{
    feynman_kac_exit_mc, solve_exit_problem, solve_finite_horizon, Domain, PdeProblem,
};
use entropic_control::policies::{bridge_control, max_bm_control, max_bm_density, BridgeSpec, MaxBmSpec};
use entropic_control::quad::integrate;
use entropic_control::special::{gaussian_exp_quad_moment, GaussianParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

type CmdResult = Result<Report, String>;

fn err_str<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

pub fn run_gibbs(common: &CommonArgs, outcomes: usize, sweep: usize) -> CmdResult {
    if !(2..=16).contains(&outcomes) {
        return Err(format!("--outcomes must be in 2..=16, got {outcomes}"));
    }
    ensure_out_dir(&common.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
    let costs: Vec<f64> = (0..outcomes).map(|_| rng.gen::<f64>() * 3.0).collect();
    let c = CostVector::new(costs.clone()).map_err(err_str)?;
    let q = DiscreteMeasure::sample_simplex(outcomes, &mut rng);
    let p_star = gibbs_measure(&c, &q, common.beta).map_err(err_str)?;
    let j_star = entropy_weighted_cost(&p_star, &c, &q, common.beta).map_err(err_str)?;
    let value = optimal_value(&c, &q, common.beta).map_err(err_str)?;

    let mut min_gap = f64::INFINITY;
    for _ in 0..sweep {
        let p = DiscreteMeasure::sample_simplex(outcomes, &mut rng);
        let j = entropy_weighted_cost(&p, &c, &q, common.beta).map_err(err_str)?;
        min_gap = min_gap.min(j - j_star);
    }

    let mut artifacts = Vec::new();
    if let Some(path) = artifact(&common.out, "gibbs.csv") {
        let mut body = String::from("# schema v1: outcome,cost,q,p_star\noutcome,cost,q,p_star\n");
        for i in 0..outcomes {
            body.push_str(&format!(
                "{i},{},{},{}\n",
                costs[i],
                q.weights()[i],
                p_star.weights()[i]
            ));
        }
        write_artifact(&path, body.as_bytes())?;
        artifacts.push(path.display().to_string());
    }

    #[derive(Serialize)]
    struct Cfg {
        #[serde(flatten)]
        common: ConfigEcho,
        outcomes: usize,
        sweep: usize,
    }
    Ok(Report::new(
        "gibbs",
        Cfg { common: common.into(), outcomes, sweep },
        vec![
            Check::near("variational_identity_residual", j_star, 0.0, value, 1e-12),
            Check::at_least("sweep_min_optimality_gap", min_gap, 0.0),
        ],
        artifacts,
    ))
}

pub fn run_bridge(common: &CommonArgs, x0: f64, x_star: f64) -> CmdResult {
    ensure_out_dir(&common.out)?;
    let (beta, horizon) = (common.beta, common.horizon);
    let grid = TimeGrid::new(horizon, common.steps).map_err(err_str)?;
    let coeffs = SdeCoefficients::standard_brownian();
    let spec = BridgeSpec::new(beta, horizon, x_star).map_err(err_str)?;
    let policy = BridgeSpec::new(beta, horizon, x_star).map_err(err_str)?.control_policy();
    let cost = CostFunctional::quadratic_terminal(x_star);

    let gm = GaussianParams::new(x0 - x_star, horizon).map_err(err_str)?;
    let exact = -gaussian_exp_quad_moment(gm, 0.0, beta).map_err(err_str)?.ln() / beta;

    let est = estimate_cost(&coeffs, &policy, &cost, &grid, common.paths, beta, &[x0], common.seed)
        .map_err(err_str)?;
    let opt = optimal_value_mc(&cost, &coeffs, &grid, common.paths, beta, &[x0], common.seed ^ 0x9E37)
        .map_err(err_str)?;
    // weak order 1: allow a documented O(dt) band on top of the MC errors
    let dt_allowance = 5.0 * grid.dt();
    let joint = (est.std_error.powi(2) + opt.std_error.powi(2)).sqrt();

    let worse_spec = BridgeSpec::new(beta, horizon, x_star).map_err(err_str)?;
    let worse = ScalarPolicy(move |t: f64, x: f64| {
        bridge_control(&worse_spec, t, x).expect("inside horizon") + 0.5
    });
    let est_worse =
        estimate_cost(&coeffs, &worse, &cost, &grid, common.paths, beta, &[x0], common.seed ^ 0x5A5A)
            .map_err(err_str)?;
    let gap_joint = (est.std_error.powi(2) + est_worse.std_error.powi(2)).sqrt();

    let mut artifacts = Vec::new();
    if let Some(path) = artifact(&common.out, "bridge_paths.csv") {
        let raw = sample_paths(&grid, 10, 1, common.seed, false).map_err(err_str)?;
        let bundle = integrate_controlled(&coeffs, &policy, &raw, &[x0]).map_err(err_str)?;
        let mut buf = Vec::new();
        bundle.write_csv(&mut buf).map_err(err_str)?;
        write_artifact(&path, &buf)?;
        artifacts.push(path.display().to_string());
    }

    #[derive(Serialize)]
    struct Cfg {
        #[serde(flatten)]
        common: ConfigEcho,
        x0: f64,
        x_star: f64,
        rho0: f64,
    }
    Ok(Report::new(
        "bridge",
        Cfg { common: common.into(), x0, x_star, rho0: spec.rho(0.0) },
        vec![
            Check::near(
                "estimate_cost_vs_closed_form",
                est.estimate,
                est.std_error,
                exact,
                3.0 * est.std_error + dt_allowance,
            ),
            Check::near(
                "optimal_value_mc_vs_closed_form",
                opt.estimate,
                opt.std_error,
                exact,
                3.0 * opt.std_error + dt_allowance,
            ),
            Check::near(
                "estimate_cost_vs_optimal_value_mc",
                est.estimate,
                joint,
                opt.estimate,
                3.0 * joint + dt_allowance,
            ),
            Check::at_least(
                "perturbed_policy_excess_cost",
                est_worse.estimate - est.estimate,
                3.0 * gap_joint,
            ),
        ],
        artifacts,
    ))
}

pub fn run_maxbm(common: &CommonArgs) -> CmdResult {
    ensure_out_dir(&common.out)?;
    let (beta, horizon) = (common.beta, common.horizon);
    let grid = TimeGrid::new(horizon, common.steps).map_err(err_str)?;
    let coeffs = SdeCoefficients::standard_brownian();
    let spec = MaxBmSpec::new(beta, horizon).map_err(err_str)?;
    let policy = MaxBmSpec::new(beta, horizon).map_err(err_str)?.control_policy();
    let cost = CostFunctional::running_max();

    // density-process martingale at t = T/2 over uncontrolled paths
    let k_half = common.steps / 2;
    let t_half = grid.time(k_half);
    let spec_ref = &spec;
    let dens = map_paths(&coeffs, None, &grid, &[0.0], common.paths, common.seed, |_, p| {
        let w = p.state(k_half, 1)[0];
        let m = p.running_max[k_half].max(0.0);
        max_bm_density(spec_ref, t_half, w, m).expect("valid max state")
    });
    let (z_mean, z_se) = mean_and_se(&dens);
    // the grid running max lags the true one by ~0.5826 sqrt(dt) on average
    let max_bias = 0.5826 * grid.dt().sqrt();

    let est = estimate_cost(&coeffs, &policy, &cost, &grid, common.paths, beta, &[0.0], common.seed)
        .map_err(err_str)?;
    let weight = integrate(
        |a| {
            (-beta * a).exp()
                * (2.0 / (std::f64::consts::PI * horizon)).sqrt()
                * (-a * a / (2.0 * horizon)).exp()
        },
        0.0,
        10.0 * horizon.sqrt().max(1.0),
        1e-12,
    );
    let exact = -weight.ln() / beta;

    // control stays in [-beta, 0] across a (t, w, m) sweep
    let mut u_min = f64::INFINITY;
    let mut u_max = f64::NEG_INFINITY;
    for i in 0..4 {
        let t = horizon * i as f64 / 4.0;
        let mut w: f64 = -2.0;
        while w <= 2.0 {
            for dm in [0.0, 0.3, 1.0] {
                let m = w.max(0.0) + dm;
                let u = max_bm_control(&spec, t, w, m).map_err(err_str)?;
                u_min = u_min.min(u);
                u_max = u_max.max(u);
            }
            w += 0.1;
        }
    }

    let mut artifacts = Vec::new();
    if let Some(path) = artifact(&common.out, "maxbm_paths.csv") {
        let raw = sample_paths(&grid, 10, 1, common.seed, false).map_err(err_str)?;
        let bundle = integrate_controlled(&coeffs, &policy, &raw, &[0.0]).map_err(err_str)?;
        let mut buf = Vec::new();
        bundle.write_csv(&mut buf).map_err(err_str)?;
        write_artifact(&path, &buf)?;
        artifacts.push(path.display().to_string());
    }
    if let Some(path) = artifact(&common.out, "maxbm_control.csv") {
        let mut body = String::from("# schema v1: t,w,m,u\nt,w,m,u\n");
        for i in 0..=20 {
            let t = horizon * i as f64 / 20.0 * 0.95;
            let mut w: f64 = -2.0;
            while w <= 2.0 + 1e-9 {
                for dm in [0.0, 0.5] {
                    let m = w.max(0.0) + dm;
                    let u = max_bm_control(&spec, t, w, m).map_err(err_str)?;
                    body.push_str(&format!("{t},{w},{m},{u}\n"));
                }
                w += 0.05;
            }
        }
        write_artifact(&path, body.as_bytes())?;
        artifacts.push(path.display().to_string());
    }

    Ok(Report::new(
        "maxbm",
        ConfigEcho::from(common),
        vec![
            Check::near(
                "density_martingale_mean",
                z_mean,
                z_se,
                1.0,
                3.0 * z_se + beta * max_bias,
            ),
            Check::near(
                "estimate_cost_vs_quadrature",
                est.estimate,
                est.std_error,
                exact,
                3.0 * est.std_error + 10.0 * grid.dt().sqrt(),
            ),
            Check::at_least("control_lower_bound", u_min, -beta - 1e-12),
            Check::at_most("control_upper_bound", u_max, 1e-12),
        ],
        artifacts,
    ))
}

pub fn run_jumps(common: &CommonArgs, alpha: f64, delta: f64, betas: &[f64]) -> CmdResult {
    if !(alpha > 0.0) || !(delta > 0.0) {
        return Err(format!("--alpha and --delta must be > 0, got {alpha}, {delta}"));
    }
    if betas.is_empty() || betas.iter().any(|&b| !(b >= 0.0)) {
        return Err("--betas needs a nonempty list of values >= 0".into());
    }
    if !(common.horizon > 0.0) {
        return Err(format!("--horizon must be > 0, got {}", common.horizon));
    }
    if common.paths == 0 {
        return Err("--paths must be >= 1".into());
    }
    ensure_out_dir(&common.out)?;
    let horizon = common.horizon;

    let mut checks = Vec::new();
    for (i, &beta) in betas.iter().enumerate() {
        let spec = JumpProcessSpec::new(Intensity::BuiltIn { alpha, delta }, horizon, beta)
            .map_err(err_str)?;
        let tilted = spec.tilt().map_err(err_str)?;
        let seed = common.seed.wrapping_add(1000 * i as u64);

        let tilted_paths = tilted.sample_paths(common.paths, seed);
        let counts: Vec<f64> = tilted_paths.iter().map(|p| p.count() as f64).collect();
        let (c_mean, c_se) = mean_and_se(&counts);
        let c_oracle = alpha * (std::f64::consts::PI / (delta + beta)).sqrt() * horizon;
        checks.push(Check::near(
            &format!("tilted_mean_count_beta_{beta}"),
            c_mean,
            c_se,
            c_oracle,
            3.0 * c_se,
        ));

        let lnz: Vec<f64> = tilted_paths.iter().map(|p| spec.sample_log_density(p)).collect();
        let (h_mean, h_se) = mean_and_se(&lnz);
        let h_oracle = spec.relative_entropy();
        checks.push(Check::near(
            &format!("entropy_identity_beta_{beta}"),
            h_mean,
            h_se,
            h_oracle,
            3.0 * h_se + 1e-12,
        ));

        let base_paths = spec.sample_paths(common.paths, seed ^ 0xBEEF);
        let weights: Vec<f64> =
            base_paths.iter().map(|p| spec.sample_log_density(p).exp()).collect();
        let (w_mean, w_se) = mean_and_se(&weights);
        checks.push(Check::near(
            &format!("density_normalization_beta_{beta}"),
            w_mean,
            w_se,
            1.0,
            3.0 * w_se + 1e-12,
        ));
    }

    let mut artifacts = Vec::new();
    if common.out.is_some() {
        let base = JumpProcessSpec::new(Intensity::BuiltIn { alpha, delta }, horizon, 0.0)
            .map_err(err_str)?;
        let n_csv = common.paths.min(20);
        let per_beta = thinned_paths_across_betas(&base, betas, n_csv, common.seed).map_err(err_str)?;
        for (beta, paths) in betas.iter().zip(&per_beta) {
            if let Some(path) = artifact(&common.out, &format!("jumps_beta_{beta}.csv")) {
                let mut buf = Vec::new();
                write_jump_csv(&mut buf, paths, horizon).map_err(err_str)?;
                write_artifact(&path, &buf)?;
                artifacts.push(path.display().to_string());
            }
        }
    }

    #[derive(Serialize)]
    struct Cfg {
        #[serde(flatten)]
        common: ConfigEcho,
        alpha: f64,
        delta: f64,
        betas: Vec<f64>,
    }
    Ok(Report::new(
        "jumps",
        Cfg { common: common.into(), alpha, delta, betas: betas.to_vec() },
        checks,
        artifacts,
    ))
}

pub fn run_pde(common: &CommonArgs, nx: usize, nt: usize, domain: Option<&[f64]>) -> CmdResult {
    if nx < 8 || nt < 8 {
        return Err(format!("--nx and --nt must be >= 8, got {nx}, {nt}"));
    }
    let domain = match domain {
        Some(&[lo, hi]) if lo < hi => Domain::Bounded(lo, hi),
        Some(other) => return Err(format!("--domain needs lo < hi, got {other:?}")),
        None => Domain::Unbounded,
    };
    ensure_out_dir(&common.out)?;
    let (beta, horizon) = (common.beta, common.horizon);

    let quad_problem = || {
        PdeProblem::new(
            |_, _| 0.0,
            |_, _| 1.0,
            |_, _| 0.0,
            |_, x| 0.5 * x * x,
            domain,
            horizon,
            beta,
        )
    };
    let problem = quad_problem().map_err(err_str)?;

    // interior sup error vs the Gaussian closed form over three refinements
    let sup_err = |nx: usize, nt: usize| -> Result<f64, String> {
        let sol = solve_finite_horizon(&quad_problem().map_err(err_str)?, nx, nt).map_err(err_str)?;
        let mut worst = 0.0f64;
        for (i, &x) in sol.xs.iter().enumerate() {
            if x.abs() > 2.0 {
                continue;
            }
            let rho = 1.0 + beta * horizon;
            let exact = rho.powf(-0.5) * (-beta * x * x / (2.0 * rho)).exp();
            worst = worst.max((sol.y[0][i] - exact).abs());
        }
        Ok(worst)
    };
    let e1 = sup_err(nx / 2, nt / 2)?;
    let e2 = sup_err(nx, nt)?;
    let e3 = sup_err(nx * 2, nt * 2)?;
    let order = 0.5 * ((e1 / e2).log2() + (e2 / e3).log2());

    // extracted control vs the closed-form bridge drift
    let sol = solve_finite_horizon(&problem, nx, nt).map_err(err_str)?;
    let bridge = BridgeSpec::new(beta, horizon, 0.0).map_err(err_str)?;
    let h = sol.xs[1] - sol.xs[0];
    let mut u_err = 0.0f64;
    for k in [0usize, sol.times.len() / 2] {
        for (i, &x) in sol.xs.iter().enumerate() {
            if x.abs() > 2.0 {
                continue;
            }
            let want = bridge_control(&bridge, sol.times[k], x).map_err(err_str)?;
            u_err = u_err.max((sol.u_star[k][i] - want).abs());
        }
    }

    // exit problem on (-1, 1): y'' = beta y, value at 0 is 1/cosh(sqrt(beta))
    let exit = PdeProblem::new(
        |_, _| 0.0,
        |_, _| std::f64::consts::SQRT_2,
        |_, _| 1.0,
        |_, _| 0.0,
        Domain::Bounded(-1.0, 1.0),
        horizon,
        beta,
    )
    .map_err(err_str)?;
    let exit_sol = solve_exit_problem(&exit, nx.max(200)).map_err(err_str)?;
    let i0 = exit_sol.x_index(0.0);
    let exit_value = exit_sol.y[0][i0];
    let exit_oracle = 1.0 / beta.sqrt().cosh();

    let fk_dt = 2e-4;
    let fk = feynman_kac_exit_mc(&exit, 0.0, fk_dt, common.paths.min(20_000), common.seed)
        .map_err(err_str)?;
    let fk_bias = 0.8 * (2.0 * fk_dt).sqrt();

    let mut artifacts = Vec::new();
    if let Some(path) = artifact(&common.out, "pde_solution.csv") {
        let mut buf = Vec::new();
        sol.write_csv(&mut buf, beta).map_err(err_str)?;
        write_artifact(&path, &buf)?;
        artifacts.push(path.display().to_string());
    }

    #[derive(Serialize)]
    struct Cfg {
        #[serde(flatten)]
        common: ConfigEcho,
        nx: usize,
        nt: usize,
    }
    Ok(Report::new(
        "pde",
        Cfg { common: common.into(), nx, nt },
        vec![
            Check::near("spatial_convergence_order", order, 0.0, 2.0, 0.3),
            Check::at_most("extracted_control_sup_error", u_err, (1e-3f64).max(10.0 * h * h)),
            Check::near("exit_value_vs_cosh_oracle", exit_value, 0.0, exit_oracle, 1e-4),
            Check::near(
                "exit_value_vs_feynman_kac",
                fk.estimate,
                fk.std_error,
                exit_value,
                3.0 * fk.std_error + fk_bias,
            ),
        ],
        artifacts,
    ))
}

pub fn run_malliavin(common: &CommonArgs) -> CmdResult {
    ensure_out_dir(&common.out)?;
    let (beta, horizon) = (common.beta, common.horizon);
    let grid = TimeGrid::new(horizon, common.steps).map_err(err_str)?;
    let n_inner = common.paths;
    // inner continuations are discretized on the outer grid, so allow a
    // sqrt(dt) band on top of the MC errors for the max-type cost
    let dt_allowance = 0.6 * beta * grid.dt().sqrt();

    let bridge = BridgeSpec::new(beta, horizon, 0.0).map_err(err_str)?;
    let max_spec = MaxBmSpec::new(beta, horizon).map_err(err_str)?;
    let quad_cost = QuadraticMalliavinCost { x_star: 0.0 };
    let max_cost = MaxMalliavinCost;

    let mut checks = Vec::new();
    let mut rows = String::from(
        "# schema v1: cost,t,w,m,estimate,std_error,oracle\ncost,t,w,m,estimate,std_error,oracle\n",
    );

    let quad_points = [
        (0.0, 1.0),
        (0.25 * horizon, 0.5),
        (0.5 * horizon, -0.5),
        (0.75 * horizon, 1.5),
        (0.5 * horizon, 0.0),
    ];
    for (i, &(t, w)) in quad_points.iter().enumerate() {
        let est = malliavin_control(
            &quad_cost,
            beta,
            t,
            &[w],
            &grid,
            n_inner,
            common.seed.wrapping_add(i as u64),
        )
        .map_err(err_str)?;
        let oracle = bridge_control(&bridge, t, w).map_err(err_str)?;
        checks.push(Check::near(
            &format!("quadratic_point_{i}"),
            est.estimate,
            est.std_error,
            oracle,
            3.0 * est.std_error + 1e-9,
        ));
        rows.push_str(&format!(
            "quadratic,{t},{w},,{},{},{oracle}\n",
            est.estimate, est.std_error
        ));
    }

    let max_points = [
        (0.25 * horizon, 0.0, 0.5),
        (0.5 * horizon, 0.3, 0.6),
        (0.5 * horizon, -0.2, 0.1),
        // keep m - w away from 0: at the w = m boundary the discrete
        // continuation-max indicator is biased by O(1/sqrt(n_steps))
        (0.75 * horizon, 0.2, 0.5),
        (0.25 * horizon, -1.0, 0.0),
    ];
    for (i, &(t, w, m)) in max_points.iter().enumerate() {
        let est = malliavin_control(
            &max_cost,
            beta,
            t,
            &[w, m],
            &grid,
            n_inner,
            common.seed.wrapping_add(100 + i as u64),
        )
        .map_err(err_str)?;
        let oracle = max_bm_control(&max_spec, t, w, m).map_err(err_str)?;
        checks.push(Check::near(
            &format!("running_max_point_{i}"),
            est.estimate,
            est.std_error,
            oracle,
            3.0 * est.std_error + dt_allowance,
        ));
        rows.push_str(&format!(
            "running_max,{t},{w},{m},{},{},{oracle}\n",
            est.estimate, est.std_error
        ));
    }

    let mut artifacts = Vec::new();
    if let Some(path) = artifact(&common.out, "malliavin.csv") {
        write_artifact(&path, rows.as_bytes())?;
        artifacts.push(path.display().to_string());
    }

    Ok(Report::new("malliavin", ConfigEcho::from(common), checks, artifacts))
}
