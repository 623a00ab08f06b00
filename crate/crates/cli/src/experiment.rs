//! Runs one experiment and writes its output files.
//!
//! Every run produces a `manifest.txt` (resolved config and seed, written
//! last) and a `timing.csv`. Result CSVs never contain wall-clock values,
//! so reruns with the same config and seed are byte-identical.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};

use daytoll_core::conditions::{
    bound_assumption_g, bound_assumption_v, check_rho_condition, foster_drift_report,
    lyapunov_spec, toll_threshold_diagnostic,
};
use daytoll_core::equilibrium::coefficient_extrema;
use daytoll_core::mdp::{
    build_aggregated_model, build_truncated_model, tstt_pwls, MdpModel, ProblemConfig,
};
use daytoll_core::solver::{
    policy_iteration, simulate_policy_traced, Policy, SolveResult,
};

use crate::config::{ExperimentConfig, ExperimentKind};

/// Builds the model an instance asks for (aggregated when configured) and
/// solves it from the all-minimum-toll initial policy.
fn solve_problem(cfg: &ProblemConfig) -> Result<(MdpModel, SolveResult)> {
    let model = match cfg.aggregation {
        Some(n) => build_aggregated_model(cfg, n)?,
        None => build_truncated_model(cfg)?,
    };
    let initial = Policy::uniform(0, model.num_states());
    let result = policy_iteration(&model, &initial).map_err(|e| anyhow!("{e}"))?;
    Ok((model, result))
}

fn write(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).with_context(|| format!("cannot write {}", path.display()))
}

pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<()> {
    fs::create_dir_all(&cfg.out)
        .with_context(|| format!("cannot create output directory {}", cfg.out.display()))?;
    match cfg.kind {
        ExperimentKind::Solve => run_solve(cfg),
        ExperimentKind::Verify => run_verify(cfg),
        ExperimentKind::Simulate => run_simulate(cfg),
        _ => run_sweep(cfg, threads),
    }?;
    // The manifest is written last: its presence marks a completed run.
    write(&cfg.out.join("manifest.txt"), &cfg.manifest())
}

fn run_solve(cfg: &ExperimentConfig) -> Result<()> {
    let problem = cfg.instance.base_problem()?;
    let (model, result) = solve_problem(&problem)?;
    write(&cfg.out.join("policy.csv"), &result.policy_csv(&model))?;
    write(
        &cfg.out.join("summary.csv"),
        &format!(
            "lambda,iterations,bellman_residual\n{},{},{}\n",
            result.lambda, result.iterations, result.bellman_residual
        ),
    )?;
    write(
        &cfg.out.join("timing.csv"),
        &format!("wall_ms\n{}\n", result.wall.as_millis()),
    )?;
    Ok(())
}

fn run_verify(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let problem = cfg.instance.base_problem()?;
    let model = build_truncated_model(&problem)?;
    let pwls = tstt_pwls(&problem)?;
    let extrema = coefficient_extrema(&pwls)?;
    let spec = lyapunov_spec(&extrema, problem.theta, problem.tau_max(), problem.x_max);

    let mut out = String::new();
    out.push_str("== instance ==\n");
    out.push_str(&format!(
        "states: {}, actions: {}, theta: {}, toll levels: {:?}\n",
        model.num_states(),
        model.num_actions(),
        problem.theta,
        problem.toll_levels
    ));
    out.push_str(&format!(
        "demand coefficient range: [{}, {}]\n",
        extrema.k0_min, extrema.k0_max
    ));
    for r in 0..extrema.route_count() {
        out.push_str(&format!(
            "route {} toll coefficient range: [{}, {}]\n",
            r + 1,
            extrema.kr_min[r],
            extrema.kr_max[r]
        ));
    }
    out.push_str(&format!(
        "lyapunov: threshold {}, finite set {} states, epsilon {}\n",
        spec.threshold,
        spec.finite_set.len(),
        spec.epsilon
    ));
    // Approximated curves only guarantee their error band up to the last
    // breakpoint; flag route flows that run onto the final ray.
    if let daytoll_core::mdp::RouteSystem::Parallel(routes) = &problem.routes {
        let u = daytoll_core::equilibrium::TollVector::new(
            vec![problem.tau_min(); routes.len()],
        )?;
        let sol = daytoll_core::equilibrium::solve_equilibrium(
            routes,
            problem.x_max as f64,
            &u,
        )?;
        for (r, route) in routes.iter().enumerate() {
            if sol.flows[r] > route.last_breakpoint() {
                out.push_str(&format!(
                    "note: route {} flow {} at demand {} exceeds its last breakpoint {}; \
                     values there come from the unguaranteed final segment\n",
                    r + 1,
                    sol.flows[r],
                    problem.x_max,
                    route.last_breakpoint()
                ));
            }
        }
    }
    out.push('\n');

    out.push_str("== foster-lyapunov drift, one report per constant policy ==\n");
    for action in 0..model.num_actions() {
        let policy = Policy::uniform(action, model.num_states());
        let report = foster_drift_report(&model, &policy, &spec);
        out.push_str(&format!(
            "constant action {:?}:\n{report}\n",
            model.actions()[action]
        ));
    }

    out.push_str("== weighted sup-norm bounds ==\n");
    let g_report = bound_assumption_g(
        &model,
        &extrema,
        problem.theta,
        problem.tau_min(),
        problem.tau_max(),
    );
    out.push_str(&format!("{g_report}\n"));
    let v_report = bound_assumption_v(
        &model,
        &extrema,
        problem.theta,
        problem.tau_min(),
        problem.tau_max(),
    );
    out.push_str(&format!("{v_report}\n"));

    out.push_str("== contraction sufficient condition ==\n");
    let rho = check_rho_condition(&extrema, problem.theta, problem.tau_min(), problem.tau_max());
    out.push_str(&format!("{rho}\n"));

    out.push_str("== toll thresholds per state ==\n");
    let mut header = String::from("state");
    for r in 0..extrema.route_count() {
        header.push_str(&format!(",threshold_route_{}", r + 1));
    }
    out.push_str(&header);
    out.push('\n');
    for state in 0..=problem.x_max {
        let thresholds = toll_threshold_diagnostic(&extrema, problem.theta, state as f64);
        out.push_str(&format!("{state}"));
        for t in thresholds {
            out.push_str(&format!(",{t}"));
        }
        out.push('\n');
    }

    write(&cfg.out.join("verify.txt"), &out)?;
    write(
        &cfg.out.join("timing.csv"),
        &format!("wall_ms\n{}\n", started.elapsed().as_millis()),
    )?;
    Ok(())
}

fn run_simulate(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let problem = cfg.instance.base_problem()?;
    let (model, solved) = solve_problem(&problem)?;
    let sample_every = (cfg.horizon / 1000).max(1);
    let (report, trace) = simulate_policy_traced(
        &model,
        &solved.policy,
        cfg.horizon,
        cfg.seed,
        sample_every,
    )
    .map_err(|e| anyhow!("{e}"))?;

    let mut sim = String::from("step,running_average\n");
    for (step, avg) in trace {
        sim.push_str(&format!("{step},{avg}\n"));
    }
    write(&cfg.out.join("simulate.csv"), &sim)?;
    write(
        &cfg.out.join("summary.csv"),
        &format!(
            "estimate,standard_error,lambda_solved,excursions,mean_return_steps,mean_return_cost,seed\n{},{},{},{},{},{},{}\n",
            report.average_cost,
            report.standard_error,
            solved.lambda,
            report.excursions,
            report.mean_return_steps.map_or(String::from("NA"), |v| v.to_string()),
            report.mean_return_cost.map_or(String::from("NA"), |v| v.to_string()),
            report.seed
        ),
    )?;
    write(
        &cfg.out.join("timing.csv"),
        &format!("wall_ms\n{}\n", started.elapsed().as_millis()),
    )?;
    Ok(())
}

struct SweepPoint {
    label: String,
    lambda: f64,
    policy_csv: String,
    /// Policy restricted to the states shared with the previous grid point.
    policy_actions: Vec<usize>,
    wall_ms: u128,
    /// Aggregation sweep only: the truncated reference value.
    lambda_reference: Option<f64>,
}

fn sweep_point(cfg: &ExperimentConfig, kind: ExperimentKind, value: f64) -> Result<SweepPoint> {
    let inst = &cfg.instance;
    let started = Instant::now();
    let point = match kind {
        ExperimentKind::SweepTheta => {
            let problem = inst.problem(value, inst.x_max, inst.eta, inst.bpr_c.len())?;
            let (model, result) = solve_problem(&problem)?;
            SweepPoint {
                label: format!("{value}"),
                lambda: result.lambda,
                policy_csv: result.policy_csv(&model),
                policy_actions: result.policy.actions().to_vec(),
                wall_ms: 0,
                lambda_reference: None,
            }
        }
        ExperimentKind::SweepEta => {
            let eta = value as usize;
            let problem = inst.problem(inst.theta, inst.x_max, eta, inst.bpr_c.len())?;
            let (model, result) = solve_problem(&problem)?;
            SweepPoint {
                label: format!("{eta}"),
                lambda: result.lambda,
                policy_csv: result.policy_csv(&model),
                policy_actions: result.policy.actions().to_vec(),
                wall_ms: 0,
                lambda_reference: None,
            }
        }
        ExperimentKind::SweepXmax => {
            let x_max = value as usize;
            let problem = inst.problem(inst.theta, x_max, inst.eta, inst.bpr_c.len())?;
            let (model, result) = solve_problem(&problem)?;
            SweepPoint {
                label: format!("{x_max}"),
                lambda: result.lambda,
                policy_csv: result.policy_csv(&model),
                policy_actions: result.policy.actions().to_vec(),
                wall_ms: 0,
                lambda_reference: None,
            }
        }
        ExperimentKind::SweepAggregation => {
            let n = value as usize;
            let base = inst.problem(inst.theta, inst.x_max, inst.eta, inst.bpr_c.len())?;
            let truncated = build_truncated_model(&base)?;
            let reference = policy_iteration(&truncated, &Policy::uniform(0, truncated.num_states()))
                .map_err(|e| anyhow!("{e}"))?
                .lambda;
            let aggregated = build_aggregated_model(&base, n)?;
            let result = policy_iteration(&aggregated, &Policy::uniform(0, aggregated.num_states()))
                .map_err(|e| anyhow!("{e}"))?;
            SweepPoint {
                label: format!("{n}"),
                lambda: result.lambda,
                policy_csv: result.policy_csv(&aggregated),
                policy_actions: result.policy.actions().to_vec(),
                wall_ms: 0,
                lambda_reference: Some(reference),
            }
        }
        ExperimentKind::SweepRoutes => {
            let routes = value as usize;
            let problem = inst.problem(inst.theta, inst.x_max, inst.eta, routes)?;
            let (model, result) = solve_problem(&problem)?;
            SweepPoint {
                label: format!("{routes}"),
                lambda: result.lambda,
                policy_csv: result.policy_csv(&model),
                policy_actions: result.policy.actions().to_vec(),
                wall_ms: 0,
                lambda_reference: None,
            }
        }
        _ => unreachable!("not a sweep kind"),
    };
    Ok(SweepPoint {
        wall_ms: started.elapsed().as_millis(),
        ..point
    })
}

fn run_sweep(cfg: &ExperimentConfig, threads: usize) -> Result<()> {
    let kind = cfg.kind;
    // Integer sweeps validate their grids up front.
    if kind != ExperimentKind::SweepTheta {
        cfg.integer_grid()?;
    }
    let points: Vec<f64> = cfg.grid.clone();
    let results: Vec<Option<Result<SweepPoint>>> = {
        let slots: Mutex<Vec<Option<Result<SweepPoint>>>> =
            Mutex::new((0..points.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        let workers = threads.max(1).min(points.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let index = next.fetch_add(1, Ordering::SeqCst);
                    if index >= points.len() {
                        break;
                    }
                    let outcome = sweep_point(cfg, kind, points[index]);
                    slots.lock().expect("no poisoned workers")[index] = Some(outcome);
                });
            }
        });
        slots.into_inner().expect("workers joined")
    };

    let mut sweep = if kind == ExperimentKind::SweepAggregation {
        String::from("value,lambda,lambda_truncated,abs_gap,policy_changed\n")
    } else {
        String::from("value,lambda,policy_changed\n")
    };
    let mut timing = String::from("value,wall_ms\n");
    let mut previous: Option<Vec<usize>> = None;
    for (index, slot) in results.into_iter().enumerate() {
        let point = slot.expect("all points computed")?;
        let changed = match &previous {
            None => false,
            Some(prev) => {
                let shared = prev.len().min(point.policy_actions.len());
                prev[..shared] != point.policy_actions[..shared]
            }
        };
        match point.lambda_reference {
            Some(reference) => sweep.push_str(&format!(
                "{},{},{},{},{}\n",
                point.label,
                point.lambda,
                reference,
                (point.lambda - reference).abs(),
                changed as u8
            )),
            None => sweep.push_str(&format!(
                "{},{},{}\n",
                point.label, point.lambda, changed as u8
            )),
        }
        timing.push_str(&format!("{},{}\n", point.label, point.wall_ms));
        write(
            &cfg.out.join(format!("policy_{index}.csv")),
            &point.policy_csv,
        )?;
        previous = Some(point.policy_actions);
    }
    write(&cfg.out.join("sweep.csv"), &sweep)?;
    write(&cfg.out.join("timing.csv"), &timing)?;
    Ok(())
}
