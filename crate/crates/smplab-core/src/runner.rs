//! Deterministic experiment driver.
//!
//! [`run_experiment`] takes a fully resolved [`Config`], runs the experiment
//! it describes, and writes plain-text artifacts into an output directory:
//!
//! - `manifest.txt` — format tag, code version, and the canonical config
//!   echo. Everything that determines the results, nothing that doesn't.
//! - one or more CSV files with the measurements (comma separator, header
//!   row, LF line endings, floats at 17 significant digits);
//! - `summary.txt` — the human-readable lines also returned in
//!   [`RunSummary`], ending in a verdict where the experiment defines one;
//! - `timing.txt` — wall-clock duration. This is the one artifact that is
//!   *not* reproducible and it is kept separate so that everything else can
//!   be compared byte-for-byte: identical (config, build) must produce
//!   identical bytes in every other file.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::adjoint::{
    regularity_profile, solve_adjoint, solve_adjoint_exact_linear, AdjointEnsemble,
};
use crate::config::{Config, ExperimentKind, OptMethod};
use crate::error::Error;
use crate::forward::{simulate_ensemble, ControlProcess, PathEnsemble, SimParams, TimeGrid};
use crate::model::{cost_evaluate, validate_scenario, CheckStatus};
use crate::noise::normal_pair;
use crate::numfmt::fmt_float;
use crate::smp::{
    directional_from_gradient, gradient_adjoint, gradient_fd, optimize_msa,
    optimize_projected_gradient, spike_rate_study, verify_smp, FdParams, MsaParams, PgParams,
    RateStudyParams,
};
use crate::Result;

/// What a finished experiment reports back, besides its files.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub kind: ExperimentKind,
    /// Overall verdict, for experiments that define one.
    pub pass: Option<bool>,
    /// The lines written to `summary.txt`.
    pub lines: Vec<String>,
    /// File names written into the output directory.
    pub files: Vec<String>,
}

/// Incremental CSV assembly with the fixed dialect: comma separator, one
/// header row, LF endings, floats through [`fmt_float`].
struct Csv {
    buf: String,
}

impl Csv {
    fn new(header: &[&str]) -> Self {
        let mut buf = String::new();
        buf.push_str(&header.join(","));
        buf.push('\n');
        Csv { buf }
    }

    fn row(&mut self, fields: &[CsvField]) {
        let mut first = true;
        for f in fields {
            if !first {
                self.buf.push(',');
            }
            first = false;
            match f {
                CsvField::Int(v) => {
                    let _ = write!(self.buf, "{v}");
                }
                CsvField::Float(v) => self.buf.push_str(&fmt_float(*v)),
            }
        }
        self.buf.push('\n');
    }
}

enum CsvField {
    Int(i64),
    Float(f64),
}

use CsvField::{Float, Int};

/// Collects artifacts for one run and writes them out.
struct Artifacts<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Artifacts<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        Ok(Artifacts {
            dir,
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, content).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_csv(&mut self, name: &str, csv: Csv) -> Result<()> {
        self.write(name, &csv.buf)
    }
}

/// Simulate the scenario under a constant control.
fn held_ensemble(
    config: &Config,
    u: [f64; 2],
) -> Result<(TimeGrid, ControlProcess, PathEnsemble, SimParams)> {
    let grid = TimeGrid::new(config.scenario.horizon, config.sim.n_steps)?;
    let controls = ControlProcess::constant(config.sim.n_steps, u);
    let params = SimParams {
        n_paths: config.sim.n_paths,
        seed: config.seed,
        base_steps: config.sim.base_steps,
    };
    let ensemble = simulate_ensemble(&config.scenario, &grid, &controls, &params)?;
    Ok((grid, controls, ensemble, params))
}

fn verdict_line(pass: Option<bool>) -> String {
    match pass {
        Some(true) => "verdict = PASS".into(),
        Some(false) => "verdict = FAIL".into(),
        None => "verdict = none (measurement only)".into(),
    }
}

/// Run the experiment described by `config`, writing artifacts under
/// `out_dir` (created if needed). Returns the summary; errors from the
/// underlying modules propagate after a diagnostic file is written.
pub fn run_experiment(config: &Config, out_dir: &Path) -> Result<RunSummary> {
    let start = Instant::now();
    let mut art = Artifacts::new(out_dir)?;
    let manifest = format!(
        "format = 1\nversion = {}\n\n{}",
        env!("CARGO_PKG_VERSION"),
        crate::config::serialize_config(config)
    );
    art.write("manifest.txt", &manifest)?;

    let outcome = match config.kind {
        ExperimentKind::Simulate => run_simulate(config, &mut art),
        ExperimentKind::Adjoint => run_adjoint(config, &mut art),
        ExperimentKind::GradCheck => run_grad_check(config, &mut art),
        ExperimentKind::SpikeRates => run_spike_rates(config, &mut art),
        ExperimentKind::Optimize => run_optimize(config, &mut art),
        ExperimentKind::VerifySmp => run_verify_smp(config, &mut art),
        ExperimentKind::Regularity => run_regularity(config, &mut art),
        ExperimentKind::Validate => run_validate(config, &mut art),
    };

    let (pass, mut lines) = match outcome {
        Ok((pass, lines)) => (pass, lines),
        Err(e) => {
            // Leave a diagnostic next to the partial artifacts, then fail.
            let _ = art.write("error.txt", &format!("{e}\n"));
            return Err(e);
        }
    };
    lines.insert(0, format!("experiment = {}", config.kind.as_str()));
    lines.push(verdict_line(pass));
    let mut summary = lines.join("\n");
    summary.push('\n');
    art.write("summary.txt", &summary)?;
    art.write(
        "timing.txt",
        &format!("wall_seconds = {:.3}\n", start.elapsed().as_secs_f64()),
    )?;

    Ok(RunSummary {
        kind: config.kind,
        pass,
        lines,
        files: art.files,
    })
}

type KindOutcome = Result<(Option<bool>, Vec<String>)>;

fn run_simulate(config: &Config, art: &mut Artifacts) -> KindOutcome {
    let (grid, controls, ensemble, _) = held_ensemble(config, config.verify.u0)?;
    let n = config.scenario.n_modes;
    let n_nodes = grid.n_steps + 1;

    let mut paths_csv = Csv::new(&["path", "step", "time", "mode", "coefficient"]);
    for p in 0..ensemble.n_paths().min(config.sim.dump_paths) {
        let path = &ensemble.paths[p];
        for i in 0..n_nodes {
            let state = path.state(i);
            for k in 0..n {
                paths_csv.row(&[
                    Int(p as i64),
                    Int(i as i64),
                    Float(grid.node(i)),
                    Int(k as i64),
                    Float(state[k]),
                ]);
            }
        }
    }
    art.write_csv("paths.csv", paths_csv)?;

    let mut mean_csv = Csv::new(&["step", "time", "mode", "mean", "variance"]);
    let inv = 1.0 / ensemble.n_paths() as f64;
    for i in 0..n_nodes {
        let mean = ensemble.mean_state(i);
        for k in 0..n {
            let mut var = 0.0;
            for path in &ensemble.paths {
                let d = path.state(i)[k] - mean[k];
                var += d * d;
            }
            var *= inv;
            mean_csv.row(&[
                Int(i as i64),
                Float(grid.node(i)),
                Int(k as i64),
                Float(mean[k]),
                Float(var),
            ]);
        }
    }
    art.write_csv("mean.csv", mean_csv)?;

    let cost = cost_evaluate(&config.scenario.cost, &grid, &ensemble, &controls)?;
    let lines = vec![
        format!("paths = {}", ensemble.n_paths()),
        format!("steps = {}", grid.n_steps),
        format!("held_control = {}, {}", fmt_float(config.verify.u0[0]), fmt_float(config.verify.u0[1])),
        format!("cost = {}", fmt_float(cost.value)),
        format!("cost_se = {}", fmt_float(cost.std_error)),
    ];
    Ok((None, lines))
}

/// Shared by the adjoint-facing experiments: β means, standard errors, and
/// the diagnostics table.
fn write_adjoint_tables(
    art: &mut Artifacts,
    grid: &TimeGrid,
    adj: &AdjointEnsemble,
    dump_paths: usize,
) -> Result<()> {
    let mut beta_csv = Csv::new(&["step", "time", "beta_left", "beta_right", "se_left", "se_right"]);
    let paths = adj.n_paths() as f64;
    for i in 0..=adj.n_steps {
        let mean = adj.beta_mean(i);
        let mut var = [0.0f64; 2];
        for b in &adj.beta {
            var[0] += (b[i][0] - mean[0]).powi(2);
            var[1] += (b[i][1] - mean[1]).powi(2);
        }
        let se = [
            (var[0] / (paths * (paths - 1.0).max(1.0))).sqrt(),
            (var[1] / (paths * (paths - 1.0).max(1.0))).sqrt(),
        ];
        beta_csv.row(&[
            Int(i as i64),
            Float(grid.node(i)),
            Float(mean[0]),
            Float(mean[1]),
            Float(se[0]),
            Float(se[1]),
        ]);
    }
    art.write_csv("beta.csv", beta_csv)?;

    let mut y_csv = Csv::new(&["path", "step", "time", "mode", "y"]);
    for p in 0..adj.n_paths().min(dump_paths) {
        for i in 0..=adj.n_steps {
            let y = adj.y[p].state(i);
            for k in 0..adj.n_modes {
                y_csv.row(&[
                    Int(p as i64),
                    Int(i as i64),
                    Float(grid.node(i)),
                    Int(k as i64),
                    Float(y[k]),
                ]);
            }
        }
    }
    art.write_csv("adjoint_paths.csv", y_csv)?;

    let mut diag_csv = Csv::new(&["step", "residual_t_stat", "condition"]);
    for d in &adj.diagnostics {
        diag_csv.row(&[Int(d.step as i64), Float(d.residual_t_stat), Float(d.condition)]);
    }
    art.write_csv("diagnostics.csv", diag_csv)?;
    Ok(())
}

fn run_adjoint(config: &Config, art: &mut Artifacts) -> KindOutcome {
    let (grid, controls, ensemble, sim) = held_ensemble(config, config.verify.u0)?;
    let adj = solve_adjoint(
        &config.scenario,
        &grid,
        &ensemble,
        &controls,
        &sim,
        &config.adjoint,
    )?;
    write_adjoint_tables(art, &grid, &adj, config.sim.dump_paths)?;

    let max_t = adj
        .diagnostics
        .iter()
        .map(|d| d.residual_t_stat.abs())
        .fold(0.0f64, f64::max);
    let max_cond = adj.diagnostics.iter().map(|d| d.condition).fold(0.0f64, f64::max);

    let mut lines = vec![
        format!("paths = {}", adj.n_paths()),
        format!("regression_features = {}", config.adjoint.n_features),
        format!("max_residual_t_stat = {}", fmt_float(max_t)),
        format!("max_condition = {}", fmt_float(max_cond)),
    ];
    // The closed linear form exists only for affine dynamics with
    // state-independent noise and affine cost gradients; compare when it
    // does.
    match solve_adjoint_exact_linear(&config.scenario, &grid, &ensemble, &controls) {
        Ok(exact) => {
            let rel = crate::adjoint::adjoint_relative_error(&adj, &exact)?;
            lines.push(format!("exact_linear_rel_error = {}", fmt_float(rel)));
        }
        Err(_) => lines.push("exact_linear_rel_error = n/a (no closed linear form)".into()),
    }
    // Unbiased regression residuals are the solver's own health check; 5
    // standard errors is the fixed alarm threshold.
    let pass = max_t <= 5.0;
    Ok((Some(pass), lines))
}

fn run_grad_check(config: &Config, art: &mut Artifacts) -> KindOutcome {
    let (grid, controls, ensemble, sim) = held_ensemble(config, config.optimize.u0)?;
    let adj = solve_adjoint(
        &config.scenario,
        &grid,
        &ensemble,
        &controls,
        &sim,
        &config.adjoint,
    )?;
    let g = gradient_adjoint(&config.scenario, &grid, &ensemble, &adj, &controls)?;

    let n_steps = config.sim.n_steps;
    let fd_params = FdParams {
        thetas: config.grad.theta_ladder.clone(),
        n_paths: config.sim.n_paths,
        seed: config.seed,
    };
    // Deterministic probe directions: unit-normalized Gaussian fields on a
    // stream tagged away from the path noise.
    const DIRECTION_TAG: u64 = 0x6469_7265_6374; // "direct"
    let mut csv = Csv::new(&["direction", "adjoint_value", "fd_value", "fd_noise_floor", "abs_diff"]);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut lines = Vec::new();
    for j in 0..config.grad.directions {
        let mut dir = ControlProcess::zeros(n_steps);
        let mut norm_sq = 0.0;
        for i in 0..n_steps {
            let (z1, z2) = normal_pair(config.seed ^ DIRECTION_TAG, j as u64, i as u64, 0);
            dir.values[i] = [z1, z2];
            norm_sq += z1 * z1 + z2 * z2;
        }
        let scale = 1.0 / (norm_sq * grid.h()).sqrt().max(f64::MIN_POSITIVE);
        for v in dir.values.iter_mut() {
            v[0] *= scale;
            v[1] *= scale;
        }

        let fd = gradient_fd(&config.scenario, &grid, &controls, &dir, &fd_params)?;
        let ad = directional_from_gradient(&grid, &g, &dir);
        let diff = (ad - fd.richardson).abs();
        num += diff * diff;
        den += fd.richardson * fd.richardson;
        csv.row(&[
            Int(j as i64),
            Float(ad),
            Float(fd.richardson),
            Float(fd.noise_floor),
            Float(diff),
        ]);
    }
    art.write_csv("gradient.csv", csv)?;

    let rel = (num / den.max(f64::MIN_POSITIVE)).sqrt();
    lines.push(format!("directions = {}", config.grad.directions));
    lines.push(format!(
        "theta_ladder = {}",
        config
            .grad
            .theta_ladder
            .iter()
            .map(|&t| fmt_float(t))
            .collect::<Vec<_>>()
            .join(", ")
    ));
    lines.push(format!("relative_l2_error = {}", fmt_float(rel)));
    lines.push(format!("tolerance = {}", fmt_float(config.grad.tolerance)));
    Ok((Some(rel <= config.grad.tolerance), lines))
}

fn run_spike_rates(config: &Config, art: &mut Artifacts) -> KindOutcome {
    let grid = TimeGrid::new(config.scenario.horizon, config.sim.n_steps)?;
    let u_bar = ControlProcess::constant(config.sim.n_steps, config.verify.u0);
    let params = RateStudyParams {
        epsilons: config.spike.epsilon_ladder.clone(),
        t_bar: config.spike.t_bar,
        value: config.spike.value,
        n_paths: config.sim.n_paths,
        seed: config.seed,
        base_steps: config.sim.base_steps,
        refine_modes: config.spike.refine_modes,
        refine_steps: config.spike.refine_steps,
    };
    let report = spike_rate_study(&config.scenario, &grid, &u_bar, &params)?;

    let mut csv = Csv::new(&[
        "epsilon", "delta", "delta_se", "eta", "eta_se", "moment2", "moment4",
    ]);
    for i in 0..report.epsilons.len() {
        csv.row(&[
            Float(report.epsilons[i]),
            Float(report.delta[i]),
            Float(report.delta_se[i]),
            Float(report.eta[i]),
            Float(report.eta_se[i]),
            Float(report.moment2[i]),
            Float(report.moment4[i]),
        ]);
    }
    art.write_csv("rates.csv", csv)?;

    let mut lines = vec![
        format!("t_bar = {}", fmt_float(config.spike.t_bar)),
        format!(
            "delta_slope = {} (half_width {})",
            fmt_float(report.delta_slope.slope),
            fmt_float(report.delta_slope.half_width)
        ),
    ];
    match &report.eta_slope {
        Some(fit) => lines.push(format!(
            "eta_slope = {} (half_width {})",
            fmt_float(fit.slope),
            fmt_float(fit.half_width)
        )),
        None => lines.push("eta_slope = n/a (remainder below resolution)".into()),
    }
    if let Some(d) = report.refine_modes_delta {
        lines.push(format!("refine_modes_slope_shift = {}", fmt_float(d)));
    }
    if let Some(d) = report.refine_steps_delta {
        lines.push(format!("refine_steps_slope_shift = {}", fmt_float(d)));
    }
    lines.push(format!("mc_noise_flag = {}", report.mc_noise_flag));
    // First-order theory predicts at least square-root smoothing of the
    // perturbation; a noisy ladder voids the measurement.
    let pass = report.delta_slope.slope >= 0.5 && !report.mc_noise_flag;
    Ok((Some(pass), lines))
}

fn run_optimize(config: &Config, art: &mut Artifacts) -> KindOutcome {
    let grid = TimeGrid::new(config.scenario.horizon, config.sim.n_steps)?;
    let u0 = ControlProcess::constant(config.sim.n_steps, config.optimize.u0);

    let (controls, j, j_se, iters, pass, mut lines) = match config.optimize.method {
        OptMethod::Pg => {
            let params = PgParams {
                rho: config.optimize.rho,
                max_iters: config.optimize.max_iters,
                tol: config.optimize.tol,
                n_paths: config.sim.n_paths,
                seed: config.seed,
                adjoint: config.adjoint,
            };
            let out = optimize_projected_gradient(&config.scenario, &grid, &u0, &params)?;
            let mut csv = Csv::new(&["iter", "j", "j_se", "vi_residual", "rho"]);
            for r in &out.history {
                csv.row(&[
                    Int(r.iter as i64),
                    Float(r.j),
                    Float(r.j_se),
                    Float(r.vi_residual),
                    Float(r.rho),
                ]);
            }
            art.write_csv("history.csv", csv)?;
            let lines = vec![
                "method = pg".to_string(),
                format!("converged = {}", out.converged),
                format!("stalled = {}", out.stalled),
                format!("aborted_divergent = {}", out.aborted_divergent),
                format!(
                    "final_vi_residual = {}",
                    fmt_float(out.history.last().map_or(f64::NAN, |r| r.vi_residual))
                ),
            ];
            let pass = out.converged && !out.stalled && !out.aborted_divergent;
            (
                out.controls,
                out.j,
                out.j_se,
                out.history.len(),
                pass,
                lines,
            )
        }
        OptMethod::Msa => {
            let params = MsaParams {
                max_iters: config.optimize.max_iters,
                damping: config.optimize.damping,
                n_paths: config.sim.n_paths,
                seed: config.seed,
                adjoint: config.adjoint,
            };
            let out = optimize_msa(&config.scenario, &grid, &u0, &params)?;
            let mut csv = Csv::new(&["iter", "j", "j_se", "changes", "max_gap"]);
            for r in &out.history {
                csv.row(&[
                    Int(r.iter as i64),
                    Float(r.j),
                    Float(r.j_se),
                    Int(r.changes as i64),
                    Float(r.max_gap),
                ]);
            }
            art.write_csv("history.csv", csv)?;
            let lines = vec![
                "method = msa".to_string(),
                format!("converged = {}", out.converged),
                format!("cycled = {}", out.cycled),
                format!("best_j = {}", fmt_float(out.best_j)),
            ];
            let pass = out.converged && !out.cycled;
            (
                out.controls,
                out.j,
                out.j_se,
                out.history.len(),
                pass,
                lines,
            )
        }
    };

    let mut control_csv = Csv::new(&["step", "time", "u_left", "u_right"]);
    for i in 0..controls.n_steps() {
        control_csv.row(&[
            Int(i as i64),
            Float(grid.node(i)),
            Float(controls.values[i][0]),
            Float(controls.values[i][1]),
        ]);
    }
    art.write_csv("control.csv", control_csv)?;

    lines.push(format!("iterations = {iters}"));
    lines.push(format!("j = {}", fmt_float(j)));
    lines.push(format!("j_se = {}", fmt_float(j_se)));
    Ok((Some(pass), lines))
}

fn run_verify_smp(config: &Config, art: &mut Artifacts) -> KindOutcome {
    let (grid, controls, ensemble, sim) = held_ensemble(config, config.verify.u0)?;
    let adj = solve_adjoint(
        &config.scenario,
        &grid,
        &ensemble,
        &controls,
        &sim,
        &config.adjoint,
    )?;
    let report = verify_smp(&config.scenario, &grid, &ensemble, &adj, &controls)?;

    let mut csv = Csv::new(&["step", "time", "gap", "se", "argmax_left", "argmax_right"]);
    for s in &report.steps {
        csv.row(&[
            Int(s.step as i64),
            Float(s.time),
            Float(s.gap),
            Float(s.se),
            Float(s.argmax[0]),
            Float(s.argmax[1]),
        ]);
    }
    art.write_csv("gaps.csv", csv)?;

    let pass = report.max_ratio <= config.verify.gap_ratio;
    let lines = vec![
        format!("probes = {}", report.n_probes),
        format!(
            "max_gap = {} at step {} (time {})",
            fmt_float(report.max_gap),
            report.max_gap_step,
            fmt_float(grid.node(report.max_gap_step))
        ),
        format!("avg_gap = {}", fmt_float(report.avg_gap)),
        format!(
            "max_gap_over_se = {} (threshold {})",
            fmt_float(report.max_ratio),
            fmt_float(config.verify.gap_ratio)
        ),
    ];
    Ok((Some(pass), lines))
}

fn run_regularity(config: &Config, art: &mut Artifacts) -> KindOutcome {
    let (grid, controls, ensemble, sim) = held_ensemble(config, config.verify.u0)?;
    let adj = solve_adjoint(
        &config.scenario,
        &grid,
        &ensemble,
        &controls,
        &sim,
        &config.adjoint,
    )?;
    let fit = regularity_profile(&adj, &grid, config.regularity.window)?;

    let mut csv = Csv::new(&["tau", "mean_beta_norm"]);
    for &(tau, norm) in &fit.samples {
        csv.row(&[Float(tau), Float(norm)]);
    }
    art.write_csv("profile.csv", csv)?;

    let lines = vec![
        format!("window_fraction = {}", fmt_float(config.regularity.window)),
        format!("nodes = {}", fit.samples.len()),
        format!("slope = {}", fmt_float(fit.slope)),
        format!("intercept = {}", fmt_float(fit.intercept)),
    ];
    Ok((None, lines))
}

fn run_validate(config: &Config, art: &mut Artifacts) -> KindOutcome {
    let report = validate_scenario(&config.scenario)?;
    let mut text = String::new();
    let mut lines = Vec::new();
    for c in &report.checks {
        let status = match c.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skipped => "SKIPPED",
        };
        let class = if c.required { "required" } else { "informational" };
        let _ = writeln!(text, "{status} [{class}] {}: {}", c.name, c.detail);
    }
    art.write("report.txt", &text)?;
    let n_fail = report.failed().len();
    lines.push(format!("checks = {}", report.checks.len()));
    lines.push(format!("failed = {n_fail}"));
    for c in report.failed() {
        lines.push(format!("failed_check = {}", c.name));
    }
    Ok((Some(report.all_required_pass()), lines))
}
