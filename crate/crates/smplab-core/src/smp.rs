//! The maximum-principle laboratory: spike perturbations and their rates,
//! Hamiltonian gap verification, duality checks, adjoint and
//! finite-difference gradients, and the two optimizers built on them.
//!
//! Conventions, fixed once here and used everywhere:
//!
//! * the Hamiltonian is `H(t, x, v, y) = <beta, v> - l(t, x, v)` with
//!   `beta = ((b_left, y), (b_right, y))` the boundary pairing of the
//!   adjoint state, so near-optimal controls *maximize* H;
//! * the cost gradient is `g_i = E[l_u(t_i, X_i, u_i)] - E[beta_i]`, which
//!   equals `-H_u`; descent steps move along `-g`;
//! * the duality residual `E<X~_T, h_x> + E int <l_x, X~> + E int <beta, du>`
//!   vanishes for the exact pair and is O(h) + O(MC) for the computed one.
//!
//! Controls are deterministic step functions (open-loop). Optimality gaps
//! are therefore measured on the cross-path mean Hamiltonian per step: for
//! this control class the maximum principle bounds the mean gap, while
//! conditional per-path gaps stay strictly positive even at the optimum.

use crate::adjoint::{solve_adjoint, AdjointEnsemble, AdjointParams};
use crate::error::Error;
use crate::forward::{
    simulate_ensemble, ControlProcess, PathEnsemble, SimParams, Stepper, TimeGrid,
};
use crate::model::{cost_evaluate, path_cost, ControlSet, CostSpec, Scenario};
use crate::noise::NoiseBundle;
use crate::par;
use crate::Result;
use std::collections::HashMap;

// ---------------------------------------------------------------------------
// Spike perturbations
// ---------------------------------------------------------------------------

/// A needle perturbation: replace the control by `value` on the window
/// `[t_bar, t_bar + epsilon)`.
#[derive(Debug, Clone, Copy)]
pub struct SpikeSpec {
    pub t_bar: f64,
    pub epsilon: f64,
    pub value: [f64; 2],
}

impl SpikeSpec {
    /// Step-index window `[start, stop)`; both endpoints must sit on grid
    /// nodes. `epsilon = 0` yields the empty window.
    pub fn window_steps(&self, grid: &TimeGrid) -> Result<(usize, usize)> {
        let h = grid.h();
        let misaligned = || Error::NotStepAligned {
            start: self.t_bar,
            start_plus_len: self.t_bar + self.epsilon,
            h,
        };
        let snap = |t: f64| -> Option<usize> {
            let r = t / h;
            let i = r.round();
            if (r - i).abs() <= 1e-9 * (1.0 + r.abs()) && i >= 0.0 {
                Some(i as usize)
            } else {
                None
            }
        };
        let start = snap(self.t_bar).ok_or_else(misaligned)?;
        let stop = snap(self.t_bar + self.epsilon).ok_or_else(misaligned)?;
        if stop < start || stop > grid.n_steps {
            return Err(Error::InvalidArgument(format!(
                "spike window [{}, {}] leaves [0, {}]",
                self.t_bar,
                self.t_bar + self.epsilon,
                grid.horizon
            )));
        }
        Ok((start, stop))
    }
}

/// The spiked control: `u_bar` outside the window, `spec.value` inside.
pub fn spike_control(
    u_bar: &ControlProcess,
    spec: &SpikeSpec,
    grid: &TimeGrid,
    control_set: &ControlSet,
) -> Result<ControlProcess> {
    if u_bar.n_steps() != grid.n_steps {
        return Err(Error::DimensionMismatch(format!(
            "control has {} steps, grid has {}",
            u_bar.n_steps(),
            grid.n_steps
        )));
    }
    if !control_set.contains(spec.value, 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "spike value [{}, {}] is not admissible",
            spec.value[0], spec.value[1]
        )));
    }
    let (start, stop) = spec.window_steps(grid)?;
    let mut out = u_bar.clone();
    for i in start..stop {
        out.values[i] = spec.value;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Spike-rate study
// ---------------------------------------------------------------------------

/// Least-squares slope of `log y` against `log x` with a ~95% half-width.
#[derive(Debug, Clone, Copy)]
pub struct FitResult {
    pub slope: f64,
    pub half_width: f64,
}

fn log_log_fit(xs: &[f64], ys: &[f64]) -> FitResult {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..xs.len() {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    for i in 0..xs.len() {
        let r = ly[i] - intercept - slope * lx[i];
        ss_res += r * r;
    }
    let dof = (xs.len().saturating_sub(2)).max(1) as f64;
    let se = (ss_res / dof / sxx).sqrt();
    FitResult {
        slope,
        half_width: 2.0 * se,
    }
}

/// Knobs for [`spike_rate_study`].
#[derive(Debug, Clone)]
pub struct RateStudyParams {
    /// Spike lengths, largest first; each must be a whole number of steps.
    pub epsilons: Vec<f64>,
    /// Spike onset time (step-aligned).
    pub t_bar: f64,
    /// Control value inside the window.
    pub value: [f64; 2],
    pub n_paths: usize,
    pub seed: u64,
    /// Base refinement grid for the noise (lets runs at different `n_steps`
    /// share increments). Defaults to the simulation grid.
    pub base_steps: Option<usize>,
    /// Rerun at this mode count (quarter the paths) and report the slope
    /// shift.
    pub refine_modes: Option<usize>,
    /// Rerun at this step count (quarter the paths) and report the slope
    /// shift. Must divide `base_steps`.
    pub refine_steps: Option<usize>,
}

/// Measured perturbation sizes and fitted rates for a spike ladder.
#[derive(Debug, Clone)]
pub struct RateReport {
    pub epsilons: Vec<f64>,
    /// `E sup_t |X^eps_t - X_t|_H` per epsilon, with standard errors.
    pub delta: Vec<f64>,
    pub delta_se: Vec<f64>,
    /// `E sup_t |X^eps_t - X_t - V^eps_t|_H` (second-order remainder).
    pub eta: Vec<f64>,
    pub eta_se: Vec<f64>,
    /// `E sup_t |X^eps_t|_H^p` for p = 2, 4, per epsilon: these stay bounded
    /// uniformly in epsilon.
    pub moment2: Vec<f64>,
    pub moment4: Vec<f64>,
    pub delta_slope: FitResult,
    /// `None` when the remainder is exactly zero (affine dynamics).
    pub eta_slope: Option<FitResult>,
    /// Set when any delta standard error exceeds half the smallest gap
    /// between adjacent delta values: the ladder is then too fine for the
    /// path budget. Reported, not fatal.
    pub mc_noise_flag: bool,
    /// Slope shift when the mode count changes to `refine_modes`.
    pub refine_modes_delta: Option<f64>,
    /// Slope shift when the step count changes to `refine_steps`.
    pub refine_steps_delta: Option<f64>,
}

struct RateAccum {
    sup_delta: Vec<f64>,
    sup_eta: Vec<f64>,
    sup_state: Vec<f64>,
}

fn h_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One fused pass: base path, every spiked path of the ladder, and every
/// first variation share a bundle and are stepped together.
fn rate_curves(
    scenario: &Scenario,
    grid: &TimeGrid,
    u_bar: &ControlProcess,
    fork: usize,
    stops: &[usize],
    value: [f64; 2],
    n_paths: usize,
    seed: u64,
    base_steps: usize,
) -> Result<(Vec<RateAccum>, usize)> {
    let stepper = Stepper::new(scenario, grid)?;
    let n = stepper.n_modes();
    let n_eps = stops.len();
    let results = par::map_indexed(n_paths, |p| -> Result<RateAccum> {
        let bundle = NoiseBundle::new(seed, p, grid.horizon, base_steps);
        stepper.check_bundle(&bundle)?;
        let mut scratch = stepper.make_scratch();
        let mut x_bar = scenario.initial_state.coeffs.clone();
        let mut acc = RateAccum {
            sup_delta: vec![0.0; n_eps],
            sup_eta: vec![0.0; n_eps],
            sup_state: vec![0.0; n_eps],
        };
        let mut sup_common = h_norm(&x_bar);
        for i in 0..fork {
            if !stepper.step_state(&mut x_bar, u_bar.values[i], i, &bundle, &mut scratch) {
                return Err(Error::BlowUp { path: p, step: i });
            }
            sup_common = sup_common.max(h_norm(&x_bar));
        }
        let mut x_eps: Vec<Vec<f64>> = vec![x_bar.clone(); n_eps];
        let mut v_eps: Vec<Vec<f64>> = vec![vec![0.0; n]; n_eps];
        acc.sup_state.fill(sup_common);
        let mut x_before = vec![0.0; n];
        for i in fork..grid.n_steps {
            x_before.copy_from_slice(&x_bar);
            for j in 0..n_eps {
                let in_window = i < stops[j];
                let du = if in_window {
                    [value[0] - u_bar.values[i][0], value[1] - u_bar.values[i][1]]
                } else {
                    [0.0, 0.0]
                };
                if !stepper.step_variation(&mut v_eps[j], &x_before, du, i, &bundle, &mut scratch)
                {
                    return Err(Error::BlowUp { path: p, step: i });
                }
                let u = if in_window { value } else { u_bar.values[i] };
                if !stepper.step_state(&mut x_eps[j], u, i, &bundle, &mut scratch) {
                    return Err(Error::BlowUp { path: p, step: i });
                }
            }
            if !stepper.step_state(&mut x_bar, u_bar.values[i], i, &bundle, &mut scratch) {
                return Err(Error::BlowUp { path: p, step: i });
            }
            for j in 0..n_eps {
                let mut d2 = 0.0;
                let mut e2 = 0.0;
                let mut s2 = 0.0;
                for k in 0..n {
                    let d = x_eps[j][k] - x_bar[k];
                    let e = d - v_eps[j][k];
                    d2 += d * d;
                    e2 += e * e;
                    s2 += x_eps[j][k] * x_eps[j][k];
                }
                acc.sup_delta[j] = acc.sup_delta[j].max(d2.sqrt());
                acc.sup_eta[j] = acc.sup_eta[j].max(e2.sqrt());
                acc.sup_state[j] = acc.sup_state[j].max(s2.sqrt());
            }
        }
        Ok(acc)
    });
    let mut out = Vec::with_capacity(n_paths);
    for r in results {
        out.push(r?);
    }
    Ok((out, n_eps))
}

fn mean_se(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = values.clone().sum::<f64>() / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

fn study_slopes(
    scenario: &Scenario,
    grid: &TimeGrid,
    u_bar: &ControlProcess,
    params: &RateStudyParams,
    n_paths: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, FitResult, Option<FitResult>)>
{
    if params.epsilons.len() < 3 {
        return Err(Error::InvalidArgument(
            "rate ladder needs at least 3 epsilons".into(),
        ));
    }
    let fork_spec = SpikeSpec {
        t_bar: params.t_bar,
        epsilon: 0.0,
        value: params.value,
    };
    let (fork, _) = fork_spec.window_steps(grid)?;
    let mut stops = Vec::with_capacity(params.epsilons.len());
    for &eps in &params.epsilons {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon {eps} must be > 0")));
        }
        let spec = SpikeSpec {
            t_bar: params.t_bar,
            epsilon: eps,
            value: params.value,
        };
        let (_, stop) = spec.window_steps(grid)?;
        stops.push(stop);
    }
    if !scenario.control_set.contains(params.value, 1e-12) {
        return Err(Error::InvalidArgument(
            "spike value is not admissible".into(),
        ));
    }
    let base = params.base_steps.unwrap_or(grid.n_steps);
    let (accums, n_eps) = rate_curves(
        scenario, grid, u_bar, fork, &stops, params.value, n_paths, params.seed, base,
    )?;
    let mut delta = Vec::with_capacity(n_eps);
    let mut delta_se = Vec::with_capacity(n_eps);
    let mut eta = Vec::with_capacity(n_eps);
    let mut eta_se = Vec::with_capacity(n_eps);
    let mut moment2 = Vec::with_capacity(n_eps);
    let mut moment4 = Vec::with_capacity(n_eps);
    for j in 0..n_eps {
        let (m, se) = mean_se(accums.iter().map(|a| a.sup_delta[j]), accums.len());
        delta.push(m);
        delta_se.push(se);
        let (m, se) = mean_se(accums.iter().map(|a| a.sup_eta[j]), accums.len());
        eta.push(m);
        eta_se.push(se);
        let (m2, _) = mean_se(
            accums.iter().map(|a| a.sup_state[j] * a.sup_state[j]),
            accums.len(),
        );
        let (m4, _) = mean_se(
            accums.iter().map(|a| a.sup_state[j].powi(4)),
            accums.len(),
        );
        moment2.push(m2);
        moment4.push(m4);
    }
    let delta_slope = log_log_fit(&params.epsilons, &delta);
    // Affine dynamics make the remainder identically zero; fitting noise
    // would be meaningless.
    let exact_linear =
        scenario.reaction.as_modal_affine().is_some() && scenario.gain.has_zero_deriv();
    let eta_floor = 1e-10 * delta.iter().cloned().fold(0.0f64, f64::max).max(1e-300);
    let eta_slope = if exact_linear || eta.iter().all(|&v| v <= eta_floor) {
        None
    } else {
        Some(log_log_fit(&params.epsilons, &eta))
    };
    Ok((delta, delta_se, eta, eta_se, moment2, moment4, delta_slope, eta_slope))
}

/// Measures how strongly a spike of length `epsilon` moves the state, and
/// how large the second-order remainder against the first variation is,
/// over a ladder of epsilons with common noise. Optionally reruns at a
/// different mode or step resolution (quarter path budget) and reports the
/// slope shifts.
pub fn spike_rate_study(
    scenario: &Scenario,
    grid: &TimeGrid,
    u_bar: &ControlProcess,
    params: &RateStudyParams,
) -> Result<RateReport> {
    scenario.check_structure()?;
    if u_bar.n_steps() != grid.n_steps {
        return Err(Error::DimensionMismatch(format!(
            "control has {} steps, grid has {}",
            u_bar.n_steps(),
            grid.n_steps
        )));
    }
    if params.n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths = 0".into()));
    }
    let (delta, delta_se, eta, eta_se, moment2, moment4, delta_slope, eta_slope) =
        study_slopes(scenario, grid, u_bar, params, params.n_paths)?;

    // Monte-Carlo noise vs ladder spacing.
    let mut min_gap = f64::INFINITY;
    for w in delta.windows(2) {
        min_gap = min_gap.min((w[0] - w[1]).abs());
    }
    let max_se = delta_se.iter().cloned().fold(0.0f64, f64::max);
    let mc_noise_flag = max_se > 0.5 * min_gap;

    let refine_paths = (params.n_paths / 4).max(32);
    let refine_modes_delta = match params.refine_modes {
        Some(m) => {
            let s2 = scenario.with_n_modes(m);
            let (.., slope2, _) = study_slopes(&s2, grid, u_bar, params, refine_paths)?;
            Some(slope2.slope - delta_slope.slope)
        }
        None => None,
    };
    let refine_steps_delta = match params.refine_steps {
        Some(m) => {
            let base = params.base_steps.unwrap_or(grid.n_steps);
            if m == 0 || base % m != 0 {
                return Err(Error::InvalidArgument(format!(
                    "refine_steps {m} must divide the base grid {base}"
                )));
            }
            let grid2 = TimeGrid::new(grid.horizon, m)?;
            let u2 = resample_control(u_bar, grid.n_steps, m)?;
            let (.., slope2, _) = study_slopes(scenario, &grid2, &u2, params, refine_paths)?;
            Some(slope2.slope - delta_slope.slope)
        }
        None => None,
    };

    Ok(RateReport {
        epsilons: params.epsilons.clone(),
        delta,
        delta_se,
        eta,
        eta_se,
        moment2,
        moment4,
        delta_slope,
        eta_slope,
        mc_noise_flag,
        refine_modes_delta,
        refine_steps_delta,
    })
}

/// Piecewise-constant resampling of a step control onto a grid whose step
/// count is a multiple or divisor of the original.
fn resample_control(u: &ControlProcess, from: usize, to: usize) -> Result<ControlProcess> {
    if from == to {
        return Ok(u.clone());
    }
    if to % from == 0 {
        let k = to / from;
        Ok(ControlProcess::from_fn(to, |i| u.values[i / k]))
    } else if from % to == 0 {
        let k = from / to;
        // keep the left-endpoint value of each merged block
        Ok(ControlProcess::from_fn(to, |i| u.values[i * k]))
    } else {
        Err(Error::InvalidArgument(format!(
            "cannot resample a {from}-step control onto {to} steps"
        )))
    }
}

// ---------------------------------------------------------------------------
// Hamiltonian and gap verification
// ---------------------------------------------------------------------------

/// `H = <beta, v> - l(t, x, v)`, with the two parts kept separate.
#[derive(Debug, Clone, Copy)]
pub struct HamiltonianValue {
    pub value: f64,
    pub pairing: f64,
    pub running_cost: f64,
}

pub fn hamiltonian(
    t: f64,
    x: &[f64],
    v: [f64; 2],
    beta: [f64; 2],
    cost: &CostSpec,
) -> HamiltonianValue {
    let pairing = beta[0] * v[0] + beta[1] * v[1];
    let running_cost = cost.running_value(t, x, v);
    HamiltonianValue {
        value: pairing - running_cost,
        pairing,
        running_cost,
    }
}

/// Per-step outcome of the Hamiltonian maximization check.
#[derive(Debug, Clone, Copy)]
pub struct StepGap {
    pub step: usize,
    pub time: f64,
    /// Best mean-Hamiltonian improvement over the current control
    /// (clamped at 0: the control itself is always a candidate).
    pub gap: f64,
    /// Standard error of that improvement estimate.
    pub se: f64,
    pub argmax: [f64; 2],
}

/// Result of sweeping the admissible set against a control/adjoint pair.
#[derive(Debug, Clone)]
pub struct ViolationReport {
    pub steps: Vec<StepGap>,
    pub max_gap: f64,
    pub max_gap_step: usize,
    /// Time average `sum_i gap_i h / T`.
    pub avg_gap: f64,
    /// Largest gap measured in units of its own standard error; the
    /// optimality verdict compares this against a multiple.
    pub max_ratio: f64,
    pub n_probes: usize,
}

/// Checks the maximization condition of the stochastic maximum principle on
/// a computed (state, adjoint, control) triple: for every step, every probe
/// value of the admissible set is tested against the current control on the
/// cross-path mean Hamiltonian. Gaps significantly above their Monte-Carlo
/// error witness a violation (or a non-optimal control).
pub fn verify_smp(
    scenario: &Scenario,
    grid: &TimeGrid,
    states: &PathEnsemble,
    adjoint: &AdjointEnsemble,
    u_bar: &ControlProcess,
) -> Result<ViolationReport> {
    let n_steps = grid.n_steps;
    let paths = states.n_paths();
    if paths == 0 {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    if adjoint.n_paths() != paths || adjoint.n_steps != n_steps {
        return Err(Error::DimensionMismatch(
            "adjoint ensemble does not match the state ensemble".into(),
        ));
    }
    if u_bar.n_steps() != n_steps {
        return Err(Error::DimensionMismatch(format!(
            "control has {} steps, grid has {}",
            u_bar.n_steps(),
            n_steps
        )));
    }
    let probes = scenario.control_set.probe_points();
    let mut steps = Vec::with_capacity(n_steps);
    let mut max_gap = 0.0f64;
    let mut max_gap_step = 0usize;
    let mut avg = 0.0f64;
    let mut max_ratio = 0.0f64;
    let h = grid.h();
    for i in 0..n_steps {
        let t = grid.node(i);
        let u = u_bar.values[i];
        let mut best_gap = 0.0f64;
        let mut best_se = 0.0f64;
        let mut best_v = u;
        for &v in &probes {
            let dv = [v[0] - u[0], v[1] - u[1]];
            if dv[0] == 0.0 && dv[1] == 0.0 {
                continue;
            }
            // per-path difference H(v) - H(u); state cost parts cancel
            let mut s = 0.0;
            let mut s2 = 0.0;
            for p in 0..paths {
                let beta = adjoint.beta[p][i];
                let x = states.paths[p].state(i);
                let d = beta[0] * dv[0] + beta[1] * dv[1]
                    - (scenario.cost.running_value(t, x, v)
                        - scenario.cost.running_value(t, x, u));
                s += d;
                s2 += d * d;
            }
            let mean = s / paths as f64;
            let var = ((s2 - s * mean) / (paths as f64 - 1.0).max(1.0)).max(0.0);
            let se = (var / paths as f64).sqrt();
            if mean > best_gap {
                best_gap = mean;
                best_se = se;
                best_v = v;
            }
        }
        if best_gap > max_gap {
            max_gap = best_gap;
            max_gap_step = i;
        }
        avg += best_gap * h;
        if best_gap > 0.0 {
            let ratio = if best_se > 0.0 {
                best_gap / best_se
            } else {
                f64::INFINITY
            };
            max_ratio = max_ratio.max(ratio);
        }
        steps.push(StepGap {
            step: i,
            time: t,
            gap: best_gap,
            se: best_se,
            argmax: best_v,
        });
    }
    Ok(ViolationReport {
        steps,
        max_gap,
        max_gap_step,
        avg_gap: avg / grid.horizon,
        max_ratio,
        n_probes: probes.len(),
    })
}

// ---------------------------------------------------------------------------
// Duality residual
// ---------------------------------------------------------------------------

/// The three terms of the adjoint duality identity and their sum.
#[derive(Debug, Clone, Copy)]
pub struct DualityResidual {
    /// `terminal + running + control`; zero for the exact pair.
    pub value: f64,
    pub std_error: f64,
    pub terminal: f64,
    pub running: f64,
    pub control: f64,
}

/// Evaluates `E<X~_T, h_x(X_T)> + E int <l_x(t, X_t), X~_t> dt
/// + E int <beta_t, du_t> dt` on a coupled (state, variation, adjoint)
/// triple. The variation must have been simulated along `direction` with
/// the same noise as `states`, and `adjoint` solved on `states`.
pub fn duality_residual(
    scenario: &Scenario,
    grid: &TimeGrid,
    states: &PathEnsemble,
    variations: &PathEnsemble,
    adjoint: &AdjointEnsemble,
    direction: &ControlProcess,
) -> Result<DualityResidual> {
    let n_steps = grid.n_steps;
    let paths = states.n_paths();
    if paths == 0 {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    if variations.n_paths() != paths || adjoint.n_paths() != paths {
        return Err(Error::DimensionMismatch(
            "states, variations and adjoint must share the path count".into(),
        ));
    }
    if direction.n_steps() != n_steps {
        return Err(Error::DimensionMismatch(format!(
            "direction has {} steps, grid has {}",
            direction.n_steps(),
            n_steps
        )));
    }
    let n = scenario.n_modes;
    let h = grid.h();
    let mut grad = vec![0.0; n];
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut t_term = 0.0;
    let mut t_run = 0.0;
    let mut t_ctl = 0.0;
    for p in 0..paths {
        let xp = &states.paths[p];
        let vp = &variations.paths[p];
        grad.fill(0.0);
        scenario.cost.terminal_grad(xp.terminal(), &mut grad);
        let mut term = 0.0;
        for k in 0..n {
            term += grad[k] * vp.terminal()[k];
        }
        let mut run = 0.0;
        let mut ctl = 0.0;
        for i in 0..n_steps {
            let t = grid.node(i);
            grad.fill(0.0);
            scenario.cost.running_grad_x(t, xp.state(i), &mut grad);
            let v = vp.state(i);
            let mut dot = 0.0;
            for k in 0..n {
                dot += grad[k] * v[k];
            }
            run += h * dot;
            let beta = adjoint.beta[p][i];
            let du = direction.values[i];
            ctl += h * (beta[0] * du[0] + beta[1] * du[1]);
        }
        let r = term + run + ctl;
        sum += r;
        sumsq += r * r;
        t_term += term;
        t_run += run;
        t_ctl += ctl;
    }
    let pf = paths as f64;
    let mean = sum / pf;
    let se = if paths > 1 {
        (((sumsq - sum * mean) / (pf - 1.0)).max(0.0) / pf).sqrt()
    } else {
        0.0
    };
    Ok(DualityResidual {
        value: mean,
        std_error: se,
        terminal: t_term / pf,
        running: t_run / pf,
        control: t_ctl / pf,
    })
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

/// Adjoint-based cost gradient per step:
/// `g_i = E[l_u(t_i, X_i, u_i)] - E[beta_i]`. Equal to `-H_u`; first-order
/// optimal controls satisfy `<g_i, v - u_i> >= 0` for admissible `v`.
pub fn gradient_adjoint(
    scenario: &Scenario,
    grid: &TimeGrid,
    states: &PathEnsemble,
    adjoint: &AdjointEnsemble,
    controls: &ControlProcess,
) -> Result<Vec<[f64; 2]>> {
    let n_steps = grid.n_steps;
    let paths = states.n_paths();
    if paths == 0 {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    if adjoint.n_paths() != paths || adjoint.n_steps != n_steps {
        return Err(Error::DimensionMismatch(
            "adjoint ensemble does not match the state ensemble".into(),
        ));
    }
    if controls.n_steps() != n_steps {
        return Err(Error::DimensionMismatch(format!(
            "control has {} steps, grid has {}",
            controls.n_steps(),
            n_steps
        )));
    }
    let mut g = Vec::with_capacity(n_steps);
    let inv = 1.0 / paths as f64;
    for i in 0..n_steps {
        let t = grid.node(i);
        let u = controls.values[i];
        let mut acc = [0.0f64; 2];
        for p in 0..paths {
            let lu = scenario.cost.running_grad_u(t, states.paths[p].state(i), u);
            let beta = adjoint.beta[p][i];
            acc[0] += lu[0] - beta[0];
            acc[1] += lu[1] - beta[1];
        }
        g.push([acc[0] * inv, acc[1] * inv]);
    }
    Ok(g)
}

/// Knobs for the finite-difference derivative probe.
#[derive(Debug, Clone)]
pub struct FdParams {
    /// Probe amplitudes, largest first (at least two for extrapolation).
    pub thetas: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
}

/// Central-difference directional derivatives of the cost.
#[derive(Debug, Clone)]
pub struct FdDerivative {
    pub thetas: Vec<f64>,
    /// Central difference per theta (common noise on both sides).
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Richardson extrapolation from the two smallest thetas.
    pub richardson: f64,
    /// Standard error at the smallest theta: differences below this are
    /// indistinguishable from Monte-Carlo noise.
    pub noise_floor: f64,
}

/// Estimates the directional derivative `dJ(u; direction)` by central
/// differences over a theta ladder, with common random numbers on every
/// evaluation and Richardson extrapolation across the last two rungs.
pub fn gradient_fd(
    scenario: &Scenario,
    grid: &TimeGrid,
    controls: &ControlProcess,
    direction: &ControlProcess,
    params: &FdParams,
) -> Result<FdDerivative> {
    if params.thetas.len() < 2 {
        return Err(Error::InvalidArgument(
            "theta ladder needs at least 2 amplitudes".into(),
        ));
    }
    let mut thetas = params.thetas.clone();
    thetas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if thetas.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidArgument("thetas must be positive".into()));
    }
    if direction.n_steps() != grid.n_steps || controls.n_steps() != grid.n_steps {
        return Err(Error::DimensionMismatch(
            "control and direction must live on the simulation grid".into(),
        ));
    }
    let sim = SimParams::new(params.n_paths, params.seed);
    let shifted = |theta: f64| -> ControlProcess {
        ControlProcess::from_fn(grid.n_steps, |i| {
            [
                controls.values[i][0] + theta * direction.values[i][0],
                controls.values[i][1] + theta * direction.values[i][1],
            ]
        })
    };
    let mut values = Vec::with_capacity(thetas.len());
    let mut std_errors = Vec::with_capacity(thetas.len());
    for &theta in &thetas {
        let up = shifted(theta);
        let dn = shifted(-theta);
        let ens_up = simulate_ensemble(scenario, grid, &up, &sim)?;
        let ens_dn = simulate_ensemble(scenario, grid, &dn, &sim)?;
        let mut s = 0.0;
        let mut s2 = 0.0;
        for p in 0..params.n_paths {
            let d = (path_cost(&scenario.cost, grid, &ens_up.paths[p], &up)
                - path_cost(&scenario.cost, grid, &ens_dn.paths[p], &dn))
                / (2.0 * theta);
            s += d;
            s2 += d * d;
        }
        let pf = params.n_paths as f64;
        let mean = s / pf;
        let se = if params.n_paths > 1 {
            (((s2 - s * mean) / (pf - 1.0)).max(0.0) / pf).sqrt()
        } else {
            0.0
        };
        values.push(mean);
        std_errors.push(se);
    }
    let m = thetas.len();
    let r = thetas[m - 2] / thetas[m - 1];
    let richardson = (r * r * values[m - 1] - values[m - 2]) / (r * r - 1.0);
    Ok(FdDerivative {
        thetas,
        noise_floor: std_errors[m - 1],
        values,
        std_errors,
        richardson,
    })
}

/// `sum_i h <g_i, v_i>`: the derivative the per-step gradient predicts
/// along a direction.
pub fn directional_from_gradient(grid: &TimeGrid, g: &[[f64; 2]], direction: &ControlProcess) -> f64 {
    let h = grid.h();
    let mut acc = 0.0;
    for i in 0..g.len() {
        acc += h * (g[i][0] * direction.values[i][0] + g[i][1] * direction.values[i][1]);
    }
    acc
}

// ---------------------------------------------------------------------------
// Projected-gradient optimizer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PgParams {
    pub rho: f64,
    pub max_iters: usize,
    /// Stop when the variational-inequality residual drops below
    /// `tol * (1 + |J|)`.
    pub tol: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub adjoint: AdjointParams,
}

#[derive(Debug, Clone, Copy)]
pub struct PgIterRecord {
    pub iter: usize,
    pub j: f64,
    pub j_se: f64,
    pub vi_residual: f64,
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct PgOutcome {
    pub controls: ControlProcess,
    pub j: f64,
    pub j_se: f64,
    pub history: Vec<PgIterRecord>,
    pub converged: bool,
    /// Set when five consecutive accepted steps increased the estimated
    /// cost: the gradient model no longer matches the landscape.
    pub aborted_divergent: bool,
    /// Set when step halving underflowed without an acceptable step.
    pub stalled: bool,
}

/// First-order optimality residual of the discrete problem:
/// `max over vertices v of sum_i h <-g_i, v - u_i>_+`.
pub fn vi_residual(
    grid: &TimeGrid,
    control_set: &ControlSet,
    u: &ControlProcess,
    g: &[[f64; 2]],
) -> f64 {
    let h = grid.h();
    let mut worst = 0.0f64;
    for v in control_set.vertices() {
        let mut acc = 0.0;
        for i in 0..g.len() {
            let inner = -(g[i][0] * (v[0] - u.values[i][0]) + g[i][1] * (v[1] - u.values[i][1]));
            if inner > 0.0 {
                acc += h * inner;
            }
        }
        worst = worst.max(acc);
    }
    worst
}

/// Projected gradient descent on the discrete control problem. The cost and
/// its adjoint gradient are estimated on a frozen seed, so every iterate
/// sees the same realization of the noise (common random numbers); the step
/// is halved whenever the trial cost exceeds the current one beyond twice
/// the combined standard error.
pub fn optimize_projected_gradient(
    scenario: &Scenario,
    grid: &TimeGrid,
    u0: &ControlProcess,
    params: &PgParams,
) -> Result<PgOutcome> {
    scenario.check_structure()?;
    if !scenario.control_set.is_convex() {
        return Err(Error::InvalidArgument(
            "projected gradient needs a convex admissible set".into(),
        ));
    }
    if u0.n_steps() != grid.n_steps {
        return Err(Error::DimensionMismatch(format!(
            "control has {} steps, grid has {}",
            u0.n_steps(),
            grid.n_steps
        )));
    }
    let sim = SimParams::new(params.n_paths, params.seed);
    let mut u = ControlProcess::from_fn(grid.n_steps, |i| {
        scenario.control_set.project(u0.values[i])
    });
    let evaluate = |u: &ControlProcess| -> Result<(PathEnsemble, f64, f64)> {
        let ens = simulate_ensemble(scenario, grid, u, &sim)?;
        let est = cost_evaluate(&scenario.cost, grid, &ens, u)?;
        Ok((ens, est.value, est.std_error))
    };
    let (mut ens, mut j, mut j_se) = evaluate(&u)?;
    let mut rho = params.rho;
    let mut history = Vec::new();
    let mut converged = false;
    let mut aborted_divergent = false;
    let mut stalled = false;
    let mut consecutive_increases = 0usize;
    for iter in 0..params.max_iters {
        let adj = solve_adjoint(scenario, grid, &ens, &u, &sim, &params.adjoint)?;
        let g = gradient_adjoint(scenario, grid, &ens, &adj, &u)?;
        let residual = vi_residual(grid, &scenario.control_set, &u, &g);
        history.push(PgIterRecord {
            iter,
            j,
            j_se,
            vi_residual: residual,
            rho,
        });
        if residual <= params.tol * (1.0 + j.abs()) {
            converged = true;
            break;
        }
        // step with halving on rejection
        loop {
            let trial = ControlProcess::from_fn(grid.n_steps, |i| {
                scenario.control_set.project([
                    u.values[i][0] - rho * g[i][0],
                    u.values[i][1] - rho * g[i][1],
                ])
            });
            let (ens_t, j_t, j_se_t) = evaluate(&trial)?;
            if j_t <= j + 2.0 * (j_se + j_se_t) {
                if j_t > j {
                    consecutive_increases += 1;
                } else {
                    consecutive_increases = 0;
                }
                u = trial;
                ens = ens_t;
                j = j_t;
                j_se = j_se_t;
                break;
            }
            rho *= 0.5;
            if rho < 1e-12 {
                stalled = true;
                break;
            }
        }
        if stalled {
            break;
        }
        if consecutive_increases >= 5 {
            aborted_divergent = true;
            break;
        }
    }
    Ok(PgOutcome {
        controls: u,
        j,
        j_se,
        history,
        converged,
        aborted_divergent,
        stalled,
    })
}

// ---------------------------------------------------------------------------
// Method of successive approximations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MsaParams {
    pub max_iters: usize,
    /// Probability of keeping the old value at a step whose argmax changed;
    /// the draws are seeded and deterministic.
    pub damping: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub adjoint: AdjointParams,
}

#[derive(Debug, Clone, Copy)]
pub struct MsaIterRecord {
    pub iter: usize,
    pub j: f64,
    pub j_se: f64,
    /// Steps whose control changed after damping.
    pub changes: usize,
    /// Largest mean-Hamiltonian improvement any candidate offered.
    pub max_gap: f64,
}

#[derive(Debug, Clone)]
pub struct MsaOutcome {
    pub controls: ControlProcess,
    pub j: f64,
    pub j_se: f64,
    pub history: Vec<MsaIterRecord>,
    pub converged: bool,
    /// Set when the iteration revisited an earlier control; the returned
    /// control is then the best-cost iterate seen, not the last one.
    pub cycled: bool,
    pub best_j: f64,
}

fn control_key(u: &ControlProcess) -> Vec<(u64, u64)> {
    u.values
        .iter()
        .map(|v| (v[0].to_bits(), v[1].to_bits()))
        .collect()
}

/// Hamiltonian-maximization iteration: each sweep solves the adjoint under
/// the current control and replaces every step's value by the probe that
/// maximizes the cross-path mean Hamiltonian, with seeded damping. Stops at
/// a fixed point (no candidate improves any step), on a detected cycle
/// (returning the best-cost iterate, flagged), or at the iteration cap.
pub fn optimize_msa(
    scenario: &Scenario,
    grid: &TimeGrid,
    u0: &ControlProcess,
    params: &MsaParams,
) -> Result<MsaOutcome> {
    scenario.check_structure()?;
    if u0.n_steps() != grid.n_steps {
        return Err(Error::DimensionMismatch(format!(
            "control has {} steps, grid has {}",
            u0.n_steps(),
            grid.n_steps
        )));
    }
    if !(0.0..1.0).contains(&params.damping) {
        return Err(Error::InvalidArgument(format!(
            "damping {} outside [0, 1)",
            params.damping
        )));
    }
    let probes = scenario.control_set.probe_points();
    let sim = SimParams::new(params.n_paths, params.seed);
    let mut u = ControlProcess::from_fn(grid.n_steps, |i| {
        scenario.control_set.project(u0.values[i])
    });
    let mut history = Vec::new();
    let mut seen: HashMap<Vec<(u64, u64)>, usize> = HashMap::new();
    seen.insert(control_key(&u), 0);
    let mut best_j = f64::INFINITY;
    let mut best_j_se = 0.0;
    let mut best_u = u.clone();
    let mut converged = false;
    let mut cycled = false;
    let mut last_j = f64::NAN;
    let mut last_j_se = 0.0;
    for iter in 0..params.max_iters {
        let ens = simulate_ensemble(scenario, grid, &u, &sim)?;
        let est = cost_evaluate(&scenario.cost, grid, &ens, &u)?;
        last_j = est.value;
        last_j_se = est.std_error;
        if est.value < best_j {
            best_j = est.value;
            best_j_se = est.std_error;
            best_u = u.clone();
        }
        let adj = solve_adjoint(scenario, grid, &ens, &u, &sim, &params.adjoint)?;
        // candidate sweep on the mean Hamiltonian
        let mut candidates: Vec<Option<[f64; 2]>> = vec![None; grid.n_steps];
        let mut max_gap = 0.0f64;
        let paths = ens.n_paths() as f64;
        for i in 0..grid.n_steps {
            let t = grid.node(i);
            let cur = u.values[i];
            let mut best_gain = 0.0f64;
            let mut best_v: Option<[f64; 2]> = None;
            for &v in &probes {
                if v == cur {
                    continue;
                }
                let mut s = 0.0;
                for p in 0..ens.n_paths() {
                    let beta = adj.beta[p][i];
                    let x = ens.paths[p].state(i);
                    s += beta[0] * (v[0] - cur[0]) + beta[1] * (v[1] - cur[1])
                        - (scenario.cost.running_value(t, x, v)
                            - scenario.cost.running_value(t, x, cur));
                }
                let gain = s / paths;
                if gain > best_gain {
                    best_gain = gain;
                    best_v = Some(v);
                }
            }
            max_gap = max_gap.max(best_gain);
            candidates[i] = best_v;
        }
        let n_candidates = candidates.iter().flatten().count();
        if n_candidates == 0 {
            history.push(MsaIterRecord {
                iter,
                j: est.value,
                j_se: est.std_error,
                changes: 0,
                max_gap,
            });
            converged = true;
            break;
        }
        // damped update with seeded keep-draws
        let mut changes = 0usize;
        for i in 0..grid.n_steps {
            if let Some(v) = candidates[i] {
                let z = crate::noise::mix64(
                    params
                        .seed
                        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                        .wrapping_add((iter as u64) << 32)
                        .wrapping_add(i as u64),
                );
                let unif = (z >> 11) as f64 / (1u64 << 53) as f64;
                if unif >= params.damping {
                    u.values[i] = v;
                    changes += 1;
                }
            }
        }
        history.push(MsaIterRecord {
            iter,
            j: est.value,
            j_se: est.std_error,
            changes,
            max_gap,
        });
        if changes > 0 {
            let key = control_key(&u);
            if seen.contains_key(&key) {
                cycled = true;
                break;
            }
            seen.insert(key, iter + 1);
        }
    }
    let (controls, j, j_se) = if cycled {
        (best_u, best_j, best_j_se)
    } else {
        if last_j < best_j {
            best_j = last_j;
        }
        (u, last_j, last_j_se)
    };
    Ok(MsaOutcome {
        controls,
        j,
        j_se,
        history,
        converged,
        cycled,
        best_j,
    })
}
