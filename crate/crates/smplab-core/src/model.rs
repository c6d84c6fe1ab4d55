//! Scenario description: coefficient registries, costs, control sets, and
//! the hypothesis audits that decide whether the optimality theory's
//! assumptions actually hold for a given configuration.
//!
//! Everything the dynamics or cost can be is an enum registrant carrying its
//! own derivative and its declared regularity constants; audits then check
//! the declarations by sampling rather than trusting them. One registrant
//! (`Reaction::Quadratic`) deliberately violates global Lipschitz continuity
//! so the audit path has a true positive to catch.

use crate::error::Error;
use crate::forward::{ControlProcess, PathEnsemble, TimeGrid};
use crate::noise::mix64;
use crate::spectral::ModalVector;
use crate::Result;

/// Pointwise drift nonlinearity `f`; the dynamics apply it as a composition
/// operator on the state's grid samples.
#[derive(Debug, Clone, PartialEq)]
pub enum Reaction {
    Off,
    /// `f(y) = slope * y`
    Linear { slope: f64 },
    /// `f(y) = slope * y + offset`
    Affine { slope: f64, offset: f64 },
    /// `f(y) = gain * tanh(y)`: bounded, globally Lipschitz.
    TanhSaturated { gain: f64 },
    /// `f(y) = gain * y^3` clamped to an affine continuation outside
    /// `|y| <= radius` (C^1 at the seam), so the global Lipschitz constant is
    /// `3 * |gain| * radius^2`.
    TruncatedCubic { gain: f64, radius: f64 },
    /// `f(y) = gain * y^2`. Not globally Lipschitz; the declared constant is
    /// the `|y| <= 1` local slope, so the sampled audit fails by design.
    /// Kept in the registry to exercise hypothesis-violation reporting.
    Quadratic { gain: f64 },
}

impl Reaction {
    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            Reaction::Off => 0.0,
            Reaction::Linear { slope } => slope * y,
            Reaction::Affine { slope, offset } => slope * y + offset,
            Reaction::TanhSaturated { gain } => gain * y.tanh(),
            Reaction::TruncatedCubic { gain, radius } => {
                if y.abs() <= radius {
                    gain * y * y * y
                } else {
                    let r3 = radius * radius * radius;
                    gain * (3.0 * radius * radius * y - 2.0 * r3 * y.signum())
                }
            }
            Reaction::Quadratic { gain } => gain * y * y,
        }
    }

    pub fn deriv(&self, y: f64) -> f64 {
        match *self {
            Reaction::Off => 0.0,
            Reaction::Linear { slope } => slope,
            Reaction::Affine { slope, .. } => slope,
            Reaction::TanhSaturated { gain } => {
                let t = y.tanh();
                gain * (1.0 - t * t)
            }
            Reaction::TruncatedCubic { gain, radius } => {
                let c = y.abs().min(radius);
                3.0 * gain * c * c
            }
            Reaction::Quadratic { gain } => 2.0 * gain * y,
        }
    }

    pub fn is_off(&self) -> bool {
        matches!(self, Reaction::Off)
    }

    /// `Some((a, b))` when `f(y) = a y + b`, enabling the exact modal fast
    /// path in the simulator and the linear adjoint oracle.
    pub fn as_modal_affine(&self) -> Option<(f64, f64)> {
        match *self {
            Reaction::Off => Some((0.0, 0.0)),
            Reaction::Linear { slope } => Some((slope, 0.0)),
            Reaction::Affine { slope, offset } => Some((slope, offset)),
            _ => None,
        }
    }

    /// Declared global Lipschitz constant for the value.
    pub fn declared_lipschitz(&self) -> f64 {
        match *self {
            Reaction::Off => 0.0,
            Reaction::Linear { slope } => slope.abs(),
            Reaction::Affine { slope, .. } => slope.abs(),
            Reaction::TanhSaturated { gain } => gain.abs(),
            Reaction::TruncatedCubic { gain, radius } => 3.0 * gain.abs() * radius * radius,
            // local slope on |y| <= 1; wrong globally, on purpose
            Reaction::Quadratic { gain } => 2.0 * gain.abs(),
        }
    }

    /// Declared global Lipschitz constant for the derivative.
    pub fn declared_deriv_lipschitz(&self) -> f64 {
        match *self {
            Reaction::Off | Reaction::Linear { .. } | Reaction::Affine { .. } => 0.0,
            // sup |d/dy (1 - tanh^2 y)| = 4 / (3 sqrt(3))
            Reaction::TanhSaturated { gain } => gain.abs() * 0.769_800_358_919_501_3,
            Reaction::TruncatedCubic { gain, radius } => 6.0 * gain.abs() * radius,
            Reaction::Quadratic { gain } => 2.0 * gain.abs(),
        }
    }

    /// `Some(bound)` when the derivative is globally bounded.
    pub fn derivative_bound(&self) -> Option<f64> {
        match *self {
            Reaction::Off => Some(0.0),
            Reaction::Linear { slope } => Some(slope.abs()),
            Reaction::Affine { slope, .. } => Some(slope.abs()),
            Reaction::TanhSaturated { gain } => Some(gain.abs()),
            Reaction::TruncatedCubic { gain, radius } => Some(3.0 * gain.abs() * radius * radius),
            Reaction::Quadratic { .. } => None,
        }
    }

    fn params_finite(&self) -> bool {
        match *self {
            Reaction::Off => true,
            Reaction::Linear { slope } => slope.is_finite(),
            Reaction::Affine { slope, offset } => slope.is_finite() && offset.is_finite(),
            Reaction::TanhSaturated { gain } => gain.is_finite(),
            Reaction::TruncatedCubic { gain, radius } => {
                gain.is_finite() && radius.is_finite() && radius > 0.0
            }
            Reaction::Quadratic { gain } => gain.is_finite(),
        }
    }
}

/// Pointwise diffusion gain `g`; the state's distributed noise enters as
/// `g(state) * dW` with `dW` white over the retained modes.
#[derive(Debug, Clone, PartialEq)]
pub enum Gain {
    Off,
    /// Additive noise: `g(y) = level`.
    Constant { level: f64 },
    /// `g(y) = slope * y`
    Linear { slope: f64 },
    /// `g(y) = gain * tanh(y)`
    TanhSaturated { gain: f64 },
}

impl Gain {
    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            Gain::Off => 0.0,
            Gain::Constant { level } => level,
            Gain::Linear { slope } => slope * y,
            Gain::TanhSaturated { gain } => gain * y.tanh(),
        }
    }

    pub fn deriv(&self, y: f64) -> f64 {
        match *self {
            Gain::Off | Gain::Constant { .. } => 0.0,
            Gain::Linear { slope } => slope,
            Gain::TanhSaturated { gain } => {
                let t = y.tanh();
                gain * (1.0 - t * t)
            }
        }
    }

    pub fn is_off(&self) -> bool {
        matches!(self, Gain::Off)
    }

    /// True when `g' == 0` everywhere (no linearization term in first
    /// variations or adjoint drivers).
    pub fn has_zero_deriv(&self) -> bool {
        matches!(self, Gain::Off | Gain::Constant { .. })
    }

    pub fn declared_lipschitz(&self) -> f64 {
        match *self {
            Gain::Off | Gain::Constant { .. } => 0.0,
            Gain::Linear { slope } => slope.abs(),
            Gain::TanhSaturated { gain } => gain.abs(),
        }
    }

    pub fn derivative_bound(&self) -> Option<f64> {
        match *self {
            Gain::Off | Gain::Constant { .. } => Some(0.0),
            Gain::Linear { slope } => Some(slope.abs()),
            Gain::TanhSaturated { gain } => Some(gain.abs()),
        }
    }

    fn params_finite(&self) -> bool {
        match *self {
            Gain::Off => true,
            Gain::Constant { level } => level.is_finite(),
            Gain::Linear { slope } => slope.is_finite(),
            Gain::TanhSaturated { gain } => gain.is_finite(),
        }
    }
}

/// One additive term of the running cost rate `l(t, x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub enum RunningCost {
    /// `weight * |P(x - target)|^2` where `P` projects onto the first
    /// `mode_cutoff` modes (all modes when `None`).
    QuadraticTracking {
        weight: f64,
        target: ModalVector,
        mode_cutoff: Option<usize>,
    },
    /// `<coeffs, x>`
    LinearState { coeffs: ModalVector },
    /// `weight * |u|^2`
    ControlEnergy { weight: f64 },
    /// `<coeffs, u>`
    ControlLinear { coeffs: [f64; 2] },
}

/// One additive term of the terminal cost `h(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalCost {
    /// `weight * |x - target|^2`
    QuadraticTracking { weight: f64, target: ModalVector },
    /// `<coeffs, x>`
    LinearState { coeffs: ModalVector },
}

/// Cost functional: sum of running terms integrated over time plus a sum of
/// terminal terms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CostSpec {
    pub running: Vec<RunningCost>,
    pub terminal: Vec<TerminalCost>,
}

impl CostSpec {
    /// Running rate at one node. `_t` is threaded for signature stability;
    /// no registrant is time-dependent today.
    pub fn running_value(&self, _t: f64, x: &[f64], u: [f64; 2]) -> f64 {
        let mut acc = 0.0;
        for term in &self.running {
            acc += match term {
                RunningCost::QuadraticTracking {
                    weight,
                    target,
                    mode_cutoff,
                } => {
                    let cut = mode_cutoff.unwrap_or(x.len()).min(x.len());
                    let mut s = 0.0;
                    for k in 0..cut {
                        let d = x[k] - target.coeffs[k];
                        s += d * d;
                    }
                    weight * s
                }
                RunningCost::LinearState { coeffs } => {
                    x.iter().zip(&coeffs.coeffs).map(|(a, b)| a * b).sum()
                }
                RunningCost::ControlEnergy { weight } => weight * (u[0] * u[0] + u[1] * u[1]),
                RunningCost::ControlLinear { coeffs } => coeffs[0] * u[0] + coeffs[1] * u[1],
            };
        }
        acc
    }

    /// Adds the state gradient of the running rate into `out`.
    pub fn running_grad_x(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        for term in &self.running {
            match term {
                RunningCost::QuadraticTracking {
                    weight,
                    target,
                    mode_cutoff,
                } => {
                    let cut = mode_cutoff.unwrap_or(x.len()).min(x.len());
                    for k in 0..cut {
                        out[k] += 2.0 * weight * (x[k] - target.coeffs[k]);
                    }
                }
                RunningCost::LinearState { coeffs } => {
                    for (o, c) in out.iter_mut().zip(&coeffs.coeffs) {
                        *o += c;
                    }
                }
                RunningCost::ControlEnergy { .. } | RunningCost::ControlLinear { .. } => {}
            }
        }
    }

    /// Control gradient of the running rate.
    pub fn running_grad_u(&self, _t: f64, _x: &[f64], u: [f64; 2]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for term in &self.running {
            match term {
                RunningCost::ControlEnergy { weight } => {
                    g[0] += 2.0 * weight * u[0];
                    g[1] += 2.0 * weight * u[1];
                }
                RunningCost::ControlLinear { coeffs } => {
                    g[0] += coeffs[0];
                    g[1] += coeffs[1];
                }
                _ => {}
            }
        }
        g
    }

    pub fn terminal_value(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for term in &self.terminal {
            acc += match term {
                TerminalCost::QuadraticTracking { weight, target } => {
                    let mut s = 0.0;
                    for (a, b) in x.iter().zip(&target.coeffs) {
                        let d = a - b;
                        s += d * d;
                    }
                    weight * s
                }
                TerminalCost::LinearState { coeffs } => {
                    x.iter().zip(&coeffs.coeffs).map(|(a, b)| a * b).sum()
                }
            };
        }
        acc
    }

    /// Adds the terminal-cost gradient into `out`.
    pub fn terminal_grad(&self, x: &[f64], out: &mut [f64]) {
        for term in &self.terminal {
            match term {
                TerminalCost::QuadraticTracking { weight, target } => {
                    for (k, o) in out.iter_mut().enumerate() {
                        *o += 2.0 * weight * (x[k] - target.coeffs[k]);
                    }
                }
                TerminalCost::LinearState { coeffs } => {
                    for (o, c) in out.iter_mut().zip(&coeffs.coeffs) {
                        *o += c;
                    }
                }
            }
        }
    }

    pub fn has_terminal(&self) -> bool {
        !self.terminal.is_empty()
    }

    /// True when every u-dependent term is convex in u.
    pub fn convex_in_control(&self) -> bool {
        self.running.iter().all(|t| match t {
            RunningCost::ControlEnergy { weight } => *weight >= 0.0,
            _ => true,
        })
    }

    /// `Some((a, c))` when `h_x(x) = a * x + c` with scalar `a` (diagonal in
    /// every basis) and constant modal vector `c`; the linear adjoint oracle
    /// requires this shape.
    pub fn terminal_grad_affine(&self, n_modes: usize) -> Option<(f64, Vec<f64>)> {
        let mut a = 0.0;
        let mut c = vec![0.0; n_modes];
        for term in &self.terminal {
            match term {
                TerminalCost::QuadraticTracking { weight, target } => {
                    a += 2.0 * weight;
                    for (ck, tk) in c.iter_mut().zip(&target.coeffs) {
                        *ck -= 2.0 * weight * tk;
                    }
                }
                TerminalCost::LinearState { coeffs } => {
                    for (ck, lk) in c.iter_mut().zip(&coeffs.coeffs) {
                        *ck += lk;
                    }
                }
            }
        }
        Some((a, c))
    }

    /// `Some((a_per_mode, c))` when `l_x(x) = diag(a) x + c`; diagonal shape
    /// the linear adjoint oracle requires. `a` is per-mode because tracking
    /// terms may cut off at a mode index.
    pub fn running_grad_x_affine(&self, n_modes: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut a = vec![0.0; n_modes];
        let mut c = vec![0.0; n_modes];
        for term in &self.running {
            match term {
                RunningCost::QuadraticTracking {
                    weight,
                    target,
                    mode_cutoff,
                } => {
                    let cut = mode_cutoff.unwrap_or(n_modes).min(n_modes);
                    for k in 0..cut {
                        a[k] += 2.0 * weight;
                        c[k] -= 2.0 * weight * target.coeffs[k];
                    }
                }
                RunningCost::LinearState { coeffs } => {
                    for (ck, lk) in c.iter_mut().zip(&coeffs.coeffs) {
                        *ck += lk;
                    }
                }
                RunningCost::ControlEnergy { .. } | RunningCost::ControlLinear { .. } => {}
            }
        }
        Some((a, c))
    }
}

/// Admissible control values, per side of the interval.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSet {
    /// Product of closed intervals `[lo[i], hi[i]]`.
    Box { lo: [f64; 2], hi: [f64; 2] },
    /// Explicit finite list of admissible pairs.
    FiniteSet { values: Vec<[f64; 2]> },
}

impl ControlSet {
    /// Componentwise projection onto the set (boxes only; finite sets pick
    /// the nearest member, Euclidean).
    pub fn project(&self, u: [f64; 2]) -> [f64; 2] {
        match self {
            ControlSet::Box { lo, hi } => [u[0].clamp(lo[0], hi[0]), u[1].clamp(lo[1], hi[1])],
            ControlSet::FiniteSet { values } => {
                let mut best = values[0];
                let mut best_d = f64::INFINITY;
                for v in values {
                    let d = (v[0] - u[0]).powi(2) + (v[1] - u[1]).powi(2);
                    if d < best_d {
                        best_d = d;
                        best = *v;
                    }
                }
                best
            }
        }
    }

    pub fn contains(&self, u: [f64; 2], tol: f64) -> bool {
        match self {
            ControlSet::Box { lo, hi } => {
                (lo[0] - tol..=hi[0] + tol).contains(&u[0])
                    && (lo[1] - tol..=hi[1] + tol).contains(&u[1])
            }
            ControlSet::FiniteSet { values } => values
                .iter()
                .any(|v| (v[0] - u[0]).abs() <= tol && (v[1] - u[1]).abs() <= tol),
        }
    }

    /// Extreme points: where a linear functional attains its maximum.
    pub fn vertices(&self) -> Vec<[f64; 2]> {
        match self {
            ControlSet::Box { lo, hi } => vec![
                [lo[0], lo[1]],
                [lo[0], hi[1]],
                [hi[0], lo[1]],
                [hi[0], hi[1]],
            ],
            ControlSet::FiniteSet { values } => values.clone(),
        }
    }

    /// Candidate values for exhaustive Hamiltonian maximization: the full
    /// list for finite sets, the 3x3 corner/edge-midpoint/center grid for
    /// boxes.
    pub fn probe_points(&self) -> Vec<[f64; 2]> {
        match self {
            ControlSet::Box { lo, hi } => {
                let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
                let xs = [lo[0], mid[0], hi[0]];
                let ys = [lo[1], mid[1], hi[1]];
                let mut pts = Vec::with_capacity(9);
                for &a in &xs {
                    for &b in &ys {
                        pts.push([a, b]);
                    }
                }
                pts
            }
            ControlSet::FiniteSet { values } => values.clone(),
        }
    }

    pub fn is_convex(&self) -> bool {
        matches!(self, ControlSet::Box { .. })
    }
}

/// Complete problem description, discretization excluded: solver resolution
/// (steps, paths, seeds) belongs to the experiment, not the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub n_modes: usize,
    pub grid_size: usize,
    pub lambda: f64,
    pub horizon: f64,
    pub initial_state: ModalVector,
    pub reaction: Reaction,
    pub gain: Gain,
    /// Per-side boundary-noise intensities (left, right); 0 disables a side.
    pub boundary_noise: [f64; 2],
    pub control_set: ControlSet,
    pub cost: CostSpec,
}

impl Scenario {
    /// Structural integrity: shapes, signs, finiteness. Distinct from the
    /// sampled hypothesis audits in [`validate_scenario`], which assume a
    /// structurally sound scenario.
    pub fn check_structure(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        if self.n_modes < 2 {
            problems.push(format!("n_modes = {}, need >= 2", self.n_modes));
        }
        if self.grid_size < 2 * self.n_modes {
            problems.push(format!(
                "grid_size = {} < 2 * n_modes = {}",
                self.grid_size,
                2 * self.n_modes
            ));
        }
        if !(self.lambda > 0.0) {
            problems.push(format!("lambda = {}, need > 0", self.lambda));
        }
        if !(self.horizon > 0.0) {
            problems.push(format!("horizon = {}, need > 0", self.horizon));
        }
        if self.initial_state.len() != self.n_modes {
            problems.push(format!(
                "initial_state has {} coefficients, need n_modes = {}",
                self.initial_state.len(),
                self.n_modes
            ));
        }
        for (i, v) in self.boundary_noise.iter().enumerate() {
            if !(v.is_finite() && *v >= 0.0) {
                problems.push(format!("boundary_noise[{i}] = {v}, need finite and >= 0"));
            }
        }
        if !self.reaction.params_finite() {
            problems.push("reaction parameters must be finite".into());
        }
        if !self.gain.params_finite() {
            problems.push("gain parameters must be finite".into());
        }
        match &self.control_set {
            ControlSet::Box { lo, hi } => {
                for i in 0..2 {
                    if !(lo[i].is_finite() && hi[i].is_finite() && lo[i] <= hi[i]) {
                        problems.push(format!(
                            "control box side {i}: need finite lo <= hi, got [{}, {}]",
                            lo[i], hi[i]
                        ));
                    }
                }
            }
            ControlSet::FiniteSet { values } => {
                if values.is_empty() {
                    problems.push("finite control set is empty".into());
                }
                if values
                    .iter()
                    .any(|v| !(v[0].is_finite() && v[1].is_finite()))
                {
                    problems.push("finite control set contains non-finite values".into());
                }
            }
        }
        for (i, term) in self.cost.running.iter().enumerate() {
            match term {
                RunningCost::QuadraticTracking {
                    weight,
                    target,
                    mode_cutoff,
                } => {
                    if !weight.is_finite() {
                        problems.push(format!("running cost {i}: weight not finite"));
                    }
                    if target.len() != self.n_modes {
                        problems.push(format!(
                            "running cost {i}: target has {} coefficients, need {}",
                            target.len(),
                            self.n_modes
                        ));
                    }
                    if let Some(c) = mode_cutoff {
                        if *c > self.n_modes {
                            problems
                                .push(format!("running cost {i}: mode_cutoff {c} > n_modes"));
                        }
                    }
                }
                RunningCost::LinearState { coeffs } => {
                    if coeffs.len() != self.n_modes {
                        problems.push(format!(
                            "running cost {i}: coeffs has {} entries, need {}",
                            coeffs.len(),
                            self.n_modes
                        ));
                    }
                }
                RunningCost::ControlEnergy { weight } => {
                    if !weight.is_finite() {
                        problems.push(format!("running cost {i}: weight not finite"));
                    }
                }
                RunningCost::ControlLinear { coeffs } => {
                    if !(coeffs[0].is_finite() && coeffs[1].is_finite()) {
                        problems.push(format!("running cost {i}: coeffs not finite"));
                    }
                }
            }
        }
        for (i, term) in self.cost.terminal.iter().enumerate() {
            match term {
                TerminalCost::QuadraticTracking { weight, target } => {
                    if !weight.is_finite() {
                        problems.push(format!("terminal cost {i}: weight not finite"));
                    }
                    if target.len() != self.n_modes {
                        problems.push(format!(
                            "terminal cost {i}: target has {} coefficients, need {}",
                            target.len(),
                            self.n_modes
                        ));
                    }
                }
                TerminalCost::LinearState { coeffs } => {
                    if coeffs.len() != self.n_modes {
                        problems.push(format!(
                            "terminal cost {i}: coeffs has {} entries, need {}",
                            coeffs.len(),
                            self.n_modes
                        ));
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidScenario(problems.join("; ")))
        }
    }

    /// The same scenario truncated (or zero-padded) to a different mode
    /// count, for resolution-refinement comparisons. Every modal vector in
    /// the scenario is resized; the physical grid is kept when it is still
    /// fine enough and widened otherwise.
    pub fn with_n_modes(&self, n_modes: usize) -> Scenario {
        let resize = |v: &ModalVector| {
            let mut c = v.coeffs.clone();
            c.resize(n_modes, 0.0);
            ModalVector::from_coeffs(c)
        };
        let mut s = self.clone();
        s.n_modes = n_modes;
        s.grid_size = s.grid_size.max(2 * n_modes);
        s.initial_state = resize(&s.initial_state);
        for term in &mut s.cost.running {
            match term {
                RunningCost::QuadraticTracking { target, .. } => *target = resize(target),
                RunningCost::LinearState { coeffs } => *coeffs = resize(coeffs),
                RunningCost::ControlEnergy { .. } | RunningCost::ControlLinear { .. } => {}
            }
        }
        for term in &mut s.cost.terminal {
            match term {
                TerminalCost::QuadraticTracking { target, .. } => *target = resize(target),
                TerminalCost::LinearState { coeffs } => *coeffs = resize(coeffs),
            }
        }
        s
    }

    pub fn basis(&self) -> Result<crate::spectral::SpectralBasis> {
        crate::spectral::SpectralBasis::new(self.n_modes, self.lambda, self.grid_size)
    }

    pub fn has_boundary_noise(&self) -> bool {
        self.boundary_noise[0] > 0.0 || self.boundary_noise[1] > 0.0
    }

    /// True when every noise source is off and the dynamics are
    /// deterministic given the control.
    pub fn is_deterministic(&self) -> bool {
        !self.has_boundary_noise() && self.gain.is_off()
    }
}

/// Outcome of one hypothesis audit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone)]
pub struct HypothesisCheck {
    /// Stable identifier, named by what is being checked.
    pub name: &'static str,
    pub status: CheckStatus,
    /// Required for the simulation/adjoint machinery to be trustworthy;
    /// informational checks (convexity) gate only specific experiments.
    pub required: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<HypothesisCheck>,
}

impl ValidationReport {
    pub fn all_required_pass(&self) -> bool {
        self.checks
            .iter()
            .all(|c| !c.required || c.status != CheckStatus::Fail)
    }

    pub fn failed(&self) -> Vec<&HypothesisCheck> {
        self.checks
            .iter()
            .filter(|c| c.status == CheckStatus::Fail)
            .collect()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            let status = match c.status {
                CheckStatus::Pass => "PASS",
                CheckStatus::Fail => "FAIL",
                CheckStatus::Skipped => "SKIP",
            };
            let req = if c.required { "required" } else { "info" };
            writeln!(f, "{status:4} [{req:8}] {:32} {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

/// Number of scalar sample pairs per Lipschitz audit.
const AUDIT_PAIRS: usize = 100_000;
/// Audit sampling range for pointwise coefficients.
const AUDIT_RANGE: f64 = 8.0;
/// Multiplicative slack on declared constants (floating-point headroom).
const AUDIT_SLACK: f64 = 1.0 + 1e-9;

fn audit_uniform(seed: u64, i: u64) -> f64 {
    let bits = mix64(seed ^ mix64(i));
    ((bits >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

fn audit_point(seed: u64, i: u64) -> f64 {
    (2.0 * audit_uniform(seed, i) - 1.0) * AUDIT_RANGE
}

/// Sampled Lipschitz audit of a scalar map against a declared constant.
/// Returns the worst ratio and a witness pair when the declaration fails.
fn lipschitz_audit(
    f: impl Fn(f64) -> f64,
    declared: f64,
    seed: u64,
) -> (bool, f64, Option<(f64, f64)>) {
    let mut worst = 0.0;
    let mut witness = None;
    for i in 0..AUDIT_PAIRS as u64 {
        let a = audit_point(seed, 2 * i);
        let b = audit_point(seed, 2 * i + 1);
        if (a - b).abs() < 1e-12 {
            continue;
        }
        let ratio = (f(a) - f(b)).abs() / (a - b).abs();
        if ratio > worst {
            worst = ratio;
            if ratio > declared * AUDIT_SLACK + 1e-15 {
                witness = Some((a, b));
            }
        }
    }
    (worst <= declared * AUDIT_SLACK + 1e-15, worst, witness)
}

fn sup_audit(f: impl Fn(f64) -> f64, declared: f64, seed: u64) -> (bool, f64, Option<f64>) {
    let mut worst = 0.0;
    let mut witness = None;
    for i in 0..AUDIT_PAIRS as u64 {
        let a = audit_point(seed, i);
        let v = f(a).abs();
        if v > worst {
            worst = v;
            if v > declared * AUDIT_SLACK + 1e-15 {
                witness = Some(a);
            }
        }
    }
    (worst <= declared * AUDIT_SLACK + 1e-15, worst, witness)
}

fn push_lipschitz_check(
    checks: &mut Vec<HypothesisCheck>,
    name: &'static str,
    required: bool,
    f: impl Fn(f64) -> f64,
    declared: f64,
    seed: u64,
) {
    let (ok, worst, witness) = lipschitz_audit(f, declared, seed);
    let detail = match witness {
        Some((a, b)) => format!(
            "sampled ratio {worst:.6} exceeds declared {declared:.6}; witness pair ({a:.6}, {b:.6})"
        ),
        None => format!("sampled ratio {worst:.6} <= declared {declared:.6} ({AUDIT_PAIRS} pairs)"),
    };
    checks.push(HypothesisCheck {
        name,
        status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        required,
        detail,
    });
}

/// Runs every hypothesis audit that applies to the scenario.
///
/// Structural problems are hard errors; regularity hypotheses are sampled
/// and reported check by check. Pointwise maps are audited on scalar pairs
/// in `[-8, 8]` (composition operators inherit the same constants), cost
/// gradients are cross-checked against central differences on random modal
/// vectors inside the unit ball scaled by 4.
pub fn validate_scenario(scenario: &Scenario) -> Result<ValidationReport> {
    scenario.check_structure()?;
    let seed = 0x5EED_0A0D_1701u64;
    let mut checks: Vec<HypothesisCheck> = Vec::new();

    // Dissipativity of the principal part needs no sampling: eigenvalues are
    // nonpositive by construction. Record it so reports are self-contained.
    checks.push(HypothesisCheck {
        name: "semigroup-contraction",
        status: CheckStatus::Pass,
        required: true,
        detail: "eigenvalues mu_k = -(k pi)^2 <= 0 by construction".into(),
    });

    push_lipschitz_check(
        &mut checks,
        "drift-lipschitz",
        true,
        |y| scenario.reaction.eval(y),
        scenario.reaction.declared_lipschitz(),
        seed ^ 1,
    );
    push_lipschitz_check(
        &mut checks,
        "drift-derivative-lipschitz",
        true,
        |y| scenario.reaction.deriv(y),
        scenario.reaction.declared_deriv_lipschitz(),
        seed ^ 2,
    );
    push_lipschitz_check(
        &mut checks,
        "gain-lipschitz",
        true,
        |y| scenario.gain.eval(y),
        scenario.gain.declared_lipschitz(),
        seed ^ 3,
    );

    match scenario.reaction.derivative_bound() {
        Some(bound) => {
            let (ok, worst, witness) = sup_audit(|y| scenario.reaction.deriv(y), bound, seed ^ 4);
            checks.push(HypothesisCheck {
                name: "drift-derivative-bounded",
                status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
                required: false,
                detail: match witness {
                    Some(w) => format!("sampled |f'| = {worst:.6} exceeds bound {bound:.6} at y = {w:.6}"),
                    None => format!("sampled sup |f'| = {worst:.6} <= {bound:.6}"),
                },
            });
        }
        None => checks.push(HypothesisCheck {
            name: "drift-derivative-bounded",
            status: CheckStatus::Fail,
            required: false,
            detail: "registrant declares an unbounded derivative".into(),
        }),
    }

    // Boundary influence: modal coefficients must not grow with k (their
    // uniform boundedness is what the smoothing analysis consumes).
    {
        let basis = scenario.basis()?;
        let mut worst: f64 = 0.0;
        for side in crate::spectral::Side::BOTH {
            let map = basis.neumann_map(side);
            for b in &map.b_coeffs {
                worst = worst.max(b.abs());
            }
        }
        let ok = worst <= std::f64::consts::SQRT_2 * AUDIT_SLACK;
        checks.push(HypothesisCheck {
            name: "boundary-map-bounded",
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            required: true,
            detail: format!("max_k |b_k| = {worst:.12} (expected sqrt(2))"),
        });
    }

    // Cost gradient cross-checks: central differences on random modal points.
    {
        let n = scenario.n_modes;
        let eps = 1e-5;
        let trials = 200;
        let mut worst = 0.0f64;
        for trial in 0..trials {
            let x: Vec<f64> = (0..n)
                .map(|k| 4.0 * (2.0 * audit_uniform(seed ^ 5, (trial * n + k) as u64) - 1.0))
                .collect();
            let d: Vec<f64> = (0..n)
                .map(|k| 2.0 * audit_uniform(seed ^ 6, (trial * n + k) as u64) - 1.0)
                .collect();
            let u = [
                audit_uniform(seed ^ 7, trial as u64) - 0.5,
                audit_uniform(seed ^ 8, trial as u64) - 0.5,
            ];
            let xp: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + eps * b).collect();
            let xm: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a - eps * b).collect();
            let fd = (scenario.cost.running_value(0.0, &xp, u)
                - scenario.cost.running_value(0.0, &xm, u))
                / (2.0 * eps);
            let mut grad = vec![0.0; n];
            scenario.cost.running_grad_x(0.0, &x, &mut grad);
            let anal: f64 = grad.iter().zip(&d).map(|(a, b)| a * b).sum();
            worst = worst.max((fd - anal).abs() / (1.0 + anal.abs()));

            let fd_t = (scenario.cost.terminal_value(&xp) - scenario.cost.terminal_value(&xm))
                / (2.0 * eps);
            let mut tgrad = vec![0.0; n];
            scenario.cost.terminal_grad(&x, &mut tgrad);
            let anal_t: f64 = tgrad.iter().zip(&d).map(|(a, b)| a * b).sum();
            worst = worst.max((fd_t - anal_t).abs() / (1.0 + anal_t.abs()));
        }
        let ok = worst < 1e-6;
        checks.push(HypothesisCheck {
            name: "cost-gradient-consistent",
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            required: true,
            detail: format!("max relative gradient defect {worst:.3e} over {trials} random points"),
        });
    }

    // Convexity in the control: informational, gates gradient experiments.
    {
        let convex_set = scenario.control_set.is_convex();
        let convex_cost = scenario.cost.convex_in_control();
        let status = if convex_set && convex_cost {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        checks.push(HypothesisCheck {
            name: "control-problem-convex",
            status,
            required: false,
            detail: format!(
                "control set convex: {convex_set}; cost convex in u: {convex_cost} \
                 (gradient-based experiments need both; maximization-based do not)"
            ),
        });
    }

    Ok(ValidationReport { checks })
}

/// Monte-Carlo cost estimate over a simulated ensemble.
#[derive(Debug, Clone, Copy)]
pub struct CostEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

/// Cost of an ensemble under its control: left-endpoint rule in time for the
/// running term, terminal term at the final node, averaged over paths.
/// Realized cost of a single path: left-endpoint quadrature of the running
/// rate plus the terminal value.
pub fn path_cost(
    cost: &CostSpec,
    grid: &TimeGrid,
    path: &crate::forward::StatePath,
    controls: &ControlProcess,
) -> f64 {
    let h = grid.h();
    let mut j = 0.0;
    for i in 0..grid.n_steps {
        j += h * cost.running_value(grid.node(i), path.state(i), controls.values[i]);
    }
    j + cost.terminal_value(path.state(grid.n_steps))
}

pub fn cost_evaluate(
    cost: &CostSpec,
    grid: &TimeGrid,
    ensemble: &PathEnsemble,
    controls: &ControlProcess,
) -> Result<CostEstimate> {
    if controls.values.len() != grid.n_steps {
        return Err(Error::DimensionMismatch(format!(
            "control has {} steps, grid has {}",
            controls.values.len(),
            grid.n_steps
        )));
    }
    let n_paths = ensemble.paths.len();
    if n_paths == 0 {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for path in &ensemble.paths {
        let j = path_cost(cost, grid, path, controls);
        sum += j;
        sumsq += j * j;
    }
    let mean = sum / n_paths as f64;
    let std_error = if n_paths > 1 {
        let var = (sumsq - sum * sum / n_paths as f64) / (n_paths as f64 - 1.0);
        (var.max(0.0) / n_paths as f64).sqrt()
    } else {
        0.0
    };
    Ok(CostEstimate {
        value: mean,
        std_error,
        n_paths,
    })
}

/// Cost differentials along one path: state gradient of the running rate per
/// node, control gradient per node, terminal gradient at the last node.
#[derive(Debug, Clone)]
pub struct CostFields {
    /// `l_x` at nodes `0..n_steps`, flattened `(step, mode)`.
    pub l_x: Vec<f64>,
    /// `l_u` at nodes `0..n_steps`.
    pub l_u: Vec<[f64; 2]>,
    /// `h_x` at the terminal node.
    pub h_x: Vec<f64>,
    pub n_modes: usize,
}

pub fn cost_gradient_fields(
    cost: &CostSpec,
    grid: &TimeGrid,
    path: &crate::forward::StatePath,
    controls: &ControlProcess,
) -> Result<CostFields> {
    if controls.values.len() != grid.n_steps {
        return Err(Error::DimensionMismatch(format!(
            "control has {} steps, grid has {}",
            controls.values.len(),
            grid.n_steps
        )));
    }
    let n = path.n_modes;
    let mut l_x = vec![0.0; grid.n_steps * n];
    let mut l_u = Vec::with_capacity(grid.n_steps);
    for i in 0..grid.n_steps {
        let x = path.state(i);
        cost.running_grad_x(grid.node(i), x, &mut l_x[i * n..(i + 1) * n]);
        l_u.push(cost.running_grad_u(grid.node(i), x, controls.values[i]));
    }
    let mut h_x = vec![0.0; n];
    cost.terminal_grad(path.state(grid.n_steps), &mut h_x);
    Ok(CostFields {
        l_x,
        l_u,
        h_x,
        n_modes: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_scenario() -> Scenario {
        Scenario {
            n_modes: 8,
            grid_size: 16,
            lambda: 1.0,
            horizon: 1.0,
            initial_state: ModalVector::zeros(8),
            reaction: Reaction::Linear { slope: 0.5 },
            gain: Gain::Off,
            boundary_noise: [1.0, 0.0],
            control_set: ControlSet::Box {
                lo: [-1.0, -1.0],
                hi: [1.0, 1.0],
            },
            cost: CostSpec {
                running: vec![
                    RunningCost::QuadraticTracking {
                        weight: 1.0,
                        target: ModalVector::zeros(8),
                        mode_cutoff: None,
                    },
                    RunningCost::ControlEnergy { weight: 0.5 },
                ],
                terminal: vec![TerminalCost::LinearState {
                    coeffs: ModalVector::from_coeffs(vec![1.0; 8]),
                }],
            },
        }
    }

    #[test]
    fn registry_derivatives_match_finite_differences() {
        let entries = vec![
            Reaction::Linear { slope: 0.7 },
            Reaction::Affine {
                slope: -0.3,
                offset: 0.2,
            },
            Reaction::TanhSaturated { gain: 1.5 },
            Reaction::TruncatedCubic {
                gain: -0.4,
                radius: 2.0,
            },
            Reaction::Quadratic { gain: 0.9 },
        ];
        for f in entries {
            for i in 0..400 {
                let y = -4.0 + i as f64 * 0.02;
                let eps = 1e-6;
                let fd = (f.eval(y + eps) - f.eval(y - eps)) / (2.0 * eps);
                assert!(
                    (fd - f.deriv(y)).abs() < 1e-6 * (1.0 + f.deriv(y).abs()),
                    "{f:?} at y = {y}: fd = {fd}, deriv = {}",
                    f.deriv(y)
                );
            }
        }
    }

    #[test]
    fn truncated_cubic_is_c1_at_seam() {
        let f = Reaction::TruncatedCubic {
            gain: 1.0,
            radius: 1.5,
        };
        let eps = 1e-9;
        assert!((f.eval(1.5 - eps) - f.eval(1.5 + eps)).abs() < 1e-7);
        assert!((f.deriv(1.5 - eps) - f.deriv(1.5 + eps)).abs() < 1e-7);
        assert!((f.eval(-1.5 - eps) - f.eval(-1.5 + eps)).abs() < 1e-7);
    }

    #[test]
    fn well_posed_scenario_passes_required_audits() {
        let report = validate_scenario(&small_scenario()).unwrap();
        assert!(report.all_required_pass(), "{report}");
        // convexity holds here too
        assert!(report.failed().is_empty(), "{report}");
    }

    #[test]
    fn quadratic_drift_fails_lipschitz_audit_with_witness() {
        let mut s = small_scenario();
        s.reaction = Reaction::Quadratic { gain: 1.0 };
        let report = validate_scenario(&s).unwrap();
        let failed = report.failed();
        assert!(failed.iter().any(|c| c.name == "drift-lipschitz"));
        let check = failed
            .iter()
            .find(|c| c.name == "drift-lipschitz")
            .unwrap();
        assert!(check.detail.contains("witness"), "{}", check.detail);
        assert!(!report.all_required_pass());
        // and the derivative-boundedness check also trips
        assert!(failed.iter().any(|c| c.name == "drift-derivative-bounded"));
    }

    #[test]
    fn finite_control_set_fails_only_convexity() {
        let mut s = small_scenario();
        s.control_set = ControlSet::FiniteSet {
            values: vec![[-1.0, 0.0], [0.0, 0.0], [1.0, 1.0]],
        };
        let report = validate_scenario(&s).unwrap();
        assert!(report.all_required_pass());
        let failed = report.failed();
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].name, "control-problem-convex");
    }

    #[test]
    fn structural_errors_are_hard_errors() {
        let mut s = small_scenario();
        s.grid_size = 9;
        assert!(validate_scenario(&s).is_err());

        let mut s = small_scenario();
        s.cost.terminal = vec![TerminalCost::LinearState {
            coeffs: ModalVector::zeros(3),
        }];
        assert!(validate_scenario(&s).is_err());

        let mut s = small_scenario();
        s.control_set = ControlSet::Box {
            lo: [1.0, 0.0],
            hi: [-1.0, 0.0],
        };
        assert!(validate_scenario(&s).is_err());
    }

    #[test]
    fn box_projection_clamps_and_is_idempotent() {
        let set = ControlSet::Box {
            lo: [-1.0, 0.0],
            hi: [1.0, 2.0],
        };
        let p = set.project([3.0, -5.0]);
        assert_eq!(p, [1.0, 0.0]);
        assert_eq!(set.project(p), p);
        assert!(set.contains(p, 0.0));
        assert_eq!(set.probe_points().len(), 9);
        assert_eq!(set.vertices().len(), 4);
    }

    #[test]
    fn finite_set_projection_picks_nearest() {
        let set = ControlSet::FiniteSet {
            values: vec![[-1.0, -1.0], [0.0, 0.0], [1.0, 1.0]],
        };
        assert_eq!(set.project([0.9, 0.7]), [1.0, 1.0]);
        assert_eq!(set.project([-0.4, 0.1]), [0.0, 0.0]);
    }

    #[test]
    fn cost_affine_extraction_matches_gradients() {
        let s = small_scenario();
        let (a, c) = s.cost.terminal_grad_affine(8).unwrap();
        let x: Vec<f64> = (0..8).map(|k| 0.3 * k as f64 - 1.0).collect();
        let mut grad = vec![0.0; 8];
        s.cost.terminal_grad(&x, &mut grad);
        for k in 0..8 {
            assert!((grad[k] - (a * x[k] + c[k])).abs() < 1e-14);
        }
        let (ar, cr) = s.cost.running_grad_x_affine(8).unwrap();
        let mut rgrad = vec![0.0; 8];
        s.cost.running_grad_x(0.0, &x, &mut rgrad);
        for k in 0..8 {
            assert!((rgrad[k] - (ar[k] * x[k] + cr[k])).abs() < 1e-14);
        }
    }
}
