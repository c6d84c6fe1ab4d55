//! Forward simulation of the controlled state equation in modal coordinates.
//!
//! The state lives in the spectral basis, where the linear part is diagonal
//! and one step of the exponential integrator reads, per mode `k`,
//!
//! ```text
//! x'_k = e^{mu_k h} x_k                                  (semigroup)
//!      + phi_k(h) f(x)_k                                 (drift)
//!      + phi_k(h) sum_side b_k[side] u[side]             (boundary control)
//!      + sum_side c_k[side] dW[side]                     (boundary noise)
//!      + e^{mu_k h} [g(x) dW]_k                          (distributed noise)
//! ```
//!
//! with `phi_k(h) = (e^{mu_k h} - 1) / mu_k`. The boundary-noise coefficient
//! `c_k = intensity * b_k * sqrt(psi_k(h) / h)` with
//! `psi_k(h) = (e^{2 mu_k h} - 1) / (2 mu_k)` makes the per-mode variance of
//! the noise response exact at every node for the pure boundary-noise
//! problem, which keeps the scheme stable however stiff the retained modes
//! are.
//!
//! Nonlinear `f` and `g` act as composition operators through the grid
//! transforms; affine `f` and constant `g` take a modal-diagonal fast path
//! with no transforms at all. Increments come from the counter-based
//! [`NoiseBundle`](crate::noise::NoiseBundle), so a path is a pure function
//! of `(seed, path index)` and refining the grid refines the same noise.

use crate::error::Error;
use crate::model::{Gain, Reaction, Scenario};
use crate::noise::NoiseBundle;
use crate::par;
use crate::spectral::{phi_step, psi_step, ModalVector, Side, SpectralBasis};
use crate::Result;

/// Uniform grid on `[0, horizon]` with `n_steps` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub horizon: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon = {horizon}, need > 0"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps = 0".into()));
        }
        Ok(TimeGrid { horizon, n_steps })
    }

    pub fn h(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Node `i` for `i in 0..=n_steps`.
    pub fn node(&self, i: usize) -> f64 {
        self.horizon * i as f64 / self.n_steps as f64
    }
}

/// Piecewise-constant boundary control, one `[left, right]` pair per step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProcess {
    pub values: Vec<[f64; 2]>,
}

impl ControlProcess {
    pub fn constant(n_steps: usize, u: [f64; 2]) -> Self {
        ControlProcess {
            values: vec![u; n_steps],
        }
    }

    pub fn zeros(n_steps: usize) -> Self {
        Self::constant(n_steps, [0.0, 0.0])
    }

    pub fn from_fn(n_steps: usize, mut f: impl FnMut(usize) -> [f64; 2]) -> Self {
        ControlProcess {
            values: (0..n_steps).map(&mut f).collect(),
        }
    }

    pub fn n_steps(&self) -> usize {
        self.values.len()
    }
}

/// One trajectory: modal coefficients at every node, flattened `(node, mode)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    pub n_modes: usize,
    data: Vec<f64>,
}

impl StatePath {
    pub fn zeroed(n_modes: usize, n_steps: usize) -> Self {
        StatePath {
            n_modes,
            data: vec![0.0; (n_steps + 1) * n_modes],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.data.len() / self.n_modes
    }

    pub fn state(&self, node: usize) -> &[f64] {
        &self.data[node * self.n_modes..(node + 1) * self.n_modes]
    }

    pub fn state_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.data[node * self.n_modes..(node + 1) * self.n_modes]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.n_nodes() - 1)
    }
}

/// Ensemble of trajectories under a common control.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub paths: Vec<StatePath>,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    /// Cross-path mean of the modal state at one node.
    pub fn mean_state(&self, node: usize) -> Vec<f64> {
        let n = self.paths[0].n_modes;
        let mut mean = vec![0.0; n];
        for p in &self.paths {
            for (m, v) in mean.iter_mut().zip(p.state(node)) {
                *m += v;
            }
        }
        let inv = 1.0 / self.paths.len() as f64;
        for m in &mut mean {
            *m *= inv;
        }
        mean
    }
}

/// Monte-Carlo resolution: path count, seed, and the reference grid the
/// noise is pinned to (`base_steps` must be a multiple of the simulation
/// grid; `None` pins it to the simulation grid itself).
#[derive(Debug, Clone, Copy)]
pub struct SimParams {
    pub n_paths: usize,
    pub seed: u64,
    pub base_steps: Option<usize>,
}

impl SimParams {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        SimParams {
            n_paths,
            seed,
            base_steps: None,
        }
    }
}

/// H-norm-squared threshold past which a trajectory counts as blown up.
const BLOW_UP_NORM_SQ: f64 = 1e16;

enum GainPath {
    Off,
    /// Constant level: modal-diagonal, no transforms.
    Additive(f64),
    /// State-dependent: needs grid transforms every step.
    General,
}

/// Reusable per-path work buffers; one per worker, never shared.
pub struct StepScratch {
    grid_a: Vec<f64>,
    grid_b: Vec<f64>,
    modal_a: Vec<f64>,
    modal_b: Vec<f64>,
    noise: Vec<f64>,
}

/// Precomputed one-step map for a scenario on a fixed time grid.
///
/// The stepper is immutable and cheap to share across worker threads; all
/// mutable state lives in the caller's modal vectors and [`StepScratch`].
pub struct Stepper {
    basis: SpectralBasis,
    n_modes: usize,
    n_steps: usize,
    h: f64,
    horizon: f64,
    /// `e^{mu_k h}`
    exp_h: Vec<f64>,
    /// `phi_k(h)`
    phi: Vec<f64>,
    /// `phi_k(h) * b_k[side]`: control response per step.
    phi_b: [Vec<f64>; 2],
    /// `intensity * b_k[side] * sqrt(psi_k(h) / h)`: noise response per
    /// increment.
    noise_b: [Vec<f64>; 2],
    reaction: Reaction,
    gain: Gain,
    modal_affine: Option<(f64, f64)>,
    gain_path: GainPath,
    boundary_noise_on: bool,
}

impl Stepper {
    pub fn new(scenario: &Scenario, grid: &TimeGrid) -> Result<Self> {
        scenario.check_structure()?;
        let basis = scenario.basis()?;
        let n = scenario.n_modes;
        let h = grid.h();
        let exp_h: Vec<f64> = basis.eigenvalues().iter().map(|&mu| (mu * h).exp()).collect();
        let phi: Vec<f64> = basis.eigenvalues().iter().map(|&mu| phi_step(mu, h)).collect();
        let mut phi_b = [vec![0.0; n], vec![0.0; n]];
        let mut noise_b = [vec![0.0; n], vec![0.0; n]];
        for side in Side::BOTH {
            let map = basis.neumann_map(side);
            let s = side.index();
            for k in 0..n {
                phi_b[s][k] = phi[k] * map.b_coeffs[k];
                let psi = psi_step(basis.eigenvalue(k), h);
                noise_b[s][k] = scenario.boundary_noise[s] * map.b_coeffs[k] * (psi / h).sqrt();
            }
        }
        let gain_path = match scenario.gain {
            Gain::Off => GainPath::Off,
            Gain::Constant { level } => GainPath::Additive(level),
            _ => GainPath::General,
        };
        Ok(Stepper {
            n_modes: n,
            n_steps: grid.n_steps,
            h,
            horizon: grid.horizon,
            exp_h,
            phi,
            phi_b,
            noise_b,
            reaction: scenario.reaction.clone(),
            gain: scenario.gain.clone(),
            modal_affine: scenario.reaction.as_modal_affine(),
            gain_path,
            boundary_noise_on: scenario.has_boundary_noise(),
            basis,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn make_scratch(&self) -> StepScratch {
        let m = self.basis.grid_size();
        StepScratch {
            grid_a: vec![0.0; m],
            grid_b: vec![0.0; m],
            modal_a: vec![0.0; self.n_modes],
            modal_b: vec![0.0; self.n_modes],
            noise: vec![0.0; self.n_modes],
        }
    }

    pub fn check_bundle(&self, bundle: &NoiseBundle) -> Result<()> {
        if (bundle.horizon - self.horizon).abs() > 1e-12 * self.horizon.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "noise horizon {} does not match grid horizon {}",
                bundle.horizon, self.horizon
            )));
        }
        if bundle.base_steps % self.n_steps != 0 {
            return Err(Error::InvalidArgument(format!(
                "noise base grid ({} steps) is not a refinement of the simulation grid ({} steps)",
                bundle.base_steps, self.n_steps
            )));
        }
        Ok(())
    }

    /// One exponential-integrator step of the state, in place. Returns false
    /// when the updated state is non-finite or past the blow-up threshold.
    pub fn step_state(
        &self,
        x: &mut [f64],
        u: [f64; 2],
        step: usize,
        bundle: &NoiseBundle,
        scratch: &mut StepScratch,
    ) -> bool {
        let n = self.n_modes;

        // Drift f(x) in modal coordinates.
        let drift: &[f64] = match self.modal_affine {
            Some((a, b)) => {
                for (d, xv) in scratch.modal_a.iter_mut().zip(x.iter()) {
                    *d = a * xv;
                }
                scratch.modal_a[0] += b;
                &scratch.modal_a
            }
            None => {
                self.basis.to_grid(x, &mut scratch.grid_a);
                for g in scratch.grid_a.iter_mut() {
                    *g = self.reaction.eval(*g);
                }
                self.basis.to_modal(&scratch.grid_a, &mut scratch.modal_a);
                &scratch.modal_a
            }
        };

        // Distributed noise response [g(x) dW]_k, if any.
        let gain_term: Option<&[f64]> = match self.gain_path {
            GainPath::Off => None,
            GainPath::Additive(level) => {
                bundle.modal_increments(step, self.n_steps, &mut scratch.noise);
                for (m, w) in scratch.modal_b.iter_mut().zip(&scratch.noise) {
                    *m = level * w;
                }
                Some(&scratch.modal_b)
            }
            GainPath::General => {
                bundle.modal_increments(step, self.n_steps, &mut scratch.noise);
                // g(x) on the grid times the increment field on the grid
                self.basis.to_grid(x, &mut scratch.grid_a);
                self.basis.to_grid(&scratch.noise, &mut scratch.grid_b);
                for (ga, gb) in scratch.grid_a.iter_mut().zip(&scratch.grid_b) {
                    *ga = self.gain.eval(*ga) * gb;
                }
                self.basis.to_modal(&scratch.grid_a, &mut scratch.modal_b);
                Some(&scratch.modal_b)
            }
        };

        let (dw_l, dw_r) = if self.boundary_noise_on {
            bundle.boundary_increment(step, self.n_steps)
        } else {
            (0.0, 0.0)
        };

        let mut norm_sq = 0.0;
        let mut finite = true;
        for k in 0..n {
            let mut v = self.exp_h[k] * x[k] + self.phi[k] * drift[k];
            v += self.phi_b[0][k] * u[0] + self.phi_b[1][k] * u[1];
            if self.boundary_noise_on {
                v += self.noise_b[0][k] * dw_l + self.noise_b[1][k] * dw_r;
            }
            if let Some(gt) = gain_term {
                v += self.exp_h[k] * gt[k];
            }
            x[k] = v;
            norm_sq += v * v;
            finite &= v.is_finite();
        }
        finite && norm_sq <= BLOW_UP_NORM_SQ
    }

    /// One step of the first-variation process around a base trajectory, in
    /// place. `x_base` is the base state *before* its own step. The
    /// linearized dynamics see the control perturbation `du` and, when the
    /// gain is state-dependent, the same increments as the base path; the
    /// boundary noise is state-independent and drops out.
    pub fn step_variation(
        &self,
        v: &mut [f64],
        x_base: &[f64],
        du: [f64; 2],
        step: usize,
        bundle: &NoiseBundle,
        scratch: &mut StepScratch,
    ) -> bool {
        let n = self.n_modes;

        let lin: &[f64] = match self.modal_affine {
            Some((a, _)) => {
                for (d, vv) in scratch.modal_a.iter_mut().zip(v.iter()) {
                    *d = a * vv;
                }
                &scratch.modal_a
            }
            None => {
                self.basis.to_grid(x_base, &mut scratch.grid_a);
                self.basis.to_grid(v, &mut scratch.grid_b);
                for (ga, gb) in scratch.grid_a.iter_mut().zip(&scratch.grid_b) {
                    *ga = self.reaction.deriv(*ga) * gb;
                }
                self.basis.to_modal(&scratch.grid_a, &mut scratch.modal_a);
                &scratch.modal_a
            }
        };

        let gain_term: Option<&[f64]> = if self.gain.has_zero_deriv() {
            None
        } else {
            bundle.modal_increments(step, self.n_steps, &mut scratch.noise);
            self.basis.to_grid(x_base, &mut scratch.grid_a);
            self.basis.to_grid(v, &mut scratch.grid_b);
            let m = self.basis.grid_size();
            // g'(x_base) * v on the grid, then times the increment field
            for i in 0..m {
                scratch.grid_a[i] = self.gain.deriv(scratch.grid_a[i]) * scratch.grid_b[i];
            }
            self.basis.to_grid(&scratch.noise, &mut scratch.grid_b);
            for i in 0..m {
                scratch.grid_a[i] *= scratch.grid_b[i];
            }
            self.basis.to_modal(&scratch.grid_a, &mut scratch.modal_b);
            Some(&scratch.modal_b)
        };

        let mut norm_sq = 0.0;
        let mut finite = true;
        for k in 0..n {
            let mut val = self.exp_h[k] * v[k] + self.phi[k] * lin[k];
            val += self.phi_b[0][k] * du[0] + self.phi_b[1][k] * du[1];
            if let Some(gt) = gain_term {
                val += self.exp_h[k] * gt[k];
            }
            v[k] = val;
            norm_sq += val * val;
            finite &= val.is_finite();
        }
        finite && norm_sq <= BLOW_UP_NORM_SQ
    }

    /// Steps a variation and then the base state it linearizes around,
    /// keeping the pair consistent for fused sweeps.
    pub fn step_pair(
        &self,
        x: &mut [f64],
        v: &mut [f64],
        u: [f64; 2],
        du: [f64; 2],
        step: usize,
        bundle: &NoiseBundle,
        scratch: &mut StepScratch,
    ) -> bool {
        let ok_v = self.step_variation(v, x, du, step, bundle, scratch);
        let ok_x = self.step_state(x, u, step, bundle, scratch);
        ok_v && ok_x
    }
}

fn check_controls(stepper: &Stepper, controls: &ControlProcess) -> Result<()> {
    if controls.n_steps() != stepper.n_steps {
        return Err(Error::DimensionMismatch(format!(
            "control has {} steps, grid has {}",
            controls.n_steps(),
            stepper.n_steps
        )));
    }
    Ok(())
}

/// Simulates one trajectory, recording every node.
pub fn simulate_path(
    stepper: &Stepper,
    initial: &ModalVector,
    controls: &ControlProcess,
    bundle: &NoiseBundle,
    path_index: usize,
) -> Result<StatePath> {
    check_controls(stepper, controls)?;
    stepper.check_bundle(bundle)?;
    if initial.len() != stepper.n_modes {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} modes, scenario has {}",
            initial.len(),
            stepper.n_modes
        )));
    }
    let mut path = StatePath::zeroed(stepper.n_modes, stepper.n_steps);
    path.state_mut(0).copy_from_slice(&initial.coeffs);
    let mut scratch = stepper.make_scratch();
    let mut x = initial.coeffs.clone();
    for i in 0..stepper.n_steps {
        if !stepper.step_state(&mut x, controls.values[i], i, bundle, &mut scratch) {
            return Err(Error::BlowUp {
                path: path_index,
                step: i,
            });
        }
        path.state_mut(i + 1).copy_from_slice(&x);
    }
    Ok(path)
}

/// Simulates an ensemble under a common control. Path `p` uses the noise
/// bundle `(seed, p)`, so the result is independent of scheduling and
/// identical with and without the parallel feature.
pub fn simulate_ensemble(
    scenario: &Scenario,
    grid: &TimeGrid,
    controls: &ControlProcess,
    params: &SimParams,
) -> Result<PathEnsemble> {
    let stepper = Stepper::new(scenario, grid)?;
    check_controls(&stepper, controls)?;
    if params.n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths = 0".into()));
    }
    let base = params.base_steps.unwrap_or(grid.n_steps);
    let results = par::map_indexed(params.n_paths, |p| {
        let bundle = NoiseBundle::new(params.seed, p, grid.horizon, base);
        simulate_path(&stepper, &scenario.initial_state, controls, &bundle, p)
    });
    let mut paths = Vec::with_capacity(params.n_paths);
    for r in results {
        paths.push(r?);
    }
    Ok(PathEnsemble { paths })
}

/// Simulates base path and first variation together for every path of an
/// ensemble, under control `u` and perturbation direction `du`.
pub fn simulate_ensemble_with_variation(
    scenario: &Scenario,
    grid: &TimeGrid,
    controls: &ControlProcess,
    delta: &ControlProcess,
    params: &SimParams,
) -> Result<(PathEnsemble, PathEnsemble)> {
    let stepper = Stepper::new(scenario, grid)?;
    check_controls(&stepper, controls)?;
    check_controls(&stepper, delta)?;
    if params.n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths = 0".into()));
    }
    let base = params.base_steps.unwrap_or(grid.n_steps);
    let results = par::map_indexed(params.n_paths, |p| -> Result<(StatePath, StatePath)> {
        let bundle = NoiseBundle::new(params.seed, p, grid.horizon, base);
        stepper.check_bundle(&bundle)?;
        let mut scratch = stepper.make_scratch();
        let mut x = scenario.initial_state.coeffs.clone();
        let mut v = vec![0.0; stepper.n_modes];
        let mut xp = StatePath::zeroed(stepper.n_modes, stepper.n_steps);
        let mut vp = StatePath::zeroed(stepper.n_modes, stepper.n_steps);
        xp.state_mut(0).copy_from_slice(&x);
        for i in 0..stepper.n_steps {
            if !stepper.step_pair(
                &mut x,
                &mut v,
                controls.values[i],
                delta.values[i],
                i,
                &bundle,
                &mut scratch,
            ) {
                return Err(Error::BlowUp { path: p, step: i });
            }
            xp.state_mut(i + 1).copy_from_slice(&x);
            vp.state_mut(i + 1).copy_from_slice(&v);
        }
        Ok((xp, vp))
    });
    let mut states = Vec::with_capacity(params.n_paths);
    let mut variations = Vec::with_capacity(params.n_paths);
    for r in results {
        let (xp, vp) = r?;
        states.push(xp);
        variations.push(vp);
    }
    Ok((PathEnsemble { paths: states }, PathEnsemble { paths: variations }))
}
