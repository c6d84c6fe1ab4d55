//! Named, ready-to-run scenarios.
//!
//! The registry pins a small set of problem instances used across tests,
//! benchmarks, and the command-line tool, so that every consumer studies the
//! same objects. Presets are built at a caller-chosen mode count; cost
//! vectors are defined coefficient-wise and truncate cleanly.
//!
//! - `linear-lq`: stable linear reaction, additive noise, quadratic
//!   tracking + control energy, box controls. The workhorse: its adjoint has
//!   a closed linear form, and its cost data live entirely in the default
//!   regression features, so regression bias vanishes and error scalings are
//!   clean.
//! - `tanh-reaction`: saturating nonlinear reaction, additive noise, box
//!   controls. Exercises the dealiased pointwise-map path and second-order
//!   expansion remainders. Noise is kept additive so that large spike-rate
//!   sweeps stay affordable; state-dependent noise is covered by dedicated
//!   tests.
//! - `finite-switch`: linear dynamics, boundary noise, three-level switching
//!   controls per side with a linear control cost; the Hamiltonian argmax is
//!   a strict bang-bang pair, which makes maximization-step optimization and
//!   gap verification sharp.
//! - `rough-terminal`: drift-free dynamics with a slowly decaying terminal
//!   cost gradient; the adjoint boundary pairing develops a terminal-layer
//!   singularity with a measurable log-log slope.
//! - `layer-free`: drift-free dynamics, no terminal cost, band-limited
//!   running cost gradient; the pairing saturates quickly and its profile is
//!   flat, the control case of the regularity study.

use crate::model::{
    ControlSet, CostSpec, Gain, Reaction, RunningCost, Scenario, TerminalCost,
};
use crate::spectral::ModalVector;

/// Mode count used when a preset is requested without an explicit override.
pub const DEFAULT_MODES: usize = 64;

/// All registered preset names.
pub fn names() -> &'static [&'static str] {
    &[
        "linear-lq",
        "tanh-reaction",
        "finite-switch",
        "rough-terminal",
        "layer-free",
    ]
}

/// Presets that pose a full control problem (cost with a control term and a
/// non-degenerate admissible set); the subset suitable for optimizer and
/// perturbation-rate studies.
pub fn control_names() -> &'static [&'static str] {
    &["linear-lq", "tanh-reaction", "finite-switch"]
}

/// Coefficient vector `value` on modes `lo..hi` (zero elsewhere), truncated
/// to `n` modes.
fn banded(n: usize, lo: usize, hi: usize, value: impl Fn(usize) -> f64) -> ModalVector {
    let mut v = ModalVector::zeros(n);
    for k in lo..hi.min(n) {
        v.coeffs[k] = value(k);
    }
    v
}

/// Build a registered scenario at the given mode count. Returns `None` for
/// unknown names. The dealiasing grid is sized at twice the mode count.
pub fn build(name: &str, n_modes: usize) -> Option<Scenario> {
    let n = n_modes;
    let base = Scenario {
        n_modes: n,
        grid_size: 2 * n,
        lambda: 1.0,
        horizon: 1.0,
        initial_state: ModalVector::zeros(n),
        reaction: Reaction::Off,
        gain: Gain::Off,
        boundary_noise: [0.5, 0.5],
        control_set: ControlSet::Box {
            lo: [-1.0, -1.0],
            hi: [1.0, 1.0],
        },
        cost: CostSpec::default(),
    };
    let scenario = match name {
        "linear-lq" => Scenario {
            initial_state: banded(n, 0, 2, |k| if k == 0 { 0.4 } else { 0.2 }),
            reaction: Reaction::Linear { slope: -0.3 },
            gain: Gain::Constant { level: 1.0 },
            // An out-of-reach target keeps the adjoint's deterministic
            // backbone well above the Monte-Carlo noise floor at reference
            // path budgets, so sampling error reads directly as relative
            // error.
            cost: CostSpec {
                running: vec![
                    RunningCost::QuadraticTracking {
                        weight: 1.0,
                        target: banded(n, 0, 4, |_| 2.0),
                        mode_cutoff: Some(4),
                    },
                    RunningCost::ControlEnergy { weight: 0.1 },
                ],
                terminal: vec![TerminalCost::LinearState {
                    coeffs: banded(n, 0, 4, |_| 1.0),
                }],
            },
            ..base
        },
        "tanh-reaction" => Scenario {
            initial_state: banded(n, 0, 2, |k| if k == 0 { 0.4 } else { 0.2 }),
            reaction: Reaction::TanhSaturated { gain: 1.0 },
            gain: Gain::Constant { level: 1.0 },
            cost: CostSpec {
                running: vec![
                    RunningCost::QuadraticTracking {
                        weight: 1.0,
                        target: banded(n, 0, 4, |_| 0.25),
                        mode_cutoff: Some(8),
                    },
                    RunningCost::ControlEnergy { weight: 0.1 },
                ],
                terminal: vec![TerminalCost::QuadraticTracking {
                    weight: 0.5,
                    target: ModalVector::zeros(n),
                }],
            },
            ..base
        },
        "finite-switch" => Scenario {
            initial_state: banded(n, 0, 1, |_| 0.2),
            reaction: Reaction::Linear { slope: -0.2 },
            boundary_noise: [0.3, 0.3],
            control_set: ControlSet::FiniteSet {
                values: three_level_grid(),
            },
            cost: CostSpec {
                running: vec![RunningCost::ControlLinear { coeffs: [0.5, 0.5] }],
                terminal: vec![TerminalCost::LinearState {
                    coeffs: banded(n, 0, 1, |_| 1.0),
                }],
            },
            ..base
        },
        "rough-terminal" => Scenario {
            cost: CostSpec {
                running: vec![],
                terminal: vec![TerminalCost::LinearState {
                    coeffs: banded(n, 1, n, |k| 1.0 / k as f64),
                }],
            },
            ..base
        },
        "layer-free" => Scenario {
            cost: CostSpec {
                running: vec![RunningCost::LinearState {
                    coeffs: banded(n, 16, 32, |k| 1.0 / k as f64),
                }],
                terminal: vec![],
            },
            ..base
        },
        _ => return None,
    };
    Some(scenario)
}

/// The `{-1, 0, 1}` cross product, in lexicographic order.
fn three_level_grid() -> Vec<[f64; 2]> {
    let levels = [-1.0, 0.0, 1.0];
    let mut values = Vec::with_capacity(9);
    for &l in &levels {
        for &r in &levels {
            values.push([l, r]);
        }
    }
    values
}
