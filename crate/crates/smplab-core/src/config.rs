//! Line-oriented experiment configuration.
//!
//! Format: one `section.key = value` pair per line, `#` starts a comment,
//! blank lines are ignored, arrays are comma-separated. The format is
//! deliberately trivial to parse and diff.
//!
//! Parsing is whole-file: every problem is collected with its 1-based line
//! number and reported at once (line 0 marks file-level problems such as
//! missing required keys). A successfully parsed [`Config`] is fully
//! resolved — every default is materialized — and [`serialize_config`] emits
//! it back in canonical key order with full-precision floats, so
//! parse → serialize → parse is the identity.
//!
//! A scenario is given either inline (`scenario.n_modes` plus a control-set
//! key, with optional coefficient keys) or by `scenario.preset = <name>`
//! referencing the registry in [`crate::presets`]; explicit scenario keys
//! override the preset field-by-field, and any `cost.*` key replaces the
//! preset's cost wholesale.

use std::collections::BTreeMap;

use crate::adjoint::AdjointParams;
use crate::error::{ConfigError, Error};
use crate::Result;
use crate::model::{ControlSet, CostSpec, Gain, Reaction, RunningCost, Scenario, TerminalCost};
use crate::numfmt::fmt_float;
use crate::presets;
use crate::spectral::ModalVector;

/// Which experiment a config drives; mirrors the command-line subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Simulate,
    Adjoint,
    GradCheck,
    SpikeRates,
    Optimize,
    VerifySmp,
    Regularity,
    Validate,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Simulate,
        ExperimentKind::Adjoint,
        ExperimentKind::GradCheck,
        ExperimentKind::SpikeRates,
        ExperimentKind::Optimize,
        ExperimentKind::VerifySmp,
        ExperimentKind::Regularity,
        ExperimentKind::Validate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Adjoint => "adjoint",
            ExperimentKind::GradCheck => "grad-check",
            ExperimentKind::SpikeRates => "spike-rates",
            ExperimentKind::Optimize => "optimize",
            ExperimentKind::VerifySmp => "verify-smp",
            ExperimentKind::Regularity => "regularity",
            ExperimentKind::Validate => "validate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.as_str() == s)
    }
}

/// Optimizer selected by `optimize.method`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptMethod {
    /// Projected gradient with backtracking on the step size.
    Pg,
    /// Damped maximization of the Hamiltonian (successive approximations).
    Msa,
}

impl OptMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            OptMethod::Pg => "pg",
            OptMethod::Msa => "msa",
        }
    }
}

/// Discretization and ensemble sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub n_steps: usize,
    pub n_paths: usize,
    /// Noise base grid (defaults to `n_steps`); must be a multiple of
    /// `n_steps` so coarse runs consume the same underlying increments.
    pub base_steps: Option<usize>,
    /// How many individual paths the simulate experiment writes out.
    pub dump_paths: usize,
}

/// Spike-perturbation study settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeSettings {
    /// Perturbation window lengths, strictly decreasing. Required for the
    /// spike-rates experiment, unused elsewhere.
    pub epsilon_ladder: Vec<f64>,
    /// Window start time.
    pub t_bar: f64,
    /// Control value inserted on the window.
    pub value: [f64; 2],
    /// Optional mode count for the robustness re-run.
    pub refine_modes: Option<usize>,
    /// Optional finer step count for the robustness re-run.
    pub refine_steps: Option<usize>,
}

/// Finite-difference gradient check settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSettings {
    /// Step sizes, strictly decreasing.
    pub theta_ladder: Vec<f64>,
    /// Number of random perturbation directions.
    pub directions: usize,
    /// Relative-error threshold for the summary verdict.
    pub tolerance: f64,
}

/// Iterative optimizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeSettings {
    pub method: OptMethod,
    /// Initial gradient step size (projected gradient).
    pub rho: f64,
    pub max_iters: usize,
    /// Optimality-residual stopping threshold, scaled by `1 + |J|`.
    pub tol: f64,
    /// Keep-probability damping (maximization steps only), in `[0, 1)`.
    pub damping: f64,
    /// Starting control, constant in time.
    pub u0: [f64; 2],
}

/// Hamiltonian-gap verification settings.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifySettings {
    /// Control to verify, constant in time.
    pub u0: [f64; 2],
    /// A step's gap counts as a violation above this multiple of its
    /// standard error.
    pub gap_ratio: f64,
}

/// Terminal-layer profile settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularitySettings {
    /// Fraction of the horizon, counted back from the terminal time, whose
    /// nodes enter the log-log fit.
    pub window: f64,
}

/// A fully resolved experiment description: scenario plus every numerical
/// knob, with defaults already applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub scenario: Scenario,
    pub sim: SimSettings,
    pub adjoint: AdjointParams,
    pub spike: SpikeSettings,
    pub grad: GradSettings,
    pub optimize: OptimizeSettings,
    pub verify: VerifySettings,
    pub regularity: RegularitySettings,
}

/// Every key the format accepts, in canonical serialization order.
const KNOWN_KEYS: &[&str] = &[
    "experiment.kind",
    "experiment.seed",
    "scenario.preset",
    "scenario.n_modes",
    "scenario.grid_size",
    "scenario.lambda",
    "scenario.horizon",
    "scenario.initial_state",
    "scenario.reaction",
    "scenario.gain",
    "scenario.boundary_noise",
    "scenario.control_box",
    "scenario.control_levels",
    "scenario.control_values",
    "cost.tracking_weight",
    "cost.tracking_target",
    "cost.tracking_cutoff",
    "cost.state_linear",
    "cost.control_energy",
    "cost.control_linear",
    "cost.terminal_weight",
    "cost.terminal_target",
    "cost.terminal_linear",
    "sim.n_steps",
    "sim.n_paths",
    "sim.base_steps",
    "sim.dump_paths",
    "adjoint.features",
    "adjoint.ridge",
    "adjoint.picard",
    "spike.epsilon_ladder",
    "spike.t_bar",
    "spike.value",
    "spike.refine_modes",
    "spike.refine_steps",
    "grad.theta_ladder",
    "grad.directions",
    "grad.tolerance",
    "optimize.method",
    "optimize.rho",
    "optimize.max_iters",
    "optimize.tol",
    "optimize.damping",
    "optimize.u0",
    "verify.u0",
    "verify.gap_ratio",
    "regularity.window",
];

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: String,
}

/// Key-value store with typed, error-collecting accessors. Every accessor
/// returns `None` (and records the problem) instead of failing fast, so one
/// pass reports everything at once.
struct Reader {
    entries: BTreeMap<&'static str, Entry>,
    errors: Vec<ConfigError>,
}

impl Reader {
    fn err(&mut self, line: usize, message: impl Into<String>) {
        self.errors.push(ConfigError {
            line,
            message: message.into(),
        });
    }

    fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    fn raw(&mut self, key: &'static str) -> Option<Entry> {
        self.entries.get(key).cloned()
    }

    fn f64(&mut self, key: &'static str) -> Option<f64> {
        let e = self.raw(key)?;
        match e.value.parse::<f64>() {
            Ok(v) if v.is_finite() => Some(v),
            _ => {
                self.err(e.line, format!("expected a number for {key}, got `{}`", e.value));
                None
            }
        }
    }

    fn usize(&mut self, key: &'static str) -> Option<usize> {
        let e = self.raw(key)?;
        match e.value.parse::<usize>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.err(
                    e.line,
                    format!("expected a non-negative integer for {key}, got `{}`", e.value),
                );
                None
            }
        }
    }

    fn u64(&mut self, key: &'static str) -> Option<u64> {
        let e = self.raw(key)?;
        match e.value.parse::<u64>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.err(
                    e.line,
                    format!("expected a non-negative integer for {key}, got `{}`", e.value),
                );
                None
            }
        }
    }

    fn list_f64(&mut self, key: &'static str) -> Option<Vec<f64>> {
        let e = self.raw(key)?;
        let mut out = Vec::new();
        for part in e.value.split(',') {
            match part.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => out.push(v),
                _ => {
                    self.err(
                        e.line,
                        format!("expected comma-separated numbers for {key}, got `{}`", e.value),
                    );
                    return None;
                }
            }
        }
        if out.is_empty() {
            self.err(e.line, format!("expected at least one number for {key}"));
            return None;
        }
        Some(out)
    }

    /// Fixed-length float list.
    fn tuple_f64<const K: usize>(&mut self, key: &'static str) -> Option<[f64; K]> {
        let line = self.line_of(key);
        let v = self.list_f64(key)?;
        match <[f64; K]>::try_from(v) {
            Ok(arr) => Some(arr),
            Err(v) => {
                self.err(
                    line,
                    format!("expected exactly {K} numbers for {key}, got {}", v.len()),
                );
                None
            }
        }
    }
}

/// Split a line into a key/value pair, stripping comments and whitespace.
fn collect_entries(text: &str) -> Reader {
    let mut reader = Reader {
        entries: BTreeMap::new(),
        errors: Vec::new(),
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            reader.err(line, format!("expected `section.key = value`, got `{content}`"));
            continue;
        };
        let key = k.trim();
        let value = v.trim().to_string();
        let Some(&known) = KNOWN_KEYS.iter().find(|&&kk| kk == key) else {
            reader.err(line, format!("unknown key {key}"));
            continue;
        };
        if let Some(prev) = reader.entries.get(known) {
            let first = prev.line;
            reader.err(
                line,
                format!("duplicate key {key} (first set on line {first}, set again on line {line})"),
            );
            continue;
        }
        reader.entries.insert(known, Entry { line, value });
    }
    reader
}

/// Parse a constructor-style value: `name` or `name(a, b, ...)`.
fn parse_ctor(value: &str) -> Option<(String, Vec<f64>)> {
    let value = value.trim();
    let Some(open) = value.find('(') else {
        return Some((value.to_string(), Vec::new()));
    };
    let name = value[..open].trim().to_string();
    let rest = value[open + 1..].trim_end();
    let inner = rest.strip_suffix(')')?;
    let mut args = Vec::new();
    for part in inner.split(',') {
        args.push(part.trim().parse::<f64>().ok().filter(|v| v.is_finite())?);
    }
    Some((name, args))
}

fn parse_reaction(reader: &mut Reader) -> Option<Reaction> {
    let e = reader.raw("scenario.reaction")?;
    let parsed = parse_ctor(&e.value).and_then(|(name, a)| match (name.as_str(), a.as_slice()) {
        ("off", []) => Some(Reaction::Off),
        ("linear", &[slope]) => Some(Reaction::Linear { slope }),
        ("affine", &[slope, offset]) => Some(Reaction::Affine { slope, offset }),
        ("tanh", &[gain]) => Some(Reaction::TanhSaturated { gain }),
        ("cubic", &[gain, radius]) => Some(Reaction::TruncatedCubic { gain, radius }),
        ("quadratic", &[gain]) => Some(Reaction::Quadratic { gain }),
        _ => None,
    });
    if parsed.is_none() {
        reader.err(
            e.line,
            format!(
                "expected off | linear(a) | affine(a, b) | tanh(g) | cubic(g, r) | quadratic(g) \
                 for scenario.reaction, got `{}`",
                e.value
            ),
        );
    }
    parsed
}

fn parse_gain(reader: &mut Reader) -> Option<Gain> {
    let e = reader.raw("scenario.gain")?;
    let parsed = parse_ctor(&e.value).and_then(|(name, a)| match (name.as_str(), a.as_slice()) {
        ("off", []) => Some(Gain::Off),
        ("constant", &[level]) => Some(Gain::Constant { level }),
        ("linear", &[slope]) => Some(Gain::Linear { slope }),
        ("tanh", &[gain]) => Some(Gain::TanhSaturated { gain }),
        _ => None,
    });
    if parsed.is_none() {
        reader.err(
            e.line,
            format!(
                "expected off | constant(c) | linear(a) | tanh(g) for scenario.gain, got `{}`",
                e.value
            ),
        );
    }
    parsed
}

/// Collect the control set from whichever of the three control keys is
/// present; more than one is a conflict, none (without a preset) is a
/// missing key.
fn parse_control_set(reader: &mut Reader, fallback: Option<&ControlSet>) -> Option<ControlSet> {
    let present: Vec<&'static str> = [
        "scenario.control_box",
        "scenario.control_levels",
        "scenario.control_values",
    ]
    .into_iter()
    .filter(|k| reader.has(k))
    .collect();
    if present.len() > 1 {
        for pair in present.windows(2) {
            let line = reader.line_of(pair[1]);
            let other = pair[0];
            reader.err(
                line,
                format!(
                    "{} conflicts with {} (line {}); give exactly one control set",
                    pair[1],
                    other,
                    reader.line_of(other)
                ),
            );
        }
        return None;
    }
    match present.first().copied() {
        Some("scenario.control_box") => {
            let line = reader.line_of("scenario.control_box");
            let q = reader.tuple_f64::<4>("scenario.control_box")?;
            let (lo, hi) = ([q[0], q[1]], [q[2], q[3]]);
            if lo[0] > hi[0] || lo[1] > hi[1] {
                reader.err(
                    line,
                    "scenario.control_box bounds must satisfy lo <= hi per side \
                     (order: lo_left, lo_right, hi_left, hi_right)",
                );
                return None;
            }
            Some(ControlSet::Box { lo, hi })
        }
        Some("scenario.control_levels") => {
            let levels = reader.list_f64("scenario.control_levels")?;
            let mut values = Vec::with_capacity(levels.len() * levels.len());
            for &l in &levels {
                for &r in &levels {
                    values.push([l, r]);
                }
            }
            Some(ControlSet::FiniteSet { values })
        }
        Some("scenario.control_values") => {
            let line = reader.line_of("scenario.control_values");
            let flat = reader.list_f64("scenario.control_values")?;
            if flat.len() % 2 != 0 {
                reader.err(
                    line,
                    format!(
                        "scenario.control_values needs an even count of numbers \
                         (left/right pairs), got {}",
                        flat.len()
                    ),
                );
                return None;
            }
            let values: Vec<[f64; 2]> = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
            Some(ControlSet::FiniteSet { values })
        }
        _ => match fallback {
            Some(set) => Some(set.clone()),
            None => {
                reader.err(
                    0,
                    "missing key scenario.control_box (or scenario.control_levels / \
                     scenario.control_values): a control set is required",
                );
                None
            }
        },
    }
}

/// A modal coefficient list padded with zeros up to `n_modes`.
fn padded_vector(
    reader: &mut Reader,
    key: &'static str,
    n_modes: usize,
    list: Vec<f64>,
) -> Option<ModalVector> {
    if list.len() > n_modes {
        let line = reader.line_of(key);
        reader.err(
            line,
            format!("{key} has {} coefficients but n_modes = {n_modes}", list.len()),
        );
        return None;
    }
    let mut v = ModalVector::zeros(n_modes);
    v.coeffs[..list.len()].copy_from_slice(&list);
    Some(v)
}

/// Build the cost from explicit `cost.*` keys. Caller guarantees at least
/// one such key is present.
fn parse_cost(reader: &mut Reader, n_modes: usize) -> Option<CostSpec> {
    let mut running = Vec::new();
    let mut terminal = Vec::new();
    let mut ok = true;

    let tracking_weight = reader.f64("cost.tracking_weight");
    let tracking_target = reader.list_f64("cost.tracking_target");
    let tracking_cutoff = reader.usize("cost.tracking_cutoff");
    match (tracking_weight, &tracking_target, &tracking_cutoff) {
        (Some(weight), _, _) => {
            let target = match tracking_target {
                Some(list) => match padded_vector(reader, "cost.tracking_target", n_modes, list) {
                    Some(v) => v,
                    None => {
                        ok = false;
                        ModalVector::zeros(n_modes)
                    }
                },
                None => ModalVector::zeros(n_modes),
            };
            running.push(RunningCost::QuadraticTracking {
                weight,
                target,
                mode_cutoff: tracking_cutoff,
            });
        }
        (None, target, cutoff) => {
            for (there, key) in [
                (target.is_some(), "cost.tracking_target"),
                (cutoff.is_some(), "cost.tracking_cutoff"),
            ] {
                if there {
                    let line = reader.line_of(key);
                    reader.err(line, format!("{key} requires cost.tracking_weight"));
                    ok = false;
                }
            }
        }
    }

    if let Some(list) = reader.list_f64("cost.state_linear") {
        match padded_vector(reader, "cost.state_linear", n_modes, list) {
            Some(coeffs) => running.push(RunningCost::LinearState { coeffs }),
            None => ok = false,
        }
    }
    if let Some(weight) = reader.f64("cost.control_energy") {
        running.push(RunningCost::ControlEnergy { weight });
    }
    if let Some(coeffs) = reader.tuple_f64::<2>("cost.control_linear") {
        running.push(RunningCost::ControlLinear { coeffs });
    }

    let terminal_weight = reader.f64("cost.terminal_weight");
    let terminal_target = reader.list_f64("cost.terminal_target");
    match (terminal_weight, &terminal_target) {
        (Some(weight), _) => {
            let target = match terminal_target {
                Some(list) => match padded_vector(reader, "cost.terminal_target", n_modes, list) {
                    Some(v) => v,
                    None => {
                        ok = false;
                        ModalVector::zeros(n_modes)
                    }
                },
                None => ModalVector::zeros(n_modes),
            };
            terminal.push(TerminalCost::QuadraticTracking { weight, target });
        }
        (None, Some(_)) => {
            let line = reader.line_of("cost.terminal_target");
            reader.err(line, "cost.terminal_target requires cost.terminal_weight");
            ok = false;
        }
        (None, None) => {}
    }
    if let Some(list) = reader.list_f64("cost.terminal_linear") {
        match padded_vector(reader, "cost.terminal_linear", n_modes, list) {
            Some(coeffs) => terminal.push(TerminalCost::LinearState { coeffs }),
            None => ok = false,
        }
    }

    ok.then_some(CostSpec { running, terminal })
}

/// Parse a config file. On failure returns [`Error::Config`] carrying every
/// problem found, each with its line number (0 for file-level problems).
pub fn parse_config(text: &str) -> Result<Config> {
    let mut reader = collect_entries(text);

    // --- experiment ---
    let kind = match reader.raw("experiment.kind") {
        Some(e) => match ExperimentKind::parse(&e.value) {
            Some(k) => Some(k),
            None => {
                let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.as_str()).collect();
                reader.err(
                    e.line,
                    format!(
                        "unknown experiment kind `{}`; expected one of {}",
                        e.value,
                        names.join(", ")
                    ),
                );
                None
            }
        },
        None => {
            reader.err(0, "missing key experiment.kind");
            None
        }
    };
    let seed = reader.u64("experiment.seed").unwrap_or(0);

    // --- scenario ---
    let preset = match reader.raw("scenario.preset") {
        Some(e) => {
            if presets::build(&e.value, 2).is_some() {
                Some(e.value)
            } else {
                reader.err(
                    e.line,
                    format!(
                        "unknown preset `{}`; registered presets: {}",
                        e.value,
                        presets::names().join(", ")
                    ),
                );
                None
            }
        }
        None => None,
    };
    let n_modes = match reader.usize("scenario.n_modes") {
        Some(n) => n,
        None => {
            if !reader.has("scenario.n_modes") && preset.is_none() && reader.has("scenario.preset")
            {
                // Preset name was given but unknown; n_modes default keeps
                // going so later checks still run.
            } else if !reader.has("scenario.n_modes") && !reader.has("scenario.preset") {
                reader.err(0, "missing key scenario.n_modes (or scenario.preset)");
            }
            presets::DEFAULT_MODES
        }
    };

    let base_scenario = preset.as_deref().and_then(|p| presets::build(p, n_modes));
    let grid_size = reader
        .usize("scenario.grid_size")
        .or(base_scenario.as_ref().map(|s| s.grid_size))
        .unwrap_or(2 * n_modes);
    let lambda = reader
        .f64("scenario.lambda")
        .or(base_scenario.as_ref().map(|s| s.lambda))
        .unwrap_or(1.0);
    let horizon = reader
        .f64("scenario.horizon")
        .or(base_scenario.as_ref().map(|s| s.horizon))
        .unwrap_or(1.0);
    let initial_state = match reader.list_f64("scenario.initial_state") {
        Some(list) => padded_vector(&mut reader, "scenario.initial_state", n_modes, list),
        None => Some(
            base_scenario
                .as_ref()
                .map(|s| s.initial_state.clone())
                .unwrap_or_else(|| ModalVector::zeros(n_modes)),
        ),
    };
    let reaction = match reader.has("scenario.reaction") {
        true => parse_reaction(&mut reader),
        false => Some(
            base_scenario
                .as_ref()
                .map(|s| s.reaction.clone())
                .unwrap_or(Reaction::Off),
        ),
    };
    let gain = match reader.has("scenario.gain") {
        true => parse_gain(&mut reader),
        false => Some(
            base_scenario
                .as_ref()
                .map(|s| s.gain.clone())
                .unwrap_or(Gain::Off),
        ),
    };
    let boundary_noise = match reader.has("scenario.boundary_noise") {
        true => reader.tuple_f64::<2>("scenario.boundary_noise"),
        false => Some(base_scenario.as_ref().map(|s| s.boundary_noise).unwrap_or([0.0, 0.0])),
    };
    let control_set = parse_control_set(&mut reader, base_scenario.as_ref().map(|s| &s.control_set));

    let any_cost_key = KNOWN_KEYS
        .iter()
        .any(|k| k.starts_with("cost.") && reader.has(k));
    let cost = if any_cost_key {
        parse_cost(&mut reader, n_modes)
    } else {
        Some(
            base_scenario
                .as_ref()
                .map(|s| s.cost.clone())
                .unwrap_or_default(),
        )
    };

    // --- sim ---
    let n_steps = reader.usize("sim.n_steps").unwrap_or(128);
    let n_paths = reader.usize("sim.n_paths").unwrap_or(256);
    let base_steps = reader.usize("sim.base_steps");
    if let Some(b) = base_steps {
        if n_steps == 0 || b % n_steps != 0 {
            let line = reader.line_of("sim.base_steps");
            reader.err(
                line,
                format!("sim.base_steps = {b} must be a positive multiple of sim.n_steps = {n_steps}"),
            );
        }
    }
    let dump_paths = reader.usize("sim.dump_paths").unwrap_or(4);
    for (key, v) in [("sim.n_steps", n_steps), ("sim.n_paths", n_paths)] {
        if v == 0 {
            let line = reader.line_of(key);
            reader.err(line, format!("{key} must be positive"));
        }
    }

    // --- adjoint ---
    let features = reader.usize("adjoint.features").unwrap_or(8);
    let ridge = reader.f64("adjoint.ridge").unwrap_or(1e-8);
    let picard = reader.usize("adjoint.picard").unwrap_or(2);
    if reader.has("adjoint.ridge") && ridge < 0.0 {
        let line = reader.line_of("adjoint.ridge");
        reader.err(line, "adjoint.ridge must be >= 0");
    }
    for (key, v) in [("adjoint.features", features), ("adjoint.picard", picard)] {
        if reader.has(key) && v == 0 {
            let line = reader.line_of(key);
            reader.err(line, format!("{key} must be positive"));
        }
    }

    // --- spike ---
    let epsilon_ladder = match reader.has("spike.epsilon_ladder") {
        true => reader.list_f64("spike.epsilon_ladder").unwrap_or_default(),
        false => {
            if kind == Some(ExperimentKind::SpikeRates) {
                reader.err(
                    0,
                    "missing key spike.epsilon_ladder (required for spike-rates)",
                );
            }
            Vec::new()
        }
    };
    if !epsilon_ladder.is_empty() {
        let line = reader.line_of("spike.epsilon_ladder");
        if epsilon_ladder.iter().any(|&e| e <= 0.0) {
            reader.err(line, "spike.epsilon_ladder entries must be positive");
        } else if epsilon_ladder.windows(2).any(|w| w[1] >= w[0]) {
            reader.err(line, "spike.epsilon_ladder must be strictly decreasing");
        }
    }
    let spike_t_bar = reader.f64("spike.t_bar").unwrap_or(0.75 * horizon);
    if reader.has("spike.t_bar") && !(0.0..horizon).contains(&spike_t_bar) {
        let line = reader.line_of("spike.t_bar");
        reader.err(
            line,
            format!("spike.t_bar = {spike_t_bar} must lie in [0, horizon = {horizon})"),
        );
    }
    if let (Some(&eps_max), true) = (
        epsilon_ladder.first(),
        !epsilon_ladder.is_empty() && spike_t_bar >= 0.0,
    ) {
        if spike_t_bar + eps_max > horizon * (1.0 + 1e-12) {
            let line = reader.line_of("spike.epsilon_ladder");
            reader.err(
                line,
                format!(
                    "spike window [t_bar, t_bar + eps] exceeds the horizon: \
                     {spike_t_bar} + {eps_max} > {horizon}"
                ),
            );
        }
    }
    let spike_value_explicit = reader.has("spike.value");
    let spike_value = match spike_value_explicit {
        true => reader.tuple_f64::<2>("spike.value"),
        false => None,
    };
    let refine_modes = reader.usize("spike.refine_modes");
    let refine_steps = reader.usize("spike.refine_steps");
    if let Some(r) = refine_steps {
        if n_steps == 0 || r % n_steps != 0 || r == 0 {
            let line = reader.line_of("spike.refine_steps");
            reader.err(
                line,
                format!("spike.refine_steps = {r} must be a positive multiple of sim.n_steps = {n_steps}"),
            );
        }
    }
    if let Some(m) = refine_modes {
        if m < 2 {
            let line = reader.line_of("spike.refine_modes");
            reader.err(line, "spike.refine_modes must be >= 2");
        }
    }

    // --- grad ---
    let theta_ladder = match reader.has("grad.theta_ladder") {
        true => reader.list_f64("grad.theta_ladder").unwrap_or_default(),
        false => vec![0.1, 0.05],
    };
    if !theta_ladder.is_empty() {
        let line = reader.line_of("grad.theta_ladder");
        if theta_ladder.iter().any(|&t| t <= 0.0) {
            reader.err(line, "grad.theta_ladder entries must be positive");
        } else if theta_ladder.windows(2).any(|w| w[1] >= w[0]) {
            reader.err(line, "grad.theta_ladder must be strictly decreasing");
        }
    }
    let grad_directions = reader.usize("grad.directions").unwrap_or(6);
    if reader.has("grad.directions") && grad_directions == 0 {
        let line = reader.line_of("grad.directions");
        reader.err(line, "grad.directions must be positive");
    }
    let grad_tolerance = reader.f64("grad.tolerance").unwrap_or(1e-2);
    if reader.has("grad.tolerance") && grad_tolerance <= 0.0 {
        let line = reader.line_of("grad.tolerance");
        reader.err(line, "grad.tolerance must be positive");
    }

    // --- optimize ---
    let opt_method = match reader.raw("optimize.method") {
        Some(e) => match e.value.as_str() {
            "pg" => Some(OptMethod::Pg),
            "msa" => Some(OptMethod::Msa),
            other => {
                reader.err(
                    e.line,
                    format!("expected pg | msa for optimize.method, got `{other}`"),
                );
                None
            }
        },
        None => Some(OptMethod::Pg),
    };
    let opt_rho = reader.f64("optimize.rho").unwrap_or(0.5);
    if reader.has("optimize.rho") && opt_rho <= 0.0 {
        let line = reader.line_of("optimize.rho");
        reader.err(line, "optimize.rho must be positive");
    }
    let opt_max_iters = reader.usize("optimize.max_iters").unwrap_or(50);
    if reader.has("optimize.max_iters") && opt_max_iters == 0 {
        let line = reader.line_of("optimize.max_iters");
        reader.err(line, "optimize.max_iters must be positive");
    }
    let opt_tol = reader.f64("optimize.tol").unwrap_or(1e-3);
    if reader.has("optimize.tol") && opt_tol <= 0.0 {
        let line = reader.line_of("optimize.tol");
        reader.err(line, "optimize.tol must be positive");
    }
    let opt_damping = reader.f64("optimize.damping").unwrap_or(0.0);
    if reader.has("optimize.damping") && !(0.0..1.0).contains(&opt_damping) {
        let line = reader.line_of("optimize.damping");
        reader.err(line, "optimize.damping must lie in [0, 1)");
    }
    let opt_u0_explicit = reader.has("optimize.u0");
    let opt_u0 = match opt_u0_explicit {
        true => reader.tuple_f64::<2>("optimize.u0"),
        false => None,
    };

    // --- verify ---
    let verify_u0_explicit = reader.has("verify.u0");
    let verify_u0 = match verify_u0_explicit {
        true => reader.tuple_f64::<2>("verify.u0"),
        false => None,
    };
    let gap_ratio = reader.f64("verify.gap_ratio").unwrap_or(10.0);
    if reader.has("verify.gap_ratio") && gap_ratio <= 0.0 {
        let line = reader.line_of("verify.gap_ratio");
        reader.err(line, "verify.gap_ratio must be positive");
    }

    // --- regularity ---
    let reg_window = reader.f64("regularity.window").unwrap_or(0.25);
    if reader.has("regularity.window") && !(reg_window > 0.0 && reg_window <= 1.0) {
        let line = reader.line_of("regularity.window");
        reader.err(line, "regularity.window must lie in (0, 1]");
    }

    // --- assemble ---
    let scenario = match (initial_state, reaction, gain, boundary_noise, control_set, cost) {
        (Some(initial_state), Some(reaction), Some(gain), Some(bn), Some(cs), Some(cost))
            if reader.errors.is_empty() =>
        {
            let sc = Scenario {
                n_modes,
                grid_size,
                lambda,
                horizon,
                initial_state,
                reaction,
                gain,
                boundary_noise: bn,
                control_set: cs,
                cost,
            };
            if let Err(e) = sc.check_structure() {
                reader.err(0, format!("invalid scenario: {e}"));
                None
            } else {
                Some(sc)
            }
        }
        _ => None,
    };

    let Some(scenario) = scenario else {
        debug_assert!(!reader.errors.is_empty());
        let mut errors = reader.errors;
        errors.sort_by_key(|e| e.line);
        return Err(Error::Config(errors));
    };

    // Defaults that depend on the scenario: admissible control values.
    let spike_value = match spike_value {
        Some(v) => {
            if !scenario.control_set.contains(v, 1e-12) {
                let line = reader.line_of("spike.value");
                reader.err(line, format!("spike.value = {v:?} is not an admissible control"));
            }
            v
        }
        None => scenario.control_set.project([1.0, 1.0]),
    };
    let opt_u0 = match opt_u0 {
        Some(v) => {
            if !scenario.control_set.contains(v, 1e-12) {
                let line = reader.line_of("optimize.u0");
                reader.err(line, format!("optimize.u0 = {v:?} is not an admissible control"));
            }
            v
        }
        None => scenario.control_set.project([0.0, 0.0]),
    };
    let verify_u0 = match verify_u0 {
        Some(v) => {
            if !scenario.control_set.contains(v, 1e-12) {
                let line = reader.line_of("verify.u0");
                reader.err(line, format!("verify.u0 = {v:?} is not an admissible control"));
            }
            v
        }
        None => scenario.control_set.project([0.0, 0.0]),
    };
    if !reader.errors.is_empty() {
        let mut errors = reader.errors;
        errors.sort_by_key(|e| e.line);
        return Err(Error::Config(errors));
    }
    let kind = kind.expect("kind parse errors already reported");
    let method = opt_method.expect("method parse errors already reported");

    Ok(Config {
        kind,
        seed,
        scenario,
        sim: SimSettings {
            n_steps,
            n_paths,
            base_steps,
            dump_paths,
        },
        adjoint: AdjointParams {
            n_features: features,
            ridge,
            picard,
        },
        spike: SpikeSettings {
            epsilon_ladder,
            t_bar: spike_t_bar,
            value: spike_value,
            refine_modes,
            refine_steps,
        },
        grad: GradSettings {
            theta_ladder,
            directions: grad_directions,
            tolerance: grad_tolerance,
        },
        optimize: OptimizeSettings {
            method,
            rho: opt_rho,
            max_iters: opt_max_iters,
            tol: opt_tol,
            damping: opt_damping,
            u0: opt_u0,
        },
        verify: VerifySettings {
            u0: verify_u0,
            gap_ratio,
        },
        regularity: RegularitySettings { window: reg_window },
    })
}

fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|&v| fmt_float(v)).collect::<Vec<_>>().join(", ")
}

fn fmt_reaction(r: &Reaction) -> String {
    match *r {
        Reaction::Off => "off".into(),
        Reaction::Linear { slope } => format!("linear({})", fmt_float(slope)),
        Reaction::Affine { slope, offset } => {
            format!("affine({}, {})", fmt_float(slope), fmt_float(offset))
        }
        Reaction::TanhSaturated { gain } => format!("tanh({})", fmt_float(gain)),
        Reaction::TruncatedCubic { gain, radius } => {
            format!("cubic({}, {})", fmt_float(gain), fmt_float(radius))
        }
        Reaction::Quadratic { gain } => format!("quadratic({})", fmt_float(gain)),
    }
}

fn fmt_gain(g: &Gain) -> String {
    match *g {
        Gain::Off => "off".into(),
        Gain::Constant { level } => format!("constant({})", fmt_float(level)),
        Gain::Linear { slope } => format!("linear({})", fmt_float(slope)),
        Gain::TanhSaturated { gain } => format!("tanh({})", fmt_float(gain)),
    }
}

/// Render a config in canonical form: fixed key order, resolved defaults,
/// full-precision floats. `parse_config(serialize_config(c)) == c`.
pub fn serialize_config(c: &Config) -> String {
    let mut out = String::new();
    let mut push = |line: String| {
        out.push_str(&line);
        out.push('\n');
    };

    push(format!("experiment.kind = {}", c.kind.as_str()));
    push(format!("experiment.seed = {}", c.seed));
    push(String::new());

    let sc = &c.scenario;
    push(format!("scenario.n_modes = {}", sc.n_modes));
    push(format!("scenario.grid_size = {}", sc.grid_size));
    push(format!("scenario.lambda = {}", fmt_float(sc.lambda)));
    push(format!("scenario.horizon = {}", fmt_float(sc.horizon)));
    push(format!(
        "scenario.initial_state = {}",
        fmt_list(&sc.initial_state.coeffs)
    ));
    push(format!("scenario.reaction = {}", fmt_reaction(&sc.reaction)));
    push(format!("scenario.gain = {}", fmt_gain(&sc.gain)));
    push(format!(
        "scenario.boundary_noise = {}",
        fmt_list(&sc.boundary_noise)
    ));
    match &sc.control_set {
        ControlSet::Box { lo, hi } => push(format!(
            "scenario.control_box = {}",
            fmt_list(&[lo[0], lo[1], hi[0], hi[1]])
        )),
        ControlSet::FiniteSet { values } => {
            let flat: Vec<f64> = values.iter().flatten().copied().collect();
            push(format!("scenario.control_values = {}", fmt_list(&flat)));
        }
    }
    for term in &sc.cost.running {
        match term {
            RunningCost::QuadraticTracking {
                weight,
                target,
                mode_cutoff,
            } => {
                push(format!("cost.tracking_weight = {}", fmt_float(*weight)));
                push(format!("cost.tracking_target = {}", fmt_list(&target.coeffs)));
                if let Some(cut) = mode_cutoff {
                    push(format!("cost.tracking_cutoff = {cut}"));
                }
            }
            RunningCost::LinearState { coeffs } => {
                push(format!("cost.state_linear = {}", fmt_list(&coeffs.coeffs)));
            }
            RunningCost::ControlEnergy { weight } => {
                push(format!("cost.control_energy = {}", fmt_float(*weight)));
            }
            RunningCost::ControlLinear { coeffs } => {
                push(format!("cost.control_linear = {}", fmt_list(coeffs)));
            }
        }
    }
    for term in &sc.cost.terminal {
        match term {
            TerminalCost::QuadraticTracking { weight, target } => {
                push(format!("cost.terminal_weight = {}", fmt_float(*weight)));
                push(format!("cost.terminal_target = {}", fmt_list(&target.coeffs)));
            }
            TerminalCost::LinearState { coeffs } => {
                push(format!("cost.terminal_linear = {}", fmt_list(&coeffs.coeffs)));
            }
        }
    }
    push(String::new());

    push(format!("sim.n_steps = {}", c.sim.n_steps));
    push(format!("sim.n_paths = {}", c.sim.n_paths));
    if let Some(b) = c.sim.base_steps {
        push(format!("sim.base_steps = {b}"));
    }
    push(format!("sim.dump_paths = {}", c.sim.dump_paths));
    push(format!("adjoint.features = {}", c.adjoint.n_features));
    push(format!("adjoint.ridge = {}", fmt_float(c.adjoint.ridge)));
    push(format!("adjoint.picard = {}", c.adjoint.picard));
    if !c.spike.epsilon_ladder.is_empty() {
        push(format!(
            "spike.epsilon_ladder = {}",
            fmt_list(&c.spike.epsilon_ladder)
        ));
    }
    push(format!("spike.t_bar = {}", fmt_float(c.spike.t_bar)));
    push(format!("spike.value = {}", fmt_list(&c.spike.value)));
    if let Some(m) = c.spike.refine_modes {
        push(format!("spike.refine_modes = {m}"));
    }
    if let Some(s) = c.spike.refine_steps {
        push(format!("spike.refine_steps = {s}"));
    }
    push(format!("grad.theta_ladder = {}", fmt_list(&c.grad.theta_ladder)));
    push(format!("grad.directions = {}", c.grad.directions));
    push(format!("grad.tolerance = {}", fmt_float(c.grad.tolerance)));
    push(format!("optimize.method = {}", c.optimize.method.as_str()));
    push(format!("optimize.rho = {}", fmt_float(c.optimize.rho)));
    push(format!("optimize.max_iters = {}", c.optimize.max_iters));
    push(format!("optimize.tol = {}", fmt_float(c.optimize.tol)));
    push(format!("optimize.damping = {}", fmt_float(c.optimize.damping)));
    push(format!("optimize.u0 = {}", fmt_list(&c.optimize.u0)));
    push(format!("verify.u0 = {}", fmt_list(&c.verify.u0)));
    push(format!("verify.gap_ratio = {}", fmt_float(c.verify.gap_ratio)));
    push(format!("regularity.window = {}", fmt_float(c.regularity.window)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expect_errors(text: &str) -> Vec<ConfigError> {
        match parse_config(text) {
            Err(Error::Config(v)) => v,
            other => panic!("expected config errors, got {other:?}"),
        }
    }

    #[test]
    fn minimal_simulate_config_fills_documented_defaults() {
        let cfg = parse_config(
            "experiment.kind = simulate\n\
             scenario.n_modes = 8\n\
             scenario.control_box = -1, -1, 1, 1\n",
        )
        .unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Simulate);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.scenario.n_modes, 8);
        assert_eq!(cfg.scenario.grid_size, 16);
        assert_eq!(cfg.scenario.lambda, 1.0);
        assert_eq!(cfg.scenario.horizon, 1.0);
        assert_eq!(cfg.scenario.reaction, Reaction::Off);
        assert_eq!(cfg.scenario.gain, Gain::Off);
        assert_eq!(cfg.sim.n_steps, 128);
        assert_eq!(cfg.sim.n_paths, 256);
        assert_eq!(cfg.sim.dump_paths, 4);
        assert_eq!(cfg.adjoint.n_features, 8);
        assert_eq!(cfg.adjoint.ridge, 1e-8);
        assert_eq!(cfg.adjoint.picard, 2);
        assert_eq!(cfg.spike.t_bar, 0.75);
        assert_eq!(cfg.spike.value, [1.0, 1.0]);
        assert_eq!(cfg.grad.theta_ladder, vec![0.1, 0.05]);
        assert_eq!(cfg.optimize.method, OptMethod::Pg);
        assert_eq!(cfg.optimize.u0, [0.0, 0.0]);
        assert_eq!(cfg.regularity.window, 0.25);
    }

    #[test]
    fn every_problem_is_reported_with_its_line() {
        let text = "experiment.kind = simulate\n\
                    scenario.n_modes = 8\n\
                    scenario.control_box = -1, -1, 1, 1\n\
                    scenario.lambda = warm\n\
                    no_such.key = 3\n\
                    scenario.lambda = 2.0\n\
                    gibberish line\n";
        let errors = expect_errors(text);
        let find = |line: usize, frag: &str| {
            errors
                .iter()
                .find(|e| e.line == line && e.message.contains(frag))
                .unwrap_or_else(|| panic!("no error at line {line} containing {frag:?}: {errors:?}"))
        };
        find(4, "expected a number for scenario.lambda");
        find(5, "unknown key no_such.key");
        find(6, "duplicate key scenario.lambda");
        find(7, "expected `section.key = value`");
        assert_eq!(errors.len(), 4, "{errors:?}");
    }

    #[test]
    fn duplicate_key_error_names_both_lines() {
        let text = "experiment.kind = simulate\n\
                    scenario.n_modes = 8\n\
                    scenario.control_box = -1, -1, 1, 1\n\
                    sim.n_steps = 32\n\
                    sim.n_steps = 64\n";
        let errors = expect_errors(text);
        assert_eq!(errors.len(), 1);
        assert!(errors[0].message.contains("first set on line 4"), "{errors:?}");
        assert!(errors[0].message.contains("line 5"), "{errors:?}");
        assert_eq!(errors[0].line, 5);
    }

    #[test]
    fn spike_rates_without_ladder_is_a_missing_key() {
        let text = "experiment.kind = spike-rates\n\
                    scenario.preset = linear-lq\n";
        let errors = expect_errors(text);
        assert_eq!(errors.len(), 1, "{errors:?}");
        assert!(errors[0].message.contains("missing key"), "{errors:?}");
        assert!(errors[0].message.contains("epsilon_ladder"), "{errors:?}");
        assert_eq!(errors[0].line, 0);
    }

    #[test]
    fn missing_kind_and_scenario_are_both_reported() {
        let errors = expect_errors("sim.n_steps = 4\n");
        assert!(errors.iter().any(|e| e.message.contains("missing key experiment.kind")));
        assert!(errors.iter().any(|e| e.message.contains("scenario.n_modes")));
        assert!(errors.iter().any(|e| e.message.contains("control")));
    }

    #[test]
    fn preset_resolves_and_explicit_keys_override() {
        let cfg = parse_config(
            "experiment.kind = adjoint\n\
             scenario.preset = linear-lq\n\
             scenario.n_modes = 16\n\
             scenario.lambda = 4.0\n",
        )
        .unwrap();
        assert_eq!(cfg.scenario.n_modes, 16);
        assert_eq!(cfg.scenario.lambda, 4.0);
        assert_eq!(cfg.scenario.reaction, Reaction::Linear { slope: -0.3 });
        assert_eq!(cfg.scenario.boundary_noise, [0.5, 0.5]);
        assert_eq!(cfg.scenario.cost.running.len(), 2);
    }

    #[test]
    fn cost_keys_replace_a_preset_cost_wholesale() {
        let cfg = parse_config(
            "experiment.kind = simulate\n\
             scenario.preset = linear-lq\n\
             scenario.n_modes = 8\n\
             cost.control_energy = 0.5\n",
        )
        .unwrap();
        assert_eq!(
            cfg.scenario.cost.running,
            vec![RunningCost::ControlEnergy { weight: 0.5 }]
        );
        assert!(cfg.scenario.cost.terminal.is_empty());
    }

    #[test]
    fn constructor_values_parse() {
        let cfg = parse_config(
            "experiment.kind = simulate\n\
             scenario.n_modes = 8\n\
             scenario.control_box = -1, -1, 1, 1\n\
             scenario.reaction = affine(0.3, -0.1)\n\
             scenario.gain = constant(0.5)\n",
        )
        .unwrap();
        assert_eq!(
            cfg.scenario.reaction,
            Reaction::Affine {
                slope: 0.3,
                offset: -0.1
            }
        );
        assert_eq!(cfg.scenario.gain, Gain::Constant { level: 0.5 });
        let bad = expect_errors(
            "experiment.kind = simulate\n\
             scenario.n_modes = 8\n\
             scenario.control_box = -1, -1, 1, 1\n\
             scenario.reaction = sigmoid(2)\n",
        );
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].line, 4);
        assert!(bad[0].message.contains("scenario.reaction"));
    }

    #[test]
    fn control_levels_expand_to_the_cross_product() {
        let cfg = parse_config(
            "experiment.kind = simulate\n\
             scenario.n_modes = 8\n\
             scenario.control_levels = -1, 0, 1\n",
        )
        .unwrap();
        match &cfg.scenario.control_set {
            ControlSet::FiniteSet { values } => {
                assert_eq!(values.len(), 9);
                assert_eq!(values[0], [-1.0, -1.0]);
                assert_eq!(values[8], [1.0, 1.0]);
            }
            other => panic!("unexpected set {other:?}"),
        }
    }

    #[test]
    fn conflicting_control_sets_are_rejected() {
        let errors = expect_errors(
            "experiment.kind = simulate\n\
             scenario.n_modes = 8\n\
             scenario.control_box = -1, -1, 1, 1\n\
             scenario.control_levels = -1, 1\n",
        );
        assert_eq!(errors.len(), 1, "{errors:?}");
        assert!(errors[0].message.contains("conflicts"), "{errors:?}");
        assert!(errors[0].message.contains("line 3"), "{errors:?}");
        assert_eq!(errors[0].line, 4);
    }

    #[test]
    fn dependent_cost_keys_require_their_weight() {
        let errors = expect_errors(
            "experiment.kind = simulate\n\
             scenario.n_modes = 8\n\
             scenario.control_box = -1, -1, 1, 1\n\
             cost.tracking_target = 0.1, 0.2\n",
        );
        assert_eq!(errors.len(), 1, "{errors:?}");
        assert!(errors[0].message.contains("requires cost.tracking_weight"));
        assert_eq!(errors[0].line, 4);
    }

    #[test]
    fn inadmissible_control_values_are_rejected() {
        let errors = expect_errors(
            "experiment.kind = verify-smp\n\
             scenario.preset = finite-switch\n\
             scenario.n_modes = 8\n\
             verify.u0 = 0.5, 0.5\n",
        );
        assert_eq!(errors.len(), 1, "{errors:?}");
        assert!(errors[0].message.contains("not an admissible control"));
        assert_eq!(errors[0].line, 4);
    }

    #[test]
    fn round_trip_is_identity_for_a_box_scenario() {
        let cfg = parse_config(
            "experiment.kind = spike-rates\n\
             experiment.seed = 11\n\
             scenario.n_modes = 12\n\
             scenario.grid_size = 32\n\
             scenario.lambda = 2.5\n\
             scenario.horizon = 0.5\n\
             scenario.initial_state = 0.3, -0.125\n\
             scenario.reaction = cubic(0.7, 2.0)\n\
             scenario.gain = tanh(0.4)\n\
             scenario.boundary_noise = 0.5, 0.25\n\
             scenario.control_box = -2, -1, 2, 1\n\
             cost.tracking_weight = 1.5\n\
             cost.tracking_target = 0.1, 0.2, 0.3\n\
             cost.tracking_cutoff = 6\n\
             cost.control_energy = 0.2\n\
             cost.terminal_weight = 0.75\n\
             sim.n_steps = 64\n\
             sim.n_paths = 32\n\
             sim.base_steps = 256\n\
             adjoint.features = 5\n\
             spike.epsilon_ladder = 0.0625, 0.03125\n\
             spike.t_bar = 0.25\n\
             spike.value = 1.5, -0.5\n\
             spike.refine_modes = 24\n\
             spike.refine_steps = 128\n\
             grad.theta_ladder = 0.2, 0.1, 0.05\n\
             optimize.method = msa\n\
             optimize.damping = 0.5\n\
             verify.gap_ratio = 8\n\
             regularity.window = 0.125\n",
        )
        .unwrap();
        let text = serialize_config(&cfg);
        let reparsed = parse_config(&text).unwrap();
        assert_eq!(reparsed, cfg);
        // And serialization itself is a fixed point.
        assert_eq!(serialize_config(&reparsed), text);
    }

    #[test]
    fn round_trip_is_identity_for_a_finite_set_preset() {
        let cfg = parse_config(
            "experiment.kind = optimize\n\
             scenario.preset = finite-switch\n\
             scenario.n_modes = 8\n\
             optimize.method = msa\n",
        )
        .unwrap();
        let text = serialize_config(&cfg);
        let reparsed = parse_config(&text).unwrap();
        assert_eq!(reparsed, cfg);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = parse_config(
            "# a full-line comment\n\
             \n\
             experiment.kind = simulate   # trailing comment\n\
             scenario.n_modes = 8\n\
             scenario.control_box = -1, -1, 1, 1\n",
        )
        .unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Simulate);
    }

    #[test]
    fn unknown_experiment_kind_lists_the_choices() {
        let errors = expect_errors(
            "experiment.kind = anneal\n\
             scenario.n_modes = 8\n\
             scenario.control_box = -1, -1, 1, 1\n",
        );
        assert_eq!(errors.len(), 1);
        assert!(errors[0].message.contains("anneal"));
        assert!(errors[0].message.contains("spike-rates"));
    }
}
