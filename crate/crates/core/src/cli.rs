//! Configuration-driven runs: one structured-text config, every field
//! overridable as `--section.field value`, results written to an output
//! directory together with a manifest that reproduces them.
//!
//! Exit codes: 0 success, 1 invalid configuration, 2 numerical failure,
//! 3 internal error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bohm::{self, EquivarianceOptions, TrajectoryOptions};
use crate::coords::{tau_of_eta, Cosmology};
use crate::freeze::{self, FreezeOptions};
use crate::multimode::{self, MultiModeState};
use crate::schrodinger::grid::{mode_state_in_y, ReferenceSolver};
use crate::schrodinger::{two_level, GridState, ModeState};
use crate::transform::TransformParams;
use crate::Error;

/// Environment variable overriding the number of worker threads.
pub const WORKERS_ENV: &str = "DSBOHM_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Propagate a state and write it at both ends of the window.
    Evolve,
    /// Integrate one guided trajectory.
    Trajectory,
    /// Sample |Phi|^2 and transport the sample through the window.
    Ensemble,
    /// Transported-vs-fresh energy distance against its null distribution.
    Equivariance,
    /// Freezing reports over a grid of wave numbers.
    FreezeScan,
    /// Joint trajectory and freezing reports for several modes.
    Multimode,
    /// Residuals of the transform equations at random points.
    VerifyTransforms,
}

#[derive(Debug, Parser)]
#[command(
    name = "dsbohm",
    version,
    about = "Bohmian mode dynamics on de Sitter space",
    after_help = "Any config field can be set with --section.field VALUE, e.g. --window.eta_end -1e-3"
)]
struct Cli {
    command: Command,
    /// TOML config file; defaults apply to everything it leaves out.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Run on a single worker thread.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    BunchDavies,
    /// Equal-weight (0,0) + (1,0), relative phase `state.phase` at `state.tau_ref`.
    TwoLevel,
    /// Explicit `state.levels`.
    Levels,
    /// Seeded random superposition of levels with `nx + ny <= state.max_level`.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateSpec {
    pub preset: Preset,
    pub n_basis: usize,
    /// Mode time at which the coefficients are given.
    pub tau_ref: f64,
    pub phase: f64,
    /// Rows `[nx, ny, re, im]`.
    pub levels: Vec<(usize, usize, f64, f64)>,
    pub seed: u64,
    pub max_level: usize,
}

impl Default for StateSpec {
    fn default() -> Self {
        Self {
            preset: Preset::BunchDavies,
            n_basis: crate::schrodinger::DEFAULT_BASIS,
            tau_ref: 0.0,
            phase: 0.0,
            levels: Vec::new(),
            seed: 1,
            max_level: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeSpec {
    pub k: f64,
    /// Used by `freeze-scan`; empty means `[k]`.
    pub k_grid: Vec<f64>,
}

impl Default for ModeSpec {
    fn default() -> Self {
        Self {
            k: 1.0,
            k_grid: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSpec {
    /// Explicit `[re, im]`; sampled from `|Phi|^2` at the window start when absent.
    pub z0: Option<[f64; 2]>,
    pub seed: u64,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self { z0: None, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub eta_start: f64,
    pub eta_end: f64,
    /// `freeze-scan` and `multimode` start where the mode time is this, and
    /// end in the deep freeze regime.
    pub tau_start: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            eta_start: -5.0,
            eta_end: -1e-4,
            tau_start: -3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub tol: f64,
    pub epsilon: f64,
    pub eps_node: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            epsilon: 0.01,
            eps_node: crate::schrodinger::DEFAULT_NODE_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSpec {
    pub n_points: usize,
    pub seed: u64,
    pub null_draws: usize,
    pub velocity_scale: f64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            n_points: 10_000,
            seed: 7,
            null_draws: 100,
            velocity_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    /// `[re, im]`
    pub amplitude: [f64; 2],
    /// One eigenlevel `[nx, ny]` per mode.
    pub levels: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiSpec {
    pub modes: Vec<f64>,
    /// Empty means a product of ground states.
    pub terms: Vec<TermSpec>,
    pub n_basis: usize,
    /// One `[re, im]` per mode; sampled jointly when absent.
    pub z0: Option<Vec<[f64; 2]>>,
    pub velocity_scales: Vec<f64>,
}

impl Default for MultiSpec {
    fn default() -> Self {
        let one = [1.0, 0.0];
        Self {
            modes: vec![1.0, 2.0],
            terms: vec![
                TermSpec {
                    amplitude: one,
                    levels: vec![[0, 0], [1, 0]],
                },
                TermSpec {
                    amplitude: one,
                    levels: vec![[1, 0], [0, 0]],
                },
            ],
            n_basis: 8,
            z0: None,
            velocity_scales: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveSpec {
    /// Also propagate on the conformal-time reference grid and report the
    /// L2 difference.
    pub reference_grid: bool,
    pub grid_n: usize,
    pub grid_steps: usize,
}

impl Default for EvolveSpec {
    fn default() -> Self {
        Self {
            reference_grid: false,
            grid_n: 256,
            grid_steps: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub points: usize,
    pub seed: u64,
    /// Both ranges are sampled log-uniformly.
    pub eta_range: [f64; 2],
    pub k_range: [f64; 2],
    pub limit: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            points: 1000,
            seed: 1,
            eta_range: [-100.0, -1e-4],
            k_range: [0.01, 100.0],
            limit: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub hubble: f64,
    pub output_dir: PathBuf,
    pub mode: ModeSpec,
    pub state: StateSpec,
    pub initial: InitialSpec,
    pub window: WindowSpec,
    pub tolerances: Tolerances,
    pub ensemble: EnsembleSpec,
    pub multimode: MultiSpec,
    pub evolve: EvolveSpec,
    pub verify: VerifySpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hubble: 1.0,
            output_dir: PathBuf::from("dsbohm-out"),
            mode: ModeSpec::default(),
            state: StateSpec::default(),
            initial: InitialSpec::default(),
            window: WindowSpec::default(),
            tolerances: Tolerances::default(),
            ensemble: EnsembleSpec::default(),
            multimode: MultiSpec::default(),
            evolve: EvolveSpec::default(),
            verify: VerifySpec::default(),
        }
    }
}

/// A problem with one config field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl RunConfig {
    /// Parses TOML text and applies `(dotted.path, value)` overrides. Values
    /// are read as TOML, falling back to a plain string.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self, Error> {
        let mut root: toml::Value =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (path, raw) in overrides {
            let value = parse_override(raw);
            set_path(&mut root, path, value)?;
        }
        root.try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    fn k_grid(&self) -> Vec<f64> {
        if self.mode.k_grid.is_empty() {
            vec![self.mode.k]
        } else {
            self.mode.k_grid.clone()
        }
    }

    /// Every reason the run would not start; empty when it would.
    pub fn validate(&self, command: Command) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut bad = |field: &str, message: String| {
            out.push(Diagnostic {
                field: field.to_string(),
                message,
            })
        };
        if !(self.hubble > 0.0 && self.hubble.is_finite()) {
            bad("hubble", format!("must be > 0, got {}", self.hubble));
        }
        let ks: Vec<(String, f64)> = match command {
            Command::FreezeScan => self
                .k_grid()
                .iter()
                .map(|&k| ("mode.k_grid".to_string(), k))
                .collect(),
            Command::Multimode => self
                .multimode
                .modes
                .iter()
                .map(|&k| ("multimode.modes".to_string(), k))
                .collect(),
            Command::VerifyTransforms => Vec::new(),
            _ => vec![("mode.k".to_string(), self.mode.k)],
        };
        for (field, k) in ks {
            if k == 0.0 {
                bad(&field, "zero mode is degenerate".to_string());
            } else if !(k > 0.0 && k.is_finite()) {
                bad(&field, format!("must be > 0, got {k}"));
            }
        }
        let uses_window = matches!(
            command,
            Command::Evolve | Command::Trajectory | Command::Ensemble | Command::Equivariance
        );
        if uses_window {
            let w = &self.window;
            if !(w.eta_end < 0.0) {
                bad(
                    "window.eta_end",
                    "eta window must end strictly before 0".to_string(),
                );
            }
            if !(w.eta_start < w.eta_end) {
                bad(
                    "window.eta_start",
                    format!("must be < window.eta_end, got {}", w.eta_start),
                );
            }
        }
        if matches!(command, Command::FreezeScan | Command::Multimode)
            && !(self.window.tau_start < -1.0)
        {
            bad(
                "window.tau_start",
                format!(
                    "must be < -1 to cover the tau window (-1, 0), got {}",
                    self.window.tau_start
                ),
            );
        }
        let t = &self.tolerances;
        if !(t.epsilon > 0.0 && t.epsilon < 1.0) {
            bad(
                "tolerances.epsilon",
                format!("must satisfy 0 < epsilon < 1, got {}", t.epsilon),
            );
        }
        if !(t.tol > 0.0) {
            bad("tolerances.tol", format!("must be > 0, got {}", t.tol));
        }
        if !(t.eps_node > 0.0) {
            bad(
                "tolerances.eps_node",
                format!("must be > 0, got {}", t.eps_node),
            );
        }
        let s = &self.state;
        if s.n_basis == 0 {
            bad("state.n_basis", "must be >= 1".to_string());
        }
        match s.preset {
            Preset::Levels => {
                if s.levels.is_empty() {
                    bad(
                        "state.levels",
                        "the levels preset needs at least one row".to_string(),
                    );
                }
                if let Some(r) = s
                    .levels
                    .iter()
                    .find(|r| r.0 >= s.n_basis || r.1 >= s.n_basis)
                {
                    bad(
                        "state.levels",
                        format!(
                            "level ({}, {}) outside the basis of {}",
                            r.0, r.1, s.n_basis
                        ),
                    );
                }
            }
            Preset::TwoLevel if s.n_basis < 2 => {
                bad("state.n_basis", "two-level needs n_basis >= 2".to_string())
            }
            Preset::Random if s.max_level >= s.n_basis => bad(
                "state.max_level",
                format!("must be < state.n_basis = {}", s.n_basis),
            ),
            _ => {}
        }
        if matches!(command, Command::Ensemble | Command::Equivariance) {
            let e = &self.ensemble;
            if e.n_points == 0 {
                bad("ensemble.n_points", "must be >= 1".to_string());
            }
            if command == Command::Equivariance && e.null_draws < 20 {
                bad(
                    "ensemble.null_draws",
                    "needs at least 20 draws for a 95th percentile".to_string(),
                );
            }
        }
        if command == Command::Multimode {
            let m = &self.multimode;
            if m.modes.is_empty() || m.modes.len() > multimode::MAX_MODES {
                bad(
                    "multimode.modes",
                    format!("needs 1 to {} modes", multimode::MAX_MODES),
                );
            }
            if m.terms.len() > multimode::MAX_RANK {
                bad(
                    "multimode.terms",
                    format!("at most {} terms", multimode::MAX_RANK),
                );
            }
            if m.terms.iter().any(|t| t.levels.len() != m.modes.len()) {
                bad(
                    "multimode.terms",
                    "every term needs one level per mode".to_string(),
                );
            }
            if m.terms
                .iter()
                .flat_map(|t| &t.levels)
                .any(|l| l[0] >= m.n_basis || l[1] >= m.n_basis)
            {
                bad(
                    "multimode.terms",
                    format!("levels must lie inside the basis of {}", m.n_basis),
                );
            }
            if m.z0.as_ref().is_some_and(|z| z.len() != m.modes.len()) {
                bad("multimode.z0", "needs one coordinate per mode".to_string());
            }
        }
        if command == Command::Evolve
            && self.evolve.reference_grid
            && (self.evolve.grid_n < 8 || self.evolve.grid_steps == 0)
        {
            bad(
                "evolve.grid_n",
                "reference grid needs grid_n >= 8 and grid_steps >= 1".to_string(),
            );
        }
        if command == Command::VerifyTransforms {
            let v = &self.verify;
            if !(v.eta_range[0] < v.eta_range[1] && v.eta_range[1] < 0.0) {
                bad(
                    "verify.eta_range",
                    "eta window must end strictly before 0".to_string(),
                );
            }
            if !(v.k_range[0] > 0.0 && v.k_range[0] < v.k_range[1]) {
                bad(
                    "verify.k_range",
                    "must satisfy 0 < k_min < k_max".to_string(),
                );
            }
        }
        out
    }

    /// The single-mode state described by `state` for wave number `k`.
    pub fn build_state(&self, k: f64) -> Result<ModeState, Error> {
        let s = &self.state;
        match s.preset {
            Preset::BunchDavies => ModeState::ground_state(k, s.n_basis),
            Preset::TwoLevel => two_level(k, s.n_basis, s.tau_ref, s.phase),
            Preset::Levels => {
                let levels: Vec<_> = s
                    .levels
                    .iter()
                    .map(|&(x, y, re, im)| (x, y, Complex64::new(re, im)))
                    .collect();
                ModeState::from_levels(k, s.n_basis, s.tau_ref, &levels)
            }
            Preset::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
                let mut levels = Vec::new();
                for nx in 0..=s.max_level {
                    for ny in 0..=s.max_level - nx {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        levels.push((nx, ny, Complex64::new(re, im)));
                    }
                }
                ModeState::from_levels(k, s.n_basis, s.tau_ref, &levels)
            }
        }
    }

    fn initial_z(&self, state: &ModeState, eta: f64) -> Result<Complex64, Error> {
        match self.initial.z0 {
            Some([re, im]) => Ok(Complex64::new(re, im)),
            None => {
                let at_start = state.at_tau(tau_of_eta(eta, state.k())?);
                Ok(bohm::sample_ensemble(&at_start, 1, self.initial.seed)?.points[0])
            }
        }
    }

    fn trajectory_options(&self) -> TrajectoryOptions {
        TrajectoryOptions {
            tol: self.tolerances.tol,
            eps_node: self.tolerances.eps_node,
            velocity_scale: self.ensemble.velocity_scale,
            ..Default::default()
        }
    }

    fn freeze_options(&self) -> FreezeOptions {
        let mut opts = FreezeOptions {
            epsilon: self.tolerances.epsilon,
            tau_start: self.window.tau_start,
            ..Default::default()
        };
        opts.trajectory.tol = self.tolerances.tol;
        opts.trajectory.eps_node = self.tolerances.eps_node;
        opts
    }

    fn build_multimode(&self) -> Result<MultiModeState, Error> {
        let m = &self.multimode;
        let eta = multimode::joint_start(&m.modes, self.window.tau_start);
        if m.terms.is_empty() {
            let factors = m
                .modes
                .iter()
                .map(|&k| ModeState::ground_state(k, m.n_basis))
                .collect::<Result<Vec<_>, _>>()?;
            return MultiModeState::product(factors, eta);
        }
        let mut terms = Vec::with_capacity(m.terms.len());
        for t in &m.terms {
            let factors = t
                .levels
                .iter()
                .zip(&m.modes)
                .map(|(l, &k)| ModeState::level(k, m.n_basis, l[0], l[1]))
                .collect::<Result<Vec<_>, _>>()?;
            terms.push((Complex64::new(t.amplitude[0], t.amplitude[1]), factors));
        }
        MultiModeState::new(&m.modes, terms, eta)
    }
}

fn parse_override(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), Error> {
    let mut node = root;
    let mut parts = path.split('.').peekable();
    while let Some(part) = parts.next() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{path}: {part} is not inside a table")))?;
        if parts.peek().is_none() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(Error::Config(format!("empty override path {path:?}")))
}

/// Splits `--a.b value` / `--a.b=value` overrides from the other arguments.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), Error> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        match arg.strip_prefix("--") {
            Some(key) if key.contains('.') && !key.starts_with('.') => {
                if let Some((k, v)) = key.split_once('=') {
                    overrides.push((k.to_string(), v.to_string()));
                } else {
                    let v = it
                        .next()
                        .ok_or_else(|| Error::Config(format!("--{key} needs a value")))?;
                    overrides.push((key.to_string(), v));
                }
            }
            _ => rest.push(arg),
        }
    }
    Ok((rest, overrides))
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    program: &'static str,
    version: &'static str,
    command: Command,
    config: &'a RunConfig,
    seeds: Seeds,
    outputs: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Seeds {
    initial: u64,
    ensemble: u64,
    state: u64,
    verify: u64,
}

/// Files written by a run, relative to the output directory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOutcome {
    pub outputs: Vec<String>,
    /// One-line summary for the terminal.
    pub summary: String,
    /// Set when the run finished but a check it performs did not pass.
    pub check_failed: bool,
}

struct Out<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Out<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>, Error> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Error> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.into()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> Result<(), Error> {
        let mut w = self.create(name)?;
        w.write_all(text.as_bytes())?;
        w.flush()?;
        Ok(())
    }
}

/// Runs `command` and writes its outputs and `manifest.json` into
/// `config.output_dir`. The configuration must already be valid.
pub fn run(command: Command, config: &RunConfig) -> Result<RunOutcome, Error> {
    fs::create_dir_all(&config.output_dir)?;
    let mut out = Out {
        dir: &config.output_dir,
        files: Vec::new(),
    };
    let cosmo = Cosmology::new(config.hubble)?;
    let (summary, check_failed) = match command {
        Command::Evolve => run_evolve(config, &mut out)?,
        Command::Trajectory => run_trajectory(config, &cosmo, &mut out)?,
        Command::Ensemble => run_ensemble(config, &mut out)?,
        Command::Equivariance => run_equivariance(config, &mut out)?,
        Command::FreezeScan => run_freeze_scan(config, &cosmo, &mut out)?,
        Command::Multimode => run_multimode(config, &cosmo, &mut out)?,
        Command::VerifyTransforms => run_verify(config, &mut out)?,
    };
    let mut outputs = out.files.clone();
    outputs.push("manifest.json".to_string());
    let manifest = Manifest {
        program: "dsbohm",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        seeds: Seeds {
            initial: config.initial.seed,
            ensemble: config.ensemble.seed,
            state: config.state.seed,
            verify: config.verify.seed,
        },
        outputs: outputs.clone(),
    };
    out.json("manifest.json", &manifest)?;
    Ok(RunOutcome {
        outputs,
        summary,
        check_failed,
    })
}

type Summary = (String, bool);

fn run_evolve(config: &RunConfig, out: &mut Out) -> Result<Summary, Error> {
    let k = config.mode.k;
    let (eta0, eta1) = (config.window.eta_start, config.window.eta_end);
    let state = config.build_state(k)?;
    let initial = state.at_tau(tau_of_eta(eta0, k)?);
    let fin = state.at_tau(tau_of_eta(eta1, k)?);
    out.text("state_initial.txt", &initial.to_text())?;
    out.text("state_final.txt", &fin.to_text())?;

    #[derive(Serialize)]
    struct EvolveReport {
        eta_start: f64,
        eta_end: f64,
        tau_start: f64,
        tau_end: f64,
        norm_start: f64,
        norm_end: f64,
        energy_start: f64,
        energy_end: f64,
        tail_mass: f64,
        reference_l2: Option<f64>,
    }
    let reference_l2 = if config.evolve.reference_grid {
        let extent =
            GridState::default_extent(&state, eta0)?.max(GridState::default_extent(&state, eta1)?);
        let grid = GridState::from_mode_state(&initial, eta0, config.evolve.grid_n, extent)?;
        let solver = ReferenceSolver::new(config.evolve.grid_n);
        let evolved = solver.evolve_to(&grid, eta1, config.evolve.grid_steps, k)?;
        Some(evolved.l2_distance(mode_state_in_y(&fin, eta1)?))
    } else {
        None
    };
    let report = EvolveReport {
        eta_start: eta0,
        eta_end: eta1,
        tau_start: initial.tau(),
        tau_end: fin.tau(),
        norm_start: initial.norm_sqr(),
        norm_end: fin.norm_sqr(),
        energy_start: initial.energy(),
        energy_end: fin.energy(),
        tail_mass: fin.tail_mass(),
        reference_l2,
    };
    out.json("evolve.json", &report)?;
    let mut summary = format!(
        "norm drift {:.3e}",
        (report.norm_end - report.norm_start).abs()
    );
    if let Some(d) = reference_l2 {
        summary += &format!(", reference grid L2 difference {d:.3e}");
    }
    Ok((summary, false))
}

fn run_trajectory(config: &RunConfig, cosmo: &Cosmology, out: &mut Out) -> Result<Summary, Error> {
    let k = config.mode.k;
    let window = (config.window.eta_start, config.window.eta_end);
    let state = config.build_state(k)?;
    let z0 = config.initial_z(&state, window.0)?;
    let traj = bohm::integrate_trajectory(&state, z0, window, cosmo, &config.trajectory_options())?;
    let mut w = out.create("trajectory.csv")?;
    traj.write_table(&mut w)?;
    w.flush()?;

    #[derive(Serialize)]
    struct TrajectoryReport {
        k: f64,
        z0: Complex64,
        z_end: Complex64,
        phi_end: Complex64,
        diagnostics: bohm::Diagnostics,
    }
    let last = traj.last();
    out.json(
        "trajectory.json",
        &TrajectoryReport {
            k,
            z0,
            z_end: last.z,
            phi_end: last.phi,
            diagnostics: traj.diagnostics,
        },
    )?;
    Ok((
        format!("{} samples, z(eta_end) = {}", traj.samples.len(), last.z),
        false,
    ))
}

fn run_ensemble(config: &RunConfig, out: &mut Out) -> Result<Summary, Error> {
    let k = config.mode.k;
    let (eta0, eta1) = (config.window.eta_start, config.window.eta_end);
    let state = config.build_state(k)?;
    let (tau0, tau1) = (tau_of_eta(eta0, k)?, tau_of_eta(eta1, k)?);
    let e = bohm::sample_ensemble(
        &state.at_tau(tau0),
        config.ensemble.n_points,
        config.ensemble.seed,
    )?;
    let mut w = out.create("ensemble_start.csv")?;
    e.write_table(&mut w)?;
    w.flush()?;
    let moved = bohm::transport(&state, &e.points, tau0, tau1, &config.trajectory_options());
    let moved_ensemble = bohm::Ensemble {
        points: moved.points,
        seed: e.seed,
        method: "transported along guided trajectories".to_string(),
        tau: tau1,
        proposals: 0,
    };
    let mut w = out.create("ensemble_end.csv")?;
    moved_ensemble.write_table(&mut w)?;
    w.flush()?;
    Ok((
        format!(
            "{} points sampled ({} proposals), {} transported, {} aborted",
            e.points.len(),
            e.proposals,
            moved_ensemble.points.len(),
            moved.aborted
        ),
        false,
    ))
}

fn run_equivariance(config: &RunConfig, out: &mut Out) -> Result<Summary, Error> {
    let k = config.mode.k;
    let state = config.build_state(k)?;
    let opts = EquivarianceOptions {
        n_points: config.ensemble.n_points,
        seed: config.ensemble.seed,
        null_draws: config.ensemble.null_draws,
        trajectory: config.trajectory_options(),
    };
    let report = bohm::equivariance_test(
        &state,
        config.window.eta_start,
        config.window.eta_end,
        &opts,
    )?;
    out.json("equivariance.json", &report)?;
    let verdict = if report.consistent { "pass" } else { "fail" };
    Ok((
        format!(
            "{verdict}: distance {:.4e}, null 95th percentile {:.4e}",
            report.distance, report.null_p95
        ),
        !report.consistent,
    ))
}

fn run_freeze_scan(config: &RunConfig, cosmo: &Cosmology, out: &mut Out) -> Result<Summary, Error> {
    let opts = config.freeze_options();
    let result = freeze::scan_k(
        |k| config.build_state(k),
        |s| config.initial_z(s, crate::coords::eta_of_tau(opts.tau_start, s.k())),
        &config.k_grid(),
        cosmo,
        &opts,
    )?;
    out.json("freeze_reports.json", &result)?;
    let mut w = out.create("error_curves.csv")?;
    for (i, r) in result.reports.iter().enumerate() {
        r.write_error_curve(&mut w, i == 0)?;
    }
    w.flush()?;
    let v = &result.verdict;
    Ok((
        format!(
            "{} reports, C in [{:.3e}, {:.3e}], earliest tau0 {:?}, k-independent: {}",
            result.reports.len(),
            v.c_min,
            v.c_max,
            v.tau0_min,
            v.k_independent
        ),
        !v.k_independent,
    ))
}

fn run_multimode(config: &RunConfig, cosmo: &Cosmology, out: &mut Out) -> Result<Summary, Error> {
    let state = config.build_multimode()?;
    let z0: Vec<Complex64> = match &config.multimode.z0 {
        Some(z) => z.iter().map(|p| Complex64::new(p[0], p[1])).collect(),
        None => multimode::sample_multimode(&state, 1, config.initial.seed)?.remove(0),
    };
    let result = multimode::freeze_scan_multimode(
        &state,
        &z0,
        cosmo,
        &config.freeze_options(),
        &config.multimode.velocity_scales,
        &[],
    )?;
    let mut w = out.create("multimode.csv")?;
    result.trajectory.write_table(&mut w)?;
    w.flush()?;

    #[derive(Serialize)]
    struct MultiReport<'a> {
        z0: &'a [Complex64],
        reports: &'a [freeze::FreezeReport],
        verdict: &'a multimode::JointVerdict,
        diagnostics: bohm::Diagnostics,
    }
    out.json(
        "multimode_reports.json",
        &MultiReport {
            z0: &z0,
            reports: &result.reports,
            verdict: &result.verdict,
            diagnostics: result.trajectory.diagnostics,
        },
    )?;
    let v = &result.verdict;
    Ok((
        format!(
            "joint C {:.3e}, joint tau0 {:?}, satisfied: {}",
            v.c, v.tau0, v.satisfied
        ),
        !v.satisfied,
    ))
}

/// Residual statistics of the transform equations over random points.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualSummary {
    pub points: usize,
    pub max_residual: f64,
    pub worst_eta: f64,
    pub worst_k: f64,
    pub limit: f64,
    pub pass: bool,
}

/// Evaluates the residuals at `spec.points` log-uniform random `(eta, k)`.
pub fn verify_transforms(
    spec: &VerifySpec,
) -> Result<(ResidualSummary, Vec<(f64, f64, f64)>), Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp()
    };
    let mut rows = Vec::with_capacity(spec.points);
    let mut worst = (0.0, 0.0, 0.0);
    for _ in 0..spec.points {
        let eta = -log_uniform(&mut rng, -spec.eta_range[1], -spec.eta_range[0]);
        let k = log_uniform(&mut rng, spec.k_range[0], spec.k_range[1]);
        let r = TransformParams::new(k)?.ode_residuals(eta)?.max_abs();
        if !(r <= worst.0) {
            worst = (r, eta, k);
        }
        rows.push((eta, k, r));
    }
    let summary = ResidualSummary {
        points: spec.points,
        max_residual: worst.0,
        worst_eta: worst.1,
        worst_k: worst.2,
        limit: spec.limit,
        pass: worst.0 < spec.limit,
    };
    Ok((summary, rows))
}

fn run_verify(config: &RunConfig, out: &mut Out) -> Result<Summary, Error> {
    let (summary, rows) = verify_transforms(&config.verify)?;
    let mut w = out.create("residuals.csv")?;
    writeln!(w, "eta,k,max_residual")?;
    for (eta, k, r) in &rows {
        writeln!(w, "{eta:e},{k:e},{r:e}")?;
    }
    w.flush()?;
    out.json("residuals.json", &summary)?;
    Ok((
        format!(
            "max residual {:.3e} over {} points (limit {:.0e})",
            summary.max_residual, summary.points, summary.limit
        ),
        !summary.pass,
    ))
}

/// Config text from a TOML file, or from the `config` record of a run
/// manifest (any `.json` file).
fn read_config_text(path: &Path) -> Result<String, Error> {
    let text = fs::read_to_string(path)?;
    if path.extension().is_none_or(|e| e != "json") {
        return Ok(text);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let mut config = manifest
        .get("config")
        .cloned()
        .ok_or_else(|| Error::Config("manifest has no config record".to_string()))?;
    strip_nulls(&mut config);
    let value = toml::Value::try_from(config).map_err(|e| Error::Config(e.to_string()))?;
    toml::to_string(&value).map_err(|e| Error::Config(e.to_string()))
}

fn strip_nulls(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.retain(|_, x| !x.is_null());
            map.values_mut().for_each(strip_nulls);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_nulls),
        _ => {}
    }
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parse { .. } => 1,
        Error::NodeProximity { .. }
        | Error::NormDrift { .. }
        | Error::TrajectoryAborted { .. }
        | Error::NonConvergence(_)
        | Error::Sampling(_)
        | Error::ZeroNorm => 2,
        _ => 3,
    }
}

fn worker_count(deterministic: bool) -> Result<usize, Error> {
    if deterministic {
        return Ok(1);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v.parse::<usize>().ok().filter(|&n| n >= 1).ok_or_else(|| {
            Error::Config(format!(
                "{WORKERS_ENV} must be a positive integer, got {v:?}"
            ))
        }),
        Err(_) => Ok(0),
    }
}

/// Full command-line entry point; returns the process exit code.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let (rest, overrides) = match split_overrides(args) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let text = match &cli.config {
        Some(path) => match read_config_text(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return 1;
            }
        },
        None => String::new(),
    };
    let mut config = match RunConfig::from_toml(&text, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    if let Some(dir) = cli.out {
        config.output_dir = dir;
    }
    let diagnostics = config.validate(cli.command);
    if !diagnostics.is_empty() {
        for d in &diagnostics {
            eprintln!("invalid config: {d}");
        }
        return 1;
    }
    let workers = match worker_count(cli.deterministic) {
        Ok(n) => n,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start workers: {e}");
            return 3;
        }
    };
    match pool.install(|| run(cli.command, &config)) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            println!(
                "wrote {} files to {}",
                outcome.outputs.len(),
                config.output_dir.display()
            );
            if outcome.check_failed {
                eprintln!("note: the run completed but its check did not pass");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
