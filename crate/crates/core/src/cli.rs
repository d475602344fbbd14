//! Configuration-driven experiment runner.
//!
//! Every subcommand reads one JSON [`ExperimentConfig`], computes a table and
//! writes it as CSV together with a `.meta.json` sidecar. CSV files carry a
//! commented header with the config hash, seed and crate version; the wall
//! clock goes only into the sidecar so that repeated runs produce
//! byte-identical CSVs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{self, ExcitationDistributions};
use crate::error::{Error, Result};
use crate::geometry::{ring_layout, C6Table, Species, SpeciesKind};
use crate::hamiltonian::{BlockadeOperator, DecayModel, GateModel};
use crate::readout::{self, ReadoutParams};
use crate::schedule::{self, Envelope};
use crate::{mhz_to_angular, seed, symmetric};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Marker written where a target cannot be reached.
pub const MISSING: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl TimeGrid {
    /// Points `start + k·step` up to and including `stop`.
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|k| self.start + self.step * k as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Ancilla counts to simulate.
    pub n_values: Vec<usize>,
    /// Largest N in the gate-time table.
    pub gate_time_n_max: usize,
    /// Ring radius, µm.
    pub radius_um: f64,
    /// Minimum allowed pair distance, µm.
    pub min_separation_um: f64,
    pub c6: C6Table,
    /// Rydberg lifetimes, µs.
    pub t1_data_us: f64,
    pub t1_ancilla_us: f64,
    /// Drive amplitudes Ω/2π in MHz.
    pub omega_mhz: Vec<f64>,
    pub envelope: Envelope,
    pub trajectories: usize,
    /// Optional cap on simultaneous Rydberg excitations.
    pub rydberg_cap: Option<usize>,
    pub readout: ReadoutParams,
    pub t_meas_grid: TimeGrid,
    pub targets: Vec<f64>,
    /// Atom-resolved records per hypothesis and grid point; 0 disables.
    pub mle_records: usize,
    pub seed: u64,
    /// Output directory; not part of the config hash.
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_values: vec![1, 2, 3, 4, 5],
            gate_time_n_max: 20,
            radius_um: 2.0,
            min_separation_um: 2.0,
            c6: C6Table::default(),
            t1_data_us: Species::rubidium().rydberg_lifetime_t1,
            t1_ancilla_us: Species::cesium().rydberg_lifetime_t1,
            omega_mhz: (4..=15).map(f64::from).collect(),
            envelope: Envelope::Shaped,
            trajectories: dynamics::DEFAULT_TRAJECTORIES,
            rydberg_cap: None,
            readout: ReadoutParams::default(),
            t_meas_grid: TimeGrid {
                start: 0.0,
                stop: 30.0,
                step: 0.5,
            },
            targets: vec![1e-2, 3e-3, 1e-3],
            mle_records: 0,
            seed: 20240,
            out_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return bad("n_values must be non-empty and positive");
        }
        if self.gate_time_n_max == 0 {
            return bad("gate_time_n_max must be positive");
        }
        if self.omega_mhz.is_empty() || self.omega_mhz.iter().any(|w| !(*w > 0.0)) {
            return bad("omega_mhz must be non-empty and positive");
        }
        if !(self.radius_um > 0.0) || !(self.min_separation_um > 0.0) {
            return bad("radius and minimum separation must be positive");
        }
        if !(self.t1_data_us > 0.0) || !(self.t1_ancilla_us > 0.0) {
            return bad("lifetimes must be positive");
        }
        if self.trajectories == 0 {
            return bad("trajectories must be positive");
        }
        if self.rydberg_cap == Some(0) {
            return bad("rydberg_cap must allow at least one excitation");
        }
        let g = self.t_meas_grid;
        if !(g.start >= 0.0) || !(g.step > 0.0) || !(g.stop >= g.start) {
            return bad("t_meas_grid needs start ≥ 0, step > 0 and stop ≥ start");
        }
        if self.targets.is_empty() || self.targets.iter().any(|t| !(*t > 0.0 && *t < 0.5)) {
            return bad("targets must be non-empty and inside (0, 0.5)");
        }
        C6Table::new(self.c6.c6_cs_cs, self.c6.c6_cs_rb)?;
        self.readout.validate()
    }

    /// SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let mut cfg = self.clone();
        cfg.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&cfg).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn data_species(&self) -> Result<Species> {
        Species::new(SpeciesKind::Rb, self.t1_data_us)
    }

    pub fn ancilla_species(&self) -> Result<Species> {
        Species::new(SpeciesKind::Cs, self.t1_ancilla_us)
    }

    /// Ring layout, pairwise blockade and decay for `n` ancillae.
    pub fn gate_model(&self, n: usize) -> Result<GateModel> {
        let layout = ring_layout(
            n,
            self.radius_um,
            self.min_separation_um,
            self.data_species()?,
            self.ancilla_species()?,
        )?;
        let model = GateModel::from_layout(&layout, &self.c6)?;
        Ok(match self.rydberg_cap {
            Some(cap) => model.with_rydberg_cap(cap),
            None => model,
        })
    }
}

/// A CSV table with string cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// CSV text with `#`-prefixed metadata lines first.
    pub fn to_csv(&self, meta: &[(String, String)]) -> String {
        let mut out = String::new();
        for (k, v) in meta {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "{}", self.header.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// Gate-time columns in units of π/Ω.
pub fn cmd_gate_time_table(n_max: usize) -> Result<Table> {
    let mut t = Table::new(&["n", "exact", "approx", "ramp_scaled", "shaped_schedule"]);
    let omega = std::f64::consts::PI;
    for n in 1..=n_max {
        let exact = schedule::exact_gate_time(n, omega);
        let approx = schedule::approx_gate_time(n, omega);
        let shaped = schedule::build_copy_schedule(n, omega, Envelope::Shaped)?.total_time();
        t.push(vec![n.to_string(), num(exact), num(approx), num(4.0 / 3.0 * approx), num(shaped)]);
    }
    Ok(t)
}

/// One (N, Ω) cell of the gate sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub n: usize,
    pub omega_mhz: f64,
    pub gate_time_us: f64,
    pub distributions: ExcitationDistributions,
    pub infidelity: f64,
    pub stderr: f64,
}

/// Runs every configured Ω for `n` ancillae.
pub fn sweep_n(cfg: &ExperimentConfig, n: usize) -> Result<Vec<SweepCell>> {
    let model = cfg.gate_model(n)?;
    cfg.omega_mhz
        .iter()
        .enumerate()
        .map(|(k, &mhz)| {
            let sch = schedule::build_copy_schedule(n, mhz_to_angular(mhz), cfg.envelope)?;
            let cell_seed = seed::derive(cfg.seed, &[n as u64, k as u64]);
            let d = dynamics::excitation_distributions(&model, &sch, cfg.trajectories, cell_seed)?;
            Ok(SweepCell {
                n,
                omega_mhz: mhz,
                gate_time_us: sch.total_time(),
                infidelity: dynamics::gate_infidelity(&d),
                stderr: dynamics::gate_infidelity_stderr(&d),
                distributions: d,
            })
        })
        .collect()
}

/// Index of the smallest infidelity, ties to the lower Ω.
pub fn best_cell(cells: &[SweepCell]) -> usize {
    let mut best = 0;
    for (i, c) in cells.iter().enumerate() {
        let b = &cells[best];
        if c.infidelity < b.infidelity || (c.infidelity == b.infidelity && c.omega_mhz < b.omega_mhz) {
            best = i;
        }
    }
    best
}

/// Gate infidelity per (N, Ω), and the excitation histograms behind it.
pub fn cmd_gate_sweep(cfg: &ExperimentConfig) -> Result<(Table, Table)> {
    let mut t = Table::new(&["n", "omega_mhz", "gate_time_us", "if_gate", "stderr", "best"]);
    let mut dist = Table::new(&["n", "omega_mhz", "logical", "k", "p", "stderr"]);
    for &n in &cfg.n_values {
        let cells = sweep_n(cfg, n)?;
        let best = best_cell(&cells);
        for (i, c) in cells.iter().enumerate() {
            t.push(vec![
                n.to_string(),
                num(c.omega_mhz),
                num(c.gate_time_us),
                num(c.infidelity),
                num(c.stderr),
                u8::from(i == best).to_string(),
            ]);
            for (label, p, se) in [
                ("0", &c.distributions.p0, &c.distributions.stderr0),
                ("1", &c.distributions.p1, &c.distributions.stderr1),
            ] {
                for k in 0..p.len() {
                    dist.push(vec![n.to_string(), num(c.omega_mhz), label.into(), k.to_string(), num(p[k]), num(se[k])]);
                }
            }
        }
    }
    Ok((t, dist))
}

/// Readout curve of one scheme for one N.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub t_meas: f64,
    pub infidelity: f64,
    pub stderr: f64,
}

/// Aggregated infidelity over the configured t_meas grid.
pub fn aggregated_curve(cfg: &ExperimentConfig, d: &ExcitationDistributions) -> Result<Vec<CurvePoint>> {
    cfg.t_meas_grid
        .points()
        .into_par_iter()
        .map(|t| {
            let (v, se) = readout::aggregated_infidelity(d, &cfg.readout.with_t_meas(t))?;
            Ok(CurvePoint {
                t_meas: t,
                infidelity: v,
                stderr: se,
            })
        })
        .collect()
}

/// Atom-resolved infidelity over the grid, `mle_records` per hypothesis.
pub fn mle_curve(cfg: &ExperimentConfig, d: &ExcitationDistributions, label: u64) -> Result<Vec<CurvePoint>> {
    cfg.t_meas_grid
        .points()
        .into_iter()
        .enumerate()
        .map(|(k, t)| {
            let s = seed::derive(cfg.seed, &[0x4d4c45, label, k as u64]);
            let e = readout::mle_infidelity(&d.p0, &d.p1, &cfg.readout.with_t_meas(t), cfg.mle_records, s)?;
            Ok(CurvePoint {
                t_meas: t,
                infidelity: e.infidelity,
                stderr: e.stderr,
            })
        })
        .collect()
}

/// Per-N readout results with the gate-infidelity floor.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutResult {
    pub n: usize,
    pub omega_mhz: f64,
    pub if_gate: f64,
    pub aggregated: Vec<CurvePoint>,
    pub atom_resolved: Option<Vec<CurvePoint>>,
}

pub fn readout_results(cfg: &ExperimentConfig) -> Result<(Vec<ReadoutResult>, Vec<CurvePoint>)> {
    let mut out = Vec::new();
    for &n in &cfg.n_values {
        let cells = sweep_n(cfg, n)?;
        let best = &cells[best_cell(&cells)];
        let d = &best.distributions;
        out.push(ReadoutResult {
            n,
            omega_mhz: best.omega_mhz,
            if_gate: best.infidelity,
            aggregated: aggregated_curve(cfg, d)?,
            atom_resolved: if cfg.mle_records > 0 { Some(mle_curve(cfg, d, n as u64)?) } else { None },
        });
    }
    let baseline = aggregated_curve(cfg, &ExcitationDistributions::ideal(1))?;
    Ok((out, baseline))
}

fn readout_table(results: &[ReadoutResult], baseline: &[CurvePoint]) -> Table {
    let mut t = Table::new(&["t_meas", "if", "stderr", "n", "scheme", "omega_mhz"]);
    let mut add = |pts: &[CurvePoint], n: usize, scheme: &str, omega: String| {
        for p in pts {
            t.push(vec![num(p.t_meas), num(p.infidelity), num(p.stderr), n.to_string(), scheme.into(), omega.clone()]);
        }
    };
    for r in results {
        add(&r.aggregated, r.n, "aggregated", num(r.omega_mhz));
        if let Some(m) = &r.atom_resolved {
            add(m, r.n, "atom_resolved", num(r.omega_mhz));
        }
    }
    add(baseline, 1, "perfect_gate_aggregated", String::new());
    t
}

pub fn cmd_readout_curve(cfg: &ExperimentConfig) -> Result<Table> {
    let (results, baseline) = readout_results(cfg)?;
    Ok(readout_table(&results, &baseline))
}

/// First grid time whose infidelity is at most `target`, if any.
pub fn min_time(curve: &[CurvePoint], target: f64) -> Option<f64> {
    curve.iter().find(|p| p.t_meas > 0.0 && p.infidelity <= target).map(|p| p.t_meas)
}

fn min_time_table(cfg: &ExperimentConfig, results: &[ReadoutResult]) -> Table {
    let mut t = Table::new(&["n", "target", "t_min", "if_gate"]);
    for r in results {
        for &target in &cfg.targets {
            let cell = min_time(&r.aggregated, target).map_or_else(|| MISSING.to_string(), num);
            t.push(vec![r.n.to_string(), num(target), cell, num(r.if_gate)]);
        }
    }
    t
}

pub fn cmd_min_time(cfg: &ExperimentConfig) -> Result<Table> {
    let (results, _) = readout_results(cfg)?;
    Ok(min_time_table(cfg, &results))
}

/// Outcome of one oracle check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

fn check(name: &str, value: f64, threshold: f64) -> Check {
    Check {
        name: name.into(),
        value,
        threshold,
        passed: value <= threshold,
    }
}

/// Quick oracle suites with their measured discrepancies.
pub fn cmd_validate(cfg: &ExperimentConfig) -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    for n in [2, 3] {
        let d = symmetric::compare_full_vs_symmetric(n, 1.0, 20.0)?;
        checks.push(check(&format!("symmetric_vs_full_n{n}"), d, 1e-6));
    }

    // RK4 convergence on a resonant two-level segment
    let model = GateModel::new(BlockadeOperator::zeros(2), DecayModel::none(2))?;
    let rabi_err = |dt: f64| -> Result<f64> {
        use crate::hamiltonian::{basis_index, Level, StateVector};
        let seg = schedule::PulseSegment {
            target: schedule::Transition::AncillaZeroR,
            amplitude: 2.0,
            duration: 1.25,
            envelope: Envelope::Square,
            phase_sign: 1,
        };
        let s = dynamics::integrate_segment(&model, &StateVector::basis(&[Level::One, Level::Zero]), &seg, dt)?;
        let r = s.amplitudes()[basis_index(&[Level::One, Level::Rydberg])];
        Ok((r.im + 2.5f64.sin()).abs() + r.re.abs())
    };
    let ratio = rabi_err(0.05)? / rabi_err(0.025)?;
    checks.push(check("rk4_order_ratio_deviation", (ratio - 16.0).abs(), 2.0));

    let g = readout::lower_incomplete_gamma_int(6, 200.0);
    checks.push(check("gamma_limit_rel_error", ((g - 120.0) / 120.0).abs(), 1e-9));
    let g1 = readout::lower_incomplete_gamma_int(1, 1.7);
    checks.push(check("gamma_first_order_error", (g1 - (1.0 - (-1.7f64).exp())).abs(), 1e-12));

    // analytic single-site law against the Markov sampler
    let params = cfg.readout.with_t_meas(1.0);
    let atom = readout::p_atom_analytic(&ReadoutParams {
        t_bg: f64::INFINITY,
        ..params
    })?;
    let samples = 100_000usize;
    let counts: Vec<u64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng_from(seed::derive(cfg.seed, &[0x5641, i as u64]));
            readout::markov_sample(1, 1, &ReadoutParams { t_bg: f64::INFINITY, ..params }, &mut rng).map(|r| r.total())
        })
        .collect::<Result<_>>()?;
    let emp = crate::stats::histogram(&counts);
    let coarse = |p: &[f64]| crate::stats::coarse_grain(p, 10);
    let tvd = crate::stats::total_variation(&coarse(&emp), &coarse(atom.pmf()));
    checks.push(check("markov_vs_analytic_binned_tvd", tvd, 0.01));

    Ok(checks)
}

#[derive(Debug, Parser)]
#[command(name = "ancilla-readout", version, about = "Rydberg copy-gate and collective readout simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Trajectories per logical state.
    #[arg(long, global = true)]
    pub trajectories: Option<usize>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Exact, closed-form and envelope-stretched gate times.
    GateTimeTable,
    /// Gate infidelity over the Ω sweep.
    GateSweep,
    /// Measurement infidelity versus integration time.
    ReadoutCurve,
    /// Shortest integration time reaching each target infidelity.
    MinTime,
    /// Runs the oracle checks.
    Validate,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.trajectories {
            cfg.trajectories = t;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    file: String,
    command: &'a str,
    config_sha256: String,
    seed: u64,
    version: &'static str,
    started_unix_s: f64,
    wall_clock_s: f64,
    workers: usize,
    config: &'a ExperimentConfig,
}

/// Writes `name` into the output directory with its sidecar.
pub fn write_table(cfg: &ExperimentConfig, command: &str, name: &str, table: &Table, started: (SystemTime, Instant)) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join(name);
    let meta = vec![
        ("config_sha256".to_string(), cfg.hash()),
        ("seed".to_string(), cfg.seed.to_string()),
        ("version".to_string(), VERSION.to_string()),
        ("command".to_string(), command.to_string()),
    ];
    fs::write(&path, table.to_csv(&meta))?;
    let sidecar = Sidecar {
        file: name.to_string(),
        command,
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        version: VERSION,
        started_unix_s: started.0.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
        wall_clock_s: started.1.elapsed().as_secs_f64(),
        workers: rayon::current_num_threads(),
        config: cfg,
    };
    fs::write(path.with_extension("meta.json"), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(path)
}

/// Executes a subcommand; returns the files written.
pub fn execute(command: Command, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let started = (SystemTime::now(), Instant::now());
    let mut written = Vec::new();
    match command {
        Command::GateTimeTable => {
            let t = cmd_gate_time_table(cfg.gate_time_n_max)?;
            written.push(write_table(cfg, "gate-time-table", "gate_time_table.csv", &t, started)?);
        }
        Command::GateSweep => {
            let (t, d) = cmd_gate_sweep(cfg)?;
            written.push(write_table(cfg, "gate-sweep", "gate_sweep.csv", &t, started)?);
            written.push(write_table(cfg, "gate-sweep", "gate_distributions.csv", &d, started)?);
        }
        Command::ReadoutCurve => {
            let t = cmd_readout_curve(cfg)?;
            written.push(write_table(cfg, "readout-curve", "readout_curve.csv", &t, started)?);
        }
        Command::MinTime => {
            let (results, baseline) = readout_results(cfg)?;
            written.push(write_table(cfg, "min-time", "min_time.csv", &min_time_table(cfg, &results), started)?);
            written.push(write_table(cfg, "min-time", "readout_curve.csv", &readout_table(&results, &baseline), started)?);
        }
        Command::Validate => {
            let checks = cmd_validate(cfg)?;
            let mut t = Table::new(&["check", "value", "threshold", "passed"]);
            for c in &checks {
                println!("{} {} value={:e} threshold={:e}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
                t.push(vec![c.name.clone(), num(c.value), num(c.threshold), c.passed.to_string()]);
            }
            written.push(write_table(cfg, "validate", "validate.csv", &t, started)?);
            let failed: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(Error::Validation(failed.join(", ")));
            }
        }
    }
    Ok(written)
}

/// Entry point shared by the binary and tests.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    let cfg = cli.common.resolve()?;
    let command = cli.command;
    match cli.common.workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            pool.install(|| execute(command, &cfg))
        }
        None => execute(command, &cfg),
    }
}
