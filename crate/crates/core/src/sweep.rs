//! Parameter sweeps, the velocity scaling fit, coupling calibration and the
//! figure presets.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::KernelCache;
use crate::config::{RunConfig, Scenario};
use crate::error::{Error, Result};
use crate::kernel::{KernelConfig, KernelTable, TimeGrid};
use crate::master::{evolve, EvolveOptions, Trajectory};
use crate::output::{Cell, Table};
use crate::params::SystemParams;
use crate::phase::{cycle_phases, eigentrack, phase_series, PhaseInputs, PhaseSeries};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "QFPHASE_WORKERS";

/// Default bound on the number of sweep points.
pub const DEFAULT_MAX_POINTS: usize = 10_000;

/// Worker count from the environment, else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Run `f` on a pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Io(e.to_string()))?;
    Ok(pool.install(f))
}

pub fn table_grid(sc: &Scenario) -> Result<TimeGrid> {
    TimeGrid::covering(sc.table_t_max, sc.dt)
}

/// Kernel table at the scenario velocity.
pub fn kernel_table(sc: &Scenario, cache: &KernelCache) -> Result<KernelTable> {
    cache.table(&sc.kernel, &table_grid(sc)?)
}

fn rest_table(sc: &Scenario, cache: &KernelCache) -> Result<KernelTable> {
    let mut k = sc.kernel.clone();
    k.geometry.u = 0.0;
    cache.table(&k, &table_grid(sc)?)
}

pub fn run_evolve(sc: &Scenario, cache: &KernelCache) -> Result<Trajectory> {
    evolve(&sc.system, &sc.geometry, &kernel_table(sc, cache)?, &sc.evolve)
}

pub fn run_phase(sc: &Scenario, cache: &KernelCache) -> Result<PhaseSeries> {
    let moving = kernel_table(sc, cache)?;
    let at_rest = rest_table(sc, cache)?;
    phase_series(&PhaseInputs {
        system: &sc.system,
        geometry: &sc.geometry,
        moving: &moving,
        at_rest: &at_rest,
        options: sc.evolve,
        restart_each_cycle: sc.restart_each_cycle,
    })
}

/// Value lists to sweep; an empty list keeps the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Axes {
    pub u: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gamma_dip: Vec<f64>,
    pub theta0: Vec<f64>,
    pub gamma_ratio: Vec<f64>,
    pub n_cycles: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub base: RunConfig,
    pub axes: Axes,
    #[serde(default = "default_max_points")]
    pub max_points: usize,
}

fn default_max_points() -> usize {
    DEFAULT_MAX_POINTS
}

/// Coordinates of one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointParams {
    pub u: f64,
    pub alpha: f64,
    pub gamma_dip: f64,
    pub theta0: f64,
    pub gamma_ratio: f64,
    pub n_cycles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        ErrorRecord { kind: e.kind().to_string(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub params: PointParams,
    pub outcome: std::result::Result<PhaseSeries, ErrorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn failures(&self) -> Vec<(usize, &ErrorRecord)> {
        self.points
            .iter()
            .filter_map(|p| p.outcome.as_ref().err().map(|e| (p.index, e)))
            .collect()
    }

    pub fn series(&self) -> impl Iterator<Item = (&PointParams, &PhaseSeries)> {
        self.points.iter().filter_map(|p| p.outcome.as_ref().ok().map(|s| (&p.params, s)))
    }
}

fn params_of(cfg: &RunConfig) -> Result<PointParams> {
    let sc = cfg.scenario()?;
    Ok(PointParams {
        u: sc.geometry.u,
        alpha: sc.geometry.alpha,
        gamma_dip: sc.geometry.gamma_dip,
        theta0: sc.system.theta0,
        gamma_ratio: sc.material.gamma_ratio,
        n_cycles: sc.evolve.n_cycles,
    })
}

impl SweepSpec {
    /// Grid points in row-major order over (u, alpha, gamma_dip, theta0,
    /// gamma_ratio, n_cycles).
    pub fn configs(&self) -> Result<Vec<RunConfig>> {
        let b = &self.base;
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let base_gamma = b.material.resolve()?.gamma_ratio;
        let us = or(&self.axes.u, b.geometry.u);
        let alphas = or(&self.axes.alpha, b.geometry.alpha);
        let gammas = or(&self.axes.gamma_dip, b.geometry.gamma_dip);
        let thetas = or(&self.axes.theta0, b.system.theta0);
        let ratios = or(&self.axes.gamma_ratio, base_gamma);
        let cycles = if self.axes.n_cycles.is_empty() { vec![b.system.n_cycles] } else { self.axes.n_cycles.clone() };
        let total = us.len() * alphas.len() * gammas.len() * thetas.len() * ratios.len() * cycles.len();
        if total > self.max_points {
            return Err(Error::validation("max_points", format!("sweep has {total} points, budget is {}", self.max_points)));
        }
        let mut out = Vec::with_capacity(total);
        for &u in &us {
            for &alpha in &alphas {
                for &gamma_dip in &gammas {
                    for &theta0 in &thetas {
                        for &gamma_ratio in &ratios {
                            for &n in &cycles {
                                let mut c = b.clone();
                                c.geometry.u = u;
                                c.geometry.alpha = alpha;
                                c.geometry.gamma_dip = gamma_dip;
                                c.system.theta0 = theta0;
                                if !self.axes.gamma_ratio.is_empty() {
                                    c.material.gamma_ratio = Some(gamma_ratio);
                                }
                                c.system.n_cycles = n;
                                out.push(c);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Phase series for every configuration; failures are recorded per point.
/// Results come back in input order whatever the scheduling.
/// Fill the cache with every distinct table the configs need, one table at a
/// time, so parallel points find them ready. Failures are left for the points.
fn prewarm(configs: &[RunConfig], cache: &KernelCache, at_rest: bool) {
    for c in configs {
        if let Ok(sc) = c.scenario() {
            let _ = kernel_table(&sc, cache);
            if at_rest {
                let _ = rest_table(&sc, cache);
            }
        }
    }
}

pub fn run_configs(configs: &[RunConfig], cache: &KernelCache, workers: usize) -> Result<SweepResult> {
    let params: Vec<PointParams> = configs.iter().map(params_of).collect::<Result<_>>()?;
    let outcomes: Vec<_> = with_workers(workers, || {
        prewarm(configs, cache, true);
        configs
            .par_iter()
            .map(|c| c.scenario().and_then(|sc| run_phase(&sc, cache)).map_err(|e| ErrorRecord::from(&e)))
            .collect()
    })?;
    Ok(SweepResult {
        points: outcomes
            .into_iter()
            .zip(params)
            .enumerate()
            .map(|(index, (outcome, params))| SweepPoint { index, params, outcome })
            .collect(),
    })
}

pub fn run_sweep(spec: &SweepSpec, cache: &KernelCache, workers: usize) -> Result<SweepResult> {
    run_configs(&spec.configs()?, cache, workers)
}

/// Power-law fit `|y| = prefactor * u^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub exponent: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    pub range: (f64, f64),
}

/// Corrections below this are treated as numerically zero.
pub const CORRECTION_FLOOR: f64 = 1e-13;

/// Least-squares line through `(log u, log |y|)` for the points with
/// `u` in `range`.
pub fn fit_power_law(points: &[(f64, f64)], range: (f64, f64)) -> Result<FitResult> {
    let mut sel: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(u, _)| u > 0.0 && u >= range.0 && u <= range.1)
        .collect();
    sel.sort_by(|a, b| a.0.total_cmp(&b.0));
    sel.dedup_by(|a, b| a.0 == b.0);
    if sel.len() < 4 {
        return Err(Error::InsufficientPoints { needed: 4, got: sel.len() });
    }
    let usable: Vec<(f64, f64)> = sel
        .iter()
        .filter(|p| p.1.abs() > CORRECTION_FLOOR)
        .map(|&(u, y)| (u.ln(), y.abs().ln()))
        .collect();
    if usable.is_empty() {
        return Err(Error::ZeroCorrection);
    }
    if usable.len() < 4 {
        return Err(Error::InsufficientPoints { needed: 4, got: usable.len() });
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = usable.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(FitResult { exponent: slope, prefactor: intercept.exp(), r_squared, range })
}

/// Fit `|delta_phi_velocity|` at cycle `n` against `u` for one orientation of a sweep.
pub fn fit_velocity_scaling(result: &SweepResult, alpha: f64, gamma_dip: f64, n: usize, range: (f64, f64)) -> Result<FitResult> {
    let points: Vec<(f64, f64)> = result
        .series()
        .filter(|(p, _)| (p.alpha - alpha).abs() < 1e-12 && (p.gamma_dip - gamma_dip).abs() < 1e-12)
        .filter_map(|(p, s)| s.at(n).map(|r| (p.u, r.delta_phi_velocity)))
        .collect();
    fit_power_law(&points, range)
}

/// Target `|delta_phi(N) / phi_c(N)| = ratio` at velocity `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub u: f64,
    pub n: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub g: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub target: CalibrationTarget,
    pub g: f64,
    pub ratio: f64,
    pub history: Vec<CalibrationStep>,
}

pub const CALIBRATION_BRACKET: (f64, f64) = (1e-6, 1e-1);

/// Relative correction `|delta_phi(N) / phi_c(N)|` as a function of the coupling.
pub struct CorrectionRatio {
    sc: Scenario,
    unit: KernelTable,
    phi_c: f64,
}

impl CorrectionRatio {
    pub fn new(base: &RunConfig, target: &CalibrationTarget, cache: &KernelCache) -> Result<Self> {
        let mut cfg = base.clone();
        cfg.geometry.u = target.u;
        cfg.system.n_cycles = target.n;
        cfg.system.coupling_g = Some(1.0);
        cfg.system.alpha_pol = None;
        let sc = cfg.scenario()?;
        let unit = kernel_table(&sc, cache)?;
        let mut free = sc.system.clone();
        free.coupling_g = 0.0;
        let zero = unit.scaled(&KernelConfig { coupling_g: 0.0, ..sc.kernel.clone() });
        let phi_c = phases(&free, &sc, &zero)?;
        Ok(CorrectionRatio { sc, unit, phi_c })
    }

    pub fn phi_c(&self) -> f64 {
        self.phi_c
    }

    pub fn eval(&self, g: f64) -> Result<f64> {
        let mut sys = self.sc.system.clone();
        sys.coupling_g = g;
        let table = self.unit.scaled(&KernelConfig { coupling_g: g, ..self.sc.kernel.clone() });
        let phi_g = phases(&sys, &self.sc, &table)?;
        Ok(((phi_g - self.phi_c) / self.phi_c).abs())
    }
}

fn phases(sys: &SystemParams, sc: &Scenario, table: &KernelTable) -> Result<f64> {
    let opts: EvolveOptions = sc.evolve;
    let traj = evolve(sys, &sc.geometry, table, &opts)?;
    let track = eigentrack(&traj)?;
    Ok(*cycle_phases(&track, opts.samples_per_cycle, opts.n_cycles, sc.restart_each_cycle)
        .last()
        .expect("n_cycles >= 1"))
}

/// Log-space bisection on `g` until the relative correction matches the
/// target within `rel_tol` (relative).
pub fn calibrate_coupling(base: &RunConfig, target: CalibrationTarget, rel_tol: f64, cache: &KernelCache) -> Result<Calibration> {
    if !(target.ratio > 0.0 && target.ratio < 1.0) {
        return Err(Error::validation("target.ratio", "must lie in (0, 1)"));
    }
    let f = CorrectionRatio::new(base, &target, cache)?;
    let mut history = Vec::new();
    let mut eval = |g: f64| -> Result<f64> {
        let r = f.eval(g)?;
        history.push(CalibrationStep { g, ratio: r });
        Ok(r)
    };
    // Decade scan up the bracket, checking monotonicity on the way.
    let (g_min, g_max) = CALIBRATION_BRACKET;
    let mut lo = (g_min, eval(g_min)?);
    if lo.1 >= target.ratio {
        return Err(Error::NoBracket { target: target.ratio, g_lo: g_min, g_hi: g_max, r_lo: lo.1, r_hi: f64::NAN });
    }
    let mut hi = None;
    let mut g = g_min;
    while g < g_max {
        g = (g * 10.0).min(g_max);
        let r = eval(g)?;
        if r < lo.1 {
            return Err(Error::NonMonotonic { g });
        }
        if r >= target.ratio {
            hi = Some((g, r));
            break;
        }
        lo = (g, r);
    }
    let Some(mut hi) = hi else {
        return Err(Error::NoBracket { target: target.ratio, g_lo: g_min, g_hi: g_max, r_lo: lo.1, r_hi: lo.1 });
    };
    let mut best = if (hi.1 - target.ratio).abs() < (lo.1 - target.ratio).abs() { hi } else { lo };
    for _ in 0..200 {
        if (best.1 - target.ratio).abs() <= rel_tol * target.ratio {
            break;
        }
        let g = (lo.0 * hi.0).sqrt();
        let r = eval(g)?;
        if r < lo.1 || r > hi.1 {
            return Err(Error::NonMonotonic { g });
        }
        if r < target.ratio {
            lo = (g, r);
        } else {
            hi = (g, r);
        }
        if (r - target.ratio).abs() < (best.1 - target.ratio).abs() {
            best = (g, r);
        }
    }
    Ok(Calibration { target, g: best.0, ratio: best.1, history })
}

/// Figure 4 target: the correction at `u = 0.03`, `N = 20` is 60 %.
pub const REFERENCE_TARGET: CalibrationTarget = CalibrationTarget { u: 0.03, n: 20, ratio: 0.6 };

// Figure presets. Each returns the run configurations and a function turning
// the results into the figure's table.

/// Orientations of the figure 3 curves as `(alpha, gamma_dip)`.
pub const FIG3_ORIENTATIONS: [(f64, f64); 3] = [(0.1, FRAC_PI_2), (FRAC_PI_2, 0.0), (FRAC_PI_2, FRAC_PI_2)];
pub const FIG3_U: [f64; 10] = [0.0, 0.002, 0.004, 0.006, 0.008, 0.01, 0.015, 0.02, 0.025, 0.03];
pub const FIG4_U: [f64; 5] = [0.0, 0.005, 0.01, 0.02, 0.03];
/// `(preset, u)` of the figure 7 curves.
pub const FIG7_CASES: [(&str, f64); 2] = [("nSi", 0.0025), ("Au", 6.4e-5)];

fn figure_base(base: &RunConfig) -> RunConfig {
    let mut c = base.clone();
    c.material = crate::config::MaterialSection::default();
    c.system.delta_ratio = 0.9;
    c.system.theta0 = 44.9f64.to_radians();
    c.geometry.alpha = FRAC_PI_2;
    c.geometry.gamma_dip = 0.0;
    c
}

pub fn fig3_configs(base: &RunConfig) -> Vec<RunConfig> {
    let mut out = Vec::new();
    for &(alpha, gamma_dip) in &FIG3_ORIENTATIONS {
        for &u in &FIG3_U {
            let mut c = figure_base(base);
            c.geometry.alpha = alpha;
            c.geometry.gamma_dip = gamma_dip;
            c.geometry.u = u;
            c.system.n_cycles = 15;
            out.push(c);
        }
    }
    out
}

pub fn fig4_configs(base: &RunConfig) -> Vec<RunConfig> {
    FIG4_U
        .iter()
        .map(|&u| {
            let mut c = figure_base(base);
            c.geometry.u = u;
            c.system.n_cycles = 20;
            c
        })
        .collect()
}

pub fn fig7_configs(base: &RunConfig) -> Vec<RunConfig> {
    FIG7_CASES
        .iter()
        .map(|&(preset, u)| {
            let mut c = base.clone();
            c.material = crate::config::MaterialSection { preset: Some(preset.into()), ..Default::default() };
            c.geometry.u = u;
            c.system.n_cycles = 20;
            c
        })
        .collect()
}

pub fn fig3_table(r: &SweepResult) -> Table {
    let mut t = Table::new(&[
        "u", "alpha", "gamma_dip", "N", "phi_g", "phi_c", "delta_phi", "delta_phi_static", "delta_phi_velocity",
        "ratio_to_static",
    ]);
    for p in &r.points {
        let Ok(s) = &p.outcome else { continue };
        let row = s.rows.last().expect("at least one cycle");
        t.push(vec![
            p.params.u.into(),
            p.params.alpha.into(),
            p.params.gamma_dip.into(),
            row.n.into(),
            row.phi_g.into(),
            row.phi_c.into(),
            row.delta_phi.into(),
            row.delta_phi_static.into(),
            row.delta_phi_velocity.into(),
            (row.delta_phi / row.delta_phi_static).into(),
        ]);
    }
    t
}

pub fn fig4_table(r: &SweepResult) -> Table {
    let mut t = Table::new(&[
        "u", "N", "phi_g", "phi_c", "phi_g_over_phi_c", "delta_phi", "delta_phi_static", "delta_phi_velocity",
    ]);
    for (p, s) in r.series() {
        for row in &s.rows {
            t.push(vec![
                p.u.into(),
                row.n.into(),
                row.phi_g.into(),
                row.phi_c.into(),
                (row.phi_g / row.phi_c).into(),
                row.delta_phi.into(),
                row.delta_phi_static.into(),
                row.delta_phi_velocity.into(),
            ]);
        }
    }
    t
}

pub fn fig7_table(r: &SweepResult, configs: &[RunConfig]) -> Table {
    let mut t = Table::new(&["material", "u", "N", "delta_phi", "delta_phi_static", "velocity_excess"]);
    for p in &r.points {
        let Ok(s) = &p.outcome else { continue };
        let label = configs[p.index].material.preset.clone().unwrap_or_default();
        for row in &s.rows {
            t.push(vec![
                Cell::Text(label.clone()),
                p.params.u.into(),
                row.n.into(),
                row.delta_phi.into(),
                row.delta_phi_static.into(),
                row.velocity_excess().into(),
            ]);
        }
    }
    t
}

/// Curves of figure 2 as `(label, theta0 in degrees, Gamma/omega_pl, alpha, coupled)`.
pub const FIG2_CURVES: [(&str, f64, f64, f64, bool); 5] = [
    ("isolated-45", 45.0, 0.1, FRAC_PI_2, false),
    ("theta45-gamma0.1-parallel", 45.0, 0.1, FRAC_PI_2, true),
    ("theta85-gamma0.05-parallel", 85.0, 0.05, FRAC_PI_2, true),
    ("theta85-gamma0.1-parallel", 85.0, 0.1, FRAC_PI_2, true),
    ("theta85-gamma0.1-alpha0.1", 85.0, 0.1, 0.1, true),
];

/// Output samples per cycle of the figure 2 trajectories.
pub const FIG2_SAMPLES_PER_CYCLE: usize = 64;

pub fn fig2_configs(base: &RunConfig) -> Vec<RunConfig> {
    FIG2_CURVES
        .iter()
        .map(|&(_, theta_deg, gamma, alpha, coupled)| {
            let mut c = figure_base(base);
            c.material.gamma_ratio = Some(gamma);
            c.geometry.alpha = alpha;
            c.geometry.u = 0.007;
            c.system.theta0 = theta_deg.to_radians();
            c.system.n_cycles = 30;
            c.numerics.samples_per_cycle = FIG2_SAMPLES_PER_CYCLE;
            if !coupled {
                c.system.coupling_g = Some(0.0);
                c.system.alpha_pol = None;
            }
            c
        })
        .collect()
}

/// Figure 2 trajectories, one block of rows per curve.
pub fn fig2_table(configs: &[RunConfig], cache: &KernelCache, workers: usize) -> Result<(Table, Vec<(usize, ErrorRecord)>)> {
    let runs: Vec<std::result::Result<Trajectory, ErrorRecord>> = with_workers(workers, || {
        prewarm(configs, cache, false);
        configs
            .par_iter()
            .map(|c| c.scenario().and_then(|sc| run_evolve(&sc, cache)).map_err(|e| ErrorRecord::from(&e)))
            .collect()
    })?;
    let mut t = Table::new(&["curve", "theta0_deg", "gamma_ratio", "alpha", "t", "cycle", "x", "y", "z", "purity"]);
    let mut failures = Vec::new();
    for (i, run) in runs.into_iter().enumerate() {
        let (label, theta_deg, gamma, alpha, _) = FIG2_CURVES[i];
        match run {
            Ok(traj) => {
                for p in &traj.points {
                    let [x, y, z] = p.rho.bloch();
                    t.push(vec![
                        label.into(),
                        theta_deg.into(),
                        gamma.into(),
                        alpha.into(),
                        p.t.into(),
                        p.cycle.into(),
                        x.into(),
                        y.into(),
                        z.into(),
                        p.purity.into(),
                    ]);
                }
            }
            Err(e) => failures.push((i, e)),
        }
    }
    Ok((t, failures))
}
