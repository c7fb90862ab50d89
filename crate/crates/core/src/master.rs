//! Weak-coupling master equation for the two-level atom.
//!
//! ```text
//! rho' = -i[H, rho] - D(t)[sx,[sx,rho]] - f(t)[sx,[sy,rho]] + i zeta(t)[sx,{sy,rho}],   H = Delta sz / 2
//! ```
//!
//! with time-convolutionless coefficients built from the kernel table:
//! `D = int nu(s) cos(Delta s)`, `f = int nu(s) sin(Delta s)`,
//! `zeta = int eta(s) sin(Delta s)`, all over `[0, t]`.
//!
//! Matrices are written in the `(|e>, |g>)` basis, so `|e>` sits at `+z` on
//! the Bloch sphere.

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{dopri5, rk4, IntegrationError, StepControl, StepStats};
use crate::kernel::KernelTable;
use crate::params::{GeometryConfig, SystemParams};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn sigma_x() -> Matrix2<Complex64> {
    Matrix2::new(ZERO, ONE, ONE, ZERO)
}

pub fn sigma_y() -> Matrix2<Complex64> {
    Matrix2::new(ZERO, -I, I, ZERO)
}

pub fn sigma_z() -> Matrix2<Complex64> {
    Matrix2::new(ONE, ZERO, ZERO, -ONE)
}

fn commutator(a: &Matrix2<Complex64>, b: &Matrix2<Complex64>) -> Matrix2<Complex64> {
    a * b - b * a
}

fn anticommutator(a: &Matrix2<Complex64>, b: &Matrix2<Complex64>) -> Matrix2<Complex64> {
    a * b + b * a
}

/// 2x2 density matrix in the `(|e>, |g>)` basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix(pub Matrix2<Complex64>);

impl DensityMatrix {
    /// Pure state `cos(theta0)|g> + sin(theta0)|e>`.
    pub fn initial(theta0: f64) -> Self {
        let (s, c) = theta0.sin_cos();
        let psi = nalgebra::Vector2::new(Complex64::new(s, 0.0), Complex64::new(c, 0.0));
        DensityMatrix(psi * psi.adjoint())
    }

    pub fn from_bloch(r: [f64; 3]) -> Self {
        let [x, y, z] = r;
        DensityMatrix(Matrix2::new(
            Complex64::new(0.5 * (1.0 + z), 0.0),
            Complex64::new(0.5 * x, -0.5 * y),
            Complex64::new(0.5 * x, 0.5 * y),
            Complex64::new(0.5 * (1.0 - z), 0.0),
        ))
    }

    /// `(x, y, z)` with `rho = (1 + x sx + y sy + z sz) / 2`.
    pub fn bloch(&self) -> [f64; 3] {
        let m = &self.0;
        let eg = 0.5 * (m[(0, 1)] + m[(1, 0)].conj());
        [2.0 * eg.re, -2.0 * eg.im, (m[(0, 0)] - m[(1, 1)]).re]
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    /// `Tr rho^2`.
    pub fn purity(&self) -> f64 {
        (self.0 * self.0).trace().re
    }

    /// `max |rho - rho^dagger|` over entries.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.0 - self.0.adjoint();
        d.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Hermitian part rescaled to unit trace.
    pub fn symmetrized(&self) -> Self {
        let h = (self.0 + self.0.adjoint()) * Complex64::new(0.5, 0.0);
        let tr = h.trace().re;
        DensityMatrix(h / Complex64::new(tr, 0.0))
    }

    /// Coherence `<e|rho|g>`.
    pub fn rho_eg(&self) -> Complex64 {
        self.0[(0, 1)]
    }

    pub fn to_array(&self) -> [f64; 8] {
        let m = &self.0;
        [
            m[(0, 0)].re, m[(0, 0)].im, m[(0, 1)].re, m[(0, 1)].im,
            m[(1, 0)].re, m[(1, 0)].im, m[(1, 1)].re, m[(1, 1)].im,
        ]
    }

    pub fn from_array(a: &[f64; 8]) -> Self {
        DensityMatrix(Matrix2::new(
            Complex64::new(a[0], a[1]),
            Complex64::new(a[2], a[3]),
            Complex64::new(a[4], a[5]),
            Complex64::new(a[6], a[7]),
        ))
    }

    /// `U rho U^dagger`.
    pub fn conjugated(&self, u: &Matrix2<Complex64>) -> Self {
        DensityMatrix(u * self.0 * u.adjoint())
    }
}

/// Master-equation coefficients at one time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Coefficients {
    pub t: f64,
    pub d: f64,
    pub f: f64,
    pub zeta: f64,
}

/// Cumulative-trapezoid coefficients on the kernel grid, linearly
/// interpolated in between.
#[derive(Debug, Clone)]
pub struct CoefficientTable {
    dt: f64,
    d: Vec<f64>,
    f: Vec<f64>,
    zeta: Vec<f64>,
}

impl CoefficientTable {
    pub fn new(table: &KernelTable, delta_ratio: f64) -> Self {
        let n = table.values.len();
        let mut d = vec![0.0; n];
        let mut f = vec![0.0; n];
        let mut zeta = vec![0.0; n];
        let integrand = |j: usize| {
            let s = table.values[j];
            let (sn, cs) = (delta_ratio * s.t).sin_cos();
            (s.nu * cs, s.nu * sn, s.eta * sn)
        };
        let mut prev = integrand(0);
        let h = 0.5 * table.dt;
        for j in 1..n {
            let cur = integrand(j);
            d[j] = d[j - 1] + h * (prev.0 + cur.0);
            f[j] = f[j - 1] + h * (prev.1 + cur.1);
            zeta[j] = zeta[j - 1] + h * (prev.2 + cur.2);
            prev = cur;
        }
        CoefficientTable { dt: table.dt, d, f, zeta }
    }

    pub fn t_max(&self) -> f64 {
        (self.d.len() - 1) as f64 * self.dt
    }

    pub fn at(&self, t: f64) -> Result<Coefficients> {
        let t_max = self.t_max();
        if !(t >= 0.0 && t <= t_max * (1.0 + 1e-12)) {
            return Err(Error::OutOfRange { t, t_max });
        }
        Ok(self.interpolate(t))
    }

    fn interpolate(&self, t: f64) -> Coefficients {
        let x = t / self.dt;
        let last = self.d.len() - 1;
        let j = (x.floor() as usize).min(last.saturating_sub(1));
        if last == 0 {
            return Coefficients { t, ..Default::default() };
        }
        let w = x - j as f64;
        let lerp = |v: &[f64]| v[j] + w * (v[j + 1] - v[j]);
        Coefficients {
            t,
            d: lerp(&self.d),
            f: lerp(&self.f),
            zeta: lerp(&self.zeta),
        }
    }
}

/// Coefficients at a single time straight from a kernel table.
pub fn coefficients(table: &KernelTable, delta_ratio: f64, t: f64) -> Result<Coefficients> {
    CoefficientTable::new(table, delta_ratio).at(t)
}

/// Right-hand side of the master equation by explicit matrix algebra.
pub fn rhs(rho: &DensityMatrix, c: &Coefficients, delta_ratio: f64) -> Matrix2<Complex64> {
    let (sx, sy, sz) = (sigma_x(), sigma_y(), sigma_z());
    let r = &rho.0;
    let h = sz * Complex64::new(0.5 * delta_ratio, 0.0);
    let unitary = commutator(&h, r) * (-I);
    let diffusion = commutator(&sx, &commutator(&sx, r)) * Complex64::new(-c.d, 0.0);
    let anomalous = commutator(&sx, &commutator(&sy, r)) * Complex64::new(-c.f, 0.0);
    let dissipation = commutator(&sx, &anticommutator(&sy, r)) * (I * c.zeta);
    unitary + diffusion + anomalous + dissipation
}

/// The same generator written out on Bloch components.
pub fn bloch_rhs(r: [f64; 3], c: &Coefficients, delta_ratio: f64) -> [f64; 3] {
    let [x, y, z] = r;
    [
        -delta_ratio * y,
        delta_ratio * x - 4.0 * c.d * y + 4.0 * c.f * x,
        -4.0 * c.d * z - 4.0 * c.zeta,
    ]
}

/// Settings for [`evolve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub n_cycles: usize,
    pub samples_per_cycle: usize,
    pub rtol: f64,
    pub atol: f64,
    /// Abort when the purity exceeds `1 + purity_slack`.
    pub purity_slack: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            n_cycles: 1,
            samples_per_cycle: 4096,
            rtol: 1e-9,
            atol: 1e-12,
            purity_slack: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    /// `t / tau` with `tau = 2 pi / Delta`.
    pub cycle: f64,
    pub rho: DensityMatrix,
    pub purity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub system: SystemParams,
    pub geometry: GeometryConfig,
    pub table_digest: String,
    pub options: EvolveOptions,
    /// Worst `|rho - rho^dagger|` seen at output samples before symmetrization.
    pub max_hermiticity_error: f64,
    /// Worst `|Tr rho - 1|` at output samples before symmetrization.
    pub max_trace_error: f64,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn period(&self) -> f64 {
        self.meta.system.period()
    }

    /// Index of the sample at the end of cycle `n`.
    pub fn cycle_index(&self, n: usize) -> usize {
        n * self.meta.options.samples_per_cycle
    }
}

/// Output times `tau * j / samples_per_cycle`; cycle boundaries are exact multiples of `tau`.
pub fn sample_times(period: f64, n_cycles: usize, samples_per_cycle: usize) -> Vec<f64> {
    (0..=n_cycles * samples_per_cycle)
        .map(|j| period * (j as f64 / samples_per_cycle as f64))
        .collect()
}

fn check_inputs(system: &SystemParams, table: &KernelTable, opts: &EvolveOptions) -> Result<()> {
    system.validate()?;
    if opts.n_cycles == 0 {
        return Err(Error::validation("n_cycles", "must be >= 1"));
    }
    if opts.samples_per_cycle < 2 {
        return Err(Error::validation("numerics.samples_per_cycle", "must be >= 2"));
    }
    let t_end = system.period() * opts.n_cycles as f64;
    if t_end > table.t_max * (1.0 + 1e-12) {
        return Err(Error::OutOfRange { t: t_end, t_max: table.t_max });
    }
    Ok(())
}

struct SampleCheck {
    period: f64,
    slack: f64,
    herm: f64,
    trace: f64,
    points: Vec<TrajectoryPoint>,
}

impl SampleCheck {
    fn push(&mut self, t: f64, y: &[f64; 8]) -> Result<()> {
        let raw = DensityMatrix::from_array(y);
        self.herm = self.herm.max(raw.hermiticity_error());
        self.trace = self.trace.max((raw.trace() - ONE).norm());
        let rho = raw.symmetrized();
        let purity = rho.purity();
        if purity > 1.0 + self.slack {
            return Err(Error::PurityExcursion { t, purity });
        }
        self.points.push(TrajectoryPoint { t, cycle: t / self.period, rho, purity });
        Ok(())
    }
}

/// Integrate the master equation from `cos(theta0)|g> + sin(theta0)|e>` over
/// `n_cycles` unitary periods with the adaptive Dormand-Prince pair.
pub fn evolve(
    system: &SystemParams,
    geometry: &GeometryConfig,
    table: &KernelTable,
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    check_inputs(system, table, opts)?;
    let coeffs = CoefficientTable::new(table, system.delta_ratio);
    let delta = system.delta_ratio;
    let period = system.period();
    let times = sample_times(period, opts.n_cycles, opts.samples_per_cycle);
    let rho0 = DensityMatrix::initial(system.theta0);
    let mut check = SampleCheck {
        period,
        slack: opts.purity_slack,
        herm: 0.0,
        trace: 0.0,
        points: Vec::with_capacity(times.len()),
    };
    let control = StepControl {
        rtol: opts.rtol,
        atol: opts.atol,
        h_max: period / 8.0,
        ..Default::default()
    };
    let result = dopri5(
        |t, y| {
            let c = coeffs.interpolate(t.min(coeffs.t_max()));
            DensityMatrix(rhs(&DensityMatrix::from_array(y), &c, delta)).to_array()
        },
        0.0,
        rho0.to_array(),
        &times,
        &control,
        |_, t, y| check.push(t, y),
    );
    let stats: StepStats = match result {
        Ok(s) => s,
        Err(IntegrationError::Sink(e)) => return Err(e),
        Err(IntegrationError::Underflow { t, h }) => {
            let c = coeffs.interpolate(t.min(coeffs.t_max()));
            return Err(Error::StepSizeUnderflow { t, h, d: c.d, f: c.f, zeta: c.zeta });
        }
    };
    Ok(Trajectory {
        points: check.points,
        meta: TrajectoryMeta {
            system: system.clone(),
            geometry: geometry.clone(),
            table_digest: table.digest(),
            options: *opts,
            max_hermiticity_error: check.herm,
            max_trace_error: check.trace,
            steps_accepted: stats.accepted,
            steps_rejected: stats.rejected,
        },
    })
}

/// Fixed-step RK4 reference solution with `steps_per_sample` steps between
/// consecutive output samples.
pub fn evolve_reference(
    system: &SystemParams,
    geometry: &GeometryConfig,
    table: &KernelTable,
    opts: &EvolveOptions,
    steps_per_sample: usize,
) -> Result<Trajectory> {
    check_inputs(system, table, opts)?;
    let coeffs = CoefficientTable::new(table, system.delta_ratio);
    let delta = system.delta_ratio;
    let period = system.period();
    let n_samples = opts.n_cycles * opts.samples_per_cycle;
    let h = period / (opts.samples_per_cycle * steps_per_sample) as f64;
    let mut check = SampleCheck {
        period,
        slack: opts.purity_slack,
        herm: 0.0,
        trace: 0.0,
        points: Vec::with_capacity(n_samples + 1),
    };
    let mut failure = None;
    rk4(
        |t, y| {
            let c = coeffs.interpolate(t.min(coeffs.t_max()));
            DensityMatrix(rhs(&DensityMatrix::from_array(y), &c, delta)).to_array()
        },
        0.0,
        DensityMatrix::initial(system.theta0).to_array(),
        h,
        n_samples * steps_per_sample,
        |n, _, y| {
            if n % steps_per_sample == 0 && failure.is_none() {
                let j = n / steps_per_sample;
                let t = period * (j as f64 / opts.samples_per_cycle as f64);
                if let Err(e) = check.push(t, y) {
                    failure = Some(e);
                }
            }
        },
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(Trajectory {
        points: check.points,
        meta: TrajectoryMeta {
            system: system.clone(),
            geometry: geometry.clone(),
            table_digest: table.digest(),
            options: *opts,
            max_hermiticity_error: check.herm,
            max_trace_error: check.trace,
            steps_accepted: n_samples * steps_per_sample,
            steps_rejected: 0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{tabulate, KernelConfig};
    use crate::params::MaterialParams;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn geometry(u: f64, alpha: f64) -> GeometryConfig {
        GeometryConfig { alpha, gamma_dip: 0.0, gap_a: 1e-9, u }
    }

    fn system(g: f64, theta0: f64) -> SystemParams {
        SystemParams { delta_ratio: 0.9, theta0, coupling_g: g, alpha_pol: None }
    }

    fn table_for(g: f64, geo: &GeometryConfig, cycles: f64) -> KernelTable {
        let cfg = KernelConfig::new(MaterialParams::preset("paper-metal").unwrap(), geo.clone(), g);
        tabulate(&cfg, cycles * 2.0 * PI / 0.9 + 0.1, 2.0 * PI / 200.0).unwrap()
    }

    fn random_state(x: f64, y: f64, z: f64) -> DensityMatrix {
        let n = (x * x + y * y + z * z).sqrt().max(1.0);
        DensityMatrix::from_bloch([x / n, y / n, z / n])
    }

    #[test]
    fn initial_state_geometry() {
        let rho = DensityMatrix::initial(PI / 6.0);
        let [x, y, z] = rho.bloch();
        // Polar angle from the ground pole is 2 theta0.
        assert!((z + (PI / 3.0).cos()).abs() < 1e-15);
        assert!((x - (PI / 3.0).sin()).abs() < 1e-15);
        assert!(y.abs() < 1e-15);
        assert!((rho.purity() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ground_state_is_stationary_without_coupling() {
        let g = DensityMatrix::from_bloch([0.0, 0.0, -1.0]);
        let d = rhs(&g, &Coefficients::default(), 0.9);
        assert!(d.iter().all(|z| z.norm() == 0.0));
    }

    proptest! {
        #[test]
        fn rhs_traceless_hermitian_and_matches_bloch(
            x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
            d in -1.0f64..1.0, f in -1.0f64..1.0, zeta in -1.0f64..1.0, delta in 0.1f64..2.0
        ) {
            let rho = random_state(x, y, z);
            let c = Coefficients { t: 0.0, d, f, zeta };
            let m = rhs(&rho, &c, delta);
            prop_assert!(m.trace().norm() < 1e-14);
            prop_assert!((m - m.adjoint()).iter().all(|e| e.norm() < 1e-14));
            let from_matrix = DensityMatrix(m + Matrix2::identity() * Complex64::new(0.5, 0.0)).bloch();
            let expected = bloch_rhs(rho.bloch(), &c, delta);
            for k in 0..3 {
                prop_assert!((from_matrix[k] - expected[k]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn coefficients_start_at_zero_and_grow_linearly() {
        let geo = geometry(0.007, FRAC_PI_2);
        let table = table_for(1e-3, &geo, 2.0);
        let ct = CoefficientTable::new(&table, 0.9);
        let c0 = ct.at(0.0).unwrap();
        assert_eq!((c0.d, c0.f, c0.zeta), (0.0, 0.0, 0.0));
        let nu0 = table.values[0].nu;
        for &t in &[0.001, 0.005, 0.01 / 0.9] {
            let c = ct.at(t).unwrap();
            assert!(((c.d - nu0 * t) / (nu0 * t)).abs() < 0.01, "t = {t}");
        }
        assert!(matches!(ct.at(1e6), Err(Error::OutOfRange { .. })));
        let zero = table_for(0.0, &geo, 2.0);
        let cz = CoefficientTable::new(&zero, 0.9);
        for j in 0..50 {
            let c = cz.at(j as f64 * 0.2).unwrap();
            assert_eq!((c.d, c.f, c.zeta), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn uncoupled_evolution_is_unitary_precession() {
        let geo = geometry(0.0, FRAC_PI_2);
        let table = table_for(0.0, &geo, 3.0);
        let sys = system(0.0, 44.9f64.to_radians());
        let opts = EvolveOptions { n_cycles: 3, samples_per_cycle: 256, ..Default::default() };
        let traj = evolve(&sys, &geo, &table, &opts).unwrap();
        let r0 = traj.points[0].rho.bloch();
        for p in &traj.points {
            assert!((p.purity - 1.0).abs() < 1e-8, "{}", p.purity - 1.0);
            let [x, y, z] = p.rho.bloch();
            let (s, c) = (0.9 * p.t).sin_cos();
            assert!((x - (r0[0] * c - r0[1] * s)).abs() < 1e-8);
            assert!((y - (r0[0] * s + r0[1] * c)).abs() < 1e-8);
            assert!((z - r0[2]).abs() < 1e-10);
        }
        let end = traj.points[traj.cycle_index(1)].rho.bloch();
        for k in 0..3 {
            assert!((end[k] - r0[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn coupled_evolution_conserves_trace_and_loses_purity() {
        let geo = geometry(0.007, FRAC_PI_2);
        let table = table_for(1e-3, &geo, 5.0);
        let sys = system(1e-3, 44.9f64.to_radians());
        let opts = EvolveOptions { n_cycles: 5, samples_per_cycle: 128, ..Default::default() };
        let traj = evolve(&sys, &geo, &table, &opts).unwrap();
        assert!(traj.meta.max_trace_error < 1e-9);
        assert!(traj.meta.max_hermiticity_error < 1e-10);
        let early = traj.points[8].purity;
        let last = traj.points.last().unwrap().purity;
        assert!(early < 1.0 && last < early);
        for w in traj.points.windows(2) {
            assert!(w[1].t > w[0].t);
        }
    }

    #[test]
    fn adaptive_agrees_with_rk4_reference() {
        let geo = geometry(0.007, FRAC_PI_2);
        let table = table_for(1e-3, &geo, 3.0);
        let sys = system(1e-3, 44.9f64.to_radians());
        let opts = EvolveOptions { n_cycles: 3, samples_per_cycle: 100, ..Default::default() };
        let adaptive = evolve(&sys, &geo, &table, &opts).unwrap();
        let coarse = evolve_reference(&sys, &geo, &table, &opts, 4).unwrap();
        let fine = evolve_reference(&sys, &geo, &table, &opts, 8).unwrap();
        let last = adaptive.points.len() - 1;
        let a = adaptive.points[last].rho.bloch();
        let c = coarse.points[last].rho.bloch();
        let f = fine.points[last].rho.bloch();
        for k in 0..3 {
            let spread = (c[k] - f[k]).abs();
            assert!(spread < 1e-8, "rk4 self-convergence {spread}");
            assert!((a[k] - f[k]).abs() < spread + 1e-8);
        }
    }

    #[test]
    fn coverage_is_checked() {
        let geo = geometry(0.0, FRAC_PI_2);
        let table = table_for(0.0, &geo, 1.0);
        let opts = EvolveOptions { n_cycles: 4, samples_per_cycle: 16, ..Default::default() };
        assert!(matches!(
            evolve(&system(0.0, 0.5), &geo, &table, &opts),
            Err(Error::OutOfRange { .. })
        ));
    }
}
