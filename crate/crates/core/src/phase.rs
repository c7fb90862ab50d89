//! Open-system geometric phase
//!
//! ```text
//! phi_g = arg sum_k sqrt(e_k(tau) e_k(0)) <k(0)|k(tau)> exp(-int_0^tau <k|d/dt|k> dt)
//! ```
//!
//! from the instantaneous spectrum of a density-matrix trajectory. The
//! exponential is evaluated as the Pancharatnam chain of overlaps between
//! consecutive samples, which needs no gauge fixing.

use std::f64::consts::PI;

use nalgebra::Vector2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelSample, KernelTable};
use crate::master::{evolve, DensityMatrix, EvolveOptions, Trajectory};
use crate::params::{GeometryConfig, SystemParams};

pub type Spinor = Vector2<Complex64>;

/// Spectra closer than this are treated as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-12;
/// Minimum same-branch overlap between consecutive samples.
pub const MIN_OVERLAP: f64 = 0.99;
/// Eigenvalues below this are rounding noise (a pure state's second
/// eigenvalue) and get zero weight; the square-root weights would otherwise
/// turn `1e-16` noise into phase errors near `1e-9`.
pub const EIGENVALUE_FLOOR: f64 = 1e-13;

fn weight(value: f64) -> f64 {
    if value < EIGENVALUE_FLOOR {
        0.0
    } else {
        value
    }
}

/// Eigenvalues (descending) and unit eigenvectors of a Hermitian 2x2 matrix.
pub fn eigen2(rho: &DensityMatrix) -> ([f64; 2], [Spinor; 2]) {
    let m = &rho.0;
    let a = m[(0, 0)].re;
    let d = m[(1, 1)].re;
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)].conj());
    let mean = 0.5 * (a + d);
    let half = 0.5 * (a - d);
    let r = half.hypot(b.norm());
    let values = [mean + r, mean - r];
    let vector = |lambda: f64| {
        // Rows of (rho - lambda) give two candidate null vectors; keep the
        // better conditioned one.
        let v1 = Spinor::new(b, Complex64::new(lambda - a, 0.0));
        let v2 = Spinor::new(Complex64::new(lambda - d, 0.0), b.conj());
        let v = if v1.norm() >= v2.norm() { v1 } else { v2 };
        let n = v.norm();
        if n > 0.0 {
            v / Complex64::new(n, 0.0)
        } else {
            Spinor::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
        }
    };
    let v0 = vector(values[0]);
    // The second eigenvector is the orthogonal complement of the first.
    let v1 = Spinor::new(-v0[1].conj(), v0[0].conj());
    (values, [v0, v1])
}

/// Instantaneous spectrum along a trajectory with branches followed by
/// continuity. Eigenvector phases are left as produced by the solver.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenTrack {
    pub times: Vec<f64>,
    /// `values[j][k]`: eigenvalue of branch `k` at sample `j`.
    pub values: Vec<[f64; 2]>,
    pub vectors: Vec<[Spinor; 2]>,
}

impl EigenTrack {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn overlap(a: &Spinor, b: &Spinor) -> Complex64 {
    a.dotc(b)
}

/// Eigen-decompose every state, matching branches to the previous sample by
/// maximal overlap.
pub fn eigentrack_states(times: &[f64], states: &[DensityMatrix]) -> Result<EigenTrack> {
    assert_eq!(times.len(), states.len());
    let mut track = EigenTrack {
        times: times.to_vec(),
        values: Vec::with_capacity(states.len()),
        vectors: Vec::with_capacity(states.len()),
    };
    for (j, rho) in states.iter().enumerate() {
        let (mut vals, mut vecs) = eigen2(rho);
        let gap = vals[0] - vals[1];
        if gap < DEGENERACY_GAP {
            return Err(Error::DegenerateSpectrum { index: j, t: times[j], gap });
        }
        if let Some(prev) = track.vectors.last() {
            let keep = overlap(&prev[0], &vecs[0]).norm() + overlap(&prev[1], &vecs[1]).norm();
            let swap = overlap(&prev[0], &vecs[1]).norm() + overlap(&prev[1], &vecs[0]).norm();
            if swap > keep {
                vals.swap(0, 1);
                vecs.swap(0, 1);
            }
            let worst = overlap(&prev[0], &vecs[0])
                .norm()
                .min(overlap(&prev[1], &vecs[1]).norm());
            if worst < MIN_OVERLAP {
                return Err(Error::OverlapBreak { index: j, t: times[j], overlap: worst });
            }
        }
        track.values.push(vals);
        track.vectors.push(vecs);
    }
    Ok(track)
}

pub fn eigentrack(traj: &Trajectory) -> Result<EigenTrack> {
    let times: Vec<f64> = traj.points.iter().map(|p| p.t).collect();
    let states: Vec<DensityMatrix> = traj.points.iter().map(|p| p.rho).collect();
    eigentrack_states(&times, &states)
}

/// Unwrapped geometric phase at every sample from `start` onward, with the
/// chain anchored at `start` (so the first entry is 0).
pub fn phase_history_from(track: &EigenTrack, start: usize) -> Vec<f64> {
    let n = track.len();
    let mut out = Vec::with_capacity(n.saturating_sub(start));
    if start >= n {
        return out;
    }
    let first = &track.vectors[start];
    let w0 = track.values[start];
    let mut chain = [Complex64::new(1.0, 0.0); 2];
    let mut prev_phase = 0.0;
    for j in start..n {
        if j > start {
            for (k, c) in chain.iter_mut().enumerate() {
                let ov = overlap(&track.vectors[j][k], &track.vectors[j - 1][k]);
                let m = ov.norm();
                if m > 0.0 {
                    *c *= ov / m;
                }
            }
        }
        let mut sum = Complex64::new(0.0, 0.0);
        for k in 0..2 {
            let w = (weight(track.values[j][k]) * weight(w0[k])).sqrt();
            sum += overlap(&first[k], &track.vectors[j][k]) * chain[k] * w;
        }
        let raw = sum.arg();
        let phase = if j == start { raw } else { unwrap_near(raw, prev_phase) };
        out.push(phase);
        prev_phase = phase;
    }
    out
}

/// Unwrapped geometric phase at every sample, accumulated from `t = 0`.
pub fn phase_history(track: &EigenTrack) -> Vec<f64> {
    phase_history_from(track, 0)
}

/// Geometric phase accumulated from the first sample up to sample `up_to`.
pub fn geometric_phase(track: &EigenTrack, up_to: usize) -> Result<f64> {
    if up_to >= track.len() {
        let t_max = track.times.last().copied().unwrap_or(0.0);
        return Err(Error::OutOfRange { t: up_to as f64, t_max });
    }
    Ok(phase_history_from(&truncate(track, up_to + 1), 0)[up_to])
}

fn truncate(track: &EigenTrack, n: usize) -> EigenTrack {
    EigenTrack {
        times: track.times[..n].to_vec(),
        values: track.values[..n].to_vec(),
        vectors: track.vectors[..n].to_vec(),
    }
}

/// `value + 2 pi m` closest to `reference`.
pub fn unwrap_near(value: f64, reference: f64) -> f64 {
    value + 2.0 * PI * ((reference - value) / (2.0 * PI)).round()
}

/// Phase at each cycle boundary `N = 1..=n_cycles`.
///
/// Continuous mode follows one chain from `t = 0`; restart mode evaluates
/// each cycle separately from its own starting state and sums them.
pub fn cycle_phases(track: &EigenTrack, samples_per_cycle: usize, n_cycles: usize, restart: bool) -> Vec<f64> {
    if restart {
        let mut total = 0.0;
        (0..n_cycles)
            .map(|c| {
                let start = c * samples_per_cycle;
                let sub = truncate(track, start + samples_per_cycle + 1);
                total += phase_history_from(&sub, start)[samples_per_cycle];
                total
            })
            .collect()
    } else {
        let history = phase_history(track);
        (1..=n_cycles).map(|n| history[n * samples_per_cycle]).collect()
    }
}

/// Unitary precession phase `pi (1 - cos theta)` for a polar angle `theta`.
pub fn unitary_phase(theta: f64) -> f64 {
    PI * (1.0 - theta.cos())
}

/// One cycle boundary of a [`PhaseSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub n: usize,
    pub phi_g: f64,
    pub phi_c: f64,
    pub delta_phi: f64,
    pub delta_phi_static: f64,
    pub delta_phi_velocity: f64,
}

impl PhaseRow {
    /// `|dphi_u| - |dphi_{u=0}|`, the velocity observable compared across materials.
    pub fn velocity_excess(&self) -> f64 {
        self.delta_phi.abs() - self.delta_phi_static.abs()
    }

    pub fn relative_correction(&self) -> f64 {
        self.delta_phi / self.phi_c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMeta {
    pub coupled_table: String,
    pub static_table: String,
    pub uncoupled_table: String,
    pub theta0: f64,
    pub bloch_polar_angle: f64,
    /// `pi (1 - cos theta)` per cycle with `theta` the Bloch polar angle.
    pub phi_c_bloch_formula: f64,
    /// The same formula evaluated at the amplitude angle `theta0`.
    pub phi_c_amplitude_formula: f64,
    pub restart_each_cycle: bool,
    pub options: EvolveOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSeries {
    pub rows: Vec<PhaseRow>,
    pub meta: PhaseMeta,
}

impl PhaseSeries {
    pub fn at(&self, n: usize) -> Option<&PhaseRow> {
        self.rows.iter().find(|r| r.n == n)
    }
}

/// Inputs of [`phase_series`]: the coupled table at the run velocity and the
/// coupled table at `u = 0`, both on the same grid.
#[derive(Debug, Clone, Copy)]
pub struct PhaseInputs<'a> {
    pub system: &'a SystemParams,
    pub geometry: &'a GeometryConfig,
    pub moving: &'a KernelTable,
    pub at_rest: &'a KernelTable,
    pub options: EvolveOptions,
    pub restart_each_cycle: bool,
}

fn zero_table(like: &KernelTable) -> KernelTable {
    KernelTable {
        format_version: like.format_version,
        config_hash: format!("uncoupled:{}", like.dt),
        dt: like.dt,
        t_max: like.t_max,
        coupling_g: 0.0,
        values: like
            .values
            .iter()
            .map(|s| KernelSample { t: s.t, nu: 0.0, eta: 0.0 })
            .collect(),
    }
}

fn run_phases(
    system: &SystemParams,
    geometry: &GeometryConfig,
    table: &KernelTable,
    opts: &EvolveOptions,
    restart: bool,
) -> Result<Vec<f64>> {
    let traj = evolve(system, geometry, table, opts)?;
    let track = eigentrack(&traj)?;
    Ok(cycle_phases(&track, opts.samples_per_cycle, opts.n_cycles, restart))
}

/// Coupled run at `u`, coupled run at `u = 0` and the uncoupled reference,
/// executed concurrently and combined per cycle.
pub fn phase_series(inputs: &PhaseInputs) -> Result<PhaseSeries> {
    let PhaseInputs { system, geometry, moving, at_rest, options, restart_each_cycle } = *inputs;
    let still = GeometryConfig { u: 0.0, ..geometry.clone() };
    let uncoupled_sys = SystemParams { coupling_g: 0.0, alpha_pol: None, ..system.clone() };
    let zero = zero_table(moving);
    let same_table = moving.digest() == at_rest.digest();

    let (phi_g, (phi_s, phi_c)) = rayon::join(
        || run_phases(system, geometry, moving, &options, restart_each_cycle),
        || {
            rayon::join(
                || {
                    if same_table {
                        Ok(None)
                    } else {
                        run_phases(system, &still, at_rest, &options, restart_each_cycle).map(Some)
                    }
                },
                || run_phases(&uncoupled_sys, &still, &zero, &options, restart_each_cycle),
            )
        },
    );
    let phi_g = phi_g?;
    let phi_s = phi_s?.unwrap_or_else(|| phi_g.clone());
    let phi_c = phi_c?;

    let rows = (0..options.n_cycles)
        .map(|i| {
            let delta_phi = phi_g[i] - phi_c[i];
            let delta_phi_static = phi_s[i] - phi_c[i];
            PhaseRow {
                n: i + 1,
                phi_g: phi_g[i],
                phi_c: phi_c[i],
                delta_phi,
                delta_phi_static,
                delta_phi_velocity: delta_phi - delta_phi_static,
            }
        })
        .collect();
    Ok(PhaseSeries {
        rows,
        meta: PhaseMeta {
            coupled_table: moving.digest(),
            static_table: at_rest.digest(),
            uncoupled_table: zero.digest(),
            theta0: system.theta0,
            bloch_polar_angle: system.bloch_polar_angle(),
            phi_c_bloch_formula: unitary_phase(system.bloch_polar_angle()),
            phi_c_amplitude_formula: unitary_phase(system.theta0),
            restart_each_cycle,
            options,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{tabulate, KernelConfig};
    use crate::master::sample_times;
    use crate::params::MaterialParams;
    use nalgebra::Matrix2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    /// Closed-form unitary precession about z of the Bloch vector.
    fn precession(theta_b: f64, n: usize, spc: usize, shrink: f64) -> (Vec<f64>, Vec<DensityMatrix>) {
        let times = sample_times(2.0 * PI, n, spc);
        let states = times
            .iter()
            .map(|&t| {
                let r = shrink;
                DensityMatrix::from_bloch([
                    r * theta_b.sin() * t.cos(),
                    r * theta_b.sin() * t.sin(),
                    -r * theta_b.cos(),
                ])
            })
            .collect();
        (times, states)
    }

    fn mod2pi_distance(a: f64, b: f64) -> f64 {
        (a - unwrap_near(b, a)).abs()
    }

    #[test]
    fn eigen2_matches_bloch_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let r: [f64; 3] = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            let rho = DensityMatrix::from_bloch(r);
            let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            let (vals, vecs) = eigen2(&rho);
            assert!((vals[0] - 0.5 * (1.0 + norm)).abs() < 1e-12);
            assert!((vals[1] - 0.5 * (1.0 - norm)).abs() < 1e-12);
            for k in 0..2 {
                let lhs = rho.0 * vecs[k];
                let rhs = vecs[k] * Complex64::new(vals[k], 0.0);
                assert!((lhs - rhs).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn pure_states_have_unit_spectrum() {
        let (times, states) = precession(1.0, 1, 64, 1.0);
        let track = eigentrack_states(&times, &states).unwrap();
        for v in &track.values {
            assert!((v[0] - 1.0).abs() < 1e-14 && v[1].abs() < 1e-14);
        }
    }

    #[test]
    fn maximally_mixed_is_degenerate() {
        let states = vec![DensityMatrix::from_bloch([0.0, 0.0, -1.0]), DensityMatrix::from_bloch([0.0; 3])];
        let err = eigentrack_states(&[0.0, 1.0], &states).unwrap_err();
        assert!(matches!(err, Error::DegenerateSpectrum { index: 1, .. }));
    }

    #[test]
    fn jump_breaks_tracking() {
        let states = vec![
            DensityMatrix::from_bloch([0.0, 0.0, -1.0]),
            DensityMatrix::from_bloch([1.0, 0.0, 0.0]),
        ];
        let err = eigentrack_states(&[0.0, 1.0], &states).unwrap_err();
        assert!(matches!(err, Error::OverlapBreak { index: 1, .. }));
    }

    #[test]
    fn unitary_cycle_matches_solid_angle() {
        for deg in [30.0f64, 60.0, 90.0, 120.0] {
            let theta_b = deg.to_radians();
            let (times, states) = precession(theta_b, 1, 4096, 1.0);
            let track = eigentrack_states(&times, &states).unwrap();
            let phi = geometric_phase(&track, times.len() - 1).unwrap();
            let d = mod2pi_distance(phi, unitary_phase(theta_b));
            assert!(d < 1e-6, "{deg}: {phi} vs {}", unitary_phase(theta_b));
        }
    }

    #[test]
    fn equator_gives_pi() {
        let (times, states) = precession(FRAC_PI_2, 1, 512, 1.0);
        let track = eigentrack_states(&times, &states).unwrap();
        let phi = geometric_phase(&track, times.len() - 1).unwrap();
        assert!(mod2pi_distance(phi, PI) < 1e-12);
    }

    #[test]
    fn second_order_convergence() {
        let theta_b = 1.0;
        let phase = |spc| {
            let (times, states) = precession(theta_b, 1, spc, 0.9);
            let track = eigentrack_states(&times, &states).unwrap();
            phase_history(&track)[spc]
        };
        let (a, b, c) = (phase(64), phase(128), phase(256));
        let ratio = (a - b).abs() / (b - c).abs();
        assert!(ratio > 3.5, "{ratio}");
    }

    #[test]
    fn gauge_and_basis_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (times, states) = precession(1.1, 3, 256, 0.95);
        let track = eigentrack_states(&times, &states).unwrap();
        let reference = phase_history(&track);

        let mut regauged = track.clone();
        for v in regauged.vectors.iter_mut() {
            for s in v.iter_mut() {
                *s *= Complex64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI));
            }
        }
        let gauged = phase_history(&regauged);

        let (a, b, c) = (rng.gen_range(0.0..PI), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
        let u: Matrix2<Complex64> = Matrix2::new(
            Complex64::from_polar(a.cos(), b),
            Complex64::from_polar(a.sin(), c),
            -Complex64::from_polar(a.sin(), -c),
            Complex64::from_polar(a.cos(), -b),
        );
        let rotated: Vec<DensityMatrix> = states.iter().map(|r| r.conjugated(&u)).collect();
        let turned = phase_history(&eigentrack_states(&times, &rotated).unwrap());
        for j in 0..reference.len() {
            assert!((gauged[j] - reference[j]).abs() < 1e-12);
            assert!((turned[j] - reference[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn restart_mode_agrees_for_unitary_cycles() {
        let (times, states) = precession(0.8, 4, 512, 1.0);
        let track = eigentrack_states(&times, &states).unwrap();
        let cont = cycle_phases(&track, 512, 4, false);
        let rest = cycle_phases(&track, 512, 4, true);
        for (a, b) in cont.iter().zip(&rest) {
            assert!(mod2pi_distance(*a, *b) < 1e-9);
        }
    }

    fn inputs_for(g: f64, u: f64, cycles: usize) -> (SystemParams, GeometryConfig, KernelTable, KernelTable) {
        let m = MaterialParams::preset("paper-metal").unwrap();
        let geo = GeometryConfig { alpha: FRAC_PI_2, gamma_dip: 0.0, gap_a: 1e-9, u };
        let sys = SystemParams { delta_ratio: 0.9, theta0: 44.9f64.to_radians(), coupling_g: g, alpha_pol: None };
        let t_max = sys.period() * cycles as f64;
        let dt = 2.0 * PI / 200.0;
        let moving = tabulate(&KernelConfig::new(m.clone(), geo.clone(), g), t_max, dt).unwrap();
        let still = GeometryConfig { u: 0.0, ..geo.clone() };
        let at_rest = tabulate(&KernelConfig::new(m, still, g), t_max, dt).unwrap();
        (sys, geo, moving, at_rest)
    }

    #[test]
    fn uncoupled_series_has_no_correction() {
        let (sys, geo, moving, at_rest) = inputs_for(0.0, 0.01, 2);
        let opts = EvolveOptions { n_cycles: 2, samples_per_cycle: 512, ..Default::default() };
        let s = phase_series(&PhaseInputs {
            system: &sys, geometry: &geo, moving: &moving, at_rest: &at_rest,
            options: opts, restart_each_cycle: false,
        })
        .unwrap();
        for r in &s.rows {
            assert!(r.delta_phi.abs() < 1e-8 && r.delta_phi_static.abs() < 1e-8);
        }
        let per_cycle = s.rows[0].phi_c;
        assert!(mod2pi_distance(per_cycle, s.meta.phi_c_bloch_formula) < 1e-4);
    }

    #[test]
    fn at_rest_has_no_velocity_part() {
        let (sys, geo, moving, at_rest) = inputs_for(1e-3, 0.0, 2);
        let opts = EvolveOptions { n_cycles: 2, samples_per_cycle: 256, ..Default::default() };
        let s = phase_series(&PhaseInputs {
            system: &sys, geometry: &geo, moving: &moving, at_rest: &at_rest,
            options: opts, restart_each_cycle: false,
        })
        .unwrap();
        for r in &s.rows {
            assert_eq!(r.delta_phi_velocity, 0.0);
            assert!(r.delta_phi != 0.0);
        }
    }
}
