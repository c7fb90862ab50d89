//! Noise and dissipation kernels of the moving dipole.
//!
//! In reduced units the kernels are
//!
//! ```text
//! nu(t), eta(t) ~ (g / pi^2) Gamma  int dw int dk int dtheta
//!                 [w / Den(w)] k^2 e^{-2k} G(theta) {cos, sin}[(k u cos(theta) - w) t]
//! ```
//!
//! The `k` integral is done in closed form, `int k^2 e^{-2k} e^{i b k} dk = 2 / (2 - i b)^3`
//! with `b = u cos(theta) t`. What remains factorizes: the frequency integral
//! `int w/Den(w) e^{-i w t} dw` depends only on the material and the angular
//! integral `int G(theta) K(u cos(theta) t) dtheta` only on the geometry, so a kernel
//! value is the product of two one-dimensional quadratures.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::{g_factor, GeometryConfig, MaterialParams, ResonanceMode};
use crate::quadrature::{integrate_adaptive, periodic_trapezoid, AdaptiveOptions};

/// Version tag written into every serialized [`KernelTable`].
pub const TABLE_FORMAT_VERSION: u32 = 1;

/// Global sign of the kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignConvention {
    /// `nu(0) > 0` and `eta` positive at small times, so the coefficients
    /// diffuse and relax the atom toward its ground state.
    Dissipative,
    /// Both kernels carry the leading minus sign of the printed expressions.
    Literal,
}

impl SignConvention {
    /// Signs applied to `(Re, Im)` of the reduced integral.
    fn signs(self) -> (f64, f64) {
        match self {
            SignConvention::Dissipative => (1.0, -1.0),
            SignConvention::Literal => (-1.0, -1.0),
        }
    }
}

/// Numerical controls and physical inputs for kernel evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub material: MaterialParams,
    pub geometry: GeometryConfig,
    pub resonance_mode: ResonanceMode,
    /// Lower frequency limit in literal mode.
    pub ir_cutoff: f64,
    /// Upper frequency limit.
    pub omega_max: f64,
    /// Points of the periodic trapezoid rule in `theta`.
    pub n_theta: usize,
    /// Relative tolerance of the adaptive frequency integral.
    pub omega_tol: f64,
    pub sign_convention: SignConvention,
    pub coupling_g: f64,
}

pub const DEFAULT_IR_CUTOFF: f64 = 1e-4;
pub const DEFAULT_N_THETA: usize = 128;
pub const DEFAULT_OMEGA_TOL: f64 = 1e-10;

/// `10 (w_res + Gamma)`, well past the resonance where the weight falls off as `w^-3`.
pub fn default_omega_max(material: &MaterialParams, mode: ResonanceMode) -> f64 {
    10.0 * (mode.resonance_frequency(material) + material.gamma_ratio)
}

impl KernelConfig {
    pub fn new(material: MaterialParams, geometry: GeometryConfig, coupling_g: f64) -> Self {
        let omega_max = default_omega_max(&material, ResonanceMode::Surface);
        KernelConfig {
            material,
            geometry,
            resonance_mode: ResonanceMode::Surface,
            ir_cutoff: DEFAULT_IR_CUTOFF,
            omega_max,
            n_theta: DEFAULT_N_THETA,
            omega_tol: DEFAULT_OMEGA_TOL,
            sign_convention: SignConvention::Dissipative,
            coupling_g,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.material.validate()?;
        self.geometry.validate()?;
        if self.n_theta < 32 || self.n_theta % 2 != 0 {
            return Err(Error::validation("numerics.n_theta", "must be even and >= 32"));
        }
        let res = self.resonance_mode.resonance_frequency(&self.material);
        if !(self.omega_max > res + 10.0 * self.material.gamma_ratio) {
            return Err(Error::validation(
                "numerics.omega_max",
                format!("must exceed resonance + 10 Gamma = {}", res + 10.0 * self.material.gamma_ratio),
            ));
        }
        if !(self.omega_tol > 0.0 && self.omega_tol <= 1e-3) {
            return Err(Error::validation("numerics.omega_tol", "must lie in (0, 1e-3]"));
        }
        if !(self.ir_cutoff > 0.0 && self.ir_cutoff < self.omega_max) {
            return Err(Error::validation("numerics.ir_cutoff", "must lie in (0, omega_max)"));
        }
        if !(self.coupling_g.is_finite() && self.coupling_g >= 0.0) {
            return Err(Error::validation("system.coupling_g", "must be finite and >= 0"));
        }
        Ok(())
    }

    fn lower_limit(&self) -> f64 {
        match self.resonance_mode {
            ResonanceMode::Surface => 0.0,
            ResonanceMode::Literal => self.ir_cutoff,
        }
    }

    /// Same configuration at unit coupling.
    pub fn unit(&self) -> KernelConfig {
        KernelConfig {
            coupling_g: 1.0,
            ..self.clone()
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        digest_json(self)
    }

    /// Relative weight of the discarded frequency tail `int_{omega_max}^inf w/Den`
    /// (the weight decays as `w^-3`) against the retained integral.
    pub fn truncation_estimate(&self) -> Result<f64> {
        let tail = 0.5 / (self.omega_max * self.omega_max);
        let kept = frequency_transform(0.0, self)?.re;
        Ok(tail / kept)
    }
}

pub(crate) fn digest_json<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("serializable");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// `int_0^inf k^2 e^{-2k} e^{i b k} dk = 2 / (2 - i b)^3`.
pub fn inner_k_integral(b: f64) -> Complex64 {
    let z = Complex64::new(2.0, -b);
    Complex64::new(2.0, 0.0) / (z * z * z)
}

/// `int_{lo}^{omega_max} [w / Den(w)] e^{-i w t} dw`.
pub fn frequency_transform(t: f64, cfg: &KernelConfig) -> Result<Complex64> {
    let lo = cfg.lower_limit();
    let hi = cfg.omega_max;
    let m = &cfg.material;
    let mode = cfg.resonance_mode;
    // At most one oscillation and half a linewidth per starting panel.
    let width = (0.5 * m.gamma_ratio).min(PI / t.abs().max(1.0));
    let n = ((hi - lo) / width).ceil().max(1.0) as usize;
    let mut breaks: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let res = mode.resonance_frequency(m);
    if res > lo && res < hi && !breaks.contains(&res) {
        breaks.push(res);
        breaks.sort_by(f64::total_cmp);
    }
    let opts = AdaptiveOptions {
        rel_tol: cfg.omega_tol,
        ..AdaptiveOptions::default()
    };
    let q = integrate_adaptive(
        |w| {
            let (s, c) = (w * t).sin_cos();
            Complex64::new(c, -s) * mode.spectral_weight(w, m)
        },
        &breaks,
        &opts,
    )?;
    Ok(q.value)
}

/// `int_0^{2 pi} G(theta, alpha, gamma) K(u cos(theta) t) dtheta` by the periodic trapezoid rule.
pub fn angular_factor(t: f64, geometry: &GeometryConfig, n_theta: usize) -> Complex64 {
    let ut = geometry.u * t;
    periodic_trapezoid(
        |th| inner_k_integral(ut * th.cos()) * g_factor(th, geometry.alpha, geometry.gamma_dip),
        n_theta,
    )
}

/// One sample of the kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct KernelSample {
    pub t: f64,
    pub nu: f64,
    pub eta: f64,
}

impl From<[f64; 3]> for KernelSample {
    fn from(v: [f64; 3]) -> Self {
        KernelSample { t: v[0], nu: v[1], eta: v[2] }
    }
}

impl From<KernelSample> for [f64; 3] {
    fn from(s: KernelSample) -> Self {
        [s.t, s.nu, s.eta]
    }
}

fn combine(t: f64, omega: Complex64, theta: Complex64, cfg: &KernelConfig) -> KernelSample {
    let (s_nu, s_eta) = cfg.sign_convention.signs();
    let unit = cfg.material.gamma_ratio / (PI * PI);
    let z = omega * theta;
    let (nu, eta) = (s_nu * unit * z.re, s_eta * unit * z.im);
    let eta = if t == 0.0 { 0.0 } else { eta };
    KernelSample {
        t,
        nu: nu * cfg.coupling_g,
        eta: eta * cfg.coupling_g,
    }
}

/// `(nu(t), eta(t))`. Negative times are accepted and evaluate the defining
/// integrals there, which makes `nu` even and `eta` odd.
pub fn kernel_pair(t: f64, cfg: &KernelConfig) -> Result<(f64, f64)> {
    if cfg.coupling_g == 0.0 {
        return Ok((0.0, 0.0));
    }
    let omega = frequency_transform(t, cfg)?;
    let theta = angular_factor(t, &cfg.geometry, cfg.n_theta);
    let s = combine(t, omega, theta, cfg);
    Ok((s.nu, s.eta))
}

/// Uniform grid `t_j = j dt`, `j = 0..n_points`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_points: usize,
}

impl TimeGrid {
    /// Smallest grid with step `dt` reaching at least `t_max`.
    pub fn covering(t_max: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::validation("numerics.dt", "must be finite and > 0"));
        }
        if !(t_max >= 0.0 && t_max.is_finite()) {
            return Err(Error::validation("t_max", "must be finite and >= 0"));
        }
        let n = (t_max / dt - 1e-9).ceil().max(0.0) as usize + 1;
        Ok(TimeGrid { dt, n_points: n })
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    pub fn t_max(&self) -> f64 {
        self.time(self.n_points - 1)
    }
}

/// Largest step that resolves an oscillation at `omega` with 20 points per period.
pub fn max_resolving_step(omega: f64) -> f64 {
    2.0 * PI / (20.0 * omega)
}

/// Tabulated kernels on `t >= 0`; consumers extend with `nu(-t) = nu(t)`,
/// `eta(-t) = -eta(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTable {
    pub format_version: u32,
    pub config_hash: String,
    pub dt: f64,
    pub t_max: f64,
    pub coupling_g: f64,
    pub values: Vec<KernelSample>,
}

impl KernelTable {
    pub fn grid(&self) -> TimeGrid {
        TimeGrid { dt: self.dt, n_points: self.values.len() }
    }

    /// Same table with every value multiplied by `coupling_g / self.coupling_g`.
    ///
    /// Tables are always built at unit coupling and scaled, so a scaled table
    /// is bit-identical whether or not it came from the cache.
    pub fn scaled(&self, cfg: &KernelConfig) -> KernelTable {
        debug_assert_eq!(self.coupling_g, 1.0);
        let g = cfg.coupling_g;
        KernelTable {
            format_version: TABLE_FORMAT_VERSION,
            config_hash: cfg.digest(),
            dt: self.dt,
            t_max: self.t_max,
            coupling_g: g,
            values: self
                .values
                .iter()
                .map(|s| KernelSample { t: s.t, nu: s.nu * g, eta: s.eta * g })
                .collect(),
        }
    }

    /// Digest of the full table, covering its config and grid.
    pub fn digest(&self) -> String {
        digest_json(&(&self.config_hash, self.dt, self.values.len(), self.coupling_g))
    }
}

/// Reject grids too coarse to resolve the resonance.
pub fn check_grid(cfg: &KernelConfig, grid: &TimeGrid) -> Result<()> {
    let w = cfg.resonance_mode.resonance_frequency(&cfg.material);
    let limit = max_resolving_step(w);
    if grid.dt > limit {
        return Err(Error::GridTooCoarse(format!(
            "dt = {} must not exceed 2 pi / (20 w_res) = {limit}",
            grid.dt
        )));
    }
    Ok(())
}

/// Frequency transform on every grid point. Depends on the material and
/// frequency numerics only, never on geometry or coupling.
pub fn frequency_series(cfg: &KernelConfig, grid: &TimeGrid) -> Result<Vec<Complex64>> {
    (0..grid.n_points)
        .into_par_iter()
        .map(|j| frequency_transform(grid.time(j), cfg))
        .collect()
}

/// Unit-coupling table from a precomputed frequency series.
pub fn assemble_unit(cfg: &KernelConfig, grid: &TimeGrid, omega: &[Complex64]) -> KernelTable {
    let unit = cfg.unit();
    let values = (0..grid.n_points)
        .into_par_iter()
        .map(|j| {
            let t = grid.time(j);
            combine(t, omega[j], angular_factor(t, &unit.geometry, unit.n_theta), &unit)
        })
        .collect();
    KernelTable {
        format_version: TABLE_FORMAT_VERSION,
        config_hash: unit.digest(),
        dt: grid.dt,
        t_max: grid.t_max(),
        coupling_g: 1.0,
        values,
    }
}

/// Unit-coupling table.
pub fn tabulate_unit(cfg: &KernelConfig, grid: &TimeGrid) -> Result<KernelTable> {
    cfg.validate()?;
    check_grid(cfg, grid)?;
    let omega = frequency_series(cfg, grid)?;
    Ok(assemble_unit(cfg, grid, &omega))
}

/// Tabulate `(t, nu, eta)` at `t = 0, dt, 2 dt, ...` up to at least `t_max`.
pub fn tabulate(cfg: &KernelConfig, t_max: f64, dt: f64) -> Result<KernelTable> {
    let grid = TimeGrid::covering(t_max, dt)?;
    cfg.validate()?;
    check_grid(cfg, &grid)?;
    if cfg.coupling_g == 0.0 {
        let values = (0..grid.n_points)
            .map(|j| KernelSample { t: grid.time(j), nu: 0.0, eta: 0.0 })
            .collect();
        return Ok(KernelTable {
            format_version: TABLE_FORMAT_VERSION,
            config_hash: cfg.digest(),
            dt,
            t_max: grid.t_max(),
            coupling_g: 0.0,
            values,
        });
    }
    Ok(tabulate_unit(cfg, &grid)?.scaled(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;
    use crate::quadrature::composite_gauss_legendre;

    fn metal_cfg(u: f64, alpha: f64, gamma_dip: f64) -> KernelConfig {
        KernelConfig::new(
            MaterialParams::preset("paper-metal").unwrap(),
            GeometryConfig { alpha, gamma_dip, gap_a: 1e-9, u },
            1e-3,
        )
    }

    /// Composite Gauss-Legendre on [0, 1] via Newton iteration on P_n.
    fn k_integral_by_quadrature(b: f64) -> Complex64 {
        composite_gauss_legendre(|k| Complex64::new(0.0, b * k).exp() * (k * k * (-2.0 * k).exp()), 0.0, 60.0, 4000, 20)
    }

    #[test]
    fn inner_k_examples() {
        assert!((inner_k_integral(0.0) - Complex64::new(0.25, 0.0)).norm() < 1e-16);
        let v = inner_k_integral(2.0);
        assert!((v - Complex64::new(-1.0 / 16.0, 1.0 / 16.0)).norm() < 1e-16);
        let big = inner_k_integral(1e4).norm();
        assert!((big * 1e12 / 2.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn inner_k_matches_quadrature() {
        for &b in &[-100.0, -7.5, -1.0, 0.0, 0.3, 2.0, 13.0, 55.0, 100.0] {
            let closed = inner_k_integral(b);
            let quad = k_integral_by_quadrature(b);
            assert!((closed - quad).norm() <= 1e-10 * closed.norm(), "b = {b}: {closed} vs {quad}");
        }
    }

    #[test]
    fn eta_vanishes_at_origin_and_nu_is_velocity_blind() {
        let a = kernel_pair(0.0, &metal_cfg(0.0, FRAC_PI_2, 0.0)).unwrap();
        let b = kernel_pair(0.0, &metal_cfg(0.02, FRAC_PI_2, 0.0)).unwrap();
        assert_eq!(a.1, 0.0);
        assert_eq!(b.1, 0.0);
        assert!((a.0 - b.0).abs() <= 1e-14 * a.0.abs());
        assert!(a.0 > 0.0);
    }

    #[test]
    fn literal_sign_flips_nu() {
        let mut cfg = metal_cfg(0.007, FRAC_PI_2, 0.0);
        let d = kernel_pair(1.3, &cfg).unwrap();
        cfg.sign_convention = SignConvention::Literal;
        let l = kernel_pair(1.3, &cfg).unwrap();
        assert_eq!(d.0, -l.0);
        assert_eq!(d.1, l.1);
    }

    #[test]
    fn parity() {
        let cfg = metal_cfg(0.01, 1.1, 0.7);
        for &t in &[0.3, 2.0, 9.5, 31.0] {
            let (np, ep) = kernel_pair(t, &cfg).unwrap();
            let (nm, em) = kernel_pair(-t, &cfg).unwrap();
            let scale = np.abs().max(ep.abs());
            assert!((np - nm).abs() <= 1e-9 * scale, "nu parity at {t}");
            assert!((ep + em).abs() <= 1e-9 * scale, "eta parity at {t}");
        }
    }

    #[test]
    fn theta_rule_converged() {
        let mut cfg = metal_cfg(0.03, FRAC_PI_2, 0.0);
        for &t in &[1.0, 50.0, 200.0] {
            let a = kernel_pair(t, &cfg).unwrap();
            cfg.n_theta *= 2;
            let b = kernel_pair(t, &cfg).unwrap();
            cfg.n_theta /= 2;
            let scale = kernel_pair(0.0, &cfg).unwrap().0;
            assert!((a.0 - b.0).abs() < cfg.omega_tol * scale);
            assert!((a.1 - b.1).abs() < cfg.omega_tol * scale);
        }
    }

    #[test]
    fn linear_in_coupling() {
        let mut cfg = metal_cfg(0.007, 0.4, 1.0);
        let a = kernel_pair(3.7, &cfg).unwrap();
        cfg.coupling_g *= 2.0;
        let b = kernel_pair(3.7, &cfg).unwrap();
        assert!((b.0 / a.0 - 2.0).abs() < 1e-12);
        assert!((b.1 / a.1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn small_alpha_nearly_velocity_blind() {
        // With a normal dipole G = 1 and only the theta-average of the Doppler
        // factor remains; it differs from K(0) at second order in u t.
        let t = 5.0;
        let u = 0.001;
        let still = kernel_pair(t, &metal_cfg(0.0, 0.0, 0.0)).unwrap();
        let moving = kernel_pair(t, &metal_cfg(u, 0.0, 0.0)).unwrap();
        let avg = angular_factor(t, &metal_cfg(u, 0.0, 0.0).geometry, 128) / (2.0 * PI);
        let bound = (avg - inner_k_integral(0.0)).norm() / 0.25;
        let rel = (moving.0 - still.0).hypot(moving.1 - still.1) / still.0.hypot(still.1);
        assert!(rel <= 1.01 * bound + 1e-12, "{rel} vs {bound}");
        assert!(bound < 1e-4);
    }

    #[test]
    fn small_velocity_perturbation() {
        let t = 5.0;
        let still = kernel_pair(t, &metal_cfg(0.0, FRAC_PI_2, 0.0)).unwrap();
        let moving = kernel_pair(t, &metal_cfg(0.001, FRAC_PI_2, 0.0)).unwrap();
        let rel = (moving.0 - still.0).hypot(moving.1 - still.1) / still.0.hypot(still.1);
        assert!(rel < 1e-2);
        // First order in u vanishes (G is even under theta -> theta + pi);
        // the second-order Taylor term of K gives (3/2)(u t)^2 <cos^2 G>/<G>.
        let b2 = (0.001 * t) * (0.001 * t);
        assert!(rel < 10.0 * b2, "{rel}");
    }

    #[test]
    fn tabulation_basics() {
        let cfg = metal_cfg(0.007, FRAC_PI_2, 0.0);
        let dt = 0.05;
        let table = tabulate(&cfg, 3.0, dt).unwrap();
        assert_eq!(table.values[0].eta, 0.0);
        assert_eq!(table.values.len(), 61);
        let fine = tabulate(&cfg, 3.0, dt / 2.0).unwrap();
        for (j, s) in table.values.iter().enumerate() {
            let f = fine.values[2 * j];
            assert_eq!(s.t, f.t);
            assert!((s.nu - f.nu).abs() <= 1e-12 * s.nu.abs().max(1e-300));
            assert!((s.eta - f.eta).abs() <= 1e-12 * s.eta.abs().max(1e-300));
        }
        let zero = tabulate(&KernelConfig { coupling_g: 0.0, ..cfg.clone() }, 3.0, dt).unwrap();
        assert!(zero.values.iter().all(|s| s.nu == 0.0 && s.eta == 0.0));
        assert!(matches!(tabulate(&cfg, 3.0, 1.0), Err(Error::GridTooCoarse(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = metal_cfg(0.0, 0.0, 0.0);
        cfg.validate().unwrap();
        cfg.n_theta = 31;
        assert!(cfg.validate().is_err());
        cfg.n_theta = 64;
        cfg.omega_max = 1.5;
        assert!(cfg.validate().is_err());
        cfg.omega_max = 11.0;
        cfg.omega_tol = 1e-2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn truncation_is_small() {
        let e = metal_cfg(0.0, 0.0, 0.0).truncation_estimate().unwrap();
        assert!(e > 0.0 && e < 1e-3, "{e}");
    }
}
