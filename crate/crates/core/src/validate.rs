//! Fast self-checks run by `qfphase validate`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use crate::kernel::{inner_k_integral, kernel_pair, KernelConfig, KernelTable, KernelSample};
use crate::master::{evolve, rhs, Coefficients, DensityMatrix, EvolveOptions};
use crate::params::{g_factor, surface_response, GeometryConfig, MaterialParams, SystemParams};
use crate::phase::{eigentrack, geometric_phase, unitary_phase, unwrap_near};
use crate::quadrature::composite_gauss_legendre;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, value: f64, limit: f64) -> Check {
    Check { name, passed: value.is_finite() && value < limit, detail: format!("{value:.3e} (limit {limit:.0e})") }
}

/// Low-discrepancy points in the unit cube.
fn r3(i: usize) -> [f64; 3] {
    // Plastic-number sequence.
    let g = 1.220_744_084_605_759_5_f64;
    let a = [1.0 / g, 1.0 / (g * g), 1.0 / (g * g * g)];
    a.map(|ak| (0.5 + ak * i as f64).fract())
}

fn g_identity() -> Check {
    let mut worst: f64 = 0.0;
    for i in 0..100_000 {
        let [x, y, z] = r3(i);
        let (theta, alpha, gamma) = (x * 2.0 * PI, y * FRAC_PI_2, z * 2.0 * PI);
        let compact = alpha.sin().powi(2) * (theta - gamma).cos().powi(2) + alpha.cos().powi(2);
        worst = worst.max((g_factor(theta, alpha, gamma) - compact).abs());
    }
    check("g-factor identity", worst, 1e-12)
}

fn inner_k() -> Check {
    let mut worst: f64 = 0.0;
    for &b in &[-100.0, -7.5, -1.0, 0.0, 0.3, 2.0, 15.0, 100.0] {
        let q = composite_gauss_legendre(
            |k: f64| Complex64::new(0.0, b * k).exp() * (k * k * (-2.0 * k).exp()),
            0.0,
            60.0,
            4000,
            20,
        );
        let exact = inner_k_integral(b);
        worst = worst.max((q - exact).norm() / exact.norm());
    }
    check("inner k integral", worst, 1e-10)
}

fn surface_response_form() -> Check {
    let m = MaterialParams::preset("paper-metal").expect("preset");
    let mut worst: f64 = 0.0;
    for i in 1..200 {
        let w = i as f64 * 0.02;
        let eps = Complex64::new(1.0, 0.0) / Complex64::new(-w * w, -w * m.gamma_ratio);
        let direct = ((eps - 1.0) / (eps + 1.0)).im;
        worst = worst.max((direct - surface_response(w, &m)).abs() / direct.abs().max(1e-300));
    }
    check("surface response closed form", worst, 1e-10)
}

fn generator() -> Check {
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let [x, y, z] = r3(i);
        let rho = DensityMatrix::from_bloch([x - 0.5, y - 0.5, z - 0.5]);
        let c = Coefficients { t: 0.0, d: x, f: y - 0.5, zeta: z };
        let m = rhs(&rho, &c, 0.9);
        worst = worst.max(m.trace().norm()).max((m - m.adjoint()).iter().map(|e| e.norm()).fold(0.0, f64::max));
    }
    check("generator traceless and Hermitian", worst, 1e-14)
}

fn kernel_parity() -> Check {
    let cfg = KernelConfig::new(
        MaterialParams::preset("paper-metal").expect("preset"),
        GeometryConfig { alpha: 1.0, gamma_dip: 0.4, gap_a: 3e-9, u: 0.01 },
        1e-3,
    );
    let mut worst: f64 = 0.0;
    for &t in &[0.0, 0.7, 3.1, 12.0] {
        let (Ok(p), Ok(m)) = (kernel_pair(t, &cfg), kernel_pair(-t, &cfg)) else {
            return Check { name: "kernel parity", passed: false, detail: "quadrature failed".into() };
        };
        let scale = p.0.hypot(p.1);
        worst = worst.max((p.0 - m.0).abs() / scale).max((p.1 + m.1).abs() / scale);
    }
    check("kernel parity", worst, 1e-8)
}

fn unitary_phase_check() -> Check {
    let mut worst: f64 = 0.0;
    for deg in [30.0f64, 60.0, 90.0, 120.0] {
        let theta_b = deg.to_radians();
        let sys = SystemParams { delta_ratio: 0.9, theta0: 0.5 * theta_b, coupling_g: 0.0, alpha_pol: None };
        let n = (sys.period() / 0.01).ceil() as usize + 2;
        let table = KernelTable {
            format_version: crate::kernel::TABLE_FORMAT_VERSION,
            config_hash: "uncoupled".into(),
            dt: 0.01,
            t_max: (n - 1) as f64 * 0.01,
            coupling_g: 0.0,
            values: (0..n).map(|j| KernelSample { t: j as f64 * 0.01, nu: 0.0, eta: 0.0 }).collect(),
        };
        let geo = GeometryConfig { alpha: FRAC_PI_2, gamma_dip: 0.0, gap_a: 3e-9, u: 0.0 };
        let opts = EvolveOptions { n_cycles: 1, ..Default::default() };
        let phi = evolve(&sys, &geo, &table, &opts)
            .and_then(|t| eigentrack(&t))
            .and_then(|tr| geometric_phase(&tr, opts.samples_per_cycle));
        let Ok(phi) = phi else {
            return Check { name: "unitary phase", passed: false, detail: "evolution failed".into() };
        };
        let target = unitary_phase(theta_b);
        worst = worst.max((target - unwrap_near(phi, target)).abs());
    }
    check("unitary phase pi (1 - cos theta_B)", worst, 1e-6)
}

pub fn run_all() -> Vec<Check> {
    vec![g_identity(), inner_k(), surface_response_form(), generator(), kernel_parity(), unitary_phase_check()]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
