//! Physical parameters, material presets and the dipole geometry factor.
//!
//! Everything downstream works in reduced units: frequencies in units of the
//! plasma frequency `omega_pl`, lengths in units of the gap `a`, times in
//! units of `1/omega_pl`. SI quantities only appear here, at the boundary.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Largest admissible tangential speed as a fraction of `c`.
pub const MAX_SPEED_FRACTION: f64 = 0.01;

/// Default dimensionless coupling when neither `coupling_g` nor `alpha_pol`
/// is configured.
pub const DEFAULT_COUPLING: f64 = 1e-3;

/// Drude-Lorentz dielectric constants, `eps(w) = w_pl^2 / (w0^2 - w^2 - i w Gamma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams {
    /// Plasma frequency in rad/s. The symbolic reference metal uses 1.
    pub omega_pl: f64,
    /// Damping `Gamma / omega_pl`.
    pub gamma_ratio: f64,
    /// Lorentz resonance `omega_0 / omega_pl`; zero for a Drude metal.
    pub omega0_ratio: f64,
    pub label: String,
}

impl MaterialParams {
    pub fn new(label: &str, omega_pl: f64, gamma_ratio: f64, omega0_ratio: f64) -> Result<Self> {
        let m = MaterialParams {
            omega_pl,
            gamma_ratio,
            omega0_ratio,
            label: label.to_string(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Named parameter sets.
    ///
    /// * `Au`: `omega_pl = 1.37e16 rad/s`, `Gamma/omega_pl = 0.05`.
    /// * `nSi`: `omega_pl = 3.5e14 rad/s`, `Gamma/omega_pl = 1` (quoted as "~1").
    /// * `paper-metal`: the reduced Drude metal used for the model figures,
    ///   `Gamma/omega_pl = 0.1`, `omega_0 = 0`, with `omega_pl` kept symbolic.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "Au" => MaterialParams::new("Au", 1.37e16, 0.05, 0.0),
            "nSi" => MaterialParams::new("nSi", 3.5e14, 1.0, 0.0),
            "paper-metal" => MaterialParams::new("paper-metal", 1.0, 0.1, 0.0),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_pl.is_finite() && self.omega_pl > 0.0) {
            return Err(Error::validation("material.omega_pl", "must be finite and > 0"));
        }
        if !(self.gamma_ratio.is_finite() && self.gamma_ratio > 0.0) {
            return Err(Error::validation("material.gamma_ratio", "must be finite and > 0"));
        }
        if !(self.omega0_ratio.is_finite() && self.omega0_ratio >= 0.0) {
            return Err(Error::validation("material.omega0_ratio", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn is_drude(&self) -> bool {
        self.omega0_ratio == 0.0
    }

    /// Surface-plasmon frequency in units of `omega_pl`, from
    /// `omega_0^2 = omega_S^2 - omega_pl^2 / 2`.
    pub fn surface_plasmon_ratio(&self) -> f64 {
        (self.omega0_ratio * self.omega0_ratio + 0.5).sqrt()
    }
}

/// Which denominator the kernel integrand uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResonanceMode {
    /// `(1 + w0^2 - w^2)^2 + w^2 G^2`, the exact denominator of
    /// `Im[(eps - 1)/(eps + 1)]`. Finite everywhere.
    Surface,
    /// `(w0^2 - w^2)^2 + w^2 G^2` as printed in the kernel expressions.
    /// Singular at `w -> 0` for a Drude metal, so it needs an infrared cutoff.
    Literal,
}

impl ResonanceMode {
    /// `w / Den(w)` in reduced units.
    pub fn spectral_weight(self, omega: f64, m: &MaterialParams) -> f64 {
        let w2 = omega * omega;
        let g = m.gamma_ratio;
        let shift = match self {
            ResonanceMode::Surface => 1.0 + m.omega0_ratio * m.omega0_ratio - w2,
            ResonanceMode::Literal => m.omega0_ratio * m.omega0_ratio - w2,
        };
        omega / (shift * shift + w2 * g * g)
    }

    /// Location of the peak of the spectral weight (reduced units).
    pub fn resonance_frequency(self, m: &MaterialParams) -> f64 {
        match self {
            ResonanceMode::Surface => (1.0 + m.omega0_ratio * m.omega0_ratio).sqrt(),
            ResonanceMode::Literal => m.omega0_ratio.max(m.gamma_ratio),
        }
    }
}

/// Dipole orientation, gap and reduced tangential velocity `u = v / (a omega_pl)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Polar angle of the dipole measured from the surface normal.
    pub alpha: f64,
    /// Azimuthal angle of the dipole measured from the direction of motion.
    pub gamma_dip: f64,
    /// Atom-surface distance in metres.
    pub gap_a: f64,
    pub u: f64,
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && (0.0..=FRAC_PI_2).contains(&self.alpha)) {
            return Err(Error::validation("geometry.alpha", "must lie in [0, pi/2]"));
        }
        if !(self.gamma_dip.is_finite() && self.gamma_dip >= 0.0 && self.gamma_dip < 2.0 * PI) {
            return Err(Error::validation("geometry.gamma_dip", "must lie in [0, 2 pi)"));
        }
        if !(self.gap_a.is_finite() && self.gap_a > 0.0) {
            return Err(Error::validation("geometry.gap_a", "must be finite and > 0"));
        }
        if !(self.u.is_finite() && self.u >= 0.0) {
            return Err(Error::validation("geometry.u", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Tangential speed in m/s.
    pub fn speed(&self, m: &MaterialParams) -> f64 {
        self.u * self.gap_a * m.omega_pl
    }

    /// Full validation including the non-relativistic bound `v <= 0.01 c`.
    pub fn validate_with(&self, m: &MaterialParams) -> Result<()> {
        self.validate()?;
        let v = self.speed(m);
        if v > MAX_SPEED_FRACTION * SPEED_OF_LIGHT {
            return Err(Error::validation(
                "geometry.u",
                format!(
                    "non-relativistic bound: v = u a omega_pl = {v:.6e} m/s exceeds 0.01 c"
                ),
            ));
        }
        Ok(())
    }
}

/// Two-level system parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    /// Level spacing `Delta / omega_pl`.
    pub delta_ratio: f64,
    /// Amplitude angle of the initial state `cos(theta0)|g> + sin(theta0)|e>`.
    /// The Bloch polar angle measured from the ground-state pole is `2 theta0`.
    pub theta0: f64,
    /// Dimensionless coupling `d^2 / (hbar a^3 omega_pl)`.
    pub coupling_g: f64,
    /// Static polarizability volume in m^3. When given, `coupling_g` must
    /// agree with `1.5 * (Delta/omega_pl) * alpha_pol / a^3`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_pol: Option<f64>,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_ratio.is_finite() && self.delta_ratio > 0.0) {
            return Err(Error::validation("system.delta_ratio", "must be finite and > 0"));
        }
        if !(self.theta0.is_finite() && self.theta0 > 0.0 && self.theta0 < FRAC_PI_2) {
            return Err(Error::validation("system.theta0", "must lie in (0, pi/2)"));
        }
        if !(self.coupling_g.is_finite() && self.coupling_g >= 0.0) {
            return Err(Error::validation("system.coupling_g", "must be finite and >= 0"));
        }
        if let Some(a) = self.alpha_pol {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::validation("system.alpha_pol", "must be finite and > 0"));
            }
        }
        Ok(())
    }

    /// Polar angle of the initial Bloch vector measured from the ground-state pole.
    pub fn bloch_polar_angle(&self) -> f64 {
        2.0 * self.theta0
    }

    /// Unitary period `2 pi / Delta` in reduced time.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.delta_ratio
    }
}

/// Coupling implied by a polarizability: `d^2 = (3/2) hbar Delta alpha_pol`
/// and `g = d^2 / (hbar a^3 omega_pl)`.
pub fn coupling_from_polarizability(alpha_pol: f64, delta_ratio: f64, gap_a: f64) -> f64 {
    1.5 * delta_ratio * alpha_pol / (gap_a * gap_a * gap_a)
}

/// Reconcile `coupling_g` and `alpha_pol`.
///
/// `coupling_g = None` with a polarizability derives the coupling; both
/// present must agree to 1e-12 relative; neither gives [`DEFAULT_COUPLING`].
pub fn resolve_coupling(
    coupling_g: Option<f64>,
    alpha_pol: Option<f64>,
    delta_ratio: f64,
    gap_a: f64,
) -> Result<f64> {
    match (coupling_g, alpha_pol) {
        (None, None) => Ok(DEFAULT_COUPLING),
        (Some(g), None) => Ok(g),
        (None, Some(a)) => Ok(coupling_from_polarizability(a, delta_ratio, gap_a)),
        (Some(g), Some(a)) => {
            let derived = coupling_from_polarizability(a, delta_ratio, gap_a);
            let scale = g.abs().max(derived.abs());
            if (g - derived).abs() > 1e-12 * scale {
                return Err(Error::validation(
                    "system.coupling_g",
                    format!("disagrees with alpha_pol-derived coupling {derived:e}"),
                ));
            }
            Ok(g)
        }
    }
}

/// Orientation factor `G(theta, alpha, gamma)` for an in-plane wave vector at
/// angle `theta` from the direction of motion.
pub fn g_factor(theta: f64, alpha: f64, gamma_dip: f64) -> f64 {
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    let (sg, cg) = gamma_dip.sin_cos();
    let sa2 = sa * sa;
    cg * cg * sa2 * ct * ct + sg * sg * sa2 * st * st + 2.0 * cg * sg * sa2 * ct * st + ca * ca
}

/// `Im[(eps - 1)/(eps + 1)]` at reduced frequency `omega`.
pub fn surface_response(omega: f64, m: &MaterialParams) -> f64 {
    let w2 = omega * omega;
    let g = m.gamma_ratio;
    let shift = 1.0 + m.omega0_ratio * m.omega0_ratio - w2;
    2.0 * omega * g / (shift * shift + w2 * g * g)
}
