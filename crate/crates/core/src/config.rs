//! Run configuration: one JSON document with material, geometry, system,
//! numerics and output sections. Every key has a default; unknown keys are
//! rejected.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::kernel::{
    default_omega_max, digest_json, max_resolving_step, KernelConfig, SignConvention, DEFAULT_IR_CUTOFF,
    DEFAULT_N_THETA, DEFAULT_OMEGA_TOL,
};
use crate::master::EvolveOptions;
use crate::params::{resolve_coupling, GeometryConfig, MaterialParams, ResonanceMode, SystemParams};

/// Minimum kernel-table coverage in unitary periods.
pub const MIN_TABLE_CYCLES: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialSection {
    /// `Au`, `nSi` or `paper-metal`; explicit fields below override it.
    pub preset: Option<String>,
    pub label: Option<String>,
    pub omega_pl: Option<f64>,
    pub gamma_ratio: Option<f64>,
    pub omega0_ratio: Option<f64>,
}

impl Default for MaterialSection {
    fn default() -> Self {
        MaterialSection {
            preset: Some("paper-metal".into()),
            label: None,
            omega_pl: None,
            gamma_ratio: None,
            omega0_ratio: None,
        }
    }
}

impl MaterialSection {
    pub fn resolve(&self) -> Result<MaterialParams> {
        let base = match &self.preset {
            Some(name) => Some(MaterialParams::preset(name)?),
            None => None,
        };
        let pick = |v: Option<f64>, from: Option<f64>, key: &str| {
            v.or(from)
                .ok_or_else(|| Error::validation(key, "required when no preset is given"))
        };
        let label = self
            .label
            .clone()
            .or_else(|| base.as_ref().map(|b| b.label.clone()))
            .unwrap_or_else(|| "custom".into());
        MaterialParams::new(
            &label,
            pick(self.omega_pl, base.as_ref().map(|b| b.omega_pl), "material.omega_pl")?,
            pick(self.gamma_ratio, base.as_ref().map(|b| b.gamma_ratio), "material.gamma_ratio")?,
            pick(self.omega0_ratio, base.as_ref().map(|b| b.omega0_ratio), "material.omega0_ratio")?,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    pub alpha: f64,
    pub gamma_dip: f64,
    /// Gap in metres.
    pub gap_a: f64,
    pub u: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        GeometrySection { alpha: FRAC_PI_2, gamma_dip: 0.0, gap_a: 3e-9, u: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub delta_ratio: f64,
    /// Amplitude angle in radians; the Bloch polar angle is twice this.
    pub theta0: f64,
    pub coupling_g: Option<f64>,
    pub alpha_pol: Option<f64>,
    pub n_cycles: usize,
}

impl Default for SystemSection {
    fn default() -> Self {
        SystemSection {
            delta_ratio: 0.9,
            theta0: 44.9f64.to_radians(),
            coupling_g: None,
            alpha_pol: None,
            n_cycles: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsSection {
    pub resonance_mode: ResonanceMode,
    pub sign_convention: SignConvention,
    pub ir_cutoff: f64,
    /// `None` means `10 (w_res + Gamma)`.
    pub omega_max: Option<f64>,
    pub n_theta: usize,
    pub omega_tol: f64,
    /// Kernel grid step; `None` means `2 pi / (200 max(Delta, w_res))`.
    pub dt: Option<f64>,
    /// Kernel table coverage in cycles; `None` means `max(n_cycles, 30)`.
    pub table_cycles: Option<usize>,
    pub samples_per_cycle: usize,
    pub rtol: f64,
    pub atol: f64,
    pub purity_slack: f64,
    /// Evaluate the phase chain afresh each cycle and sum.
    pub restart_each_cycle: bool,
}

impl Default for NumericsSection {
    fn default() -> Self {
        let e = EvolveOptions::default();
        NumericsSection {
            resonance_mode: ResonanceMode::Surface,
            sign_convention: SignConvention::Dissipative,
            ir_cutoff: DEFAULT_IR_CUTOFF,
            omega_max: None,
            n_theta: DEFAULT_N_THETA,
            omega_tol: DEFAULT_OMEGA_TOL,
            dt: None,
            table_cycles: None,
            samples_per_cycle: e.samples_per_cycle,
            rtol: e.rtol,
            atol: e.atol,
            purity_slack: e.purity_slack,
            restart_each_cycle: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), formats: vec![Format::Csv] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub material: MaterialSection,
    pub geometry: GeometrySection,
    pub system: SystemSection,
    pub numerics: NumericsSection,
    pub output: OutputSection,
}

/// Everything a computation needs, resolved from a [`RunConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub material: MaterialParams,
    pub geometry: GeometryConfig,
    pub system: SystemParams,
    pub kernel: KernelConfig,
    pub evolve: EvolveOptions,
    pub dt: f64,
    pub table_t_max: f64,
    pub restart_each_cycle: bool,
}

fn syntax_error(e: &serde_json::Error) -> Error {
    use serde_json::error::Category;
    match e.classify() {
        Category::Data => {
            let msg = e.to_string();
            let key = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "config".into());
            Error::Validation { key, constraint: msg }
        }
        _ => Error::Syntax { line: e.line(), column: e.column(), message: e.to_string() },
    }
}

impl RunConfig {
    /// Parse and validate a JSON document.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| syntax_error(&e))?;
        cfg.scenario()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    /// Apply `section.key=value`; the value is read as JSON, falling back to
    /// a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::validation(assignment, "override must look like section.key=value"))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut doc = serde_json::to_value(&*self).expect("serializable");
        let mut node = &mut doc;
        let parts: Vec<&str> = path.trim().split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| Error::validation(path, "not a configuration section"))?;
            if !obj.contains_key(*part) {
                return Err(Error::validation(path, "unknown key"));
            }
            if i + 1 == parts.len() {
                obj.insert(part.to_string(), value.clone());
                break;
            }
            node = obj.get_mut(*part).expect("checked");
        }
        let updated: RunConfig = serde_json::from_value(doc).map_err(|e| Error::Validation {
            key: path.to_string(),
            constraint: e.to_string(),
        })?;
        updated.scenario()?;
        *self = updated;
        Ok(())
    }

    /// Resolve defaults and validate every physical and numerical invariant.
    pub fn scenario(&self) -> Result<Scenario> {
        let material = self.material.resolve()?;
        let g = &self.geometry;
        let geometry = GeometryConfig { alpha: g.alpha, gamma_dip: g.gamma_dip, gap_a: g.gap_a, u: g.u };
        geometry.validate_with(&material)?;
        let s = &self.system;
        let coupling_g = resolve_coupling(s.coupling_g, s.alpha_pol, s.delta_ratio, g.gap_a)?;
        let system = SystemParams {
            delta_ratio: s.delta_ratio,
            theta0: s.theta0,
            coupling_g,
            alpha_pol: s.alpha_pol,
        };
        system.validate()?;
        if s.n_cycles == 0 {
            return Err(Error::validation("system.n_cycles", "must be >= 1"));
        }
        let n = &self.numerics;
        let kernel = KernelConfig {
            material: material.clone(),
            geometry: geometry.clone(),
            resonance_mode: n.resonance_mode,
            ir_cutoff: n.ir_cutoff,
            omega_max: n.omega_max.unwrap_or_else(|| default_omega_max(&material, n.resonance_mode)),
            n_theta: n.n_theta,
            omega_tol: n.omega_tol,
            sign_convention: n.sign_convention,
            coupling_g,
        };
        kernel.validate()?;
        let w_res = n.resonance_mode.resonance_frequency(&material);
        let fastest = s.delta_ratio.max(w_res);
        let dt = n.dt.unwrap_or(2.0 * PI / (200.0 * fastest));
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::validation("numerics.dt", "must be finite and > 0"));
        }
        if dt > max_resolving_step(fastest) {
            return Err(Error::GridTooCoarse(format!(
                "dt = {dt} must not exceed 2 pi / (20 max(Delta, w_res)) = {}",
                max_resolving_step(fastest)
            )));
        }
        let table_cycles = n.table_cycles.unwrap_or(s.n_cycles.max(MIN_TABLE_CYCLES));
        if table_cycles < s.n_cycles {
            return Err(Error::validation("numerics.table_cycles", "must be >= system.n_cycles"));
        }
        if n.samples_per_cycle < 2 {
            return Err(Error::validation("numerics.samples_per_cycle", "must be >= 2"));
        }
        if !(n.rtol > 0.0 && n.atol > 0.0) {
            return Err(Error::validation("numerics.rtol", "tolerances must be > 0"));
        }
        if !(n.purity_slack >= 0.0) {
            return Err(Error::validation("numerics.purity_slack", "must be >= 0"));
        }
        Ok(Scenario {
            material,
            geometry,
            kernel,
            evolve: EvolveOptions {
                n_cycles: s.n_cycles,
                samples_per_cycle: n.samples_per_cycle,
                rtol: n.rtol,
                atol: n.atol,
                purity_slack: n.purity_slack,
            },
            dt,
            table_t_max: system.period() * table_cycles as f64,
            system,
            restart_each_cycle: n.restart_each_cycle,
        })
    }

    /// Fully explicit form: every default filled in, so the document alone
    /// reproduces the run.
    pub fn canonical(&self) -> Result<RunConfig> {
        let sc = self.scenario()?;
        let mut c = self.clone();
        c.material = MaterialSection {
            preset: self.material.preset.clone(),
            label: Some(sc.material.label.clone()),
            omega_pl: Some(sc.material.omega_pl),
            gamma_ratio: Some(sc.material.gamma_ratio),
            omega0_ratio: Some(sc.material.omega0_ratio),
        };
        c.system.coupling_g = Some(sc.system.coupling_g);
        c.numerics.omega_max = Some(sc.kernel.omega_max);
        c.numerics.dt = Some(sc.dt);
        c.numerics.table_cycles =
            Some(self.numerics.table_cycles.unwrap_or(self.system.n_cycles.max(MIN_TABLE_CYCLES)));
        Ok(c)
    }

    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.canonical()?).expect("serializable"))
    }

    /// Digest of the canonical form, excluding the output section.
    pub fn digest(&self) -> Result<String> {
        let mut c = self.canonical()?;
        c.output = OutputSection::default();
        Ok(digest_json(&c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_is_fully_defaulted() {
        let cfg = RunConfig::parse(
            r#"{"material": {"preset": "Au"}, "geometry": {"u": 6.4e-5, "alpha": 1.0, "gamma_dip": 0.5},
                "system": {"theta0": 0.7}}"#,
        )
        .unwrap();
        let sc = cfg.scenario().unwrap();
        assert_eq!(sc.material, MaterialParams::preset("Au").unwrap());
        assert_eq!(sc.system.coupling_g, crate::params::DEFAULT_COUPLING);
        assert_eq!(sc.system.delta_ratio, 0.9);
        assert_eq!(sc.evolve.samples_per_cycle, 4096);
        assert_eq!(sc.kernel.n_theta, DEFAULT_N_THETA);
        assert!((sc.table_t_max - 30.0 * sc.system.period()).abs() < 1e-12);
    }

    #[test]
    fn empty_document_uses_paper_metal() {
        let sc = RunConfig::parse("{}").unwrap().scenario().unwrap();
        assert_eq!(sc.material.gamma_ratio, 0.1);
        assert!((sc.dt - 2.0 * PI / 200.0).abs() < 1e-15);
    }

    #[test]
    fn relativistic_speed_rejected() {
        let err = RunConfig::parse(r#"{"material": {"preset": "Au"}, "geometry": {"u": 1.0}}"#).unwrap_err();
        assert!(err.to_string().contains("non-relativistic bound"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        match RunConfig::parse(r#"{"geometry": {"speed": 1.0}}"#).unwrap_err() {
            Error::Validation { key, .. } => assert_eq!(key, "speed"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn syntax_error_has_position() {
        match RunConfig::parse("{\n  \"geometry\": {\"u\": 0.1,,}\n}").unwrap_err() {
            Error::Syntax { line, column, .. } => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn canonical_round_trip() {
        let cfg = RunConfig::parse(r#"{"material": {"preset": "nSi"}, "geometry": {"u": 0.0025}}"#).unwrap();
        let text = cfg.canonical_json().unwrap();
        let again = RunConfig::parse(&text).unwrap();
        assert_eq!(again, cfg.canonical().unwrap());
        assert_eq!(again.canonical_json().unwrap(), text);
        assert_eq!(again.digest().unwrap(), cfg.digest().unwrap());
        assert_eq!(again.scenario().unwrap(), cfg.scenario().unwrap());
    }

    #[test]
    fn overrides() {
        let mut cfg = RunConfig::default();
        cfg.set("geometry.u=0.03").unwrap();
        cfg.set("numerics.resonance_mode=literal").unwrap();
        cfg.set("material.preset=nSi").unwrap();
        assert_eq!(cfg.geometry.u, 0.03);
        assert_eq!(cfg.numerics.resonance_mode, ResonanceMode::Literal);
        assert_eq!(cfg.scenario().unwrap().material.gamma_ratio, 1.0);
        assert!(cfg.set("geometry.nope=1").is_err());
        assert!(cfg.set("geometry.u=-1").is_err());
        assert_eq!(cfg.geometry.u, 0.03);
    }

    #[test]
    fn polarizability_consistency() {
        let g = crate::params::coupling_from_polarizability(1e-29, 0.9, 3e-9);
        let ok = format!(r#"{{"system": {{"alpha_pol": 1e-29, "coupling_g": {g:e}}}}}"#);
        assert!(RunConfig::parse(&ok).is_ok());
        let bad = r#"{"system": {"alpha_pol": 1e-29, "coupling_g": 1.0}}"#;
        assert!(RunConfig::parse(bad).is_err());
    }

    #[test]
    fn coarse_grid_rejected() {
        let err = RunConfig::parse(r#"{"numerics": {"dt": 1.0}}"#).unwrap_err();
        assert!(matches!(err, Error::GridTooCoarse(_)));
    }
}
