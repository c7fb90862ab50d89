//! Tabular results with provenance headers, written as CSV or JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Format, RunConfig};
use crate::error::Result;
use crate::kernel::KernelTable;
use crate::master::Trajectory;
use crate::phase::PhaseSeries;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl Cell {
    /// 17 significant digits for floats.
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v:.16e}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Column header plus rows, without provenance.
    pub fn csv_body(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self, prov: &Provenance) -> String {
        let mut out = prov.csv_header();
        out.push_str(&self.csv_body());
        out
    }

    pub fn to_json(&self, prov: &Provenance) -> String {
        let doc = json!({
            "provenance": prov.to_json(),
            "columns": self.columns,
            "rows": self.rows,
        });
        serde_json::to_string_pretty(&doc).expect("serializable")
    }
}

/// Data section of a CSV file: everything after the `#` header lines.
pub fn data_section(csv: &str) -> String {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .fold(String::new(), |mut acc, l| {
            acc.push_str(l);
            acc.push('\n');
            acc
        })
}

/// What produced a file, enough to re-run it.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub command: String,
    pub config_digest: String,
    /// Canonical configuration document.
    pub config: Value,
    pub wall_time_s: f64,
    pub tolerances: Value,
    pub extra: Vec<(String, Value)>,
}

impl Provenance {
    pub fn new(command: &str, cfg: &RunConfig, wall_time_s: f64) -> Result<Self> {
        let canonical = cfg.canonical()?;
        let n = &canonical.numerics;
        Ok(Provenance {
            command: command.to_string(),
            config_digest: cfg.digest()?,
            config: serde_json::to_value(&canonical).expect("serializable"),
            wall_time_s,
            tolerances: json!({
                "rtol": n.rtol,
                "atol": n.atol,
                "omega_tol": n.omega_tol,
                "n_theta": n.n_theta,
                "dt": n.dt,
                "samples_per_cycle": n.samples_per_cycle,
                "purity_slack": n.purity_slack,
            }),
            extra: Vec::new(),
        })
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.extra.push((key.to_string(), serde_json::to_value(value).expect("serializable")));
        self
    }

    fn csv_header(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# qfphase {CODE_VERSION}");
        let _ = writeln!(out, "# command: {}", self.command);
        let _ = writeln!(out, "# config_digest: {}", self.config_digest);
        let _ = writeln!(out, "# wall_time_s: {:.3}", self.wall_time_s);
        let _ = writeln!(out, "# tolerances: {}", self.tolerances);
        for (k, v) in &self.extra {
            let _ = writeln!(out, "# {k}: {v}");
        }
        let _ = writeln!(out, "# config: {}", self.config);
        out
    }

    fn to_json(&self) -> Value {
        let mut m = serde_json::Map::new();
        m.insert("code_version".into(), json!(CODE_VERSION));
        m.insert("command".into(), json!(self.command));
        m.insert("config_digest".into(), json!(self.config_digest));
        m.insert("wall_time_s".into(), json!(self.wall_time_s));
        m.insert("tolerances".into(), self.tolerances.clone());
        for (k, v) in &self.extra {
            m.insert(k.clone(), v.clone());
        }
        m.insert("config".into(), self.config.clone());
        Value::Object(m)
    }
}

/// Recover the embedded configuration from a provenance header.
pub fn config_from_header(text: &str) -> Option<RunConfig> {
    text.lines()
        .find_map(|l| l.strip_prefix("# config: "))
        .and_then(|c| RunConfig::parse(c).ok())
}

/// Write `table` as `<stem>.csv` and/or `<stem>.json` under `dir`.
pub fn write_table(dir: &Path, stem: &str, formats: &[Format], table: &Table, prov: &Provenance) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for f in formats {
        let (ext, text) = match f {
            Format::Csv => ("csv", table.to_csv(prov)),
            Format::Json => ("json", table.to_json(prov)),
        };
        let path = dir.join(format!("{stem}.{ext}"));
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

pub fn kernel_table(t: &KernelTable) -> Table {
    let mut table = Table::new(&["t", "nu", "eta"]);
    for s in &t.values {
        table.push(vec![s.t.into(), s.nu.into(), s.eta.into()]);
    }
    table
}

pub fn trajectory_table(traj: &Trajectory) -> Table {
    let mut table = Table::new(&["t", "cycle", "x", "y", "z", "purity", "re_rho_eg", "im_rho_eg"]);
    for p in &traj.points {
        let [x, y, z] = p.rho.bloch();
        let eg = p.rho.rho_eg();
        table.push(vec![p.t.into(), p.cycle.into(), x.into(), y.into(), z.into(), p.purity.into(), eg.re.into(), eg.im.into()]);
    }
    table
}

pub fn phase_table(s: &PhaseSeries) -> Table {
    let mut table = Table::new(&["N", "phi_g", "phi_c", "delta_phi", "delta_phi_static", "delta_phi_velocity"]);
    for r in &s.rows {
        table.push(vec![
            r.n.into(),
            r.phi_g.into(),
            r.phi_c.into(),
            r.delta_phi.into(),
            r.delta_phi_static.into(),
            r.delta_phi_velocity.into(),
        ]);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_full_precision() {
        let cfg = RunConfig::default();
        let prov = Provenance::new("test", &cfg, 1.25).unwrap().with("note", "x");
        let mut t = Table::new(&["a", "b", "c"]);
        t.push(vec![0.1.into(), 3usize.into(), "p,q".into()]);
        let csv = t.to_csv(&prov);
        assert!(csv.starts_with("# qfphase "));
        assert!(csv.contains("# note: \"x\""));
        assert_eq!(data_section(&csv), "a,b,c\n1.0000000000000001e-1,3,\"p,q\"\n");
        let v: f64 = "1.0000000000000001e-1".parse().unwrap();
        assert_eq!(v, 0.1);
        assert_eq!(config_from_header(&csv).unwrap(), cfg.canonical().unwrap());
    }

    #[test]
    fn json_round_trips() {
        let prov = Provenance::new("test", &RunConfig::default(), 0.0).unwrap();
        let mut t = Table::new(&["x"]);
        t.push(vec![2.5.into()]);
        let v: Value = serde_json::from_str(&t.to_json(&prov)).unwrap();
        assert_eq!(v["rows"][0][0], json!(2.5));
        assert_eq!(v["provenance"]["code_version"], json!(CODE_VERSION));
    }
}
