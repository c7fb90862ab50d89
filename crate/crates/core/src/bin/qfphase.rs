use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use qfphase::cache::{KernelCache, CACHE_DIR_ENV};
use qfphase::config::RunConfig;
use qfphase::output::{self, Provenance, Table};
use qfphase::sweep::{self, CalibrationTarget, SweepResult, SweepSpec, REFERENCE_TARGET};
use qfphase::{Error, Result};

#[derive(Parser)]
#[command(name = "qfphase", version, about = "Geometric phase of a two-level atom moving above a lossy surface")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set geometry.u=0.01`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: $QFPHASE_WORKERS, else all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Kernel cache directory (default: $QFPHASE_CACHE_DIR, else memory only).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the noise and dissipation kernels.
    Kernels,
    /// Integrate the master equation and write the trajectory.
    Evolve,
    /// Geometric phase per cycle with its static and velocity corrections.
    Phase,
    /// Run a parameter sweep described by a JSON spec.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Produce the dataset of a figure preset (2, 3, 4 or 7).
    Figure { number: u32 },
    /// Find the coupling that gives a target relative correction.
    Calibrate {
        #[arg(long, default_value_t = REFERENCE_TARGET.u)]
        u: f64,
        #[arg(long, default_value_t = REFERENCE_TARGET.n)]
        n: usize,
        #[arg(long, default_value_t = REFERENCE_TARGET.ratio)]
        ratio: f64,
        /// Relative tolerance on the ratio.
        #[arg(long, default_value_t = 0.01)]
        tol: f64,
    },
    /// Run the fast invariant checks.
    Validate,
}

struct Context {
    cfg: RunConfig,
    out: PathBuf,
    workers: usize,
    cache: KernelCache,
    started: Instant,
}

impl Context {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for o in &common.overrides {
            cfg.set(o)?;
        }
        cfg.scenario()?;
        let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
        cfg.output.dir = out.clone();
        let workers = common.workers.unwrap_or_else(sweep::default_workers);
        let cache_dir = common
            .cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from));
        let cache = match cache_dir {
            Some(d) => KernelCache::with_dir(d),
            None => KernelCache::new(),
        };
        Ok(Context { cfg, out, workers, cache, started: Instant::now() })
    }

    fn provenance(&self, command: &str) -> Result<Provenance> {
        Provenance::new(command, &self.cfg, self.started.elapsed().as_secs_f64())
    }

    fn write(&self, stem: &str, table: &Table, prov: &Provenance) -> Result<()> {
        for p in output::write_table(&self.out, stem, &self.cfg.output.formats, table, prov)? {
            println!("wrote {}", p.display());
        }
        Ok(())
    }

    fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        std::fs::write(&path, serde_json::to_string_pretty(value).expect("serializable"))?;
        println!("wrote {}", path.display());
        Ok(())
    }
}

fn error_record(e: &Error) -> serde_json::Value {
    json!({ "error": e.kind(), "message": e.to_string() })
}

/// Emit one error record per failed point; returns how many there were.
fn report_failures(r: &SweepResult) -> usize {
    let failures = r.failures();
    for (index, rec) in &failures {
        eprintln!("{}", json!({ "error": rec.kind, "message": rec.message, "point": index }));
    }
    failures.len()
}

fn sweep_table(r: &SweepResult) -> Table {
    let mut t = Table::new(&[
        "point", "u", "alpha", "gamma_dip", "theta0", "gamma_ratio", "N", "phi_g", "phi_c", "delta_phi",
        "delta_phi_static", "delta_phi_velocity",
    ]);
    for p in &r.points {
        let Ok(s) = &p.outcome else { continue };
        for row in &s.rows {
            let q = &p.params;
            t.push(vec![
                p.index.into(),
                q.u.into(),
                q.alpha.into(),
                q.gamma_dip.into(),
                q.theta0.into(),
                q.gamma_ratio.into(),
                row.n.into(),
                row.phi_g.into(),
                row.phi_c.into(),
                row.delta_phi.into(),
                row.delta_phi_static.into(),
                row.delta_phi_velocity.into(),
            ]);
        }
    }
    t
}

fn run(cli: &Cli) -> Result<usize> {
    let ctx = Context::new(&cli.common)?;
    let sc = ctx.cfg.scenario()?;
    match &cli.command {
        Command::Kernels => {
            let table = sweep::kernel_table(&sc, &ctx.cache)?;
            let prov = ctx
                .provenance("kernels")?
                .with("truncation_estimate", sc.kernel.truncation_estimate()?);
            ctx.write("kernels", &output::kernel_table(&table), &prov)?;
        }
        Command::Evolve => {
            let traj = sweep::with_workers(ctx.workers, || sweep::run_evolve(&sc, &ctx.cache))??;
            let prov = ctx
                .provenance("evolve")?
                .with("theta0", sc.system.theta0)
                .with("bloch_polar_angle", sc.system.bloch_polar_angle())
                .with("trajectory", &traj.meta);
            ctx.write("trajectory", &output::trajectory_table(&traj), &prov)?;
        }
        Command::Phase => {
            let s = sweep::with_workers(ctx.workers, || sweep::run_phase(&sc, &ctx.cache))??;
            let prov = ctx.provenance("phase")?.with("phase", &s.meta);
            ctx.write("phase", &output::phase_table(&s), &prov)?;
        }
        Command::Sweep { spec } => {
            let text = std::fs::read_to_string(spec).map_err(|e| Error::Io(format!("{}: {e}", spec.display())))?;
            let mut spec: SweepSpec = serde_json::from_str(&text).map_err(|e| Error::Syntax {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
            for o in &cli.common.overrides {
                spec.base.set(o)?;
            }
            let r = sweep::run_sweep(&spec, &ctx.cache, ctx.workers)?;
            let prov = Provenance::new("sweep", &spec.base, ctx.started.elapsed().as_secs_f64())?
                .with("axes", &spec.axes);
            ctx.write("sweep_data", &sweep_table(&r), &prov)?;
            return Ok(report_failures(&r));
        }
        Command::Figure { number } => {
            let command = format!("figure {number}");
            let (table, failures) = match number {
                2 => {
                    let configs = sweep::fig2_configs(&ctx.cfg);
                    let (t, f) = sweep::fig2_table(&configs, &ctx.cache, ctx.workers)?;
                    for (i, rec) in &f {
                        eprintln!("{}", json!({ "error": rec.kind, "message": rec.message, "point": i }));
                    }
                    (t, f.len())
                }
                3 | 4 | 7 => {
                    let configs = match number {
                        3 => sweep::fig3_configs(&ctx.cfg),
                        4 => sweep::fig4_configs(&ctx.cfg),
                        _ => sweep::fig7_configs(&ctx.cfg),
                    };
                    let r = sweep::run_configs(&configs, &ctx.cache, ctx.workers)?;
                    let t = match number {
                        3 => sweep::fig3_table(&r),
                        4 => sweep::fig4_table(&r),
                        _ => sweep::fig7_table(&r, &configs),
                    };
                    (t, report_failures(&r))
                }
                _ => return Err(Error::validation("figure", "must be one of 2, 3, 4, 7")),
            };
            let prov = ctx.provenance(&command)?;
            ctx.write(&format!("fig{number}_data"), &table, &prov)?;
            return Ok(failures);
        }
        Command::Calibrate { u, n, ratio, tol } => {
            let target = CalibrationTarget { u: *u, n: *n, ratio: *ratio };
            let cal = sweep::with_workers(ctx.workers, || {
                sweep::calibrate_coupling(&ctx.cfg, target, *tol, &ctx.cache)
            })??;
            println!("g* = {:e} (ratio {:.6} at u = {}, N = {})", cal.g, cal.ratio, u, n);
            let prov = ctx.provenance("calibrate")?;
            let mut t = Table::new(&["g", "ratio"]);
            for s in &cal.history {
                t.push(vec![s.g.into(), s.ratio.into()]);
            }
            ctx.write("calibration_history", &t, &prov)?;
            ctx.write_json(
                "calibration.json",
                &json!({ "g": cal.g, "ratio": cal.ratio, "target": cal.target, "config_digest": ctx.cfg.digest()? }),
            )?;
        }
        Command::Validate => {
            let mut failed = 0;
            for check in qfphase::validate::run_all() {
                println!("{} {}: {}", if check.passed { "PASS" } else { "FAIL" }, check.name, check.detail);
                if !check.passed {
                    failed += 1;
                    eprintln!("{}", json!({ "error": "validation-failed", "message": check.name }));
                }
            }
            return Ok(failed);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str], out: &std::path::Path) -> Result<usize> {
        let mut all = vec!["qfphase", "--out", out.to_str().unwrap()];
        all.extend_from_slice(args);
        run(&Cli::try_parse_from(all).expect("arguments parse"))
    }

    const SMALL: [&str; 6] = [
        "--set", "system.n_cycles=2",
        "--set", "numerics.samples_per_cycle=64",
        "--set", "geometry.u=0.01",
    ];

    #[test]
    fn uncoupled_evolve_keeps_purity() {
        let dir = tempfile::tempdir().unwrap();
        let mut args = vec!["evolve", "--set", "system.coupling_g=0"];
        args.extend_from_slice(&SMALL);
        assert_eq!(run_args(&args, dir.path()).unwrap(), 0);
        let text = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
        let body = output::data_section(&text);
        let mut lines = body.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let col = header.iter().position(|c| *c == "purity").unwrap();
        let mut rows = 0;
        for line in lines {
            let p: f64 = line.split(',').nth(col).unwrap().parse().unwrap();
            assert!((p - 1.0).abs() < 1e-8, "purity {p}");
            rows += 1;
        }
        assert_eq!(rows, 2 * 64 + 1);
    }

    #[test]
    fn phase_is_reproducible_and_self_describing() {
        let dir = tempfile::tempdir().unwrap();
        let mut args = vec!["phase"];
        args.extend_from_slice(&SMALL);
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        run_args(&args, &a).unwrap();
        run_args(&args, &b).unwrap();
        let ta = std::fs::read_to_string(a.join("phase.csv")).unwrap();
        let tb = std::fs::read_to_string(b.join("phase.csv")).unwrap();
        assert_eq!(output::data_section(&ta), output::data_section(&tb));
        // The embedded configuration reproduces the recorded digest.
        let cfg = output::config_from_header(&ta).unwrap();
        let digest = ta.lines().find_map(|l| l.strip_prefix("# config_digest: ")).unwrap();
        assert_eq!(cfg.digest().unwrap(), digest);
    }

    #[test]
    fn json_output_format() {
        let dir = tempfile::tempdir().unwrap();
        let mut args = vec!["kernels", "--set", "output.formats=[\"json\"]"];
        args.extend_from_slice(&SMALL);
        run_args(&args, dir.path()).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("kernels.json")).unwrap()).unwrap();
        assert_eq!(v["columns"], json!(["t", "nu", "eta"]));
        assert_eq!(v["rows"][0][2], json!(0.0));
        assert!(!dir.path().join("kernels.csv").exists());
    }

    #[test]
    fn errors_are_structured() {
        let dir = tempfile::tempdir().unwrap();
        let e = run_args(&["phase", "--set", "geometry.bogus=1"], dir.path()).unwrap_err();
        assert_eq!(error_record(&e)["error"], json!("validation"));
        let e = run_args(&["evolve", "--set", "geometry.u=-1"], dir.path()).unwrap_err();
        assert!(error_record(&e)["message"].as_str().unwrap().contains("geometry.u"));
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, "{\"system\": {").unwrap();
        let e = run_args(&["phase", "--config", bad.to_str().unwrap()], dir.path()).unwrap_err();
        assert_eq!(error_record(&e)["error"], json!("syntax"));
        let e = run_args(&["figure", "5"], dir.path()).unwrap_err();
        assert_eq!(error_record(&e)["error"], json!("validation"));
    }

    #[test]
    fn sweep_spec_runs() {
        let dir = tempfile::tempdir().unwrap();
        let spec = dir.path().join("spec.json");
        std::fs::write(
            &spec,
            r#"{"base": {"system": {"n_cycles": 2}, "numerics": {"samples_per_cycle": 64}},
                "axes": {"u": [0.0, 0.01]}}"#,
        )
        .unwrap();
        assert_eq!(run_args(&["sweep", "--spec", spec.to_str().unwrap()], dir.path()).unwrap(), 0);
        let text = std::fs::read_to_string(dir.path().join("sweep_data.csv")).unwrap();
        assert_eq!(output::data_section(&text).lines().count(), 1 + 2 * 2);
    }
}
