//! Content-addressed kernel cache, in memory and optionally on disk.
//!
//! Tables are stored at unit coupling under the digest of their unit config
//! and grid, then scaled on the way out. The frequency series, which depends
//! only on the material and frequency numerics, is cached separately so that
//! geometry sweeps reuse it.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernel::{
    assemble_unit, check_grid, digest_json, frequency_series, KernelConfig, KernelTable, TimeGrid,
    TABLE_FORMAT_VERSION,
};

/// Environment variable naming the on-disk cache directory.
pub const CACHE_DIR_ENV: &str = "QFPHASE_CACHE_DIR";


#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
    pub disk_hits: usize,
}

#[derive(Default)]
pub struct KernelCache {
    dir: Option<PathBuf>,
    tables: Mutex<HashMap<String, Arc<KernelTable>>>,
    series: Mutex<HashMap<String, Arc<Vec<Complex64>>>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
    disk_hits: AtomicUsize,
}

// Values are computed outside the lock and the first insert wins. Blocking on
// a per-key cell would deadlock when the computing thread steals a rayon job
// that waits for the same key.
fn lookup<T>(map: &Mutex<HashMap<String, Arc<T>>>, key: &str) -> Option<Arc<T>> {
    map.lock().expect("cache lock").get(key).cloned()
}

/// Returns the stored value and whether this call inserted it.
fn insert<T>(map: &Mutex<HashMap<String, Arc<T>>>, key: &str, value: Arc<T>) -> (Arc<T>, bool) {
    let mut m = map.lock().expect("cache lock");
    match m.get(key) {
        Some(v) => (v.clone(), false),
        None => {
            m.insert(key.to_string(), value.clone());
            (value, true)
        }
    }
}

impl KernelCache {
    /// Memory-only cache.
    pub fn new() -> Self {
        KernelCache::default()
    }

    /// Cache that also persists tables under `dir`.
    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        KernelCache { dir: Some(dir.into()), ..Default::default() }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            disk_hits: self.disk_hits.load(Ordering::Relaxed),
        }
    }

    /// Kernel table for `cfg` on `grid`, scaled to `cfg.coupling_g`.
    pub fn table(&self, cfg: &KernelConfig, grid: &TimeGrid) -> Result<KernelTable> {
        Ok(self.unit_table(cfg, grid)?.scaled(cfg))
    }

    pub fn unit_table(&self, cfg: &KernelConfig, grid: &TimeGrid) -> Result<Arc<KernelTable>> {
        cfg.validate()?;
        let unit = cfg.unit();
        let key = digest_json(&(unit.digest(), grid.dt, grid.n_points));
        if let Some(t) = lookup(&self.tables, &key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(t);
        }
        let (t, from_disk) = match self.load(&key, &unit, grid) {
            Some(t) => (t, true),
            None => {
                let omega = self.series(&unit, grid)?;
                (assemble_unit(&unit, grid, &omega), false)
            }
        };
        let (t, inserted) = insert(&self.tables, &key, Arc::new(t));
        if !inserted {
            self.hits.fetch_add(1, Ordering::Relaxed);
        } else if from_disk {
            self.misses.fetch_add(1, Ordering::Relaxed);
            self.disk_hits.fetch_add(1, Ordering::Relaxed);
        } else {
            self.misses.fetch_add(1, Ordering::Relaxed);
            self.store(&key, &t)?;
        }
        Ok(t)
    }

    fn series(&self, unit: &KernelConfig, grid: &TimeGrid) -> Result<Arc<Vec<Complex64>>> {
        check_grid(unit, grid)?;
        let key = digest_json(&(
            &unit.material,
            unit.resonance_mode,
            unit.ir_cutoff,
            unit.omega_max,
            unit.omega_tol,
            grid.dt,
            grid.n_points,
        ));
        if let Some(s) = lookup(&self.series, &key) {
            return Ok(s);
        }
        let s = Arc::new(frequency_series(unit, grid)?);
        Ok(insert(&self.series, &key, s).0)
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("kernel-{key}.json")))
    }

    fn load(&self, key: &str, unit: &KernelConfig, grid: &TimeGrid) -> Option<KernelTable> {
        let path = self.path(key)?;
        let text = fs::read_to_string(path).ok()?;
        let t = parse_table(&text).ok()?;
        (t.config_hash == unit.digest() && t.dt == grid.dt && t.values.len() == grid.n_points).then_some(t)
    }

    fn store(&self, key: &str, table: &KernelTable) -> Result<()> {
        let Some(path) = self.path(key) else { return Ok(()) };
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = tempfile_in(dir, key);
        fs::write(&tmp, serde_json::to_vec(table).expect("serializable"))?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

fn tempfile_in(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!(".kernel-{key}.{}.tmp", std::process::id()))
}

/// Parse a serialized table, checking its format version.
pub fn parse_table(text: &str) -> Result<KernelTable> {
    let t: KernelTable = serde_json::from_str(text).map_err(|e| Error::CacheFormat(e.to_string()))?;
    if t.format_version != TABLE_FORMAT_VERSION {
        return Err(Error::CacheFormat(format!(
            "format version {} (expected {TABLE_FORMAT_VERSION})",
            t.format_version
        )));
    }
    Ok(t)
}
