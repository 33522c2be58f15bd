use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::runs::{
    aggregate_csv, jointlaw_csv, CoverageReport, HeavyReport, RunContext, SeedReport, SimulateReport, Thm13Report,
};
use crate::error::{Error, Result};
use crate::green::GreenTable;
use crate::io::{sha256_file, sha256_hex, to_json17};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenCacheRef {
    pub path: String,
    pub dist_hash: String,
    pub tolerance: f64,
    pub sha256: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub archive_version: u32,
    pub tool: String,
    pub tool_version: String,
    /// Report kind: `simulate`, `heavy`, `coverage`, `thm13` or `jointlaw`.
    pub kind: String,
    pub command: Vec<String>,
    pub complete: bool,
    pub green_cache: Option<GreenCacheRef>,
    /// Relative path to SHA-256 of every file except the manifest.
    pub files: BTreeMap<String, String>,
}

/// An archive being written. The manifest is marked complete only by
/// [`Archive::finish`]; anything interrupted earlier stays `complete: false`.
pub struct Archive {
    dir: PathBuf,
    manifest: Manifest,
}

impl Archive {
    pub fn create(dir: &Path, cfg: &ExperimentConfig, kind: &str, command: &[String]) -> Result<Self> {
        fs::create_dir_all(dir.join("seeds"))?;
        let mut a = Self {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                archive_version: ARCHIVE_VERSION,
                tool: env!("CARGO_PKG_NAME").into(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                kind: kind.into(),
                command: command.to_vec(),
                complete: false,
                green_cache: None,
                files: BTreeMap::new(),
            },
        };
        a.put(CONFIG, cfg.to_toml()?.as_bytes())?;
        a.write_manifest()?;
        Ok(a)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.manifest.files.insert(rel.into(), sha256_hex(bytes));
        Ok(())
    }

    /// Per-replica JSON files plus the aggregate CSV; returns the CSV text.
    pub fn put_reports<R: SeedReport>(&mut self, reports: &[R]) -> Result<String> {
        for r in reports {
            self.put(&seed_file(R::NAME, r.replica()), to_json17(r)?.as_bytes())?;
        }
        let csv = aggregate_csv(reports)?;
        self.put(&format!("{}.csv", R::NAME), csv.as_bytes())?;
        Ok(csv)
    }

    pub fn set_green_cache(&mut self, cache_dir: Option<&Path>, ctx: &RunContext) -> Result<()> {
        self.manifest.green_cache = cache_dir.map(|dir| {
            let path = GreenTable::cache_path(dir, &ctx.dist);
            GreenCacheRef {
                path: path.display().to_string(),
                dist_hash: ctx.green.dist_hash().into(),
                tolerance: ctx.green.tolerance(),
                sha256: sha256_file(&path).ok(),
            }
        });
        Ok(())
    }

    pub fn finish(mut self) -> Result<Manifest> {
        self.manifest.complete = true;
        self.write_manifest()?;
        Ok(self.manifest)
    }

    fn write_manifest(&self) -> Result<()> {
        fs::write(self.dir.join(MANIFEST), to_json17(&self.manifest)?)?;
        Ok(())
    }
}

pub fn seed_file(name: &str, replica: u64) -> String {
    format!("seeds/{name}-{replica:04}.json")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ArchiveCheck {
    pub kind: String,
    pub files_checked: usize,
    pub problems: Vec<String>,
}

impl ArchiveCheck {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Re-hashes every file, then recomputes the aggregate CSV from the per-seed
/// reports (or, for joint-law archives, from the config) and compares bytes.
pub fn verify_archive(dir: &Path) -> Result<ArchiveCheck> {
    let text = fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| Error::Archive(format!("cannot read {}: {e}", dir.join(MANIFEST).display())))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut check = ArchiveCheck { kind: manifest.kind.clone(), ..Default::default() };
    if !manifest.complete {
        check.problems.push("archive is marked incomplete".into());
    }
    for (rel, want) in &manifest.files {
        check.files_checked += 1;
        match sha256_file(&dir.join(rel)) {
            Ok(got) if &got == want => {}
            Ok(_) => check.problems.push(format!("{rel}: content hash mismatch")),
            Err(_) => check.problems.push(format!("{rel}: missing")),
        }
    }
    if let Ok(entries) = fs::read_dir(dir.join("seeds")) {
        for e in entries.flatten() {
            let rel = format!("seeds/{}", e.file_name().to_string_lossy());
            if !manifest.files.contains_key(&rel) {
                check.problems.push(format!("{rel}: not listed in manifest"));
            }
        }
    }
    let cfg = ExperimentConfig::load(&dir.join(CONFIG))?;
    let replay = match manifest.kind.as_str() {
        "simulate" => replay::<SimulateReport>(dir, &cfg, &manifest),
        "heavy" => replay::<HeavyReport>(dir, &cfg, &manifest),
        "coverage" => replay::<CoverageReport>(dir, &cfg, &manifest),
        "thm13" => replay::<Thm13Report>(dir, &cfg, &manifest),
        "jointlaw" => {
            let cache = manifest.green_cache.as_ref().and_then(|g| Path::new(&g.path).parent().map(Path::to_path_buf));
            RunContext::prepare(&cfg, cache.as_deref(), &[cfg.site_point()?])
                .and_then(|ctx| jointlaw_csv(&cfg, &ctx))
                .map(|csv| ("jointlaw.csv".to_string(), csv))
        }
        other => Err(Error::Archive(format!("unknown archive kind {other:?}"))),
    };
    match replay {
        Ok((rel, csv)) => match fs::read(dir.join(&rel)) {
            Ok(stored) if stored == csv.as_bytes() => {}
            Ok(_) => check.problems.push(format!("{rel}: recomputed aggregate differs")),
            Err(_) => check.problems.push(format!("{rel}: missing")),
        },
        Err(e) => check.problems.push(format!("replay failed: {e}")),
    }
    Ok(check)
}

fn replay<R: SeedReport>(dir: &Path, cfg: &ExperimentConfig, manifest: &Manifest) -> Result<(String, String)> {
    let mut reports = Vec::with_capacity(cfg.seeds as usize);
    for r in 0..cfg.seeds {
        let rel = seed_file(R::NAME, r);
        if !manifest.files.contains_key(&rel) {
            return Err(Error::Archive(format!("{rel} not listed in manifest")));
        }
        let text = fs::read_to_string(dir.join(&rel))?;
        let report: R = serde_json::from_str(&text)?;
        if to_json17(&report)? != text {
            return Err(Error::Archive(format!("{rel} does not round-trip")));
        }
        reports.push(report);
    }
    Ok((format!("{}.csv", R::NAME), aggregate_csv(&reports)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::runs::run_simulate;

    fn small() -> ExperimentConfig {
        ExperimentConfig { steps: 2000, seeds: 3, base_seed: 5, ..Default::default() }
    }

    #[test]
    fn simulate_archive_round_trips_and_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let mut a = Archive::create(dir.path(), &cfg, "simulate", &["simulate".into()]).unwrap();
        a.put_reports(&run_simulate(&cfg).unwrap()).unwrap();
        a.finish().unwrap();
        let c = verify_archive(dir.path()).unwrap();
        assert!(c.ok(), "{:?}", c.problems);
        assert_eq!(c.files_checked, 5);

        let csv = dir.path().join("simulate.csv");
        let mut s = fs::read_to_string(&csv).unwrap();
        s.push('\n');
        fs::write(&csv, s).unwrap();
        assert!(!verify_archive(dir.path()).unwrap().ok());
    }

    #[test]
    fn unfinished_archive_is_incomplete() {
        let dir = tempfile::tempdir().unwrap();
        let _a = Archive::create(dir.path(), &small(), "simulate", &[]).unwrap();
        let c = verify_archive(dir.path()).unwrap();
        assert!(c.problems.iter().any(|p| p.contains("incomplete")));
    }

    #[test]
    fn zero_seeds_give_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig { seeds: 0, ..small() };
        let mut a = Archive::create(dir.path(), &cfg, "simulate", &[]).unwrap();
        let csv = a.put_reports(&run_simulate(&cfg).unwrap()).unwrap();
        a.finish().unwrap();
        assert_eq!(csv, "seed,replica,n,H,xi_n,argmax_count,eta_n\n");
        assert!(verify_archive(dir.path()).unwrap().ok());
    }
}
