use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::quadrature::green_quadrature_many;
use crate::error::{Error, Result};
use crate::lattice::{LatticePoint, StepDistribution, Symmetry};

const CACHE_MAGIC: &str = "# lattice-heavy green cache";
const CACHE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GreenMethod {
    Quadrature,
    Dp,
}

impl GreenMethod {
    fn as_str(self) -> &'static str {
        match self {
            GreenMethod::Quadrature => "quadrature",
            GreenMethod::Dp => "dp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreenEntry {
    pub value: f64,
    pub abs_error: f64,
    pub method: GreenMethod,
}

/// Green values for one distribution, keyed by orbit representative.
#[derive(Clone, Debug)]
pub struct GreenTable {
    dist_hash: String,
    dim: usize,
    symmetry: Symmetry,
    tol: f64,
    entries: BTreeMap<LatticePoint, GreenEntry>,
}

impl GreenTable {
    pub fn new(dist: &StepDistribution, tol: f64) -> Self {
        Self {
            dist_hash: dist.content_hash(),
            dim: dist.dim(),
            symmetry: dist.symmetry(),
            tol,
            entries: BTreeMap::new(),
        }
    }

    /// Quadrature values for `sites` (and the origin) to tolerance `tol`.
    pub fn compute(dist: &StepDistribution, sites: &[LatticePoint], tol: f64) -> Result<Self> {
        let mut t = Self::new(dist, tol);
        t.fill(dist, sites)?;
        Ok(t)
    }

    /// Adds quadrature values for any of `sites` not yet tabulated.
    pub fn fill(&mut self, dist: &StepDistribution, sites: &[LatticePoint]) -> Result<()> {
        let mut reps: Vec<LatticePoint> = std::iter::once(LatticePoint::origin(self.dim))
            .chain(sites.iter().cloned())
            .map(|x| self.symmetry.canonical(&x))
            .filter(|x| !self.entries.contains_key(x))
            .collect();
        reps.sort();
        reps.dedup();
        if reps.is_empty() {
            return Ok(());
        }
        let vals = green_quadrature_many(&reps, dist, self.tol)?;
        for (x, v) in reps.into_iter().zip(vals) {
            self.entries.insert(
                x,
                GreenEntry { value: v.value, abs_error: v.abs_error, method: GreenMethod::Quadrature },
            );
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    pub fn dist_hash(&self) -> &str {
        &self.dist_hash
    }

    pub fn get(&self, x: &LatticePoint) -> Option<GreenEntry> {
        self.entries.get(&self.symmetry.canonical(x)).copied()
    }

    pub fn value(&self, x: &LatticePoint) -> Result<f64> {
        self.get(x).map(|e| e.value).ok_or_else(|| Error::MissingGreenValue(x.to_string()))
    }

    pub fn contains(&self, x: &LatticePoint) -> bool {
        self.entries.contains_key(&self.symmetry.canonical(x))
    }

    pub fn insert(&mut self, x: &LatticePoint, entry: GreenEntry) {
        self.entries.insert(self.symmetry.canonical(x), entry);
    }

    /// Tabulated orbit representatives and their entries.
    pub fn entries(&self) -> impl Iterator<Item = (&LatticePoint, &GreenEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cache_path(dir: &Path, dist: &StepDistribution) -> PathBuf {
        dir.join(format!("green-{}.cache", &dist.content_hash()[..16]))
    }

    pub fn to_cache_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CACHE_MAGIC}");
        let _ = writeln!(s, "version={CACHE_VERSION}");
        let _ = writeln!(s, "dist={}", self.dist_hash);
        let _ = writeln!(s, "dim={}", self.dim);
        let _ = writeln!(s, "tol={:.17e}", self.tol);
        for (x, e) in &self.entries {
            let coords: Vec<String> = x.coords().iter().map(|c| c.to_string()).collect();
            let _ = writeln!(
                s,
                "{} {:.17e} {:.17e} {}",
                coords.join(" "),
                e.value,
                e.abs_error,
                e.method.as_str()
            );
        }
        s
    }

    pub fn from_cache_text(text: &str, dist: &StepDistribution) -> Result<Self> {
        let bad = |m: &str| Error::Parse(format!("green cache: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(CACHE_MAGIC) {
            return Err(bad("missing header"));
        }
        let mut header = BTreeMap::new();
        let mut body = Vec::new();
        for line in lines {
            match line.split_once('=') {
                Some((k, v)) if body.is_empty() && !k.contains(' ') => {
                    header.insert(k.to_string(), v.to_string());
                }
                _ => body.push(line),
            }
        }
        let version: u32 = header.get("version").and_then(|v| v.parse().ok()).ok_or_else(|| bad("version"))?;
        if version != CACHE_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hash = header.get("dist").ok_or_else(|| bad("dist"))?;
        if *hash != dist.content_hash() {
            return Err(bad("distribution hash mismatch"));
        }
        let tol: f64 = header.get("tol").and_then(|v| v.parse().ok()).ok_or_else(|| bad("tol"))?;
        let mut table = Self::new(dist, tol);
        let d = dist.dim();
        for line in body.into_iter().filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != d + 3 {
                return Err(bad(&format!("malformed row {line:?}")));
            }
            let x = LatticePoint::new(
                f[..d].iter().map(|c| c.parse().map_err(|_| bad("coordinate"))).collect::<Result<_>>()?,
            );
            let value: f64 = f[d].parse().map_err(|_| bad("value"))?;
            let abs_error: f64 = f[d + 1].parse().map_err(|_| bad("error"))?;
            let method = match f[d + 2] {
                "quadrature" => GreenMethod::Quadrature,
                "dp" => GreenMethod::Dp,
                m => return Err(bad(&format!("unknown method {m}"))),
            };
            table.insert(&x, GreenEntry { value, abs_error, method });
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_cache_text())?;
        Ok(())
    }

    pub fn load(path: &Path, dist: &StepDistribution) -> Result<Self> {
        Self::from_cache_text(&std::fs::read_to_string(path)?, dist)
    }

    /// Reads the cache for `dist` under `dir` if it covers `sites` at a
    /// tolerance at least as tight as `tol`; otherwise recomputes and rewrites it.
    pub fn load_or_compute(
        dir: &Path,
        dist: &StepDistribution,
        sites: &[LatticePoint],
        tol: f64,
    ) -> Result<Self> {
        let path = Self::cache_path(dir, dist);
        if let Ok(mut cached) = Self::load(&path, dist) {
            if cached.tol <= tol {
                let missing = sites.iter().any(|x| !cached.contains(x));
                if missing {
                    cached.fill(dist, sites)?;
                    cached.save(&path)?;
                }
                return Ok(cached);
            }
        }
        let t = Self::compute(dist, sites, tol)?;
        t.save(&path)?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_round_trip_and_tightening() {
        let d = StepDistribution::simple(3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let sites = [LatticePoint::unit(3, 1)];
        let t = GreenTable::load_or_compute(dir.path(), &d, &sites, 1e-6).unwrap();
        let path = GreenTable::cache_path(dir.path(), &d);
        let back = GreenTable::load(&path, &d).unwrap();
        assert_eq!(back.to_cache_text(), t.to_cache_text());
        assert_eq!(back.get(&LatticePoint::unit(3, 2).neg()), t.get(&LatticePoint::unit(3, 0)));

        // Looser request reuses; tighter request recomputes.
        let again = GreenTable::load_or_compute(dir.path(), &d, &sites, 1e-4).unwrap();
        assert_eq!(again.tolerance(), 1e-6);
        let tight = GreenTable::load_or_compute(dir.path(), &d, &sites, 1e-9).unwrap();
        assert_eq!(tight.tolerance(), 1e-9);
        assert!(GreenTable::load(&path, &d).unwrap().tolerance() == 1e-9);
    }

    #[test]
    fn cache_rejects_other_distribution() {
        let d3 = StepDistribution::simple(3).unwrap();
        let d4 = StepDistribution::simple(4).unwrap();
        let t = GreenTable::compute(&d3, &[], 1e-5).unwrap();
        assert!(GreenTable::from_cache_text(&t.to_cache_text(), &d4).is_err());
    }
}
