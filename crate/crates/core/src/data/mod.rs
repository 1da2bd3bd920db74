//! Datasets, synthetic targets and sample-quality metrics.

mod grid;
mod metrics;
mod synth;

pub use grid::{density_grid, DensityGrid, GridCell};
pub use metrics::{
    euler_angles, euler_to_matrix, ks_statistic, ks_two_sample, median_distance, mmd, mmd_biased, mmd_permutation_test, Bandwidth,
    MmdConfig, PermutationTest, MEDIAN_SUBSAMPLE,
};
pub use synth::{synth_so3_mixture, synth_torus_target, So3Mixture, TorusTarget};

use crate::error::{Error, Result};
use crate::manifold::Manifold;
use crate::sde::{read_samples, write_samples};
use rand::seq::SliceRandom;
use std::path::{Path, PathBuf};

/// Index lists of a train/validation/test partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Shuffled 0.8/0.1/0.1 partition of `0..n`.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut crate::stream_rng(seed, 0));
        let n_train = (0.8 * n as f64).round() as usize;
        let n_valid = ((0.1 * n as f64).round() as usize).min(n - n_train);
        let test = idx.split_off(n_train + n_valid);
        let valid = idx.split_off(n_train);
        Split { train: idx, valid, test }
    }

    fn check(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.valid).chain(&self.test) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("split index {i} is out of range or repeated")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("split does not cover every point".into()));
        }
        Ok(())
    }
}

/// Which part of a [`Split`] to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Train,
    Valid,
    Test,
    All,
}

impl std::str::FromStr for Part {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Part::Train),
            "valid" | "validation" => Ok(Part::Valid),
            "test" => Ok(Part::Test),
            "all" => Ok(Part::All),
            _ => Err(Error::InvalidArgument(format!("unknown split '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifold: Manifold,
    pub points: Vec<Vec<f64>>,
    pub split: Split,
    /// Source path or generator description.
    pub provenance: String,
}

impl Dataset {
    /// Validates every point and draws a seeded split.
    pub fn new(manifold: Manifold, points: Vec<Vec<f64>>, seed: u64, provenance: impl Into<String>) -> Result<Self> {
        for p in &points {
            manifold.check_point(p)?;
        }
        let split = Split::random(points.len(), seed);
        Ok(Dataset { manifold, points, split, provenance: provenance.into() })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn part(&self, part: Part) -> Vec<Vec<f64>> {
        let idx: &[usize] = match part {
            Part::Train => &self.split.train,
            Part::Valid => &self.split.valid,
            Part::Test => &self.split.test,
            Part::All => return self.points.clone(),
        };
        idx.iter().map(|&i| self.points[i].clone()).collect()
    }

    fn sidecar(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".split");
        PathBuf::from(s)
    }

    /// Writes the points as a sample dump and the split to `<path>.split`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_samples(path, &self.manifold, 0, &self.points)?;
        let fmt = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
        let text = format!(
            "provenance {}\ntrain {}\nvalid {}\ntest {}\n",
            self.provenance,
            fmt(&self.split.train),
            fmt(&self.split.valid),
            fmt(&self.split.test)
        );
        std::fs::write(Self::sidecar(path), text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let dump = read_samples(path)?;
        let text = std::fs::read_to_string(Self::sidecar(path))?;
        let mut split = Split { train: vec![], valid: vec![], test: vec![] };
        let mut provenance = String::new();
        for (i, line) in text.lines().enumerate() {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            let parse = || -> Result<Vec<usize>> {
                rest.split_whitespace()
                    .map(|v| v.parse().map_err(|_| Error::MalformedRow { line: i + 1, reason: format!("bad index '{v}'") }))
                    .collect()
            };
            match key {
                "provenance" => provenance = rest.to_string(),
                "train" => split.train = parse()?,
                "valid" => split.valid = parse()?,
                "test" => split.test = parse()?,
                "" => {}
                _ => return Err(Error::MalformedRow { line: i + 1, reason: format!("unknown key '{key}'") }),
            }
        }
        split.check(dump.points.len())?;
        Ok(Dataset { manifold: dump.manifold, points: dump.points, split, provenance })
    }
}

/// `(lat, lon)` in degrees to a unit vector.
pub fn latlon_to_xyz(lat: f64, lon: f64) -> [f64; 3] {
    let (la, lo) = (lat.to_radians(), lon.to_radians());
    [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
}

/// Unit vector to `(lat, lon)` in degrees.
pub fn xyz_to_latlon(x: &[f64]) -> (f64, f64) {
    (x[2].clamp(-1.0, 1.0).asin().to_degrees(), x[1].atan2(x[0]).to_degrees())
}

/// Parses `lat,lon` rows in degrees. Lines starting with `#` and blank lines
/// are skipped; a non-numeric first row is taken as a header.
pub fn parse_latlon_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut points = Vec::new();
    let mut first = true;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let nums: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let nums = match nums {
            Ok(n) => n,
            Err(_) if first => {
                first = false;
                continue;
            }
            Err(e) => return Err(Error::MalformedRow { line: row, reason: e.to_string() }),
        };
        first = false;
        if nums.len() != 2 {
            return Err(Error::MalformedRow { line: row, reason: format!("expected 2 fields, got {}", nums.len()) });
        }
        let (lat, lon) = (nums[0], nums[1]);
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::MalformedRow { line: row, reason: format!("latitude {lat} outside [-90, 90]") });
        }
        if !lon.is_finite() {
            return Err(Error::MalformedRow { line: row, reason: "longitude is not finite".into() });
        }
        points.push(latlon_to_xyz(lat, lon).to_vec());
    }
    Ok(points)
}

/// Loads a lat/lon CSV as a dataset on S².
pub fn load_latlon_csv(path: &Path, seed: u64) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Dataset::new(Manifold::Sphere(2), parse_latlon_csv(&text)?, seed, path.display().to_string())
}

/// Names of the earth-science datasets with bundled fixtures.
pub const FIXTURE_NAMES: [&str; 4] = ["volcano", "earthquake", "flood", "fire"];

/// A deterministic 50-row CSV standing in for the named dataset: a few
/// concentrated clusters on the sphere, in the two-column degree format.
pub fn fixture_csv(name: &str) -> Result<String> {
    let k = FIXTURE_NAMES.iter().position(|n| *n == name).ok_or_else(|| Error::InvalidArgument(format!("no fixture named '{name}'")))?;
    let s2 = Manifold::Sphere(2);
    let mut rng = crate::stream_rng(0x5eed, k as u64);
    let centres: Vec<Vec<f64>> = (0..3 + k).map(|_| s2.sample_uniform(&mut rng)).collect::<Result<_>>()?;
    let mut out = format!("# synthetic {name} fixture\nlat,lon\n");
    for i in 0..50 {
        let x = crate::heat_kernel::wrapped_gaussian_sample(&s2, &centres[i % centres.len()], 0.15, &mut rng);
        let (lat, lon) = xyz_to_latlon(&x);
        out.push_str(&format!("{lat:.6},{lon:.6}\n"));
    }
    Ok(out)
}
