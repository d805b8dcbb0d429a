//! Training data: clean/noisy pairs, seeded Gaussian noise, manifests and a
//! synthetic test image.

use std::path::{Path, PathBuf};

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::io::load_image;

#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub clean: ImageGrid,
    pub noisy: ImageGrid,
    pub id: String,
}

impl TrainingPair {
    pub fn new(clean: ImageGrid, noisy: ImageGrid, id: impl Into<String>) -> Result<Self> {
        if !clean.same_shape(&noisy) {
            return Err(Error::Shape(format!(
                "clean {:?} vs noisy {:?}",
                clean.shape(),
                noisy.shape()
            )));
        }
        Ok(Self {
            clean,
            noisy,
            id: id.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetRole {
    #[default]
    Train,
    Validate,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pairs: Vec<TrainingPair>,
    pub role: DatasetRole,
}

impl Dataset {
    pub fn new(pairs: Vec<TrainingPair>, role: DatasetRole) -> Result<Self> {
        let Some(first) = pairs.first() else {
            return Err(Error::InvalidParam("dataset is empty".into()));
        };
        let shape = first.clean.shape();
        if let Some(p) = pairs.iter().find(|p| p.clean.shape() != shape) {
            return Err(Error::Shape(format!("pair {} has shape {:?}, expected {shape:?}", p.id, p.clean.shape())));
        }
        Ok(Self { pairs, role })
    }

    pub fn train(pairs: Vec<TrainingPair>) -> Result<Self> {
        Self::new(pairs, DatasetRole::Train)
    }

    pub fn pairs(&self) -> &[TrainingPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.pairs[0].clean.shape()
    }
}

/// Standard normal samples from SplitMix64 (state initialized to the seed)
/// through the Box-Muller transform; both outputs of each transform are
/// used in order.
pub struct GaussianStream {
    rng: SplitMix64,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: SplitMix64::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform on `(0, 1]` from the top 53 bits.
    fn open_unit(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn half_open_unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let r = (-2.0 * self.open_unit().ln()).sqrt();
        let theta = std::f64::consts::TAU * self.half_open_unit();
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// `u + eps` with `eps` i.i.d. `N(0, sigma^2)`, not clipped.
pub fn add_gaussian_noise(u: &ImageGrid, sigma: f64, seed: u64) -> Result<ImageGrid> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParam(format!("noise level must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(u.clone());
    }
    let mut g = GaussianStream::new(seed);
    let data = u.data().iter().map(|&v| v + sigma * g.next_normal()).collect();
    u.with_data(data)
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq)]
pub enum ManifestEntry {
    Files { clean: PathBuf, noisy: PathBuf },
    Synthetic { clean: PathBuf, sigma: f64, seed: u64 },
}

/// Parses `clean noisy` or `clean SYNTH sigma seed` lines. Blank lines and
/// lines starting with `#` are skipped; relative paths resolve against
/// `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: &str| Error::InvalidParam(format!("manifest line {}: {msg}", k + 1));
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        match fields.as_slice() {
            [clean, "SYNTH", sigma, seed] => out.push(ManifestEntry::Synthetic {
                clean: resolve(clean),
                sigma: sigma.parse().map_err(|_| bad("sigma is not a number"))?,
                seed: seed.parse().map_err(|_| bad("seed is not an unsigned integer"))?,
            }),
            [clean, noisy] => out.push(ManifestEntry::Files {
                clean: resolve(clean),
                noisy: resolve(noisy),
            }),
            _ => return Err(bad("expected `clean noisy` or `clean SYNTH sigma seed`")),
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidParam("manifest lists no pairs".into()));
    }
    Ok(out)
}

/// Checks that every file named by the manifest exists.
pub fn check_manifest_paths(entries: &[ManifestEntry]) -> Result<()> {
    for e in entries {
        let paths: Vec<&PathBuf> = match e {
            ManifestEntry::Files { clean, noisy } => vec![clean, noisy],
            ManifestEntry::Synthetic { clean, .. } => vec![clean],
        };
        for p in paths {
            if !p.is_file() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("{} does not exist", p.display()),
                )));
            }
        }
    }
    Ok(())
}

pub fn load_manifest(path: impl AsRef<Path>, role: DatasetRole) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&text, base)?;
    check_manifest_paths(&entries)?;
    let pairs = entries
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let id = format!("pair{k}");
            match e {
                ManifestEntry::Files { clean, noisy } => TrainingPair::new(load_image(clean)?, load_image(noisy)?, id),
                ManifestEntry::Synthetic { clean, sigma, seed } => {
                    let c = load_image(clean)?;
                    let f = add_gaussian_noise(&c, *sigma, *seed)?;
                    TrainingPair::new(c, f, id)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(pairs, role)
}

/// Deterministic piecewise-smooth test image in `[0, 1]`: a shaded
/// background, a bright disc with a soft interior bump, a dark rectangle
/// and a diagonal ramp band.
pub fn piecewise_smooth(m1: usize, m2: usize) -> ImageGrid {
    ImageGrid::from_fn(m1, m2, |r, c| {
        let y = (r as f64 + 0.5) / m1 as f64;
        let x = (c as f64 + 0.5) / m2 as f64;
        let mut v = 0.25 + 0.2 * x + 0.1 * y;
        let (dx, dy) = (x - 0.35, y - 0.4);
        let d2 = dx * dx + dy * dy;
        if d2 < 0.22 * 0.22 {
            v = 0.8 + 0.15 * (-d2 / 0.01).exp();
        }
        if (0.6..0.9).contains(&x) && (0.55..0.85).contains(&y) {
            v = 0.1 + 0.1 * y;
        }
        let band = x + y;
        if (1.05..1.2).contains(&band) && x > 0.55 && y < 0.5 {
            v = 0.55 + 0.4 * (x - 0.55);
        }
        v.clamp(0.0, 1.0)
    })
}
