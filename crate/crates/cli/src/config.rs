//! Flat `key = value` run configuration. Keys carry a section prefix
//! (`tr.eta1`, `solver.tol`, `data.manifest`); `--set key=value` overrides
//! file entries. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tvb_core::denoise::TvSolver;
use tvb_core::grid::Scheme;
use tvb_core::param::ParamKind;
use tvb_core::trust_region::TRConfig;

use crate::error::CliError;

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("data.manifest", "training manifest (`clean noisy` or `clean SYNTH sigma seed` per line)"),
    ("data.input", "noisy image for `denoise`"),
    ("data.clean", "optional clean image for `denoise` metrics"),
    ("data.output", "denoised image written by `denoise` (.png or .pgm)"),
    ("param.kind", "scalar | patch P1 P2 | perpixel"),
    ("param.init", "initial (or fixed) value of every dof"),
    ("param.file", "alpha field file(s), comma separated, one per scheme"),
    ("model.schemes", "comma separated list of forward, backward, centered"),
    ("solver.tol", "stationarity/complementarity tolerance of the TV solver"),
    ("solver.tol_dual", "dual feasibility tolerance of the TV solver"),
    ("solver.max_iter", "iteration cap of the TV solver"),
    ("solver.huber_tol", "residual tolerance of the Huber solver"),
    ("tr.delta0", "initial trust-region radius"),
    ("tr.eta1", "acceptance threshold"),
    ("tr.eta2", "expansion threshold"),
    ("tr.gamma1", "shrink factor on rejection"),
    ("tr.gamma2", "shrink factor on weak acceptance"),
    ("tr.delta_t", "radius below which the Huber gradient is used"),
    ("tr.tol", "terminal radius"),
    ("tr.max_iter", "iteration cap"),
    ("tr.lbfgs_memory", "stored curvature pairs"),
    ("tr.delta_max", "radius cap"),
    ("tr.huber_gamma", "Huber parameter of the regularized phase"),
    ("tr.grow_factor", "radius expansion factor"),
    ("tr.reset_memory_on_switch", "drop curvature pairs when switching phase"),
    ("sweep.alphas", "comma separated scalar values"),
    ("sweep.range", "`lo, hi, count`: evenly spaced scalar values"),
    ("gradcheck.gammas", "comma separated Huber parameters"),
    ("gradcheck.h", "finite-difference step"),
    ("gradcheck.threshold", "largest accepted relative error"),
    ("gradcheck.bouligand", "also check the Bouligand gradient (true/false)"),
    ("verify.tol", "residual tolerance of the stationarity certificate"),
    ("verify.perturb", "add this much seeded noise to alpha before checking"),
    ("output.dir", "directory for written artifacts"),
    ("run.seed", "seed for random directions and perturbations"),
    ("run.threads", "worker threads for per-pair solves (0: one per core)"),
];

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    /// Relative paths in `value` resolve against this directory.
    base: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    entries: BTreeMap<String, Entry>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

fn split_pair(line: &str) -> Option<(String, String)> {
    let (k, v) = line.split_once('=')?;
    Some((k.trim().to_string(), v.trim().to_string()))
}

impl RunConfig {
    /// Parses config text. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_pair(line).ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", n + 1)))?;
            if cfg.entries.contains_key(&k) {
                return Err(CliError::Usage(format!("config line {}: `{k}` given twice", n + 1)));
            }
            cfg.insert(k, v, base)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn insert(&mut self, key: String, value: String, base: &Path) -> Result<(), CliError> {
        if !known(&key) {
            return Err(CliError::Usage(format!("unknown key `{key}`")));
        }
        self.entries.insert(
            key,
            Entry {
                value,
                base: base.to_path_buf(),
            },
        );
        Ok(())
    }

    /// Applies a `key=value` override; relative paths resolve against the
    /// working directory.
    pub fn set(&mut self, assignment: &str) -> Result<(), CliError> {
        let (k, v) = split_pair(assignment).ok_or_else(|| CliError::Usage(format!("`{assignment}` is not key=value")))?;
        self.insert(k, v, Path::new("."))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        debug_assert!(known(key), "{key}");
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<T>, CliError> {
        self.get(key)
            .map(|v| v.parse().map_err(|_| CliError::Usage(format!("`{key}`: `{v}` is not {what}"))))
            .transpose()
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        Ok(self.parsed(key, "a number")?.unwrap_or(default))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, CliError> {
        Ok(self.parsed(key, "a count")?.unwrap_or(default))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, CliError> {
        Ok(self.parsed(key, "an unsigned integer")?.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, CliError> {
        Ok(self.parsed(key, "true or false")?.unwrap_or(default))
    }

    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| CliError::Usage(format!("`{key}`: `{}` is not a number", s.trim())))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.entries.get(key).map(|e| e.base.join(&e.value))
    }

    pub fn paths(&self, key: &str) -> Vec<PathBuf> {
        match self.entries.get(key) {
            Some(e) => e.value.split(',').map(|s| e.base.join(s.trim())).collect(),
            None => Vec::new(),
        }
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.path(key).ok_or_else(|| CliError::Usage(format!("`{key}` is required")))
    }

    /// Existing input file named by `key`.
    pub fn input_file(&self, key: &str) -> Result<PathBuf, CliError> {
        let p = self.require_path(key)?;
        if !p.is_file() {
            return Err(CliError::Io(format!("{}: no such file ({key})", p.display())));
        }
        Ok(p)
    }

    /// `output.dir`, created when missing.
    pub fn output_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self.path("output.dir").unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(dir)
    }

    pub fn param_kind(&self) -> Result<ParamKind, CliError> {
        parse_kind(self.get("param.kind").unwrap_or("scalar"))
    }

    pub fn schemes(&self, default: &[Scheme]) -> Result<Vec<Scheme>, CliError> {
        match self.get("model.schemes") {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse::<Scheme>().map_err(|e| CliError::Usage(e.to_string())))
                .collect(),
        }
    }

    pub fn solver(&self) -> Result<TvSolver, CliError> {
        let d = TvSolver::default();
        let tol = self.f64_or("solver.tol", d.tol)?;
        let s = TvSolver {
            tol,
            tol_dual: self.f64_or("solver.tol_dual", d.tol_dual.min(tol))?,
            max_iter: self.usize_or("solver.max_iter", d.max_iter)?,
            ..d
        };
        s.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(s)
    }

    pub fn huber_tol(&self) -> Result<f64, CliError> {
        let t = self.f64_or("solver.huber_tol", 1e-10)?;
        if !(t > 0.0) {
            return Err(CliError::Usage("`solver.huber_tol` must be positive".into()));
        }
        Ok(t)
    }

    pub fn tr_config(&self) -> Result<TRConfig, CliError> {
        let d = TRConfig::default();
        let c = TRConfig {
            delta0: self.f64_or("tr.delta0", d.delta0)?,
            eta1: self.f64_or("tr.eta1", d.eta1)?,
            eta2: self.f64_or("tr.eta2", d.eta2)?,
            gamma1: self.f64_or("tr.gamma1", d.gamma1)?,
            gamma2: self.f64_or("tr.gamma2", d.gamma2)?,
            delta_t: self.f64_or("tr.delta_t", d.delta_t)?,
            tol: self.f64_or("tr.tol", d.tol)?,
            max_iter: self.usize_or("tr.max_iter", d.max_iter)?,
            lbfgs_memory: self.usize_or("tr.lbfgs_memory", d.lbfgs_memory)?,
            delta_max: self.f64_or("tr.delta_max", d.delta_max)?,
            huber_gamma: self.f64_or("tr.huber_gamma", d.huber_gamma)?,
            grow_factor: self.f64_or("tr.grow_factor", d.grow_factor)?,
            reset_memory_on_switch: self.bool_or("tr.reset_memory_on_switch", d.reset_memory_on_switch)?,
        };
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }
}

/// `scalar`, `patch P1 P2` (also `patch P1xP2`) or `perpixel`.
pub fn parse_kind(text: &str) -> Result<ParamKind, CliError> {
    let words: Vec<&str> = text
        .split_whitespace()
        .flat_map(|w| match w.split_once('x') {
            Some((a, b)) if w.starts_with(|c: char| c.is_ascii_digit()) => vec![a, b],
            _ => vec![w],
        })
        .collect();
    let bad = || CliError::Usage(format!("`{text}` is not scalar, patch P1 P2 or perpixel"));
    match words.as_slice() {
        ["scalar"] => Ok(ParamKind::Scalar),
        ["perpixel"] | ["per-pixel"] => Ok(ParamKind::PerPixel),
        ["patch", p1, p2] => {
            let p1: usize = p1.parse().map_err(|_| bad())?;
            let p2: usize = p2.parse().map_err(|_| bad())?;
            if p1 == 0 || p2 == 0 {
                return Err(bad());
            }
            Ok(ParamKind::Patch { p1, p2 })
        }
        _ => Err(bad()),
    }
}
