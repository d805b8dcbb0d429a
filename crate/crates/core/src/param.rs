//! Regularization parameter fields and the piecewise-constant lift `P`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Scalar,
    Patch { p1: usize, p2: usize },
    PerPixel,
}

impl ParamKind {
    pub fn dof_count(self, m1: usize, m2: usize) -> usize {
        match self {
            ParamKind::Scalar => 1,
            ParamKind::Patch { p1, p2 } => p1 * p2,
            ParamKind::PerPixel => m1 * m2,
        }
    }

    /// Patch grid dimensions as seen by the floor partition.
    pub fn cells(self, m1: usize, m2: usize) -> (usize, usize) {
        match self {
            ParamKind::Scalar => (1, 1),
            ParamKind::Patch { p1, p2 } => (p1, p2),
            ParamKind::PerPixel => (m1, m2),
        }
    }
}

impl std::fmt::Display for ParamKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamKind::Scalar => write!(f, "scalar"),
            ParamKind::Patch { p1, p2 } => write!(f, "patch {p1} {p2}"),
            ParamKind::PerPixel => write!(f, "perpixel"),
        }
    }
}

impl std::str::FromStr for ParamKind {
    type Err = Error;

    /// Accepts `scalar`, `perpixel`, `patch P1 P2` and `patch P1xP2`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let mut words = lower.split(|c: char| c.is_whitespace() || c == 'x' || c == ',');
        let words: Vec<&str> = words.by_ref().filter(|w| !w.is_empty()).collect();
        match words.as_slice() {
            ["scalar"] => Ok(ParamKind::Scalar),
            ["perpixel"] | ["per-pixel"] | ["pixel"] => Ok(ParamKind::PerPixel),
            ["patch", a, b] => {
                let p1 = a
                    .parse()
                    .map_err(|_| Error::InvalidParam(format!("bad patch size '{a}'")))?;
                let p2 = b
                    .parse()
                    .map_err(|_| Error::InvalidParam(format!("bad patch size '{b}'")))?;
                Ok(ParamKind::Patch { p1, p2 })
            }
            _ => Err(Error::InvalidParam(format!("unknown parameter kind '{s}'"))),
        }
    }
}

/// Pixel-to-cell assignment of a floor partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMap {
    m1: usize,
    m2: usize,
    p1: usize,
    p2: usize,
    row_cell: Vec<usize>,
    col_cell: Vec<usize>,
}

/// Cell `(a, b)` covers rows `floor(a m1/p1) .. floor((a+1) m1/p1) - 1` and
/// the analogous columns.
pub fn make_patch_map(m1: usize, m2: usize, p1: usize, p2: usize) -> Result<PatchMap> {
    if p1 == 0 || p2 == 0 || p1 > m1 || p2 > m2 {
        return Err(Error::InvalidParam(format!(
            "patch grid {p1}x{p2} does not fit a {m1}x{m2} image"
        )));
    }
    let assign = |m: usize, p: usize| {
        let mut cell = vec![0; m];
        for a in 0..p {
            for c in cell.iter_mut().take((a + 1) * m / p).skip(a * m / p) {
                *c = a;
            }
        }
        cell
    };
    Ok(PatchMap {
        m1,
        m2,
        p1,
        p2,
        row_cell: assign(m1, p1),
        col_cell: assign(m2, p2),
    })
}

impl PatchMap {
    pub fn cell_count(&self) -> usize {
        self.p1 * self.p2
    }

    pub fn cell_of(&self, pixel: usize) -> usize {
        let (r, c) = (pixel / self.m2, pixel % self.m2);
        self.row_cell[r] * self.p2 + self.col_cell[c]
    }

    pub fn cell_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.cell_count()];
        for i in 0..self.m1 * self.m2 {
            sizes[self.cell_of(i)] += 1;
        }
        sizes
    }
}

/// Nonnegative parameter degrees of freedom together with the map that
/// lifts them to one value per gradient row.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamField {
    kind: ParamKind,
    m1: usize,
    m2: usize,
    dofs: Vec<f64>,
    map: Option<PatchMap>,
}

impl ParamField {
    pub fn new(kind: ParamKind, m1: usize, m2: usize, dofs: Vec<f64>) -> Result<Self> {
        let expected = kind.dof_count(m1, m2);
        if dofs.len() != expected {
            return Err(Error::Shape(format!(
                "{kind} on {m1}x{m2} needs {expected} dofs, got {}",
                dofs.len()
            )));
        }
        if let Some((k, v)) = dofs.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParam(format!("dof {k} = {v} is not a finite nonnegative value")));
        }
        let map = match kind {
            ParamKind::Patch { p1, p2 } => Some(make_patch_map(m1, m2, p1, p2)?),
            _ => None,
        };
        Ok(Self {
            kind,
            m1,
            m2,
            dofs,
            map,
        })
    }

    pub fn constant(kind: ParamKind, m1: usize, m2: usize, value: f64) -> Result<Self> {
        Self::new(kind, m1, m2, vec![value; kind.dof_count(m1, m2)])
    }

    pub fn scalar(m1: usize, m2: usize, value: f64) -> Result<Self> {
        Self::new(ParamKind::Scalar, m1, m2, vec![value])
    }

    pub fn per_pixel(m1: usize, m2: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(ParamKind::PerPixel, m1, m2, values)
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m1, self.m2)
    }

    pub fn dofs(&self) -> &[f64] {
        &self.dofs
    }

    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }

    /// Same map, new dofs.
    pub fn with_dofs(&self, dofs: Vec<f64>) -> Result<Self> {
        Self::new(self.kind, self.m1, self.m2, dofs)
    }

    /// Dof index that drives pixel `i`.
    #[inline]
    pub fn dof_of(&self, pixel: usize) -> usize {
        match self.kind {
            ParamKind::Scalar => 0,
            ParamKind::PerPixel => pixel,
            ParamKind::Patch { .. } => self.map.as_ref().expect("patch map").cell_of(pixel),
        }
    }

    /// `P a`: one value per pixel.
    pub fn lift(&self) -> Vec<f64> {
        (0..self.m1 * self.m2).map(|i| self.dofs[self.dof_of(i)]).collect()
    }

    /// `P^T g`.
    pub fn aggregate(&self, g_pixel: &[f64]) -> Result<Vec<f64>> {
        if g_pixel.len() != self.m1 * self.m2 {
            return Err(Error::Shape(format!(
                "per-pixel vector of length {} for a {}x{} field",
                g_pixel.len(),
                self.m1,
                self.m2
            )));
        }
        let mut out = vec![0.0; self.dofs.len()];
        for (i, g) in g_pixel.iter().enumerate() {
            out[self.dof_of(i)] += g;
        }
        Ok(out)
    }

    /// Refines this field to another kind by sampling, per dof of `kind`,
    /// the value lifted at the first pixel of the target cell. Exact when the
    /// target partition is nested in this one.
    pub fn resample(&self, kind: ParamKind) -> Result<Self> {
        let lifted = self.lift();
        let target = ParamField::constant(kind, self.m1, self.m2, 0.0)?;
        let mut dofs = vec![f64::NAN; target.len()];
        for (i, v) in lifted.iter().enumerate() {
            let k = target.dof_of(i);
            if dofs[k].is_nan() {
                dofs[k] = *v;
            }
        }
        target.with_dofs(dofs)
    }
}
