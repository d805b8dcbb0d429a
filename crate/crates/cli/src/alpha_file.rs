//! Text form of a parameter field: a `kind p1 p2` header line followed by
//! one dof per line in row-major cell order. Values are written in the
//! shortest form that parses back to the same `f64`.

use std::fmt::Write as _;

use tvb_core::param::{ParamField, ParamKind};

use crate::error::CliError;

pub fn format_alpha(p: &ParamField) -> String {
    let (m1, m2) = p.shape();
    let (p1, p2) = p.kind().cells(m1, m2);
    let name = match p.kind() {
        ParamKind::Scalar => "scalar",
        ParamKind::Patch { .. } => "patch",
        ParamKind::PerPixel => "perpixel",
    };
    let mut s = format!("{name} {p1} {p2}\n");
    for v in p.dofs() {
        writeln!(s, "{v:e}").unwrap();
    }
    s
}

/// Reads a field for an `m1 x m2` image.
pub fn parse_alpha(text: &str, m1: usize, m2: usize) -> Result<ParamField, CliError> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let bad = |m: String| CliError::Usage(format!("alpha file: {m}"));
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty".into()))?.split_whitespace().collect();
    let dims = |a: &str, b: &str| -> Result<(usize, usize), CliError> {
        Ok((
            a.parse().map_err(|_| bad(format!("`{a}` is not a count")))?,
            b.parse().map_err(|_| bad(format!("`{b}` is not a count")))?,
        ))
    };
    let kind = match header.as_slice() {
        ["scalar", ..] => ParamKind::Scalar,
        ["patch", a, b] => {
            let (p1, p2) = dims(a, b)?;
            ParamKind::Patch { p1, p2 }
        }
        ["perpixel", a, b] => {
            if dims(a, b)? != (m1, m2) {
                return Err(bad(format!("per-pixel field is {a}x{b}, images are {m1}x{m2}")));
            }
            ParamKind::PerPixel
        }
        _ => return Err(bad(format!("bad header `{}`", header.join(" ")))),
    };
    let dofs = lines
        .map(|l| l.parse::<f64>().map_err(|_| bad(format!("`{l}` is not a number"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ParamField::new(kind, m1, m2, dofs)?)
}
