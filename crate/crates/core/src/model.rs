//! Latent profile matrices and their CSV persistence.
//!
//! File layout:
//!
//! ```text
//! publishable: full            (or `V-only`)
//! rating_range: 1,5
//! U,<d>,<N>                    (omitted in published V-only files)
//! <d comma-separated values>   one line per user
//! V,<d>,<M>
//! <d comma-separated values>   one line per item
//! ```
//!
//! Lines starting with `#` are comments and carry the configuration echo.

use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::ratings::RatingRange;

/// `rows` profile vectors of length `dim`, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileMatrix {
    dim: usize,
    rows: usize,
    data: Vec<f64>,
}

impl ProfileMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            dim,
            rows,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_rows(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {rows} vectors of length {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, rows, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.rows)
    }

    pub fn sum_squared_norms(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_row_norm(&self) -> f64 {
        self.iter_rows().map(norm).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn write_block<W: Write>(&self, label: &str, out: &mut W) -> Result<()> {
        writeln!(out, "{label},{},{}", self.dim, self.rows)?;
        let mut line = String::new();
        for row in self.iter_rows() {
            line.clear();
            for (k, x) in row.iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                // `{:?}` is shortest round-trip and keeps a decimal point.
                line.push_str(&format!("{x:?}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Which parts of a model may leave the recommender.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Release {
    /// Non-private model; both profile matrices may be exported.
    Full,
    /// Private model: only the perturbed item matrix is publishable and the
    /// user matrix stays with the recommender.
    ItemsOnly,
}

impl fmt::Display for Release {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Release::Full => "full",
            Release::ItemsOnly => "V-only",
        })
    }
}

/// User profiles `U` (N x d) and item profiles `V` (M x d).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    users: ProfileMatrix,
    items: ProfileMatrix,
    range: RatingRange,
    release: Release,
}

impl FactorModel {
    pub fn new(users: ProfileMatrix, items: ProfileMatrix, range: RatingRange) -> Self {
        assert_eq!(users.dim(), items.dim(), "profile dimensions differ");
        Self {
            users,
            items,
            range,
            release: Release::Full,
        }
    }

    pub fn with_release(mut self, release: Release) -> Self {
        self.release = release;
        self
    }

    pub fn dim(&self) -> usize {
        self.users.dim()
    }

    pub fn users(&self) -> &ProfileMatrix {
        &self.users
    }

    pub fn items(&self) -> &ProfileMatrix {
        &self.items
    }

    pub fn users_mut(&mut self) -> &mut ProfileMatrix {
        &mut self.users
    }

    pub fn items_mut(&mut self) -> &mut ProfileMatrix {
        &mut self.items
    }

    pub fn range(&self) -> RatingRange {
        self.range
    }

    pub fn release(&self) -> Release {
        self.release
    }

    pub fn into_parts(self) -> (ProfileMatrix, ProfileMatrix) {
        (self.users, self.items)
    }

    /// Raw inner product `u_i . v_j` without range checks or clamping.
    #[inline]
    pub fn dot(&self, user: usize, item: usize) -> f64 {
        dot(self.users.row(user), self.items.row(item))
    }

    /// Predicted rating, clamped into the rating range.
    pub fn predict(&self, user: usize, item: usize) -> Result<f64> {
        if user >= self.users.rows() {
            return Err(Error::IndexOutOfRange {
                kind: "user",
                index: user,
                count: self.users.rows(),
            });
        }
        if item >= self.items.rows() {
            return Err(Error::IndexOutOfRange {
                kind: "item",
                index: item,
                count: self.items.rows(),
            });
        }
        Ok(self.range.clamp(self.dot(user, item)))
    }

    /// Full internal representation, including `U` regardless of release
    /// policy. Used to hand models between pipeline stages, never for
    /// publication.
    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[(String, String)]) -> Result<()> {
        write_header(&mut out, comments, self.release, self.range)?;
        self.users.write_block("U", &mut out)?;
        self.items.write_block("V", &mut out)?;
        Ok(())
    }

    /// Publishable item matrix only.
    pub fn write_items_csv<W: Write>(&self, mut out: W, comments: &[(String, String)]) -> Result<()> {
        write_header(&mut out, comments, self.release, self.range)?;
        self.items.write_block("V", &mut out)?;
        Ok(())
    }

    /// User matrix; refused for private models.
    pub fn write_users_csv<W: Write>(&self, mut out: W, comments: &[(String, String)]) -> Result<()> {
        if self.release == Release::ItemsOnly {
            return Err(Error::PrivacyPolicy(
                "user profiles of a private model are never published; only V may be exported"
                    .into(),
            ));
        }
        write_header(&mut out, comments, self.release, self.range)?;
        self.users.write_block("U", &mut out)?;
        Ok(())
    }

    /// Reads a file produced by [`FactorModel::write_csv`].
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let parsed = read_blocks(reader)?;
        let users = parsed
            .users
            .ok_or_else(|| Error::ModelFormat("missing U block".into()))?;
        let items = parsed
            .items
            .ok_or_else(|| Error::ModelFormat("missing V block".into()))?;
        if users.dim() != items.dim() {
            return Err(Error::ModelFormat("U and V dimensions differ".into()));
        }
        Ok(FactorModel::new(users, items, parsed.range).with_release(parsed.release))
    }
}

fn write_header<W: Write>(
    out: &mut W,
    comments: &[(String, String)],
    release: Release,
    range: RatingRange,
) -> Result<()> {
    for (k, v) in comments {
        writeln!(out, "# {k}={v}")?;
    }
    writeln!(out, "publishable: {release}")?;
    writeln!(out, "rating_range: {:?},{:?}", range.min, range.max)?;
    Ok(())
}

/// Contents of any model-format file; blocks may be absent.
#[derive(Debug)]
pub struct ModelFile {
    pub release: Release,
    pub range: RatingRange,
    pub users: Option<ProfileMatrix>,
    pub items: Option<ProfileMatrix>,
}

pub fn read_blocks<R: BufRead>(reader: R) -> Result<ModelFile> {
    let bad = |msg: String| Error::ModelFormat(msg);
    let mut lines = reader
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.starts_with('#') || s.trim().is_empty()));
    let mut next = || -> Result<Option<String>> { lines.next().transpose().map_err(Error::from) };

    let release = match next()?.as_deref().and_then(|l| l.strip_prefix("publishable:")) {
        Some(v) => match v.trim() {
            "full" => Release::Full,
            "V-only" => Release::ItemsOnly,
            other => return Err(bad(format!("unknown publishable flag `{other}`"))),
        },
        None => return Err(bad("missing `publishable:` header".into())),
    };
    let range = match next()?.as_deref().and_then(|l| l.strip_prefix("rating_range:")) {
        Some(v) => {
            let parts: Vec<f64> = v
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("rating_range: {e}")))?;
            match parts[..] {
                [lo, hi] => RatingRange::new(lo, hi)?,
                _ => return Err(bad("rating_range needs two values".into())),
            }
        }
        None => return Err(bad("missing `rating_range:` header".into())),
    };

    let mut file = ModelFile {
        release,
        range,
        users: None,
        items: None,
    };
    while let Some(header) = next()? {
        let fields: Vec<&str> = header.split(',').collect();
        let (label, dim, rows) = match fields[..] {
            [label, dim, rows] => (
                label,
                dim.parse::<usize>().map_err(|e| bad(format!("block header `{header}`: {e}")))?,
                rows.parse::<usize>().map_err(|e| bad(format!("block header `{header}`: {e}")))?,
            ),
            _ => return Err(bad(format!("expected block header, found `{header}`"))),
        };
        let mut data = Vec::with_capacity(dim * rows);
        for r in 0..rows {
            let line = next()?.ok_or_else(|| bad(format!("{label} block truncated at row {r}")))?;
            let before = data.len();
            for x in line.split(',') {
                data.push(x.trim().parse::<f64>().map_err(|e| bad(format!("{label} row {r}: {e}")))?);
            }
            if data.len() - before != dim {
                return Err(bad(format!("{label} row {r} has {} values, expected {dim}", data.len() - before)));
            }
        }
        let m = ProfileMatrix::from_rows(rows, dim, data)?;
        match label {
            "U" => file.users = Some(m),
            "V" => file.items = Some(m),
            other => return Err(bad(format!("unknown block `{other}`"))),
        }
    }
    Ok(file)
}
