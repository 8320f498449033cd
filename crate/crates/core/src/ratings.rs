//! Sparse rating matrices, MovieLens parsing, synthetic instances and
//! cross-validation folds.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{FactorModel, ProfileMatrix};
use crate::seed::{self, tag};

/// One observed rating, addressed by dense indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: u32,
    pub item: u32,
    pub value: f64,
}

/// Closed interval of valid rating values. Zero is reserved for "no rating",
/// so the lower bound must be strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingRange {
    pub min: f64,
    pub max: f64,
}

impl RatingRange {
    pub const MOVIELENS: RatingRange = RatingRange { min: 1.0, max: 5.0 };

    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min > 0.0 && max > min) {
            return Err(Error::InvalidParameter(format!(
                "rating range [{min}, {max}] must satisfy 0 < min < max"
            )));
        }
        Ok(Self { min, max })
    }

    #[inline]
    pub fn contains(&self, r: f64) -> bool {
        r >= self.min && r <= self.max
    }

    #[inline]
    pub fn clamp(&self, r: f64) -> f64 {
        r.clamp(self.min, self.max)
    }
}

/// Observed entries of an N x M rating matrix.
///
/// Dense indices map back to the raw dataset ids through `user_ids` and
/// `item_ids`. Subsets (folds, sampled datasets) keep the full dimensions and
/// id maps of their parent so models trained on them cover every index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRatings {
    num_users: usize,
    num_items: usize,
    entries: Vec<Rating>,
    range: RatingRange,
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
}

impl SparseRatings {
    /// Builds a matrix whose raw ids equal the dense indices.
    pub fn new(
        num_users: usize,
        num_items: usize,
        entries: Vec<Rating>,
        range: RatingRange,
    ) -> Result<Self> {
        let user_ids = (0..num_users as u64).collect();
        let item_ids = (0..num_items as u64).collect();
        Self::with_ids(user_ids, item_ids, entries, range)
    }

    pub fn with_ids(
        user_ids: Vec<u64>,
        item_ids: Vec<u64>,
        entries: Vec<Rating>,
        range: RatingRange,
    ) -> Result<Self> {
        let num_users = user_ids.len();
        let num_items = item_ids.len();
        if num_users > u32::MAX as usize || num_items > u32::MAX as usize {
            return Err(Error::InvalidData("matrix dimensions exceed u32".into()));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.user as usize >= num_users {
                return Err(Error::IndexOutOfRange {
                    kind: "user",
                    index: e.user as usize,
                    count: num_users,
                });
            }
            if e.item as usize >= num_items {
                return Err(Error::IndexOutOfRange {
                    kind: "item",
                    index: e.item as usize,
                    count: num_items,
                });
            }
            if !range.contains(e.value) {
                return Err(Error::InvalidData(format!(
                    "rating {} for user {} item {} outside [{}, {}]",
                    e.value, user_ids[e.user as usize], item_ids[e.item as usize], range.min, range.max
                )));
            }
            if !seen.insert((e.user, e.item)) {
                return Err(Error::DuplicateEntry {
                    user: user_ids[e.user as usize],
                    item: item_ids[e.item as usize],
                });
            }
        }
        Ok(Self {
            num_users,
            num_items,
            entries,
            range,
            user_ids,
            item_ids,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn entries(&self) -> &[Rating] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn range(&self) -> RatingRange {
        self.range
    }

    pub fn user_ids(&self) -> &[u64] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[u64] {
        &self.item_ids
    }

    pub fn user_id(&self, user: u32) -> u64 {
        self.user_ids[user as usize]
    }

    pub fn item_id(&self, item: u32) -> u64 {
        self.item_ids[item as usize]
    }

    /// Entries at the given positions, same dimensions and id maps.
    pub fn select(&self, positions: impl IntoIterator<Item = usize>) -> SparseRatings {
        self.with_entries(positions.into_iter().map(|p| self.entries[p]).collect())
    }

    /// Entries for which `keep` returns true.
    pub fn filter(&self, mut keep: impl FnMut(usize, &Rating) -> bool) -> SparseRatings {
        self.with_entries(
            self.entries
                .iter()
                .enumerate()
                .filter(|(p, e)| keep(*p, e))
                .map(|(_, e)| *e)
                .collect(),
        )
    }

    // Subsets of a validated matrix are valid by construction.
    fn with_entries(&self, entries: Vec<Rating>) -> SparseRatings {
        SparseRatings {
            num_users: self.num_users,
            num_items: self.num_items,
            entries,
            range: self.range,
            user_ids: self.user_ids.clone(),
            item_ids: self.item_ids.clone(),
        }
    }

    /// Writes `user\titem\trating\ttimestamp` lines using raw ids. Timestamps
    /// are not retained, so zero is written.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.entries {
            writeln!(
                out,
                "{}\t{}\t{}\t0",
                self.user_id(e.user),
                self.item_id(e.item),
                e.value
            )?;
        }
        Ok(())
    }

    /// Writes the dense-index to raw-id map as `kind,index,id` lines.
    pub fn write_id_map<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "kind,index,id")?;
        for (i, id) in self.user_ids.iter().enumerate() {
            writeln!(out, "user,{i},{id}")?;
        }
        for (j, id) in self.item_ids.iter().enumerate() {
            writeln!(out, "item,{j},{id}")?;
        }
        Ok(())
    }
}

/// Line formats of the MovieLens distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// ML-100K `u.data`: `user\titem\trating\ttimestamp`.
    Tab,
    /// ML-1M `ratings.dat`: `user::item::rating::timestamp`.
    DoubleColon,
}

impl DatasetFormat {
    fn separator(self) -> &'static str {
        match self {
            DatasetFormat::Tab => "\t",
            DatasetFormat::DoubleColon => "::",
        }
    }

    /// Guesses the format from a file name: `.dat` files are double-colon
    /// separated, everything else tab separated.
    pub fn infer(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("dat") => DatasetFormat::DoubleColon,
            _ => DatasetFormat::Tab,
        }
    }
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tab" | "tsv" | "ml-100k" => Ok(DatasetFormat::Tab),
            "colon" | "double-colon" | "ml-1m" => Ok(DatasetFormat::DoubleColon),
            other => Err(Error::InvalidParameter(format!("unknown dataset format `{other}`"))),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::Tab => "tab",
            DatasetFormat::DoubleColon => "colon",
        })
    }
}

pub fn parse_movielens(path: impl AsRef<Path>, format: DatasetFormat) -> Result<SparseRatings> {
    let path = path.as_ref();
    let file = File::open(path)?;
    parse_movielens_reader(BufReader::new(file), format, path)
}

/// Parses MovieLens-style triples. Raw ids are re-indexed densely in
/// ascending id order.
pub fn parse_movielens_reader<R: BufRead>(
    reader: R,
    format: DatasetFormat,
    source: &Path,
) -> Result<SparseRatings> {
    let sep = format.separator();
    let range = RatingRange::MOVIELENS;
    let mut raw = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: source.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split(sep).map(str::trim).collect();
        if fields.len() != 4 {
            return Err(parse_err(format!(
                "expected 4 `{sep}`-separated fields, found {}",
                fields.len()
            )));
        }
        let user: u64 = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("bad user id `{}`", fields[0])))?;
        let item: u64 = fields[1]
            .parse()
            .map_err(|_| parse_err(format!("bad item id `{}`", fields[1])))?;
        let value: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(format!("bad rating `{}`", fields[2])))?;
        let _timestamp: i64 = fields[3]
            .parse()
            .map_err(|_| parse_err(format!("bad timestamp `{}`", fields[3])))?;
        if !range.contains(value) {
            return Err(Error::InvalidData(format!(
                "{}:{}: rating {value} outside [{}, {}]",
                source.display(),
                lineno + 1,
                range.min,
                range.max
            )));
        }
        raw.push((user, item, value));
    }

    let dense = |ids: BTreeMap<u64, u32>| -> (Vec<u64>, BTreeMap<u64, u32>) {
        let mut map = ids;
        let mut list = Vec::with_capacity(map.len());
        for (k, (id, slot)) in map.iter_mut().enumerate() {
            *slot = k as u32;
            list.push(*id);
        }
        (list, map)
    };
    let (user_ids, users) = dense(raw.iter().map(|r| (r.0, 0)).collect());
    let (item_ids, items) = dense(raw.iter().map(|r| (r.1, 0)).collect());
    let entries = raw
        .into_iter()
        .map(|(u, i, value)| Rating {
            user: users[&u],
            item: items[&i],
            value,
        })
        .collect();
    SparseRatings::with_ids(user_ids, item_ids, entries, range)
}

/// A synthetic instance: the sampled ratings plus the low-rank model that
/// generated them. Ratings equal `scale * u_i.v_j + offset`.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub ratings: SparseRatings,
    pub truth: FactorModel,
    pub scale: f64,
    pub offset: f64,
}

impl Synthetic {
    /// Noise-free rating of any cell, observed or not.
    pub fn true_rating(&self, user: u32, item: u32) -> f64 {
        self.scale * self.truth.dot(user as usize, item as usize) + self.offset
    }

    /// Every cell of the matrix as a rating list.
    pub fn full_matrix(&self) -> SparseRatings {
        let n = self.ratings.num_users();
        let m = self.ratings.num_items();
        let entries = (0..n as u32)
            .flat_map(|u| (0..m as u32).map(move |i| (u, i)))
            .map(|(user, item)| Rating {
                user,
                item,
                value: self.true_rating(user, item),
            })
            .collect();
        self.ratings.with_entries(entries)
    }

    /// Unobserved cells with their true ratings.
    pub fn held_out(&self) -> SparseRatings {
        let observed: HashSet<(u32, u32)> =
            self.ratings.entries().iter().map(|e| (e.user, e.item)).collect();
        self.full_matrix()
            .filter(|_, e| !observed.contains(&(e.user, e.item)))
    }
}

/// Generates a noiseless rank-`d` rating matrix on [1, 5] and samples
/// `round(density * n * m)` of its cells.
///
/// User profiles carry a constant first coordinate so the affine map onto
/// the rating scale does not raise the rank.
pub fn synth_lowrank(n: usize, m: usize, d: usize, density: f64, seed: u64) -> Result<Synthetic> {
    if n == 0 || m == 0 || d == 0 {
        return Err(Error::InvalidParameter(format!(
            "degenerate synthetic dimensions n={n} m={m} d={d}"
        )));
    }
    if d > n.min(m) {
        return Err(Error::InvalidParameter(format!("rank {d} exceeds min(n, m) = {}", n.min(m))));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidParameter(format!("density {density} not in (0, 1]")));
    }
    let cells = n * m;
    let k = (density * cells as f64).round() as usize;
    if k == 0 {
        return Err(Error::InvalidParameter("density selects no cells".into()));
    }

    let mut rng = seed::stream(&[seed, tag::SYNTH]);
    let mut users = ProfileMatrix::zeros(n, d);
    for i in 0..n {
        let row = users.row_mut(i);
        row[0] = 1.0;
        for x in &mut row[1..] {
            *x = StandardNormal.sample(&mut rng);
        }
    }
    let mut items = ProfileMatrix::zeros(m, d);
    for x in items.as_mut_slice() {
        *x = StandardNormal.sample(&mut rng);
    }
    let range = RatingRange::MOVIELENS;
    let truth = FactorModel::new(users, items, range);

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        for j in 0..m {
            let p = truth.dot(i, j);
            lo = lo.min(p);
            hi = hi.max(p);
        }
    }
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        return Err(Error::InvalidParameter("synthetic products are constant".into()));
    }
    let scale = (range.max - range.min) / (hi - lo);
    let offset = range.min - scale * lo;

    let mut picked = index::sample(&mut rng, cells, k).into_vec();
    picked.sort_unstable();
    let entries = picked
        .into_iter()
        .map(|c| {
            let (i, j) = (c / m, c % m);
            let value = range.clamp(scale * truth.dot(i, j) + offset);
            Rating {
                user: i as u32,
                item: j as u32,
                value,
            }
        })
        .collect();
    let ratings = SparseRatings::new(n, m, entries, range)?;
    Ok(Synthetic {
        ratings,
        truth,
        scale,
        offset,
    })
}

/// Assignment of every entry to one of `fold_count` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    fold_count: usize,
    assignments: Vec<u32>,
}

impl FoldSplit {
    pub fn fold_count(&self) -> usize {
        self.fold_count
    }

    pub fn assignments(&self) -> &[u32] {
        &self.assignments
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.fold_count];
        for &f in &self.assignments {
            sizes[f as usize] += 1;
        }
        sizes
    }

    /// Splits `data` into (training, test) with `fold` held out.
    pub fn train_test(&self, data: &SparseRatings, fold: usize) -> Result<(SparseRatings, SparseRatings)> {
        if fold >= self.fold_count {
            return Err(Error::IndexOutOfRange {
                kind: "fold",
                index: fold,
                count: self.fold_count,
            });
        }
        if data.len() != self.assignments.len() {
            return Err(Error::DimensionMismatch(format!(
                "split covers {} entries, data has {}",
                self.assignments.len(),
                data.len()
            )));
        }
        let f = fold as u32;
        let train = data.filter(|p, _| self.assignments[p] != f);
        let test = data.filter(|p, _| self.assignments[p] == f);
        Ok((train, test))
    }
}

/// Uniformly random balanced partition of the entries into `k` folds.
pub fn split_folds(data: &SparseRatings, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("fold count {k} < 2")));
    }
    if k > data.len() {
        return Err(Error::InvalidParameter(format!(
            "fold count {k} exceeds {} entries",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut seed::stream(&[seed, tag::FOLDS]));
    let mut assignments = vec![0u32; data.len()];
    for (rank, &p) in order.iter().enumerate() {
        assignments[p] = (rank % k) as u32;
    }
    Ok(FoldSplit {
        fold_count: k,
        assignments,
    })
}
