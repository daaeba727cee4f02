//! Interaction ingestion, splitting, hold-out masking, and synthetic generators.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{psd_sqrt, sym_eig};

/// Largest dimension for which explicit outcome tables are supported.
pub const MAX_ENUMERATION_DIM: usize = 12;

/// Item count above which dense n×n allocations are logged as a warning.
pub const DENSE_WARN_ITEMS: usize = 20_000;

/// Sparse binary item×user matrix, stored column-wise (one sorted item list per user).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionMatrix {
    n_items: usize,
    columns: Vec<Vec<usize>>,
}

impl InteractionMatrix {
    pub fn empty(n_items: usize, n_users: usize) -> Self {
        Self { n_items, columns: vec![Vec::new(); n_users] }
    }

    /// Build from `(item, user)` coordinates. Duplicates collapse to a single entry.
    pub fn from_coords(
        n_items: usize,
        n_users: usize,
        coords: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut columns = vec![Vec::new(); n_users];
        for (item, user) in coords {
            if item >= n_items || user >= n_users {
                return Err(Error::Dimension(format!("coordinate ({item}, {user}) outside {n_items}x{n_users}")));
            }
            columns[user].push(item);
        }
        for col in &mut columns {
            col.sort_unstable();
            col.dedup();
        }
        Ok(Self { n_items, columns })
    }

    /// Entries `> 0.5` of a dense matrix become ones.
    pub fn from_dense(dense: &DMatrix<f64>) -> Self {
        let columns =
            (0..dense.ncols()).map(|j| (0..dense.nrows()).filter(|&i| dense[(i, j)] > 0.5).collect()).collect();
        Self { n_items: dense.nrows(), columns }
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_users(&self) -> usize {
        self.columns.len()
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    /// Sorted items of user `j`.
    pub fn user_items(&self, user: usize) -> &[usize] {
        &self.columns[user]
    }

    pub fn contains(&self, item: usize, user: usize) -> bool {
        self.columns[user].binary_search(&item).is_ok()
    }

    /// Coordinates sorted by item, then user.
    pub fn coords(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> =
            self.columns.iter().enumerate().flat_map(|(u, items)| items.iter().map(move |&i| (i, u))).collect();
        out.sort_unstable();
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_items, self.n_users());
        for (u, items) in self.columns.iter().enumerate() {
            for &i in items {
                out[(i, u)] = 1.0;
            }
        }
        out
    }

    /// Number of users interacting with each item.
    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_items];
        for items in &self.columns {
            for &i in items {
                counts[i] += 1;
            }
        }
        counts
    }

    /// `H·Hᵀ` accumulated from the sparse columns.
    pub fn gram(&self) -> DMatrix<f64> {
        self.cross_gram(self).expect("shape matches itself")
    }

    /// `self · otherᵀ`, both sharing the user axis.
    pub fn cross_gram(&self, other: &InteractionMatrix) -> Result<DMatrix<f64>> {
        if self.n_users() != other.n_users() {
            return Err(Error::Dimension(format!("user counts differ: {} vs {}", self.n_users(), other.n_users())));
        }
        let mut out = DMatrix::zeros(self.n_items, other.n_items);
        for (a, b) in self.columns.iter().zip(&other.columns) {
            for &i in a {
                for &k in b {
                    out[(i, k)] += 1.0;
                }
            }
        }
        Ok(out)
    }

    /// Sub-matrix over the given users, in the given order.
    pub fn select_users(&self, users: &[usize]) -> InteractionMatrix {
        InteractionMatrix { n_items: self.n_items, columns: users.iter().map(|&u| self.columns[u].clone()).collect() }
    }

    /// Write the `n m` header followed by sorted `i j` lines.
    pub fn write_coo(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{} {}", self.n_items, self.n_users()).map_err(io)?;
        for (i, j) in self.coords() {
            writeln!(w, "{i} {j}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_coo(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let parse_err = |line: u64, message: String| Error::Parse { path: path.to_path_buf(), line, message };
        let header =
            lines.next().ok_or_else(|| parse_err(1, "missing shape header".into()))?.map_err(|e| Error::io(path, e))?;
        let (n, m) = parse_pair(&header).ok_or_else(|| parse_err(1, format!("bad shape header {header:?}")))?;
        let mut coords = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = idx as u64 + 2;
            let (i, j) = parse_pair(&line).ok_or_else(|| parse_err(lineno, format!("bad coordinate {line:?}")))?;
            if i >= n || j >= m {
                return Err(parse_err(lineno, format!("coordinate ({i}, {j}) outside {n}x{m}")));
            }
            coords.push((i, j));
        }
        Self::from_coords(n, m, coords)
    }
}

fn parse_pair(line: &str) -> Option<(usize, usize)> {
    let mut it = line.split_whitespace();
    let a = it.next()?.parse().ok()?;
    let b = it.next()?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((a, b))
}

/// Delimited-text reader settings.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub delimiter: u8,
    pub skip_header: bool,
    /// Drop users with fewer interactions (single pass, before re-indexing).
    pub min_user_interactions: usize,
    /// Drop items with fewer interactions (single pass, before re-indexing).
    pub min_item_interactions: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { delimiter: b',', skip_header: false, min_user_interactions: 0, min_item_interactions: 0 }
    }
}

/// A loaded matrix plus the first-appearance id maps (`ids[index] = raw id`).
#[derive(Debug, Clone)]
pub struct LoadedInteractions {
    pub matrix: InteractionMatrix,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub raw_records: usize,
}

/// Read `(user id, item id)` records. Extra fields on a line are ignored.
pub fn load_interactions(path: &Path, options: &LoadOptions) -> Result<LoadedInteractions> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(options.skip_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let mut pairs: Vec<(String, String)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let user = record.get(0).unwrap_or("");
        let item = record.get(1).unwrap_or("");
        if record.len() == 1 && user.is_empty() {
            continue;
        }
        if user.is_empty() || item.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: "expected at least two fields (user id, item id)".into(),
            });
        }
        pairs.push((user.to_owned(), item.to_owned()));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    let raw_records = pairs.len();

    if options.min_user_interactions > 0 || options.min_item_interactions > 0 {
        let mut user_count: HashMap<&str, usize> = HashMap::new();
        let mut item_count: HashMap<&str, usize> = HashMap::new();
        for (u, i) in &pairs {
            *user_count.entry(u).or_default() += 1;
            *item_count.entry(i).or_default() += 1;
        }
        let keep: Vec<bool> = pairs
            .iter()
            .map(|(u, i)| {
                user_count[u.as_str()] >= options.min_user_interactions
                    && item_count[i.as_str()] >= options.min_item_interactions
            })
            .collect();
        let mut it = keep.into_iter();
        pairs.retain(|_| it.next().unwrap_or(false));
        if pairs.is_empty() {
            return Err(Error::EmptyDataset(path.to_path_buf()));
        }
    }

    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut item_index: HashMap<String, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut coords = Vec::with_capacity(pairs.len());
    for (u, i) in pairs {
        let uj = *user_index.entry(u.clone()).or_insert_with(|| {
            user_ids.push(u);
            user_ids.len() - 1
        });
        let ii = *item_index.entry(i.clone()).or_insert_with(|| {
            item_ids.push(i);
            item_ids.len() - 1
        });
        coords.push((ii, uj));
    }
    let matrix = InteractionMatrix::from_coords(item_ids.len(), user_ids.len(), coords)?;
    Ok(LoadedInteractions { matrix, user_ids, item_ids, raw_records })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse { path: path.to_path_buf(), line, message: format!("{other:?}") },
    }
}

/// One id per line; the line number is the dense index.
pub fn write_id_map(path: &Path, ids: &[String]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for id in ids {
        writeln!(w, "{id}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn check_open_unit(name: &str, value: f64) -> Result<()> {
    if !(value > 0.0 && value < 1.0) {
        return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {value}")));
    }
    Ok(())
}

/// Partition users into disjoint train and test sets by a seeded shuffle.
///
/// Train receives `⌈(1−f)·m′⌉` users; the item axis is unchanged.
pub fn strong_split(
    whole: &InteractionMatrix,
    test_fraction: f64,
    seed: u64,
) -> Result<(InteractionMatrix, InteractionMatrix)> {
    let (train_users, test_users) = split_user_indices(whole.n_users(), test_fraction, seed)?;
    Ok((whole.select_users(&train_users), whole.select_users(&test_users)))
}

/// User indices for [`strong_split`], each list sorted ascending.
pub fn split_user_indices(n_users: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    check_open_unit("test_fraction", test_fraction)?;
    let mut users: Vec<usize> = (0..n_users).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    users.shuffle(&mut rng);
    // the small offset absorbs representation error in (1 - f)·m
    let n_train = (((1.0 - test_fraction) * n_users as f64) - 1e-9).ceil().max(0.0) as usize;
    let n_train = n_train.min(n_users);
    let mut train = users[..n_train].to_vec();
    let mut test = users[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Input/target pair produced by Bernoulli hold-out masking.
#[derive(Debug, Clone)]
pub struct HoldoutSplit {
    /// `Δ⊙H`
    pub input: InteractionMatrix,
    /// `(1−Δ)⊙H`
    pub target: InteractionMatrix,
    pub p: f64,
    pub seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in `[0, 1)` keyed by `(seed, item, user)`.
pub fn entry_uniform(seed: u64, item: usize, user: usize) -> f64 {
    let h = splitmix64(splitmix64(splitmix64(seed) ^ item as u64) ^ (user as u64).rotate_left(32));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Assign each nonzero of `h` to the input with probability `p`, else to the target.
pub fn holdout_mask(h: &InteractionMatrix, p: f64, seed: u64) -> Result<HoldoutSplit> {
    check_open_unit("p", p)?;
    let mut input = InteractionMatrix::empty(h.n_items(), h.n_users());
    let mut target = InteractionMatrix::empty(h.n_items(), h.n_users());
    for (u, items) in h.columns.iter().enumerate() {
        for &i in items {
            if entry_uniform(seed, i, u) < p {
                input.columns[u].push(i);
            } else {
                target.columns[u].push(i);
            }
        }
    }
    Ok(HoldoutSplit { input, target, p, seed })
}

/// `(1/m′)·H·Hᵀ`.
pub fn population_correlation(whole: &InteractionMatrix) -> Result<DMatrix<f64>> {
    population_correlation_warn_above(whole, DENSE_WARN_ITEMS)
}

pub fn population_correlation_warn_above(whole: &InteractionMatrix, warn_items: usize) -> Result<DMatrix<f64>> {
    if whole.n_users() == 0 {
        return Err(Error::InvalidArgument("population matrix has no users".into()));
    }
    if whole.n_items() > warn_items {
        log::warn!(
            "allocating dense {n}x{n} correlation matrix ({:.1} GiB)",
            (whole.n_items() * whole.n_items() * 8) as f64 / (1u64 << 30) as f64,
            n = whole.n_items()
        );
    }
    Ok(whole.gram() / whole.n_users() as f64)
}

/// Gaussian regression model `y = W*·x + e`, `x ~ N(μ_x, Σ_x)`, `e ~ N(0, Σ_e)`.
#[derive(Debug, Clone)]
pub struct GaussianDataModel {
    pub mu_x: DVector<f64>,
    /// PSD, possibly singular.
    pub sigma_x: DMatrix<f64>,
    /// `p × n`
    pub w_star: DMatrix<f64>,
    /// PD.
    pub sigma_e: DMatrix<f64>,
}

impl GaussianDataModel {
    pub fn new(mu_x: DVector<f64>, sigma_x: DMatrix<f64>, w_star: DMatrix<f64>, sigma_e: DMatrix<f64>) -> Result<Self> {
        let model = Self { mu_x, sigma_x, w_star, sigma_e };
        model.validate()?;
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        self.mu_x.len()
    }

    pub fn output_dim(&self) -> usize {
        self.w_star.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mu_x.len();
        let p = self.w_star.nrows();
        if self.sigma_x.shape() != (n, n) || self.w_star.ncols() != n || self.sigma_e.shape() != (p, p) {
            return Err(Error::InvalidArgument(format!(
                "inconsistent model shapes: mu_x {n}, sigma_x {:?}, w_star {:?}, sigma_e {:?}",
                self.sigma_x.shape(),
                self.w_star.shape(),
                self.sigma_e.shape()
            )));
        }
        let dx = sym_eig(&self.sigma_x)?;
        if dx.bottom() < -dx.clamp_tolerance() {
            return Err(Error::InvalidArgument(format!("sigma_x is not PSD (eigenvalue {:e})", dx.bottom())));
        }
        let de = sym_eig(&self.sigma_e)?;
        if de.bottom() <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sigma_e is not positive definite (eigenvalue {:e})",
                de.bottom()
            )));
        }
        Ok(())
    }

    /// `Σ_x + μ_x·μ_xᵀ`, the second moment of `x`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.sigma_x + &self.mu_x * self.mu_x.transpose()
    }
}

/// Draw `m` i.i.d. columns `(x, y)`; returns `X` (n×m) and `Y` (p×m).
pub fn sample_regression(model: &GaussianDataModel, m: usize, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    model.validate()?;
    if m == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let n = model.input_dim();
    let p = model.output_dim();
    let root_x = psd_sqrt(&model.sigma_x)?;
    let root_e = psd_sqrt(&model.sigma_e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let w = DMatrix::from_fn(p, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut x = root_x * z;
    for mut col in x.column_iter_mut() {
        col += &model.mu_x;
    }
    let y = &model.w_star * &x + root_e * w;
    Ok((x, y))
}

/// Distribution of binary user vectors.
#[derive(Debug, Clone)]
pub enum BernoulliModel {
    /// `probabilities[k]` is the mass of the vector whose bit `i` is `(k >> i) & 1`.
    Table { n: usize, probabilities: Vec<f64> },
    /// Independent coordinates with `P(h_i = 1) = q_i`.
    Factorized { q: Vec<f64> },
}

impl BernoulliModel {
    pub fn table(n: usize, probabilities: Vec<f64>) -> Result<Self> {
        if n > MAX_ENUMERATION_DIM {
            return Err(Error::Capacity(format!("enumeration mode supports n <= {MAX_ENUMERATION_DIM}, got {n}")));
        }
        if probabilities.len() != 1 << n {
            return Err(Error::InvalidArgument(format!(
                "table for n={n} needs {} entries, got {}",
                1 << n,
                probabilities.len()
            )));
        }
        if probabilities.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self::Table { n, probabilities })
    }

    /// Mass concentrated on one binary vector.
    pub fn point_mass(h: &[u8]) -> Result<Self> {
        let n = h.len();
        if n > MAX_ENUMERATION_DIM {
            return Err(Error::Capacity(format!("point mass over n={n} exceeds enumeration capacity")));
        }
        let index = h.iter().enumerate().fold(0usize, |acc, (i, &b)| acc | (usize::from(b != 0) << i));
        let mut probabilities = vec![0.0; 1 << n];
        probabilities[index] = 1.0;
        Self::table(n, probabilities)
    }

    pub fn factorized(q: Vec<f64>) -> Result<Self> {
        if q.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument("factorized probabilities must lie in [0, 1]".into()));
        }
        Ok(Self::Factorized { q })
    }

    /// Random table with Dirichlet(1)-like weights, for tests and verification.
    pub fn random_table(n: usize, rng: &mut impl Rng) -> Result<Self> {
        let raw: Vec<f64> = (0..1usize << n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let total: f64 = raw.iter().sum();
        let mut probs: Vec<f64> = raw.iter().map(|w| w / total).collect();
        // absorb the normalization residue so the table sums to one within 1e-12
        let residue = 1.0 - probs.iter().sum::<f64>();
        probs[0] += residue;
        Self::table(n, probs)
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Table { n, .. } => *n,
            Self::Factorized { q } => q.len(),
        }
    }

    /// Explicit outcome table; factorized models are expanded when small enough.
    pub fn to_table(&self) -> Result<Vec<f64>> {
        match self {
            Self::Table { probabilities, .. } => Ok(probabilities.clone()),
            Self::Factorized { q } => {
                let n = q.len();
                if n > MAX_ENUMERATION_DIM {
                    return Err(Error::Capacity(format!("cannot enumerate n={n} outcomes")));
                }
                Ok((0..1usize << n)
                    .map(|k| (0..n).map(|i| if (k >> i) & 1 == 1 { q[i] } else { 1.0 - q[i] }).product())
                    .collect())
            }
        }
    }
}

/// Bit vector of outcome `k` as 0/1 floats.
pub fn outcome_vector(n: usize, k: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| ((k >> i) & 1) as f64)
}

/// Draw `m` i.i.d. user columns.
pub fn sample_bernoulli(model: &BernoulliModel, m: usize, seed: u64) -> Result<InteractionMatrix> {
    if m == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let n = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns = Vec::with_capacity(m);
    match model {
        BernoulliModel::Table { probabilities, .. } => {
            let dist = WeightedIndex::new(probabilities)
                .map_err(|e| Error::InvalidArgument(format!("invalid probability table: {e}")))?;
            for _ in 0..m {
                let k = dist.sample(&mut rng);
                columns.push((0..n).filter(|&i| (k >> i) & 1 == 1).collect());
            }
        }
        BernoulliModel::Factorized { q } => {
            for _ in 0..m {
                columns.push((0..n).filter(|&i| rng.random::<f64>() < q[i]).collect());
            }
        }
    }
    Ok(InteractionMatrix { n_items: n, columns })
}

/// Exact `Σ_hh = E[h·hᵀ]`.
pub fn exact_correlation(model: &BernoulliModel) -> DMatrix<f64> {
    match model {
        BernoulliModel::Table { n, probabilities } => {
            let mut out = DMatrix::zeros(*n, *n);
            for (k, &w) in probabilities.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let ones: Vec<usize> = (0..*n).filter(|&i| (k >> i) & 1 == 1).collect();
                for &a in &ones {
                    for &b in &ones {
                        out[(a, b)] += w;
                    }
                }
            }
            out
        }
        BernoulliModel::Factorized { q } => {
            let qv = DVector::from_column_slice(q);
            let mut out = &qv * qv.transpose();
            for i in 0..q.len() {
                out[(i, i)] = q[i];
            }
            out
        }
    }
}

/// Users with latent tastes: items are split into contiguous clusters, each user
/// prefers one cluster and draws mostly from it, weighted by item popularity.
///
/// Every user gets at least one interaction.
pub fn synthetic_latent_clusters(
    n_items: usize,
    n_users: usize,
    n_clusters: usize,
    seed: u64,
) -> Result<InteractionMatrix> {
    if n_items < 2 || n_users == 0 || n_clusters == 0 || n_clusters > n_items {
        return Err(Error::InvalidArgument(format!(
            "need n_items >= 2, n_users >= 1, 1 <= n_clusters <= n_items; got {n_items}, {n_users}, {n_clusters}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let popularity: Vec<f64> = (0..n_items).map(|_| 0.3 + 0.7 * rng.random::<f64>()).collect();
    let cluster_of = |i: usize| i * n_clusters / n_items;
    let mut columns = Vec::with_capacity(n_users);
    for _ in 0..n_users {
        let home = rng.random_range(0..n_clusters);
        let second = rng.random_range(0..n_clusters);
        let activity = 0.15 + 0.35 * rng.random::<f64>();
        let mut items: Vec<usize> = (0..n_items)
            .filter(|&i| {
                let c = cluster_of(i);
                let base = if c == home {
                    activity
                } else if c == second {
                    0.4 * activity
                } else {
                    0.01
                };
                rng.random::<f64>() < base * popularity[i]
            })
            .collect();
        if items.is_empty() {
            items.push(rng.random_range(0..n_items));
        }
        columns.push(items);
    }
    Ok(InteractionMatrix { n_items, columns })
}

/// Paths of the sidecar id maps written next to a coordinate file.
pub fn id_map_paths(coo_path: &Path) -> (PathBuf, PathBuf) {
    let stem = coo_path.with_extension("");
    let mut users = stem.clone().into_os_string();
    users.push(".users.txt");
    let mut items = stem.into_os_string();
    items.push(".items.txt");
    (PathBuf::from(users), PathBuf::from(items))
}
