use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MhcrError, Result};
use crate::sparse::SparseRowMatrix;

/// Which partition an interaction belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

/// User–item interactions with a per-interaction split label.
///
/// Freshly loaded datasets label every interaction as [`Split::Train`] until
/// [`split_dataset`] assigns the real partition.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    num_users: usize,
    num_items: usize,
    interactions: Vec<(usize, usize)>,
    splits: Vec<Split>,
}

impl InteractionDataset {
    /// Validates indices and drops repeated `(user, item)` pairs, keeping the
    /// first occurrence. Returns the dataset and the number of duplicates.
    pub fn new(
        num_users: usize,
        num_items: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<(Self, usize)> {
        let mut seen = HashSet::new();
        let mut interactions = Vec::new();
        let mut duplicates = 0;
        for (u, i) in pairs {
            if u >= num_users || i >= num_items {
                return Err(MhcrError::Validation(format!(
                    "interaction ({u}, {i}) outside {num_users} users x {num_items} items"
                )));
            }
            if seen.insert((u, i)) {
                interactions.push((u, i));
            } else {
                duplicates += 1;
            }
        }
        let splits = vec![Split::Train; interactions.len()];
        Ok((
            Self {
                num_users,
                num_items,
                interactions,
                splits,
            },
            duplicates,
        ))
    }

    /// Builds a dataset with an explicit split label per interaction.
    pub fn with_splits(
        num_users: usize,
        num_items: usize,
        labelled: impl IntoIterator<Item = (usize, usize, Split)>,
    ) -> Result<Self> {
        let (pairs, splits): (Vec<_>, Vec<_>) =
            labelled.into_iter().map(|(u, i, s)| ((u, i), s)).unzip();
        let n = pairs.len();
        let (mut ds, duplicates) = Self::new(num_users, num_items, pairs)?;
        if duplicates > 0 {
            return Err(MhcrError::Validation(format!(
                "{duplicates} duplicate (user, item) pairs in labelled split"
            )));
        }
        debug_assert_eq!(ds.interactions.len(), n);
        ds.splits = splits;
        Ok(ds)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn interactions(&self) -> &[(usize, usize)] {
        &self.interactions
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Interactions carrying the given label, in dataset order.
    pub fn pairs_in(&self, split: Split) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.interactions
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == split)
            .map(|(p, _)| *p)
    }

    /// Per-user sorted item lists for one split.
    pub fn user_items(&self, split: Split) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users];
        for (u, i) in self.pairs_in(split) {
            out[u].push(i);
        }
        for items in &mut out {
            items.sort_unstable();
        }
        out
    }

    pub fn count_per_user(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.num_users];
        for (u, _) in self.pairs_in(split) {
            counts[u] += 1;
        }
        counts
    }

    /// Binary `|U| x |I|` matrix of one split's interactions.
    pub fn interaction_matrix(&self, split: Split) -> SparseRowMatrix {
        SparseRowMatrix::from_triplets(
            self.num_users,
            self.num_items,
            self.pairs_in(split).map(|(u, i)| (u, i, 1.0)),
        )
        .expect("indices validated at construction")
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats::new(self.num_users, self.num_items, self.len())
    }
}

/// Summary counts printed after generating or loading data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
}

impl DatasetStats {
    pub fn new(users: usize, items: usize, interactions: usize) -> Self {
        Self {
            users,
            items,
            interactions,
        }
    }

    /// Fraction of the user–item grid without an interaction.
    pub fn sparsity(&self) -> f64 {
        let cells = self.users as f64 * self.items as f64;
        if cells == 0.0 {
            return 1.0;
        }
        1.0 - self.interactions as f64 / cells
    }

    pub fn mean_per_user(&self) -> f64 {
        self.interactions as f64 / self.users.max(1) as f64
    }

    pub fn mean_per_item(&self) -> f64 {
        self.interactions as f64 / self.items.max(1) as f64
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} users, {} items, {} interactions; {:.2} interactions per user, \
             {:.2} per item; sparsity {:.2}%",
            self.users,
            self.items,
            self.interactions,
            self.mean_per_user(),
            self.mean_per_item(),
            self.sparsity() * 100.0
        )
    }
}

/// Result of reading an interactions file.
#[derive(Debug, Clone)]
pub struct LoadedInteractions {
    pub dataset: InteractionDataset,
    pub duplicates: usize,
}

/// Reads `user<TAB>item` lines. Vocabulary sizes are inferred from the
/// largest ids seen.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<LoadedInteractions> {
    let pairs = read_pairs(path.as_ref())?;
    let num_users = pairs.iter().map(|p| p.0 + 1).max().unwrap_or(0);
    let num_items = pairs.iter().map(|p| p.1 + 1).max().unwrap_or(0);
    finish_load(num_users, num_items, pairs)
}

/// Like [`load_interactions`] with known vocabulary sizes; any id at or
/// beyond them is a validation error.
pub fn load_interactions_sized(
    path: impl AsRef<Path>,
    num_users: usize,
    num_items: usize,
) -> Result<LoadedInteractions> {
    let pairs = read_pairs(path.as_ref())?;
    finish_load(num_users, num_items, pairs)
}

fn finish_load(
    num_users: usize,
    num_items: usize,
    pairs: Vec<(usize, usize)>,
) -> Result<LoadedInteractions> {
    let (dataset, duplicates) = InteractionDataset::new(num_users, num_items, pairs)?;
    if duplicates > 0 {
        log::warn!("dropped {duplicates} duplicate interactions");
    }
    Ok(LoadedInteractions {
        dataset,
        duplicates,
    })
}

fn read_pairs(path: &Path) -> Result<Vec<(usize, usize)>> {
    let file = File::open(path).map_err(|e| MhcrError::io(path, e))?;
    let mut pairs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| MhcrError::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if fields.len() != 2 {
            return Err(parse_error(
                path,
                lineno,
                format!("expected 2 tab-separated fields, found {}", fields.len()),
            ));
        }
        let user = parse_id(path, lineno, fields[0])?;
        let item = parse_id(path, lineno, fields[1])?;
        pairs.push((user, item));
    }
    Ok(pairs)
}

fn parse_id(path: &Path, line: usize, field: &str) -> Result<usize> {
    let id: u64 = field.trim().parse().map_err(|_| {
        parse_error(
            path,
            line,
            format!("not a non-negative integer id: {field:?}"),
        )
    })?;
    if id >= u32::MAX as u64 {
        return Err(MhcrError::Validation(format!(
            "{}:{line}: id {id} overflows the 32-bit index space",
            path.display()
        )));
    }
    Ok(id as usize)
}

fn parse_error(path: &Path, line: usize, message: String) -> MhcrError {
    MhcrError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    }
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(MhcrError::Config(format!(
                "split ratios must be >= 0: {self:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MhcrError::Config(format!(
                "split ratios must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    /// Partitions `n` interactions by largest remainder. Ties on the
    /// fractional part go to test first, then train, then validation, so a
    /// two-interaction history still yields one test item.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let exact = [
            self.train * n as f64,
            self.val * n as f64,
            self.test * n as f64,
        ];
        let mut counts = exact.map(|x| x.floor() as usize);
        let assigned: usize = counts.iter().sum();
        let mut leftover = n.saturating_sub(assigned);
        // test, train, val preference order on equal remainders
        let mut order = [2usize, 0, 1];
        // remainders quantized so that 0.7 * 5 and 0.1 * 5 compare equal
        order.sort_by_key(|&slot| {
            let rem = exact[slot] - exact[slot].floor();
            std::cmp::Reverse((rem * 1e9).round() as i64)
        });
        for &slot in order.iter().cycle() {
            if leftover == 0 {
                break;
            }
            counts[slot] += 1;
            leftover -= 1;
        }
        counts
    }
}

/// Bookkeeping produced by [`split_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SplitReport {
    /// Users whose interactions were all removed because none landed in train.
    pub dropped_users: usize,
    /// Users without any interaction at all.
    pub empty_users: usize,
    /// Distinct validation/test items that never occur in train.
    pub unseen_eval_items: usize,
}

/// Randomly partitions each user's interactions into train/val/test.
pub fn split_dataset(
    ds: &InteractionDataset,
    ratios: SplitRatios,
    seed: u64,
) -> Result<(InteractionDataset, SplitReport)> {
    ratios.validate()?;
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); ds.num_users];
    for (idx, &(u, _)) in ds.interactions.iter().enumerate() {
        per_user[u].push(idx);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<Option<Split>> = vec![None; ds.len()];
    let mut report = SplitReport::default();
    for indices in &mut per_user {
        if indices.is_empty() {
            report.empty_users += 1;
            continue;
        }
        indices.shuffle(&mut rng);
        let [n_train, n_val, _] = ratios.counts(indices.len());
        if n_train == 0 {
            report.dropped_users += 1;
            continue;
        }
        for (pos, &idx) in indices.iter().enumerate() {
            labels[idx] = Some(if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    if report.dropped_users > 0 {
        log::warn!(
            "dropped {} users left without training interactions",
            report.dropped_users
        );
    }

    let labelled: Vec<(usize, usize, Split)> = ds
        .interactions
        .iter()
        .zip(labels)
        .filter_map(|(&(u, i), s)| s.map(|s| (u, i, s)))
        .collect();
    let out = InteractionDataset::with_splits(ds.num_users, ds.num_items, labelled)?;

    let train_items: HashSet<usize> = out.pairs_in(Split::Train).map(|p| p.1).collect();
    let unseen: HashSet<usize> = out
        .interactions
        .iter()
        .zip(&out.splits)
        .filter(|(p, s)| **s != Split::Train && !train_items.contains(&p.1))
        .map(|(p, _)| p.1)
        .collect();
    report.unseen_eval_items = unseen.len();
    if report.unseen_eval_items > 0 {
        log::info!(
            "{} evaluation items have no training interaction",
            report.unseen_eval_items
        );
    }
    Ok((out, report))
}

/// Users whose training interaction count is strictly below `threshold`.
pub fn cold_start_users(ds: &InteractionDataset, threshold: usize) -> BTreeSet<usize> {
    ds.count_per_user(Split::Train)
        .into_iter()
        .enumerate()
        .filter(|&(_, c)| c < threshold)
        .map(|(u, _)| u)
        .collect()
}

/// Writes `user<TAB>item` lines in stored order, the format
/// [`load_interactions`] reads.
pub fn write_interactions(ds: &InteractionDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| MhcrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for &(u, i) in &ds.interactions {
        writeln!(w, "{u}\t{i}").map_err(|e| MhcrError::io(path, e))?;
    }
    w.flush().map_err(|e| MhcrError::io(path, e))
}

/// Writes the `user<TAB>item<TAB>{0|1|2}` split sidecar.
pub fn write_split(ds: &InteractionDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| MhcrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (&(u, i), s) in ds.interactions.iter().zip(&ds.splits) {
        writeln!(w, "{u}\t{i}\t{}", s.code()).map_err(|e| MhcrError::io(path, e))?;
    }
    w.flush().map_err(|e| MhcrError::io(path, e))
}

/// Reads a split sidecar written by [`write_split`].
pub fn read_split(
    path: impl AsRef<Path>,
    num_users: usize,
    num_items: usize,
) -> Result<InteractionDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| MhcrError::io(path, e))?;
    let mut labelled = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| MhcrError::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_error(
                path,
                lineno,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let u = parse_id(path, lineno, fields[0])?;
        let i = parse_id(path, lineno, fields[1])?;
        let split = fields[2]
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(Split::from_code)
            .ok_or_else(|| parse_error(path, lineno, format!("bad split code {:?}", fields[2])))?;
        labelled.push((u, i, split));
    }
    InteractionDataset::with_splits(num_users, num_items, labelled)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_small_file() {
        let f = write_tmp("0\t0\n0\t1\n1\t0\n");
        let loaded = load_interactions(f.path()).unwrap();
        assert_eq!(loaded.dataset.num_users(), 2);
        assert_eq!(loaded.dataset.num_items(), 2);
        assert_eq!(loaded.dataset.len(), 3);
        assert_eq!(loaded.duplicates, 0);
    }

    #[test]
    fn duplicates_are_counted_and_removed() {
        let f = write_tmp("0\t0\n0\t0\n");
        let loaded = load_interactions(f.path()).unwrap();
        assert_eq!(loaded.dataset.len(), 1);
        assert_eq!(loaded.duplicates, 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_tmp("0\tabc\n");
        match load_interactions(f.path()) {
            Err(MhcrError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_tmp("0\t1\n\n2\n");
        match load_interactions(f.path()) {
            Err(MhcrError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn id_beyond_known_vocabulary_is_validation_error() {
        let f = write_tmp("0\t5\n");
        assert!(matches!(
            load_interactions_sized(f.path(), 1, 5),
            Err(MhcrError::Validation(_))
        ));
        let f = write_tmp("0\t99999999999\n");
        assert!(matches!(
            load_interactions(f.path()),
            Err(MhcrError::Validation(_))
        ));
    }

    fn single_user(n: usize) -> InteractionDataset {
        InteractionDataset::new(1, n, (0..n).map(|i| (0, i)))
            .unwrap()
            .0
    }

    #[test]
    fn ten_interactions_split_seven_one_two() {
        let (ds, report) = split_dataset(&single_user(10), SplitRatios::default(), 3).unwrap();
        assert_eq!(ds.count_per_user(Split::Train), vec![7]);
        assert_eq!(ds.count_per_user(Split::Val), vec![1]);
        assert_eq!(ds.count_per_user(Split::Test), vec![2]);
        assert_eq!(report.dropped_users, 0);
    }

    #[test]
    fn single_interaction_stays_in_train() {
        let (ds, _) = split_dataset(&single_user(1), SplitRatios::default(), 3).unwrap();
        assert_eq!(ds.splits(), &[Split::Train]);
    }

    #[test]
    fn small_histories_still_reach_test() {
        let r = SplitRatios::default();
        assert_eq!(r.counts(2), [1, 0, 1]);
        assert_eq!(r.counts(3), [2, 0, 1]);
        assert_eq!(r.counts(4), [3, 0, 1]);
        assert_eq!(r.counts(5), [4, 0, 1]);
        assert_eq!(r.counts(20), [14, 2, 4]);
    }

    #[test]
    fn split_is_deterministic() {
        let (ds, _) =
            InteractionDataset::new(3, 20, (0..3).flat_map(|u| (0..12).map(move |i| (u, i + u))))
                .unwrap();
        let a = split_dataset(&ds, SplitRatios::default(), 9).unwrap().0;
        let b = split_dataset(&ds, SplitRatios::default(), 9).unwrap().0;
        assert_eq!(a.splits(), b.splits());
        let c = split_dataset(&ds, SplitRatios::default(), 10).unwrap().0;
        assert_ne!(a.splits(), c.splits());
    }

    #[test]
    fn bad_ratios_rejected() {
        let bad = SplitRatios {
            train: 0.7,
            val: 0.2,
            test: 0.2,
        };
        assert!(matches!(
            split_dataset(&single_user(3), bad, 0),
            Err(MhcrError::Config(_))
        ));
    }

    #[test]
    fn zero_train_ratio_drops_users() {
        let r = SplitRatios {
            train: 0.0,
            val: 0.5,
            test: 0.5,
        };
        let (ds, report) = split_dataset(&single_user(4), r, 0).unwrap();
        assert!(ds.is_empty());
        assert_eq!(report.dropped_users, 1);
    }

    #[test]
    fn unseen_eval_items_are_kept_and_counted() {
        // user 1's two items occur nowhere else, so whichever lands in test is unseen
        let (ds, _) = InteractionDataset::new(2, 3, [(0, 0), (1, 1), (1, 2)]).unwrap();
        let (out, report) = split_dataset(&ds, SplitRatios::default(), 0).unwrap();
        assert_eq!(report.unseen_eval_items, 1);
        assert_eq!(out.pairs_in(Split::Test).count(), 1);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn cold_start_threshold_is_strict() {
        let labelled = vec![
            (0, 0, Split::Train),
            (0, 1, Split::Train),
            (0, 2, Split::Test),
            (1, 0, Split::Train),
            (1, 1, Split::Train),
            (1, 2, Split::Train),
        ];
        let ds = InteractionDataset::with_splits(2, 3, labelled).unwrap();
        let cold = cold_start_users(&ds, 3);
        assert!(cold.contains(&0));
        assert!(!cold.contains(&1));
        assert!(cold_start_users(&ds, 0).is_empty());
    }

    #[test]
    fn split_sidecar_round_trip() {
        let (ds, _) = split_dataset(&single_user(10), SplitRatios::default(), 1).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_split(&ds, f.path()).unwrap();
        let back = read_split(f.path(), 1, 10).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn interactions_file_round_trip() {
        let (ds, _) = InteractionDataset::new(3, 5, vec![(2, 4), (0, 1), (1, 0)]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_interactions(&ds, f.path()).unwrap();
        let back = load_interactions_sized(f.path(), 3, 5).unwrap();
        assert_eq!(back.dataset, ds);
        assert_eq!(back.duplicates, 0);
    }

    #[test]
    fn sparsity_formatting() {
        let stats = DatasetStats::new(50_000, 19_220, 359_708);
        assert!(stats.to_string().contains("sparsity 99.96%"), "{stats}");
        assert!((stats.mean_per_user() - 7.19).abs() < 0.01);
        assert!((stats.mean_per_item() - 18.71).abs() < 0.01);
    }
}
