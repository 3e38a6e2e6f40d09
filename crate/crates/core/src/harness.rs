//! Shuffle-test dataset construction.
//!
//! Sentence latents are computed one sentence at a time, so permuting a
//! document's sentences is the same as permuting its latent rows. Every
//! dataset here is therefore a list of row permutations over latents that
//! already exist; nothing is re-encoded.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{doc_seed, rng_from_seed, Rng};
use crate::sequence::Sequence;

/// Resampling budget for one shuffle before it is dropped.
pub const RETRY_CAP: usize = 100;

/// `order[j]` is the original row placed at position `j` (zero-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidConfig(format!(
                    "not a permutation: {order:?}"
                )));
            }
        }
        Ok(Self(order))
    }

    /// Builds from one-based indices, the on-disk convention.
    pub fn from_one_based(order: &[usize]) -> Result<Self> {
        if order.contains(&0) {
            return Err(Error::InvalidConfig(
                "one-based permutation contains 0".into(),
            ));
        }
        Self::new(order.iter().map(|i| i - 1).collect())
    }

    pub fn identity(len: usize) -> Self {
        Self((0..len).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(j, &i)| i == j)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    /// Reorders rows of `s`; lengths must agree.
    pub fn apply(&self, s: &Sequence) -> Result<Sequence> {
        if s.len() != self.len() {
            return Err(Error::DimMismatch {
                expected: self.len(),
                found: s.len(),
            });
        }
        Ok(s.gather_rows(&self.0))
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

/// Permutation that lays out consecutive blocks of `block` rows in `block_order`.
///
/// A length not divisible by `block` leaves a shorter final block, which
/// takes part in the reordering like any other.
pub fn block_permutation(len: usize, block: usize, block_order: &[usize]) -> Result<Permutation> {
    if block == 0 {
        return Err(Error::InvalidConfig("block size must be positive".into()));
    }
    let n_blocks = len.div_ceil(block);
    let check = Permutation::new(block_order.to_vec())?;
    if check.len() != n_blocks {
        return Err(Error::DimMismatch {
            expected: n_blocks,
            found: block_order.len(),
        });
    }
    let order = block_order
        .iter()
        .flat_map(|&b| b * block..((b + 1) * block).min(len))
        .collect();
    Permutation::new(order)
}

/// Uniform random reordering of `block`-sized chunks, never the identity.
pub fn block_shuffle(len: usize, block: usize, rng: &mut Rng) -> Result<Permutation> {
    if block == 0 {
        return Err(Error::InvalidConfig("block size must be positive".into()));
    }
    if len <= block {
        return Err(Error::Unshufflable { len, block });
    }
    let n_blocks = len.div_ceil(block);
    let mut order: Vec<usize> = (0..n_blocks).collect();
    for _ in 0..RETRY_CAP {
        order.shuffle(rng);
        if order.iter().enumerate().any(|(j, &b)| j != b) {
            return block_permutation(len, block, &order);
        }
    }
    Err(Error::ShuffleExhausted(RETRY_CAP))
}

/// Uniformly random placement of `n_windows` disjoint windows of
/// `window_size` consecutive rows. Returns window start rows in order.
///
/// Placements correspond one-to-one to `n_windows`-subsets of
/// `len - n_windows * (window_size - 1)` slots, so a uniform subset gives a
/// uniform placement.
pub fn sample_window_starts(
    len: usize,
    n_windows: usize,
    window_size: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let needed = n_windows * window_size;
    if n_windows == 0 || window_size == 0 {
        return Err(Error::InvalidConfig(
            "window count and size must be positive".into(),
        ));
    }
    if len < needed {
        return Err(Error::TooShortForWindows { len, needed });
    }
    let slots = len - n_windows * (window_size - 1);
    let mut picks = rand::seq::index::sample(rng, slots, n_windows).into_vec();
    picks.sort_unstable();
    Ok(picks
        .into_iter()
        .enumerate()
        .map(|(j, p)| p + j * (window_size - 1))
        .collect())
}

/// Shuffles rows inside randomly placed, non-overlapping windows; rows
/// outside every window stay put. Never returns the identity.
pub fn local_shuffle(
    len: usize,
    n_windows: usize,
    window_size: usize,
    rng: &mut Rng,
) -> Result<Permutation> {
    if window_size < 2 {
        return Err(Error::InvalidConfig(
            "windows of fewer than two rows cannot be shuffled".into(),
        ));
    }
    let starts = sample_window_starts(len, n_windows, window_size, rng)?;
    for _ in 0..RETRY_CAP {
        let mut order: Vec<usize> = (0..len).collect();
        for &s in &starts {
            order[s..s + window_size].shuffle(rng);
        }
        let perm = Permutation::new(order)?;
        if !perm.is_identity() {
            return Ok(perm);
        }
    }
    Err(Error::ShuffleExhausted(RETRY_CAP))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleKind {
    /// Blocks of `param` consecutive sentences reordered.
    #[serde(alias = "global")]
    GlobalBlock,
    /// `param` windows of three sentences shuffled internally.
    #[serde(alias = "local")]
    LocalWindow,
}

impl std::str::FromStr for ShuffleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" | "global_block" => Ok(ShuffleKind::GlobalBlock),
            "local" | "local_window" => Ok(ShuffleKind::LocalWindow),
            other => Err(Error::InvalidConfig(format!(
                "unknown shuffle kind {other:?}"
            ))),
        }
    }
}

impl ShuffleKind {
    pub fn name(self) -> &'static str {
        match self {
            ShuffleKind::GlobalBlock => "global_block",
            ShuffleKind::LocalWindow => "local_window",
        }
    }
}

/// Window width used by local shuffles.
pub const LOCAL_WINDOW_SIZE: usize = 3;

/// One (original, shuffled) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ShufflePair {
    pub doc_id: String,
    /// Index of the original within the corpus the dataset was built from.
    pub doc_index: usize,
    pub perm: Permutation,
    pub shuffled: Sequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleFailure {
    pub doc_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShuffleDataset {
    pub kind: ShuffleKind,
    pub param: usize,
    pub pairs: Vec<ShufflePair>,
    /// Shuffles asked for across all documents (`n_shuffles` per document).
    pub n_shuffles_requested: usize,
    pub n_pairs_kept: usize,
    pub failures: Vec<ShuffleFailure>,
}

/// Counts matching the layout of a dataset-statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub kind: ShuffleKind,
    pub param: usize,
    pub n_docs: usize,
    pub n_docs_used: usize,
    pub n_shuffles_requested: usize,
    pub n_pairs_kept: usize,
    pub n_failures: usize,
}

impl ShuffleDataset {
    pub fn stats(&self, n_docs: usize) -> DatasetStats {
        let used: HashSet<usize> = self.pairs.iter().map(|p| p.doc_index).collect();
        DatasetStats {
            kind: self.kind,
            param: self.param,
            n_docs,
            n_docs_used: used.len(),
            n_shuffles_requested: self.n_shuffles_requested,
            n_pairs_kept: self.n_pairs_kept,
            n_failures: self.failures.len(),
        }
    }

    /// Writes one JSON line per pair: `{"doc_id", "kind", "param", "perm"}`,
    /// with one-based indices in `perm`.
    pub fn write_manifest<W: Write>(&self, mut out: W) -> Result<()> {
        for pair in &self.pairs {
            let line = ManifestLine {
                doc_id: pair.doc_id.clone(),
                kind: self.kind,
                param: self.param,
                perm: pair.perm.to_one_based(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Rebuilds a dataset from a manifest by re-applying the stored
    /// permutations to `corpus`.
    pub fn read_manifest<R: BufRead>(input: R, corpus: &[Sequence]) -> Result<Self> {
        let mut kind_param = None;
        let mut pairs = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestLine = serde_json::from_str(&line)?;
            match kind_param {
                None => kind_param = Some((entry.kind, entry.param)),
                Some(kp) if kp != (entry.kind, entry.param) => {
                    return Err(Error::InvalidConfig(
                        "manifest mixes shuffle settings".into(),
                    ))
                }
                Some(_) => {}
            }
            let doc_index = corpus
                .iter()
                .position(|d| d.doc_id() == entry.doc_id)
                .ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "manifest names unknown document {}",
                        entry.doc_id
                    ))
                })?;
            let perm = Permutation::from_one_based(&entry.perm)?;
            let shuffled = perm.apply(&corpus[doc_index])?;
            pairs.push(ShufflePair {
                doc_id: entry.doc_id,
                doc_index,
                perm,
                shuffled,
            });
        }
        let (kind, param) = kind_param.ok_or(Error::NoPairs)?;
        let n = pairs.len();
        Ok(Self {
            kind,
            param,
            pairs,
            n_shuffles_requested: n,
            n_pairs_kept: n,
            failures: Vec::new(),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    doc_id: String,
    kind: ShuffleKind,
    param: usize,
    perm: Vec<usize>,
}

fn one_shuffle(kind: ShuffleKind, param: usize, len: usize, rng: &mut Rng) -> Result<Permutation> {
    match kind {
        ShuffleKind::GlobalBlock => block_shuffle(len, param, rng),
        ShuffleKind::LocalWindow => local_shuffle(len, param, LOCAL_WINDOW_SIZE, rng),
    }
}

/// Up to `n_shuffles` distinct non-identity shuffles per document.
///
/// Each document draws from its own stream keyed by `(seed, doc_id)`, so the
/// result does not depend on corpus order or thread count. A document that
/// cannot be shuffled at all is recorded in `failures` and skipped.
pub fn make_shuffle_dataset(
    corpus: &[Sequence],
    kind: ShuffleKind,
    param: usize,
    n_shuffles: usize,
    seed: u64,
) -> Result<ShuffleDataset> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if param == 0 {
        return Err(Error::InvalidConfig(
            "shuffle parameter must be positive".into(),
        ));
    }
    let per_doc: Vec<std::result::Result<Vec<Permutation>, String>> = corpus
        .par_iter()
        .map(|doc| {
            let mut rng = rng_from_seed(doc_seed(seed, doc.doc_id()));
            let mut kept: Vec<Permutation> = Vec::new();
            let mut seen = HashSet::new();
            'shuffles: for _ in 0..n_shuffles {
                for _ in 0..RETRY_CAP {
                    let perm = match one_shuffle(kind, param, doc.len(), &mut rng) {
                        Ok(p) => p,
                        Err(Error::ShuffleExhausted(_)) => continue 'shuffles,
                        Err(e) => return Err(e.to_string()),
                    };
                    if seen.insert(perm.clone()) {
                        kept.push(perm);
                        continue 'shuffles;
                    }
                }
            }
            Ok(kept)
        })
        .collect();

    let mut pairs = Vec::new();
    let mut failures = Vec::new();
    for (doc_index, (doc, result)) in corpus.iter().zip(per_doc).enumerate() {
        match result {
            Ok(perms) => {
                for perm in perms {
                    let shuffled = perm.apply(doc)?;
                    pairs.push(ShufflePair {
                        doc_id: doc.doc_id().to_string(),
                        doc_index,
                        perm,
                        shuffled,
                    });
                }
            }
            Err(reason) => {
                log::warn!("skipping {}: {reason}", doc.doc_id());
                failures.push(ShuffleFailure {
                    doc_id: doc.doc_id().to_string(),
                    reason,
                });
            }
        }
    }
    let n_pairs_kept = pairs.len();
    Ok(ShuffleDataset {
        kind,
        param,
        pairs,
        n_shuffles_requested: n_shuffles * corpus.len(),
        n_pairs_kept,
        failures,
    })
}

/// Draw a shuffle with a caller-supplied generator, dispatching on kind.
pub fn shuffle(kind: ShuffleKind, param: usize, len: usize, rng: &mut Rng) -> Result<Permutation> {
    one_shuffle(kind, param, len, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use std::collections::BTreeSet;

    fn random_below(rng: &mut Rng, n: usize) -> usize {
        rng.random_range(0..n)
    }

    fn ramp(len: usize) -> Sequence {
        Sequence::from_flat("ramp", 1, (0..len).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn block_permutation_example() {
        assert_eq!(
            block_permutation(4, 2, &[1, 0]).unwrap().to_one_based(),
            vec![3, 4, 1, 2]
        );
    }

    #[test]
    fn ragged_blocks_keep_adjacency() {
        // T = 5, b = 2: blocks {0,1}, {2,3}, {4}; every block order is valid
        let blocks = [vec![0, 1], vec![2, 3], vec![4]];
        let orders = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for order in orders {
            let perm = block_permutation(5, 2, &order).unwrap();
            let expected: Vec<usize> = order.iter().flat_map(|&b| blocks[b].clone()).collect();
            assert_eq!(perm.as_slice(), &expected[..]);
        }
        let mut rng = rng_from_seed(1);
        let mut seen = BTreeSet::new();
        for _ in 0..500 {
            let perm = block_shuffle(5, 2, &mut rng).unwrap();
            assert!(!perm.is_identity());
            let p = perm.as_slice();
            let pos = |x: usize| p.iter().position(|&v| v == x).unwrap();
            assert_eq!(pos(1), pos(0) + 1);
            assert_eq!(pos(3), pos(2) + 1);
            seen.insert(p.to_vec());
        }
        assert_eq!(seen.len(), 5);
    }

    #[test]
    fn unit_blocks_are_full_permutations() {
        let mut rng = rng_from_seed(2);
        let mut seen = BTreeSet::new();
        for _ in 0..2000 {
            seen.insert(block_shuffle(3, 1, &mut rng).unwrap().as_slice().to_vec());
        }
        assert_eq!(seen.len(), 5);
        assert!(!seen.contains(&vec![0, 1, 2]));
    }

    #[test]
    fn single_block_is_unshufflable() {
        let mut rng = rng_from_seed(3);
        assert!(matches!(
            block_shuffle(4, 4, &mut rng),
            Err(Error::Unshufflable { .. })
        ));
        assert!(matches!(
            block_shuffle(3, 5, &mut rng),
            Err(Error::Unshufflable { .. })
        ));
    }

    #[test]
    fn local_shuffle_of_three() {
        let mut rng = rng_from_seed(4);
        let mut seen = BTreeSet::new();
        for _ in 0..2000 {
            seen.insert(
                local_shuffle(3, 1, 3, &mut rng)
                    .unwrap()
                    .as_slice()
                    .to_vec(),
            );
        }
        assert_eq!(seen.len(), 5);
    }

    #[test]
    fn tight_windows_have_one_placement() {
        let mut rng = rng_from_seed(5);
        for _ in 0..50 {
            assert_eq!(sample_window_starts(6, 2, 3, &mut rng).unwrap(), vec![0, 3]);
        }
        assert!(matches!(
            local_shuffle(5, 2, 3, &mut rng),
            Err(Error::TooShortForWindows { len: 5, needed: 6 })
        ));
    }

    #[test]
    fn window_placements_are_uniform() {
        // T = 7, two windows of 3: placements (0,3), (0,4), (1,4)
        let mut rng = rng_from_seed(6);
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..3000 {
            *counts
                .entry(sample_window_starts(7, 2, 3, &mut rng).unwrap())
                .or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 3);
        assert!(
            counts.values().all(|&c| (900..1100).contains(&c)),
            "{counts:?}"
        );
    }

    #[test]
    fn rows_outside_windows_are_fixed() {
        let mut rng = rng_from_seed(7);
        for _ in 0..200 {
            let len = 10 + random_below(&mut rng, 20);
            let n = 1 + random_below(&mut rng, len / 3);
            let starts = sample_window_starts(len, n, 3, &mut rng.clone()).unwrap();
            let perm = local_shuffle(len, n, 3, &mut rng).unwrap();
            let inside: HashSet<usize> = starts.iter().flat_map(|&s| s..s + 3).collect();
            for (j, &i) in perm.as_slice().iter().enumerate() {
                if !inside.contains(&j) {
                    assert_eq!(i, j);
                } else {
                    let s = starts.iter().rev().find(|&&s| s <= j).unwrap();
                    assert!((*s..s + 3).contains(&i));
                }
            }
        }
    }

    #[test]
    fn dataset_counts() {
        let two = ramp(2).with_doc_id("two");
        let three = ramp(3).with_doc_id("three");
        let ds = make_shuffle_dataset(std::slice::from_ref(&two), ShuffleKind::GlobalBlock, 1, 20, 9).unwrap();
        assert_eq!(ds.n_pairs_kept, 1);
        assert_eq!(ds.pairs[0].perm.as_slice(), &[1, 0]);
        let ds = make_shuffle_dataset(&[three], ShuffleKind::GlobalBlock, 1, 20, 9).unwrap();
        assert_eq!(ds.n_pairs_kept, 5);
        assert_eq!(ds.n_shuffles_requested, 20);
        let unique: HashSet<_> = ds.pairs.iter().map(|p| p.perm.clone()).collect();
        assert_eq!(unique.len(), 5);
    }

    #[test]
    fn dataset_is_seeded_and_order_free() {
        let corpus: Vec<Sequence> = (0..5)
            .map(|i| ramp(12).with_doc_id(format!("d{i}")))
            .collect();
        let a = make_shuffle_dataset(&corpus, ShuffleKind::LocalWindow, 2, 20, 3).unwrap();
        let b = make_shuffle_dataset(&corpus, ShuffleKind::LocalWindow, 2, 20, 3).unwrap();
        assert_eq!(a, b);
        let reversed: Vec<Sequence> = corpus.iter().rev().cloned().collect();
        let c = make_shuffle_dataset(&reversed, ShuffleKind::LocalWindow, 2, 20, 3).unwrap();
        let key = |d: &ShuffleDataset| {
            let mut v: Vec<_> = d
                .pairs
                .iter()
                .map(|p| (p.doc_id.clone(), p.perm.clone()))
                .collect();
            v.sort_by(|x, y| x.0.cmp(&y.0));
            v
        };
        assert_eq!(key(&a), key(&c));
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let corpus = vec![ramp(1).with_doc_id("one"), ramp(6).with_doc_id("six")];
        let ds = make_shuffle_dataset(&corpus, ShuffleKind::GlobalBlock, 2, 4, 0).unwrap();
        assert_eq!(ds.failures.len(), 1);
        assert_eq!(ds.failures[0].doc_id, "one");
        assert!(ds.pairs.iter().all(|p| p.doc_id == "six"));
        let stats = ds.stats(corpus.len());
        assert_eq!(
            (stats.n_docs, stats.n_docs_used, stats.n_failures),
            (2, 1, 1)
        );
    }

    #[test]
    fn manifest_round_trip() {
        let corpus: Vec<Sequence> = (0..3)
            .map(|i| ramp(8).with_doc_id(format!("d{i}")))
            .collect();
        let ds = make_shuffle_dataset(&corpus, ShuffleKind::GlobalBlock, 2, 3, 11).unwrap();
        let mut buf = Vec::new();
        ds.write_manifest(&mut buf).unwrap();
        let first = String::from_utf8(buf.clone()).unwrap();
        let line: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
        assert_eq!(line["kind"], "global_block");
        assert_eq!(line["param"], 2);
        let back = ShuffleDataset::read_manifest(&buf[..], &corpus).unwrap();
        assert_eq!(back.pairs, ds.pairs);
    }

    #[test]
    fn permutation_validation() {
        assert!(Permutation::new(vec![0, 0]).is_err());
        assert!(Permutation::new(vec![0, 2]).is_err());
        assert!(Permutation::from_one_based(&[0, 1]).is_err());
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        assert_eq!(p.apply(&ramp(3)).unwrap().as_flat(), &[2.0, 0.0, 1.0]);
        assert!(p.apply(&ramp(4)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn shuffles_preserve_rows(seed in 0u64..1000, len in 2usize..40, b in 1usize..6) {
            let mut rng = rng_from_seed(seed);
            let s = ramp(len);
            if let Ok(perm) = block_shuffle(len, b, &mut rng) {
                let shuffled = perm.apply(&s).unwrap();
                let mut rows: Vec<i64> = shuffled.as_flat().iter().map(|v| *v as i64).collect();
                rows.sort_unstable();
                proptest::prop_assert_eq!(rows, (0..len as i64).collect::<Vec<_>>());
                proptest::prop_assert!(!perm.is_identity());
            } else {
                proptest::prop_assert!(len <= b);
            }
        }
    }
}
