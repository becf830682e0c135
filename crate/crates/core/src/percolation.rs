//! Reproducible sampling of truncated fractal percolation trees.
//!
//! Every node verdict is a pure function of `(master seed, word)`: the
//! SHA-256 digest of the ASCII message `"<seed>:<l1>.<l2>...<ln>"` is read
//! as a big-endian `u64` from its first eight bytes, and the node survives
//! iff that value is below `floor(p * 2^64)`. Trees are therefore identical
//! whatever the traversal order or worker count.

use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{domain, precondition, Error, Result};
use crate::lattice::{Label, Params, ParamsRecord, Word};

pub const TREE_FORMAT: &str = "percoqs-tree/1";
pub const DEFAULT_NODE_BUDGET: u64 = 100_000_000;
pub const DEFAULT_REJECTION_BUDGET: u64 = 1_000_000;
pub const NODE_BUDGET_ENV: &str = "PERCOQS_NODE_BUDGET";

/// `floor(p * 2^64)`, saturating at `2^64`.
pub fn survival_threshold(p: f64) -> u128 {
    if p.is_nan() || p <= 0.0 {
        return 0;
    }
    let scaled = p * 18_446_744_073_709_551_616.0;
    if scaled >= 18_446_744_073_709_551_616.0 {
        1u128 << 64
    } else {
        scaled.floor() as u128
    }
}

/// Per-node verdicts keyed by a master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPolicy {
    pub master_seed: u64,
}

impl SeedPolicy {
    pub fn new(master_seed: u64) -> Self {
        SeedPolicy { master_seed }
    }

    fn hasher_for_parent(&self, parent: &[Label]) -> Sha256 {
        let mut msg = String::with_capacity(24 + 4 * parent.len());
        write!(msg, "{}:", self.master_seed).unwrap();
        for l in parent {
            write!(msg, "{l}.").unwrap();
        }
        let mut h = Sha256::new();
        h.update(msg.as_bytes());
        h
    }

    fn finish(h: Sha256) -> u64 {
        let digest = h.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_be_bytes(bytes)
    }

    /// The 64-bit uniform attached to a non-empty word.
    pub fn uniform(&self, w: &[Label]) -> u64 {
        let (last, parent) = w.split_last().expect("uniform of the empty word");
        let mut h = self.hasher_for_parent(parent);
        h.update(last.to_string().as_bytes());
        Self::finish(h)
    }

    /// Alive children of `parent`, ascending.
    pub fn alive_children(&self, parent: &[Label], alphabet: u32, threshold: u128) -> Vec<Label> {
        let base = self.hasher_for_parent(parent);
        let mut buf = String::with_capacity(8);
        (1..=alphabet)
            .filter(|&j| {
                let mut h = base.clone();
                buf.clear();
                write!(buf, "{j}").unwrap();
                h.update(buf.as_bytes());
                (Self::finish(h) as u128) < threshold
            })
            .collect()
    }

    /// Independent policy for a named sub-stream, e.g. the `r`-th resample.
    pub fn derive(&self, tag: &str, index: u64) -> SeedPolicy {
        let mut h = Sha256::new();
        h.update(format!("{}:{}:{}", self.master_seed, tag, index).as_bytes());
        SeedPolicy::new(Self::finish(h))
    }
}

/// Bernoulli(p) verdict for a node of depth `|w| >= 1`.
pub fn node_survives(policy: &SeedPolicy, p: f64, w: &[Label]) -> Result<bool> {
    if w.is_empty() {
        return precondition("node verdicts start at level 1; the root always survives");
    }
    Ok((policy.uniform(w) as u128) < survival_threshold(p))
}

#[derive(Clone, Copy, Debug)]
pub struct SampleOptions {
    /// Maximum number of materialized nodes, root included.
    pub node_budget: u64,
    /// Worker threads; `0` means "use the global rayon pool".
    pub workers: usize,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            node_budget: DEFAULT_NODE_BUDGET,
            workers: 1,
        }
    }
}

impl SampleOptions {
    /// Defaults, with the node budget taken from `PERCOQS_NODE_BUDGET` when set.
    pub fn from_env() -> Result<Self> {
        let mut opts = SampleOptions::default();
        if let Ok(v) = std::env::var(NODE_BUDGET_ENV) {
            opts.node_budget = v
                .trim()
                .parse()
                .map_err(|_| Error::Domain(format!("{NODE_BUDGET_ENV}={v} is not an integer")))?;
        }
        Ok(opts)
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_node_budget(mut self, budget: u64) -> Self {
        self.node_budget = budget;
        self
    }

    /// Runs `f` on a pool of the requested size.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        if self.workers == 0 {
            return f();
        }
        match rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
        {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Level {
    parent: Vec<u32>,
    label: Vec<Label>,
}

/// Truncated realization of the percolation tree to a fixed depth.
///
/// Survivors of each level are stored in lexicographic order as
/// `(parent index, label)` pairs, so the children of a node are a
/// contiguous range of the next level.
#[derive(Clone, Debug, PartialEq)]
pub struct PercTree {
    params: Params,
    seed: u64,
    depth: usize,
    levels: Vec<Level>,
    /// `child_start[k][i]..child_start[k][i+1]` are the children of node `i` of level `k`.
    child_start: Vec<Vec<u32>>,
    /// Word of the original tree this tree is rooted at (empty unless built by [`subtree`]).
    root_prefix: Word,
}

impl PercTree {
    fn assemble(params: Params, seed: u64, levels: Vec<Level>, root_prefix: Word) -> Self {
        let depth = levels.len() - 1;
        let child_start = (0..depth)
            .map(|k| {
                let n = levels[k].label.len();
                let mut start = vec![0u32; n + 1];
                for &par in &levels[k + 1].parent {
                    start[par as usize + 1] += 1;
                }
                for i in 0..n {
                    start[i + 1] += start[i];
                }
                start
            })
            .collect();
        PercTree {
            params,
            seed,
            depth,
            levels,
            child_start,
            root_prefix,
        }
    }

    fn root_level() -> Level {
        Level {
            parent: vec![0],
            label: vec![0],
        }
    }

    /// Builds a tree from explicit survivor lists (level 1 first). Lists are
    /// sorted here; prefix closure is checked.
    pub fn from_survivors(params: Params, seed: u64, survivors: &[Vec<Word>]) -> Result<Self> {
        let mut levels = vec![Self::root_level()];
        let mut prev: Vec<Word> = vec![Word::empty()];
        for (k, words) in survivors.iter().enumerate() {
            let mut words = words.clone();
            words.sort();
            words.dedup();
            let mut level = Level::default();
            for w in &words {
                if w.len() != k + 1 {
                    return domain(format!("word {w} listed at level {}", k + 1));
                }
                params.check_word(w)?;
                let parent = w.prefix(k);
                let idx = prev.binary_search(&parent).map_err(|_| {
                    Error::Domain(format!(
                        "survivor {w} has a dead parent (not prefix-closed)"
                    ))
                })?;
                level.parent.push(idx as u32);
                level.label.push(w[k]);
            }
            levels.push(level);
            prev = words;
        }
        Ok(Self::assemble(params, seed, levels, Word::empty()))
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn root_prefix(&self) -> &Word {
        &self.root_prefix
    }

    /// `|T_k|`.
    pub fn count(&self, level: usize) -> usize {
        self.levels[level].label.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        (0..=self.depth).map(|k| self.count(k)).collect()
    }

    pub fn total_nodes(&self) -> usize {
        self.levels.iter().map(|l| l.label.len()).sum()
    }

    pub fn is_extinct(&self) -> bool {
        self.count(self.depth) == 0
    }

    pub fn label(&self, level: usize, idx: usize) -> Label {
        self.levels[level].label[idx]
    }

    pub fn parent(&self, level: usize, idx: usize) -> usize {
        self.levels[level].parent[idx] as usize
    }

    /// Indices in level `level+1` of the children of node `idx`.
    pub fn children(&self, level: usize, idx: usize) -> Range<usize> {
        let s = &self.child_start[level];
        s[idx] as usize..s[idx + 1] as usize
    }

    pub fn child_labels(&self, level: usize, idx: usize) -> &[Label] {
        &self.levels[level + 1].label[self.children(level, idx)]
    }

    /// Word of node `idx` at `level`, relative to this tree's root.
    pub fn word(&self, level: usize, idx: usize) -> Word {
        let mut labels = vec![0; level];
        let mut i = idx;
        for k in (1..=level).rev() {
            labels[k - 1] = self.levels[k].label[i];
            i = self.levels[k].parent[i] as usize;
        }
        Word::new(labels)
    }

    /// Index of `w` in level `|w|`, if it survives.
    pub fn find(&self, w: &[Label]) -> Option<usize> {
        if w.len() > self.depth {
            return None;
        }
        let mut idx = 0usize;
        for (k, &l) in w.iter().enumerate() {
            let range = self.children(k, idx);
            let labels = &self.levels[k + 1].label[range.clone()];
            idx = range.start + labels.binary_search(&l).ok()?;
        }
        Some(idx)
    }

    pub fn survives(&self, w: &[Label]) -> bool {
        self.find(w).is_some()
    }

    /// Surviving words of one level, lexicographically.
    pub fn survivors(&self, level: usize) -> impl Iterator<Item = Word> + '_ {
        (0..self.count(level)).map(move |i| self.word(level, i))
    }

    /// Structural check: prefix closure, sorted levels, consistent child ranges.
    pub fn check_invariants(&self) -> Result<()> {
        if self.levels[0].label.len() != 1 {
            return precondition("root must survive");
        }
        for k in 1..=self.depth {
            let lv = &self.levels[k];
            let up = self.count(k - 1);
            for i in 0..lv.label.len() {
                if lv.parent[i] as usize >= up {
                    return precondition(format!("dangling parent at level {k}"));
                }
                if i > 0 && (lv.parent[i - 1], lv.label[i - 1]) >= (lv.parent[i], lv.label[i]) {
                    return precondition(format!("level {k} not strictly sorted"));
                }
                if lv.label[i] == 0 || lv.label[i] > self.params.alphabet_size() {
                    return precondition(format!("bad label at level {k}"));
                }
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> TreeFile {
        let rec = self.params.to_record();
        TreeFile {
            format: TREE_FORMAT.to_string(),
            m: rec.m,
            d: rec.d,
            p: rec.p,
            k: rec.k,
            eta: rec.eta,
            seed: self.seed,
            depth: self.depth,
            survivors: (0..=self.depth)
                .map(|k| self.survivors(k).map(Word::into_inner).collect())
                .collect(),
        }
    }

    /// Canonical bytes of the `percoqs-tree/1` file.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec(&self.to_file()).expect("tree serialization");
        v.push(b'\n');
        v
    }

    pub fn from_file(file: TreeFile) -> Result<Self> {
        if file.format != TREE_FORMAT {
            return Err(Error::Format(format!(
                "unknown tree format {:?}",
                file.format
            )));
        }
        let params = Params::try_from(ParamsRecord {
            m: file.m,
            d: file.d,
            p: file.p,
            k: file.k,
            eta: file.eta,
        })?;
        if file.survivors.len() != file.depth + 1 {
            return Err(Error::Format(format!(
                "depth {} but {} survivor levels",
                file.depth,
                file.survivors.len()
            )));
        }
        if file.survivors[0] != vec![Vec::<Label>::new()] {
            return Err(Error::Format("level 0 must be [[]]".into()));
        }
        let levels: Vec<Vec<Word>> = file.survivors[1..]
            .iter()
            .map(|lv| lv.iter().cloned().map(Word::new).collect())
            .collect();
        PercTree::from_survivors(params, file.seed, &levels)
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        PercTree::from_file(serde_json::from_slice(bytes)?)
    }
}

/// On-disk `percoqs-tree/1` record. Field order is the canonical byte order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeFile {
    pub format: String,
    #[serde(rename = "M")]
    pub m: u32,
    pub d: usize,
    pub p: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub eta: Word,
    pub seed: u64,
    pub depth: usize,
    pub survivors: Vec<Vec<Vec<Label>>>,
}

/// Alive children for every node of `level`, in node order.
pub(crate) fn next_generation(
    tree: &PercTree,
    level: usize,
    policy: &SeedPolicy,
    threshold: u128,
) -> Vec<Vec<Label>> {
    let alphabet = tree.params.alphabet_size();
    let prefix = &tree.root_prefix;
    (0..tree.count(level))
        .into_par_iter()
        .map(|i| {
            let w = tree.word(level, i);
            if prefix.is_empty() {
                policy.alive_children(&w, alphabet, threshold)
            } else {
                policy.alive_children(&prefix.concat(&w), alphabet, threshold)
            }
        })
        .collect()
}

/// Samples `T_0..T_depth` for the given master seed.
pub fn sample_tree_with(
    params: &Params,
    depth: usize,
    seed: u64,
    opts: &SampleOptions,
) -> Result<PercTree> {
    opts.install(|| grow(params, depth, seed, opts.node_budget))
}

pub fn sample_tree(params: &Params, depth: usize, seed: u64) -> Result<PercTree> {
    sample_tree_with(params, depth, seed, &SampleOptions::default())
}

fn grow(params: &Params, depth: usize, seed: u64, budget: u64) -> Result<PercTree> {
    let policy = SeedPolicy::new(seed);
    let threshold = survival_threshold(params.p());
    let mut tree = PercTree::assemble(
        params.clone(),
        seed,
        vec![PercTree::root_level()],
        Word::empty(),
    );
    let mut total = 1u64;
    for k in 0..depth {
        let kids = next_generation(&tree, k, &policy, threshold);
        let n: u64 = kids.iter().map(|c| c.len() as u64).sum();
        total += n;
        if total > budget {
            return Err(Error::Capacity {
                what: format!(
                    "nodes in tree of depth {depth} (reached {total} at level {})",
                    k + 1
                ),
                limit: budget,
            });
        }
        let mut level = Level {
            parent: Vec::with_capacity(n as usize),
            label: Vec::with_capacity(n as usize),
        };
        for (i, c) in kids.into_iter().enumerate() {
            level.parent.extend(std::iter::repeat_n(i as u32, c.len()));
            level.label.extend(c);
        }
        let mut levels = std::mem::take(&mut tree.levels);
        levels.push(level);
        tree = PercTree::assemble(params.clone(), seed, levels, Word::empty());
    }
    Ok(tree)
}

/// A depth-`depth` tree with `T_depth` non-empty, by trying seeds
/// `seed, seed+1, ...`.
#[derive(Clone, Debug)]
pub struct Conditioned {
    pub tree: PercTree,
    pub rejections: u64,
}

pub fn sample_nonextinct_with(
    params: &Params,
    depth: usize,
    seed: u64,
    opts: &SampleOptions,
    max_attempts: u64,
) -> Result<Conditioned> {
    for attempt in 0..max_attempts {
        let tree = sample_tree_with(params, depth, seed.wrapping_add(attempt), opts)?;
        if !tree.is_extinct() {
            return Ok(Conditioned {
                tree,
                rejections: attempt,
            });
        }
    }
    let critical = (params.base() as f64).powi(-(params.dim() as i32));
    let diagnostic = if params.p() <= critical {
        format!(
            "p = {} <= M^-d = {critical}: the limit set is almost surely empty",
            params.p()
        )
    } else {
        format!(
            "p = {} > M^-d = {critical}: supercritical, budget too small",
            params.p()
        )
    };
    Err(Error::RejectionBudget {
        attempts: max_attempts,
        diagnostic,
    })
}

pub fn sample_nonextinct(params: &Params, depth: usize, seed: u64) -> Result<Conditioned> {
    sample_nonextinct_with(
        params,
        depth,
        seed,
        &SampleOptions::default(),
        DEFAULT_REJECTION_BUDGET,
    )
}

/// The subtree rooted at a surviving word, depth reduced by `|w|`.
pub fn subtree(tree: &PercTree, w: &[Label]) -> Result<PercTree> {
    let Some(start) = tree.find(w) else {
        return domain(format!("subtree root {} does not survive", Word::from(w)));
    };
    let base = w.len();
    let mut levels = vec![PercTree::root_level()];
    let mut range = start..start + 1;
    for k in base..tree.depth {
        let (lo, hi) = if range.is_empty() {
            (0, 0)
        } else {
            (
                tree.children(k, range.start).start,
                tree.children(k, range.end - 1).end,
            )
        };
        let src = &tree.levels[k + 1];
        levels.push(Level {
            parent: src.parent[lo..hi]
                .iter()
                .map(|&p| p - range.start as u32)
                .collect(),
            label: src.label[lo..hi].to_vec(),
        });
        range = lo..hi;
    }
    Ok(PercTree::assemble(
        tree.params.clone(),
        tree.seed,
        levels,
        tree.root_prefix.concat(w),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest, Sha256};

    fn params(p: f64) -> Params {
        Params::with_default_eta(2, 3, p, 1).unwrap()
    }

    const ALMOST_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

    #[test]
    fn threshold_edges() {
        assert_eq!(survival_threshold(0.0), 0);
        assert_eq!(survival_threshold(0.5), 1u128 << 63);
        assert_eq!(survival_threshold(1.0), 1u128 << 64);
        assert_eq!(survival_threshold(ALMOST_ONE), (1u128 << 64) - 2048);
    }

    #[test]
    fn verdict_matches_reference_digest() {
        let digest = Sha256::digest(b"42:9");
        let u = u64::from_be_bytes(digest[..8].try_into().unwrap());
        let pol = SeedPolicy::new(42);
        assert_eq!(pol.uniform(&[9]), u);
        assert_eq!(node_survives(&pol, 0.5, &[9]).unwrap(), u < (1u64 << 63));

        let digest = Sha256::digest(b"42:9.3.1");
        let u = u64::from_be_bytes(digest[..8].try_into().unwrap());
        assert_eq!(pol.uniform(&[9, 3, 1]), u);
        assert!(node_survives(&pol, 0.5, &[]).is_err());
    }

    #[test]
    fn verdict_extremes() {
        let pol = SeedPolicy::new(7);
        for w in [vec![1], vec![9, 9], vec![3, 1, 4]] {
            assert!(node_survives(&pol, 1.0, &w).unwrap());
            assert!(!node_survives(&pol, 0.0, &w).unwrap());
        }
    }

    #[test]
    fn alive_children_agree_with_single_verdicts() {
        let pol = SeedPolicy::new(123);
        let thr = survival_threshold(0.6);
        let kids = pol.alive_children(&[4, 9], 9, thr);
        let direct: Vec<u32> = (1..=9)
            .filter(|&j| node_survives(&pol, 0.6, &[4, 9, j]).unwrap())
            .collect();
        assert_eq!(kids, direct);
    }

    #[test]
    fn depth_zero_and_full_tree() {
        let t = sample_tree(&params(0.7), 0, 1).unwrap();
        assert_eq!(t.counts(), vec![1]);
        let full = sample_tree(&params(ALMOST_ONE), 3, 1).unwrap();
        assert_eq!(full.counts(), vec![1, 9, 81, 729]);
        full.check_invariants().unwrap();
    }

    #[test]
    fn survivors_are_prefix_closed_and_match_verdicts() {
        let par = params(0.6);
        let t = sample_tree(&par, 4, 99).unwrap();
        t.check_invariants().unwrap();
        let pol = SeedPolicy::new(99);
        for k in 1..=4 {
            for w in t.survivors(k) {
                assert!(t.survives(&w.prefix(k - 1)));
                for n in 1..=k {
                    assert!(node_survives(&pol, 0.6, &w.prefix(n)).unwrap());
                }
            }
        }
        // a dead child of a surviving node really is dead
        for w in t.survivors(2) {
            for j in 1..=9 {
                let c = w.concat(&[j]);
                assert_eq!(t.survives(&c), node_survives(&pol, 0.6, &c).unwrap());
            }
        }
    }

    #[test]
    fn deterministic_across_workers() {
        let par = params(0.7);
        let one = sample_tree_with(&par, 4, 5, &SampleOptions::default().with_workers(1)).unwrap();
        for w in [4, 16] {
            let other =
                sample_tree_with(&par, 4, 5, &SampleOptions::default().with_workers(w)).unwrap();
            assert_eq!(one.to_json_bytes(), other.to_json_bytes());
        }
    }

    #[test]
    fn node_budget_is_enforced() {
        let opts = SampleOptions::default().with_node_budget(50);
        let err = sample_tree_with(&params(ALMOST_ONE), 3, 1, &opts).unwrap_err();
        assert!(matches!(err, Error::Capacity { limit: 50, .. }));
    }

    #[test]
    fn json_round_trip() {
        let t = sample_tree(&params(0.5), 3, 11).unwrap();
        let bytes = t.to_json_bytes();
        let back = PercTree::from_json_bytes(&bytes).unwrap();
        assert_eq!(back.to_json_bytes(), bytes);
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with(r#"{"format":"percoqs-tree/1","M":3,"d":2,"p":0.5,"K":1,"eta":[9],"seed":11,"depth":3,"survivors":[[[]],"#));
    }

    #[test]
    fn rejects_non_prefix_closed_input() {
        let w = |v: &[u32]| Word::from(v);
        let err = PercTree::from_survivors(params(0.5), 0, &[vec![w(&[1])], vec![w(&[2, 3])]]);
        assert!(err.is_err());
        let ok =
            PercTree::from_survivors(params(0.5), 0, &[vec![w(&[9]), w(&[3])], vec![w(&[9, 9])]])
                .unwrap();
        assert_eq!(ok.counts(), vec![1, 2, 1]);
        assert_eq!(ok.word(2, 0), w(&[9, 9]));
        assert_eq!(ok.child_labels(0, 0), &[3, 9]);
    }

    #[test]
    fn nonextinct_sampling() {
        let c = sample_nonextinct(&params(ALMOST_ONE), 3, 0).unwrap();
        assert_eq!(c.rejections, 0);
        let sub = params(1.0 / 18.0);
        // mean offspring 1/2: surviving 40 generations has probability <= 2^-40
        let err = sample_nonextinct_with(&sub, 40, 0, &SampleOptions::default(), 2000).unwrap_err();
        match err {
            Error::RejectionBudget { diagnostic, .. } => {
                assert!(diagnostic.contains("almost surely empty"))
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn subtree_structure() {
        let t = sample_tree(&params(0.8), 4, 3).unwrap();
        let same = subtree(&t, &[]).unwrap();
        assert_eq!(same.to_json_bytes(), t.to_json_bytes());
        let w = t.word(1, 0);
        let s = subtree(&t, &w).unwrap();
        s.check_invariants().unwrap();
        assert_eq!(s.depth(), 3);
        assert_eq!(s.root_prefix(), &w);
        for k in 0..=3 {
            let expect: Vec<Word> = t
                .survivors(k + 1)
                .filter(|v| w.is_prefix_of(v))
                .map(|v| v.shift(1))
                .collect();
            assert_eq!(s.survivors(k).collect::<Vec<_>>(), expect);
        }
        let dead = (1..=9).find(|&j| !t.survives(&[j]));
        if let Some(j) = dead {
            assert!(subtree(&t, &[j]).is_err());
        }
    }
}
