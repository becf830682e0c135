//! Stretch flags, the tilde substitution on words and the induced map on
//! the percolation set.
//!
//! A surviving node is *flagged* when none of its boundary children
//! survive. Its word then receives the block `eta` in front of the next
//! letter. The rule is decided from the original prefixes in one pass and
//! is never re-applied inside inserted blocks.

use num_bigint::BigInt;
use num_rational::BigRational;

use crate::error::{domain, precondition, Result};
use crate::lattice::{box_of_word, dist_max, pi_finite, ExactPoint, Label, MBox, Params, Word};
use crate::percolation::PercTree;

/// A tree together with its stretch flags and the tilde length of every node.
#[derive(Clone, Debug)]
pub struct FlaggedTree {
    tree: PercTree,
    /// One entry per node of levels `0..depth`.
    flags: Vec<Vec<bool>>,
    /// `|tilde(w)|` for every node of levels `0..=depth`.
    tilde_len: Vec<Vec<u32>>,
}

/// Word after substitution, with the source positions that received `eta`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TildeWord {
    pub labels: Word,
    /// 1-based positions in the source word, ascending.
    pub insertions: Vec<usize>,
}

impl TildeWord {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Removes the inserted blocks again.
    pub fn source(&self, k: usize) -> Word {
        let mut out = Vec::new();
        let mut pos = 0;
        let mut ins = self.insertions.iter().peekable();
        let mut src = 1;
        while pos < self.labels.len() {
            if ins.peek() == Some(&&src) {
                ins.next();
                pos += k;
            }
            out.push(self.labels[pos]);
            pos += 1;
            src += 1;
        }
        Word::new(out)
    }
}

/// Flags every surviving node above the deepest level.
pub fn compute_flags(tree: &PercTree) -> Result<FlaggedTree> {
    FlaggedTree::new(tree.clone())
}

impl FlaggedTree {
    pub fn new(tree: PercTree) -> Result<Self> {
        if tree.depth() == 0 {
            return precondition("flags need a tree of depth >= 1");
        }
        let params = tree.params();
        let k = params.k() as u32;
        let boundary = params.boundary_count();
        let flags: Vec<Vec<bool>> = (0..tree.depth())
            .map(|lv| {
                (0..tree.count(lv))
                    .map(|i| {
                        // child labels are sorted and boundary labels come first
                        tree.child_labels(lv, i)
                            .first()
                            .is_none_or(|&l| l > boundary)
                    })
                    .collect()
            })
            .collect();
        let mut tilde_len = vec![vec![0u32]];
        for lv in 1..=tree.depth() {
            let up = &tilde_len[lv - 1];
            let row = (0..tree.count(lv))
                .map(|i| {
                    let par = tree.parent(lv, i);
                    up[par] + 1 + if flags[lv - 1][par] { k } else { 0 }
                })
                .collect();
            tilde_len.push(row);
        }
        Ok(FlaggedTree {
            tree,
            flags,
            tilde_len,
        })
    }

    pub fn tree(&self) -> &PercTree {
        &self.tree
    }

    pub fn params(&self) -> &Params {
        self.tree.params()
    }

    pub fn depth(&self) -> usize {
        self.tree.depth()
    }

    /// `None` at the deepest level, where the next generation is unknown.
    pub fn flag(&self, level: usize, idx: usize) -> Option<bool> {
        self.flags.get(level).map(|row| row[idx])
    }

    /// Flag of a surviving word; `Ok(None)` at the deepest level.
    pub fn flag_of(&self, w: &[Label]) -> Result<Option<bool>> {
        match self.tree.find(w) {
            Some(i) => Ok(self.flag(w.len(), i)),
            None => domain(format!("{} does not survive", Word::from(w))),
        }
    }

    pub fn tilde_len(&self, level: usize, idx: usize) -> u32 {
        self.tilde_len[level][idx]
    }

    /// Number of flagged nodes on levels `0..depth`.
    pub fn flagged_count(&self) -> usize {
        self.flags.iter().flatten().filter(|&&f| f).count()
    }

    /// Tilde of a word whose proper prefixes all survive, `|w| <= depth`.
    pub fn tilde(&self, w: &[Label]) -> Result<TildeWord> {
        if w.len() > self.depth() {
            return precondition(format!(
                "word of length {} exceeds depth {}; flags at the deepest level are unknown",
                w.len(),
                self.depth()
            ));
        }
        let eta = self.params().eta();
        let mut labels = Vec::with_capacity(w.len() + eta.len());
        let mut insertions = Vec::new();
        let mut idx = 0usize;
        for (n, &l) in w.iter().enumerate() {
            if self.flags[n][idx] {
                labels.extend_from_slice(eta);
                insertions.push(n + 1);
            }
            labels.push(l);
            if n + 1 < w.len() {
                let range = self.tree.children(n, idx);
                let kids = self.tree.child_labels(n, idx);
                idx = match kids.binary_search(&l) {
                    Ok(pos) => range.start + pos,
                    Err(_) => {
                        return precondition(format!(
                            "prefix {} does not survive, so its flag is undefined",
                            Word::from(&w[..=n])
                        ))
                    }
                };
            }
        }
        Ok(TildeWord {
            labels: Word::new(labels),
            insertions,
        })
    }

    /// `σ^{|tilde(p)|} tilde(p j)`: the part of `tilde(p j)` after `tilde(p)`.
    pub fn tilde_after(&self, p: &[Label], j: &[Label]) -> Result<Word> {
        let tp = self.tilde(p)?;
        let mut pj = p.to_vec();
        pj.extend_from_slice(j);
        Ok(self.tilde(&pj)?.labels.shift(tp.len()))
    }

    /// `f(Pi(w)) = Pi(tilde(w))` on a corner representative.
    pub fn f_point(&self, w: &[Label]) -> Result<ExactPoint> {
        pi_finite(self.params(), &self.tilde(w)?.labels)
    }

    /// `Q_{tilde(w)}`.
    pub fn image_box(&self, w: &[Label]) -> Result<MBox> {
        box_of_word(self.params(), &self.tilde(w)?.labels)
    }

    /// `{Q_tilde(i) : i in T_n}` in lexicographic order of the source words.
    pub fn image_cover(&self, n: usize) -> Result<Vec<CoverCell>> {
        if n > self.depth() {
            return precondition(format!("cover level {n} exceeds depth {}", self.depth()));
        }
        let cells: Vec<CoverCell> = self
            .tree
            .survivors(n)
            .map(|source| {
                let tilde = self.tilde(&source)?;
                let image = box_of_word(self.params(), &tilde.labels)?;
                Ok(CoverCell {
                    source,
                    tilde,
                    image,
                })
            })
            .collect::<Result<_>>()?;
        let mut seen: Vec<&Word> = cells.iter().map(|c| &c.tilde.labels).collect();
        seen.sort();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return precondition("tilde is not injective on survivors (invariant violated)");
        }
        Ok(cells)
    }

    /// `|f(x)-f(y)| M^{|tilde k|-|k|} / |x-y|` for corners `x = Pi(i)`,
    /// `y = Pi(j)` with `k = i ∧ j`.
    pub fn comparability_ratio(&self, i: &[Label], j: &[Label]) -> Result<BigRational> {
        let params = self.params();
        let di = dist_max(&pi_finite(params, i)?, &pi_finite(params, j)?);
        if di.is_zero() {
            return domain("comparability ratio of coincident corners");
        }
        let df = dist_max(&self.f_point(i)?, &self.f_point(j)?);
        let k = Word::from(i).meet(&Word::from(j));
        let stretch = self.tilde(&k)?.len() as i32 - k.len() as i32;
        let m = BigRational::from_integer(BigInt::from(params.base()));
        Ok(df.to_ratio() * num_traits::pow::Pow::pow(&m, stretch) / di.to_ratio())
    }
}

#[derive(Clone, Debug)]
pub struct CoverCell {
    pub source: Word,
    pub tilde: TildeWord,
    pub image: MBox,
}
