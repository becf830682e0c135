//! Labelling of M-adic sub-cubes, words, the projection of words to
//! corners, and exact base-M arithmetic on points of `[0,1]^d`.
//!
//! Labels run over `1..=M^d`. Labels `1..=M^d-(M-2)^d` are the boundary
//! labels (child cubes touching the parent boundary), listed in
//! lexicographic order of their offset vectors, followed by the interior
//! labels, also lexicographic. The first coordinate is most significant.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

pub type Label = u32;

/// Largest alphabet we agree to tabulate.
const MAX_ALPHABET: u64 = 1 << 20;

/// Finite word over the label alphabet. The empty word addresses `[0,1]^d`.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Word(Vec<Label>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn new(labels: Vec<Label>) -> Self {
        Word(labels)
    }

    pub fn labels(&self) -> &[Label] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Label> {
        self.0
    }

    /// `w|_n`.
    pub fn prefix(&self, n: usize) -> Word {
        Word(self.0[..n.min(self.0.len())].to_vec())
    }

    /// Longest common prefix.
    pub fn meet(&self, other: &Word) -> Word {
        let n = self
            .0
            .iter()
            .zip(other.0.iter())
            .take_while(|(a, b)| a == b)
            .count();
        self.prefix(n)
    }

    pub fn is_prefix_of(&self, other: &Word) -> bool {
        other.0.starts_with(&self.0)
    }

    pub fn concat(&self, tail: &[Label]) -> Word {
        let mut v = Vec::with_capacity(self.0.len() + tail.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(tail);
        Word(v)
    }

    pub fn push(&mut self, label: Label) {
        self.0.push(label);
    }

    /// Drops the first `n` labels (the left shift applied `n` times).
    pub fn shift(&self, n: usize) -> Word {
        Word(self.0[n.min(self.0.len())..].to_vec())
    }
}

impl Deref for Word {
    type Target = [Label];
    fn deref(&self) -> &[Label] {
        &self.0
    }
}

impl From<Vec<Label>> for Word {
    fn from(v: Vec<Label>) -> Self {
        Word(v)
    }
}

impl From<&[Label]> for Word {
    fn from(v: &[Label]) -> Self {
        Word(v.to_vec())
    }
}

/// Dot-joined labels, e.g. `9.3.1`; the empty word prints as an empty string.
impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, l) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(".")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

#[derive(Debug)]
struct LabelTable {
    /// `offsets[(label-1)*d .. label*d]`
    offsets: Vec<u32>,
    /// Indexed by the mixed-radix value of an offset vector.
    by_index: Vec<Label>,
    boundary: u32,
}

impl LabelTable {
    fn build(dim: usize, base: u32) -> Self {
        let size = (base as usize).pow(dim as u32);
        let mut boundary = Vec::new();
        let mut interior = Vec::new();
        let mut offset = vec![0u32; dim];
        for idx in 0..size {
            let mut rem = idx;
            for k in (0..dim).rev() {
                offset[k] = (rem % base as usize) as u32;
                rem /= base as usize;
            }
            if offset.iter().any(|&o| o == 0 || o == base - 1) {
                boundary.push(idx);
            } else {
                interior.push(idx);
            }
        }
        let n_boundary = boundary.len() as u32;
        let mut offsets = Vec::with_capacity(size * dim);
        let mut by_index = vec![0; size];
        for (pos, idx) in boundary.into_iter().chain(interior).enumerate() {
            by_index[idx] = pos as Label + 1;
            let mut rem = idx;
            let start = offsets.len();
            offsets.resize(start + dim, 0);
            for k in (0..dim).rev() {
                offsets[start + k] = (rem % base as usize) as u32;
                rem /= base as usize;
            }
        }
        LabelTable {
            offsets,
            by_index,
            boundary: n_boundary,
        }
    }
}

/// Process and substitution parameters `(d, M, p, K, eta)`.
#[derive(Clone)]
pub struct Params {
    dim: usize,
    base: u32,
    p: f64,
    eta: Word,
    table: Arc<LabelTable>,
}

impl fmt::Debug for Params {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Params")
            .field("d", &self.dim)
            .field("M", &self.base)
            .field("p", &self.p)
            .field("eta", &self.eta)
            .finish()
    }
}

impl PartialEq for Params {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.base == other.base
            && self.p.to_bits() == other.p.to_bits()
            && self.eta == other.eta
    }
}

impl Params {
    pub fn new(dim: usize, base: u32, p: f64, eta: Word) -> Result<Self> {
        if dim == 0 {
            return domain("d must be at least 1");
        }
        if base < 3 {
            return domain(format!("M must be at least 3, got {base}"));
        }
        let size = (base as u64).checked_pow(dim as u32).unwrap_or(u64::MAX);
        if size > MAX_ALPHABET {
            return Err(Error::Capacity {
                what: format!("alphabet size M^d for M={base}, d={dim}"),
                limit: MAX_ALPHABET,
            });
        }
        if !(p > 0.0 && p < 1.0) {
            return domain(format!("p must lie in (0,1), got {p}"));
        }
        if eta.is_empty() {
            return domain("eta must have length K >= 1");
        }
        let table = Arc::new(LabelTable::build(dim, base));
        let params = Params {
            dim,
            base,
            p,
            eta,
            table,
        };
        for &l in params.eta.iter() {
            params.check_label(l)?;
        }
        if params.is_boundary(params.eta[0]) {
            return domain(format!(
                "first letter of eta must be an interior label, got {}",
                params.eta[0]
            ));
        }
        Ok(params)
    }

    /// `eta` is the centre label `(floor(M/2),..)` repeated `k` times.
    pub fn with_default_eta(dim: usize, base: u32, p: f64, k: usize) -> Result<Self> {
        if k == 0 {
            return domain("K must be at least 1");
        }
        let probe = Params::new(dim, base, p, Word::new(vec![base.pow(dim as u32)]))?;
        let centre = probe.offset_to_label(&vec![base / 2; dim])?;
        Params::new(dim, base, p, Word::new(vec![centre; k]))
    }

    /// Same lattice and `eta`, different survival probability.
    pub fn with_p(&self, p: f64) -> Result<Self> {
        Params::new(self.dim, self.base, p, self.eta.clone())
    }

    pub fn with_eta(&self, eta: Word) -> Result<Self> {
        Params::new(self.dim, self.base, self.p, eta)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn eta(&self) -> &Word {
        &self.eta
    }

    /// `K = |eta|`.
    pub fn k(&self) -> usize {
        self.eta.len()
    }

    /// `M^d`.
    pub fn alphabet_size(&self) -> u32 {
        self.table.by_index.len() as u32
    }

    /// `M^d - (M-2)^d`.
    pub fn boundary_count(&self) -> u32 {
        self.table.boundary
    }

    fn check_label(&self, label: Label) -> Result<()> {
        if label == 0 || label > self.alphabet_size() {
            return domain(format!(
                "label {label} outside 1..={}",
                self.alphabet_size()
            ));
        }
        Ok(())
    }

    pub fn check_word(&self, w: &[Label]) -> Result<()> {
        w.iter().try_for_each(|&l| self.check_label(l))
    }

    pub fn label_to_offset(&self, label: Label) -> Result<&[u32]> {
        self.check_label(label)?;
        Ok(self.offset(label))
    }

    /// Unchecked lookup for labels already validated.
    pub(crate) fn offset(&self, label: Label) -> &[u32] {
        let start = (label as usize - 1) * self.dim;
        &self.table.offsets[start..start + self.dim]
    }

    pub fn offset_to_label(&self, offset: &[u32]) -> Result<Label> {
        if offset.len() != self.dim {
            return domain(format!(
                "offset has {} coordinates, expected {}",
                offset.len(),
                self.dim
            ));
        }
        let mut idx = 0usize;
        for &o in offset {
            if o >= self.base {
                return domain(format!("offset coordinate {o} outside 0..{}", self.base));
            }
            idx = idx * self.base as usize + o as usize;
        }
        Ok(self.table.by_index[idx])
    }

    pub fn is_boundary_label(&self, label: Label) -> Result<bool> {
        self.check_label(label)?;
        Ok(self.is_boundary(label))
    }

    pub(crate) fn is_boundary(&self, label: Label) -> bool {
        label <= self.table.boundary
    }

    pub fn to_record(&self) -> ParamsRecord {
        ParamsRecord {
            d: self.dim,
            m: self.base,
            p: self.p,
            k: self.k(),
            eta: self.eta.clone(),
        }
    }
}

/// Serialized form of [`Params`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsRecord {
    #[serde(rename = "M")]
    pub m: u32,
    pub d: usize,
    pub p: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub eta: Word,
}

impl TryFrom<ParamsRecord> for Params {
    type Error = Error;
    fn try_from(r: ParamsRecord) -> Result<Self> {
        if r.eta.len() != r.k {
            return domain(format!("K={} but eta has length {}", r.k, r.eta.len()));
        }
        Params::new(r.d, r.m, r.p, r.eta)
    }
}

pub(crate) fn big_pow(base: u32, exp: u32) -> BigUint {
    num_traits::pow(BigUint::from(base), exp as usize)
}

/// Non-negative exact number `num / M^level`.
#[derive(Clone, Debug)]
pub struct MAdic {
    base: u32,
    level: u32,
    num: BigUint,
}

impl MAdic {
    pub fn new(base: u32, level: u32, num: BigUint) -> Self {
        MAdic { base, level, num }
    }

    pub fn zero(base: u32) -> Self {
        MAdic::new(base, 0, BigUint::zero())
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn numerator(&self) -> &BigUint {
        &self.num
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn at_level(&self, level: u32) -> BigUint {
        debug_assert!(level >= self.level);
        &self.num * big_pow(self.base, level - self.level)
    }

    /// Smallest-level representation of the same value.
    pub fn normalized(&self) -> Self {
        let m = BigUint::from(self.base);
        let mut num = self.num.clone();
        let mut level = self.level;
        if num.is_zero() {
            return MAdic::zero(self.base);
        }
        while level > 0 && (&num % &m).is_zero() {
            num /= &m;
            level -= 1;
        }
        MAdic::new(self.base, level, num)
    }

    pub fn add(&self, other: &MAdic) -> MAdic {
        let level = self.level.max(other.level);
        MAdic::new(
            self.base,
            level,
            self.at_level(level) + other.at_level(level),
        )
    }

    /// Multiplication by `M^-shift`.
    pub fn scale_down(&self, shift: u32) -> MAdic {
        MAdic::new(self.base, self.level + shift, self.num.clone())
    }

    pub fn to_ratio(&self) -> BigRational {
        BigRational::new(
            self.num.clone().into(),
            big_pow(self.base, self.level).into(),
        )
    }

    pub fn to_f64(&self) -> f64 {
        ratio_to_f64(&self.num, self.base, self.level)
    }
}

fn ratio_to_f64(num: &BigUint, base: u32, level: u32) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    BigRational::new(num.clone().into(), big_pow(base, level).into())
        .to_f64()
        .unwrap_or(f64::NAN)
}

impl PartialEq for MAdic {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for MAdic {}

impl PartialOrd for MAdic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MAdic {
    fn cmp(&self, other: &Self) -> Ordering {
        assert_eq!(
            self.base, other.base,
            "comparing numbers in different bases"
        );
        let level = self.level.max(other.level);
        self.at_level(level).cmp(&other.at_level(level))
    }
}

impl fmt::Display for MAdic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}^{}", self.num, self.base, self.level)
    }
}

/// Point of `[0,1]^d` with coordinates `num[k] / M^level`.
#[derive(Clone, Debug)]
pub struct ExactPoint {
    base: u32,
    level: u32,
    num: Vec<BigUint>,
}

impl ExactPoint {
    pub fn origin(base: u32, dim: usize) -> Self {
        ExactPoint {
            base,
            level: 0,
            num: vec![BigUint::zero(); dim],
        }
    }

    pub fn new(base: u32, level: u32, num: Vec<BigUint>) -> Result<Self> {
        let bound = big_pow(base, level);
        if num.iter().any(|n| n > &bound) {
            return domain("exact point outside [0,1]^d");
        }
        Ok(ExactPoint { base, level, num })
    }

    pub fn from_u64(base: u32, level: u32, num: &[u64]) -> Result<Self> {
        ExactPoint::new(base, level, num.iter().map(|&n| BigUint::from(n)).collect())
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.num.len()
    }

    pub fn numerators(&self) -> &[BigUint] {
        &self.num
    }

    pub fn coord(&self, k: usize) -> MAdic {
        MAdic::new(self.base, self.level, self.num[k].clone())
    }

    /// Same value written at a finer level.
    pub fn at_level(&self, level: u32) -> ExactPoint {
        assert!(level >= self.level);
        let f = big_pow(self.base, level - self.level);
        ExactPoint {
            base: self.base,
            level,
            num: self.num.iter().map(|n| n * &f).collect(),
        }
    }

    pub fn normalized(&self) -> ExactPoint {
        let m = BigUint::from(self.base);
        let mut p = self.clone();
        while p.level > 0 && p.num.iter().all(|n| (n % &m).is_zero()) {
            for n in p.num.iter_mut() {
                *n /= &m;
            }
            p.level -= 1;
        }
        p
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.num
            .iter()
            .map(|n| ratio_to_f64(n, self.base, self.level))
            .collect()
    }

    /// `{"level": n, "num": ["..", ..]}`
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "level": self.level,
            "num": self.num.iter().map(|n| n.to_string()).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(value: &serde_json::Value, base: u32) -> Result<Self> {
        let bad = || Error::Format("expected {\"level\": n, \"num\": [..]}".into());
        let level = value
            .get("level")
            .and_then(|v| v.as_u64())
            .ok_or_else(bad)? as u32;
        let num = value
            .get("num")
            .and_then(|v| v.as_array())
            .ok_or_else(bad)?
            .iter()
            .map(|s| {
                s.as_str()
                    .and_then(|s| s.parse::<BigUint>().ok())
                    .ok_or_else(bad)
            })
            .collect::<Result<Vec<_>>>()?;
        ExactPoint::new(base, level, num)
    }
}

impl PartialEq for ExactPoint {
    fn eq(&self, other: &Self) -> bool {
        if self.base != other.base || self.num.len() != other.num.len() {
            return false;
        }
        let level = self.level.max(other.level);
        let (a, b) = (self.at_level(level), other.at_level(level));
        a.num == b.num
    }
}

impl Eq for ExactPoint {}

/// `Pi(w)`: lower corner of the cube `Q_w`, exact at level `|w|`.
pub fn pi_finite(params: &Params, w: &[Label]) -> Result<ExactPoint> {
    params.check_word(w)?;
    let m = BigUint::from(params.base());
    let mut num = vec![BigUint::zero(); params.dim()];
    for &l in w {
        for (n, &o) in num.iter_mut().zip(params.offset(l)) {
            *n = &*n * &m + BigUint::from(o);
        }
    }
    Ok(ExactPoint {
        base: params.base(),
        level: w.len() as u32,
        num,
    })
}

/// Max-norm distance, exact.
pub fn dist_max(x: &ExactPoint, y: &ExactPoint) -> MAdic {
    assert_eq!(x.base, y.base);
    assert_eq!(x.dim(), y.dim());
    let level = x.level.max(y.level);
    let (a, b) = (x.at_level(level), y.at_level(level));
    let num = a
        .num
        .iter()
        .zip(b.num.iter())
        .map(|(u, v)| if u >= v { u - v } else { v - u })
        .max()
        .unwrap_or_default();
    MAdic::new(x.base, level, num)
}

/// Longest common prefix of two words.
pub fn word_meet(i: &Word, j: &Word) -> Word {
    i.meet(j)
}

/// Closed M-adic cube `corner + [0, M^-level]^d`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MBox {
    corner: ExactPoint,
    level: u32,
}

impl MBox {
    pub fn unit(base: u32, dim: usize) -> Self {
        MBox {
            corner: ExactPoint::origin(base, dim),
            level: 0,
        }
    }

    pub fn corner(&self) -> &ExactPoint {
        &self.corner
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn side(&self) -> MAdic {
        MAdic::new(self.corner.base, self.level, BigUint::one())
    }

    pub fn side_f64(&self) -> f64 {
        (self.corner.base as f64).powi(-(self.level as i32))
    }

    pub fn contains(&self, x: &ExactPoint) -> bool {
        let level = x.level.max(self.level).max(self.corner.level);
        let c = self.corner.at_level(level);
        let x = x.at_level(level);
        let side = big_pow(self.corner.base, level - self.level);
        c.num
            .iter()
            .zip(x.num.iter())
            .all(|(c, x)| x >= c && x <= &(c + &side))
    }

    /// The homothety `h_Q` sending `[0,1]^d` onto this box.
    pub fn apply(&self, x: &ExactPoint) -> ExactPoint {
        let level = self.level + x.level;
        let c = self.corner.at_level(level);
        ExactPoint {
            base: self.corner.base,
            level,
            num: c.num.iter().zip(x.num.iter()).map(|(c, x)| c + x).collect(),
        }
    }

    /// `h_Q^{-1}`, defined on the box only.
    pub fn invert(&self, x: &ExactPoint) -> Result<ExactPoint> {
        if !self.contains(x) {
            return domain("point outside box in inverse homothety");
        }
        let level = x.level.max(self.level);
        let c = self.corner.at_level(level);
        let x = x.at_level(level);
        let num = x.num.iter().zip(c.num.iter()).map(|(x, c)| x - c).collect();
        Ok(ExactPoint {
            base: self.corner.base,
            level: level - self.level,
            num,
        }
        .normalized())
    }

    pub fn corner_f64(&self) -> Vec<f64> {
        self.corner.to_f64()
    }

    pub fn apply_f64(&self, x: &[f64]) -> Vec<f64> {
        let s = self.side_f64();
        self.corner_f64()
            .iter()
            .zip(x)
            .map(|(c, x)| c + s * x)
            .collect()
    }

    pub fn invert_f64(&self, x: &[f64]) -> Vec<f64> {
        let s = self.side_f64();
        self.corner_f64()
            .iter()
            .zip(x)
            .map(|(c, x)| (x - c) / s)
            .collect()
    }
}

/// `Q_w`.
pub fn box_of_word(params: &Params, w: &[Label]) -> Result<MBox> {
    Ok(MBox {
        corner: pi_finite(params, w)?,
        level: w.len() as u32,
    })
}
