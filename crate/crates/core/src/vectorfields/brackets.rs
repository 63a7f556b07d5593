use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::field::{lie_bracket, VectorField};
use super::system::VectorFieldSystem;

/// An iterated bracket `[V_{j₁},[V_{j₂},[…[V_{j_{k−1}},V_{j_k}]…]]]`.
///
/// Indices are 0-based internally and 1-based in text and JSON.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BracketWord(Vec<usize>);

impl BracketWord {
    /// Panics on an empty word.
    pub fn new(indices: Vec<usize>) -> Self {
        assert!(!indices.is_empty(), "bracket words are nonempty");
        Self(indices)
    }

    pub fn single(i: usize) -> Self {
        Self(vec![i])
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    /// Bracket depth k (1 for a plain field).
    pub fn degree(&self) -> usize {
        self.0.len()
    }

    /// Index of the innermost plain field `V_{j_k}`.
    pub fn last(&self) -> usize {
        *self.0.last().expect("nonempty")
    }

    /// The word obtained by dropping the outermost `l` brackets.
    pub fn suffix(&self, l: usize) -> BracketWord {
        BracketWord(self.0[l..].to_vec())
    }

    /// `[V_i, self]`.
    pub fn prepend(&self, i: usize) -> BracketWord {
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.push(i);
        v.extend_from_slice(&self.0);
        BracketWord(v)
    }

    /// Symbolic evaluation of the word on a system.
    pub fn field(&self, sys: &VectorFieldSystem) -> VectorField {
        let mut acc = sys.field(self.last()).clone();
        for &i in self.0[..self.0.len() - 1].iter().rev() {
            acc = lie_bracket(sys.field(i), &acc).expect("system fields share a dimension");
        }
        acc
    }
}

impl fmt::Display for BracketWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = self.0.len();
        for &i in &self.0[..k - 1] {
            write!(f, "[V{},", i + 1)?;
        }
        write!(f, "V{}", self.0[k - 1] + 1)?;
        for _ in 1..k {
            write!(f, "]")?;
        }
        Ok(())
    }
}

impl Serialize for BracketWord {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let one_based: Vec<usize> = self.0.iter().map(|i| i + 1).collect();
        one_based.serialize(s)
    }
}

impl<'de> Deserialize<'de> for BracketWord {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        if v.is_empty() || v.contains(&0) {
            return Err(serde::de::Error::custom("bracket words are nonempty lists of 1-based indices"));
        }
        Ok(Self(v.into_iter().map(|i| i - 1).collect()))
    }
}

/// A bracket word together with its symbolic field.
#[derive(Clone, Debug)]
pub struct BracketEntry {
    pub word: BracketWord,
    pub field: VectorField,
}

impl BracketEntry {
    pub fn is_zero(&self) -> bool {
        self.field.is_zero()
    }
}

/// `Σ₁..Σ_kmax`: `Σ₁ = {V₁..V_d}`, `Σ_k = {[V_i, W] : i ≤ d, W ∈ Σ_{k−1}}`.
///
/// Every level has exactly `d^k` words, ordered by the outer index first.
/// Words whose field is identically zero stay in the list (so the counts are
/// those of the definition); their brackets are known to be zero and are not
/// recomputed.
#[derive(Clone, Debug)]
pub struct BracketSets {
    levels: Vec<Vec<BracketEntry>>,
}

impl BracketSets {
    pub fn level(&self, k: usize) -> &[BracketEntry] {
        &self.levels[k - 1]
    }

    pub fn max_degree(&self) -> usize {
        self.levels.len()
    }

    /// All nonzero entries up to degree `k`, in level order.
    pub fn nonzero_up_to(&self, k: usize) -> impl Iterator<Item = &BracketEntry> {
        self.levels[..k.min(self.levels.len())].iter().flatten().filter(|e| !e.is_zero())
    }
}

pub fn bracket_sets(sys: &VectorFieldSystem, kmax: usize) -> BracketSets {
    assert!(kmax >= 1, "kmax must be at least 1");
    let d = sys.d();
    let mut levels: Vec<Vec<BracketEntry>> = Vec::with_capacity(kmax);
    levels.push(
        (0..d)
            .map(|i| BracketEntry { word: BracketWord::single(i), field: sys.field(i).clone() })
            .collect(),
    );
    for _ in 2..=kmax {
        let prev = levels.last().expect("level 1 exists");
        let mut next = Vec::with_capacity(prev.len() * d);
        for i in 0..d {
            for w in prev {
                let field = if w.is_zero() {
                    VectorField::zero(sys.n())
                } else {
                    lie_bracket(sys.field(i), &w.field).expect("system fields share a dimension")
                };
                next.push(BracketEntry { word: w.word.prepend(i), field });
            }
        }
        levels.push(next);
    }
    BracketSets { levels }
}
