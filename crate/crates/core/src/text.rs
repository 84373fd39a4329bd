//! Token sequences, coordinate index sets and the masking operation.
//!
//! Positions are 1-based throughout, so an [`IndexSet`] over a sequence of
//! length `T` only ever holds values in `1..=T`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved sentinel written into every masked position.
pub const MASK_TOKEN: &str = "[MASK]";

/// A non-empty tokenized document or query.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    /// Wraps already-split tokens. Tokens must be non-empty, free of
    /// whitespace and must not be the mask sentinel.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        for tok in &tokens {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::InvalidParams(format!("bad token {tok:?}")));
            }
            if tok == MASK_TOKEN {
                return Err(Error::InvalidParams(
                    "the [MASK] token is reserved".to_string(),
                ));
            }
        }
        Ok(TokenSeq(tokens))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }

    /// Replaces the token at 1-based `position`.
    pub fn with_substitution(&self, position: usize, token: &str) -> Result<TokenSeq> {
        if position == 0 || position > self.len() {
            return Err(Error::IndexOutOfRange {
                index: position,
                len: self.len(),
            });
        }
        let mut tokens = self.0.clone();
        tokens[position - 1] = token.to_string();
        TokenSeq::from_tokens(tokens)
    }

    /// Keeps at most `max_len` leading tokens. Returns true if anything was cut.
    pub fn truncate(&mut self, max_len: usize) -> bool {
        let cut = self.0.len() > max_len && max_len > 0;
        if cut {
            self.0.truncate(max_len);
        }
        cut
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&detokenize(&self.0))
    }
}

/// Lowercases and splits on whitespace. Punctuation stays attached.
pub fn tokenize(text: &str) -> Result<TokenSeq> {
    let tokens: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    if tokens.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(TokenSeq(tokens))
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, tok) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(tok.as_ref());
    }
    out
}

/// A sorted set of distinct 1-based coordinate positions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn empty() -> Self {
        IndexSet(Vec::new())
    }

    /// Builds a set from arbitrary positions; sorts, and rejects zeros and
    /// duplicates.
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.first() == Some(&0) {
            return Err(Error::InvalidIndexSet("positions are 1-based".into()));
        }
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidIndexSet("duplicate position".into()));
        }
        Ok(IndexSet(indices))
    }

    /// `1..=len`
    pub fn full(len: usize) -> Self {
        IndexSet((1..=len).collect())
    }

    pub(crate) fn from_sorted(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(indices.first() != Some(&0));
        IndexSet(indices)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    pub fn max(&self) -> Option<usize> {
        self.0.last().copied()
    }

    /// True if the two sets share at least one position.
    pub fn intersects(&self, other: &IndexSet) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }
}

/// A document with every position outside `keep` replaced by [`MASK_TOKEN`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSeq {
    pub tokens: Vec<String>,
    pub keep: IndexSet,
}

impl MaskedSeq {
    pub fn mask_count(&self) -> usize {
        self.tokens.iter().filter(|t| *t == MASK_TOKEN).count()
    }
}

/// Positions where two equal-length sequences differ. Its size is their
/// Hamming distance.
pub fn diff_set<S: AsRef<str>>(x: &[S], x_prime: &[S]) -> Result<IndexSet> {
    if x.len() != x_prime.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: x_prime.len(),
        });
    }
    Ok(IndexSet::from_sorted(
        x.iter()
            .zip(x_prime)
            .enumerate()
            .filter(|(_, (a, b))| a.as_ref() != b.as_ref())
            .map(|(i, _)| i + 1)
            .collect(),
    ))
}

pub fn hamming_distance<S: AsRef<str>>(x: &[S], x_prime: &[S]) -> Result<usize> {
    diff_set(x, x_prime).map(|d| d.len())
}

pub fn apply_mask(x: &TokenSeq, keep: &IndexSet) -> Result<MaskedSeq> {
    if let Some(max) = keep.max() {
        if max > x.len() {
            return Err(Error::IndexOutOfRange {
                index: max,
                len: x.len(),
            });
        }
    }
    Ok(MaskedSeq {
        tokens: mask_tokens(x.tokens(), keep),
        keep: keep.clone(),
    })
}

/// Unchecked core of [`apply_mask`]; `keep` must already fit `tokens`.
pub(crate) fn mask_tokens(tokens: &[String], keep: &IndexSet) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut kept = keep.as_slice().iter().peekable();
    for (i, tok) in tokens.iter().enumerate() {
        if kept.peek() == Some(&&(i + 1)) {
            kept.next();
            out.push(tok.clone());
        } else {
            out.push(MASK_TOKEN.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(s: &str) -> TokenSeq {
        tokenize(s).unwrap()
    }

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(seq("A B C D E F").tokens(), ["a", "b", "c", "d", "e", "f"]);
        assert_eq!(seq("  hello   world ").tokens(), ["hello", "world"]);
        assert!(matches!(tokenize(""), Err(Error::EmptyText)));
        assert!(matches!(tokenize("   \t "), Err(Error::EmptyText)));
    }

    #[test]
    fn diff_set_worked_example() {
        let d = diff_set(seq("A B C D E F").tokens(), seq("A B G H E J").tokens()).unwrap();
        assert_eq!(d.as_slice(), [3, 4, 6]);
        assert_eq!(d.len(), 3);
        let x = seq("a b c");
        assert!(diff_set(x.tokens(), x.tokens()).unwrap().is_empty());
        let err = diff_set(seq("a b c d e f").tokens(), seq("a b c d e").tokens());
        assert!(matches!(err, Err(Error::LengthMismatch { left: 6, right: 5 })));
    }

    #[test]
    fn apply_mask_worked_example() {
        let x = seq("A B G H E J");
        let keep = IndexSet::new(vec![5, 1, 2]).unwrap();
        let m = apply_mask(&x, &keep).unwrap();
        assert_eq!(detokenize(&m.tokens), "a b [MASK] [MASK] e [MASK]");
        assert_eq!(m.mask_count(), 3);

        let full = apply_mask(&x, &IndexSet::full(6)).unwrap();
        assert_eq!(full.tokens, x.tokens());
        let none = apply_mask(&x, &IndexSet::empty()).unwrap();
        assert!(none.tokens.iter().all(|t| t == MASK_TOKEN));

        let bad = IndexSet::new(vec![7]).unwrap();
        assert!(matches!(
            apply_mask(&x, &bad),
            Err(Error::IndexOutOfRange { index: 7, len: 6 })
        ));
    }

    #[test]
    fn index_set_validation() {
        assert!(IndexSet::new(vec![0, 1]).is_err());
        assert!(IndexSet::new(vec![2, 2]).is_err());
        let a = IndexSet::new(vec![1, 4]).unwrap();
        assert!(a.intersects(&IndexSet::new(vec![4, 5]).unwrap()));
        assert!(!a.intersects(&IndexSet::new(vec![2, 3, 5]).unwrap()));
        assert!(!a.intersects(&IndexSet::empty()));
    }

    #[test]
    fn token_seq_rejects_sentinel() {
        assert!(TokenSeq::from_tokens(["a", MASK_TOKEN]).is_err());
        assert!(TokenSeq::from_tokens(["a b"]).is_err());
        assert!(TokenSeq::from_tokens(Vec::<String>::new()).is_err());
    }

    fn small_seq(len: usize) -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c"]), len)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    fn pair_with_keep() -> impl Strategy<Value = (Vec<String>, Vec<String>, Vec<bool>)> {
        (1usize..12).prop_flat_map(|t| (small_seq(t), small_seq(t), prop::collection::vec(any::<bool>(), t)))
    }

    proptest! {
        #[test]
        fn mask_count_matches_keep((x, _, keep) in pair_with_keep()) {
            let x = TokenSeq::from_tokens(x).unwrap();
            let keep = IndexSet::from_sorted(
                keep.iter().enumerate().filter(|(_, k)| **k).map(|(i, _)| i + 1).collect(),
            );
            let m = apply_mask(&x, &keep).unwrap();
            prop_assert_eq!(m.mask_count(), x.len() - keep.len());
            prop_assert_eq!(m.tokens.len(), x.len());
        }

        #[test]
        fn diff_set_is_symmetric((x, y, _) in pair_with_keep()) {
            prop_assert_eq!(diff_set(&x, &y).unwrap(), diff_set(&y, &x).unwrap());
        }

        #[test]
        fn disjoint_keep_hides_differences((x, y, keep) in pair_with_keep()) {
            let x = TokenSeq::from_tokens(x).unwrap();
            let y = TokenSeq::from_tokens(y).unwrap();
            let keep = IndexSet::from_sorted(
                keep.iter().enumerate().filter(|(_, k)| **k).map(|(i, _)| i + 1).collect(),
            );
            let d = diff_set(x.tokens(), y.tokens()).unwrap();
            if !keep.intersects(&d) {
                prop_assert_eq!(apply_mask(&x, &keep).unwrap().tokens, apply_mask(&y, &keep).unwrap().tokens);
            }
        }

        #[test]
        fn tokenize_round_trip(words in prop::collection::vec("[a-z0-9.,!]{1,6}", 1..10)) {
            let x = TokenSeq::from_tokens(words).unwrap();
            prop_assert_eq!(tokenize(&x.to_string()).unwrap(), x);
        }
    }
}
