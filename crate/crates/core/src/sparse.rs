//! Per-user compressed rows of the rating matrix R (n × m) and the trust
//! matrix T (n × n), with membership tests and uniform negative sampling.

use std::collections::HashSet;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Rating,
    Trust,
}

/// Compressed sparse rows with strictly increasing column indices per row.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Csr {
    offsets: Vec<usize>,
    cols: Vec<u32>,
}

impl Csr {
    fn from_pairs(rows: usize, pairs: &[(u32, u32)]) -> Self {
        let mut sorted = pairs.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut offsets = vec![0usize; rows + 1];
        for &(r, _) in &sorted {
            offsets[r as usize + 1] += 1;
        }
        for r in 0..rows {
            offsets[r + 1] += offsets[r];
        }
        Csr {
            offsets,
            cols: sorted.into_iter().map(|(_, c)| c).collect(),
        }
    }

    fn row(&self, r: usize) -> &[u32] {
        &self.cols[self.offsets[r]..self.offsets[r + 1]]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseInteractions {
    n: usize,
    m: usize,
    ratings: Csr,
    trusts: Csr,
}

/// Sampled zero entries for one user: items from the complement of the
/// rating row and users from the complement of the trust row. Both sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NegativeSample {
    pub items: Vec<u32>,
    pub users: Vec<u32>,
}

impl SparseInteractions {
    pub fn from_pairs(
        n: usize,
        m: usize,
        ratings: &[(u32, u32)],
        trusts: &[(u32, u32)],
    ) -> Result<Self> {
        for &(u, i) in ratings {
            bound(u as usize, n)?;
            bound(i as usize, m)?;
        }
        for &(u, v) in trusts {
            bound(u as usize, n)?;
            bound(v as usize, n)?;
        }
        Ok(SparseInteractions {
            n,
            m,
            ratings: Csr::from_pairs(n, ratings),
            trusts: Csr::from_pairs(n, trusts),
        })
    }

    pub fn n_users(&self) -> usize {
        self.n
    }

    pub fn n_items(&self) -> usize {
        self.m
    }

    pub fn row(&self, u: usize, which: Relation) -> Result<&[u32]> {
        bound(u, self.n)?;
        Ok(match which {
            Relation::Rating => self.ratings.row(u),
            Relation::Trust => self.trusts.row(u),
        })
    }

    /// Rating row of `u`. Panics if `u >= n`.
    pub fn ratings_of(&self, u: usize) -> &[u32] {
        self.ratings.row(u)
    }

    /// Trust row of `u`. Panics if `u >= n`.
    pub fn trusts_of(&self, u: usize) -> &[u32] {
        self.trusts.row(u)
    }

    pub fn contains_rating(&self, u: usize, i: u32) -> bool {
        self.ratings.row(u).binary_search(&i).is_ok()
    }

    pub fn contains_trust(&self, u: usize, v: u32) -> bool {
        self.trusts.row(u).binary_search(&v).is_ok()
    }

    pub fn nnz_ratings(&self) -> usize {
        self.ratings.cols.len()
    }

    pub fn nnz_trusts(&self) -> usize {
        self.trusts.cols.len()
    }

    /// Iterates over all `(user, item)` positives in row order.
    pub fn rating_pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.n).flat_map(move |u| self.ratings.row(u).iter().map(move |&i| (u as u32, i)))
    }

    pub fn trust_pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.n).flat_map(move |u| self.trusts.row(u).iter().map(move |&v| (u as u32, v)))
    }

    /// Draws both negative sets for `u` from a single stream (items first).
    pub fn sample_negatives<R: Rng + ?Sized>(&self, u: usize, rng: &mut R) -> Result<NegativeSample> {
        bound(u, self.n)?;
        let items = self.sample_rating_negatives(u, rng);
        let users = self.sample_trust_negatives(u, rng);
        Ok(NegativeSample { items, users })
    }

    pub fn sample_rating_negatives<R: Rng + ?Sized>(&self, u: usize, rng: &mut R) -> Vec<u32> {
        sample_complement(self.ratings.row(u), self.m, rng)
    }

    pub fn sample_trust_negatives<R: Rng + ?Sized>(&self, u: usize, rng: &mut R) -> Vec<u32> {
        sample_complement(self.trusts.row(u), self.n, rng)
    }
}

fn bound(index: usize, bound: usize) -> Result<()> {
    if index < bound {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { index, bound })
    }
}

/// Uniform sample without replacement of `min(|positives|, domain - |positives|)`
/// indices from `0..domain` outside the sorted `positives`.
pub fn sample_complement<R: Rng + ?Sized>(positives: &[u32], domain: usize, rng: &mut R) -> Vec<u32> {
    let free = domain.saturating_sub(positives.len());
    let count = positives.len().min(free);
    if count == 0 {
        return Vec::new();
    }

    let mut out = if positives.len() * 4 <= domain {
        // Rejection regime: at most a quarter of the domain is blocked and
        // at most a quarter is already drawn.
        let mut picked = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let x = rng.gen_range(0..domain) as u32;
            if positives.binary_search(&x).is_err() && picked.insert(x) {
                out.push(x);
            }
        }
        out
    } else {
        // Dense row: enumerate the complement and take a partial shuffle.
        let mut complement = Vec::with_capacity(free);
        let mut pos = positives.iter().peekable();
        for x in 0..domain as u32 {
            if pos.peek() == Some(&&x) {
                pos.next();
            } else {
                complement.push(x);
            }
        }
        for j in 0..count {
            let k = rng.gen_range(j..complement.len());
            complement.swap(j, k);
        }
        complement.truncate(count);
        complement
    };
    out.sort_unstable();
    out
}
