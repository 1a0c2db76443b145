//! Planted-community synthetic data.
//!
//! Users are split into equal communities. Community `c` likes the items of
//! block `c` (each with probability `p_rating`) and trusts its own members
//! (each ordered pair with probability `p_trust`). Items past the last block
//! are never liked. A few low-score ratings per user are added to the raw
//! output so that binarization has something to discard.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::{Dataset, RawRating, RawTrust};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub communities: usize,
    pub users_per_community: usize,
    pub items: usize,
    pub block: usize,
    pub p_rating: f64,
    pub p_trust: f64,
    /// Every user ends up with at least this many positives.
    pub min_positives: usize,
    pub noise_per_user: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            communities: 4,
            users_per_community: 50,
            items: 300,
            block: 60,
            p_rating: 0.3,
            p_trust: 0.1,
            min_positives: 5,
            noise_per_user: 5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    /// All items kept, including never-liked ones.
    pub dataset: Dataset,
    pub community: Vec<usize>,
    pub raw_ratings: Vec<RawRating>,
    pub raw_trusts: Vec<RawTrust>,
}

impl SynthConfig {
    pub fn n_users(&self) -> usize {
        self.communities * self.users_per_community
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synthetic: {m}")));
        if self.communities == 0 || self.users_per_community == 0 {
            return bad("need at least one user");
        }
        if self.block == 0 || self.communities * self.block > self.items {
            return bad("blocks must fit inside the item range");
        }
        if self.min_positives > self.block {
            return bad("min_positives exceeds the block size");
        }
        if !(0.0..=1.0).contains(&self.p_rating) || !(0.0..=1.0).contains(&self.p_trust) {
            return bad("probabilities must be in [0, 1]");
        }
        Ok(())
    }
}

pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<Synthetic> {
    cfg.validate()?;
    let n = cfg.n_users();
    let community: Vec<usize> = (0..n).map(|u| u / cfg.users_per_community).collect();
    let mut ratings = Vec::new();
    let mut trusts = Vec::new();
    let mut raw_ratings = Vec::new();

    for u in 0..n {
        let c = community[u];
        let mut r = rng::stream(seed, Purpose::Synthetic, &[u as u64]);
        let block: Vec<u32> = (c * cfg.block..(c + 1) * cfg.block).map(|i| i as u32).collect();
        let mut liked: Vec<u32> = block.iter().copied().filter(|_| r.gen_bool(cfg.p_rating)).collect();
        if liked.len() < cfg.min_positives {
            let mut rest: Vec<u32> = block.iter().copied().filter(|i| !liked.contains(i)).collect();
            rest.shuffle(&mut r);
            liked.extend(rest.into_iter().take(cfg.min_positives - liked.len()));
            liked.sort_unstable();
        }
        for &i in &liked {
            ratings.push((u as u32, i));
            raw_ratings.push(RawRating {
                user: u.to_string(),
                item: i.to_string(),
                score: r.gen_range(4..=5),
            });
        }
        let mut noisy: Vec<u32> = Vec::new();
        while noisy.len() < cfg.noise_per_user.min(cfg.items - liked.len()) {
            let i = r.gen_range(0..cfg.items) as u32;
            if liked.binary_search(&i).is_err() && !noisy.contains(&i) {
                noisy.push(i);
                raw_ratings.push(RawRating {
                    user: u.to_string(),
                    item: i.to_string(),
                    score: r.gen_range(1..=3),
                });
            }
        }
        let members = c * cfg.users_per_community..(c + 1) * cfg.users_per_community;
        for v in members {
            if v != u && r.gen_bool(cfg.p_trust) {
                trusts.push((u as u32, v as u32));
            }
        }
    }

    let raw_trusts = trusts
        .iter()
        .map(|&(u, v)| RawTrust {
            truster: u.to_string(),
            trustee: v.to_string(),
        })
        .collect();
    let dataset = Dataset::from_parts(
        (0..n).map(|u| u.to_string()).collect(),
        (0..cfg.items).map(|i| i.to_string()).collect(),
        ratings,
        trusts,
    )?;
    Ok(Synthetic {
        dataset,
        community,
        raw_ratings,
        raw_trusts,
    })
}

/// Writes `ratings.txt` (`user item score`) and `trusts.txt` (`truster trustee`).
pub fn write_raw(s: &Synthetic, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: &mut dyn FnMut(&mut Vec<u8>) -> std::io::Result<()>| -> Result<()> {
        let path = dir.join(name);
        let mut buf = Vec::new();
        body(&mut buf).map_err(|e| Error::io(&path, e))?;
        std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))
    };
    write("ratings.txt", &mut |w| {
        for r in &s.raw_ratings {
            writeln!(w, "{} {} {}", r.user, r.item, r.score)?;
        }
        Ok(())
    })?;
    write("trusts.txt", &mut |w| {
        for t in &s.raw_trusts {
            writeln!(w, "{} {}", t.truster, t.trustee)?;
        }
        Ok(())
    })
}
