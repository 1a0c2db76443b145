//! Rating/trust ingestion, implicit-feedback preprocessing and fold splits.
//!
//! Raw files hold one record per line with whitespace- or comma-separated
//! fields: `user item score` for ratings and `truster trustee` for trust.
//! Gzip-compressed files are detected by their magic bytes. Blank lines and
//! lines starting with `#` or `%` are skipped.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::sparse::SparseInteractions;

/// Lowest score kept as an implicit positive.
pub const POSITIVE_THRESHOLD: u8 = 4;
pub const DEFAULT_MIN_COUNT: usize = 5;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRating {
    pub user: String,
    pub item: String,
    pub score: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawTrust {
    pub truster: String,
    pub trustee: String,
}

/// Reads both raw files.
pub fn load_raw(
    ratings_path: impl AsRef<Path>,
    trusts_path: impl AsRef<Path>,
) -> Result<(Vec<RawRating>, Vec<RawTrust>)> {
    // Open both before parsing so a missing trust file fails fast.
    let ratings_reader = open_maybe_gz(ratings_path.as_ref())?;
    let trusts_reader = open_maybe_gz(trusts_path.as_ref())?;
    let ratings = parse_ratings(ratings_reader, ratings_path.as_ref())?;
    let trusts = parse_trusts(trusts_reader, trusts_path.as_ref())?;
    Ok((ratings, trusts))
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 2];
    let mut read = 0;
    while read < 2 {
        match file.read(&mut magic[read..]).map_err(|e| Error::io(path, e))? {
            0 => break,
            k => read += k,
        }
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if read == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

fn fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
}

fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#') || t.starts_with('%')
}

fn parse_score(field: &str) -> Option<i64> {
    if let Ok(v) = field.parse::<i64>() {
        return Some(v);
    }
    // Some dumps write scores as "4.0".
    let v = field.parse::<f64>().ok()?;
    (v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15).then_some(v as i64)
}

/// Parses rating records. Extra columns after the score are ignored.
pub fn parse_ratings(reader: impl BufRead, path: &Path) -> Result<Vec<RawRating>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if is_skippable(&line) {
            continue;
        }
        let mut it = fields(&line);
        let (Some(user), Some(item), Some(score)) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: "expected `user item score`".into(),
            });
        };
        let score = parse_score(score).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: format!("score `{score}` is not an integer"),
        })?;
        if !(1..=5).contains(&score) {
            return Err(Error::ScoreOutOfRange {
                path: path.to_path_buf(),
                line: lineno,
                score,
            });
        }
        out.push(RawRating {
            user: user.to_string(),
            item: item.to_string(),
            score: score as u8,
        });
    }
    Ok(out)
}

/// Parses trust records. An optional third column holding a non-positive
/// value marks a distrust edge, which is skipped.
pub fn parse_trusts(reader: impl BufRead, path: &Path) -> Result<Vec<RawTrust>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if is_skippable(&line) {
            continue;
        }
        let mut it = fields(&line);
        let (Some(truster), Some(trustee)) = (it.next(), it.next()) else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: "expected `truster trustee`".into(),
            });
        };
        if let Some(value) = it.next() {
            match value.parse::<f64>() {
                Ok(v) if v <= 0.0 => continue,
                Ok(_) => {}
                Err(_) => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno,
                        message: format!("trust value `{value}` is not numeric"),
                    })
                }
            }
        }
        out.push(RawTrust {
            truster: truster.to_string(),
            trustee: trustee.to_string(),
        });
    }
    Ok(out)
}

/// Binary implicit-feedback dataset with dense indices.
///
/// `ratings` and `trusts` are sorted and duplicate-free. Dense indices follow
/// the natural order of the external ids (numeric ids numerically, others
/// lexicographically), so the result does not depend on file order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub n: usize,
    pub m: usize,
    pub ratings: Vec<(u32, u32)>,
    pub trusts: Vec<(u32, u32)>,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    user_index: HashMap<String, u32>,
    item_index: HashMap<String, u32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
    pub trusts: usize,
    pub rating_density: f64,
    pub trust_density: f64,
}

impl Dataset {
    /// Builds a dataset from already-dense data. Pairs are sorted and deduplicated.
    pub fn from_parts(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        mut ratings: Vec<(u32, u32)>,
        mut trusts: Vec<(u32, u32)>,
    ) -> Result<Self> {
        let n = user_ids.len();
        let m = item_ids.len();
        for &(u, i) in &ratings {
            check_bound(u as usize, n)?;
            check_bound(i as usize, m)?;
        }
        for &(u, v) in &trusts {
            check_bound(u as usize, n)?;
            check_bound(v as usize, n)?;
        }
        ratings.sort_unstable();
        ratings.dedup();
        trusts.retain(|&(u, v)| u != v);
        trusts.sort_unstable();
        trusts.dedup();
        let user_index = index_map(&user_ids)?;
        let item_index = index_map(&item_ids)?;
        Ok(Dataset {
            n,
            m,
            ratings,
            trusts,
            user_ids,
            item_ids,
            user_index,
            item_index,
        })
    }

    pub fn user_index(&self, external: &str) -> Option<u32> {
        self.user_index.get(external).copied()
    }

    pub fn item_index(&self, external: &str) -> Option<u32> {
        self.item_index.get(external).copied()
    }

    pub fn stats(&self) -> DatasetStats {
        let cells = |a: usize, b: usize| (a as f64) * (b as f64);
        DatasetStats {
            users: self.n,
            items: self.m,
            ratings: self.ratings.len(),
            trusts: self.trusts.len(),
            rating_density: self.ratings.len() as f64 / cells(self.n, self.m).max(1.0),
            trust_density: self.trusts.len() as f64 / cells(self.n, self.n).max(1.0),
        }
    }

    /// The dataset as raw records (every positive written with score 5).
    pub fn to_raw(&self) -> (Vec<RawRating>, Vec<RawTrust>) {
        let ratings = self
            .ratings
            .iter()
            .map(|&(u, i)| RawRating {
                user: self.user_ids[u as usize].clone(),
                item: self.item_ids[i as usize].clone(),
                score: 5,
            })
            .collect();
        let trusts = self
            .trusts
            .iter()
            .map(|&(u, v)| RawTrust {
                truster: self.user_ids[u as usize].clone(),
                trustee: self.user_ids[v as usize].clone(),
            })
            .collect();
        (ratings, trusts)
    }

    /// Range of `ratings` belonging to user `u`.
    fn user_range(&self, u: u32) -> std::ops::Range<usize> {
        let lo = self.ratings.partition_point(|&(x, _)| x < u);
        let hi = self.ratings.partition_point(|&(x, _)| x <= u);
        lo..hi
    }
}

fn check_bound(index: usize, bound: usize) -> Result<()> {
    if index < bound {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { index, bound })
    }
}

fn index_map(ids: &[String]) -> Result<HashMap<String, u32>> {
    let mut map = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if map.insert(id.clone(), i as u32).is_some() {
            return Err(Error::Format(format!("duplicate external id `{id}`")));
        }
    }
    Ok(map)
}

fn natural_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Keeps ratings scoring at least 4 as implicit positives, then repeatedly
/// drops users and items with fewer than `min_count` positives until no more
/// are removed. Self-trust and duplicate trust edges are dropped, and trust
/// edges are restricted to surviving users.
pub fn binarize_and_filter(
    raw: &[RawRating],
    trusts: &[RawTrust],
    min_count: usize,
) -> Result<Dataset> {
    if min_count == 0 {
        return Err(Error::InvalidConfig("min_count must be at least 1".into()));
    }

    let mut users: Vec<&str> = Vec::new();
    let mut items: Vec<&str> = Vec::new();
    let mut user_tmp: HashMap<&str, u32> = HashMap::new();
    let mut item_tmp: HashMap<&str, u32> = HashMap::new();
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for r in raw.iter().filter(|r| r.score >= POSITIVE_THRESHOLD) {
        let u = *user_tmp.entry(&r.user).or_insert_with(|| {
            users.push(&r.user);
            (users.len() - 1) as u32
        });
        let i = *item_tmp.entry(&r.item).or_insert_with(|| {
            items.push(&r.item);
            (items.len() - 1) as u32
        });
        pairs.push((u, i));
    }
    pairs.sort_unstable();
    pairs.dedup();

    loop {
        let mut user_count = vec![0usize; users.len()];
        let mut item_count = vec![0usize; items.len()];
        for &(u, i) in &pairs {
            user_count[u as usize] += 1;
            item_count[i as usize] += 1;
        }
        let before = pairs.len();
        pairs.retain(|&(u, i)| {
            user_count[u as usize] >= min_count && item_count[i as usize] >= min_count
        });
        if pairs.len() == before {
            break;
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let reindex = |ids: &[&str], alive: Vec<bool>| -> (Vec<String>, Vec<Option<u32>>) {
        let mut kept: Vec<(usize, &str)> = ids
            .iter()
            .enumerate()
            .filter(|(i, _)| alive[*i])
            .map(|(i, s)| (i, *s))
            .collect();
        kept.sort_by(|a, b| natural_order(a.1, b.1));
        let mut remap = vec![None; ids.len()];
        let names = kept
            .iter()
            .enumerate()
            .map(|(dense, &(tmp, name))| {
                remap[tmp] = Some(dense as u32);
                name.to_string()
            })
            .collect();
        (names, remap)
    };
    let mut user_alive = vec![false; users.len()];
    let mut item_alive = vec![false; items.len()];
    for &(u, i) in &pairs {
        user_alive[u as usize] = true;
        item_alive[i as usize] = true;
    }
    let (user_ids, user_remap) = reindex(&users, user_alive);
    let (item_ids, item_remap) = reindex(&items, item_alive);

    let ratings: Vec<(u32, u32)> = pairs
        .iter()
        .map(|&(u, i)| {
            (
                user_remap[u as usize].expect("surviving user"),
                item_remap[i as usize].expect("surviving item"),
            )
        })
        .collect();

    let dense_user = |id: &str| user_tmp.get(id).and_then(|&t| user_remap[t as usize]);
    let trust_pairs: Vec<(u32, u32)> = trusts
        .iter()
        .filter_map(|t| Some((dense_user(&t.truster)?, dense_user(&t.trustee)?)))
        .collect();

    Dataset::from_parts(user_ids, item_ids, ratings, trust_pairs)
}

/// Fold assignment of every positive in `Dataset::ratings` (same order).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub n_folds: usize,
    pub fold_of: Vec<u8>,
}

impl FoldSplit {
    pub fn fold(&self, rating_index: usize) -> usize {
        self.fold_of[rating_index] as usize
    }
}

/// Per-user stratified split: each user's positives are shuffled with a
/// stream derived from `(seed, user)` and dealt round-robin starting at fold 0.
pub fn split_folds(ds: &Dataset, n_folds: usize, seed: u64) -> Result<FoldSplit> {
    if !(2..=u8::MAX as usize).contains(&n_folds) {
        return Err(Error::InvalidConfig(format!(
            "number of folds must be in 2..=255, got {n_folds}"
        )));
    }
    let mut fold_of = vec![0u8; ds.ratings.len()];
    for u in 0..ds.n as u32 {
        let range = ds.user_range(u);
        if range.len() < n_folds {
            return Err(Error::TooFewPositives {
                user: u as usize,
                count: range.len(),
                folds: n_folds,
            });
        }
        let mut order: Vec<usize> = range.collect();
        let mut stream = rng::stream(seed, Purpose::FoldSplit, &[u as u64]);
        order.shuffle(&mut stream);
        for (pos, idx) in order.into_iter().enumerate() {
            fold_of[idx] = (pos % n_folds) as u8;
        }
    }
    Ok(FoldSplit { n_folds, fold_of })
}

/// Train holds every positive outside `test_fold` plus all trust edges; test
/// holds the held-out positives and no trust edges.
pub fn materialize_split(
    ds: &Dataset,
    split: &FoldSplit,
    test_fold: usize,
) -> Result<(SparseInteractions, SparseInteractions)> {
    if test_fold >= split.n_folds {
        return Err(Error::IndexOutOfRange {
            index: test_fold,
            bound: split.n_folds,
        });
    }
    if split.fold_of.len() != ds.ratings.len() {
        return Err(Error::Format("fold split does not match dataset".into()));
    }
    let (test, train): (Vec<_>, Vec<_>) = ds
        .ratings
        .iter()
        .enumerate()
        .partition(|(idx, _)| split.fold(*idx) == test_fold);
    let train: Vec<(u32, u32)> = train.into_iter().map(|(_, &p)| p).collect();
    let test: Vec<(u32, u32)> = test.into_iter().map(|(_, &p)| p).collect();
    Ok((
        SparseInteractions::from_pairs(ds.n, ds.m, &train, &ds.trusts)?,
        SparseInteractions::from_pairs(ds.n, ds.m, &test, &[])?,
    ))
}

const CACHE_MAGIC: &[u8; 8] = b"TDAEDSET";
const CACHE_VERSION: u32 = 1;

/// Canonical binary encoding: magic, version, counts, id strings, then
/// little-endian `u32` index pairs.
pub fn encode_cache(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    for len in [ds.n, ds.m, ds.ratings.len(), ds.trusts.len()] {
        out.extend_from_slice(&(len as u64).to_le_bytes());
    }
    for id in ds.user_ids.iter().chain(&ds.item_ids) {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    for &(a, b) in ds.ratings.iter().chain(&ds.trusts) {
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}

pub fn decode_cache(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader { bytes, pos: 0 };
    if r.take(8)? != CACHE_MAGIC {
        return Err(Error::Format("not a dataset cache".into()));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    let n = r.u64()? as usize;
    let m = r.u64()? as usize;
    let n_ratings = r.u64()? as usize;
    let n_trusts = r.u64()? as usize;
    let string = |r: &mut ByteReader| -> Result<String> {
        let len = r.u32()? as usize;
        String::from_utf8(r.take(len)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    };
    let user_ids = (0..n).map(|_| string(&mut r)).collect::<Result<Vec<_>>>()?;
    let item_ids = (0..m).map(|_| string(&mut r)).collect::<Result<Vec<_>>>()?;
    let pairs = |count: usize, r: &mut ByteReader| -> Result<Vec<(u32, u32)>> {
        (0..count).map(|_| Ok((r.u32()?, r.u32()?))).collect()
    };
    let ratings = pairs(n_ratings, &mut r)?;
    let trusts = pairs(n_trusts, &mut r)?;
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes in dataset cache".into()));
    }
    Dataset::from_parts(user_ids, item_ids, ratings, trusts)
}

pub fn write_cache(ds: &Dataset, path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let bytes = encode_cache(ds);
    std::fs::write(path.as_ref(), &bytes).map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(bytes)
}

/// Reads a cache, returning the dataset and the raw bytes it was decoded from.
pub fn read_cache(path: impl AsRef<Path>) -> Result<(Dataset, Vec<u8>)> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    Ok((decode_cache(&bytes)?, bytes))
}

/// SHA-256 over `"blob <len>\0" ++ bytes`, hex encoded (git object layout).
pub fn content_hash(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub(crate) struct ByteReader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
