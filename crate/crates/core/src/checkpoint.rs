//! Binary checkpoints.
//!
//! Layout (little-endian): magic `TDAECKPT`, `u32` version, `u64` n, m, k,
//! the hyperparameters, a presence flag for the user embedding, then every
//! tensor in [`ModelParams::tensors`] order as raw `f64` bits, row-major.
//! Reading back gives bit-identical parameters.

use std::path::Path;

use crate::dataset::ByteReader;
use crate::error::{Error, Result};
use crate::model::{Hyperparams, ModelParams};

const MAGIC: &[u8; 8] = b"TDAECKPT";
const VERSION: u32 = 1;

pub fn encode(params: &ModelParams, hp: &Hyperparams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [params.n_users(), params.n_items(), params.k()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for v in [hp.alpha, hp.beta, hp.q, hp.lambda_t, hp.lambda_c, hp.lr] {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    for v in [hp.k as u64, hp.epochs as u64, hp.seed, hp.top_n as u64] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(hp.user_embedding as u8);
    out.push(params.user_embedding.is_some() as u8);
    for (_, t) in params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(ModelParams, Hyperparams)> {
    let mut r = ByteReader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let (n, m, k) = (r.u64()? as usize, r.u64()? as usize, r.u64()? as usize);
    let mut real = || r.u64().map(f64::from_bits);
    let (alpha, beta, q, lambda_t, lambda_c, lr) = (real()?, real()?, real()?, real()?, real()?, real()?);
    let hp = Hyperparams {
        k: r.u64()? as usize,
        alpha,
        beta,
        q,
        lambda_t,
        lambda_c,
        lr,
        epochs: r.u64()? as usize,
        seed: r.u64()?,
        top_n: r.u64()? as usize,
        user_embedding: r.take(1)?[0] != 0,
    };
    let has_embedding = r.take(1)?[0] != 0;
    let rows = [m, n, m, n, if has_embedding { n } else { 0 }, 2, k, k]
        .iter()
        .try_fold(0usize, |acc, &r| acc.checked_add(r));
    let cells = rows
        .and_then(|r| r.checked_mul(k))
        .and_then(|c| c.checked_add(m.checked_add(n)?))
        .and_then(|c| c.checked_mul(8));
    if cells != Some(bytes.len() - r.pos) {
        return Err(Error::Format("checkpoint body does not match its dimensions".into()));
    }

    let mut params = ModelParams::init(n, m, k, has_embedding, 0);
    for (_, t) in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = f64::from_bits(r.u64()?);
        }
    }
    Ok((params, hp))
}

/// Writes via a temporary sibling file and a rename.
pub fn write(path: impl AsRef<Path>, params: &ModelParams, hp: &Hyperparams) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(params, hp)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<(ModelParams, Hyperparams)> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    decode(&bytes)
}
