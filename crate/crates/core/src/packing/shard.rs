//! Binary packed-shard format, little-endian:
//!
//! ```text
//! header:   magic "IMPK" | version u32 | seq_len u32 | vocab_size u32 | seed u64 | count u64
//! sequence: tokens [u32; L] | doc_ids [i32; L] | loss_mask [u8; ceil(L/8)] (LSB first)
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{PackedSequence, PAD_DOC};

pub const SHARD_MAGIC: &[u8; 4] = b"IMPK";
pub const SHARD_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShardHeader {
    pub seq_len: u32,
    pub vocab_size: u32,
    pub seed: u64,
}

fn io_err(e: std::io::Error) -> Error {
    Error::Shard(e.to_string())
}

pub fn write_shard<W: Write>(mut out: W, header: &ShardHeader, seqs: &[PackedSequence]) -> Result<()> {
    let l = header.seq_len as usize;
    let mut buf = Vec::with_capacity(32 + seqs.len() * (8 * l + l.div_ceil(8)));
    buf.extend_from_slice(SHARD_MAGIC);
    buf.extend_from_slice(&SHARD_VERSION.to_le_bytes());
    buf.extend_from_slice(&header.seq_len.to_le_bytes());
    buf.extend_from_slice(&header.vocab_size.to_le_bytes());
    buf.extend_from_slice(&header.seed.to_le_bytes());
    buf.extend_from_slice(&(seqs.len() as u64).to_le_bytes());
    for s in seqs {
        if s.tokens.len() != l {
            return Err(Error::Shard(format!(
                "sequence of length {} in shard of {l}",
                s.tokens.len()
            )));
        }
        s.tokens.iter().for_each(|t| buf.extend_from_slice(&t.to_le_bytes()));
        s.doc_ids.iter().for_each(|d| buf.extend_from_slice(&d.to_le_bytes()));
        let mut bits = vec![0u8; l.div_ceil(8)];
        for (i, _) in s.loss_mask.iter().enumerate().filter(|(_, m)| **m) {
            bits[i / 8] |= 1 << (i % 8);
        }
        buf.extend_from_slice(&bits);
    }
    out.write_all(&buf).map_err(io_err)
}

fn take<'a>(data: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if data.len() < n {
        return Err(Error::Shard("truncated shard".into()));
    }
    let (head, rest) = data.split_at(n);
    *data = rest;
    Ok(head)
}

fn u32_at(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4 bytes"))
}

pub fn read_shard<R: Read>(mut input: R) -> Result<(ShardHeader, Vec<PackedSequence>)> {
    let mut raw = Vec::new();
    input.read_to_end(&mut raw).map_err(io_err)?;
    let mut data = raw.as_slice();
    if take(&mut data, 4)? != SHARD_MAGIC {
        return Err(Error::Shard("bad magic".into()));
    }
    let version = u32_at(take(&mut data, 4)?);
    if version != SHARD_VERSION {
        return Err(Error::Shard(format!("unsupported version {version}")));
    }
    let seq_len = u32_at(take(&mut data, 4)?);
    let vocab_size = u32_at(take(&mut data, 4)?);
    let seed = u64::from_le_bytes(take(&mut data, 8)?.try_into().expect("8 bytes"));
    let count = u64::from_le_bytes(take(&mut data, 8)?.try_into().expect("8 bytes"));
    let l = seq_len as usize;
    let mut seqs = Vec::new();
    for _ in 0..count {
        let tokens: Vec<u32> = take(&mut data, 4 * l)?.chunks_exact(4).map(u32_at).collect();
        let doc_ids: Vec<i32> = take(&mut data, 4 * l)?
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let bits = take(&mut data, l.div_ceil(8))?;
        let loss_mask = (0..l).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        let pad_count = doc_ids.iter().filter(|d| **d == PAD_DOC).count();
        let seq = PackedSequence {
            tokens,
            doc_ids,
            loss_mask,
            pad_count,
        };
        seq.validate()?;
        seqs.push(seq);
    }
    if !data.is_empty() {
        return Err(Error::Shard(format!("{} trailing bytes", data.len())));
    }
    Ok((
        ShardHeader {
            seq_len,
            vocab_size,
            seed,
        },
        seqs,
    ))
}
