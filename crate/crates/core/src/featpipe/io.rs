//! Per-shard feature files.
//!
//! Little-endian layout: magic `DFFT`, version u16, mel_bins u16, stack u8,
//! then records until end of file: id length u16, id bytes, offset u8,
//! frame count u32, frames as `T x (stack * mel_bins)` f32.

use std::io::{Read, Write};

use super::FeatureSequence;
use crate::nncore::Tensor;
use crate::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"DFFT";
pub const FEATURE_VERSION: u16 = 1;

pub struct FeatureFileWriter<W: Write> {
    inner: W,
    mel_bins: u16,
    stack: u8,
}

impl<W: Write> FeatureFileWriter<W> {
    pub fn new(mut inner: W, mel_bins: usize, stack: usize) -> Result<Self> {
        let mel_bins =
            u16::try_from(mel_bins).map_err(|_| Error::invalid("mel_bins exceeds u16"))?;
        let stack = u8::try_from(stack).map_err(|_| Error::invalid("stack exceeds u8"))?;
        if mel_bins == 0 || stack == 0 {
            return Err(Error::invalid("mel_bins and stack must be positive"));
        }
        inner.write_all(FEATURE_MAGIC)?;
        inner.write_all(&FEATURE_VERSION.to_le_bytes())?;
        inner.write_all(&mel_bins.to_le_bytes())?;
        inner.write_all(&[stack])?;
        Ok(FeatureFileWriter {
            inner,
            mel_bins,
            stack,
        })
    }

    pub fn write(&mut self, seq: &FeatureSequence) -> Result<()> {
        let dim = self.mel_bins as usize * self.stack as usize;
        if seq.dim() != dim && seq.num_frames() > 0 {
            return Err(Error::shape(format!(
                "sequence dim {} but file holds {dim}",
                seq.dim()
            )));
        }
        if seq.offset >= self.stack {
            return Err(Error::invalid(format!(
                "offset {} out of range",
                seq.offset
            )));
        }
        let id = seq.utterance_id.as_bytes();
        let id_len =
            u16::try_from(id.len()).map_err(|_| Error::invalid("utterance id too long"))?;
        let frames =
            u32::try_from(seq.num_frames()).map_err(|_| Error::invalid("too many frames"))?;
        let mut buf = Vec::with_capacity(7 + id.len() + 4 * seq.frames.len());
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(id);
        buf.push(seq.offset);
        buf.extend_from_slice(&frames.to_le_bytes());
        for v in seq.frames.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.inner.write_all(&buf)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub mel_bins: usize,
    pub stack: usize,
    pub sequences: Vec<FeatureSequence>,
}

pub fn read_feature_file<R: Read>(mut r: R) -> Result<FeatureFile> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(4)? != FEATURE_MAGIC {
        return Err(Error::format("not a feature file (bad magic)"));
    }
    let version = cur.u16()?;
    if version != FEATURE_VERSION {
        return Err(Error::format(format!(
            "unsupported feature file version {version}"
        )));
    }
    let mel_bins = cur.u16()? as usize;
    let stack = cur.take(1)?[0] as usize;
    let dim = mel_bins * stack;
    let mut sequences = Vec::new();
    while cur.pos < bytes.len() {
        let id_len = cur.u16()? as usize;
        let id = std::str::from_utf8(cur.take(id_len)?)
            .map_err(|_| Error::format("utterance id is not UTF-8"))?
            .to_string();
        let offset = cur.take(1)?[0];
        let frames = cur.u32()? as usize;
        let raw = cur.take(frames * dim * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        sequences.push(FeatureSequence {
            utterance_id: id,
            offset,
            frames: Tensor::from_vec(vec![frames, dim], data)?,
            normalized: true,
        });
    }
    Ok(FeatureFile {
        mel_bins,
        stack,
        sequences,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("feature file truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
