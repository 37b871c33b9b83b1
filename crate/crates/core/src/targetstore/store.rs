//! Binary store of top-k records.
//!
//! Little-endian layout:
//!
//! ```text
//! header   "DFTK" | version u16 | D u32 | k u16 | enc u8
//! record   id_len u16 | id bytes | T u32 | T*k * (class u16, logit f32)
//! trailer  count u32 | count * (fnv1a64(id) u64, record offset u64) | trailer offset u64 | "DFTE"
//! ```
//!
//! The trailer offset lets a reader find the index from the end of the file.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Mutex;

use super::TopKTargetRecord;
use crate::featpipe::fnv1a64;
use crate::{Error, Result};

pub const STORE_MAGIC: &[u8; 4] = b"DFTK";
pub const TRAILER_MAGIC: &[u8; 4] = b"DFTE";
pub const STORE_VERSION: u16 = 1;
pub const ENC_F32: u8 = 0;

const HEADER_LEN: u64 = 4 + 2 + 4 + 2 + 1;
const ENTRY_BYTES: usize = 2 + 4;

/// Bytes taken by the class/logit pairs of `frames` records of `k` entries.
pub fn record_payload_bytes(frames: usize, k: usize) -> usize {
    frames * k * ENTRY_BYTES
}

/// Single-writer store builder. Records are validated on append; the index
/// is written by [`TargetStoreWriter::finish`].
pub struct TargetStoreWriter<W: Write> {
    inner: W,
    num_classes: usize,
    k: usize,
    pos: u64,
    index: Vec<(u64, u64)>,
    ids: HashSet<String>,
}

impl TargetStoreWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, num_classes: usize, k: usize) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), num_classes, k)
    }
}

impl<W: Write> TargetStoreWriter<W> {
    /// `k` larger than `num_classes` is clamped, matching `select_topk`.
    pub fn new(mut inner: W, num_classes: usize, k: usize) -> Result<Self> {
        if num_classes == 0 || num_classes > u16::MAX as usize + 1 {
            return Err(Error::invalid(format!(
                "class count {num_classes} unsupported"
            )));
        }
        let k = k.min(num_classes);
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let k16 = u16::try_from(k).map_err(|_| Error::invalid("k exceeds u16"))?;
        inner.write_all(STORE_MAGIC)?;
        inner.write_all(&STORE_VERSION.to_le_bytes())?;
        inner.write_all(&(num_classes as u32).to_le_bytes())?;
        inner.write_all(&k16.to_le_bytes())?;
        inner.write_all(&[ENC_F32])?;
        Ok(TargetStoreWriter {
            inner,
            num_classes,
            k,
            pos: HEADER_LEN,
            index: Vec::new(),
            ids: HashSet::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn append(&mut self, utterance_id: &str, records: &[TopKTargetRecord]) -> Result<()> {
        if self.ids.contains(utterance_id) {
            return Err(Error::invalid(format!(
                "utterance {utterance_id:?} already stored"
            )));
        }
        let id_len = u16::try_from(utterance_id.len())
            .map_err(|_| Error::invalid("utterance id too long"))?;
        let frames = u32::try_from(records.len()).map_err(|_| Error::invalid("too many frames"))?;
        for r in records {
            if r.len() != self.k {
                return Err(Error::invalid(format!(
                    "record has {} entries, store k is {}",
                    r.len(),
                    self.k
                )));
            }
            r.validate(self.num_classes)?;
        }
        let mut buf = Vec::with_capacity(
            6 + utterance_id.len() + record_payload_bytes(records.len(), self.k),
        );
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(utterance_id.as_bytes());
        buf.extend_from_slice(&frames.to_le_bytes());
        for r in records {
            for &(i, v) in &r.entries {
                buf.extend_from_slice(&i.to_le_bytes());
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        self.inner.write_all(&buf)?;
        self.index
            .push((fnv1a64(utterance_id.as_bytes()), self.pos));
        self.ids.insert(utterance_id.to_string());
        self.pos += buf.len() as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        write_trailer(&mut self.inner, &self.index, self.pos)?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

fn write_trailer<W: Write>(w: &mut W, index: &[(u64, u64)], trailer_offset: u64) -> Result<()> {
    let count = u32::try_from(index.len()).map_err(|_| Error::invalid("too many utterances"))?;
    let mut buf = Vec::with_capacity(16 + 16 * index.len());
    buf.extend_from_slice(&count.to_le_bytes());
    for (h, off) in index {
        buf.extend_from_slice(&h.to_le_bytes());
        buf.extend_from_slice(&off.to_le_bytes());
    }
    buf.extend_from_slice(&trailer_offset.to_le_bytes());
    buf.extend_from_slice(TRAILER_MAGIC);
    w.write_all(&buf)?;
    Ok(())
}

/// Random-access reader. Lookups take `&self` and may run from several threads.
pub struct TargetStoreReader<R = File> {
    inner: Mutex<R>,
    num_classes: usize,
    k: usize,
    trailer_offset: u64,
    /// Record offsets in file order.
    entries: Vec<(u64, u64)>,
    by_hash: HashMap<u64, Vec<u64>>,
}

impl TargetStoreReader<File> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(File::open(path)?)
    }
}

impl<R: Read + Seek> TargetStoreReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let len = inner.seek(SeekFrom::End(0))?;
        if len < HEADER_LEN + 16 {
            return Err(Error::format("target store truncated"));
        }
        inner.seek(SeekFrom::Start(0))?;
        let mut header = [0u8; HEADER_LEN as usize];
        read_exact(&mut inner, &mut header)?;
        if &header[..4] != STORE_MAGIC {
            return Err(Error::format("not a target store (bad magic)"));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != STORE_VERSION {
            return Err(Error::format(format!(
                "unsupported store version {version}"
            )));
        }
        let num_classes = u32::from_le_bytes([header[6], header[7], header[8], header[9]]) as usize;
        let k = u16::from_le_bytes([header[10], header[11]]) as usize;
        if header[12] != ENC_F32 {
            return Err(Error::format(format!(
                "unknown value encoding {}",
                header[12]
            )));
        }
        if k == 0 || k > num_classes {
            return Err(Error::format(format!(
                "bad k {k} for {num_classes} classes"
            )));
        }

        let mut tail = [0u8; 12];
        inner.seek(SeekFrom::End(-12))?;
        read_exact(&mut inner, &mut tail)?;
        if &tail[8..] != TRAILER_MAGIC {
            return Err(Error::format("missing trailer (truncated store?)"));
        }
        let trailer_offset = u64::from_le_bytes(tail[..8].try_into().unwrap());
        if trailer_offset < HEADER_LEN || trailer_offset + 16 > len {
            return Err(Error::format("trailer offset out of range"));
        }
        inner.seek(SeekFrom::Start(trailer_offset))?;
        let mut count = [0u8; 4];
        read_exact(&mut inner, &mut count)?;
        let count = u32::from_le_bytes(count) as u64;
        if trailer_offset + 4 + 16 * count + 12 != len {
            return Err(Error::format("trailer size does not match file length"));
        }
        let mut raw = vec![0u8; 16 * count as usize];
        read_exact(&mut inner, &mut raw)?;
        let mut entries = Vec::with_capacity(count as usize);
        let mut by_hash: HashMap<u64, Vec<u64>> = HashMap::new();
        let mut prev: Option<u64> = None;
        for pair in raw.chunks_exact(16) {
            let h = u64::from_le_bytes(pair[..8].try_into().unwrap());
            let off = u64::from_le_bytes(pair[8..].try_into().unwrap());
            if off < HEADER_LEN || off >= trailer_offset || prev.is_some_and(|p| p >= off) {
                return Err(Error::format(
                    "index offsets must be strictly increasing and inside the body",
                ));
            }
            prev = Some(off);
            entries.push((h, off));
            by_hash.entry(h).or_default().push(off);
        }
        Ok(TargetStoreReader {
            inner: Mutex::new(inner),
            num_classes,
            k,
            trailer_offset,
            entries,
            by_hash,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn read_id_at(r: &mut R, off: u64) -> Result<String> {
        r.seek(SeekFrom::Start(off))?;
        let mut len = [0u8; 2];
        read_exact(r, &mut len)?;
        let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
        read_exact(r, &mut id)?;
        String::from_utf8(id).map_err(|_| Error::format("utterance id is not UTF-8"))
    }

    /// Utterance ids in file order.
    pub fn utterance_ids(&self) -> Result<Vec<String>> {
        let mut r = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        self.entries
            .iter()
            .map(|&(_, off)| Self::read_id_at(&mut r, off))
            .collect()
    }

    pub fn contains(&self, utterance_id: &str) -> Result<bool> {
        Ok(self.locate(utterance_id)?.is_some())
    }

    fn locate(&self, utterance_id: &str) -> Result<Option<u64>> {
        let Some(candidates) = self.by_hash.get(&fnv1a64(utterance_id.as_bytes())) else {
            return Ok(None);
        };
        let mut r = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        for &off in candidates {
            if Self::read_id_at(&mut r, off)? == utterance_id {
                return Ok(Some(off));
            }
        }
        Ok(None)
    }

    pub fn read(&self, utterance_id: &str) -> Result<Vec<TopKTargetRecord>> {
        let off = self
            .locate(utterance_id)?
            .ok_or_else(|| Error::NotFound(utterance_id.to_string()))?;
        let mut r = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        Self::read_id_at(&mut r, off)?;
        let mut frames = [0u8; 4];
        read_exact(&mut *r, &mut frames)?;
        let frames = u32::from_le_bytes(frames) as usize;
        let payload = record_payload_bytes(frames, self.k);
        if r.stream_position()? + payload as u64 > self.trailer_offset {
            return Err(Error::format("record runs past the end of the body"));
        }
        let mut raw = vec![0u8; payload];
        read_exact(&mut *r, &mut raw)?;
        let records = raw
            .chunks_exact(self.k * ENTRY_BYTES)
            .map(|frame| TopKTargetRecord {
                entries: frame
                    .chunks_exact(ENTRY_BYTES)
                    .map(|e| {
                        (
                            u16::from_le_bytes([e[0], e[1]]),
                            f32::from_le_bytes([e[2], e[3], e[4], e[5]]),
                        )
                    })
                    .collect(),
            })
            .collect::<Vec<_>>();
        for rec in &records {
            rec.validate(self.num_classes)
                .map_err(|e| Error::format(e.to_string()))?;
        }
        Ok(records)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format("target store truncated")
        } else {
            Error::Io(e)
        }
    })
}

/// Concatenates shard stores with equal `D` and `k` into one file, rebasing
/// each shard's index. Duplicate utterance ids are rejected.
pub fn merge_stores(inputs: &[impl AsRef<Path>], output: impl AsRef<Path>) -> Result<()> {
    let mut shape: Option<(usize, usize)> = None;
    let mut shards = Vec::with_capacity(inputs.len());
    let mut seen = HashSet::new();
    for path in inputs {
        let reader = TargetStoreReader::open(path)?;
        match shape {
            None => shape = Some((reader.num_classes, reader.k)),
            Some(s) if s != (reader.num_classes, reader.k) => {
                return Err(Error::invalid("cannot merge stores with different D or k"));
            }
            Some(_) => {}
        }
        for id in reader.utterance_ids()? {
            if !seen.insert(id.clone()) {
                return Err(Error::invalid(format!(
                    "utterance {id:?} appears in more than one shard"
                )));
            }
        }
        shards.push((path.as_ref().to_path_buf(), reader));
    }
    let (num_classes, k) = shape.ok_or_else(|| Error::invalid("no stores to merge"))?;

    let mut out = BufWriter::new(File::create(output)?);
    let mut writer = TargetStoreWriter::new(&mut out, num_classes, k)?;
    let mut pos = HEADER_LEN;
    let mut index = Vec::new();
    for (path, reader) in &shards {
        let body_len = reader.trailer_offset - HEADER_LEN;
        let mut f = File::open(path)?;
        f.seek(SeekFrom::Start(HEADER_LEN))?;
        std::io::copy(&mut (&mut f).take(body_len), &mut writer.inner)?;
        index.extend(
            reader
                .entries
                .iter()
                .map(|&(h, off)| (h, off - HEADER_LEN + pos)),
        );
        pos += body_len;
    }
    write_trailer(&mut writer.inner, &index, pos)?;
    out.flush()?;
    Ok(())
}
