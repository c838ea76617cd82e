//! Versioned little-endian container holding text metadata and named tensors.
//!
//! ```text
//! magic      8 bytes  "ROTUNRL\0"
//! version    u32      FORMAT_VERSION
//! kind       u32      1 = checkpoint, 2 = dataset
//! meta_len   u64      length of the metadata block
//! meta       UTF-8    "key=value" lines
//! count      u32      number of entries
//! entry      name_len u32, name bytes, dtype u8 (0 = f64, 1 = u8),
//!            rank u32, rank × u64 extents, payload
//! ```
//!
//! Extents may be zero (an empty dataset). Every length is checked against
//! the bytes that remain before anything is allocated.

use std::collections::BTreeMap;

use crate::error::FormatError;

pub const MAGIC: [u8; 8] = *b"ROTUNRL\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Checkpoint = 1,
    Dataset = 2,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F64(Vec<f64>),
    U8(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: Kind,
    pub meta: BTreeMap<String, String>,
    pub entries: Vec<Entry>,
}

/// Reasons a container fails to decode before its content is inspected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeError {
    Version(u32),
    Format(FormatError),
}

impl From<FormatError> for DecodeError {
    fn from(e: FormatError) -> Self {
        DecodeError::Format(e)
    }
}

impl Container {
    pub fn new(kind: Kind) -> Self {
        Container {
            kind,
            meta: BTreeMap::new(),
            entries: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn push_f64(&mut self, name: &str, shape: &[usize], data: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "entry {name}");
        self.entries.push(Entry {
            name: name.to_string(),
            shape: shape.to_vec(),
            payload: Payload::F64(data),
        });
    }

    pub fn push_u8(&mut self, name: &str, shape: &[usize], data: Vec<u8>) {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "entry {name}");
        self.entries.push(Entry {
            name: name.to_string(),
            shape: shape.to_vec(),
            payload: Payload::U8(data),
        });
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.kind as u32).to_le_bytes());
        let mut meta = String::new();
        for (k, v) in &self.meta {
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(match e.payload {
                Payload::F64(_) => 0,
                Payload::U8(_) => 1,
            });
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &e.payload {
                Payload::F64(v) => {
                    out.reserve(v.len() * 8);
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Payload::U8(v) => out.extend_from_slice(v),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Container, DecodeError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != MAGIC {
            return Err(FormatError::new(0, "not a rotunroll container (bad magic)").into());
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(DecodeError::Version(version));
        }
        let kind_at = r.pos;
        let kind = match r.u32("kind")? {
            1 => Kind::Checkpoint,
            2 => Kind::Dataset,
            k => return Err(FormatError::new(kind_at as u64, format!("unknown container kind {k}")).into()),
        };
        let meta_at = r.pos;
        let meta_len = r.u64("metadata length")?;
        let meta_bytes = r.take_u64(meta_len, "metadata")?;
        let text = std::str::from_utf8(meta_bytes)
            .map_err(|e| FormatError::new((meta_at + 8 + e.valid_up_to()) as u64, "metadata is not UTF-8"))?;
        let mut meta = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| FormatError::new(meta_at as u64, format!("metadata line without '=': {line:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let count = r.u32("entry count")?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let name_len = r.u32("name length")?;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take_u64(u64::from(name_len), "entry name")?)
                .map_err(|_| FormatError::new(name_at as u64, "entry name is not UTF-8"))?
                .to_string();
            let dtype_at = r.pos;
            let dtype = r.take(1, "dtype")?[0];
            let elem = match dtype {
                0 => 8u64,
                1 => 1,
                d => return Err(FormatError::new(dtype_at as u64, format!("unknown dtype {d} in {name}")).into()),
            };
            let rank_at = r.pos;
            let rank = r.u32("rank")?;
            if rank > 8 {
                return Err(FormatError::new(rank_at as u64, format!("rank {rank} of {name} exceeds 8")).into());
            }
            let mut shape = Vec::with_capacity(rank as usize);
            let mut total: u64 = 1;
            for _ in 0..rank {
                let at = r.pos;
                let d = r.u64("extent")?;
                total = total
                    .checked_mul(d)
                    .ok_or_else(|| FormatError::new(at as u64, format!("shape of {name} overflows")))?;
                shape.push(usize::try_from(d).map_err(|_| FormatError::new(at as u64, "extent too large"))?);
            }
            let payload_at = r.pos;
            let bytes_needed = total
                .checked_mul(elem)
                .ok_or_else(|| FormatError::new(payload_at as u64, format!("payload of {name} overflows")))?;
            if bytes_needed > r.remaining() as u64 {
                return Err(FormatError::new(
                    payload_at as u64,
                    format!(
                        "{name} {shape:?} needs {bytes_needed} payload bytes, {} remain",
                        r.remaining()
                    ),
                )
                .into());
            }
            let raw = r.take_u64(bytes_needed, "payload")?;
            let payload = if dtype == 0 {
                Payload::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                )
            } else {
                Payload::U8(raw.to_vec())
            };
            entries.push(Entry { name, shape, payload });
        }
        if r.remaining() != 0 {
            return Err(FormatError::new(r.pos as u64, format!("{} trailing bytes", r.remaining())).into());
        }
        Ok(Container { kind, meta, entries })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::new(
                self.pos as u64,
                format!(
                    "file ends inside {what} ({n} bytes needed, {} remain)",
                    self.remaining()
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn take_u64(&mut self, n: u64, what: &str) -> Result<&'a [u8], FormatError> {
        match usize::try_from(n) {
            Ok(n) => self.take(n, what),
            Err(_) => Err(FormatError::new(
                self.pos as u64,
                format!("{what} length {n} too large"),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}
