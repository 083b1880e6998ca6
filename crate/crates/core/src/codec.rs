//! Binary envelope shared by index files and embedding bundles.
//!
//! ```text
//! offset  size  field
//! 0       8     magic
//! 8       4     format version (u32)
//! 12      4     dimension D (u32)
//! 16      4     section count S (u32)
//! 20      28*S  section table: tag u32, count u64, offset u64, length u64
//! ...           section bodies, in table order
//! end-4   4     CRC32 (IEEE) of every preceding byte
//! ```
//!
//! All integers and floats are little-endian. Offsets are absolute.

use std::path::Path;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;
const TABLE_ENTRY_LEN: usize = 28;

#[derive(Debug, Clone)]
pub struct Section {
    pub tag: u32,
    pub count: u64,
    pub body: Vec<u8>,
}

/// Serialized file contents.
pub fn seal(magic: &[u8; 8], dim: u32, sections: &[Section]) -> Vec<u8> {
    let table_len = TABLE_ENTRY_LEN * sections.len();
    let body_len: usize = sections.iter().map(|s| s.body.len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + table_len + body_len + 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    let mut offset = (HEADER_LEN + table_len) as u64;
    for s in sections {
        out.extend_from_slice(&s.tag.to_le_bytes());
        out.extend_from_slice(&s.count.to_le_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(s.body.len() as u64).to_le_bytes());
        offset += s.body.len() as u64;
    }
    for s in sections {
        out.extend_from_slice(&s.body);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// A verified file: header checked, checksum checked, section table parsed.
#[derive(Debug)]
pub struct Opened<'a> {
    pub dim: u32,
    sections: Vec<(u32, u64, &'a [u8])>,
}

impl<'a> Opened<'a> {
    /// Body and element count of the section tagged `tag`.
    pub fn section(&self, tag: u32) -> Result<(u64, &'a [u8])> {
        self.sections
            .iter()
            .find(|(t, _, _)| *t == tag)
            .map(|&(_, c, b)| (c, b))
            .ok_or_else(|| Error::Parse(format!("missing section {tag:#x}")))
    }
}

pub fn open<'a>(magic: &[u8; 8], bytes: &'a [u8]) -> Result<Opened<'a>> {
    if bytes.len() < 8 || &bytes[..8] != magic {
        return Err(Error::FormatVersionMismatch(format!(
            "bad magic, expected {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::ChecksumMismatch("file truncated inside the header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch(format!(
            "version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let (payload, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(Error::ChecksumMismatch(format!(
            "stored {stored:#010x}, computed {actual:#010x}"
        )));
    }
    let mut r = Reader::new(&payload[12..]);
    let dim = r.u32()?;
    let n = r.u32()? as usize;
    let mut sections = Vec::with_capacity(n);
    for _ in 0..n {
        let tag = r.u32()?;
        let count = r.u64()?;
        let offset = r.u64()? as usize;
        let len = r.u64()? as usize;
        let body = offset
            .checked_add(len)
            .and_then(|end| payload.get(offset..end))
            .ok_or_else(|| Error::Parse(format!("section {tag:#x} lies outside the file")))?;
        sections.push((tag, count, body));
    }
    Ok(Opened { dim, sections })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn with_capacity(n: usize) -> Self {
        Self { buf: Vec::with_capacity(n) }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, vs: &[f32]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Parse(format!(
                "unexpected end of data: wanted {n} bytes, {} left",
                self.buf.len()
            )));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Parse("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}
