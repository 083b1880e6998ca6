//! Index file I/O.
//!
//! Sections (see [`crate::codec`] for the envelope): `RECORDS` raw f32
//! vectors, `NORMS` f32 per record, `CENTROIDS` f32 rows, `ASSIGN` u32 list
//! id per record, `KEYS` one 20-byte [`PatchKey`] per record.

use std::path::Path;

use super::{PatchKey, Region, VectorIndex, GRID_SIZES};
use crate::codec::{self, Reader, Section, Writer};
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 8] = b"LIGINDEX";

const RECORDS: u32 = 1;
const NORMS: u32 = 2;
const CENTROIDS: u32 = 3;
const ASSIGN: u32 = 4;
const KEYS: u32 = 5;

pub(crate) const KEY_LEN: usize = 20;

/// `image_id u64 | grid u8 (0 = bbox) | row u8 | col u8 | 0u8 | bbox_id u64`
pub(crate) fn encode_key(w: &mut Writer, key: &PatchKey) {
    w.u64(key.image_id);
    match key.region {
        Region::Grid { size, row, col } => {
            w.bytes(&[size, row, col, 0]);
            w.u64(0);
        }
        Region::BBox(b) => {
            w.bytes(&[0, 0, 0, 0]);
            w.u64(b);
        }
    }
}

pub(crate) fn decode_key(r: &mut Reader<'_>) -> Result<PatchKey> {
    let image_id = r.u64()?;
    let (size, row, col, _) = (r.u8()?, r.u8()?, r.u8()?, r.u8()?);
    let bbox = r.u64()?;
    if size == 0 {
        return Ok(PatchKey::bbox(image_id, bbox));
    }
    if !GRID_SIZES.contains(&size) {
        return Err(Error::Parse(format!("grid size {size} in patch key")));
    }
    PatchKey::grid(image_id, size, row, col).map_err(|e| Error::Parse(e.to_string()))
}

impl VectorIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut records = Writer::with_capacity(self.records.len() * 4);
        records.f32s(&self.records);
        let mut norms = Writer::default();
        norms.f32s(&self.norms);
        let mut centroids = Writer::default();
        centroids.f32s(&self.centroids);
        let mut assign = Writer::default();
        for &a in &self.assignment {
            assign.u32(a);
        }
        let mut keys = Writer::with_capacity(self.keys.len() * KEY_LEN);
        for k in &self.keys {
            encode_key(&mut keys, k);
        }
        let n = self.keys.len() as u64;
        codec::seal(
            INDEX_MAGIC,
            self.dim as u32,
            &[
                Section { tag: RECORDS, count: n, body: records.finish() },
                Section { tag: NORMS, count: n, body: norms.finish() },
                Section { tag: CENTROIDS, count: self.lists.len() as u64, body: centroids.finish() },
                Section { tag: ASSIGN, count: n, body: assign.finish() },
                Section { tag: KEYS, count: n, body: keys.finish() },
            ],
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let file = codec::open(INDEX_MAGIC, bytes)?;
        let dim = file.dim as usize;
        if dim < 2 {
            return Err(Error::Parse(format!("dimension {dim}")));
        }
        let (n, body) = file.section(RECORDS)?;
        let n = n as usize;
        let mut r = Reader::new(body);
        let records = r.f32s(n * dim)?;
        let (_, body) = file.section(NORMS)?;
        let norms = Reader::new(body).f32s(n)?;
        if norms.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::Parse("non-positive record norm".into()));
        }
        let (c, body) = file.section(CENTROIDS)?;
        let c = c as usize;
        if c == 0 {
            return Err(Error::Parse("index without centroids".into()));
        }
        let centroids = Reader::new(body).f32s(c * dim)?;
        let (_, body) = file.section(ASSIGN)?;
        let mut r = Reader::new(body);
        let assignment = (0..n)
            .map(|_| {
                let a = r.u32()?;
                if a as usize >= c {
                    return Err(Error::Parse(format!("record assigned to list {a} of {c}")));
                }
                Ok(a)
            })
            .collect::<Result<Vec<_>>>()?;
        let (_, body) = file.section(KEYS)?;
        let mut r = Reader::new(body);
        let keys = (0..n).map(|_| decode_key(&mut r)).collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(dim, records, norms, keys, centroids, assignment))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        codec::write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&codec::read_file(path.as_ref())?)
    }
}
