//! Binary snapshots of the store, of materialized view data and of built cuboids.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header   "STARCUBE" | version u16 | kind u16 | schema fingerprint u64 | section count u32
//! section  tag [u8; 4] | payload length u64 | payload | crc32(payload) u32
//! trailer  crc32 of every preceding byte, u32
//! ```
//!
//! Store snapshots carry `META`, then one `DIMS`, `FKEY` and `AMNT` section.
//! View and cube snapshots carry one `CUBE` section per cuboid. Strings are
//! u32 length + UTF-8 bytes. Encoding is a pure function of the contents, so
//! loading and saving again gives identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use starcube_core::cube::{Cell, Cuboid, GroupBySpec, LevelChoice};
use starcube_core::schema::StarSchema;
use starcube_core::store::Warehouse;
use thiserror::Error;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"STARCUBE";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 8 + 2 + 2 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum SnapshotKind {
    Store = 1,
    Views = 2,
    Cubes = 3,
}

impl SnapshotKind {
    fn from_u16(v: u16) -> Option<Self> {
        match v {
            1 => Some(SnapshotKind::Store),
            2 => Some(SnapshotKind::Views),
            3 => Some(SnapshotKind::Cubes),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SnapshotKind::Store => "store",
            SnapshotKind::Views => "views",
            SnapshotKind::Cubes => "cubes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SnapshotError {
    #[error("not a snapshot file")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    Version(u16),
    #[error("snapshot holds {got}, expected {expected}")]
    Kind { expected: &'static str, got: String },
    #[error("checksum mismatch in {0}")]
    Checksum(String),
    #[error("snapshot was written for schema fingerprint {stored:016x}, current schema is {current:016x}")]
    Fingerprint { stored: u64, current: u64 },
    #[error("malformed snapshot: {0}")]
    Malformed(String),
}

/// Header and section directory of a verified snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotInfo {
    pub kind: SnapshotKind,
    pub version: u16,
    pub fingerprint: u64,
    pub sections: Vec<(String, u64)>,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| SnapshotError::Malformed("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], SnapshotError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8, SnapshotError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, SnapshotError> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn i64(&mut self) -> Result<i64, SnapshotError> {
        Ok(i64::from_le_bytes(self.array()?))
    }
    fn len(&mut self) -> Result<usize, SnapshotError> {
        let n = self.u64()?;
        // every counted element takes at least one byte
        if n > (self.buf.len() - self.pos) as u64 * 8 + 8 {
            return Err(SnapshotError::Malformed(format!("implausible count {n}")));
        }
        Ok(n as usize)
    }
    fn str(&mut self) -> Result<String, SnapshotError> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| SnapshotError::Malformed("invalid UTF-8".into()))
    }
    fn done(&self) -> Result<(), SnapshotError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(SnapshotError::Malformed("trailing bytes in section".into()))
        }
    }
}

fn frame(kind: SnapshotKind, fingerprint: u64, sections: &[([u8; 4], Vec<u8>)]) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.u16(VERSION);
    w.u16(kind as u16);
    w.u64(fingerprint);
    w.u32(sections.len() as u32);
    for (tag, payload) in sections {
        w.0.extend_from_slice(tag);
        w.u64(payload.len() as u64);
        w.0.extend_from_slice(payload);
        w.u32(crc32fast::hash(payload));
    }
    let total = crc32fast::hash(&w.0);
    w.u32(total);
    w.0
}

type Sections<'a> = Vec<([u8; 4], &'a [u8])>;

fn unframe(bytes: &[u8]) -> Result<(SnapshotInfo, Sections<'_>), SnapshotError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(SnapshotError::Checksum("file".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().expect("4 bytes")) {
        return Err(SnapshotError::Checksum("file".into()));
    }
    let mut r = Reader::new(body);
    r.take(MAGIC.len())?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(SnapshotError::Version(version));
    }
    let raw_kind = r.u16()?;
    let kind = SnapshotKind::from_u16(raw_kind)
        .ok_or_else(|| SnapshotError::Malformed(format!("unknown snapshot kind {raw_kind}")))?;
    let fingerprint = r.u64()?;
    let count = r.u32()?;
    let mut sections = Vec::new();
    let mut dir = Vec::new();
    for _ in 0..count {
        let tag: [u8; 4] = r.array()?;
        let len = r.u64()?;
        let payload = r.take(usize::try_from(len).map_err(|_| SnapshotError::Malformed("section length".into()))?)?;
        let crc = r.u32()?;
        let name = String::from_utf8_lossy(&tag).into_owned();
        if crc32fast::hash(payload) != crc {
            return Err(SnapshotError::Checksum(format!("section {name}")));
        }
        dir.push((name, len));
        sections.push((tag, payload));
    }
    r.done()?;
    Ok((SnapshotInfo { kind, version, fingerprint, sections: dir }, sections))
}

/// Checks magic, version and every checksum without decoding contents.
pub fn verify(bytes: &[u8]) -> Result<SnapshotInfo, SnapshotError> {
    unframe(bytes).map(|(info, _)| info)
}

fn expect(info: &SnapshotInfo, kind: SnapshotKind, schema: &StarSchema) -> Result<(), SnapshotError> {
    if info.kind != kind {
        return Err(SnapshotError::Kind { expected: kind.name(), got: info.kind.name().into() });
    }
    let current = schema.fingerprint();
    if info.fingerprint != current {
        return Err(SnapshotError::Fingerprint { stored: info.fingerprint, current });
    }
    Ok(())
}

pub fn encode_store(wh: &Warehouse) -> Vec<u8> {
    let mut meta = Writer::default();
    meta.u64(wh.epoch());
    meta.u64(wh.fact_count() as u64);
    meta.u64(wh.loaded_batches().len() as u64);
    for b in wh.loaded_batches() {
        meta.u64(*b);
    }

    let mut dims = Writer::default();
    dims.u32(wh.dimensions().len() as u32);
    for table in wh.dimensions() {
        dims.str(table.name());
        dims.u32(table.attributes().len() as u32);
        dims.u64(table.member_count() as u64);
        for i in 0..table.attributes().len() {
            // row 0 is the UNKNOWN member, rebuilt on load
            for v in &table.column(i)[1..] {
                dims.str(v);
            }
        }
    }

    let mut fkey = Writer::default();
    fkey.u32(wh.dimensions().len() as u32);
    for d in 0..wh.dimensions().len() {
        let col = wh.facts().keys(d);
        fkey.u64(col.len() as u64);
        for k in col {
            fkey.u32(*k);
        }
    }

    let mut amnt = Writer::default();
    amnt.u64(wh.fact_count() as u64);
    for a in wh.facts().amounts() {
        amnt.i64(*a);
    }

    frame(
        SnapshotKind::Store,
        wh.schema().fingerprint(),
        &[(*b"META", meta.0), (*b"DIMS", dims.0), (*b"FKEY", fkey.0), (*b"AMNT", amnt.0)],
    )
}

fn section<'a>(sections: &Sections<'a>, tag: &[u8; 4]) -> Result<&'a [u8], SnapshotError> {
    let mut found = sections.iter().filter(|(t, _)| t == tag);
    let name = String::from_utf8_lossy(tag).into_owned();
    let (_, payload) = found.next().ok_or_else(|| SnapshotError::Malformed(format!("missing section {name}")))?;
    if found.next().is_some() {
        return Err(SnapshotError::Malformed(format!("repeated section {name}")));
    }
    Ok(payload)
}

pub fn decode_store(bytes: &[u8], schema: Arc<StarSchema>) -> Result<Warehouse, SnapshotError> {
    let (info, sections) = unframe(bytes)?;
    expect(&info, SnapshotKind::Store, &schema)?;

    let mut r = Reader::new(section(&sections, b"META")?);
    let epoch = r.u64()?;
    let rows = r.u64()? as usize;
    let mut batches = BTreeSet::new();
    for _ in 0..r.len()? {
        batches.insert(r.u64()?);
    }
    r.done()?;

    let ndims = schema.dimensions.len();
    let mut r = Reader::new(section(&sections, b"DIMS")?);
    if r.u32()? as usize != ndims {
        return Err(SnapshotError::Malformed("dimension count".into()));
    }
    let mut members = Vec::with_capacity(ndims);
    for def in &schema.dimensions {
        if r.str()? != def.name {
            return Err(SnapshotError::Malformed(format!("expected dimension {}", def.name)));
        }
        let nattr = r.u32()? as usize;
        let n = r.len()?;
        let mut cols = Vec::with_capacity(nattr);
        for _ in 0..nattr {
            let mut col = Vec::with_capacity(n);
            for _ in 0..n {
                col.push(r.str()?);
            }
            cols.push(col);
        }
        members.push(cols);
    }
    r.done()?;

    let mut r = Reader::new(section(&sections, b"FKEY")?);
    if r.u32()? as usize != ndims {
        return Err(SnapshotError::Malformed("fact key column count".into()));
    }
    let mut keys = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        let n = r.len()?;
        let mut col = Vec::with_capacity(n);
        for _ in 0..n {
            col.push(r.u32()?);
        }
        keys.push(col);
    }
    r.done()?;

    let mut r = Reader::new(section(&sections, b"AMNT")?);
    let n = r.len()?;
    let mut amounts = Vec::with_capacity(n);
    for _ in 0..n {
        amounts.push(r.i64()?);
    }
    r.done()?;
    if amounts.len() != rows {
        return Err(SnapshotError::Malformed("fact row count".into()));
    }
    Warehouse::restore(schema, members, keys, amounts, epoch, batches)
        .map_err(|e| SnapshotError::Malformed(e.to_string()))
}

/// Named cuboids: view data (named) or built cuboids (empty names).
pub fn encode_cuboids(kind: SnapshotKind, schema: &StarSchema, items: &[(&str, &Cuboid)]) -> Vec<u8> {
    let sections: Vec<([u8; 4], Vec<u8>)> = items
        .iter()
        .map(|(name, c)| {
            let mut w = Writer::default();
            w.str(name);
            w.u32(c.spec().len() as u32);
            for choice in c.spec().choices() {
                match choice {
                    LevelChoice::All => w.u8(0xff),
                    LevelChoice::Level(l) => w.u8(*l as u8),
                }
            }
            w.u64(c.epoch());
            w.u64(c.len() as u64);
            for (coord, cell) in c.cells() {
                for id in coord {
                    w.u32(*id);
                }
                w.i64(cell.sum);
                w.u64(cell.count);
            }
            (*b"CUBE", w.0)
        })
        .collect();
    frame(kind, schema.fingerprint(), &sections)
}

pub fn decode_cuboids(
    bytes: &[u8],
    kind: SnapshotKind,
    schema: &StarSchema,
) -> Result<Vec<(String, Cuboid)>, SnapshotError> {
    let (info, sections) = unframe(bytes)?;
    expect(&info, kind, schema)?;
    let mut out = Vec::with_capacity(sections.len());
    for (tag, payload) in sections {
        if &tag != b"CUBE" {
            return Err(SnapshotError::Malformed(format!("unexpected section {}", String::from_utf8_lossy(&tag))));
        }
        let mut r = Reader::new(payload);
        let name = r.str()?;
        let ndims = r.u32()? as usize;
        if ndims != schema.dimensions.len() {
            return Err(SnapshotError::Malformed("cuboid dimension count".into()));
        }
        let mut choices = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            choices.push(match r.u8()? {
                0xff => LevelChoice::All,
                l => LevelChoice::Level(l as usize),
            });
        }
        let spec = GroupBySpec::new(choices);
        spec.check(schema).map_err(|e| SnapshotError::Malformed(e.to_string()))?;
        let arity = spec.grouped().count();
        let epoch = r.u64()?;
        let mut cells = BTreeMap::new();
        for _ in 0..r.len()? {
            let mut coord = Vec::with_capacity(arity);
            for _ in 0..arity {
                coord.push(r.u32()?);
            }
            let sum = r.i64()?;
            let count = r.u64()?;
            cells.insert(coord, Cell { sum, count });
        }
        r.done()?;
        out.push((name, Cuboid::from_parts(spec, cells, epoch)));
    }
    Ok(out)
}

/// Writes through a temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
