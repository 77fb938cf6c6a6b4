//! EMB1 / HED1 binary containers and the CSV fixture fallback.
//!
//! Both binary layouts are little-endian throughout.
//!
//! EMB1:
//!
//! | field | type |
//! |-------|------|
//! | magic | `b"EMB1"` |
//! | version | u32 = 1 |
//! | S (rows), M (dim), C (classes) | u32 each |
//! | values | S*M f32, row-major |
//! | labels | S u32 |
//! | names | C x (u16 byte length + UTF-8 bytes) |
//!
//! HED1:
//!
//! | field | type |
//! |-------|------|
//! | magic | `b"HED1"` |
//! | version | u32 = 1 |
//! | N (classes), M (dim) | u32 each |
//! | flags | u32; bit0 rows L2-normalized, bit1 bias ignored |
//! | weights | N*M f32, row-major |
//! | bias | N f32 |
//! | names | N x (u16 byte length + UTF-8 bytes) |
//!
//! Values are held as `f64` in memory and narrowed to `f32` on write.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::dataset::EmbeddingSet;
use crate::error::{FormatError, Result};
use crate::head::{ClassifierHead, HeadFlags};

pub const EMB_MAGIC: [u8; 4] = *b"EMB1";
pub const HED_MAGIC: [u8; 4] = *b"HED1";
pub const FORMAT_VERSION: u32 = 1;

/// Which container a byte stream claims to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Container {
    Embeddings,
    Head,
}

pub fn sniff(bytes: &[u8]) -> Option<Container> {
    match bytes.get(..4)? {
        m if m == EMB_MAGIC => Some(Container::Embeddings),
        m if m == HED_MAGIC => Some(Container::Head),
        _ => None,
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::TruncatedPayload {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let found = self.take(4)?;
        if found != expected {
            return Err(FormatError::BadMagic {
                expected,
                found: found.to_vec(),
            });
        }
        Ok(())
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn count_bytes(&self, count: usize, width: usize) -> Result<usize, FormatError> {
        count.checked_mul(width).ok_or(FormatError::TruncatedPayload {
            offset: self.pos,
            needed: usize::MAX,
            available: self.buf.len() - self.pos,
        })
    }

    /// Reads `count` f32 values, widening to f64. `base` offsets element
    /// indices in error reports.
    fn f32s(&mut self, count: usize, base: usize) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(self.count_bytes(count, 4)?)?;
        bytes
            .chunks_exact(4)
            .enumerate()
            .map(|(i, c)| {
                let v = f32::from_le_bytes(c.try_into().unwrap());
                if v.is_finite() {
                    Ok(f64::from(v))
                } else {
                    Err(FormatError::NonFiniteValue(base + i))
                }
            })
            .collect()
    }

    fn u32s(&mut self, count: usize) -> Result<Vec<u32>, FormatError> {
        let bytes = self.take(self.count_bytes(count, 4)?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn names(&mut self, count: usize) -> Result<Vec<String>, FormatError> {
        (0..count)
            .map(|_| {
                let len = usize::from(self.u16()?);
                let raw = self.take(len)?;
                String::from_utf8(raw.to_vec()).map_err(|_| FormatError::InvalidUtf8)
            })
            .collect()
    }

    fn version(&mut self) -> Result<(), FormatError> {
        match self.u32()? {
            FORMAT_VERSION => Ok(()),
            v => Err(FormatError::UnsupportedVersion(v)),
        }
    }

    fn finish(&self) -> Result<(), FormatError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

pub fn read_embeddings(bytes: &[u8]) -> Result<EmbeddingSet, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(EMB_MAGIC)?;
    r.version()?;
    let rows = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let value_count = r.count_bytes(rows, dim)?;
    let values = r.f32s(value_count, 0)?;
    let labels = r.u32s(rows)?;
    let names = r.names(classes)?;
    r.finish()?;
    EmbeddingSet::new(dim, values, labels, names)
}

pub fn write_embeddings(set: &EmbeddingSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + set.values().len() * 4 + set.len() * 4);
    out.extend_from_slice(&EMB_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, set.len() as u32);
    put_u32(&mut out, set.dim() as u32);
    put_u32(&mut out, set.num_classes() as u32);
    put_f32s(&mut out, set.values());
    for &l in set.labels() {
        put_u32(&mut out, l);
    }
    put_names(&mut out, set.class_names());
    out
}

pub fn read_head(bytes: &[u8]) -> Result<ClassifierHead, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(HED_MAGIC)?;
    r.version()?;
    let classes = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let bits = r.u32()?;
    let flags = HeadFlags::from_bits(bits)
        .ok_or_else(|| FormatError::InvariantViolation(format!("unknown flag bits {bits:#x}")))?;
    let weight_count = r.count_bytes(classes, dim)?;
    let weights = r.f32s(weight_count, 0)?;
    let bias = r.f32s(classes, weight_count)?;
    let names = r.names(classes)?;
    r.finish()?;
    ClassifierHead::new(dim, weights, bias, names, flags)
}

pub fn write_head(head: &ClassifierHead) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + (head.weights().len() + head.num_classes()) * 4);
    out.extend_from_slice(&HED_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, head.num_classes() as u32);
    put_u32(&mut out, head.dim() as u32);
    put_u32(&mut out, head.flags().bits());
    put_f32s(&mut out, head.weights());
    put_f32s(&mut out, head.bias());
    put_names(&mut out, head.class_names());
    out
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn put_names(out: &mut Vec<u8>, names: &[String]) {
    for n in names {
        out.extend_from_slice(&(n.len() as u16).to_le_bytes());
        out.extend_from_slice(n.as_bytes());
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads an embedding set: CSV by `.csv` extension, binary otherwise.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let load = || -> Result<EmbeddingSet> {
        let bytes = fs::read(path)?;
        Ok(if is_csv(path) {
            read_embeddings_csv(&bytes)?
        } else {
            read_embeddings(&bytes)?
        })
    };
    load().map_err(|e| e.at(path))
}

pub fn load_head(path: &Path) -> Result<ClassifierHead> {
    let load = || -> Result<ClassifierHead> {
        let bytes = fs::read(path)?;
        Ok(if is_csv(path) {
            read_head_csv(&bytes)?
        } else {
            read_head(&bytes)?
        })
    };
    load().map_err(|e| e.at(path))
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic_inner(path, bytes).map_err(|e| e.at(path))
}

fn write_atomic_inner(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

// CSV fixtures. Embeddings: header `label,<feature columns...>`, then one row
// per sample with the class name followed by its values. Class indices follow
// first appearance. Heads: header `class,bias,<feature columns...>`; CSV heads
// always load with both flags clear.

fn csv_err(e: impl std::fmt::Display) -> FormatError {
    FormatError::Csv(e.to_string())
}

fn parse_f32(cell: &str, element: usize) -> Result<f64, FormatError> {
    let v: f32 = cell
        .trim()
        .parse()
        .map_err(|_| FormatError::Csv(format!("cannot parse {cell:?} as a number")))?;
    if !v.is_finite() {
        return Err(FormatError::NonFiniteValue(element));
    }
    Ok(f64::from(v))
}

fn csv_records(bytes: &[u8], first: &str, skip: usize) -> Result<(usize, Vec<csv::StringRecord>), FormatError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.get(0).map(str::trim) != Some(first) {
        return Err(FormatError::Csv(format!("header must start with {first:?}")));
    }
    if header.len() <= skip {
        return Err(FormatError::Csv("header has no value columns".into()));
    }
    let dim = header.len() - skip;
    let records = reader.records().collect::<Result<Vec<_>, _>>().map_err(csv_err)?;
    Ok((dim, records))
}

pub fn read_embeddings_csv(bytes: &[u8]) -> Result<EmbeddingSet, FormatError> {
    let (dim, records) = csv_records(bytes, "label", 1)?;
    let mut names: Vec<String> = Vec::new();
    let mut labels = Vec::with_capacity(records.len());
    let mut values = Vec::with_capacity(records.len() * dim);
    for rec in &records {
        let name = rec[0].trim();
        let label = match names.iter().position(|n| n == name) {
            Some(i) => i,
            None => {
                names.push(name.to_string());
                names.len() - 1
            }
        };
        labels.push(label as u32);
        for cell in rec.iter().skip(1) {
            values.push(parse_f32(cell, values.len())?);
        }
    }
    EmbeddingSet::new(dim, values, labels, names)
}

pub fn read_head_csv(bytes: &[u8]) -> Result<ClassifierHead, FormatError> {
    let (dim, records) = csv_records(bytes, "class", 2)?;
    let mut names = Vec::with_capacity(records.len());
    let mut bias = Vec::with_capacity(records.len());
    let mut weights = Vec::with_capacity(records.len() * dim);
    for rec in &records {
        names.push(rec[0].trim().to_string());
        bias.push(parse_f32(&rec[1], weights.len())?);
        for cell in rec.iter().skip(2) {
            weights.push(parse_f32(cell, weights.len())?);
        }
    }
    ClassifierHead::new(dim, weights, bias, names, HeadFlags::ORIGINAL)
}

/// Renders a set as a CSV fixture; values print as the shortest decimal that
/// parses back to the same `f32`.
pub fn write_embeddings_csv(set: &EmbeddingSet) -> Result<Vec<u8>, FormatError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["label".to_string()];
    header.extend((0..set.dim()).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in set.rows().enumerate() {
        let mut rec = vec![set.class_name(set.label(i)).to_string()];
        rec.extend(row.iter().map(|&v| (v as f32).to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(csv_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_set() -> EmbeddingSet {
        EmbeddingSet::new(3, vec![1.0, 2.0, 3.0, -0.5, 0.0, 7.25], vec![0, 0], vec!["a".into()]).unwrap()
    }

    #[test]
    fn embeddings_round_trip() {
        let s = small_set();
        let bytes = write_embeddings(&s);
        let back = read_embeddings(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.len(), 2);
    }

    #[test]
    fn zero_value_encoding() {
        let s = EmbeddingSet::new(1, vec![0.0], vec![0], vec!["z".into()]).unwrap();
        let bytes = write_embeddings(&s);
        // header is 20 bytes: magic, version, S, M, C
        assert_eq!(&bytes[20..24], &[0, 0, 0, 0]);
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 4 + 4 + 2 + 1);
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = write_embeddings(&small_set());
        bytes[..4].copy_from_slice(b"HED1");
        assert!(matches!(read_embeddings(&bytes), Err(FormatError::BadMagic { .. })));
    }

    #[test]
    fn nan_payload_rejected() {
        let mut bytes = write_embeddings(&small_set());
        bytes[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(read_embeddings(&bytes), Err(FormatError::NonFiniteValue(1)));
    }

    #[test]
    fn version_truncation_and_trailing() {
        let bytes = write_embeddings(&small_set());
        let mut v2 = bytes.clone();
        v2[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert_eq!(read_embeddings(&v2), Err(FormatError::UnsupportedVersion(2)));
        for cut in [0, 3, 10, 21, bytes.len() - 1] {
            assert!(
                matches!(
                    read_embeddings(&bytes[..cut]),
                    Err(FormatError::TruncatedPayload { .. })
                ),
                "cut at {cut}"
            );
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(read_embeddings(&extra), Err(FormatError::TrailingBytes(1)));
    }

    #[test]
    fn label_out_of_range_and_duplicate_names() {
        let s = EmbeddingSet::new(1, vec![1.0, 2.0], vec![0, 1], vec!["a".into(), "b".into()]).unwrap();
        let bytes = write_embeddings(&s);
        let mut bad_label = bytes.clone();
        // labels start after 20-byte header and 2 values
        bad_label[32..36].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(
            read_embeddings(&bad_label),
            Err(FormatError::LabelOutOfRange { .. })
        ));
        let mut dup = bytes.clone();
        let n = dup.len();
        dup[n - 1] = b'a';
        assert_eq!(read_embeddings(&dup), Err(FormatError::DuplicateClassName("a".into())));
    }

    #[test]
    fn huge_counts_do_not_allocate() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"EMB1");
        for v in [1u32, u32::MAX, u32::MAX, 1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(
            read_embeddings(&bytes),
            Err(FormatError::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn head_round_trip_with_flags() {
        let h = ClassifierHead::new(
            2,
            vec![0.6, 0.8, 1.0, 0.0],
            vec![0.0, 0.0],
            vec!["p".into(), "q".into()],
            HeadFlags::COSINE,
        )
        .unwrap();
        let bytes = write_head(&h);
        assert_eq!(&bytes[16..20], &3u32.to_le_bytes());
        let back = read_head(&bytes).unwrap();
        assert_eq!(back.flags(), HeadFlags::COSINE);
        assert_eq!(write_head(&back), bytes);
    }

    #[test]
    fn head_flag_violation() {
        let h = ClassifierHead::new(
            2,
            vec![2.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0],
            vec!["p".into(), "q".into()],
            HeadFlags::ORIGINAL,
        )
        .unwrap();
        let mut bytes = write_head(&h);
        bytes[16..20].copy_from_slice(&1u32.to_le_bytes());
        assert!(matches!(read_head(&bytes), Err(FormatError::InvariantViolation(_))));
        bytes[16..20].copy_from_slice(&8u32.to_le_bytes());
        assert!(matches!(read_head(&bytes), Err(FormatError::InvariantViolation(_))));
    }

    #[test]
    fn head_rejects_embedding_magic() {
        assert!(matches!(
            read_head(&write_embeddings(&small_set())),
            Err(FormatError::BadMagic { .. })
        ));
        assert_eq!(sniff(b"HED1...."), Some(Container::Head));
        assert_eq!(sniff(b"EMB"), None);
    }

    #[test]
    fn csv_matches_binary() {
        let text = "label,a,b\ncat,0.1,2.5\ndog,-3,1e-3\ncat,4,0\n";
        let s = read_embeddings_csv(text.as_bytes()).unwrap();
        assert_eq!(s.class_names(), &["cat".to_string(), "dog".to_string()]);
        assert_eq!(s.labels(), &[0, 1, 0]);
        assert_eq!(s.row(0)[0], f64::from(0.1f32));
        let back = read_embeddings(&write_embeddings(&s)).unwrap();
        assert_eq!(back, s);
        let again = read_embeddings_csv(&write_embeddings_csv(&s).unwrap()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn csv_head() {
        let text = "class,bias,w0,w1\nx,0.5,1,0\ny,-0.5,0,1\n";
        let h = read_head_csv(text.as_bytes()).unwrap();
        assert_eq!(h.num_classes(), 2);
        assert_eq!(h.bias(), &[0.5, -0.5]);
        assert!(read_head_csv(b"label,w0\nx,1\n").is_err());
        assert!(matches!(
            read_embeddings_csv(b"label,a\nx,nan\n"),
            Err(FormatError::NonFiniteValue(0))
        ));
    }
}
