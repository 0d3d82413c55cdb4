//! Binary and CSV persistence for [`EmbeddingStore`].
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! magic     4 bytes  "ABXE"
//! version   u16      1
//! dim       u32
//! count     u64
//! model_id  u16 byte length, then UTF-8 bytes
//! records   count × (note_id u64, dim × f32)
//! ```
//!
//! Records are written in ascending note_id order.

use std::io::{self, Read, Write};

use super::{EmbedError, EmbeddingStore, EmbeddingVector};

pub const STORE_MAGIC: [u8; 4] = *b"ABXE";
pub const STORE_VERSION: u16 = 1;

pub fn save_store<W: Write>(store: &EmbeddingStore, mut out: W) -> Result<(), EmbedError> {
    let dim = u32::try_from(store.dim())
        .map_err(|_| EmbedError::Malformed(format!("dim {} exceeds u32", store.dim())))?;
    let model_id = store.model_id().as_bytes();
    let model_len = u16::try_from(model_id.len())
        .map_err(|_| EmbedError::Malformed("model_id longer than 65535 bytes".into()))?;

    out.write_all(&STORE_MAGIC)?;
    out.write_all(&STORE_VERSION.to_le_bytes())?;
    out.write_all(&dim.to_le_bytes())?;
    out.write_all(&(store.len() as u64).to_le_bytes())?;
    out.write_all(&model_len.to_le_bytes())?;
    out.write_all(model_id)?;
    let mut buf = Vec::with_capacity(8 + 4 * store.dim());
    for (note_id, v) in store.iter() {
        buf.clear();
        buf.extend_from_slice(&note_id.to_le_bytes());
        for x in v.as_slice() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn read<const N: usize>(&mut self) -> Result<[u8; N], EmbedError> {
        let mut buf = [0u8; N];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<(), EmbedError> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                Err(EmbedError::Truncated { offset: self.offset })
            }
            Err(e) => Err(e.into()),
        }
    }
}

/// Reads a store written by [`save_store`]. Fails without returning partial
/// data on bad magic, unknown version, or a truncated stream.
pub fn load_store<R: Read>(input: R) -> Result<EmbeddingStore, EmbedError> {
    let mut cur = Cursor { inner: input, offset: 0 };
    let magic = cur.read::<4>()?;
    if magic != STORE_MAGIC {
        return Err(EmbedError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(cur.read()?);
    if version != STORE_VERSION {
        return Err(EmbedError::BadVersion(version));
    }
    let dim = u32::from_le_bytes(cur.read()?) as usize;
    let count = u64::from_le_bytes(cur.read()?);
    let model_len = u16::from_le_bytes(cur.read()?) as usize;
    let mut model_id = vec![0u8; model_len];
    cur.fill(&mut model_id)?;
    let model_id = String::from_utf8(model_id)
        .map_err(|_| EmbedError::Malformed("model_id is not UTF-8".into()))?;

    let mut store = EmbeddingStore::new(dim, model_id)?;
    let mut raw = vec![0u8; 4 * dim];
    for _ in 0..count {
        let note_id = u64::from_le_bytes(cur.read()?);
        let record_offset = cur.offset;
        cur.fill(&mut raw)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let v = EmbeddingVector::new(values).map_err(|e| {
            EmbedError::Malformed(format!("record at byte {record_offset}: {e}"))
        })?;
        store.insert(note_id, v)?;
    }
    Ok(store)
}

/// Writes `note_id,v0,v1,...`. Float formatting is shortest round-trip, so the
/// CSV form also reloads exactly. The model id is not part of this format.
pub fn save_store_csv<W: Write>(store: &EmbeddingStore, out: W) -> Result<(), EmbedError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["note_id".to_string()];
    header.extend((0..store.dim()).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for (note_id, v) in store.iter() {
        let mut row = vec![note_id.to_string()];
        row.extend(v.as_slice().iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_store_csv<R: Read>(input: R, model_id: &str) -> Result<EmbeddingStore, EmbedError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "note_id" {
        return Err(EmbedError::Malformed("expected header note_id,v0,v1,...".into()));
    }
    let mut store = EmbeddingStore::new(headers.len() - 1, model_id)?;
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| EmbedError::Malformed(format!("line {line}: bad {what}"));
        let note_id = rec[0].trim().parse().map_err(|_| bad("note_id"))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f32>().map_err(|_| bad("value")))
            .collect::<Result<Vec<_>, _>>()?;
        store.insert(note_id, EmbeddingVector::new(values)?)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_store() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(3, "hash-v1").unwrap();
        s.insert(7, EmbeddingVector::new(vec![1.0, -0.5, 0.1]).unwrap()).unwrap();
        s.insert(2, EmbeddingVector::new(vec![0.0, 3.25, -1e-30]).unwrap()).unwrap();
        s
    }

    #[test]
    fn binary_round_trip() {
        let store = sample_store();
        let mut bytes = Vec::new();
        save_store(&store, &mut bytes).unwrap();
        assert_eq!(bytes.len(), 4 + 2 + 4 + 8 + 2 + 7 + 2 * (8 + 12));
        assert_eq!(load_store(bytes.as_slice()).unwrap(), store);
    }

    #[test]
    fn empty_store_is_header_only() {
        let store = EmbeddingStore::new(384, "m").unwrap();
        let mut bytes = Vec::new();
        save_store(&store, &mut bytes).unwrap();
        assert_eq!(bytes.len(), 4 + 2 + 4 + 8 + 2 + 1);
        assert_eq!(&bytes[..4], b"ABXE");
        let loaded = load_store(bytes.as_slice()).unwrap();
        assert!(loaded.is_empty());
        assert_eq!(loaded.dim(), 384);
    }

    #[test]
    fn corrupted_magic_and_version() {
        let mut bytes = Vec::new();
        save_store(&sample_store(), &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(load_store(bad.as_slice()), Err(EmbedError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(load_store(bad.as_slice()), Err(EmbedError::BadVersion(2))));
    }

    #[test]
    fn truncation_reports_offset() {
        let mut bytes = Vec::new();
        save_store(&sample_store(), &mut bytes).unwrap();
        // Header is 27 bytes, the first record id 8 more; cut inside its values.
        let cut = &bytes[..27 + 8 + 5];
        assert!(matches!(load_store(cut), Err(EmbedError::Truncated { offset: 35 })));
        assert!(matches!(load_store(&bytes[..3]), Err(EmbedError::Truncated { offset: 0 })));
    }

    #[test]
    fn csv_round_trip() {
        let store = sample_store();
        let mut bytes = Vec::new();
        save_store_csv(&store, &mut bytes).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("note_id,v0,v1,v2\n2,"));
        assert_eq!(load_store_csv(bytes.as_slice(), "hash-v1").unwrap(), store);
    }

    proptest! {
        #[test]
        fn random_stores_round_trip(
            dim in 1usize..12,
            ids in prop::collection::btree_set(any::<u64>(), 0..20),
            model in "[a-z0-9/_-]{0,24}",
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::rng::seeded(seed);
            let mut store = EmbeddingStore::new(dim, model).unwrap();
            for id in ids {
                let vals = (0..dim).map(|_| rng.random_range(-1e6f32..1e6)).collect();
                store.insert(id, EmbeddingVector::new(vals).unwrap()).unwrap();
            }
            let mut bytes = Vec::new();
            save_store(&store, &mut bytes).unwrap();
            prop_assert_eq!(load_store(bytes.as_slice()).unwrap(), store);
        }
    }
}
