//! AEMB binary embedding files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   "AEMB"        4 bytes
//! version u16 = 1
//! dim     u32
//! count   u64
//! count × { id_len u16, id bytes (UTF-8), dim × f32 }
//! ```
//!
//! Records are written in byte-wise ascending id order. A JSON sidecar with
//! the same stem (`<stem>.meta.json`) names the probe and condition.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ConditionId, CorpusManifest, EmbeddingSet, ProbeId};
use crate::error::{Error, Result};

pub const AEMB_MAGIC: &[u8; 4] = b"AEMB";
pub const AEMB_VERSION: u16 = 1;
pub const AEMB_HEADER_LEN: usize = 18;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub probe: ProbeId,
    pub condition: ConditionId,
}

/// `dir/name.aemb` -> `dir/name.meta.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Writes raw AEMB records; the caller guarantees ids are sorted and unique.
pub fn write_aemb<'a, I>(path: &Path, dim: usize, count: usize, records: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a [f32])>,
{
    let wrap = |source| Error::WriteError {
        path: path.to_owned(),
        source,
    };
    let dim32 = u32::try_from(dim).map_err(|_| Error::FormatError(format!("dim {dim} too large")))?;
    let file = std::fs::File::create(path).map_err(wrap)?;
    let mut w = BufWriter::new(file);
    w.write_all(AEMB_MAGIC).map_err(wrap)?;
    w.write_all(&AEMB_VERSION.to_le_bytes()).map_err(wrap)?;
    w.write_all(&dim32.to_le_bytes()).map_err(wrap)?;
    w.write_all(&(count as u64).to_le_bytes()).map_err(wrap)?;
    let mut written = 0usize;
    for (id, v) in records {
        let len = u16::try_from(id.len())
            .map_err(|_| Error::FormatError(format!("id `{id}` longer than 65535 bytes")))?;
        if v.len() != dim {
            return Err(Error::DimMismatch(dim, v.len()));
        }
        w.write_all(&len.to_le_bytes()).map_err(wrap)?;
        w.write_all(id.as_bytes()).map_err(wrap)?;
        for x in v {
            w.write_all(&x.to_le_bytes()).map_err(wrap)?;
        }
        written += 1;
    }
    if written != count {
        return Err(Error::FormatError(format!(
            "header count {count} but {written} records written"
        )));
    }
    w.flush().map_err(wrap)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::FormatError(format!(
                "truncated file: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }
}

/// Parses raw AEMB bytes into `(dim, records)` in file order.
pub fn parse_aemb(data: &[u8]) -> Result<(usize, Vec<(String, Vec<f32>)>)> {
    let mut c = Cursor { data, pos: 0 };
    if &c.array::<4>()? != AEMB_MAGIC {
        return Err(Error::FormatError("bad magic".into()));
    }
    let version = u16::from_le_bytes(c.array()?);
    if version != AEMB_VERSION {
        return Err(Error::FormatError(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(c.array()?) as usize;
    let count = u64::from_le_bytes(c.array()?);
    if dim == 0 {
        return Err(Error::FormatError("dim must be positive".into()));
    }
    // Every record takes at least 2 + 4 * dim bytes.
    let remaining = (data.len() - c.pos) as u64;
    if count > remaining / (2 + 4 * dim as u64) {
        return Err(Error::FormatError(format!(
            "count {count} exceeds what {remaining} bytes can hold"
        )));
    }
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = u16::from_le_bytes(c.array()?) as usize;
        let id = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::FormatError("utterance id is not UTF-8".into()))?
            .to_owned();
        let raw = c.take(4 * dim)?;
        let v = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        records.push((id, v));
    }
    if c.pos != data.len() {
        return Err(Error::FormatError(format!(
            "{} trailing bytes",
            data.len() - c.pos
        )));
    }
    Ok((dim, records))
}

pub fn read_aemb(path: &Path) -> Result<(usize, Vec<(String, Vec<f32>)>)> {
    let data = std::fs::read(path).map_err(|source| Error::ReadError {
        path: path.to_owned(),
        source,
    })?;
    parse_aemb(&data)
}

pub fn read_meta(path: &Path) -> Result<EmbeddingMeta> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|source| Error::ReadError {
        path: side.clone(),
        source,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::FormatError(format!("{}: {e}", side.display())))
}

/// Loads an AEMB file and its sidecar, validating every record against the
/// manifest.
pub fn load_embeddings(path: &Path, manifest: &CorpusManifest) -> Result<EmbeddingSet> {
    let meta = read_meta(path)?;
    let (dim, records) = read_aemb(path)?;
    let mut set = EmbeddingSet::new(meta.probe, meta.condition, dim);
    for (id, v) in records {
        if manifest.get(&id).is_none() {
            return Err(Error::UnknownUtterance(id));
        }
        set.insert(id, v).map_err(|e| match e {
            Error::DuplicateUtterance(id) => {
                Error::FormatError(format!("utterance `{id}` appears twice"))
            }
            other => other,
        })?;
    }
    Ok(set)
}

/// Writes `set` to `path` plus its `.meta.json` sidecar.
pub fn write_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    write_aemb(path, set.dim(), set.len(), set.iter())?;
    let meta = EmbeddingMeta {
        probe: set.probe.clone(),
        condition: set.condition.clone(),
    };
    let side = sidecar_path(path);
    let mut text = serde_json::to_string(&meta)?;
    text.push('\n');
    std::fs::write(&side, text).map_err(|source| Error::WriteError { path: side, source })
}

#[cfg(test)]
mod tests {
    use super::super::UtteranceMeta;
    use super::*;
    use proptest::prelude::*;

    fn manifest(ids: &[&str]) -> CorpusManifest {
        CorpusManifest::new(
            ids.iter()
                .map(|id| UtteranceMeta {
                    utt_id: id.to_string(),
                    speaker_id: format!("spk_{id}"),
                    accent: "US".into(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn set(dim: usize, records: &[(&str, Vec<f32>)]) -> EmbeddingSet {
        let mut s = EmbeddingSet::new(ProbeId::new("p").unwrap(), ConditionId::original(), dim);
        for (id, v) in records {
            s.insert(*id, v.clone()).unwrap();
        }
        s
    }

    #[test]
    fn empty_set_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.aemb");
        write_embeddings(&set(4, &[]), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), AEMB_HEADER_LEN);
        assert_eq!(
            bytes,
            [b'A', b'E', b'M', b'B', 1, 0, 4, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]
        );
    }

    #[test]
    fn exact_record_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.aemb");
        write_embeddings(&set(1, &[("b", vec![1.0]), ("a", vec![-2.0])]), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut expected = vec![b'A', b'E', b'M', b'B', 1, 0, 1, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0];
        expected.extend([1, 0, b'a']);
        expected.extend((-2.0f32).to_le_bytes());
        expected.extend([1, 0, b'b']);
        expected.extend(1.0f32.to_le_bytes());
        assert_eq!(bytes, expected);
        let side = std::fs::read_to_string(sidecar_path(&path)).unwrap();
        assert_eq!(side, "{\"probe\":\"p\",\"condition\":\"original\"}\n");
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.aemb");
        let m = manifest(&["a"]);
        write_embeddings(&set(2, &[("z", vec![1.0, 0.0])]), &path).unwrap();
        assert!(matches!(
            load_embeddings(&path, &m),
            Err(Error::UnknownUtterance(id)) if id == "z"
        ));

        // Hand-written records bypass EmbeddingSet validation.
        let nan = [f32::NAN, 1.0];
        write_aemb(&path, 2, 1, [("a", &nan[..])]).unwrap();
        assert!(matches!(
            load_embeddings(&path, &m),
            Err(Error::NonFiniteEmbedding(_))
        ));
        let zero = [0.0f32, -0.0];
        write_aemb(&path, 2, 1, [("a", &zero[..])]).unwrap();
        assert!(matches!(
            load_embeddings(&path, &m),
            Err(Error::DegenerateEmbedding(_))
        ));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_embeddings(&path, &m), Err(Error::FormatError(_))));
        bytes[0] = b'A';
        bytes[4] = 2;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_embeddings(&path, &m), Err(Error::FormatError(_))));
        bytes[4] = 1;
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_embeddings(&path, &m), Err(Error::FormatError(_))));
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_embeddings(&path, &m), Err(Error::FormatError(_))));
    }

    #[test]
    fn insertion_order_does_not_change_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("1.aemb"), dir.path().join("2.aemb"));
        let recs = [
            ("u3", vec![0.5, 1.5]),
            ("u1", vec![2.0, -1.0]),
            ("u2", vec![1e-30, 3.0]),
        ];
        let mut rev = recs.clone();
        rev.reverse();
        write_embeddings(&set(2, &recs), &p1).unwrap();
        write_embeddings(&set(2, &rev), &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    proptest! {
        #[test]
        fn round_trip_preserves_bits(
            dim in 1usize..6,
            raw in proptest::collection::btree_map(
                "[A-Za-z0-9_.-]{1,12}",
                proptest::collection::vec(any::<u32>(), 6),
                0..20,
            )
        ) {
            let mut s = EmbeddingSet::new(ProbeId::new("probe").unwrap(), ConditionId::anon("sys").unwrap(), dim);
            let mut ids = Vec::new();
            for (id, bits) in &raw {
                let v: Vec<f32> = bits[..dim].iter().map(|b| f32::from_bits(*b)).collect();
                if v.iter().all(|x| x.is_finite()) && v.iter().any(|&x| x != 0.0) {
                    s.insert(id.clone(), v).unwrap();
                    ids.push(id.as_str());
                }
            }
            let m = manifest(&ids);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.aemb");
            write_embeddings(&s, &path).unwrap();
            let back = load_embeddings(&path, &m).unwrap();
            prop_assert_eq!(back.dim(), s.dim());
            prop_assert_eq!(&back.probe, &s.probe);
            prop_assert_eq!(&back.condition, &s.condition);
            let a: Vec<(String, Vec<u32>)> = s.iter().map(|(k, v)| (k.to_owned(), v.iter().map(|x| x.to_bits()).collect())).collect();
            let b: Vec<(String, Vec<u32>)> = back.iter().map(|(k, v)| (k.to_owned(), v.iter().map(|x| x.to_bits()).collect())).collect();
            prop_assert_eq!(a, b);
        }
    }
}
