//! Binary tensor archive.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "LEDN" version count
//! count × { name_len name_utf8 rank extent[rank] f32_le[product(extent)] }
//! ```

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LEDN";
pub const VERSION: u32 = 1;

/// One named tensor in an archive.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Entry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("entry `{name}` holds {} values", data.len()),
            });
        }
        Ok(Self { name, shape, data })
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Config(format!("{what} {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(entries: &[Entry]) -> Result<Vec<u8>> {
    let payload: usize = entries.iter().map(|e| 4 * e.data.len() + e.name.len() + 8 + 4 * e.shape.len()).sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize, "version")?;
    put_u32(&mut out, entries.len(), "entry count")?;
    for e in entries {
        put_u32(&mut out, e.name.len(), "name length")?;
        out.extend_from_slice(e.name.as_bytes());
        put_u32(&mut out, e.shape.len(), "rank")?;
        for &d in &e.shape {
            put_u32(&mut out, d, "extent")?;
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let rest = self.bytes.len() - self.pos;
        if n > rest {
            return Err(Error::Parse {
                offset: self.pos,
                message: format!("truncated {what}: expected {n} bytes, found {rest}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic, not a LEDN archive".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let count = r.u32("entry count")?;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let at = r.pos;
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|e| Error::Parse {
                offset: at + 4,
                message: format!("entry name is not UTF-8: {e}"),
            })?
            .to_string();
        let rank = r.u32("rank")?;
        let shape = (0..rank).map(|_| r.u32("extent")).collect::<Result<Vec<_>>>()?;
        let bytes = shape
            .iter()
            .try_fold(4usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Parse {
                offset: at,
                message: format!("entry `{name}` extents overflow"),
            })?;
        let data = r
            .take(bytes, "payload")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(Entry { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            offset: r.pos,
            message: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(entries)
}

pub fn save(path: &Path, entries: &[Entry]) -> Result<()> {
    fs::write(path, encode(entries)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Entry>> {
    decode(&fs::read(path)?)
}

/// Differences between an expected `(name, shape)` layout and an archive.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FingerprintDiff {
    pub missing: Vec<String>,
    pub extra: Vec<String>,
    /// `(name, expected, found)`.
    pub misshaped: Vec<(String, Vec<usize>, Vec<usize>)>,
}

impl FingerprintDiff {
    pub fn compute(expected: &[(String, Vec<usize>)], found: &[Entry]) -> Self {
        let have: HashMap<&str, &[usize]> = found.iter().map(|e| (e.name.as_str(), e.shape.as_slice())).collect();
        let want: HashMap<&str, &[usize]> = expected.iter().map(|(n, s)| (n.as_str(), s.as_slice())).collect();
        let mut diff = Self::default();
        for (name, shape) in expected {
            match have.get(name.as_str()) {
                None => diff.missing.push(name.clone()),
                Some(s) if *s != shape.as_slice() => diff.misshaped.push((name.clone(), shape.clone(), s.to_vec())),
                Some(_) => {}
            }
        }
        let mut seen = std::collections::HashSet::new();
        for e in found {
            if !want.contains_key(e.name.as_str()) {
                diff.extra.push(e.name.clone());
            } else if !seen.insert(e.name.as_str()) {
                diff.extra.push(format!("{} (duplicate)", e.name));
            }
        }
        diff
    }

    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.extra.is_empty() && self.misshaped.is_empty()
    }
}

impl fmt::Display for FingerprintDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for n in &self.missing {
            writeln!(f, "missing: {n}")?;
        }
        for n in &self.extra {
            writeln!(f, "extra: {n}")?;
        }
        for (n, want, got) in &self.misshaped {
            writeln!(f, "shape: {n} expected {want:?}, found {got:?}")?;
        }
        Ok(())
    }
}

/// Reorder `found` to match `expected`, or fail with the full diff.
pub fn match_layout(expected: &[(String, Vec<usize>)], found: Vec<Entry>) -> Result<Vec<Entry>> {
    let diff = FingerprintDiff::compute(expected, &found);
    if !diff.is_empty() {
        return Err(Error::Fingerprint(diff.to_string().trim_end().to_string()));
    }
    let mut by_name: HashMap<String, Entry> = found.into_iter().map(|e| (e.name.clone(), e)).collect();
    Ok(expected
        .iter()
        .map(|(n, _)| by_name.remove(n).expect("checked by diff"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Entry> {
        vec![
            Entry::new("a.weight", vec![2, 1, 3, 1], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, 1e-30, -7.25]).unwrap(),
            Entry::new("b", vec![], vec![42.0]).unwrap(),
            Entry::new("ü", vec![0], vec![]).unwrap(),
        ]
    }

    #[test]
    fn round_trip_is_bitwise() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"LEDN");
        let back = decode(&bytes).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in sample().iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.data), bits(&b.data));
        }
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample()[1..2]).unwrap();
        let expected: Vec<u8> = [
            &b"LEDN"[..],
            &1u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            b"b",
            &0u32.to_le_bytes(),
            &42f32.to_le_bytes(),
        ]
        .concat();
        assert_eq!(bytes, expected);
    }

    #[test]
    fn corrupt_archives_are_rejected() {
        let bytes = encode(&sample()).unwrap();
        assert!(matches!(decode(b"NOPE"), Err(Error::Parse { offset: 0, .. })));
        let err = decode(&bytes[..bytes.len() - 2]).unwrap_err();
        assert!(err.to_string().contains("expected 4 bytes, found 2"), "{err}");
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(Error::Parse { .. })));
    }

    #[test]
    fn diff_lists_every_discrepancy() {
        let expected = vec![
            ("a.weight".to_string(), vec![2, 1, 3, 1]),
            ("b".to_string(), vec![1]),
            ("c".to_string(), vec![4]),
        ];
        let diff = FingerprintDiff::compute(&expected, &sample());
        assert_eq!(diff.missing, ["c"]);
        assert_eq!(diff.extra, ["ü"]);
        assert_eq!(diff.misshaped, [("b".to_string(), vec![1], vec![])]);
        let err = match_layout(&expected, sample()).unwrap_err().to_string();
        assert!(err.contains("missing: c") && err.contains("extra: ü") && err.contains("shape: b"));
    }

    #[test]
    fn match_layout_reorders() {
        let mut found = sample();
        found.reverse();
        let expected: Vec<_> = sample().iter().map(|e| (e.name.clone(), e.shape.clone())).collect();
        let ordered = match_layout(&expected, found).unwrap();
        assert_eq!(ordered, sample());
    }
}
