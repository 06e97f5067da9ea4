//! Binary framing shared by checkpoint and prompt files:
//! 8 magic bytes, a little-endian `u64` header length, a UTF-8 JSON header,
//! then little-endian `f64` payloads.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Offset from the start of the payload section.
    pub byte_offset: u64,
}

/// Lays `tensors` out back to back and returns their table.
pub fn tensor_table(tensors: &[(String, &Tensor<f64>)]) -> Vec<TensorEntry> {
    let mut offset = 0u64;
    tensors
        .iter()
        .map(|(name, t)| {
            let entry = TensorEntry { name: name.clone(), rows: t.rows(), cols: t.cols(), byte_offset: offset };
            offset += 8 * t.len() as u64;
            entry
        })
        .collect()
}

pub fn encode<H: Serialize>(magic: &[u8; 8], header: &H, tensors: &[(String, &Tensor<f64>)]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header).map_err(|e| Error::Format(format!("header: {e}")))?;
    let mut out = Vec::with_capacity(16 + header.len() + tensors.iter().map(|(_, t)| 8 * t.len()).sum::<usize>());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in tensors {
        out.extend_from_slice(&t.to_le_bytes());
    }
    Ok(out)
}

/// Splits a file into its parsed header and payload section.
pub fn decode<'a, H: Deserialize<'a>>(magic: &[u8; 8], bytes: &'a [u8], what: &str) -> Result<(H, &'a [u8])> {
    if bytes.len() < 16 {
        return Err(Error::Format(format!("{what}: file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != magic {
        return Err(Error::Format(format!("{what}: bad magic bytes {:?}", String::from_utf8_lossy(&bytes[..8]))));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(16))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format(format!("{what}: header length {len} exceeds file size {}", bytes.len())))?;
    let header = serde_json::from_slice(&bytes[16..end]).map_err(|e| Error::Format(format!("{what}: header: {e}")))?;
    Ok((header, &bytes[end..]))
}

/// Reads every table entry out of `payload`, which must be covered exactly.
pub fn read_tensors(table: &[TensorEntry], payload: &[u8], what: &str) -> Result<BTreeMap<String, Tensor<f64>>> {
    let mut out = BTreeMap::new();
    let mut expected = 0u64;
    for entry in table {
        if entry.byte_offset != expected {
            return Err(Error::Format(format!(
                "{what}: tensor '{}' byte_offset {} (expected {expected})",
                entry.name, entry.byte_offset
            )));
        }
        let len = entry.rows.checked_mul(entry.cols).and_then(|n| n.checked_mul(8));
        let start = entry.byte_offset as usize;
        let end = len.and_then(|l| start.checked_add(l)).filter(|&e| e <= payload.len()).ok_or_else(|| {
            Error::Format(format!("{what}: tensor '{}' ({}x{}) runs past the end of the file", entry.name, entry.rows, entry.cols))
        })?;
        let data = payload[start..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if out.insert(entry.name.clone(), Tensor::new(entry.rows, entry.cols, data)?).is_some() {
            return Err(Error::Format(format!("{what}: tensor '{}' appears twice", entry.name)));
        }
        expected = end as u64;
    }
    if expected != payload.len() as u64 {
        return Err(Error::Format(format!("{what}: {} trailing bytes after the last tensor", payload.len() as u64 - expected)));
    }
    Ok(out)
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Header {
        tensors: Vec<TensorEntry>,
    }

    const MAGIC: &[u8; 8] = b"TESTFMT\0";

    fn sample() -> Vec<u8> {
        let a = Tensor::from_rows(&[vec![1.0, -2.5], vec![f64::MIN_POSITIVE, 3.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.1]]).unwrap();
        let tensors = vec![("a".to_string(), &a), ("b".to_string(), &b)];
        encode(MAGIC, &Header { tensors: tensor_table(&tensors) }, &tensors).unwrap()
    }

    #[test]
    fn round_trip_and_rejections() {
        let bytes = sample();
        let (h, payload): (Header, _) = decode(MAGIC, &bytes, "test").unwrap();
        let map = read_tensors(&h.tensors, payload, "test").unwrap();
        assert_eq!(map["a"].get(1, 0), f64::MIN_POSITIVE);
        assert_eq!(map["b"].data(), &[0.1]);

        for cut in [0, 7, 15, 20, bytes.len() - 1] {
            let r = decode::<Header>(MAGIC, &bytes[..cut], "test").and_then(|(h, p)| read_tensors(&h.tensors, p, "test"));
            assert!(matches!(r, Err(Error::Format(_))), "cut {cut}");
        }
        assert!(matches!(decode::<Header>(b"OTHERFMT", &bytes, "test"), Err(Error::Format(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        let (h, p): (Header, _) = decode(MAGIC, &extra, "test").unwrap();
        assert!(read_tensors(&h.tensors, p, "test").is_err());
    }
}
