//! FHD1 dataset files, little-endian:
//!
//! | bytes      | content                         |
//! |------------|---------------------------------|
//! | 4          | magic `FHD1`                    |
//! | 4          | u32 `n` (samples)               |
//! | 4          | u32 `d` (feature dimension)     |
//! | 4          | u32 `N` (classes)               |
//! | `4 * n*d`  | f32 features, row-major         |
//! | `4 * n`    | u32 labels                      |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Dataset;
use crate::error::{FhaError, Result};

pub const MAGIC: &[u8; 4] = b"FHD1";

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| FhaError::Format(format!("{what} {v} exceeds u32")))
    };
    w.write_all(MAGIC)?;
    w.write_all(&to_u32(ds.len(), "sample count")?.to_le_bytes())?;
    w.write_all(&to_u32(ds.dim(), "dimension")?.to_le_bytes())?;
    w.write_all(&to_u32(ds.num_classes(), "class count")?.to_le_bytes())?;
    for v in ds.features() {
        w.write_all(&v.to_le_bytes())?;
    }
    for y in ds.labels() {
        w.write_all(&y.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(FhaError::Format(format!(
            "truncated header: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(FhaError::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap()) as usize;
    let (n, d, classes) = (word(1), word(2), word(3));
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_add(n))
        .and_then(|words| words.checked_mul(4))
        .and_then(|b| b.checked_add(16))
        .ok_or_else(|| FhaError::Format("header sizes overflow".into()))?;
    if bytes.len() < expected {
        return Err(FhaError::Format(format!(
            "truncated body: {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(FhaError::Format(format!(
            "{} trailing bytes after body",
            bytes.len() - expected
        )));
    }
    let body = &bytes[16..];
    let features: Vec<f32> = body[..4 * n * d]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels: Vec<u32> = body[4 * n * d..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Dataset::new(d, classes, features, labels).map_err(|e| FhaError::Format(e.to_string()))
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_dataset(ds, BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(ds: &Dataset) -> Vec<u8> {
        let mut buf = Vec::new();
        write_dataset(ds, &mut buf).unwrap();
        buf
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let ds = Dataset::new(3, 4, vec![], vec![]).unwrap();
        let buf = encode(&ds);
        assert_eq!(buf.len(), 16);
        let back = read_dataset(&buf[..]).unwrap();
        assert!(back.is_empty());
        assert_eq!((back.dim(), back.num_classes()), (3, 4));
    }

    #[test]
    fn layout_is_little_endian() {
        let ds = Dataset::new(1, 2, vec![0.5], vec![1]).unwrap();
        let buf = encode(&ds);
        assert_eq!(&buf[..4], b"FHD1");
        assert_eq!(&buf[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&buf[16..20], &0.5f32.to_le_bytes());
        assert_eq!(&buf[20..24], &[1, 0, 0, 0]);
    }

    #[test]
    fn bad_magic_truncation_and_labels() {
        let ds = Dataset::new(2, 2, vec![0.1, 0.2, 0.3, 0.4], vec![0, 1]).unwrap();
        let good = encode(&ds);

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(read_dataset(&bad[..]), Err(FhaError::Format(_))));

        assert!(matches!(read_dataset(&good[..good.len() - 1]), Err(FhaError::Format(_))));
        assert!(matches!(read_dataset(&good[..10]), Err(FhaError::Format(_))));

        let mut extra = good.clone();
        extra.push(0);
        assert!(matches!(read_dataset(&extra[..]), Err(FhaError::Format(_))));

        let mut bad_label = good.clone();
        let last = bad_label.len() - 4;
        bad_label[last..].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(read_dataset(&bad_label[..]), Err(FhaError::Format(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            d in 1usize..5,
            classes in 2usize..5,
            rows in proptest::collection::vec((proptest::collection::vec(0.0f32..=1.0, 4), 0u32..100), 0..20),
        ) {
            let mut f = Vec::new();
            let mut l = Vec::new();
            for (r, y) in &rows {
                f.extend_from_slice(&r[..d]);
                l.push(y % classes as u32);
            }
            let ds = Dataset::new(d, classes, f, l).unwrap();
            let back = read_dataset(&encode(&ds)[..]).unwrap();
            prop_assert_eq!(
                back.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                ds.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            prop_assert_eq!(back, ds);
        }
    }
}
