//! "NCDS v1" dataset files.
//!
//! Layout (little-endian): magic `NCDS`, u8 version, u32 {num_samples, C, H, W},
//! then per sample u32 id, u8 true_label, u8 train_label, H*W u8 pixels;
//! finally a u32 CRC32 of every preceding byte. The split tag is kept in a
//! sidecar text file `<path>.manifest` holding a `split=train|test` line.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, Sample, SplitTag};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"NCDS";
pub const VERSION: u8 = 1;
const WHAT: &str = "NCDS";
const HEADER_LEN: usize = 4 + 1 + 4 * 4;
const TRAILER_LEN: usize = 4;

pub fn write_ncds(d: &Dataset) -> Result<Vec<u8>> {
    d.validate()?;
    let per = 6 + d.pixels_per_image();
    let mut buf = Vec::with_capacity(HEADER_LEN + d.len() * per + TRAILER_LEN);
    buf.extend_from_slice(&MAGIC);
    buf.push(VERSION);
    for v in [d.len(), d.num_classes, d.height, d.width] {
        let v = u32::try_from(v).map_err(|_| Error::invalid("dimension exceeds u32"))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for s in &d.samples {
        buf.extend_from_slice(&s.id.to_le_bytes());
        buf.push(s.true_label);
        buf.push(s.train_label);
        buf.extend_from_slice(&s.pixels);
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn read_ncds(bytes: &[u8], split: SplitTag) -> Result<Dataset> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            what: WHAT,
            expected: HEADER_LEN + TRAILER_LEN,
            actual: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            what: WHAT,
            found: bytes[..4].try_into().unwrap(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            what: WHAT,
            expected: HEADER_LEN + TRAILER_LEN,
            actual: bytes.len(),
        });
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion {
            what: WHAT,
            version: bytes[4],
        });
    }
    let n = u32_at(bytes, 5) as usize;
    let classes = u32_at(bytes, 9) as usize;
    let height = u32_at(bytes, 13) as usize;
    let width = u32_at(bytes, 17) as usize;
    let per = height
        .checked_mul(width)
        .and_then(|p| p.checked_add(6))
        .ok_or_else(|| Error::Malformed {
            what: WHAT,
            detail: "image size overflows".into(),
        })?;
    let expected = n
        .checked_mul(per)
        .and_then(|b| b.checked_add(HEADER_LEN + TRAILER_LEN))
        .ok_or_else(|| Error::Malformed {
            what: WHAT,
            detail: "payload size overflows".into(),
        })?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            what: WHAT,
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Malformed {
            what: WHAT,
            detail: format!(
                "{} trailing bytes after the checksum",
                bytes.len() - expected
            ),
        });
    }
    let body = &bytes[..expected - TRAILER_LEN];
    let stored = u32_at(bytes, expected - TRAILER_LEN);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum {
            what: WHAT,
            stored,
            computed,
        });
    }

    let pixels = height * width;
    let samples = body[HEADER_LEN..]
        .chunks_exact(per)
        .map(|rec| Sample {
            id: u32_at(rec, 0),
            true_label: rec[4],
            train_label: rec[5],
            pixels: rec[6..6 + pixels].to_vec(),
        })
        .collect();
    Dataset::new(samples, classes, height, width, split).map_err(|e| Error::Malformed {
        what: WHAT,
        detail: e.to_string(),
    })
}

/// Path of the sidecar manifest that records the split tag.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_ncds(d)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, format!("split={}\n", d.split)).map_err(|e| Error::io(side, e))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let manifest = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let split = manifest
        .lines()
        .find_map(|l| l.trim().strip_prefix("split="))
        .ok_or_else(|| Error::Malformed {
            what: "dataset manifest",
            detail: format!("{} has no `split=` line", side.display()),
        })?
        .parse()?;
    read_ncds(&bytes, split)
}

#[cfg(test)]
mod tests {
    use super::super::test_support::with_counts;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ncds");
        let d = with_counts(&[3, 2, 4], 9).with_split(SplitTag::Test);
        save_dataset(&d, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, d);
        assert_eq!(write_ncds(&back).unwrap(), fs::read(&path).unwrap());
    }

    #[test]
    fn header_layout() {
        let d = with_counts(&[1, 1], 8);
        let bytes = write_ncds(&d).unwrap();
        assert_eq!(&bytes[..5], &[0x4E, 0x43, 0x44, 0x53, 1]);
        assert_eq!(u32_at(&bytes, 5), 2);
        assert_eq!(u32_at(&bytes, 9), 2);
        assert_eq!(bytes.len(), HEADER_LEN + 2 * (6 + 64) + TRAILER_LEN);
    }

    #[test]
    fn bad_magic_is_reported() {
        let mut bytes = write_ncds(&with_counts(&[2, 2], 8)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            read_ncds(&bytes, SplitTag::Train),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn truncation_names_byte_counts() {
        let bytes = write_ncds(&with_counts(&[2, 2], 8)).unwrap();
        let full = bytes.len();
        let cut = HEADER_LEN + 6 + 30; // inside the first image
        match read_ncds(&bytes[..cut], SplitTag::Train) {
            Err(Error::Truncated {
                expected, actual, ..
            }) => {
                assert_eq!(expected, full);
                assert_eq!(actual, cut);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
        let msg = read_ncds(&bytes[..cut], SplitTag::Train)
            .unwrap_err()
            .to_string();
        assert!(msg.contains(&full.to_string()) && msg.contains(&cut.to_string()));
    }

    #[test]
    fn checksum_failure_is_distinct() {
        let mut bytes = write_ncds(&with_counts(&[2, 2], 8)).unwrap();
        bytes[HEADER_LEN + 10] ^= 0xFF;
        assert!(matches!(
            read_ncds(&bytes, SplitTag::Train),
            Err(Error::Checksum { .. })
        ));
    }

    #[test]
    fn version_and_trailing_bytes() {
        let mut bytes = write_ncds(&with_counts(&[1, 1], 8)).unwrap();
        bytes.push(0);
        assert!(matches!(
            read_ncds(&bytes, SplitTag::Train),
            Err(Error::Malformed { .. })
        ));
        bytes.pop();
        bytes[4] = 2;
        assert!(matches!(
            read_ncds(&bytes, SplitTag::Train),
            Err(Error::UnsupportedVersion { version: 2, .. })
        ));
    }

    #[test]
    fn missing_sidecar_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ncds");
        fs::write(&path, write_ncds(&with_counts(&[1, 1], 8)).unwrap()).unwrap();
        assert!(load_dataset(&path).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            side in 8usize..12,
            labels in prop::collection::vec((0u8..5, 0u8..5), 1..20),
            seed in any::<u8>(),
        ) {
            let samples = labels.iter().enumerate().map(|(i, &(t, y))| Sample {
                id: (i * 3) as u32,
                true_label: t,
                train_label: y,
                pixels: (0..side * side).map(|p| (p as u8).wrapping_mul(seed).wrapping_add(i as u8)).collect(),
            }).collect();
            let d = Dataset::new(samples, 5, side, side, SplitTag::Train).unwrap();
            let bytes = write_ncds(&d).unwrap();
            prop_assert_eq!(read_ncds(&bytes, SplitTag::Train).unwrap(), d);
        }
    }
}
