//! Binary feature-file format, the interchange point between the synthetic
//! generator, the trainer, and any external backbone that wants to feed real
//! frame features in.
//!
//! Layout (little-endian):
//!   magic "GLFV" | version u32 = 1 | d u32
//!   per record: person_id u32 | camera_id u32 | T u32 | T*d f64, frame-major
//!
//! Frame-major means frame 0's d values first, i.e. the columns of the
//! in-memory d x T matrix in order. Round-trips are bit-exact.

use crate::error::{GltrError, Result};
use crate::tensor::RealMatrix;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const FEATURE_MAGIC: [u8; 4] = *b"GLFV";
pub const FEATURE_VERSION: u32 = 1;

/// One tracklet's worth of frame features plus its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub person_id: u32,
    pub camera_id: u32,
    /// d x T, one column per frame.
    pub features: RealMatrix,
}

impl SequenceRecord {
    pub fn frame_dim(&self) -> usize {
        self.features.rows()
    }

    pub fn len(&self) -> usize {
        self.features.cols()
    }

    pub fn is_empty(&self) -> bool {
        false // a RealMatrix always has at least one column
    }
}

/// Write records to `path`. `frame_dim` goes into the header and every
/// record must match it; an empty record list produces a header-only file.
pub fn write_features(path: &Path, records: &[SequenceRecord], frame_dim: usize) -> Result<()> {
    if frame_dim == 0 {
        return Err(GltrError::InvalidArgument("frame_dim must be positive".into()));
    }
    for r in records {
        if r.frame_dim() != frame_dim {
            return Err(GltrError::DimensionMismatch(format!(
                "record has d={}, file header has d={}",
                r.frame_dim(),
                frame_dim
            )));
        }
    }
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(frame_dim as u32).to_le_bytes())?;
    for r in records {
        w.write_all(&r.person_id.to_le_bytes())?;
        w.write_all(&r.camera_id.to_le_bytes())?;
        w.write_all(&(r.len() as u32).to_le_bytes())?;
        for t in 0..r.len() {
            for c in 0..frame_dim {
                w.write_all(&r.features.at(c, t).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a feature file back. Returns the header dimension and the records.
pub fn read_features(path: &Path) -> Result<(usize, Vec<SequenceRecord>)> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if magic != FEATURE_MAGIC {
        return Err(GltrError::BadMagic { expected: FEATURE_MAGIC });
    }
    let version = read_u32(&mut r, "version")?;
    if version != FEATURE_VERSION {
        return Err(GltrError::UnsupportedVersion(version));
    }
    let d = read_u32(&mut r, "frame_dim")? as usize;
    if d == 0 {
        return Err(GltrError::InvalidArgument("header frame_dim is zero".into()));
    }

    let mut records = Vec::new();
    loop {
        let mut first = [0u8; 4];
        match r.read(&mut first)? {
            0 => break, // clean end of file
            4 => {}
            n => {
                // A short read at a record boundary can still be a split
                // syscall; try to finish the u32 before giving up.
                r.read_exact(&mut first[n..])
                    .map_err(|_| GltrError::Truncated("mid-record person_id".into()))?;
            }
        }
        let person_id = u32::from_le_bytes(first);
        let camera_id = read_u32(&mut r, "camera_id")?;
        let t_len = read_u32(&mut r, "sequence length")? as usize;
        if t_len == 0 {
            return Err(GltrError::InvalidArgument("zero-length sequence".into()));
        }
        let mut features = RealMatrix::zeros(d, t_len);
        let mut buf = [0u8; 8];
        for t in 0..t_len {
            for c in 0..d {
                read_exact(&mut r, &mut buf, "frame payload")?;
                *features.at_mut(c, t) = f64::from_le_bytes(buf);
            }
        }
        records.push(SequenceRecord { person_id, camera_id, features });
    }
    Ok((d, records))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| GltrError::Truncated(what.to_string()))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("gltr-feature-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn empty_file_is_header_only() {
        let path = tmp("empty.glfv");
        write_features(&path, &[], 5).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 12);
        let (d, records) = read_features(&path).unwrap();
        assert_eq!(d, 5);
        assert!(records.is_empty());
    }

    #[test]
    fn single_record_size_matches_format_arithmetic() {
        let path = tmp("single.glfv");
        let rec = SequenceRecord {
            person_id: 1,
            camera_id: 2,
            features: RealMatrix::from_fn(4, 2, |c, t| (c * 2 + t) as f64),
        };
        write_features(&path, &[rec], 4).unwrap();
        // header 12 + ids/len 12 + 4*2*8 payload.
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 12 + 12 + 64);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let path = tmp("roundtrip.glfv");
        let mut rng = SplitMix64::new(3);
        let records: Vec<SequenceRecord> = (0..100)
            .map(|i| SequenceRecord {
                person_id: i as u32 % 11,
                camera_id: i as u32 % 3,
                features: RealMatrix::from_fn(6, 1 + (i % 9), |_, _| rng.uniform(-10.0, 10.0)),
            })
            .collect();
        write_features(&path, &records, 6).unwrap();
        let (d, back) = read_features(&path).unwrap();
        assert_eq!(d, 6);
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.person_id, b.person_id);
            assert_eq!(a.camera_id, b.camera_id);
            assert_eq!(a.features.data(), b.features.data()); // bitwise
        }
    }

    #[test]
    fn bad_magic_version_truncation_and_dim_mismatch() {
        let path = tmp("bad.glfv");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x04\x00\x00\x00").unwrap();
        assert!(matches!(
            read_features(&path),
            Err(GltrError::BadMagic { .. })
        ));

        std::fs::write(&path, b"GLFV\x09\x00\x00\x00\x04\x00\x00\x00").unwrap();
        assert!(matches!(
            read_features(&path),
            Err(GltrError::UnsupportedVersion(9))
        ));

        // Record header present but payload cut off.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"GLFV");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&7u32.to_le_bytes()); // person
        bytes.extend_from_slice(&1u32.to_le_bytes()); // camera
        bytes.extend_from_slice(&3u32.to_le_bytes()); // T = 3
        bytes.extend_from_slice(&1.5f64.to_le_bytes()); // only one value
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_features(&path), Err(GltrError::Truncated(_))));

        let rec = SequenceRecord {
            person_id: 0,
            camera_id: 0,
            features: RealMatrix::zeros(3, 2),
        };
        assert!(matches!(
            write_features(&path, &[rec], 4),
            Err(GltrError::DimensionMismatch(_))
        ));
    }
}
