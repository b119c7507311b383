//! Raw float image planes: 16-byte header (magic "VSPL", u32 width, height,
//! channels, little-endian) followed by row-major, channel-interleaved f32
//! samples. Used for vote maps, depth maps, ID maps and external feature
//! planes.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"VSPL";

#[derive(Debug, Clone, PartialEq)]
pub struct FloatPlane {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    /// Row-major, channels interleaved per pixel.
    pub data: Vec<f32>,
}

impl FloatPlane {
    pub fn new(width: u32, height: u32, channels: u32, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), (width * height * channels) as usize);
        FloatPlane {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn from_f64(width: u32, height: u32, channels: u32, data: &[f64]) -> Self {
        FloatPlane::new(width, height, channels, data.iter().map(|&v| v as f32).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(16 + self.data.len() * 4);
        bytes.extend_from_slice(MAGIC);
        let mut buf = [0u8; 4];
        for v in [self.width, self.height, self.channels] {
            LittleEndian::write_u32(&mut buf, v);
            bytes.extend_from_slice(&buf);
        }
        for &v in &self.data {
            LittleEndian::write_f32(&mut buf, v);
            bytes.extend_from_slice(&buf);
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<FloatPlane> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let err = |offset: usize, msg: &str| Error::Parse {
            path: path.into(),
            offset: offset as u64,
            msg: msg.into(),
        };
        if bytes.len() < 16 {
            return Err(err(bytes.len(), "file shorter than the 16-byte header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(err(0, "bad magic, expected 'VSPL'"));
        }
        let width = LittleEndian::read_u32(&bytes[4..8]);
        let height = LittleEndian::read_u32(&bytes[8..12]);
        let channels = LittleEndian::read_u32(&bytes[12..16]);
        let n = (width as usize) * (height as usize) * (channels as usize);
        if bytes.len() != 16 + 4 * n {
            return Err(err(bytes.len(), "payload size does not match header"));
        }
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            data.push(LittleEndian::read_f32(&bytes[16 + 4 * i..20 + 4 * i]));
        }
        Ok(FloatPlane {
            width,
            height,
            channels,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_nan() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("votes.vspl");
        let plane = FloatPlane::new(2, 2, 2, vec![1.0, -2.5, f32::NAN, 0.0, 3.5, 4.5, 5.5, 6.5]);
        plane.save(&path).unwrap();
        let back = FloatPlane::load(&path).unwrap();
        assert_eq!((back.width, back.height, back.channels), (2, 2, 2));
        for (a, b) in plane.data.iter().zip(back.data.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.vspl");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        assert!(matches!(FloatPlane::load(&path), Err(Error::Parse { .. })));
    }
}
