//! Binary PGM (P5) label masks, one file per view and hierarchy level.
//!
//! Written as 16-bit (maxval 65535) with big-endian samples per the Netpbm
//! convention; 8-bit files are accepted on read for user-supplied masks.

use std::path::Path;

use crate::error::{Error, Result};

/// Writes labels (row-major, `width * height`) as a 16-bit P5 file.
pub fn save_labels(path: &Path, width: u32, height: u32, labels: &[u16]) -> Result<()> {
    assert_eq!(labels.len(), (width * height) as usize);
    let mut bytes = format!("P5\n{width} {height}\n65535\n").into_bytes();
    bytes.reserve(labels.len() * 2);
    for &v in labels {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a P5 file; returns (width, height, labels).
pub fn load_labels(path: &Path) -> Result<(u32, u32, Vec<u16>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let err = |offset: usize, msg: &str| Error::Parse {
        path: path.into(),
        offset: offset as u64,
        msg: msg.into(),
    };

    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(err(0, "not a P5 file"));
    }
    pos += 2;

    // Header tokens separated by whitespace, '#' starts a comment to EOL.
    let token = |pos: &mut usize| -> Result<u64> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if *pos == start {
            return Err(err(start, "expected integer in header"));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(start, "bad integer in header"))
    };

    let width = token(&mut pos)? as u32;
    let height = token(&mut pos)? as u32;
    let maxval = token(&mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(err(pos, "maxval must be in 1..=65535"));
    }
    // Exactly one whitespace byte separates the header from the samples.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err(pos, "missing whitespace after maxval"));
    }
    pos += 1;

    let n = (width as usize) * (height as usize);
    let wide = maxval > 255;
    let need = pos + n * if wide { 2 } else { 1 };
    if bytes.len() < need {
        return Err(err(bytes.len(), "truncated sample data"));
    }
    let mut labels = Vec::with_capacity(n);
    if wide {
        for i in 0..n {
            labels.push(u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]]));
        }
    } else {
        for i in 0..n {
            labels.push(bytes[pos + i] as u16);
        }
    }
    Ok((width, height, labels))
}
