//! File formats: scene manifests with binary PLY payloads, 16-bit PGM label
//! masks, raw float image planes and PNG exports.

pub mod pgm;
pub mod plane;
pub mod ply;
pub mod png;
