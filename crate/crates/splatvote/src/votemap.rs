//! Ground-truth 2D vote maps from instance label masks.
//!
//! Every pixel of a mask segment votes for the segment's rounded centroid;
//! segments clipped by the image border are dropped entirely because their
//! visible centroid would be biased.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::pgm;
use crate::io::plane::FloatPlane;

/// Integer label image: 0 = background, k > 0 = segment id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u16>,
    /// Hierarchy level this mask belongs to.
    pub level: usize,
}

impl LabelMask {
    pub fn new(width: u32, height: u32, labels: Vec<u16>, level: usize) -> Self {
        assert_eq!(labels.len(), (width * height) as usize);
        LabelMask {
            width,
            height,
            labels,
            level,
        }
    }

    pub fn load(path: &std::path::Path, level: usize) -> Result<Self> {
        let (width, height, labels) = pgm::load_labels(path)?;
        Ok(LabelMask::new(width, height, labels, level))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        pgm::save_labels(path, self.width, self.height, &self.labels)
    }

    pub fn label(&self, x: u32, y: u32) -> u16 {
        self.labels[(y * self.width + x) as usize]
    }
}

/// Per-pixel ground-truth votes; NaN outside the supervised set P.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteMap2D {
    pub width: u32,
    pub height: u32,
    /// H*W*2 (c_x, c_y); NaN pairs mark unsupervised pixels.
    pub votes: Vec<f64>,
    pub supervised_count: usize,
}

impl VoteMap2D {
    pub fn vote(&self, x: u32, y: u32) -> Option<[f64; 2]> {
        let i = ((y * self.width + x) * 2) as usize;
        let v = [self.votes[i], self.votes[i + 1]];
        if v[0].is_nan() {
            None
        } else {
            Some(v)
        }
    }

    pub fn is_supervised(&self, idx: usize) -> bool {
        !self.votes[2 * idx].is_nan()
    }

    pub fn to_plane(&self) -> FloatPlane {
        FloatPlane::from_f64(self.width, self.height, 2, &self.votes)
    }

    pub fn from_plane(plane: &FloatPlane) -> Result<Self> {
        if plane.channels != 2 {
            return Err(Error::invalid("vote map", "expected a 2-channel plane"));
        }
        let votes: Vec<f64> = plane.data.iter().map(|&v| v as f64).collect();
        let supervised_count = votes.chunks(2).filter(|c| !c[0].is_nan()).count();
        Ok(VoteMap2D {
            width: plane.width,
            height: plane.height,
            votes,
            supervised_count,
        })
    }
}

/// Round half away from zero, the convention fixed for centroid rounding.
fn round_half_away(v: f64) -> f64 {
    v.round()
}

/// Per-segment pixel statistics within a mask.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SegmentStats {
    pub count: u64,
    pub sum_x: u64,
    pub sum_y: u64,
    pub min_x: u32,
    pub min_y: u32,
    pub max_x: u32,
    pub max_y: u32,
}

fn segment_stats(mask: &LabelMask) -> BTreeMap<u16, SegmentStats> {
    let mut stats: BTreeMap<u16, SegmentStats> = BTreeMap::new();
    for y in 0..mask.height {
        for x in 0..mask.width {
            let label = mask.label(x, y);
            if label == 0 {
                continue;
            }
            let s = stats.entry(label).or_insert(SegmentStats {
                count: 0,
                sum_x: 0,
                sum_y: 0,
                min_x: u32::MAX,
                min_y: u32::MAX,
                max_x: 0,
                max_y: 0,
            });
            s.count += 1;
            s.sum_x += x as u64;
            s.sum_y += y as u64;
            s.min_x = s.min_x.min(x);
            s.min_y = s.min_y.min(y);
            s.max_x = s.max_x.max(x);
            s.max_y = s.max_y.max(y);
        }
    }
    stats
}

/// Rounded centroid of one mask segment: round(sum x / count), likewise y.
pub fn segment_centroid(mask: &LabelMask, segment_id: u16) -> Result<(f64, f64)> {
    if segment_id == 0 {
        return Err(Error::invalid("segment", "0 is the background label"));
    }
    let stats = segment_stats(mask);
    let s = stats
        .get(&segment_id)
        .ok_or_else(|| Error::invalid("segment", format!("segment {segment_id} is empty")))?;
    Ok((
        round_half_away(s.sum_x as f64 / s.count as f64),
        round_half_away(s.sum_y as f64 / s.count as f64),
    ))
}

/// Builds the ground-truth vote map: segments whose bounding box comes within
/// `border_margin` pixels of the image border are dropped from the supervised
/// set; every remaining segment pixel votes for its segment centroid.
pub fn build_vote_map(mask: &LabelMask, border_margin: u32) -> VoteMap2D {
    let stats = segment_stats(mask);
    let mut keep: BTreeMap<u16, [f64; 2]> = BTreeMap::new();
    for (&label, s) in &stats {
        let clipped = s.min_x < border_margin
            || s.min_y < border_margin
            || s.max_x >= mask.width - border_margin
            || s.max_y >= mask.height - border_margin;
        if !clipped {
            keep.insert(
                label,
                [
                    round_half_away(s.sum_x as f64 / s.count as f64),
                    round_half_away(s.sum_y as f64 / s.count as f64),
                ],
            );
        }
    }

    let n = (mask.width * mask.height) as usize;
    let mut votes = vec![f64::NAN; n * 2];
    let mut supervised_count = 0usize;
    for (i, &label) in mask.labels.iter().enumerate() {
        if label == 0 {
            continue;
        }
        if let Some(c) = keep.get(&label) {
            votes[2 * i] = c[0];
            votes[2 * i + 1] = c[1];
            supervised_count += 1;
        }
    }
    VoteMap2D {
        width: mask.width,
        height: mask.height,
        votes,
        supervised_count,
    }
}
