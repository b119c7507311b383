//! Evaluation metrics: IoU, mAcc over an IoU threshold, adjusted Rand index,
//! vote-to-centroid errors and vote depth spread.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::camera::CameraRig;
use crate::error::{Error, Result};
use crate::scene::Scene;

/// Intersection over union of two binary masks; 1.0 when both are empty.
pub fn iou(pred: &[bool], gt: &[bool]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::invalid("iou", "mask dimensions differ"));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Fraction of queries with IoU strictly above the threshold.
pub fn m_acc(ious: &[f64], threshold: f64) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    ious.iter().filter(|&&v| v > threshold).count() as f64 / ious.len() as f64
}

fn comb2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index between two labelings of the same items; 1.0 for
/// identical partitions up to renaming, about 0 for independent ones.
pub fn ari(labels_a: &[i64], labels_b: &[i64]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::invalid("ari", "label vectors differ in length"));
    }
    let n = labels_a.len() as u64;
    if n == 0 {
        return Err(Error::invalid("ari", "empty labelings"));
    }
    let mut contingency: BTreeMap<(i64, i64), u64> = BTreeMap::new();
    let mut rows: BTreeMap<i64, u64> = BTreeMap::new();
    let mut cols: BTreeMap<i64, u64> = BTreeMap::new();
    for (&a, &b) in labels_a.iter().zip(labels_b.iter()) {
        *contingency.entry((a, b)).or_insert(0) += 1;
        *rows.entry(a).or_insert(0) += 1;
        *cols.entry(b).or_insert(0) += 1;
    }
    let sum_ij: f64 = contingency.values().map(|&c| comb2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| comb2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| comb2(c)).sum();
    let total = comb2(n);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-12 {
        // Both partitions are trivial (all-singletons or one cluster).
        return Ok(1.0);
    }
    Ok((sum_ij - expected) / (max_index - expected))
}

/// Per-instance vote accuracy against the generator's ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceVoteError {
    pub label: u32,
    pub gaussian_count: usize,
    /// Mean ||vote - centroid|| over the instance's Gaussians.
    pub mean_error: f64,
    /// Fraction of Gaussians with ||vote - centroid|| <= radius_fraction * radius.
    pub frac_within: f64,
    pub radius: f64,
}

/// Computes per-instance vote statistics; `radius_fraction` scales each
/// instance's radius into the accuracy threshold.
pub fn vote_errors(scene: &Scene, level: usize, radius_fraction: f64) -> Vec<InstanceVoteError> {
    scene
        .gt_instances
        .iter()
        .map(|inst| {
            let centroid = inst.centroid_vec();
            let mut count = 0usize;
            let mut sum = 0.0;
            let mut within = 0usize;
            for g in &scene.gaussians {
                if g.instance_label != Some(inst.label) {
                    continue;
                }
                count += 1;
                let err = (g.vote(level) - centroid).norm();
                sum += err;
                if err <= radius_fraction * inst.radius {
                    within += 1;
                }
            }
            InstanceVoteError {
                label: inst.label,
                gaussian_count: count,
                mean_error: if count > 0 { sum / count as f64 } else { 0.0 },
                frac_within: if count > 0 { within as f64 / count as f64 } else { 0.0 },
                radius: inst.radius,
            }
        })
        .collect()
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Mean over views and instances of the per-view standard deviation of an
/// instance's vote depths in that view's camera frame.
pub fn vote_depth_spread(scene: &Scene, rig: &CameraRig, level: usize) -> f64 {
    let mut spreads = Vec::new();
    for view in &rig.views {
        let (row, offset) = crate::raster::depth_row(view);
        for inst in &scene.gt_instances {
            let depths: Vec<f64> = scene
                .gaussians
                .iter()
                .filter(|g| g.instance_label == Some(inst.label))
                .map(|g| row.dot(&g.vote(level)) + offset)
                .collect();
            if depths.len() >= 2 {
                spreads.push(population_std(&depths));
            }
        }
    }
    if spreads.is_empty() {
        return 0.0;
    }
    spreads.iter().sum::<f64>() / spreads.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{RigKind, RigSpec};
    use crate::scene::{Aabb, GaussianPrimitive, GtInstance};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn iou_closed_forms() {
        let a = vec![true, true, false, false];
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let b = vec![false, false, true, true];
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        // pred = top half, gt = left half of a 4x4 image: IoU 1/3.
        let (w, h) = (4usize, 4usize);
        let mut top = vec![false; w * h];
        let mut left = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                if y < h / 2 {
                    top[y * w + x] = true;
                }
                if x < w / 2 {
                    left[y * w + x] = true;
                }
            }
        }
        assert_relative_eq!(iou(&top, &left).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
        // Both empty agree there is nothing.
        let empty = vec![false; 4];
        assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
    }

    #[test]
    fn m_acc_threshold_is_strict() {
        assert_eq!(m_acc(&[1.0, 1.0], 0.25), 1.0);
        assert_eq!(m_acc(&[0.3, 0.2], 0.25), 0.5);
        assert_eq!(m_acc(&[0.25], 0.25), 0.0);
    }

    #[test]
    fn ari_identical_partitions() {
        let a = vec![0i64, 0, 1, 1, 2];
        let b = vec![5i64, 5, 9, 9, 7];
        assert_relative_eq!(ari(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ari_one_cluster_vs_singletons_hand_value() {
        // Contingency: one row (4), columns all 1. sum_ij = 0, sum_a = 6,
        // sum_b = 0, expected = 0, max = 3 -> ARI = 0.
        let a = vec![0i64; 4];
        let b = vec![0i64, 1, 2, 3];
        assert_relative_eq!(ari(&a, &b).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ari_random_labelings_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..100 {
            let n = 500;
            let a: Vec<i64> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let b: Vec<i64> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let v = ari(&a, &b).unwrap();
            assert!(v.abs() < 0.1, "ARI {v} too far from 0");
        }
    }

    fn scene_with_votes(votes: &[(Vector3<f64>, u32)], centroid: [f64; 3], radius: f64) -> Scene {
        let mut bounds = Aabb::empty();
        let mut gaussians = Vec::new();
        for (v, label) in votes {
            let mut g = GaussianPrimitive::isotropic(Vector3::zeros(), 0.1, 1);
            g.offsets[0] = *v;
            g.instance_label = Some(*label);
            bounds.grow(&g.position);
            gaussians.push(g);
        }
        bounds.pad(10.0);
        let mut scene = Scene::new(gaussians, 1, bounds).unwrap();
        scene.gt_instances = vec![GtInstance {
            label: 0,
            centroid,
            radius,
        }];
        scene
    }

    #[test]
    fn vote_error_zero_at_centroid() {
        let c = [1.0, 2.0, 3.0];
        let scene = scene_with_votes(
            &[(Vector3::new(1.0, 2.0, 3.0), 0), (Vector3::new(1.0, 2.0, 3.0), 0)],
            c,
            1.0,
        );
        let stats = vote_errors(&scene, 0, 0.1);
        assert_eq!(stats[0].mean_error, 0.0);
        assert_eq!(stats[0].frac_within, 1.0);
    }

    #[test]
    fn depth_spread_two_point_case() {
        // Votes at centroid +/- delta along the camera axis.
        let delta = 0.25;
        let scene = scene_with_votes(
            &[
                (Vector3::new(0.0, -delta, 0.0), 0),
                (Vector3::new(0.0, delta, 0.0), 0),
            ],
            [0.0, 0.0, 0.0],
            1.0,
        );
        // One camera along -y looking toward +y: depth axis is world y.
        let rig = RigSpec {
            kind: RigKind::Arc,
            count: 1,
            radius: 5.0,
            height: 0.0,
            target: [0.0, 0.0, 0.0],
            arc_degrees: 0.0,
            width: 16,
            image_height: 16,
            fov_degrees: 60.0,
        }
        .build()
        .unwrap();
        assert_relative_eq!(vote_depth_spread(&scene, &rig, 0), delta, epsilon = 1e-9);
    }
}
