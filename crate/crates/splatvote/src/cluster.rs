//! Vote clustering: background filtering, density-based clustering with
//! noise, and the instance table.
//!
//! The clustering is plain fixed-eps density clustering (a core point has at
//! least `min_pts` neighbors within `eps`, clusters are connected components
//! of core points plus adopted border points, everything else is noise).
//! Neighbor queries go through a uniform grid at cell size eps; the
//! exhaustive-scan variant is kept as the oracle and both share the exact
//! expansion logic, so their labels must match exactly. Labels are
//! canonicalized by renumbering clusters by their lowest member index.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    /// Neighborhood radius in world units.
    pub eps: f64,
    /// Minimum neighborhood size (the point itself counts) for a core point.
    pub min_pts: usize,
    /// Offset-norm threshold below which a Gaussian is background.
    pub background_eps: f64,
}

impl ClusterParams {
    /// Defaults scaled to a scene: eps = 5% of the diagonal, min_pts = 8,
    /// background_eps = 1e-6 of the diagonal.
    pub fn for_scene(scene: &Scene) -> Self {
        let diag = scene.diagonal();
        ClusterParams {
            eps: 0.05 * diag,
            min_pts: 8,
            background_eps: 1e-6 * diag,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::invalid("cluster params", "eps must be positive"));
        }
        if self.min_pts == 0 {
            return Err(Error::invalid("cluster params", "min_pts must be >= 1"));
        }
        Ok(())
    }
}

/// Splits Gaussian ids into (foreground, background) by offset norm at the
/// given level. Untrained Gaussians carry an exact zero offset, so they land
/// in the background for any non-negative threshold.
pub fn filter_background(scene: &Scene, level: usize, background_eps: f64) -> (Vec<usize>, Vec<usize>) {
    let mut foreground = Vec::new();
    let mut background = Vec::new();
    for (i, g) in scene.gaussians.iter().enumerate() {
        if g.offsets[level].norm() <= background_eps {
            background.push(i);
        } else {
            foreground.push(i);
        }
    }
    (foreground, background)
}

fn dbscan_core(n: usize, min_pts: usize, mut neighbors: impl FnMut(usize) -> Vec<usize>) -> Vec<i32> {
    const UNVISITED: i32 = -2;
    const NOISE: i32 = -1;
    let mut labels = vec![UNVISITED; n];
    let mut cluster = 0i32;
    for seed in 0..n {
        if labels[seed] != UNVISITED {
            continue;
        }
        let hood = neighbors(seed);
        if hood.len() < min_pts {
            labels[seed] = NOISE;
            continue;
        }
        labels[seed] = cluster;
        let mut queue: VecDeque<usize> = hood.into_iter().collect();
        while let Some(q) = queue.pop_front() {
            if labels[q] == NOISE {
                labels[q] = cluster; // border point adopted
            }
            if labels[q] != UNVISITED {
                continue;
            }
            labels[q] = cluster;
            let hood_q = neighbors(q);
            if hood_q.len() >= min_pts {
                queue.extend(hood_q);
            }
        }
        cluster += 1;
    }
    labels
}

/// Renumbers clusters so cluster k is the one containing the lowest point
/// index among clusters; noise stays -1.
fn canonicalize(labels: &mut [i32]) {
    let mut remap: HashMap<i32, i32> = HashMap::new();
    let mut next = 0i32;
    for l in labels.iter_mut() {
        if *l < 0 {
            continue;
        }
        let target = *remap.entry(*l).or_insert_with(|| {
            let id = next;
            next += 1;
            id
        });
        *l = target;
    }
}

/// Grid-accelerated density clustering; -1 marks noise.
pub fn cluster_votes(votes: &[Vector3<f64>], params: &ClusterParams) -> Result<Vec<i32>> {
    params.validate()?;
    if votes.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(Error::invalid("cluster", "votes must be finite"));
    }
    let eps = params.eps;
    let cell = |v: &Vector3<f64>| {
        (
            (v.x / eps).floor() as i64,
            (v.y / eps).floor() as i64,
            (v.z / eps).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, v) in votes.iter().enumerate() {
        grid.entry(cell(v)).or_default().push(i);
    }
    let eps2 = eps * eps;
    let neighbors = |i: usize| {
        let c = cell(&votes[i]);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = grid.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                        for &j in ids {
                            if (votes[j] - votes[i]).norm_squared() <= eps2 {
                                out.push(j);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    };
    let mut labels = dbscan_core(votes.len(), params.min_pts, neighbors);
    canonicalize(&mut labels);
    Ok(labels)
}

/// Exhaustive O(n^2) neighbor-scan variant; the oracle for `cluster_votes`.
pub fn cluster_votes_reference(votes: &[Vector3<f64>], params: &ClusterParams) -> Result<Vec<i32>> {
    params.validate()?;
    let eps2 = params.eps * params.eps;
    let neighbors = |i: usize| {
        (0..votes.len())
            .filter(|&j| (votes[j] - votes[i]).norm_squared() <= eps2)
            .collect::<Vec<_>>()
    };
    let mut labels = dbscan_core(votes.len(), params.min_pts, neighbors);
    canonicalize(&mut labels);
    Ok(labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEntry {
    pub id: i32,
    /// Scene indices of the member Gaussians.
    pub gaussian_ids: Vec<usize>,
    pub vote_centroid: [f64; 3],
    /// Aggregated feature vector, attached by the semantic stage.
    #[serde(default)]
    pub feature: Option<Vec<f64>>,
}

/// Cluster id -> member Gaussians plus vote centroid; every Gaussian is in
/// exactly one of instances, noise or background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceTable {
    pub version: u32,
    pub level: usize,
    pub instances: Vec<InstanceEntry>,
    pub noise: Vec<usize>,
    pub background: Vec<usize>,
}

const TABLE_VERSION: u32 = 1;

impl InstanceTable {
    pub fn get(&self, id: i32) -> Option<&InstanceEntry> {
        self.instances.iter().find(|e| e.id == id)
    }

    /// Per-Gaussian cluster labels over the whole scene; -1 for noise and
    /// background.
    pub fn gaussian_labels(&self, scene_len: usize) -> Vec<i32> {
        let mut labels = vec![-1i32; scene_len];
        for entry in &self.instances {
            for &g in &entry.gaussian_ids {
                labels[g] = entry.id;
            }
        }
        labels
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("table serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: InstanceTable = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        if table.version != TABLE_VERSION {
            return Err(Error::Version {
                path: path.into(),
                found: table.version,
                expected: TABLE_VERSION,
            });
        }
        Ok(table)
    }
}

/// Assembles the instance table from foreground cluster labels.
///
/// `foreground` and `labels` run parallel; `background` lists the filtered
/// Gaussian ids.
pub fn build_instance_table(
    scene: &Scene,
    level: usize,
    foreground: &[usize],
    labels: &[i32],
    background: Vec<usize>,
) -> Result<InstanceTable> {
    if foreground.len() != labels.len() {
        return Err(Error::invalid("instance table", "labels length != foreground length"));
    }
    let mut by_cluster: std::collections::BTreeMap<i32, Vec<usize>> = Default::default();
    let mut noise = Vec::new();
    for (&g, &l) in foreground.iter().zip(labels.iter()) {
        if l < 0 {
            noise.push(g);
        } else {
            by_cluster.entry(l).or_default().push(g);
        }
    }
    let instances = by_cluster
        .into_iter()
        .map(|(id, gaussian_ids)| {
            let mut centroid = Vector3::zeros();
            for &g in &gaussian_ids {
                centroid += scene.gaussians[g].vote(level);
            }
            centroid /= gaussian_ids.len() as f64;
            InstanceEntry {
                id,
                gaussian_ids,
                vote_centroid: [centroid.x, centroid.y, centroid.z],
                feature: None,
            }
        })
        .collect();
    Ok(InstanceTable {
        version: TABLE_VERSION,
        level,
        instances,
        noise,
        background,
    })
}
