//! Gaussian scene domain types and the synthetic scene generator.
//!
//! Generated scenes sample Gaussians area-uniformly on instance shells, the
//! way reconstruction point clouds concentrate on surfaces, with ground-truth
//! instance labels and centroids recorded for evaluation only. Per-level
//! offset vectors start at exactly zero; untrained Gaussians keep that zero
//! bit-for-bit, which is what background filtering later relies on.

use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ply;

/// One splat: geometry, appearance and the per-level vote offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub position: Vector3<f64>,
    /// Per-axis standard deviations, all positive.
    pub scale: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    /// In [0, 1].
    pub opacity: f64,
    /// RGB in [0, 1].
    pub color: Vector3<f64>,
    /// One offset vector per hierarchy level; the level-l vote is
    /// `position + offsets[l]`.
    pub offsets: Vec<Vector3<f64>>,
    /// Ground truth from the generator; never read by training.
    pub instance_label: Option<u32>,
}

impl GaussianPrimitive {
    /// An isotropic splat with identity rotation, full opacity and gray color.
    pub fn isotropic(position: Vector3<f64>, sigma: f64, levels: usize) -> Self {
        GaussianPrimitive {
            position,
            scale: Vector3::new(sigma, sigma, sigma),
            rotation: UnitQuaternion::identity(),
            opacity: 1.0,
            color: Vector3::new(0.5, 0.5, 0.5),
            offsets: vec![Vector3::zeros(); levels],
            instance_label: None,
        }
    }

    /// The 3D vote at a hierarchy level: position plus learned offset.
    pub fn vote(&self, level: usize) -> Vector3<f64> {
        self.position + self.offsets[level]
    }
}

/// Axis-aligned world-space box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }
    }

    pub fn grow(&mut self, p: &Vector3<f64>) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    pub fn pad(&mut self, margin: f64) {
        for k in 0..3 {
            self.min[k] -= margin;
            self.max[k] += margin;
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn diagonal(&self) -> f64 {
        let d = [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }
}

/// Ground-truth instance metadata recorded by the generator, for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtInstance {
    pub label: u32,
    pub centroid: [f64; 3],
    pub radius: f64,
}

impl GtInstance {
    pub fn centroid_vec(&self) -> Vector3<f64> {
        Vector3::new(self.centroid[0], self.centroid[1], self.centroid[2])
    }
}

/// An ordered set of Gaussians; the list index is the Gaussian's identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<GaussianPrimitive>,
    pub levels: usize,
    pub bounds: Aabb,
    /// Evaluation-only metadata; empty when the scene has no known ground truth.
    pub gt_instances: Vec<GtInstance>,
}

impl Scene {
    pub fn new(gaussians: Vec<GaussianPrimitive>, levels: usize, bounds: Aabb) -> Result<Self> {
        let scene = Scene {
            gaussians,
            levels,
            bounds,
            gt_instances: Vec::new(),
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn diagonal(&self) -> f64 {
        self.bounds.diagonal()
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::invalid("scene", "must have at least one hierarchy level"));
        }
        for (i, g) in self.gaussians.iter().enumerate() {
            if !(g.scale.x > 0.0 && g.scale.y > 0.0 && g.scale.z > 0.0) {
                return Err(Error::invalid("scene", format!("gaussian {i}: non-positive scale")));
            }
            if !(0.0..=1.0).contains(&g.opacity) {
                return Err(Error::invalid("scene", format!("gaussian {i}: opacity outside [0,1]")));
            }
            if (g.rotation.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::invalid("scene", format!("gaussian {i}: quaternion not unit")));
            }
            if g.offsets.len() != self.levels {
                return Err(Error::invalid(
                    "scene",
                    format!("gaussian {i}: {} offsets for {} levels", g.offsets.len(), self.levels),
                ));
            }
            if !self.bounds.contains(&g.position) {
                return Err(Error::invalid("scene", format!("gaussian {i}: position outside bounds")));
            }
        }
        Ok(())
    }

    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        ply::save_scene(self, manifest_path)
    }

    pub fn load(manifest_path: &Path) -> Result<Scene> {
        ply::load_scene(manifest_path)
    }
}

/// Instance surface shape for the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    SphereShell { radius: f64 },
    BoxShell { half_extents: [f64; 3] },
    EllipsoidShell { radii: [f64; 3] },
}

impl ShapeSpec {
    /// Characteristic radius used for splat sizing and the instance-radius
    /// metric.
    pub fn characteristic_radius(&self) -> f64 {
        match self {
            ShapeSpec::SphereShell { radius } => *radius,
            ShapeSpec::BoxShell { half_extents } => {
                (half_extents[0] + half_extents[1] + half_extents[2]) / 3.0
            }
            ShapeSpec::EllipsoidShell { radii } => (radii[0] + radii[1] + radii[2]) / 3.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            ShapeSpec::SphereShell { radius } => *radius > 0.0,
            ShapeSpec::BoxShell { half_extents } => half_extents.iter().all(|&h| h > 0.0),
            ShapeSpec::EllipsoidShell { radii } => radii.iter().all(|&r| r > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("scene spec", "shape extents must be positive"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub shape: ShapeSpec,
    pub center: [f64; 3],
    /// Gaussians sampled on this instance's shell.
    pub count: usize,
    /// Multiplier on the default isotropic splat scale.
    #[serde(default = "default_scale_factor")]
    pub scale_factor: f64,
    /// Fixed RGB; a seeded random color when absent.
    #[serde(default)]
    pub color: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSpec {
    pub count: usize,
    /// Background Gaussians are placed uniformly inside this box.
    pub region: Aabb,
    #[serde(default = "default_scale_factor")]
    pub scale_factor: f64,
}

fn default_scale_factor() -> f64 {
    1.0
}

fn default_opacity() -> f64 {
    0.9
}

fn default_levels() -> usize {
    1
}

/// Deterministic synthetic scene description: same spec + seed gives a
/// bit-identical scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    #[serde(default = "default_levels")]
    pub levels: usize,
    pub instances: Vec<InstanceSpec>,
    #[serde(default)]
    pub background: Option<BackgroundSpec>,
    #[serde(default = "default_opacity")]
    pub opacity: f64,
    /// Radial jitter as a fraction of the shell radius; 0 keeps samples
    /// exactly on the surface.
    #[serde(default)]
    pub surface_jitter: f64,
}

impl SyntheticSceneSpec {
    fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::invalid("scene spec", "levels must be >= 1"));
        }
        if self.instances.is_empty() {
            return Err(Error::invalid("scene spec", "at least one instance required"));
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(Error::invalid("scene spec", "opacity must be in (0, 1]"));
        }
        if self.surface_jitter < 0.0 {
            return Err(Error::invalid("scene spec", "surface_jitter must be >= 0"));
        }
        for inst in &self.instances {
            inst.shape.validate()?;
            if inst.count == 0 {
                return Err(Error::invalid("scene spec", "instance count must be >= 1"));
            }
            if !(inst.scale_factor > 0.0) {
                return Err(Error::invalid("scene spec", "scale_factor must be positive"));
            }
        }
        if let Some(bg) = &self.background {
            if bg.count == 0 {
                return Err(Error::invalid("scene spec", "background count must be >= 1"));
            }
            if (0..3).any(|k| bg.region.max[k] <= bg.region.min[k]) {
                return Err(Error::invalid("scene spec", "background region is degenerate"));
            }
        }
        Ok(())
    }
}

fn unit_sphere_dir(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Area-uniform sample on the shell surface, relative to the shape center.
fn sample_shell(shape: &ShapeSpec, jitter: f64, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let radial = |rng: &mut ChaCha8Rng| {
        if jitter > 0.0 {
            1.0 + jitter * rng.gen_range(-1.0..=1.0)
        } else {
            1.0
        }
    };
    match shape {
        ShapeSpec::SphereShell { radius } => unit_sphere_dir(rng) * (*radius * radial(rng)),
        ShapeSpec::EllipsoidShell { radii } => {
            let [a, b, c] = *radii;
            let g_max = (b * c).max(a * c).max(a * b);
            // Rejection sampling against the surface area density.
            loop {
                let u = unit_sphere_dir(rng);
                let g = ((b * c * u.x).powi(2) + (a * c * u.y).powi(2) + (a * b * u.z).powi(2))
                    .sqrt();
                let accept: f64 = rng.gen();
                if accept * g_max <= g {
                    return Vector3::new(a * u.x, b * u.y, c * u.z) * radial(rng);
                }
            }
        }
        ShapeSpec::BoxShell { half_extents } => {
            let [hx, hy, hz] = *half_extents;
            let areas = [hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy];
            let total: f64 = areas.iter().sum();
            let mut pick = rng.gen_range(0.0..total);
            let mut face = 0;
            for (i, a) in areas.iter().enumerate() {
                if pick < *a {
                    face = i;
                    break;
                }
                pick -= a;
            }
            let u: f64 = rng.gen_range(-1.0..=1.0);
            let v: f64 = rng.gen_range(-1.0..=1.0);
            let n = jitter * rng.gen_range(-1.0..=1.0);
            match face {
                0 => Vector3::new(hx * (1.0 + n), u * hy, v * hz),
                1 => Vector3::new(-hx * (1.0 + n), u * hy, v * hz),
                2 => Vector3::new(u * hx, hy * (1.0 + n), v * hz),
                3 => Vector3::new(u * hx, -hy * (1.0 + n), v * hz),
                4 => Vector3::new(u * hx, v * hy, hz * (1.0 + n)),
                _ => Vector3::new(u * hx, v * hy, -hz * (1.0 + n)),
            }
        }
    }
}

/// Samples a scene from the spec: Gaussians on instance shells with labels
/// set, optional unlabeled background fill, all offsets exactly zero.
pub fn generate_synthetic_scene(spec: &SyntheticSceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut gaussians = Vec::new();
    let mut gt_instances = Vec::new();
    let mut max_scale: f64 = 0.0;

    for (label, inst) in spec.instances.iter().enumerate() {
        let center = Vector3::new(inst.center[0], inst.center[1], inst.center[2]);
        let char_r = inst.shape.characteristic_radius();
        let sigma = inst.scale_factor * char_r / (inst.count as f64).sqrt();
        max_scale = max_scale.max(sigma);
        let color = match inst.color {
            Some(c) => Vector3::new(c[0], c[1], c[2]),
            None => Vector3::new(
                rng.gen_range(0.15..0.95),
                rng.gen_range(0.15..0.95),
                rng.gen_range(0.15..0.95),
            ),
        };
        gt_instances.push(GtInstance {
            label: label as u32,
            centroid: inst.center,
            radius: char_r,
        });
        for _ in 0..inst.count {
            let p = center + sample_shell(&inst.shape, spec.surface_jitter, &mut rng);
            gaussians.push(GaussianPrimitive {
                position: p,
                scale: Vector3::new(sigma, sigma, sigma),
                rotation: UnitQuaternion::identity(),
                opacity: spec.opacity,
                color,
                offsets: vec![Vector3::zeros(); spec.levels],
                instance_label: Some(label as u32),
            });
        }
    }

    if let Some(bg) = &spec.background {
        let ext = [
            bg.region.max[0] - bg.region.min[0],
            bg.region.max[1] - bg.region.min[1],
            bg.region.max[2] - bg.region.min[2],
        ];
        let char_r = (ext[0] + ext[1] + ext[2]) / 6.0;
        let sigma = bg.scale_factor * char_r / (bg.count as f64).sqrt();
        max_scale = max_scale.max(sigma);
        for _ in 0..bg.count {
            let p = Vector3::new(
                rng.gen_range(bg.region.min[0]..=bg.region.max[0]),
                rng.gen_range(bg.region.min[1]..=bg.region.max[1]),
                rng.gen_range(bg.region.min[2]..=bg.region.max[2]),
            );
            let color = Vector3::new(
                rng.gen_range(0.2..0.7),
                rng.gen_range(0.2..0.7),
                rng.gen_range(0.2..0.7),
            );
            gaussians.push(GaussianPrimitive {
                position: p,
                scale: Vector3::new(sigma, sigma, sigma),
                rotation: UnitQuaternion::identity(),
                opacity: spec.opacity,
                color,
                offsets: vec![Vector3::zeros(); spec.levels],
                instance_label: None,
            });
        }
    }

    let mut bounds = Aabb::empty();
    for g in &gaussians {
        bounds.grow(&g.position);
    }
    bounds.pad(3.0 * max_scale + 1e-9);

    let mut scene = Scene::new(gaussians, spec.levels, bounds)?;
    scene.gt_instances = gt_instances;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_spec(seed: u64) -> SyntheticSceneSpec {
        SyntheticSceneSpec {
            seed,
            levels: 1,
            instances: vec![InstanceSpec {
                shape: ShapeSpec::SphereShell { radius: 1.0 },
                center: [0.0, 0.0, 0.0],
                count: 100,
                scale_factor: 1.0,
                color: None,
            }],
            background: None,
            opacity: 0.9,
            surface_jitter: 0.0,
        }
    }

    #[test]
    fn sphere_samples_lie_on_surface() {
        let scene = generate_synthetic_scene(&sphere_spec(7)).unwrap();
        assert_eq!(scene.len(), 100);
        for g in &scene.gaussians {
            assert!((g.position.norm() - 1.0).abs() < 1e-12);
            assert_eq!(g.instance_label, Some(0));
            assert_eq!(g.offsets[0], Vector3::zeros());
        }
    }

    #[test]
    fn jitter_bounds_radial_distance() {
        let mut spec = sphere_spec(7);
        spec.surface_jitter = 0.05;
        let scene = generate_synthetic_scene(&spec).unwrap();
        for g in &scene.gaussians {
            let r = g.position.norm();
            assert!(r >= 0.95 - 1e-12 && r <= 1.05 + 1e-12, "r = {r}");
        }
    }

    #[test]
    fn two_spheres_get_distinct_labels() {
        let spec = SyntheticSceneSpec {
            seed: 3,
            levels: 1,
            instances: vec![
                InstanceSpec {
                    shape: ShapeSpec::SphereShell { radius: 1.0 },
                    center: [-5.0, 0.0, 0.0],
                    count: 50,
                    scale_factor: 1.0,
                    color: None,
                },
                InstanceSpec {
                    shape: ShapeSpec::SphereShell { radius: 1.0 },
                    center: [5.0, 0.0, 0.0],
                    count: 50,
                    scale_factor: 1.0,
                    color: None,
                },
            ],
            background: None,
            opacity: 0.9,
            surface_jitter: 0.0,
        };
        let scene = generate_synthetic_scene(&spec).unwrap();
        for g in &scene.gaussians {
            let label = g.instance_label.unwrap();
            let center = Vector3::new(if label == 0 { -5.0 } else { 5.0 }, 0.0, 0.0);
            assert!((g.position - center).norm() <= 1.0 + 1e-12);
        }
        let labels: std::collections::BTreeSet<u32> =
            scene.gaussians.iter().filter_map(|g| g.instance_label).collect();
        assert_eq!(labels.into_iter().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn generator_is_deterministic() {
        let a = generate_synthetic_scene(&sphere_spec(42)).unwrap();
        let b = generate_synthetic_scene(&sphere_spec(42)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_scene(&sphere_spec(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = sphere_spec(1);
        spec.instances[0].count = 0;
        assert!(generate_synthetic_scene(&spec).is_err());

        let mut spec = sphere_spec(1);
        spec.instances[0].shape = ShapeSpec::SphereShell { radius: -1.0 };
        assert!(generate_synthetic_scene(&spec).is_err());

        let mut spec = sphere_spec(1);
        spec.instances.clear();
        assert!(generate_synthetic_scene(&spec).is_err());
    }

    #[test]
    fn box_and_ellipsoid_shells_sample_on_surface() {
        let spec = SyntheticSceneSpec {
            seed: 9,
            levels: 2,
            instances: vec![
                InstanceSpec {
                    shape: ShapeSpec::BoxShell { half_extents: [1.0, 2.0, 0.5] },
                    center: [0.0, 0.0, 0.0],
                    count: 200,
                    scale_factor: 1.0,
                    color: None,
                },
                InstanceSpec {
                    shape: ShapeSpec::EllipsoidShell { radii: [0.5, 0.5, 2.0] },
                    center: [10.0, 0.0, 0.0],
                    count: 200,
                    scale_factor: 1.0,
                    color: None,
                },
            ],
            background: None,
            opacity: 0.9,
            surface_jitter: 0.0,
        };
        let scene = generate_synthetic_scene(&spec).unwrap();
        for g in scene.gaussians.iter().filter(|g| g.instance_label == Some(0)) {
            let p = g.position;
            let on_x = (p.x.abs() - 1.0).abs() < 1e-12 && p.y.abs() <= 2.0 && p.z.abs() <= 0.5;
            let on_y = (p.y.abs() - 2.0).abs() < 1e-12 && p.x.abs() <= 1.0 && p.z.abs() <= 0.5;
            let on_z = (p.z.abs() - 0.5).abs() < 1e-12 && p.x.abs() <= 1.0 && p.y.abs() <= 2.0;
            assert!(on_x || on_y || on_z, "box sample off surface: {p:?}");
        }
        for g in scene.gaussians.iter().filter(|g| g.instance_label == Some(1)) {
            let p = g.position - Vector3::new(10.0, 0.0, 0.0);
            let val = (p.x / 0.5).powi(2) + (p.y / 0.5).powi(2) + (p.z / 2.0).powi(2);
            assert!((val - 1.0).abs() < 1e-9, "ellipsoid sample off surface: {val}");
        }
        assert_eq!(scene.levels, 2);
        assert!(scene.gaussians.iter().all(|g| g.offsets.len() == 2));
    }

    #[test]
    fn background_is_unlabeled_and_inside_region() {
        let mut spec = sphere_spec(5);
        spec.background = Some(BackgroundSpec {
            count: 30,
            region: Aabb { min: [-4.0, -4.0, -3.0], max: [4.0, 4.0, -2.0] },
            scale_factor: 1.0,
        });
        let scene = generate_synthetic_scene(&spec).unwrap();
        let bg: Vec<_> = scene.gaussians.iter().filter(|g| g.instance_label.is_none()).collect();
        assert_eq!(bg.len(), 30);
        for g in &bg {
            assert!(g.position.z <= -2.0 && g.position.z >= -3.0);
        }
    }
}
