//! Tile-based forward splatter.
//!
//! Produces, per pixel: the alpha-blended color, the voting member set M and
//! its weights, the blended 3D vote and its screen projection, member vote
//! depths, and optionally instance-ID values and the records needed by the
//! appearance backward pass.
//!
//! Voting membership intentionally differs from color compositing: a splat
//! joins M iff its alpha exceeds `ALPHA_CUT` and its incoming transmittance is
//! still above `TAU_FRONT`. Every member then contributes exactly 1/|M| to the
//! blended vote, so depth rank does not bias the vote and splats behind an
//! opaque front surface never participate.
//!
//! `render_reference` is the tile-free exhaustive renderer kept as the oracle
//! for the tiled path; both share `blend_pixel` and the same global depth
//! order, so they must agree to well under the 1e-5 contract.

use nalgebra::{Matrix4, Vector3};
use rayon::prelude::*;

use crate::camera::{CameraView, NEAR_PLANE};
use crate::error::{Error, Result};
use crate::scene::Scene;

/// Minimum alpha for a splat to join a pixel's voting member set.
pub const ALPHA_CUT: f64 = 1.0 / 255.0;
/// Minimum incoming transmittance for voting membership; splats arriving
/// after the blend is half occluded are behind the visible surface.
pub const TAU_FRONT: f64 = 0.5;
/// Per-pixel traversal stops once accumulated transmittance drops below this.
pub const TRANSMITTANCE_STOP: f64 = 1e-4;
pub const TILE_SIZE: usize = 16;
/// Splat support: contributions beyond 3 sigma Mahalanobis distance are zero.
const MAHAL_CUTOFF: f64 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    Color,
    Votes,
    InstanceIds,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlendMode {
    /// Blended vote = arithmetic mean of member votes (production mode).
    UniformVote,
    /// Blended vote = sum of alpha-transmittance weighted votes over the full
    /// color traversal (comparison mode).
    AlphaVote,
}

/// Render controls beyond scene and view.
#[derive(Debug, Clone)]
pub struct RenderConfig<'a> {
    pub mode: RenderMode,
    pub blend: BlendMode,
    pub level: usize,
    /// Per-Gaussian labels for the instance-ID map (cluster IDs or ground
    /// truth); -1 marks unlabeled Gaussians.
    pub gaussian_labels: Option<&'a [i32]>,
    /// When set, a pixel gets an ID only if every member agrees on it;
    /// mixed-member pixels become -1. Used for ground-truth mask rendering.
    pub pure_id_pixels: bool,
    /// Record per-pixel color-path contributors (needed by the appearance
    /// backward pass).
    pub record_color_path: bool,
    /// Also compute the project-then-accumulate vote per pixel: members'
    /// votes projected individually and averaged in 2D. Diagnostic for the
    /// instability this renderer avoids by blending in 3D first.
    pub project_first_diagnostic: bool,
}

impl Default for RenderConfig<'_> {
    fn default() -> Self {
        RenderConfig {
            mode: RenderMode::All,
            blend: BlendMode::UniformVote,
            level: 0,
            gaussian_labels: None,
            pure_id_pixels: false,
            record_color_path: false,
            project_first_diagnostic: false,
        }
    }
}

/// Per-pixel blend record.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelBlend {
    pub color: [f64; 3],
    /// Voting member ids, in splat depth order.
    pub members: Vec<u32>,
    /// alpha_i * T_i per member.
    pub weights: Vec<f64>,
    /// Camera-frame depth of each member's own vote.
    pub depths: Vec<f64>,
    /// Blended 3D vote; None when the member set is empty.
    pub vote3d: Option<Vector3<f64>>,
    /// Screen projection of vote3d; None when unsupervised or behind camera.
    pub vote2d: Option<[f64; 2]>,
    pub alpha_accum: f64,
}

impl PixelBlend {
    fn empty() -> Self {
        PixelBlend {
            color: [0.0; 3],
            members: Vec::new(),
            weights: Vec::new(),
            depths: Vec::new(),
            vote3d: None,
            vote2d: None,
            alpha_accum: 0.0,
        }
    }
}

/// Color-path contributors for one pixel, in traversal order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColorPath {
    pub ids: Vec<u32>,
    pub alphas: Vec<f64>,
    /// Incoming transmittance at each contributor.
    pub trans: Vec<f64>,
    /// exp(-0.5 * Mahalanobis^2); alpha = opacity * falloff.
    pub falloffs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub width: u32,
    pub height: u32,
    /// H*W*3 interleaved RGB.
    pub color: Vec<f64>,
    /// H*W*2 projected blended votes; NaN on unsupervised pixels.
    pub vote2d: Vec<f64>,
    /// H*W instance IDs; -1 where none.
    pub instance_ids: Vec<i32>,
    pub pixels: Vec<PixelBlend>,
    pub color_paths: Option<Vec<ColorPath>>,
    /// H*W*2 project-then-accumulate diagnostic votes (NaN unsupervised).
    pub vote2d_project_first: Option<Vec<f64>>,
}

impl RenderOutput {
    pub fn pixel(&self, x: u32, y: u32) -> &PixelBlend {
        &self.pixels[(y * self.width + x) as usize]
    }
}

/// A culled, screen-space-prepared splat.
#[derive(Debug, Clone)]
struct PreparedSplat {
    id: u32,
    center: [f64; 2],
    /// Inverse 2D covariance (a, b, c) for [[a, b], [b, c]].
    conic: [f64; 3],
    /// Ellipse support box in pixel coordinates.
    bbox: [f64; 4],
    /// Camera depth of the Gaussian center (sort key).
    center_z: f64,
    opacity: f64,
    color: Vector3<f64>,
    vote: Vector3<f64>,
    /// Camera depth of the vote.
    vote_z: f64,
}

fn prepare_splats(scene: &Scene, view: &CameraView, level: usize) -> Vec<PreparedSplat> {
    let w2c = &view.world_to_camera;
    let cam_z = |p: &Vector3<f64>| w2c[(2, 0)] * p.x + w2c[(2, 1)] * p.y + w2c[(2, 2)] * p.z + w2c[(2, 3)];

    let mut splats: Vec<PreparedSplat> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let t = view.camera_point(&g.position);
            if t.z <= NEAR_PLANE {
                return None;
            }
            let u = view.fx * t.x / t.z + view.cx;
            let v = view.fy * t.y / t.z + view.cy;
            let cov = view.splat_covariance(g);
            let (a, b, c) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
            let det = a * c - b * b;
            let conic = [c / det, -b / det, a / det];
            let rx = 3.0 * a.sqrt();
            let ry = 3.0 * c.sqrt();
            let vote = g.vote(level);
            Some(PreparedSplat {
                id: i as u32,
                center: [u, v],
                conic,
                bbox: [u - rx, v - ry, u + rx, v + ry],
                center_z: t.z,
                opacity: g.opacity,
                color: g.color,
                vote,
                vote_z: cam_z(&vote),
            })
        })
        .collect();
    // Global front-to-back order; ties broken by Gaussian id for determinism.
    splats.sort_by(|p, q| {
        p.center_z
            .partial_cmp(&q.center_z)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(p.id.cmp(&q.id))
    });
    splats
}

struct ShadedPixel {
    blend: PixelBlend,
    color_path: Option<ColorPath>,
    project_first: Option<[f64; 2]>,
}

/// Composites one pixel from depth-ordered candidate splats. Shared by the
/// tiled and the reference paths so they agree exactly.
fn blend_pixel<'a>(
    candidates: impl Iterator<Item = &'a PreparedSplat>,
    px: f64,
    py: f64,
    view: &CameraView,
    cfg: &RenderConfig,
) -> ShadedPixel {
    let mut blend = PixelBlend::empty();
    let mut color_path = cfg.record_color_path.then(ColorPath::default);
    let mut trans = 1.0f64;
    let mut vote_sum = Vector3::zeros();
    let mut alpha_vote = Vector3::zeros();
    let mut member_votes: Vec<Vector3<f64>> = Vec::new();

    for s in candidates {
        if trans < TRANSMITTANCE_STOP {
            break;
        }
        let dx = px - s.center[0];
        let dy = py - s.center[1];
        let m = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
        if m > MAHAL_CUTOFF {
            continue;
        }
        let falloff = (-0.5 * m).exp();
        let alpha = s.opacity * falloff;

        blend.color[0] += s.color.x * alpha * trans;
        blend.color[1] += s.color.y * alpha * trans;
        blend.color[2] += s.color.z * alpha * trans;
        if let Some(path) = color_path.as_mut() {
            path.ids.push(s.id);
            path.alphas.push(alpha);
            path.trans.push(trans);
            path.falloffs.push(falloff);
        }

        if trans > TAU_FRONT && alpha > ALPHA_CUT {
            blend.members.push(s.id);
            blend.weights.push(alpha * trans);
            blend.depths.push(s.vote_z);
            vote_sum += s.vote;
            if cfg.project_first_diagnostic {
                member_votes.push(s.vote);
            }
        }
        alpha_vote += s.vote * (alpha * trans);

        trans *= 1.0 - alpha;
    }

    blend.alpha_accum = 1.0 - trans;
    if !blend.members.is_empty() {
        let vote3d = match cfg.blend {
            BlendMode::UniformVote => vote_sum / blend.members.len() as f64,
            BlendMode::AlphaVote => alpha_vote,
        };
        blend.vote2d = view
            .world_to_screen(&vote3d)
            .ok()
            .map(|s| [s.u, s.v]);
        blend.vote3d = Some(vote3d);
    }

    let project_first = cfg.project_first_diagnostic.then(|| {
        let mut sum = [0.0f64; 2];
        let mut n = 0usize;
        for v in &member_votes {
            if let Ok(s) = view.world_to_screen(v) {
                sum[0] += s.u;
                sum[1] += s.v;
                n += 1;
            }
        }
        if n > 0 {
            [sum[0] / n as f64, sum[1] / n as f64]
        } else {
            [f64::NAN, f64::NAN]
        }
    });

    ShadedPixel {
        blend,
        color_path,
        project_first,
    }
}

fn resolve_instance_id(blend: &PixelBlend, labels: &[i32], pure: bool) -> i32 {
    match blend.members.first() {
        None => -1,
        Some(&front) => {
            let id = labels[front as usize];
            if pure && blend.members.iter().any(|&m| labels[m as usize] != id) {
                return -1;
            }
            id
        }
    }
}

fn validate(scene: &Scene, cfg: &RenderConfig) -> Result<()> {
    if scene.is_empty() {
        return Err(Error::invalid("render", "scene is empty"));
    }
    if cfg.level >= scene.levels {
        return Err(Error::invalid(
            "render",
            format!("level {} out of range for {} levels", cfg.level, scene.levels),
        ));
    }
    if let Some(labels) = cfg.gaussian_labels {
        if labels.len() != scene.len() {
            return Err(Error::invalid("render", "gaussian_labels length != scene size"));
        }
    }
    Ok(())
}

fn assemble(
    width: u32,
    height: u32,
    shaded: Vec<ShadedPixel>,
    cfg: &RenderConfig,
) -> RenderOutput {
    let n = (width * height) as usize;
    let mut color = vec![0.0f64; n * 3];
    let mut vote2d = vec![f64::NAN; n * 2];
    let mut instance_ids = vec![-1i32; n];
    let mut pixels = Vec::with_capacity(n);
    let mut color_paths = cfg.record_color_path.then(|| Vec::with_capacity(n));
    let mut project_first = cfg.project_first_diagnostic.then(|| vec![f64::NAN; n * 2]);

    for (i, sp) in shaded.into_iter().enumerate() {
        color[3 * i..3 * i + 3].copy_from_slice(&sp.blend.color);
        if let Some(uv) = sp.blend.vote2d {
            vote2d[2 * i] = uv[0];
            vote2d[2 * i + 1] = uv[1];
        }
        if let Some(labels) = cfg.gaussian_labels {
            instance_ids[i] = resolve_instance_id(&sp.blend, labels, cfg.pure_id_pixels);
        }
        if let (Some(planes), Some(uv)) = (project_first.as_mut(), sp.project_first) {
            planes[2 * i] = uv[0];
            planes[2 * i + 1] = uv[1];
        }
        if let Some(paths) = color_paths.as_mut() {
            paths.push(sp.color_path.unwrap_or_default());
        }
        pixels.push(sp.blend);
    }

    RenderOutput {
        width,
        height,
        color,
        vote2d,
        instance_ids,
        pixels,
        color_paths,
        vote2d_project_first: project_first,
    }
}

/// Tile-based forward render.
pub fn render(scene: &Scene, view: &CameraView, cfg: &RenderConfig) -> Result<RenderOutput> {
    validate(scene, cfg)?;
    let (width, height) = (view.width, view.height);
    let splats = prepare_splats(scene, view, cfg.level);

    let tiles_x = (width as usize).div_ceil(TILE_SIZE);
    let tiles_y = (height as usize).div_ceil(TILE_SIZE);
    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (k, s) in splats.iter().enumerate() {
        let tx0 = ((s.bbox[0] / TILE_SIZE as f64).floor() as i64).clamp(0, tiles_x as i64 - 1);
        let ty0 = ((s.bbox[1] / TILE_SIZE as f64).floor() as i64).clamp(0, tiles_y as i64 - 1);
        let tx1 = ((s.bbox[2] / TILE_SIZE as f64).floor() as i64).clamp(0, tiles_x as i64 - 1);
        let ty1 = ((s.bbox[3] / TILE_SIZE as f64).floor() as i64).clamp(0, tiles_y as i64 - 1);
        if s.bbox[2] < 0.0 || s.bbox[3] < 0.0 || s.bbox[0] > width as f64 || s.bbox[1] > height as f64 {
            continue;
        }
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tile_lists[ty as usize * tiles_x + tx as usize].push(k as u32);
            }
        }
    }

    // Tiles are independent and write disjoint pixel ranges; the par_iter
    // result order is fixed by tile index, so scheduling cannot change output.
    let tile_results: Vec<(usize, Vec<ShadedPixel>)> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|t| {
            let tx = t % tiles_x;
            let ty = t / tiles_x;
            let x0 = tx * TILE_SIZE;
            let y0 = ty * TILE_SIZE;
            let x1 = (x0 + TILE_SIZE).min(width as usize);
            let y1 = (y0 + TILE_SIZE).min(height as usize);
            let list = &tile_lists[t];
            let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for y in y0..y1 {
                for x in x0..x1 {
                    out.push(blend_pixel(
                        list.iter().map(|&k| &splats[k as usize]),
                        x as f64 + 0.5,
                        y as f64 + 0.5,
                        view,
                        cfg,
                    ));
                }
            }
            (t, out)
        })
        .collect();

    let n = (width * height) as usize;
    let mut shaded: Vec<Option<ShadedPixel>> = (0..n).map(|_| None).collect();
    for (t, tile) in tile_results {
        let tx = t % tiles_x;
        let ty = t / tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        let x1 = (x0 + TILE_SIZE).min(width as usize);
        let mut it = tile.into_iter();
        for y in y0..(y0 + TILE_SIZE).min(height as usize) {
            for x in x0..x1 {
                shaded[y * width as usize + x] = Some(it.next().unwrap());
            }
        }
    }
    let shaded: Vec<ShadedPixel> = shaded.into_iter().map(|p| p.unwrap()).collect();
    Ok(assemble(width, height, shaded, cfg))
}

/// Exhaustive per-pixel reference renderer (no tiling); the oracle the tiled
/// path is checked against.
pub fn render_reference(scene: &Scene, view: &CameraView, cfg: &RenderConfig) -> Result<RenderOutput> {
    validate(scene, cfg)?;
    let (width, height) = (view.width, view.height);
    let splats = prepare_splats(scene, view, cfg.level);
    let mut shaded = Vec::with_capacity((width * height) as usize);
    for y in 0..height {
        for x in 0..width {
            shaded.push(blend_pixel(
                splats.iter(),
                x as f64 + 0.5,
                y as f64 + 0.5,
                view,
                cfg,
            ));
        }
    }
    Ok(assemble(width, height, shaded, cfg))
}

/// Renders the ground-truth label mask for one view: pixel label =
/// instance_label + 1 of the front member when every member agrees, else 0.
/// The purity rule keeps supervised pixels free of cross-instance and
/// background members, which is what guarantees untouched Gaussians receive
/// no vote gradient at all.
pub fn render_gt_mask(scene: &Scene, view: &CameraView) -> Result<Vec<u16>> {
    let labels: Vec<i32> = scene
        .gaussians
        .iter()
        .map(|g| g.instance_label.map(|l| l as i32 + 1).unwrap_or(-1))
        .collect();
    let cfg = RenderConfig {
        mode: RenderMode::InstanceIds,
        gaussian_labels: Some(&labels),
        pure_id_pixels: true,
        ..RenderConfig::default()
    };
    let out = render(scene, view, &cfg)?;
    Ok(out
        .instance_ids
        .iter()
        .map(|&id| if id < 0 { 0 } else { id as u16 })
        .collect())
}

/// Camera-frame depth row used when chaining vote depths back to offsets.
pub fn depth_row(view: &CameraView) -> (Vector3<f64>, f64) {
    let m: &Matrix4<f64> = &view.world_to_camera;
    (Vector3::new(m[(2, 0)], m[(2, 1)], m[(2, 2)]), m[(2, 3)])
}
