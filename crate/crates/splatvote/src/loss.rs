//! Training objectives: vote loss, depth distortion, reconstruction loss and
//! their composite.
//!
//! All reductions run in fixed index order so losses are identical from run
//! to run regardless of thread count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RenderOutput;
use crate::votemap::VoteMap2D;

/// Composite loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_vote: f64,
    pub lambda_depth: f64,
    /// Share of the D-SSIM term inside the reconstruction loss, in [0, 1].
    pub lambda_dssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_vote: 1.0,
            lambda_depth: 0.1,
            lambda_dssim: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_vote < 0.0 || self.lambda_depth < 0.0 {
            return Err(Error::invalid("loss weights", "lambdas must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.lambda_dssim) {
            return Err(Error::invalid("loss weights", "lambda_dssim must be in [0, 1]"));
        }
        Ok(())
    }
}

/// One training step's loss breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_color: f64,
    pub l_vote: f64,
    pub l_depth: f64,
    pub total: f64,
    pub supervised_pixel_count: usize,
}

/// Composes the total: l_color + lambda_vote * l_vote + lambda_depth * l_depth.
pub fn rvd_total(
    l_color: f64,
    vote: &VoteLoss,
    depth: &DepthLoss,
    weights: &LossWeights,
) -> LossReport {
    LossReport {
        l_color,
        l_vote: vote.value,
        l_depth: depth.value,
        total: l_color + weights.lambda_vote * vote.value + weights.lambda_depth * depth.value,
        supervised_pixel_count: vote.pixel_count,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteLoss {
    pub value: f64,
    /// |P'|: supervised pixels with a projectable blended vote.
    pub pixel_count: usize,
    /// Set when no pixel qualified and the loss defaulted to zero.
    pub empty: bool,
}

/// Mean L1 distance between projected blended votes and ground-truth votes
/// over P' = supervised pixels with a non-empty member set.
pub fn vote_loss(render: &RenderOutput, gt: &VoteMap2D) -> Result<VoteLoss> {
    if render.width != gt.width || render.height != gt.height {
        return Err(Error::invalid("vote loss", "render and vote map dimensions differ"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    let n = (render.width * render.height) as usize;
    for i in 0..n {
        if !gt.is_supervised(i) {
            continue;
        }
        let u = render.vote2d[2 * i];
        if u.is_nan() {
            continue;
        }
        let v = render.vote2d[2 * i + 1];
        sum += (u - gt.votes[2 * i]).abs() + (v - gt.votes[2 * i + 1]).abs();
        count += 1;
    }
    if count == 0 {
        return Ok(VoteLoss {
            value: 0.0,
            pixel_count: 0,
            empty: true,
        });
    }
    Ok(VoteLoss {
        value: sum / count as f64,
        pixel_count: count,
        empty: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthVariant {
    /// Pairwise |z_i - z_j| weighted by omega_i * omega_j (comparison mode).
    Weighted,
    /// Plain pairwise |z_i - z_j| (production mode).
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthLoss {
    pub value: f64,
    pub pixel_count: usize,
}

/// Sum over unordered pairs of |z_i - z_j| in O(n log n): over sorted values,
/// sum_k (2k - n + 1) * z_(k).
pub fn pair_sum_sorted(depths: &[f64]) -> f64 {
    let mut z = depths.to_vec();
    z.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = z.len();
    z.iter()
        .enumerate()
        .map(|(k, &v)| (2.0 * k as f64 - n as f64 + 1.0) * v)
        .sum()
}

/// The quadratic pair loop; oracle for `pair_sum_sorted` and the weighted path.
pub fn pair_sum_quadratic(depths: &[f64], weights: Option<&[f64]>) -> f64 {
    let n = depths.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (depths[i] - depths[j]).abs();
            sum += match weights {
                Some(w) => w[i] * w[j] * d,
                None => d,
            };
        }
    }
    sum
}

fn pair_count(n: usize) -> f64 {
    (n * (n - 1) / 2) as f64
}

/// Per-pixel pairwise depth term, averaged over supervised pixels with a
/// non-empty member set; each pixel's sum is divided by its pair count unless
/// `normalize_pairs` is off.
pub fn depth_distortion(
    render: &RenderOutput,
    gt: &VoteMap2D,
    variant: DepthVariant,
    normalize_pairs: bool,
) -> Result<DepthLoss> {
    if render.width != gt.width || render.height != gt.height {
        return Err(Error::invalid("depth loss", "render and vote map dimensions differ"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, px) in render.pixels.iter().enumerate() {
        if !gt.is_supervised(i) || px.members.is_empty() {
            continue;
        }
        count += 1;
        let n = px.depths.len();
        if n < 2 {
            continue;
        }
        let raw = match variant {
            DepthVariant::Unweighted => pair_sum_sorted(&px.depths),
            DepthVariant::Weighted => pair_sum_quadratic(&px.depths, Some(&px.weights)),
        };
        sum += if normalize_pairs { raw / pair_count(n) } else { raw };
    }
    if count == 0 {
        return Ok(DepthLoss {
            value: 0.0,
            pixel_count: 0,
        });
    }
    Ok(DepthLoss {
        value: sum / count as f64,
        pixel_count: count,
    })
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

pub(crate) fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Valid-region separable correlation with an 11-tap kernel.
/// Output is (w - 10) x (h - 10).
pub(crate) fn corr_valid(img: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - (SSIM_WINDOW - 1);
    let oh = h - (SSIM_WINDOW - 1);
    let mut horiz = vec![0.0f64; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * img[y * w + x + k];
            }
            horiz[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0f64; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * horiz[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Raw windowed moments of one channel pair, on the valid region.
pub(crate) struct SsimMoments {
    pub ex: Vec<f64>,
    pub ey: Vec<f64>,
    pub exx: Vec<f64>,
    pub eyy: Vec<f64>,
    pub exy: Vec<f64>,
    pub ow: usize,
    pub oh: usize,
}

pub(crate) fn ssim_moments(x: &[f64], y: &[f64], w: usize, h: usize) -> SsimMoments {
    let kernel = ssim_kernel();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y.iter()).map(|(a, b)| a * b).collect();
    SsimMoments {
        ex: corr_valid(x, w, h, &kernel),
        ey: corr_valid(y, w, h, &kernel),
        exx: corr_valid(&xx, w, h, &kernel),
        eyy: corr_valid(&yy, w, h, &kernel),
        exy: corr_valid(&xy, w, h, &kernel),
        ow: w - (SSIM_WINDOW - 1),
        oh: h - (SSIM_WINDOW - 1),
    }
}

/// Per-window SSIM value from raw moments.
pub(crate) fn ssim_value(ex: f64, ey: f64, exx: f64, eyy: f64, exy: f64) -> f64 {
    let var_x = exx - ex * ex;
    let var_y = eyy - ey * ey;
    let cov = exy - ex * ey;
    ((2.0 * ex * ey + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((ex * ex + ey * ey + SSIM_C1) * (var_x + var_y + SSIM_C2))
}

/// Mean SSIM between two single-channel images (valid-region windows,
/// 11x11 Gaussian weights, sigma 1.5, stabilizers for unit-range data).
pub fn ssim(x: &[f64], y: &[f64], w: usize, h: usize) -> Result<f64> {
    if x.len() != w * h || y.len() != w * h {
        return Err(Error::invalid("ssim", "buffer does not match dimensions"));
    }
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid("ssim", "image smaller than the 11x11 window"));
    }
    let m = ssim_moments(x, y, w, h);
    let n = m.ow * m.oh;
    let mut sum = 0.0;
    for i in 0..n {
        sum += ssim_value(m.ex[i], m.ey[i], m.exx[i], m.eyy[i], m.exy[i]);
    }
    Ok(sum / n as f64)
}

fn channel(img: &[f64], ch: usize) -> Vec<f64> {
    img.iter().skip(ch).step_by(3).copied().collect()
}

/// Reconstruction loss: (1 - lambda_dssim) * mean|dC| + lambda_dssim * (1 - SSIM) / 2
/// over interleaved RGB buffers in [0, 1].
pub fn color_loss(
    rendered: &[f64],
    gt: &[f64],
    width: u32,
    height: u32,
    lambda_dssim: f64,
) -> Result<f64> {
    let n = (width * height) as usize * 3;
    if rendered.len() != n || gt.len() != n {
        return Err(Error::invalid("color loss", "image dimensions differ"));
    }
    let l1 = rendered
        .iter()
        .zip(gt.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n as f64;
    if lambda_dssim == 0.0 {
        return Ok(l1);
    }
    let mut mssim = 0.0;
    for ch in 0..3 {
        mssim += ssim(
            &channel(rendered, ch),
            &channel(gt, ch),
            width as usize,
            height as usize,
        )?;
    }
    mssim /= 3.0;
    Ok((1.0 - lambda_dssim) * l1 + lambda_dssim * (1.0 - mssim) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::PixelBlend;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn render_with(pixels: Vec<PixelBlend>, width: u32, height: u32) -> RenderOutput {
        let n = (width * height) as usize;
        assert_eq!(pixels.len(), n);
        let mut vote2d = vec![f64::NAN; 2 * n];
        for (i, p) in pixels.iter().enumerate() {
            if let Some(uv) = p.vote2d {
                vote2d[2 * i] = uv[0];
                vote2d[2 * i + 1] = uv[1];
            }
        }
        RenderOutput {
            width,
            height,
            color: vec![0.0; 3 * n],
            vote2d,
            instance_ids: vec![-1; n],
            pixels,
            color_paths: None,
            vote2d_project_first: None,
        }
    }

    fn pixel(members: Vec<u32>, weights: Vec<f64>, depths: Vec<f64>, vote2d: Option<[f64; 2]>) -> PixelBlend {
        PixelBlend {
            color: [0.0; 3],
            members,
            weights,
            depths,
            vote3d: None,
            vote2d,
            alpha_accum: 0.0,
        }
    }

    fn empty_pixel() -> PixelBlend {
        pixel(Vec::new(), Vec::new(), Vec::new(), None)
    }

    fn vote_map(width: u32, height: u32, votes: &[(u32, u32, f64, f64)]) -> VoteMap2D {
        let n = (width * height) as usize;
        let mut data = vec![f64::NAN; 2 * n];
        for &(x, y, cx, cy) in votes {
            let i = (y * width + x) as usize;
            data[2 * i] = cx;
            data[2 * i + 1] = cy;
        }
        VoteMap2D {
            width,
            height,
            votes: data,
            supervised_count: votes.len(),
        }
    }

    #[test]
    fn vote_loss_zero_when_exact() {
        let pixels = vec![
            pixel(vec![0], vec![0.5], vec![1.0], Some([3.0, 4.0])),
            empty_pixel(),
        ];
        let render = render_with(pixels, 2, 1);
        let gt = vote_map(2, 1, &[(0, 0, 3.0, 4.0)]);
        let l = vote_loss(&render, &gt).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(l.pixel_count, 1);
        assert!(!l.empty);
    }

    #[test]
    fn vote_loss_single_pixel_formula() {
        let pixels = vec![pixel(vec![0], vec![0.5], vec![1.0], Some([4.0, 6.0]))];
        let render = render_with(pixels, 1, 1);
        let gt = vote_map(1, 1, &[(0, 0, 3.0, 4.0)]);
        assert_eq!(vote_loss(&render, &gt).unwrap().value, 3.0);
    }

    #[test]
    fn vote_loss_matches_exhaustive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (w, h) = (6u32, 5u32);
        let mut pixels = Vec::new();
        let mut gt_votes = Vec::new();
        let mut expected = 0.0;
        let mut count = 0usize;
        for y in 0..h {
            for x in 0..w {
                if rng.gen_bool(0.6) {
                    let pred = [rng.gen_range(0.0..6.0), rng.gen_range(0.0..5.0)];
                    let tgt = (rng.gen_range(0.0..6.0f64).round(), rng.gen_range(0.0..5.0f64).round());
                    pixels.push(pixel(vec![0], vec![0.5], vec![1.0], Some(pred)));
                    gt_votes.push((x, y, tgt.0, tgt.1));
                    expected += (pred[0] - tgt.0).abs() + (pred[1] - tgt.1).abs();
                    count += 1;
                } else {
                    pixels.push(empty_pixel());
                }
            }
        }
        let render = render_with(pixels, w, h);
        let gt = vote_map(w, h, &gt_votes);
        let l = vote_loss(&render, &gt).unwrap();
        assert_relative_eq!(l.value, expected / count as f64, epsilon = 1e-12);
    }

    #[test]
    fn vote_loss_empty_supervision_flags() {
        let render = render_with(vec![empty_pixel()], 1, 1);
        let gt = vote_map(1, 1, &[]);
        let l = vote_loss(&render, &gt).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.empty);
    }

    #[test]
    fn depth_distortion_closed_forms() {
        // z = {0, 1, 2} unweighted: raw 4, three pairs -> 4/3.
        let pixels = vec![pixel(vec![0, 1, 2], vec![0.3; 3], vec![0.0, 1.0, 2.0], Some([0.0, 0.0]))];
        let render = render_with(pixels, 1, 1);
        let gt = vote_map(1, 1, &[(0, 0, 0.0, 0.0)]);
        let l = depth_distortion(&render, &gt, DepthVariant::Unweighted, true).unwrap();
        assert_relative_eq!(l.value, 4.0 / 3.0, epsilon = 1e-12);

        // z = {1, 3}, w = {0.5, 0.25} weighted: 0.5*0.25*2 = 0.25 over one pair.
        let pixels = vec![pixel(vec![0, 1], vec![0.5, 0.25], vec![1.0, 3.0], Some([0.0, 0.0]))];
        let render = render_with(pixels, 1, 1);
        let l = depth_distortion(&render, &gt, DepthVariant::Weighted, true).unwrap();
        assert_relative_eq!(l.value, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn sorted_pair_sum_matches_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let n = rng.gen_range(2..50);
            let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let fast = pair_sum_sorted(&z);
            let slow = pair_sum_quadratic(&z, None);
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        }
    }

    #[test]
    fn unweighted_depth_ignores_weights_weighted_does_not() {
        let gt = vote_map(1, 1, &[(0, 0, 0.0, 0.0)]);
        let mk = |w: Vec<f64>| {
            render_with(
                vec![pixel(vec![0, 1], w, vec![0.0, 2.0], Some([0.0, 0.0]))],
                1,
                1,
            )
        };
        let a = depth_distortion(&mk(vec![0.9, 0.8]), &gt, DepthVariant::Unweighted, true).unwrap();
        let b = depth_distortion(&mk(vec![0.1, 0.2]), &gt, DepthVariant::Unweighted, true).unwrap();
        assert_eq!(a.value, b.value);
        let c = depth_distortion(&mk(vec![0.9, 0.8]), &gt, DepthVariant::Weighted, true).unwrap();
        let d = depth_distortion(&mk(vec![0.1, 0.2]), &gt, DepthVariant::Weighted, true).unwrap();
        assert!(c.value > d.value);
    }

    #[test]
    fn depth_zero_iff_equal_and_grows_with_deviation() {
        let gt = vote_map(1, 1, &[(0, 0, 0.0, 0.0)]);
        let equal = render_with(
            vec![pixel(vec![0, 1, 2], vec![0.3; 3], vec![2.0, 2.0, 2.0], Some([0.0, 0.0]))],
            1,
            1,
        );
        assert_eq!(
            depth_distortion(&equal, &gt, DepthVariant::Unweighted, true).unwrap().value,
            0.0
        );
        let mut last = 0.0;
        for dev in [0.1, 0.5, 1.0, 2.0] {
            let r = render_with(
                vec![pixel(vec![0, 1, 2], vec![0.3; 3], vec![2.0, 2.0, 2.0 + dev], Some([0.0, 0.0]))],
                1,
                1,
            );
            let v = depth_distortion(&r, &gt, DepthVariant::Unweighted, true).unwrap().value;
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn ssim_identity_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (w, h) = (16usize, 13usize);
        let img: Vec<f64> = (0..w * h).map(|_| rng.gen()).collect();
        assert_relative_eq!(ssim(&img, &img, w, h).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn color_loss_closed_forms() {
        let (w, h) = (12u32, 12u32);
        let n = (w * h) as usize * 3;
        let a = vec![0.5f64; n];
        let b = vec![0.6f64; n];
        assert_relative_eq!(color_loss(&a, &a, w, h, 0.2).unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(color_loss(&a, &b, w, h, 0.0).unwrap(), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn rvd_total_composes() {
        let weights = LossWeights {
            lambda_vote: 0.5,
            lambda_depth: 0.1,
            lambda_dssim: 0.2,
        };
        let vote = VoteLoss {
            value: 2.0,
            pixel_count: 10,
            empty: false,
        };
        let depth = DepthLoss {
            value: 3.0,
            pixel_count: 10,
        };
        let report = rvd_total(1.0, &vote, &depth, &weights);
        assert_relative_eq!(report.total, 2.3, epsilon = 1e-12);

        let zeros = rvd_total(
            0.0,
            &VoteLoss { value: 0.0, pixel_count: 0, empty: true },
            &DepthLoss { value: 0.0, pixel_count: 0 },
            &weights,
        );
        assert_eq!(zeros.total, 0.0);

        // lambda_vote = 0 recovers reconstruction + depth only.
        let w0 = LossWeights { lambda_vote: 0.0, ..weights };
        let r0 = rvd_total(1.0, &vote, &depth, &w0);
        assert_relative_eq!(r0.total, 1.0 + 0.1 * 3.0, epsilon = 1e-12);
    }
}
