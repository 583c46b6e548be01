use serde::{Deserialize, Serialize};

use crate::camera::OrbitCamera;
use crate::error::{Error, Result};
use crate::img::{ImageRgb, ScalarImage};
use crate::rasterizer::{render, render_backward, RenderGradients};
use crate::scene::{GaussianCloud, RenderedFrame};

/// L1/D-SSIM mixing weight in the reference loss.
pub const REFERENCE_LAMBDA: f64 = 0.8;
/// Reported stand-in for an infinite PSNR (zero mean-squared error).
pub const PSNR_CAP_DB: f64 = 99.0;
/// Coverage threshold deciding which pixels enter a masked depth loss.
pub const DEPTH_MASK_THRESHOLD: f64 = 0.5;

const SSIM_WINDOW: usize = 11;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_same_size(a: &ImageRgb, b: &ImageRgb) -> Result<()> {
    if a.width != b.width {
        return Err(Error::DimensionMismatch {
            what: "image width",
            expected: a.width,
            got: b.width,
        });
    }
    if a.height != b.height {
        return Err(Error::DimensionMismatch {
            what: "image height",
            expected: a.height,
            got: b.height,
        });
    }
    Ok(())
}

/// Mean absolute error over every pixel and channel. The gradient with
/// respect to `a` is sign(a−b)/count, with subgradient 0 at equality.
pub fn l1_loss(a: &ImageRgb, b: &ImageRgb) -> Result<(f64, Vec<f64>)> {
    check_same_size(a, b)?;
    let count = a.data.len() as f64;
    let mut sum = 0.0;
    let mut grad = vec![0.0; a.data.len()];
    for (g, (&x, &y)) in grad.iter_mut().zip(a.data.iter().zip(&b.data)) {
        let d = x - y;
        sum += d.abs();
        *g = if d > 0.0 {
            1.0 / count
        } else if d < 0.0 {
            -1.0 / count
        } else {
            0.0
        };
    }
    Ok((sum / count, grad))
}

/// 11-tap Gaussian, σ = 1.5, normalized to sum 1.
fn gauss_taps() -> [f64; SSIM_WINDOW] {
    let sigma = 1.5;
    let mut k = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * sigma * sigma)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-mode filtering along rows: (w, h) -> (w−10, h).
fn conv_rows(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - (SSIM_WINDOW - 1);
    let mut out = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                acc += kv * src[y * w + x + t];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Valid-mode filtering along columns: (w, h) -> (w, h−10).
fn conv_cols(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let oh = h - (SSIM_WINDOW - 1);
    let mut out = vec![0.0; w * oh];
    for y in 0..oh {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                acc += kv * src[(y + t) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Transpose of `conv_cols`: scatters window values back over the rows they
/// covered. (w, h−10) -> (w, h).
fn scatter_cols(q: &[f64], w: usize, qh: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let h = qh + (SSIM_WINDOW - 1);
    let mut out = vec![0.0; w * h];
    for y in 0..qh {
        for x in 0..w {
            let v = q[y * w + x];
            for (t, &kv) in k.iter().enumerate() {
                out[(y + t) * w + x] += kv * v;
            }
        }
    }
    out
}

/// Transpose of `conv_rows`: (w−10, h) -> (w, h).
fn scatter_rows(q: &[f64], qw: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let w = qw + (SSIM_WINDOW - 1);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..qw {
            let v = q[y * qw + x];
            for (t, &kv) in k.iter().enumerate() {
                out[y * w + x + t] += kv * v;
            }
        }
    }
    out
}

fn conv2(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    conv_cols(&conv_rows(src, w, h, k), w - (SSIM_WINDOW - 1), h, k)
}

fn scatter2(q: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - (SSIM_WINDOW - 1);
    let oh = h - (SSIM_WINDOW - 1);
    scatter_rows(&scatter_cols(q, ow, oh, k), ow, h, k)
}

fn extract_plane(img: &ImageRgb, channel: usize) -> Vec<f64> {
    img.data[channel..].iter().step_by(3).copied().collect()
}

struct SsimEval {
    ssim: f64,
    grad: Option<Vec<f64>>,
}

/// Structural similarity over all fully interior 11×11 windows, averaged
/// over channels, optionally with the analytic gradient with respect to `a`.
/// The gradient treats each window statistic (means, variances, covariance)
/// as the differentiation intermediate and scatters back through the
/// separable Gaussian filter.
fn ssim_eval(a: &ImageRgb, b: &ImageRgb, want_grad: bool) -> Result<SsimEval> {
    check_same_size(a, b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let k = gauss_taps();
    let ow = w - (SSIM_WINDOW - 1);
    let oh = h - (SSIM_WINDOW - 1);
    let n_win = ow * oh;
    let mut ssim_sum = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; a.data.len()]);
    // Uniform weight of one window-channel cell in the channel-averaged mean.
    let cell = 1.0 / (3.0 * n_win as f64);

    for c in 0..3 {
        let x = extract_plane(a, c);
        let y = extract_plane(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();
        let mx = conv2(&x, w, h, &k);
        let my = conv2(&y, w, h, &k);
        let mxx = conv2(&xx, w, h, &k);
        let myy = conv2(&yy, w, h, &k);
        let mxy = conv2(&xy, w, h, &k);

        let mut q1 = vec![0.0; n_win];
        let mut q2 = vec![0.0; n_win];
        let mut q3 = vec![0.0; n_win];
        for i in 0..n_win {
            let vx = mxx[i] - mx[i] * mx[i];
            let vy = myy[i] - my[i] * my[i];
            let vxy = mxy[i] - mx[i] * my[i];
            let a1 = 2.0 * mx[i] * my[i] + SSIM_C1;
            let a2 = 2.0 * vxy + SSIM_C2;
            let b1 = mx[i] * mx[i] + my[i] * my[i] + SSIM_C1;
            let b2 = vx + vy + SSIM_C2;
            let s = (a1 * a2) / (b1 * b2);
            ssim_sum += s;
            if want_grad {
                // d(1 − mean S)/dS = −cell for every window.
                let u = -cell;
                let p1 = u * ((2.0 * my[i] * a2) / (b1 * b2) - s * 2.0 * mx[i] / b1);
                let p2 = u * (-s / b2);
                let p3 = u * (2.0 * a1 / (b1 * b2));
                // Chain through μx = Σ g·x, σx² = Σ g·x² − μx²,
                // σxy = Σ g·x·y − μx·μy, collecting the per-pixel factors
                // 1, x, y so one scatter per factor suffices.
                q1[i] = p1 - 2.0 * mx[i] * p2 - my[i] * p3;
                q2[i] = 2.0 * p2;
                q3[i] = p3;
            }
        }
        if let Some(g) = grad.as_mut() {
            let s1 = scatter2(&q1, w, h, &k);
            let s2 = scatter2(&q2, w, h, &k);
            let s3 = scatter2(&q3, w, h, &k);
            for p in 0..x.len() {
                g[3 * p + c] = s1[p] + x[p] * s2[p] + y[p] * s3[p];
            }
        }
    }
    Ok(SsimEval {
        ssim: ssim_sum / (3.0 * n_win as f64),
        grad,
    })
}

/// SSIM metric (1 = identical) with an 11×11 Gaussian window, σ = 1.5,
/// stability constants C₁ = 0.01², C₂ = 0.03² for [0,1]-ranged images.
pub fn ssim(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    Ok(ssim_eval(a, b, false)?.ssim)
}

/// Structural dissimilarity 1 − SSIM and its gradient with respect to `a`.
pub fn dssim_loss(a: &ImageRgb, b: &ImageRgb) -> Result<(f64, Vec<f64>)> {
    let eval = ssim_eval(a, b, true)?;
    Ok((1.0 - eval.ssim, eval.grad.unwrap()))
}

/// Exact mixing arithmetic of the reference loss, exposed for reuse:
/// λ·l1 + (1−λ)·dssim.
pub fn combine_reference(l1: f64, dssim: f64, lambda: f64) -> f64 {
    lambda * l1 + (1.0 - lambda) * dssim
}

/// Reference-view reconstruction loss λ·L1 + (1−λ)·DSSIM with gradient for
/// the rendered image. The boundary weights skip the unused term entirely,
/// so λ = 1 reduces to `l1_loss` bit-for-bit (and sidesteps the SSIM window
/// minimum).
pub fn reference_loss(rendered: &ImageRgb, target: &ImageRgb, lambda: f64) -> Result<(f64, Vec<f64>)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!(
            "reference-loss lambda {lambda} outside [0, 1]"
        )));
    }
    if lambda == 1.0 {
        return l1_loss(rendered, target);
    }
    if lambda == 0.0 {
        return dssim_loss(rendered, target);
    }
    let (l1, g1) = l1_loss(rendered, target)?;
    let (ds, g2) = dssim_loss(rendered, target)?;
    let grad = g1
        .iter()
        .zip(&g2)
        .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    Ok((combine_reference(l1, ds, lambda), grad))
}

/// Pseudo-supervision terms at one sampled view, pseudo render held
/// constant.
#[derive(Debug, Clone)]
pub struct PseudoLosses {
    pub l_rgb: f64,
    pub l_depth: f64,
    /// Gradient for the optimized render's color image.
    pub d_color: Vec<f64>,
    /// Gradient for the optimized render's depth map.
    pub d_depth: Vec<f64>,
}

fn coverage_mask(a: &ScalarImage, b: &ScalarImage) -> Vec<bool> {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| x > DEPTH_MASK_THRESHOLD || y > DEPTH_MASK_THRESHOLD)
        .collect()
}

/// Depth L1 restricted to `mask`; mean over masked pixels, zero (with zero
/// gradient) when the mask is empty.
fn masked_depth_l1(rendered: &ScalarImage, target: &ScalarImage, mask: &[bool]) -> (f64, Vec<f64>) {
    let m = mask.iter().filter(|&&v| v).count();
    let mut grad = vec![0.0; rendered.data.len()];
    if m == 0 {
        return (0.0, grad);
    }
    let inv = 1.0 / m as f64;
    let mut sum = 0.0;
    for (i, (&x, &y)) in rendered.data.iter().zip(&target.data).enumerate() {
        if mask[i] {
            let d = x - y;
            sum += d.abs();
            grad[i] = if d > 0.0 {
                inv
            } else if d < 0.0 {
                -inv
            } else {
                0.0
            };
        }
    }
    (sum * inv, grad)
}

/// Novel-view regularization against a pseudo ground-truth render: plain L1
/// on colors plus depth L1 masked to pixels either render actually covers
/// (accumulated alpha above 0.5), so far-plane fill outside both silhouettes
/// is never penalized.
pub fn pseudo_losses(rendered: &RenderedFrame, pseudo: &RenderedFrame) -> Result<PseudoLosses> {
    let (l_rgb, d_color) = l1_loss(&rendered.color, &pseudo.color)?;
    let mask = coverage_mask(&rendered.accum_alpha, &pseudo.accum_alpha);
    let (l_depth, d_depth) = masked_depth_l1(&rendered.depth, &pseudo.depth, &mask);
    Ok(PseudoLosses {
        l_rgb,
        l_depth,
        d_color,
        d_depth,
    })
}

/// Refinement terms for one sampled frame k.
#[derive(Debug, Clone)]
pub struct RefinementLosses {
    pub l_ref_re: f64,
    pub l_depth_re: f64,
    /// Gradient with respect to the refined cloud's parameters.
    pub d_refined: RenderGradients,
}

/// Refinement objective for one frame: L1 between reference-view color
/// renders of the refined and frozen stage-2 clouds, plus masked depth L1
/// between their renders at the sampled view. Renders happen internally;
/// gradients flow only into the refined cloud.
pub fn refinement_losses(
    refined: &GaussianCloud,
    frozen: &GaussianCloud,
    ref_camera: &OrbitCamera,
    sampled_camera: &OrbitCamera,
    background: [f64; 3],
) -> Result<RefinementLosses> {
    let ref_render = render(refined, ref_camera, background);
    let ref_target = render(frozen, ref_camera, background);
    let (l_ref_re, d_color) = l1_loss(&ref_render.color, &ref_target.color)?;
    let d_color = ImageRgb {
        width: ref_render.color.width,
        height: ref_render.color.height,
        data: d_color,
    };
    let zero_depth = ScalarImage::new(d_color.width, d_color.height);
    let mut d_refined = render_backward(refined, ref_camera, background, &d_color, &zero_depth)?;

    let samp_render = render(refined, sampled_camera, background);
    let samp_target = render(frozen, sampled_camera, background);
    let mask = coverage_mask(&samp_render.accum_alpha, &samp_target.accum_alpha);
    let (l_depth_re, d_depth) = masked_depth_l1(&samp_render.depth, &samp_target.depth, &mask);
    let d_depth = ScalarImage {
        width: samp_render.depth.width,
        height: samp_render.depth.height,
        data: d_depth,
    };
    let zero_color = ImageRgb::new(d_depth.width, d_depth.height);
    let samp_grads = render_backward(refined, sampled_camera, background, &zero_color, &d_depth)?;
    d_refined.add_assign(&samp_grads);

    Ok(RefinementLosses {
        l_ref_re,
        l_depth_re,
        d_refined,
    })
}

/// Peak signal-to-noise ratio in dB over [0,1]-ranged images. Identical
/// images produce +∞; reports cap at `PSNR_CAP_DB`.
pub fn psnr(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    check_same_size(a, b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// `psnr` with the +∞ sentinel replaced by the reporting cap.
pub fn psnr_capped(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    Ok(psnr(a, b)?.min(PSNR_CAP_DB))
}

/// Per-step named loss values written to the run log. Inactive terms hold
/// zero; `total` is the weighted sum of the active ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub l_ref: f64,
    pub l_rgb: f64,
    pub l_depth: f64,
    pub l_ref_re: f64,
    pub l_depth_re: f64,
    pub total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,l_ref,l_rgb,l_depth,l_ref_re,l_depth_re,total";

    pub fn zero(step: u64) -> Self {
        LossReport {
            step,
            l_ref: 0.0,
            l_rgb: 0.0,
            l_depth: 0.0,
            l_ref_re: 0.0,
            l_depth_re: 0.0,
            total: 0.0,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.l_ref, self.l_rgb, self.l_depth, self.l_ref_re, self.l_depth_re, self.total
        )
    }

    pub fn is_finite(&self) -> bool {
        [
            self.l_ref,
            self.l_rgb,
            self.l_depth,
            self.l_ref_re,
            self.l_depth_re,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, substream};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_image(w: usize, h: usize, seed: u32) -> ImageRgb {
        let mut rng = substream(900, &[stream::GRADCHECK, seed]);
        let mut img = ImageRgb::new(w, h);
        for v in &mut img.data {
            *v = rng.random_range(0.0..1.0);
        }
        img
    }

    /// Direct per-window SSIM: explicit nested loops over window offsets,
    /// no separable filtering, no incremental statistics.
    fn ssim_direct(a: &ImageRgb, b: &ImageRgb) -> f64 {
        let k = gauss_taps();
        let (w, h) = (a.width, a.height);
        let mut total = 0.0;
        let mut count = 0usize;
        for c in 0..3 {
            for wy in 0..=(h - SSIM_WINDOW) {
                for wx in 0..=(w - SSIM_WINDOW) {
                    let (mut mx, mut my) = (0.0, 0.0);
                    let (mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0);
                    for dy in 0..SSIM_WINDOW {
                        for dx in 0..SSIM_WINDOW {
                            let g = k[dy] * k[dx];
                            let x = a.pixel(wx + dx, wy + dy)[c];
                            let y = b.pixel(wx + dx, wy + dy)[c];
                            mx += g * x;
                            my += g * y;
                            mxx += g * x * x;
                            myy += g * y * y;
                            mxy += g * x * y;
                        }
                    }
                    let vx = mxx - mx * mx;
                    let vy = myy - my * my;
                    let vxy = mxy - mx * my;
                    let s = ((2.0 * mx * my + SSIM_C1) * (2.0 * vxy + SSIM_C2))
                        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                    total += s;
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn l1_zero_on_identical() {
        let a = random_image(8, 6, 1);
        let (loss, grad) = l1_loss(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn l1_ones_vs_zeros_is_one() {
        let a = ImageRgb::filled(5, 4, [1.0, 1.0, 1.0]);
        let b = ImageRgb::filled(5, 4, [0.0, 0.0, 0.0]);
        let (loss, grad) = l1_loss(&a, &b).unwrap();
        assert_eq!(loss, 1.0);
        let n = (5 * 4 * 3) as f64;
        assert!(grad.iter().all(|&g| g == 1.0 / n));
    }

    #[test]
    fn l1_matches_direct_summation() {
        let a = random_image(13, 9, 2);
        let b = random_image(13, 9, 3);
        let (loss, _) = l1_loss(&a, &b).unwrap();
        let direct: f64 = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| (x - y).abs())
            .sum::<f64>()
            / a.data.len() as f64;
        assert_relative_eq!(loss, direct, epsilon = 1e-15);
    }

    #[test]
    fn l1_rejects_size_mismatch() {
        let a = random_image(8, 8, 4);
        let b = random_image(8, 9, 5);
        let err = l1_loss(&a, &b).unwrap_err();
        assert!(err.to_string().contains("image height"));
    }

    #[test]
    fn dssim_zero_on_identical() {
        let a = random_image(14, 12, 6);
        let (loss, grad) = dssim_loss(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        // At a = b the SSIM map sits at its maximum, so the gradient there
        // reflects the flat directions only; every entry must be finite.
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn dssim_penalizes_constant_shift() {
        let a = ImageRgb::filled(16, 16, [0.2, 0.2, 0.2]);
        let b = ImageRgb::filled(16, 16, [0.7, 0.7, 0.7]);
        let (loss, _) = dssim_loss(&a, &b).unwrap();
        assert!(loss > 0.1, "luminance shift barely penalized: {loss}");
    }

    #[test]
    fn dssim_matches_direct_window_oracle() {
        for seed in 0..4 {
            let a = random_image(17, 13, 100 + seed);
            let b = random_image(17, 13, 200 + seed);
            let fast = ssim(&a, &b).unwrap();
            let direct = ssim_direct(&a, &b);
            assert!(
                (fast - direct).abs() < 1e-12,
                "separable {fast} vs direct {direct}"
            );
            let (loss, _) = dssim_loss(&a, &b).unwrap();
            assert_relative_eq!(loss, 1.0 - direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn ssim_is_symmetric_and_below_one_for_distinct() {
        let a = random_image(15, 15, 7);
        let b = random_image(15, 15, 8);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert_relative_eq!(ab, ba, epsilon = 1e-12);
        assert!(ab < 1.0);
    }

    #[test]
    fn dssim_rejects_small_images() {
        let a = random_image(10, 16, 9);
        let err = dssim_loss(&a, &a).unwrap_err();
        assert!(err.to_string().contains("ssim window"), "{err}");
    }

    #[test]
    fn dssim_gradient_matches_finite_differences() {
        let a = random_image(13, 13, 10);
        let b = random_image(13, 13, 11);
        let (_, grad) = dssim_loss(&a, &b).unwrap();
        let h = 1e-5;
        let mut rng = substream(901, &[stream::GRADCHECK]);
        for _ in 0..60 {
            let idx = rng.random_range(0..a.data.len());
            let mut ap = a.clone();
            ap.data[idx] += h;
            let mut am = a.clone();
            am.data[idx] -= h;
            let fd = (dssim_loss(&ap, &b).unwrap().0 - dssim_loss(&am, &b).unwrap().0) / (2.0 * h);
            assert!(
                (grad[idx] - fd).abs() <= 1e-5_f64.max(1e-3 * grad[idx].abs().max(fd.abs())),
                "coord {idx}: analytic {} vs fd {}",
                grad[idx],
                fd
            );
        }
    }

    #[test]
    fn reference_loss_zero_on_identical() {
        let a = random_image(12, 12, 12);
        let (loss, grad) = reference_loss(&a, &a, REFERENCE_LAMBDA).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn reference_loss_lambda_one_is_exactly_l1() {
        // Image too small for SSIM: λ = 1 must not even evaluate it.
        let a = random_image(8, 8, 13);
        let b = random_image(8, 8, 14);
        let (loss, grad) = reference_loss(&a, &b, 1.0).unwrap();
        let (l1, g1) = l1_loss(&a, &b).unwrap();
        assert_eq!(loss, l1);
        assert_eq!(grad, g1);
    }

    #[test]
    fn reference_loss_mixing_arithmetic() {
        assert_relative_eq!(combine_reference(0.1, 0.2, 0.8), 0.12, epsilon = 1e-15);
    }

    #[test]
    fn reference_loss_rejects_bad_lambda() {
        let a = random_image(12, 12, 15);
        assert!(reference_loss(&a, &a, 1.2).is_err());
        assert!(reference_loss(&a, &a, -0.1).is_err());
    }

    #[test]
    fn reference_loss_gradient_mixes_terms() {
        let a = random_image(13, 13, 16);
        let b = random_image(13, 13, 17);
        let (loss, grad) = reference_loss(&a, &b, 0.8).unwrap();
        let (l1, g1) = l1_loss(&a, &b).unwrap();
        let (ds, g2) = dssim_loss(&a, &b).unwrap();
        assert_relative_eq!(loss, 0.8 * l1 + 0.2 * ds, epsilon = 1e-15);
        for i in 0..grad.len() {
            assert_relative_eq!(grad[i], 0.8 * g1[i] + 0.2 * g2[i], epsilon = 1e-15);
        }
    }

    fn frame_from(color: ImageRgb, depth: Vec<f64>, accum: Vec<f64>) -> RenderedFrame {
        let (w, h) = (color.width, color.height);
        RenderedFrame {
            color,
            depth: ScalarImage {
                width: w,
                height: h,
                data: depth,
            },
            accum_alpha: ScalarImage {
                width: w,
                height: h,
                data: accum,
            },
        }
    }

    #[test]
    fn pseudo_losses_zero_on_identical() {
        let color = random_image(6, 6, 18);
        let depth: Vec<f64> = (0..36).map(|i| 1.0 + i as f64 * 0.01).collect();
        let accum = vec![0.8; 36];
        let f = frame_from(color.clone(), depth.clone(), accum.clone());
        let g = frame_from(color, depth, accum);
        let out = pseudo_losses(&f, &g).unwrap();
        assert_eq!(out.l_rgb, 0.0);
        assert_eq!(out.l_depth, 0.0);
    }

    #[test]
    fn pseudo_depth_offset_inside_mask_is_one() {
        let color = random_image(6, 6, 19);
        let depth: Vec<f64> = vec![2.0; 36];
        let shifted: Vec<f64> = vec![3.0; 36];
        // Half the pixels covered by one render, half by neither.
        let mut accum = vec![0.0; 36];
        for a in accum.iter_mut().take(18) {
            *a = 0.9;
        }
        let f = frame_from(color.clone(), shifted, accum.clone());
        let g = frame_from(color, depth, vec![0.0; 36]);
        let out = pseudo_losses(&f, &g).unwrap();
        assert_eq!(out.l_depth, 1.0);
        // Gradient lives only on masked pixels.
        assert!(out.d_depth[..18].iter().all(|&v| v == 1.0 / 18.0));
        assert!(out.d_depth[18..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pseudo_mask_is_union_of_coverage() {
        let color = random_image(4, 4, 20);
        let mut accum_a = vec![0.0; 16];
        let mut accum_b = vec![0.0; 16];
        accum_a[3] = 0.6;
        accum_b[7] = 0.6;
        let f = frame_from(color.clone(), vec![1.0; 16], accum_a);
        let g = frame_from(color, vec![1.5; 16], accum_b);
        let out = pseudo_losses(&f, &g).unwrap();
        // Two masked pixels, each off by 0.5.
        assert_relative_eq!(out.l_depth, 0.5, epsilon = 1e-15);
        assert_eq!(out.d_depth.iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn pseudo_empty_mask_zeroes_depth_term() {
        let color_a = random_image(5, 5, 21);
        let color_b = random_image(5, 5, 22);
        let f = frame_from(color_a, vec![1.0; 25], vec![0.1; 25]);
        let g = frame_from(color_b, vec![9.0; 25], vec![0.2; 25]);
        let out = pseudo_losses(&f, &g).unwrap();
        assert_eq!(out.l_depth, 0.0);
        assert!(out.d_depth.iter().all(|&v| v == 0.0));
        assert!(out.l_rgb > 0.0);
    }

    fn two_splat_cloud(seed: u32) -> GaussianCloud {
        let mut rng = substream(902, &[stream::GRADCHECK, seed]);
        GaussianCloud::new(
            (0..6).map(|_| rng.random_range(-0.2..0.2)).collect(),
            vec![rng.random_range(0.5..1.5), rng.random_range(0.5..1.5)],
            (0..6).map(|_| rng.random_range(-1.2..-0.8)).collect(),
            vec![1.0, 0.0, 0.0, 0.0, 0.9, 0.1, 0.2, 0.0],
            (0..6).map(|_| rng.random_range(0.2..0.8)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn refinement_losses_zero_on_identical_clouds() {
        let cloud = two_splat_cloud(1);
        let ref_cam = OrbitCamera::default().with_size(24, 24);
        let samp_cam = ref_cam.with_azimuth(60.0);
        let out = refinement_losses(&cloud, &cloud, &ref_cam, &samp_cam, [0.0; 3]).unwrap();
        assert_eq!(out.l_ref_re, 0.0);
        assert_eq!(out.l_depth_re, 0.0);
        assert!(out.d_refined.d_positions.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn refinement_color_change_leaves_depth_term_zero() {
        let frozen = two_splat_cloud(2);
        let mut refined = frozen.clone();
        for c in &mut refined.colors {
            *c = (*c + 0.3).min(1.0);
        }
        let ref_cam = OrbitCamera::default().with_size(24, 24);
        let samp_cam = ref_cam.with_azimuth(-45.0);
        let out = refinement_losses(&refined, &frozen, &ref_cam, &samp_cam, [0.0; 3]).unwrap();
        assert!(out.l_ref_re > 0.0);
        assert_eq!(out.l_depth_re, 0.0);
    }

    #[test]
    fn psnr_closed_form_and_oracle() {
        let a = ImageRgb::filled(8, 8, [0.5, 0.5, 0.5]);
        let b = ImageRgb::filled(8, 8, [0.6, 0.6, 0.6]);
        // MSE = 0.01 exactly up to fp rounding.
        assert_relative_eq!(psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-10);

        let x = random_image(9, 7, 23);
        let y = random_image(9, 7, 24);
        let mse: f64 = x
            .data
            .iter()
            .zip(&y.data)
            .map(|(&u, &v)| (u - v) * (u - v))
            .sum::<f64>()
            / x.data.len() as f64;
        assert_relative_eq!(
            psnr(&x, &y).unwrap(),
            10.0 * (1.0 / mse).log10(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn psnr_identical_hits_cap() {
        let a = random_image(6, 6, 25);
        assert!(psnr(&a, &a).unwrap().is_infinite());
        assert_eq!(psnr_capped(&a, &a).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn loss_report_csv_round_shape() {
        let mut r = LossReport::zero(17);
        r.l_ref = 0.25;
        r.total = 0.25;
        let line = r.csv_line();
        assert_eq!(line.split(',').count(), LossReport::CSV_HEADER.split(',').count());
        assert!(line.starts_with("17,0.25,"));
        assert!(r.is_finite());
        r.l_rgb = f64::NAN;
        assert!(!r.is_finite());
    }
}
