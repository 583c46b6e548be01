use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix4, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use crate::camera::OrbitCamera;
use crate::error::{Error, Result};
use crate::img::{ImageRgb, ScalarImage};
use crate::scene::{rotation_matrix, sigmoid, GaussianCloud, RenderedFrame};

/// Contributions below this effective alpha are skipped entirely.
pub const MIN_SPLAT_ALPHA: f64 = 1.0 / 255.0;
/// Front-to-back compositing stops once transmittance drops below this.
pub const TRANSMITTANCE_FLOOR: f64 = 1e-4;
/// Accumulated-alpha floor for expected-depth normalization.
pub const ALPHA_EPS: f64 = 1e-6;
/// Isotropic regularization added to every projected covariance, px^2.
pub const COV2D_REG: f64 = 0.3;
/// Footprint radius in Mahalanobis units. At 3.5 the kernel is already
/// below exp(-6.125) < 1/255, so pixels outside the box would be skipped
/// by the alpha cutoff anyway: the bound changes nothing, only saves work.
const BBOX_SIGMA: f64 = 3.5;

/// A splat after projection: screen-space footprint plus everything the
/// per-pixel loop needs. `x0..=x1` x `y0..=y1` are the covered pixel
/// indices, already clamped to the image.
#[derive(Debug, Clone)]
pub struct Splat2D {
    pub source_index: usize,
    pub center_px: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    pub x0: i32,
    pub x1: i32,
    pub y0: i32,
    pub y1: i32,
}

/// Loss gradients with respect to every cloud parameter, flat arrays
/// parallel to the cloud's.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderGradients {
    pub d_positions: Vec<f64>,
    pub d_opacity_logits: Vec<f64>,
    pub d_log_scales: Vec<f64>,
    pub d_rotations: Vec<f64>,
    pub d_colors: Vec<f64>,
}

impl RenderGradients {
    pub fn zeros(n: usize) -> Self {
        RenderGradients {
            d_positions: vec![0.0; 3 * n],
            d_opacity_logits: vec![0.0; n],
            d_log_scales: vec![0.0; 3 * n],
            d_rotations: vec![0.0; 4 * n],
            d_colors: vec![0.0; 3 * n],
        }
    }

    pub fn add_assign(&mut self, other: &RenderGradients) {
        for (a, b) in [
            (&mut self.d_positions, &other.d_positions),
            (&mut self.d_opacity_logits, &other.d_opacity_logits),
            (&mut self.d_log_scales, &other.d_log_scales),
            (&mut self.d_rotations, &other.d_rotations),
            (&mut self.d_colors, &other.d_colors),
        ] {
            assert_eq!(a.len(), b.len(), "gradient shapes");
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
    }
}

/// Perspective-project every splat; splats behind the near plane, beyond
/// the far plane, or with a footprint fully off-screen are culled. The
/// result is sorted by depth ascending, ties broken by source index.
pub fn project(cloud: &GaussianCloud, camera: &OrbitCamera) -> Vec<Splat2D> {
    let w2c = camera.world_to_cam();
    let eye = camera.eye();
    let f = camera.focal_px();
    let (cx, cy) = camera.principal_point();
    let (w, h) = (camera.width as f64, camera.height as f64);

    let mut out = Vec::with_capacity(cloud.len());
    for i in 0..cloud.len() {
        let t = w2c * (cloud.position(i) - eye);
        if t.z <= camera.near || t.z >= camera.far {
            continue;
        }
        let cov2d = project_cov(cloud, i, &w2c, f, &t);
        let u = f * t.x / t.z + cx;
        let v = f * t.y / t.z + cy;
        let r = BBOX_SIGMA * max_eigenvalue_2x2(&cov2d).sqrt();
        let x0 = (u - r - 0.5).ceil().max(0.0);
        let x1 = (u + r - 0.5).floor().min(w - 1.0);
        let y0 = (v - r - 0.5).ceil().max(0.0);
        let y1 = (v + r - 0.5).floor().min(h - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let c = cloud.color(i);
        out.push(Splat2D {
            source_index: i,
            center_px: Vector2::new(u, v),
            cov2d,
            depth: t.z,
            opacity: sigmoid(cloud.opacity_logits[i]),
            color: [c.x.clamp(0.0, 1.0), c.y.clamp(0.0, 1.0), c.z.clamp(0.0, 1.0)],
            x0: x0 as i32,
            x1: x1 as i32,
            y0: y0 as i32,
            y1: y1 as i32,
        });
    }
    out.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.source_index.cmp(&b.source_index))
    });
    out
}

fn project_cov(
    cloud: &GaussianCloud,
    i: usize,
    w2c: &Matrix3<f64>,
    f: f64,
    t: &Vector3<f64>,
) -> Matrix2<f64> {
    let r = rotation_matrix(&cloud.rotation(i));
    let ls = cloud.log_scale(i);
    let d = Matrix3::from_diagonal(&Vector3::new(
        (2.0 * ls.x).exp(),
        (2.0 * ls.y).exp(),
        (2.0 * ls.z).exp(),
    ));
    let sigma_cam = w2c * (r * d * r.transpose()) * w2c.transpose();
    let j = proj_jacobian(f, t);
    let mut cov2d = j * sigma_cam * j.transpose();
    cov2d[(0, 0)] += COV2D_REG;
    cov2d[(1, 1)] += COV2D_REG;
    cov2d
}

#[inline]
fn proj_jacobian(f: f64, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let z2 = t.z * t.z;
    Matrix2x3::new(f / t.z, 0.0, -f * t.x / z2, 0.0, f / t.z, -f * t.y / z2)
}

#[inline]
fn max_eigenvalue_2x2(m: &Matrix2<f64>) -> f64 {
    let mid = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    mid + (mid * mid - det).max(0.0).sqrt()
}

#[inline]
fn invert_2x2(m: &Matrix2<f64>) -> Option<(Matrix2<f64>, f64)> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if det <= 0.0 || !det.is_finite() {
        return None;
    }
    Some((
        Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det,
        det,
    ))
}

/// Unnormalized Gaussian kernel exp(-0.5 d^T cov^-1 d) at pixel position
/// `p`. Errors on a singular footprint, which regularization makes
/// unreachable for splats produced by [`project`].
pub fn kernel_2d(p: Vector2<f64>, splat: &Splat2D) -> Result<f64> {
    let (inv, _) = invert_2x2(&splat.cov2d).ok_or(Error::RenderDegeneracy {
        det: splat.cov2d[(0, 0)] * splat.cov2d[(1, 1)] - splat.cov2d[(0, 1)] * splat.cov2d[(1, 0)],
    })?;
    let d = p - splat.center_px;
    Ok((-0.5 * d.dot(&(inv * d))).exp())
}

/// Per-row lists of splat slots (depth order preserved) whose footprint
/// touches the row; the per-pixel march then only needs an x-bounds test.
fn bin_rows(splats: &[Splat2D], height: usize) -> Vec<Vec<u32>> {
    let mut rows = vec![Vec::new(); height];
    for (slot, s) in splats.iter().enumerate() {
        for y in s.y0..=s.y1 {
            rows[y as usize].push(slot as u32);
        }
    }
    rows
}

fn inverse_covs(splats: &[Splat2D]) -> Vec<Matrix2<f64>> {
    splats
        .iter()
        .map(|s| {
            invert_2x2(&s.cov2d)
                .expect("regularized projected covariance is positive definite")
                .0
        })
        .collect()
}

/// Front-to-back march over one pixel. Calls `visit(slot, sigma,
/// transmittance_before, weight)` for every contribution that clears the
/// alpha cutoff, honoring the transmittance stop.
#[inline]
fn march<F: FnMut(u32, f64, f64, f64)>(
    row: &[u32],
    splats: &[Splat2D],
    inv_covs: &[Matrix2<f64>],
    ix: i32,
    px: f64,
    py: f64,
    visit: &mut F,
) {
    let mut trans = 1.0;
    for &slot in row {
        let s = &splats[slot as usize];
        if ix < s.x0 || ix > s.x1 {
            continue;
        }
        let d = Vector2::new(px - s.center_px.x, py - s.center_px.y);
        let g = (-0.5 * d.dot(&(inv_covs[slot as usize] * d))).exp();
        let sigma = s.opacity * g;
        if sigma < MIN_SPLAT_ALPHA {
            continue;
        }
        let weight = sigma * trans;
        visit(slot, sigma, trans, weight);
        trans *= 1.0 - sigma;
        if trans < TRANSMITTANCE_FLOOR {
            break;
        }
    }
}

/// Render color, expected depth, and accumulated alpha. Empty coverage
/// produces the exact background color and depth = far.
pub fn render(cloud: &GaussianCloud, camera: &OrbitCamera, background: [f64; 3]) -> RenderedFrame {
    let splats = project(cloud, camera);
    let (w, h) = (camera.width, camera.height);
    let rows = bin_rows(&splats, h);
    let inv_covs = inverse_covs(&splats);
    let far = camera.far;

    let band_rows = band_size(h);
    let bands: Vec<(usize, usize)> = (0..h)
        .step_by(band_rows)
        .map(|y| (y, (y + band_rows).min(h)))
        .collect();

    let band_out: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = crate::thread_pool().install(|| {
        bands
            .par_iter()
            .map(|&(ys, ye)| {
                let mut color = Vec::with_capacity((ye - ys) * w * 3);
                let mut depth = Vec::with_capacity((ye - ys) * w);
                let mut alpha = Vec::with_capacity((ye - ys) * w);
                for y in ys..ye {
                    let py = y as f64 + 0.5;
                    for x in 0..w {
                        let px = x as f64 + 0.5;
                        let mut rgb = [0.0f64; 3];
                        let mut acc = 0.0f64;
                        let mut dsum = 0.0f64;
                        march(&rows[y], &splats, &inv_covs, x as i32, px, py, &mut |slot,
                               _sigma,
                               _t,
                               wt| {
                            let s = &splats[slot as usize];
                            rgb[0] += s.color[0] * wt;
                            rgb[1] += s.color[1] * wt;
                            rgb[2] += s.color[2] * wt;
                            dsum += s.depth * wt;
                            acc += wt;
                        });
                        let rest = 1.0 - acc;
                        color.push(rgb[0] + rest * background[0]);
                        color.push(rgb[1] + rest * background[1]);
                        color.push(rgb[2] + rest * background[2]);
                        depth.push(if acc < ALPHA_EPS { far } else { dsum / acc });
                        alpha.push(acc);
                    }
                }
                (color, depth, alpha)
            })
            .collect()
    });

    let mut color = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    let mut alpha = Vec::with_capacity(w * h);
    for (c, d, a) in band_out {
        color.extend(c);
        depth.extend(d);
        alpha.extend(a);
    }
    RenderedFrame {
        color: ImageRgb {
            width: w,
            height: h,
            data: color,
        },
        depth: ScalarImage {
            width: w,
            height: h,
            data: depth,
        },
        accum_alpha: ScalarImage {
            width: w,
            height: h,
            data: alpha,
        },
    }
}

fn band_size(h: usize) -> usize {
    // Fixed decomposition (independent of worker count) keeps the ordered
    // reduction deterministic however many threads run.
    h.div_ceil(16).max(1)
}

/// Per-splat accumulator while walking pixels:
/// [0..2) d mu_hat, [2..5) d cov2d (xx, xy, yy), [5] d alpha,
/// [6..9) d color, [9] d depth(z).
type ScreenAcc = [f64; 10];

/// Backpropagate upstream color and depth images to cloud parameters.
/// Skipped and culled splats get exact zeros; the compositing cutoffs act
/// as zero subgradients, mirroring the forward pass.
pub fn render_backward(
    cloud: &GaussianCloud,
    camera: &OrbitCamera,
    background: [f64; 3],
    d_color: &ImageRgb,
    d_depth: &ScalarImage,
) -> Result<RenderGradients> {
    let (w, h) = (camera.width, camera.height);
    if d_color.width != w || d_color.height != h {
        return Err(Error::DimensionMismatch {
            what: "upstream color gradient pixels",
            expected: w * h,
            got: d_color.width * d_color.height,
        });
    }
    if d_depth.width != w || d_depth.height != h {
        return Err(Error::DimensionMismatch {
            what: "upstream depth gradient pixels",
            expected: w * h,
            got: d_depth.width * d_depth.height,
        });
    }

    let splats = project(cloud, camera);
    let rows = bin_rows(&splats, h);
    let inv_covs = inverse_covs(&splats);
    let ns = splats.len();

    let band_rows = band_size(h);
    let bands: Vec<(usize, usize)> = (0..h)
        .step_by(band_rows)
        .map(|y| (y, (y + band_rows).min(h)))
        .collect();

    let partials: Vec<Vec<ScreenAcc>> = crate::thread_pool().install(|| {
        bands
            .par_iter()
            .map(|&(ys, ye)| {
                backward_band(
                    ys, ye, w, &splats, &rows, &inv_covs, background, d_color, d_depth,
                )
            })
            .collect()
    });

    let mut acc = vec![[0.0; 10]; ns];
    for band in partials {
        for (a, b) in acc.iter_mut().zip(band) {
            for k in 0..10 {
                a[k] += b[k];
            }
        }
    }

    let mut grads = RenderGradients::zeros(cloud.len());
    let w2c = camera.world_to_cam();
    let eye = camera.eye();
    let f = camera.focal_px();
    for (slot, s) in splats.iter().enumerate() {
        screen_to_params(cloud, s.source_index, &w2c, &eye, f, &acc[slot], &mut grads);
    }
    Ok(grads)
}

#[allow(clippy::too_many_arguments)]
fn backward_band(
    ys: usize,
    ye: usize,
    w: usize,
    splats: &[Splat2D],
    rows: &[Vec<u32>],
    inv_covs: &[Matrix2<f64>],
    background: [f64; 3],
    d_color: &ImageRgb,
    d_depth: &ScalarImage,
) -> Vec<ScreenAcc> {
    let mut acc = vec![[0.0f64; 10]; splats.len()];
    let mut recs: Vec<(u32, f64, f64, f64)> = Vec::with_capacity(64);
    for y in ys..ye {
        let py = y as f64 + 0.5;
        for x in 0..w {
            let px = x as f64 + 0.5;
            recs.clear();
            let mut a_sum = 0.0;
            let mut d_sum = 0.0;
            march(&rows[y], splats, inv_covs, x as i32, px, py, &mut |slot,
                   sigma,
                   trans,
                   wt| {
                recs.push((slot, sigma, trans, wt));
                a_sum += wt;
                d_sum += splats[slot as usize].depth * wt;
            });
            if recs.is_empty() {
                continue;
            }
            let dc = d_color.pixel(x, y);
            let dd = d_depth.at(x, y);
            let depth_active = a_sum >= ALPHA_EPS && dd != 0.0;
            let depth_val = if depth_active { d_sum / a_sum } else { 0.0 };

            // Reverse scan: suffix holds sum_{j>k} g_w[j] * w[j].
            let mut suffix = 0.0;
            for &(slot, sigma, trans, wt) in recs.iter().rev() {
                let s = &splats[slot as usize];
                let mut g_w = dc[0] * (s.color[0] - background[0])
                    + dc[1] * (s.color[1] - background[1])
                    + dc[2] * (s.color[2] - background[2]);
                if depth_active {
                    g_w += dd * (s.depth - depth_val) / a_sum;
                }
                let g_sigma = g_w * trans - suffix / (1.0 - sigma);
                suffix += g_w * wt;

                let sa = &mut acc[slot as usize];
                sa[6] += dc[0] * wt;
                sa[7] += dc[1] * wt;
                sa[8] += dc[2] * wt;
                if depth_active {
                    sa[9] += dd * wt / a_sum;
                }
                let g = sigma / s.opacity; // kernel value
                sa[5] += g_sigma * g;
                let gg = g_sigma * s.opacity * g;
                let d = Vector2::new(px - s.center_px.x, py - s.center_px.y);
                let e = inv_covs[slot as usize] * d;
                sa[0] += gg * e.x;
                sa[1] += gg * e.y;
                let k2 = 0.5 * gg;
                sa[2] += k2 * e.x * e.x;
                sa[3] += k2 * e.x * e.y;
                sa[4] += k2 * e.y * e.y;
            }
        }
    }
    acc
}

/// Chain one splat's screen-space gradients through projection, covariance
/// construction, quaternion normalization, and the activation functions.
fn screen_to_params(
    cloud: &GaussianCloud,
    i: usize,
    w2c: &Matrix3<f64>,
    eye: &Vector3<f64>,
    f: f64,
    acc: &ScreenAcc,
    grads: &mut RenderGradients,
) {
    let t = w2c * (cloud.position(i) - eye);
    let g_mu_hat = Vector2::new(acc[0], acc[1]);
    let g_cov = Matrix2::new(acc[2], acc[3], acc[3], acc[4]);

    let q = cloud.rotation(i);
    let r = rotation_matrix(&q);
    let ls = cloud.log_scale(i);
    let s2 = Vector3::new((2.0 * ls.x).exp(), (2.0 * ls.y).exp(), (2.0 * ls.z).exp());
    let sigma_w = r * Matrix3::from_diagonal(&s2) * r.transpose();
    let m = w2c * sigma_w * w2c.transpose();
    let j = proj_jacobian(f, &t);

    // Position: through the projected center, the depth map, and J(t).
    let mut g_t = j.transpose() * g_mu_hat;
    g_t.z += acc[9];
    let g_j = 2.0 * g_cov * j * m;
    let z2 = t.z * t.z;
    let z3 = z2 * t.z;
    g_t.x += g_j[(0, 2)] * (-f / z2);
    g_t.y += g_j[(1, 2)] * (-f / z2);
    g_t.z += (g_j[(0, 0)] + g_j[(1, 1)]) * (-f / z2)
        + g_j[(0, 2)] * (2.0 * f * t.x / z3)
        + g_j[(1, 2)] * (2.0 * f * t.y / z3);
    let g_pos = w2c.transpose() * g_t;
    for k in 0..3 {
        grads.d_positions[3 * i + k] += g_pos[k];
    }

    // World covariance.
    let g_m = j.transpose() * g_cov * j;
    let g_sigma_w = w2c.transpose() * g_m * w2c;

    // Log scales.
    let rtgr = r.transpose() * g_sigma_w * r;
    for k in 0..3 {
        grads.d_log_scales[3 * i + k] += 2.0 * s2[k] * rtgr[(k, k)];
    }

    // Rotation, through R(q/|q|).
    let g_r = 2.0 * g_sigma_w * r * Matrix3::from_diagonal(&s2);
    let norm = q.norm();
    let qn = q / norm;
    let (qw, qx, qy, qz) = (qn[0], qn[1], qn[2], qn[3]);
    let dr_dq = [
        Matrix3::new(0.0, -2.0 * qz, 2.0 * qy, 2.0 * qz, 0.0, -2.0 * qx, -2.0 * qy, 2.0 * qx, 0.0),
        Matrix3::new(
            0.0, 2.0 * qy, 2.0 * qz, 2.0 * qy, -4.0 * qx, -2.0 * qw, 2.0 * qz, 2.0 * qw,
            -4.0 * qx,
        ),
        Matrix3::new(
            -4.0 * qy, 2.0 * qx, 2.0 * qw, 2.0 * qx, 0.0, 2.0 * qz, -2.0 * qw, 2.0 * qz,
            -4.0 * qy,
        ),
        Matrix3::new(
            -4.0 * qz, -2.0 * qw, 2.0 * qx, 2.0 * qw, -4.0 * qz, 2.0 * qy, 2.0 * qx, 2.0 * qy, 0.0,
        ),
    ];
    let g_qn = Vector4::from_fn(|k, _| g_r.dot(&dr_dq[k]));
    let g_q = (Matrix4::identity() - qn * qn.transpose()) * g_qn / norm;
    for k in 0..4 {
        grads.d_rotations[4 * i + k] += g_q[k];
    }

    // Opacity through the sigmoid.
    let alpha = sigmoid(cloud.opacity_logits[i]);
    grads.d_opacity_logits[i] += acc[5] * alpha * (1.0 - alpha);

    // Colors pass straight through (clamp is identity on the stored domain).
    for k in 0..3 {
        grads.d_colors[3 * i + k] += acc[6 + k];
    }
}
