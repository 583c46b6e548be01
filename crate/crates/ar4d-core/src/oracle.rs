//! Stand-ins for the pretrained multi-view generator / 3D reconstructor:
//! a synthetic scene family with closed-form ground truth, a noise model
//! emulating imperfect reconstructions, and a file-exchange adapter for
//! plugging in an external reconstruction service.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::OrbitCamera;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::img::ImageRgb;
use crate::rasterizer::render;
use crate::rng::{stream, substream};
use crate::scene::{GaussianCloud, VideoSequence};

/// A posed image handed to a reconstruction oracle.
pub type PosedView = (ImageRgb, OrbitCamera);

/// The pluggable reconstruction backend: produces the initial first-frame
/// cloud and per-frame pseudo clouds from posed renders. Implementations
/// must be deterministic given their seed; the frame index accompanies each
/// pseudo request so repeated reconstructions of one frame agree.
pub trait ReconstructionOracle {
    fn init_cloud(&self, first_frame_views: &[PosedView]) -> Result<GaussianCloud>;
    fn pseudo_reconstruct(&self, frame_k: usize, posed_views: &[PosedView])
        -> Result<GaussianCloud>;
}

fn require_views(views: &[PosedView]) -> Result<()> {
    if views.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "oracle posed views",
            expected: 1,
            got: 0,
        });
    }
    Ok(())
}

/// Synthetic motion presets with closed-form ground truth at every frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenePreset {
    /// Cluster revolving about the world Y axis.
    Orbiter,
    /// Cluster whose splat scales oscillate.
    Pulser,
    /// Cluster translating along X with an articulated sub-cluster bobbing
    /// in Y.
    Walker,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub preset: ScenePreset,
    pub n_splats: usize,
    /// Degrees per frame: orbit rate for `Orbiter`, oscillation rate for
    /// `Pulser`/`Walker` articulation.
    pub angular_velocity_deg: f64,
    /// Log-scale amplitude for `Pulser`; stride per frame for `Walker`.
    pub amplitude: f64,
    pub phase: f64,
    pub frames: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            preset: ScenePreset::Pulser,
            n_splats: 48,
            angular_velocity_deg: 10.0,
            amplitude: 0.0,
            phase: 0.0,
            frames: 8,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_splats == 0 {
            return Err(Error::Config("scene needs at least one splat".into()));
        }
        if self.frames < 2 {
            return Err(Error::Config(format!(
                "scene needs at least 2 frames, got {}",
                self.frames
            )));
        }
        Ok(())
    }
}

/// A seeded synthetic scene: base cloud plus motion law.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub base: GaussianCloud,
}

impl SyntheticScene {
    /// Build the base cloud from the scene sub-stream of `seed`. The
    /// cluster sits off-origin (or spans its travel symmetrically for the
    /// walker) so the motion is visible from the reference orbit.
    pub fn build(config: &SceneConfig, seed: u64) -> Result<SyntheticScene> {
        config.validate()?;
        let mut rng = substream(seed, &[stream::SCENE]);
        let n = config.n_splats;
        let center = match config.preset {
            ScenePreset::Orbiter => [0.33, 0.0, 0.0],
            ScenePreset::Pulser => [0.0, 0.0, 0.0],
            ScenePreset::Walker => [-config.amplitude * (config.frames - 1) as f64 / 2.0, 0.0, 0.0],
        };
        let mut positions = Vec::with_capacity(3 * n);
        for _ in 0..n {
            for &c in &center {
                positions.push(c + rng.random_range(-0.12..0.12));
            }
        }
        let rotations = (0..n)
            .flat_map(|_| {
                loop {
                    let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0f64));
                    if q.iter().map(|v| v * v).sum::<f64>().sqrt() > 0.5 {
                        break q;
                    }
                }
            })
            .collect();
        let base = GaussianCloud::new(
            positions,
            (0..n).map(|_| rng.random_range(1.5..2.5)).collect(),
            (0..3 * n).map(|_| rng.random_range(-2.8..-2.2)).collect(),
            rotations,
            (0..3 * n).map(|_| rng.random_range(0.1..0.9)).collect(),
        )?;
        Ok(SyntheticScene {
            config: *config,
            base,
        })
    }

    pub fn frames(&self) -> usize {
        self.config.frames
    }

    /// Phase-anchored oscillation offset: zero at k = 1 for any phase.
    fn oscillation(&self, k: usize) -> f64 {
        let w = self.config.angular_velocity_deg.to_radians();
        let t = (k - 1) as f64;
        self.config.amplitude * ((w * t + self.config.phase).sin() - self.config.phase.sin())
    }

    /// Closed-form animated cloud at frame `k` (1-based; frame 1 is the
    /// base cloud exactly). Never mutates the base.
    pub fn ground_truth_cloud(&self, k: usize) -> Result<GaussianCloud> {
        if k < 1 || k > self.config.frames {
            return Err(Error::FrameOutOfRange {
                frame: k,
                frames: self.config.frames,
            });
        }
        let mut cloud = self.base.clone();
        match self.config.preset {
            ScenePreset::Orbiter => {
                let theta = (self.config.angular_velocity_deg * (k - 1) as f64).to_radians();
                let (s, c) = theta.sin_cos();
                for p in cloud.positions.chunks_exact_mut(3) {
                    let (x, z) = (p[0], p[2]);
                    p[0] = c * x + s * z;
                    p[2] = -s * x + c * z;
                }
            }
            ScenePreset::Pulser => {
                let delta = self.oscillation(k);
                for s in &mut cloud.log_scales {
                    *s += delta;
                }
            }
            ScenePreset::Walker => {
                let stride = self.config.amplitude * (k - 1) as f64;
                let bob = 0.5 * self.oscillation(k);
                let articulated = cloud.len() / 4;
                for (i, p) in cloud.positions.chunks_exact_mut(3).enumerate() {
                    p[0] += stride;
                    if i < articulated {
                        p[1] += bob;
                    }
                }
            }
        }
        Ok(cloud)
    }
}

/// Render the ground-truth sequence from the fixed reference camera.
pub fn make_monocular_video(
    scene: &SyntheticScene,
    reference: &OrbitCamera,
    background: [f64; 3],
) -> Result<VideoSequence> {
    let frames = (1..=scene.frames())
        .map(|k| Ok(render(&scene.ground_truth_cloud(k)?, reference, background).color))
        .collect::<Result<Vec<_>>>()?;
    VideoSequence::new(frames, *reference)
}

/// Seeded corruption emulating an imperfect reconstruction model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub sigma_pos: f64,
    pub sigma_col: f64,
    pub sigma_op: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma_pos: 0.0,
            sigma_col: 0.0,
            sigma_op: 0.0,
        }
    }
}

impl NoiseSpec {
    pub fn is_zero(&self) -> bool {
        self.sigma_pos == 0.0 && self.sigma_col == 0.0 && self.sigma_op == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_pos < 0.0 || self.sigma_col < 0.0 || self.sigma_op < 0.0 {
            return Err(Error::Config("noise sigmas must be >= 0".into()));
        }
        Ok(())
    }
}

fn jitter<R: Rng>(values: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    for v in values {
        *v += normal.sample(rng);
    }
}

pub fn corrupt_cloud<R: Rng>(
    mut cloud: GaussianCloud,
    noise: &NoiseSpec,
    rng: &mut R,
) -> GaussianCloud {
    jitter(&mut cloud.positions, noise.sigma_pos, rng);
    jitter(&mut cloud.opacity_logits, noise.sigma_op, rng);
    if noise.sigma_col > 0.0 {
        let normal = Normal::new(0.0, noise.sigma_col).expect("validated sigma");
        for c in &mut cloud.colors {
            *c = (*c + normal.sample(rng)).clamp(0.0, 1.0);
        }
    }
    cloud
}

/// Ground-truth frame k corrupted by the per-(seed, k) noise stream; with
/// zero noise this is the exact ground truth.
pub fn synthetic_pseudo_reconstruct(
    scene: &SyntheticScene,
    k: usize,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<GaussianCloud> {
    noise.validate()?;
    let gt = scene.ground_truth_cloud(k)?;
    let mut rng = substream(seed, &[stream::ORACLE_PSEUDO, k as u32]);
    Ok(corrupt_cloud(gt, noise, &mut rng))
}

/// Noisy ground-truth frame-1 cloud: the imperfect generator output that
/// the initialization stage fine-tunes.
pub fn init_cloud_synthetic(
    scene: &SyntheticScene,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<GaussianCloud> {
    noise.validate()?;
    let gt = scene.ground_truth_cloud(1)?;
    let mut rng = substream(seed, &[stream::ORACLE_INIT]);
    Ok(corrupt_cloud(gt, noise, &mut rng))
}

/// Oracle backed by the synthetic scene's ground truth. The posed views are
/// validated but not consumed: fidelity is modeled by `NoiseSpec` instead
/// of actual multi-view reconstruction, which keeps the stand-in exact at
/// zero noise.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    pub scene: SyntheticScene,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl ReconstructionOracle for SyntheticOracle {
    fn init_cloud(&self, first_frame_views: &[PosedView]) -> Result<GaussianCloud> {
        require_views(first_frame_views)?;
        init_cloud_synthetic(&self.scene, &self.noise, self.seed)
    }

    fn pseudo_reconstruct(
        &self,
        frame_k: usize,
        posed_views: &[PosedView],
    ) -> Result<GaussianCloud> {
        require_views(posed_views)?;
        synthetic_pseudo_reconstruct(&self.scene, frame_k, &self.noise, self.seed)
    }
}

/// Adapter for an external reconstruction service speaking through the
/// filesystem. Per request it creates a fresh directory with the posed
/// views (`view_0000.png`, ...), a `cameras.json` manifest, and a
/// `request.ready` marker written last; it then polls for `response.cloud`
/// in the checkpoint binary format until `timeout`. Responders should
/// write the response to a temporary name and rename it into place.
#[derive(Debug)]
pub struct FileExchangeOracle {
    pub dir: PathBuf,
    pub timeout: Duration,
    pub poll: Duration,
    counter: AtomicUsize,
}

impl FileExchangeOracle {
    pub fn new(dir: impl Into<PathBuf>, timeout: Duration) -> Self {
        FileExchangeOracle {
            dir: dir.into(),
            timeout,
            poll: Duration::from_millis(25),
            counter: AtomicUsize::new(0),
        }
    }

    fn exchange(&self, tag: &str, views: &[PosedView]) -> Result<GaussianCloud> {
        require_views(views)?;
        let serial = self.counter.fetch_add(1, Ordering::SeqCst);
        let request_dir = self.dir.join(format!("{tag}_{serial:04}"));
        std::fs::create_dir_all(&request_dir).map_err(|e| Error::io(&request_dir, e))?;
        let mut cameras = Vec::with_capacity(views.len());
        for (i, (image, camera)) in views.iter().enumerate() {
            image.save_png(&request_dir.join(format!("view_{i:04}.png")))?;
            cameras.push(*camera);
        }
        let manifest = request_dir.join("cameras.json");
        let body = serde_json::to_string_pretty(&cameras)
            .map_err(|e| Error::Config(format!("camera manifest serialization: {e}")))?;
        std::fs::write(&manifest, body).map_err(|e| Error::io(&manifest, e))?;
        let marker = request_dir.join("request.ready");
        std::fs::write(&marker, b"").map_err(|e| Error::io(&marker, e))?;

        let response = request_dir.join("response.cloud");
        let started = Instant::now();
        loop {
            if response.exists() {
                return checkpoint::read_cloud(&response);
            }
            if started.elapsed() >= self.timeout {
                return Err(Error::OracleTimeout {
                    path: response,
                    seconds: self.timeout.as_secs_f64(),
                });
            }
            std::thread::sleep(self.poll.min(self.timeout));
        }
    }
}

impl ReconstructionOracle for FileExchangeOracle {
    fn init_cloud(&self, first_frame_views: &[PosedView]) -> Result<GaussianCloud> {
        self.exchange("init", first_frame_views)
    }

    fn pseudo_reconstruct(
        &self,
        frame_k: usize,
        posed_views: &[PosedView],
    ) -> Result<GaussianCloud> {
        self.exchange(&format!("frame_{frame_k:04}"), posed_views)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::psnr_capped;
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, Vector3};

    fn scene(preset: ScenePreset, amplitude: f64, frames: usize) -> SyntheticScene {
        let config = SceneConfig {
            preset,
            n_splats: 24,
            angular_velocity_deg: 10.0,
            amplitude,
            phase: 0.4,
            frames,
        };
        SyntheticScene::build(&config, 77).unwrap()
    }

    #[test]
    fn frame_one_is_base_for_every_preset() {
        for preset in [ScenePreset::Orbiter, ScenePreset::Pulser, ScenePreset::Walker] {
            let s = scene(preset, 0.1, 6);
            let g1 = s.ground_truth_cloud(1).unwrap();
            assert_eq!(g1, s.base, "{preset:?}");
        }
    }

    #[test]
    fn orbiter_quarter_turn_matches_rotation_oracle() {
        let s = scene(ScenePreset::Orbiter, 0.0, 12);
        let g10 = s.ground_truth_cloud(10).unwrap();
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), 90.0_f64.to_radians());
        for i in 0..s.base.len() {
            let expected = rot * s.base.position(i);
            let got = g10.position(i);
            for a in 0..3 {
                assert_relative_eq!(got[a], expected[a], epsilon = 1e-12);
            }
        }
        assert_eq!(g10.log_scales, s.base.log_scales);
        assert_eq!(g10.colors, s.base.colors);
    }

    #[test]
    fn pulser_zero_amplitude_is_static() {
        let s = scene(ScenePreset::Pulser, 0.0, 8);
        for k in 2..=8 {
            assert_eq!(s.ground_truth_cloud(k).unwrap(), s.base, "frame {k}");
        }
    }

    #[test]
    fn pulser_scales_oscillate_but_positions_hold() {
        let s = scene(ScenePreset::Pulser, 0.3, 8);
        let g3 = s.ground_truth_cloud(3).unwrap();
        assert_eq!(g3.positions, s.base.positions);
        assert_ne!(g3.log_scales, s.base.log_scales);
        let expected = s.base.log_scales[0] + s.oscillation(3);
        assert_relative_eq!(g3.log_scales[0], expected, epsilon = 1e-15);
    }

    #[test]
    fn walker_translates_and_articulates() {
        let s = scene(ScenePreset::Walker, 0.05, 6);
        let g4 = s.ground_truth_cloud(4).unwrap();
        let n = s.base.len();
        for i in 0..n {
            let base = s.base.position(i);
            let got = g4.position(i);
            assert_relative_eq!(got[0], base[0] + 0.05 * 3.0, epsilon = 1e-12);
            assert_eq!(got[2], base[2]);
            if i >= n / 4 {
                assert_eq!(got[1], base[1], "rigid splat {i} moved in y");
            }
        }
        // The articulated quarter bobs.
        assert_ne!(g4.position(0)[1], s.base.position(0)[1]);
        assert_eq!(g4.rotations, s.base.rotations);
        assert_eq!(g4.colors, s.base.colors);
    }

    #[test]
    fn ground_truth_rejects_out_of_range_frames() {
        let s = scene(ScenePreset::Orbiter, 0.0, 5);
        assert!(s.ground_truth_cloud(0).is_err());
        assert!(s.ground_truth_cloud(6).is_err());
        let err = s.ground_truth_cloud(9).unwrap_err().to_string();
        assert!(err.contains("9"), "{err}");
    }

    #[test]
    fn ground_truth_never_mutates_base() {
        let s = scene(ScenePreset::Walker, 0.08, 7);
        let before = s.base.clone();
        let _ = s.ground_truth_cloud(7).unwrap();
        assert_eq!(s.base, before);
    }

    #[test]
    fn ground_truth_clouds_validate_cleanly() {
        for preset in [ScenePreset::Orbiter, ScenePreset::Pulser, ScenePreset::Walker] {
            let s = scene(preset, 0.2, 6);
            for k in 1..=6 {
                assert!(s.ground_truth_cloud(k).unwrap().validate().is_empty());
            }
        }
    }

    #[test]
    fn monocular_video_shape_and_static_content() {
        let s = scene(ScenePreset::Pulser, 0.0, 5);
        let cam = OrbitCamera::default().with_size(32, 32);
        let video = make_monocular_video(&s, &cam, [0.0; 3]).unwrap();
        assert_eq!(video.frames.len(), 5);
        assert_eq!(video.frames[0].width, 32);
        let first = render(&s.base, &cam, [0.0; 3]).color;
        assert_eq!(video.frames[0], first);
        for f in &video.frames[1..] {
            assert_eq!(*f, first);
        }
    }

    #[test]
    fn zero_noise_pseudo_is_exact_ground_truth() {
        let s = scene(ScenePreset::Orbiter, 0.0, 6);
        let noise = NoiseSpec::default();
        let got = synthetic_pseudo_reconstruct(&s, 4, &noise, 99).unwrap();
        assert_eq!(got, s.ground_truth_cloud(4).unwrap());
    }

    #[test]
    fn position_noise_has_requested_std() {
        let config = SceneConfig {
            preset: ScenePreset::Pulser,
            n_splats: 10_000,
            ..SceneConfig::default()
        };
        let s = SyntheticScene::build(&config, 5).unwrap();
        let noise = NoiseSpec {
            sigma_pos: 0.01,
            ..NoiseSpec::default()
        };
        let corrupted = synthetic_pseudo_reconstruct(&s, 2, &noise, 5).unwrap();
        let var: f64 = corrupted
            .positions
            .iter()
            .zip(&s.ground_truth_cloud(2).unwrap().positions)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            / corrupted.positions.len() as f64;
        let std = var.sqrt();
        assert!(
            (0.009..=0.011).contains(&std),
            "empirical std {std} outside 10% of 0.01"
        );
    }

    #[test]
    fn corruption_is_per_seed_and_per_frame() {
        let s = scene(ScenePreset::Pulser, 0.0, 6);
        let noise = NoiseSpec {
            sigma_pos: 0.02,
            sigma_col: 0.05,
            sigma_op: 0.1,
        };
        let a = synthetic_pseudo_reconstruct(&s, 3, &noise, 1).unwrap();
        let b = synthetic_pseudo_reconstruct(&s, 3, &noise, 1).unwrap();
        assert_eq!(a, b);
        let other_frame = synthetic_pseudo_reconstruct(&s, 4, &noise, 1).unwrap();
        assert_ne!(a.positions, other_frame.positions);
        let other_seed = synthetic_pseudo_reconstruct(&s, 3, &noise, 2).unwrap();
        assert_ne!(a.positions, other_seed.positions);
    }

    #[test]
    fn color_noise_degrades_init_render() {
        let s = scene(ScenePreset::Pulser, 0.0, 4);
        let cam = OrbitCamera::default().with_size(48, 48);
        let gt_render = render(&s.base, &cam, [0.0; 3]).color;

        let clean = init_cloud_synthetic(&s, &NoiseSpec::default(), 11).unwrap();
        assert_eq!(clean, s.base);
        let clean_psnr = psnr_capped(&render(&clean, &cam, [0.0; 3]).color, &gt_render).unwrap();

        let noisy_spec = NoiseSpec {
            sigma_col: 0.2,
            ..NoiseSpec::default()
        };
        let noisy = init_cloud_synthetic(&s, &noisy_spec, 11).unwrap();
        let noisy_psnr = psnr_capped(&render(&noisy, &cam, [0.0; 3]).color, &gt_render).unwrap();
        assert!(
            noisy_psnr < clean_psnr,
            "noisy {noisy_psnr} dB !< clean {clean_psnr} dB"
        );
    }

    #[test]
    fn synthetic_oracle_requires_views() {
        let s = scene(ScenePreset::Pulser, 0.0, 4);
        let oracle = SyntheticOracle {
            scene: s,
            noise: NoiseSpec::default(),
            seed: 3,
        };
        assert!(oracle.init_cloud(&[]).is_err());
        let view = (ImageRgb::new(8, 8), OrbitCamera::default());
        assert!(oracle.init_cloud(std::slice::from_ref(&view)).is_ok());
        assert!(oracle.pseudo_reconstruct(2, &[view]).is_ok());
    }

    #[test]
    fn file_exchange_roundtrip_with_responder() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let sent = {
            let s = scene(ScenePreset::Pulser, 0.0, 4);
            let mut c = s.base.clone();
            checkpoint::quantize_cloud(&mut c);
            c
        };
        let responder_cloud = sent.clone();
        let responder_root = root.clone();
        let responder = std::thread::spawn(move || {
            let deadline = Instant::now() + Duration::from_secs(10);
            while Instant::now() < deadline {
                if let Ok(entries) = std::fs::read_dir(&responder_root) {
                    for entry in entries.flatten() {
                        let req = entry.path();
                        if req.join("request.ready").exists()
                            && !req.join("response.cloud").exists()
                        {
                            let tmp = req.join("response.partial");
                            checkpoint::write_cloud(&responder_cloud, &tmp).unwrap();
                            std::fs::rename(&tmp, req.join("response.cloud")).unwrap();
                            return;
                        }
                    }
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            panic!("no request appeared");
        });

        let oracle = FileExchangeOracle::new(&root, Duration::from_secs(10));
        let view = (ImageRgb::filled(8, 8, [0.5, 0.2, 0.1]), OrbitCamera::default());
        let got = oracle.pseudo_reconstruct(3, &[view]).unwrap();
        responder.join().unwrap();
        assert_eq!(got, sent);

        // The request directory carries the views and manifest.
        let req = root.join("frame_0003_0000");
        assert!(req.join("view_0000.png").exists());
        let manifest = std::fs::read_to_string(req.join("cameras.json")).unwrap();
        let cams: Vec<OrbitCamera> = serde_json::from_str(&manifest).unwrap();
        assert_eq!(cams.len(), 1);
        assert_eq!(cams[0], OrbitCamera::default());
    }

    #[test]
    fn file_exchange_times_out_without_responder() {
        let dir = tempfile::tempdir().unwrap();
        let oracle = FileExchangeOracle::new(dir.path(), Duration::from_millis(80));
        let view = (ImageRgb::new(4, 4), OrbitCamera::default());
        let err = oracle.init_cloud(&[view]).unwrap_err();
        assert!(err.to_string().contains("timed out"), "{err}");
    }

    #[test]
    fn file_exchange_rejects_malformed_response() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        // Pre-plant a garbage response where the first request will look.
        let req = root.join("init_0000");
        std::fs::create_dir_all(&req).unwrap();
        std::fs::write(req.join("response.cloud"), b"not a checkpoint").unwrap();
        let oracle = FileExchangeOracle::new(&root, Duration::from_secs(1));
        let view = (ImageRgb::new(4, 4), OrbitCamera::default());
        let err = oracle.init_cloud(&[view]).unwrap_err();
        assert!(err.to_string().contains("bad checkpoint magic"), "{err}");
    }
}
