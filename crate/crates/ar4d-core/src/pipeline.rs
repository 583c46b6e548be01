//! Three-stage training pipeline over a monocular video: initialization
//! fine-tune of the first-frame cloud, autoregressive per-pair generation
//! with progressive pseudo-view supervision, and global refinement against
//! the frozen per-frame results. Also owns the run directory: config
//! snapshot, stage checkpoints, loss logs, evaluation renders and metrics.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::camera::OrbitCamera;
use crate::checkpoint::{
    self, quantize_cloud, quantize_mlp, read_cloud, read_mlp, write_cloud, write_mlp,
};
use crate::deformation::{
    apply_global_cached, apply_local, apply_local_cached, deform_backward, FieldShape,
    GlobalField, LocalField, DELTA_CHANNELS,
};
use crate::error::{Error, Result};
use crate::field::{AdamState, LrSchedule, MlpOptimizer, MlpParams};
use crate::img::{ImageRgb, ScalarImage};
use crate::objectives::{
    psnr_capped, pseudo_losses, reference_loss, refinement_losses, ssim, LossReport,
    REFERENCE_LAMBDA,
};
use crate::oracle::{
    make_monocular_video, FileExchangeOracle, NoiseSpec, PosedView, ReconstructionOracle,
    SceneConfig, SyntheticOracle, SyntheticScene,
};
use crate::rasterizer::{render, render_backward, RenderGradients};
use crate::rng::{stream, substream};
use crate::scene::{GaussianCloud, VideoSequence};
use crate::view_sampling::{
    orthogonal_views, sample_novel_view, sample_refinement_view, SamplingSchedule,
};
use rand::Rng;

/// Azimuths (degrees) of the evaluation renders emitted by a full run.
pub const EVAL_AZIMUTHS: [f64; 4] = [0.0, -45.0, 45.0, 180.0];

pub const METRICS_CSV_HEADER: &str = "frame,azimuth,psnr_db,ssim";

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// First-stage fine-tune: positions and colors only, MSE against frame 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    pub lr: f64,
    pub iters: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig { lr: 1e-5, iters: 1000 }
    }
}

/// Per-attribute Adam learning rates for cloud parameters. The position
/// rate is multiplied by the cloud's spatial extent at optimizer creation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttributeLr {
    pub positions: f64,
    pub opacity: f64,
    pub log_scales: f64,
    pub rotations: f64,
    pub colors: f64,
}

impl Default for AttributeLr {
    fn default() -> Self {
        AttributeLr {
            positions: 1.6e-4,
            opacity: 5e-2,
            log_scales: 5e-3,
            rotations: 1e-3,
            colors: 2.5e-3,
        }
    }
}

impl AttributeLr {
    fn validate(&self, what: &str) -> Result<()> {
        let rates = [
            self.positions,
            self.opacity,
            self.log_scales,
            self.rotations,
            self.colors,
        ];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config(format!(
                "{what}: attribute learning rates must be finite and >= 0"
            )));
        }
        Ok(())
    }
}

/// Second-stage (per-pair) optimization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub iters_per_frame: u64,
    pub mlp_lr: LrSchedule,
    pub attributes: AttributeLr,
    pub w_rgb: f64,
    pub w_depth: f64,
    pub schedule: SamplingSchedule,
    /// Disables the novel-view pseudo supervision entirely (ablation).
    pub pseudo_supervision: bool,
    /// 0 = reconstruct the pseudo cloud once at iteration 0; M > 0 also
    /// refreshes it every M iterations.
    pub pseudo_refresh_iters: u64,
    pub field: FieldShape,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            iters_per_frame: 2000,
            mlp_lr: LrSchedule::default(),
            attributes: AttributeLr::default(),
            w_rgb: 1.0,
            w_depth: 1.0,
            schedule: SamplingSchedule::default(),
            pseudo_supervision: true,
            pseudo_refresh_iters: 0,
            field: FieldShape::default(),
        }
    }
}

/// Third-stage (global) optimization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinementConfig {
    pub iters: u64,
    pub mlp_lr: LrSchedule,
    pub attributes: AttributeLr,
    pub field: FieldShape,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            iters: 30_000,
            mlp_lr: LrSchedule { total_steps: 30_000, ..LrSchedule::default() },
            attributes: AttributeLr::default(),
            field: FieldShape::default(),
        }
    }
}

/// Collapse detection. A stage iteration that produces a non-finite loss
/// or gradient, or a sustained reference-loss plateau far above the best
/// value seen, restarts the stage with a fresh field (up to `max_restarts`)
/// and aborts with a diagnostic after that.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollapseConfig {
    pub nan_check: bool,
    /// Window length for plateau medians; 0 disables the plateau detector.
    pub plateau_window: u64,
    /// A window whose median exceeds `ratio` x the previous window's median
    /// counts as a strike; strikes reset whenever the loss still improves.
    pub plateau_ratio: f64,
    pub plateau_strikes: u32,
    /// Plateaus only count while the median exceeds `tolerance` x the best
    /// loss seen, so a converged flat loss is never a collapse.
    pub plateau_tolerance: f64,
    /// Absolute floor: medians below this never trigger a collapse, which
    /// keeps runs sitting at the numerical noise floor alive.
    pub plateau_floor: f64,
    pub max_restarts: u32,
    /// Iterations whose total loss is already below this floor record
    /// their report but skip the parameter update. At checkpoint-
    /// quantization error levels the L1 sign gradients are pure noise of
    /// full magnitude, and Adam's unit-scale first step would walk a
    /// converged state away from the optimum. 0 disables the guard.
    pub convergence_floor: f64,
}

impl Default for CollapseConfig {
    fn default() -> Self {
        CollapseConfig {
            nan_check: true,
            plateau_window: 200,
            plateau_ratio: 0.98,
            plateau_strikes: 3,
            plateau_tolerance: 5.0,
            plateau_floor: 1e-3,
            max_restarts: 2,
            convergence_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub init: InitConfig,
    pub generation: GenerationConfig,
    pub refinement: RefinementConfig,
    pub collapse: CollapseConfig,
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.init.iters < 1 || self.generation.iters_per_frame < 1 || self.refinement.iters < 1
        {
            return Err(Error::Config("iteration counts must be >= 1".into()));
        }
        if !(self.init.lr.is_finite() && self.init.lr > 0.0) {
            return Err(Error::Config("init lr must be finite and > 0".into()));
        }
        for (what, s) in [
            ("generation mlp_lr", &self.generation.mlp_lr),
            ("refinement mlp_lr", &self.refinement.mlp_lr),
        ] {
            if !(s.lr_init > 0.0 && s.lr_final > 0.0 && s.lr_init.is_finite()) {
                return Err(Error::Config(format!("{what}: rates must be finite and > 0")));
            }
        }
        if !(self.generation.w_rgb >= 0.0 && self.generation.w_depth >= 0.0)
            || !self.generation.w_rgb.is_finite()
            || !self.generation.w_depth.is_finite()
        {
            return Err(Error::Config("pseudo-loss weights must be finite and >= 0".into()));
        }
        self.generation.schedule.validate()?;
        self.generation.attributes.validate("generation")?;
        self.refinement.attributes.validate("refinement")?;
        let c = &self.collapse;
        if !(c.plateau_ratio.is_finite() && c.plateau_ratio > 0.0)
            || !(c.plateau_tolerance.is_finite() && c.plateau_tolerance >= 1.0)
            || !(c.plateau_floor.is_finite() && c.plateau_floor >= 0.0)
            || !(c.convergence_floor.is_finite() && c.convergence_floor >= 0.0)
        {
            return Err(Error::Config("collapse thresholds out of range".into()));
        }
        Ok(())
    }
}

fn default_seed() -> u64 {
    7
}
fn default_train_size() -> usize {
    64
}
fn default_eval_size() -> usize {
    128
}
fn default_oracle_timeout() -> f64 {
    60.0
}

/// Full run description. Everything except the output directory has a
/// default; unknown keys in a config file are rejected by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub stages: StageConfig,
    #[serde(default = "default_train_size")]
    pub train_size: usize,
    #[serde(default = "default_eval_size")]
    pub eval_size: usize,
    #[serde(default)]
    pub background: [f64; 3],
    pub out_dir: PathBuf,
    /// Train from `frame_0001.png`, ... in this directory instead of the
    /// synthetic scene. Requires an external oracle (`oracle_dir`), and
    /// metrics are then limited to the reference view against the video.
    #[serde(default)]
    pub video_dir: Option<PathBuf>,
    /// Exchange directory of an external reconstruction service; when
    /// unset, the synthetic oracle derived from `scene` + `noise` is used.
    #[serde(default)]
    pub oracle_dir: Option<PathBuf>,
    #[serde(default = "default_oracle_timeout")]
    pub oracle_timeout_secs: f64,
}

impl RunConfig {
    /// Defaults with the output directory filled in.
    pub fn new(out_dir: impl Into<PathBuf>) -> RunConfig {
        RunConfig {
            seed: default_seed(),
            scene: SceneConfig::default(),
            noise: NoiseSpec::default(),
            stages: StageConfig::default(),
            train_size: default_train_size(),
            eval_size: default_eval_size(),
            background: [0.0; 3],
            out_dir: out_dir.into(),
            video_dir: None,
            oracle_dir: None,
            oracle_timeout_secs: default_oracle_timeout(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.noise.validate()?;
        self.stages.validate()?;
        // The structural similarity window needs at least 11 px on a side.
        if self.train_size < 11 || self.eval_size < 11 {
            return Err(Error::Config("resolutions must be at least 11 px".into()));
        }
        if self.background.iter().any(|b| !b.is_finite() || *b < 0.0 || *b > 1.0) {
            return Err(Error::Config("background channels must lie in [0, 1]".into()));
        }
        if !(self.oracle_timeout_secs.is_finite() && self.oracle_timeout_secs > 0.0) {
            return Err(Error::Config("oracle_timeout_secs must be > 0".into()));
        }
        if self.video_dir.is_some() && self.oracle_dir.is_none() {
            return Err(Error::Config(
                "video_dir requires oracle_dir: an external video has no synthetic oracle".into(),
            ));
        }
        Ok(())
    }

    /// Fixed monocular training viewpoint.
    pub fn reference_camera(&self) -> OrbitCamera {
        OrbitCamera::default().with_size(self.train_size, self.train_size)
    }
}

// ---------------------------------------------------------------------------
// Shared optimization helpers
// ---------------------------------------------------------------------------

/// Spatial extent used to scale the position learning rate: the largest
/// splat distance from the cloud centroid, floored away from zero.
pub fn cloud_extent(cloud: &GaussianCloud) -> f64 {
    let n = cloud.len();
    if n == 0 {
        return 1e-3;
    }
    let mut centroid = nalgebra::Vector3::zeros();
    for i in 0..n {
        centroid += cloud.position(i);
    }
    centroid /= n as f64;
    let mut max_sq: f64 = 0.0;
    for i in 0..n {
        max_sq = max_sq.max((cloud.position(i) - centroid).norm_squared());
    }
    max_sq.sqrt().max(1e-3)
}

/// Adam over all five cloud attribute arrays with per-attribute rates.
/// Colors are clamped back to [0, 1] after every step.
#[derive(Debug, Clone)]
pub struct CloudOptimizer {
    positions: AdamState,
    opacity: AdamState,
    log_scales: AdamState,
    rotations: AdamState,
    colors: AdamState,
    lr: AttributeLr,
    extent: f64,
}

impl CloudOptimizer {
    pub fn new(cloud: &GaussianCloud, lr: AttributeLr) -> Self {
        let n = cloud.len();
        CloudOptimizer {
            positions: AdamState::new(3 * n),
            opacity: AdamState::new(n),
            log_scales: AdamState::new(3 * n),
            rotations: AdamState::new(4 * n),
            colors: AdamState::new(3 * n),
            lr,
            extent: cloud_extent(cloud),
        }
    }

    pub fn step(&mut self, cloud: &mut GaussianCloud, g: &RenderGradients) -> Result<()> {
        self.positions.step(
            &mut cloud.positions,
            &g.d_positions,
            self.lr.positions * self.extent,
            "cloud positions",
        )?;
        self.opacity.step(
            &mut cloud.opacity_logits,
            &g.d_opacity_logits,
            self.lr.opacity,
            "cloud opacity logits",
        )?;
        self.log_scales.step(
            &mut cloud.log_scales,
            &g.d_log_scales,
            self.lr.log_scales,
            "cloud log scales",
        )?;
        self.rotations.step(
            &mut cloud.rotations,
            &g.d_rotations,
            self.lr.rotations,
            "cloud rotations",
        )?;
        self.colors.step(&mut cloud.colors, &g.d_colors, self.lr.colors, "cloud colors")?;
        for c in &mut cloud.colors {
            *c = c.clamp(0.0, 1.0);
        }
        Ok(())
    }
}

fn median_of(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sliding plateau detector over the reference loss (see CollapseConfig).
struct PlateauDetector {
    cfg: CollapseConfig,
    window: Vec<f64>,
    prev_median: Option<f64>,
    strikes: u32,
    best: f64,
}

impl PlateauDetector {
    fn new(cfg: CollapseConfig) -> Self {
        PlateauDetector {
            cfg,
            window: Vec::new(),
            prev_median: None,
            strikes: 0,
            best: f64::INFINITY,
        }
    }

    /// Feed one loss value; returns a collapse reason when the plateau
    /// criterion fires at a window boundary.
    fn observe(&mut self, l_ref: f64) -> Option<String> {
        if self.cfg.plateau_window == 0 {
            return None;
        }
        self.best = self.best.min(l_ref);
        self.window.push(l_ref);
        if self.window.len() < self.cfg.plateau_window as usize {
            return None;
        }
        let median = median_of(&self.window);
        self.window.clear();
        if let Some(prev) = self.prev_median {
            if median > self.cfg.plateau_ratio * prev {
                self.strikes += 1;
            } else {
                self.strikes = 0;
            }
        }
        self.prev_median = Some(median);
        if self.strikes >= self.cfg.plateau_strikes
            && median > self.cfg.plateau_tolerance * self.best
            && median > self.cfg.plateau_floor
        {
            return Some(format!(
                "reference loss plateau: window median {median:.3e} after {} flat windows, \
                 best {:.3e}",
                self.strikes, self.best
            ));
        }
        None
    }
}

/// Outcome of one stage attempt: finished, or collapsed with a reason.
enum Attempt<T> {
    Done(T),
    Collapsed { reason: String, iteration: u64 },
}

/// Treat optimizer divergence as a collapse (restartable); pass everything
/// else through as a hard error.
fn step_or_collapse(r: Result<()>, iteration: u64) -> Result<Option<Attempt<()>>> {
    match r {
        Ok(()) => Ok(None),
        Err(Error::OptimizerDiverged { what }) => Ok(Some(Attempt::Collapsed {
            reason: format!("non-finite gradient in {what}"),
            iteration,
        })),
        Err(e) => Err(e),
    }
}

// ---------------------------------------------------------------------------
// Stage 1: initialization fine-tune
// ---------------------------------------------------------------------------

fn mse_loss(a: &ImageRgb, b: &ImageRgb) -> Result<(f64, Vec<f64>)> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch {
            what: "image pixels",
            expected: b.width * b.height,
            got: a.width * a.height,
        });
    }
    let n = a.data.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; a.data.len()];
    for (i, (&x, &y)) in a.data.iter().zip(&b.data).enumerate() {
        let d = x - y;
        loss += d * d / n;
        grad[i] = 2.0 * d / n;
    }
    Ok((loss, grad))
}

/// Fit the oracle's first-frame cloud to the first video frame by mean
/// squared error, optimizing positions and colors only; opacities, scales,
/// and rotations are returned bit-identical to the input.
pub fn stage_initialize(
    init_cloud: &GaussianCloud,
    v1: &ImageRgb,
    camera: &OrbitCamera,
    background: [f64; 3],
    stages: &StageConfig,
) -> Result<(GaussianCloud, Vec<LossReport>)> {
    let mut g = init_cloud.clone();
    let n = g.len();
    let mut pos_opt = AdamState::new(3 * n);
    let mut col_opt = AdamState::new(3 * n);
    let zero_depth = ScalarImage::new(camera.width, camera.height);
    let mut reports = Vec::with_capacity(stages.init.iters as usize);
    for u in 0..stages.init.iters {
        let frame = render(&g, camera, background);
        let (loss, d_color) = mse_loss(&frame.color, v1)?;
        if stages.collapse.nan_check && !loss.is_finite() {
            return Err(Error::Collapse {
                stage: "initialization",
                frame: 1,
                iteration: u,
                restarts: 0,
                reason: "non-finite loss".into(),
            });
        }
        reports.push(LossReport { l_ref: loss, total: loss, ..LossReport::zero(u) });
        if loss < stages.collapse.convergence_floor {
            continue;
        }
        let d_img = ImageRgb { width: frame.color.width, height: frame.color.height, data: d_color };
        let grads = render_backward(&g, camera, background, &d_img, &zero_depth)?;
        let stepped = pos_opt
            .step(&mut g.positions, &grads.d_positions, stages.init.lr, "init positions")
            .and_then(|_| {
                col_opt.step(&mut g.colors, &grads.d_colors, stages.init.lr, "init colors")
            });
        if let Err(Error::OptimizerDiverged { what }) = stepped {
            return Err(Error::Collapse {
                stage: "initialization",
                frame: 1,
                iteration: u,
                restarts: 0,
                reason: format!("non-finite gradient in {what}"),
            });
        }
        stepped?;
        for c in &mut g.colors {
            *c = c.clamp(0.0, 1.0);
        }
    }
    Ok((g, reports))
}

// ---------------------------------------------------------------------------
// Stage 2: autoregressive generation
// ---------------------------------------------------------------------------

/// Unquantized end-of-pair state, kept so the freeze identity
/// `frozen == apply_local(field, base_final)` can be verified bit-exactly.
#[derive(Debug, Clone)]
pub struct PairDetail {
    /// The produced frame index (i + 1).
    pub frame: usize,
    /// Working copy of frame i after the joint optimization.
    pub base_final: GaussianCloud,
    pub field: LocalField,
    pub frozen: GaussianCloud,
}

#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub detail: PairDetail,
    /// Checkpoint-precision cloud that seeds the next pair.
    pub frozen_quantized: GaussianCloud,
    pub mlp_quantized: MlpParams,
    pub reports: Vec<LossReport>,
}

struct PairJob<'a> {
    base: &'a GaussianCloud,
    target: &'a ImageRgb,
    reference: &'a OrbitCamera,
    oracle: &'a dyn ReconstructionOracle,
    /// 1-based index of the frame being produced.
    frame_k: usize,
    stages: &'a StageConfig,
    background: [f64; 3],
    seed: u64,
}

impl PairJob<'_> {
    fn run(&self) -> Result<PairOutcome> {
        let mut last = (String::from("no attempt ran"), 0u64);
        for restart in 0..=self.stages.collapse.max_restarts {
            match self.attempt(restart)? {
                Attempt::Done(outcome) => return Ok(outcome),
                Attempt::Collapsed { reason, iteration } => last = (reason, iteration),
            }
        }
        Err(Error::Collapse {
            stage: "generation",
            frame: self.frame_k,
            iteration: last.1,
            restarts: self.stages.collapse.max_restarts,
            reason: last.0,
        })
    }

    fn attempt(&self, restart: u32) -> Result<Attempt<PairOutcome>> {
        let gen = &self.stages.generation;
        let tags = [stream::FIELD_INIT, self.frame_k as u32, restart];
        let mut field = LocalField::init(&gen.field, &mut substream(self.seed, &tags));
        let view_tags = [stream::VIEW_SAMPLER, self.frame_k as u32, restart];
        let mut view_rng = substream(self.seed, &view_tags);
        let mut working = self.base.clone();
        let mut mlp_opt = MlpOptimizer::new(&field.mlp);
        let mut cloud_opt = CloudOptimizer::new(&working, gen.attributes);
        let mut plateau = PlateauDetector::new(self.stages.collapse);
        let mut pseudo: Option<GaussianCloud> = None;
        let mut reports = Vec::with_capacity(gen.iters_per_frame as usize);
        let zero_depth = ScalarImage::new(self.reference.width, self.reference.height);

        for u in 0..gen.iters_per_frame {
            let refresh = gen.pseudo_refresh_iters;
            if gen.pseudo_supervision && (u == 0 || (refresh > 0 && u % refresh == 0)) {
                let estimate = apply_local(&field, &working);
                let views: Vec<PosedView> = orthogonal_views(self.reference)
                    .iter()
                    .map(|cam| (render(&estimate, cam, self.background).color, *cam))
                    .collect();
                pseudo = Some(self.oracle.pseudo_reconstruct(self.frame_k, &views)?);
            }

            let (deformed, cache) = apply_local_cached(&field, &working);
            let ref_frame = render(&deformed, self.reference, self.background);
            let (l_ref, d_ref) = reference_loss(&ref_frame.color, self.target, REFERENCE_LAMBDA)?;

            let mut novel_term = None;
            if gen.pseudo_supervision {
                let novel_cam =
                    sample_novel_view(&gen.schedule, u, self.reference, &mut view_rng);
                let novel = render(&deformed, &novel_cam, self.background);
                let pseudo_cloud = pseudo.as_ref().expect("pseudo cloud set at iteration 0");
                let pseudo_render = render(pseudo_cloud, &novel_cam, self.background);
                let pl = pseudo_losses(&novel, &pseudo_render)?;
                novel_term = Some((novel_cam, pl));
            }
            let (l_rgb, l_depth) =
                novel_term.as_ref().map_or((0.0, 0.0), |(_, pl)| (pl.l_rgb, pl.l_depth));
            let total = l_ref + gen.w_rgb * l_rgb + gen.w_depth * l_depth;
            reports.push(LossReport { l_ref, l_rgb, l_depth, total, ..LossReport::zero(u) });

            if self.stages.collapse.nan_check && !total.is_finite() {
                return Ok(Attempt::Collapsed {
                    reason: format!("non-finite loss (l_ref {l_ref}, l_rgb {l_rgb}, l_depth {l_depth})"),
                    iteration: u,
                });
            }
            if let Some(reason) = plateau.observe(l_ref) {
                return Ok(Attempt::Collapsed { reason, iteration: u });
            }
            if total < self.stages.collapse.convergence_floor {
                continue;
            }

            let d_ref_img = ImageRgb {
                width: ref_frame.color.width,
                height: ref_frame.color.height,
                data: d_ref,
            };
            let mut d_deformed = render_backward(
                &deformed,
                self.reference,
                self.background,
                &d_ref_img,
                &zero_depth,
            )?;
            if let Some((novel_cam, pl)) = &novel_term {
                if gen.w_rgb != 0.0 || gen.w_depth != 0.0 {
                    let d_color = ImageRgb {
                        width: novel_cam.width,
                        height: novel_cam.height,
                        data: pl.d_color.iter().map(|g| gen.w_rgb * g).collect(),
                    };
                    let d_depth = ScalarImage {
                        width: novel_cam.width,
                        height: novel_cam.height,
                        data: pl.d_depth.iter().map(|g| gen.w_depth * g).collect(),
                    };
                    let novel_grads = render_backward(
                        &deformed,
                        novel_cam,
                        self.background,
                        &d_color,
                        &d_depth,
                    )?;
                    d_deformed.add_assign(&novel_grads);
                }
            }

            let (d_mlp, d_base) =
                deform_backward(&field.mlp, &field.encoding, &working, &cache, &d_deformed);
            let lr = gen.mlp_lr.lr_at(u);
            if let Some(Attempt::Collapsed { reason, iteration }) =
                step_or_collapse(mlp_opt.step(&mut field.mlp, &d_mlp, lr), u)?
            {
                return Ok(Attempt::Collapsed { reason, iteration });
            }
            if let Some(Attempt::Collapsed { reason, iteration }) =
                step_or_collapse(cloud_opt.step(&mut working, &d_base), u)?
            {
                return Ok(Attempt::Collapsed { reason, iteration });
            }
        }

        let frozen = apply_local(&field, &working);
        let mut frozen_quantized = frozen.clone();
        quantize_cloud(&mut frozen_quantized);
        let mut mlp_quantized = field.mlp.clone();
        quantize_mlp(&mut mlp_quantized);
        Ok(Attempt::Done(PairOutcome {
            detail: PairDetail { frame: self.frame_k, base_final: working, field, frozen },
            frozen_quantized,
            mlp_quantized,
            reports,
        }))
    }
}

/// Optimize one adjacent frame pair: fit a fresh local field (plus the
/// previous frame's attributes, on a working copy) so that the deformed
/// cloud matches video frame `frame_k` at the reference view and the
/// oracle's pseudo cloud at progressively wider novel views.
pub fn generate_pair(
    base: &GaussianCloud,
    target: &ImageRgb,
    reference: &OrbitCamera,
    oracle: &dyn ReconstructionOracle,
    frame_k: usize,
    stages: &StageConfig,
    background: [f64; 3],
    seed: u64,
) -> Result<PairOutcome> {
    PairJob { base, target, reference, oracle, frame_k, stages, background, seed }.run()
}

#[derive(Debug, Clone, Default)]
pub struct GenerationOutcome {
    /// Checkpoint-precision clouds for frames 2..=F, in order.
    pub frames: Vec<GaussianCloud>,
    /// Checkpoint-precision field parameters per pair.
    pub fields: Vec<MlpParams>,
    pub pairs: Vec<PairDetail>,
    pub reports: Vec<Vec<LossReport>>,
}

/// Run all adjacent pairs in order, starting from the stage-1 cloud.
pub fn stage_generate(
    g1: &GaussianCloud,
    video: &VideoSequence,
    oracle: &dyn ReconstructionOracle,
    stages: &StageConfig,
    background: [f64; 3],
    seed: u64,
) -> Result<GenerationOutcome> {
    let reference = &video.camera;
    let mut out = GenerationOutcome::default();
    let mut prev = g1.clone();
    for k in 2..=video.frames.len() {
        let pair = generate_pair(
            &prev,
            &video.frames[k - 1],
            reference,
            oracle,
            k,
            stages,
            background,
            seed,
        )?;
        prev = pair.frozen_quantized.clone();
        out.frames.push(pair.frozen_quantized);
        out.fields.push(pair.mlp_quantized);
        out.pairs.push(pair.detail);
        out.reports.push(pair.reports);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Stage 3: refinement
// ---------------------------------------------------------------------------

/// Refined result: a canonical first-frame cloud plus the time-conditioned
/// field reproducing every frame from it.
#[derive(Debug, Clone)]
pub struct RefinedModel {
    pub canonical: GaussianCloud,
    pub field: GlobalField,
}

impl RefinedModel {
    /// The refined cloud for frame k (1-based); frame 1 is the canonical
    /// cloud itself.
    pub fn frame(&self, k: usize, frames: usize) -> Result<GaussianCloud> {
        if k == 1 {
            if frames < 1 {
                return Err(Error::FrameOutOfRange { frame: k, frames });
            }
            return Ok(self.canonical.clone());
        }
        Ok(apply_global_cached(&self.field, &self.canonical, k, frames)?.0)
    }
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    /// Checkpoint-precision model (what the run directory stores).
    pub model: RefinedModel,
    /// Full-precision model straight out of the optimizer.
    pub raw: RefinedModel,
    pub reports: Vec<LossReport>,
}

struct RefineJob<'a> {
    g1: &'a GaussianCloud,
    /// Frozen stage-2 clouds for frames 2..=F, in order.
    stage2: &'a [GaussianCloud],
    reference: &'a OrbitCamera,
    stages: &'a StageConfig,
    background: [f64; 3],
    seed: u64,
}

impl RefineJob<'_> {
    fn run(&self) -> Result<RefineOutcome> {
        let mut last = (String::from("no attempt ran"), 0u64);
        for restart in 0..=self.stages.collapse.max_restarts {
            match self.attempt(restart)? {
                Attempt::Done(o) => return Ok(o),
                Attempt::Collapsed { reason, iteration } => last = (reason, iteration),
            }
        }
        Err(Error::Collapse {
            stage: "refinement",
            frame: 1,
            iteration: last.1,
            restarts: self.stages.collapse.max_restarts,
            reason: last.0,
        })
    }

    fn attempt(&self, restart: u32) -> Result<Attempt<RefineOutcome>> {
        let cfg = &self.stages.refinement;
        let frames = self.stage2.len() + 1;
        let tags = [stream::FIELD_INIT, 0, restart];
        let mut field = GlobalField::init(&cfg.field, &mut substream(self.seed, &tags));
        let mut rng = substream(self.seed, &[stream::REFINE_SAMPLER, restart]);
        let mut canonical = self.g1.clone();
        let mut mlp_opt = MlpOptimizer::new(&field.mlp);
        let mut cloud_opt = CloudOptimizer::new(&canonical, cfg.attributes);
        let mut reports = Vec::with_capacity(cfg.iters as usize);

        for u in 0..cfg.iters {
            let k = rng.random_range(2..=frames);
            let cam = sample_refinement_view(self.reference, &mut rng);
            let (refined, cache) = apply_global_cached(&field, &canonical, k, frames)?;
            let rl = refinement_losses(
                &refined,
                &self.stage2[k - 2],
                self.reference,
                &cam,
                self.background,
            )?;
            let total = rl.l_ref_re + rl.l_depth_re;
            reports.push(LossReport {
                l_ref_re: rl.l_ref_re,
                l_depth_re: rl.l_depth_re,
                total,
                ..LossReport::zero(u)
            });
            if self.stages.collapse.nan_check && !total.is_finite() {
                return Ok(Attempt::Collapsed {
                    reason: format!(
                        "non-finite loss at frame {k} (l_ref_re {}, l_depth_re {})",
                        rl.l_ref_re, rl.l_depth_re
                    ),
                    iteration: u,
                });
            }
            if total < self.stages.collapse.convergence_floor {
                continue;
            }
            let (d_mlp, d_canonical) =
                deform_backward(&field.mlp, &field.encoding, &canonical, &cache, &rl.d_refined);
            let lr = cfg.mlp_lr.lr_at(u);
            if let Some(Attempt::Collapsed { reason, iteration }) =
                step_or_collapse(mlp_opt.step(&mut field.mlp, &d_mlp, lr), u)?
            {
                return Ok(Attempt::Collapsed { reason, iteration });
            }
            if let Some(Attempt::Collapsed { reason, iteration }) =
                step_or_collapse(cloud_opt.step(&mut canonical, &d_canonical), u)?
            {
                return Ok(Attempt::Collapsed { reason, iteration });
            }
        }

        let raw = RefinedModel { canonical, field };
        let mut model = raw.clone();
        quantize_cloud(&mut model.canonical);
        quantize_mlp(&mut model.field.mlp);
        Ok(Attempt::Done(RefineOutcome { model, raw, reports }))
    }
}

/// Polish the whole sequence: treat the stage-1 cloud as canonical and fit
/// one time-conditioned field so each deformed frame matches its frozen
/// stage-2 cloud in reference-view color and sampled-view depth. Colors and
/// rotations of every refined frame equal the canonical cloud's.
pub fn stage_refine(
    g1: &GaussianCloud,
    stage2: &[GaussianCloud],
    reference: &OrbitCamera,
    stages: &StageConfig,
    background: [f64; 3],
    seed: u64,
) -> Result<RefineOutcome> {
    if stage2.is_empty() {
        return Err(Error::Config("refinement needs at least one generated frame".into()));
    }
    RefineJob { g1, stage2, reference, stages, background, seed }.run()
}

// ---------------------------------------------------------------------------
// Run directory
// ---------------------------------------------------------------------------

pub fn config_path(dir: &Path) -> PathBuf {
    dir.join("config.json")
}
pub fn lock_path(dir: &Path) -> PathBuf {
    dir.join("run.lock")
}
pub fn stage1_cloud_path(dir: &Path) -> PathBuf {
    dir.join("stage1.cloud")
}
pub fn stage1_loss_path(dir: &Path) -> PathBuf {
    dir.join("stage1_loss.csv")
}
pub fn frame_cloud_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("frame_{k:04}.cloud"))
}
pub fn frame_mlp_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("frame_{k:04}.mlp"))
}
pub fn gen_loss_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("gen_loss_{k:04}.csv"))
}
pub fn refine_cloud_path(dir: &Path) -> PathBuf {
    dir.join("refine.cloud")
}
pub fn refine_mlp_path(dir: &Path) -> PathBuf {
    dir.join("refine.mlp")
}
pub fn refine_loss_path(dir: &Path) -> PathBuf {
    dir.join("refine_loss.csv")
}
pub fn metrics_path(dir: &Path) -> PathBuf {
    dir.join("metrics.csv")
}
pub fn eval_png_path(dir: &Path, k: usize, azimuth_deg: f64) -> PathBuf {
    dir.join(format!("frame_{k:04}_az{azimuth_deg}.png"))
}

/// Advisory lock: exists while a process owns the run directory.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<RunLock> {
        let path = lock_path(dir);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::RunDirLocked {
                path: dir.to_path_buf(),
                lock: path,
            }),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_loss_csv(path: &Path, reports: &[LossReport]) -> Result<()> {
    let mut s = String::with_capacity(32 * (reports.len() + 1));
    s.push_str(LossReport::CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Fresh runs demand an artifact-free directory; resumed runs demand a
/// config snapshot identical to the config being resumed with.
fn prepare_run_dir(config: &RunConfig, resume: bool) -> Result<()> {
    let dir = &config.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let snapshot = config_path(dir);
    if resume {
        if !snapshot.exists() {
            return Err(Error::Resume(format!(
                "no config snapshot at {}; nothing to resume",
                snapshot.display()
            )));
        }
        let stored = fs::read_to_string(&snapshot).map_err(|e| Error::io(&snapshot, e))?;
        let stored: serde_json::Value = serde_json::from_str(&stored)
            .map_err(|e| Error::Resume(format!("unreadable config snapshot: {e}")))?;
        let current = serde_json::to_value(config)
            .map_err(|e| Error::Config(format!("unserializable config: {e}")))?;
        if stored != current {
            return Err(Error::Resume(
                "config does not match the run directory's snapshot".into(),
            ));
        }
        return Ok(());
    }
    let lock = lock_path(dir);
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path() != lock {
            return Err(Error::RunDirNotEmpty { path: dir.clone() });
        }
    }
    let body = serde_json::to_string_pretty(config)
        .map_err(|e| Error::Config(format!("unserializable config: {e}")))?;
    checkpoint::atomic_write(&snapshot, format!("{body}\n").as_bytes())
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub frame: usize,
    pub azimuth_deg: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricRow {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{}", self.frame, self.azimuth_deg, self.psnr_db, self.ssim)
    }
}

/// Full metrics CSV text: header, one row per (frame, azimuth), and a
/// trailing `mean,all` summary row.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::new();
    s.push_str(METRICS_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    if !rows.is_empty() {
        let mean_psnr = rows.iter().map(|r| r.psnr_db).sum::<f64>() / rows.len() as f64;
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / rows.len() as f64;
        s.push_str(&format!("mean,all,{mean_psnr},{mean_ssim}\n"));
    }
    s
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

/// PSNR/SSIM of the refined model against synthetic ground truth at every
/// frame and evaluation azimuth, on 8-bit-quantized images (matching the
/// PNGs a run writes). Also returns the rendered images for export.
pub fn evaluate_model(
    model: &RefinedModel,
    frames: usize,
    scene: &SyntheticScene,
    eval_size: usize,
    background: [f64; 3],
) -> Result<(Vec<MetricRow>, Vec<(usize, f64, ImageRgb)>)> {
    let base_cam = OrbitCamera::default().with_size(eval_size, eval_size);
    let mut rows = Vec::with_capacity(frames * EVAL_AZIMUTHS.len());
    let mut renders = Vec::with_capacity(frames * EVAL_AZIMUTHS.len());
    for k in 1..=frames {
        let cloud = model.frame(k, frames)?;
        let truth = scene.ground_truth_cloud(k)?;
        for az in EVAL_AZIMUTHS {
            let cam = base_cam.with_azimuth(az);
            let rendered = render(&cloud, &cam, background).color.quantized();
            let target = render(&truth, &cam, background).color.quantized();
            rows.push(MetricRow {
                frame: k,
                azimuth_deg: az,
                psnr_db: psnr_capped(&rendered, &target)?,
                ssim: ssim(&rendered, &target)?,
            });
            renders.push((k, az, rendered));
        }
    }
    Ok((rows, renders))
}

/// Reference-view metrics against the training video itself, for runs
/// without synthetic ground truth. Renders at the video's own resolution.
pub fn evaluate_against_video(
    model: &RefinedModel,
    video: &VideoSequence,
    background: [f64; 3],
) -> Result<Vec<MetricRow>> {
    let frames = video.frames.len();
    let mut rows = Vec::with_capacity(frames);
    for k in 1..=frames {
        let cloud = model.frame(k, frames)?;
        let rendered = render(&cloud, &video.camera, background).color.quantized();
        let target = video.frames[k - 1].quantized();
        rows.push(MetricRow {
            frame: k,
            azimuth_deg: video.camera.azimuth_deg,
            psnr_db: psnr_capped(&rendered, &target)?,
            ssim: ssim(&rendered, &target)?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Full run
// ---------------------------------------------------------------------------

/// Where a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageCursor {
    /// Generation finished through this frame; later stages not run.
    Generated(usize),
    Refined,
    Evaluated,
}

/// Everything a completed (or halted) run produced, full precision where
/// the run directory stores checkpoint precision.
#[derive(Debug, Clone)]
pub struct PipelineState {
    pub reference: OrbitCamera,
    pub video: VideoSequence,
    /// Stage-1 cloud at checkpoint precision.
    pub g1: GaussianCloud,
    /// Stage-2 clouds for frames 2..=F at checkpoint precision.
    pub generated: Vec<GaussianCloud>,
    pub local_fields: Vec<MlpParams>,
    /// Unquantized per-pair detail for pairs computed in this process
    /// (empty entries for pairs loaded from a resumed run directory).
    pub pairs: Vec<PairDetail>,
    pub refined: Option<RefinedModel>,
    /// Full-precision refined model when refinement ran in this process.
    pub refined_raw: Option<RefinedModel>,
    pub stage1_reports: Vec<LossReport>,
    pub generation_reports: Vec<Vec<LossReport>>,
    pub refinement_reports: Vec<LossReport>,
    pub metrics: Vec<MetricRow>,
    pub seed: u64,
    pub cursor: StageCursor,
}

impl PipelineState {
    pub fn frames(&self) -> usize {
        self.video.frames.len()
    }

    pub fn mean_psnr_db(&self) -> f64 {
        if self.metrics.is_empty() {
            return f64::NAN;
        }
        self.metrics.iter().map(|r| r.psnr_db).sum::<f64>() / self.metrics.len() as f64
    }
}

fn load_video_dir(dir: &Path, camera: OrbitCamera) -> Result<VideoSequence> {
    let mut frames = Vec::new();
    for k in 1.. {
        let path = dir.join(format!("frame_{k:04}.png"));
        if !path.exists() {
            break;
        }
        frames.push(ImageRgb::load_png(&path)?);
    }
    if frames.len() < 2 {
        return Err(Error::Config(format!(
            "video directory {} holds {} frame(s); need at least frame_0001.png and frame_0002.png",
            dir.display(),
            frames.len()
        )));
    }
    VideoSequence::new(frames, camera)
}

fn build_oracle(config: &RunConfig, scene: &SyntheticScene) -> Box<dyn ReconstructionOracle> {
    match &config.oracle_dir {
        Some(dir) => Box::new(FileExchangeOracle::new(
            dir.clone(),
            Duration::from_secs_f64(config.oracle_timeout_secs),
        )),
        None => Box::new(SyntheticOracle {
            scene: scene.clone(),
            noise: config.noise,
            seed: config.seed,
        }),
    }
}

/// Execute all three stages with per-boundary checkpoints, then render and
/// score the evaluation sequences. `resume` continues a run directory from
/// its last completed boundary and produces bit-identical artifacts to an
/// uninterrupted run; `halt_after_frame` stops once generation has
/// persisted that frame (a hook for the determinism and resume harnesses).
pub fn run_full(
    config: &RunConfig,
    resume: bool,
    halt_after_frame: Option<usize>,
) -> Result<PipelineState> {
    config.validate()?;
    let dir = config.out_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let _lock = RunLock::acquire(&dir)?;
    prepare_run_dir(config, resume)?;

    let reference = config.reference_camera();
    let scene = SyntheticScene::build(&config.scene, config.seed)?;
    let video = match &config.video_dir {
        Some(vdir) => load_video_dir(vdir, reference)?,
        None => make_monocular_video(&scene, &reference, config.background)?,
    };
    let frames = video.frames.len();
    if let Some(h) = halt_after_frame {
        if h < 2 || h > frames {
            return Err(Error::Config(format!(
                "halt_after_frame {h} outside 2..={frames}"
            )));
        }
    }
    let oracle = build_oracle(config, &scene);

    // Stage 1.
    let g1_path = stage1_cloud_path(&dir);
    let (g1, stage1_reports) = if resume && g1_path.exists() {
        (read_cloud(&g1_path)?, Vec::new())
    } else {
        let init = oracle.init_cloud(&[(video.frames[0].clone(), reference)])?;
        let (mut g1, reports) =
            stage_initialize(&init, &video.frames[0], &reference, config.background, &config.stages)?;
        quantize_cloud(&mut g1);
        write_cloud(&g1, &g1_path)?;
        write_loss_csv(&stage1_loss_path(&dir), &reports)?;
        (g1, reports)
    };

    let mut state = PipelineState {
        reference,
        video,
        g1,
        generated: Vec::new(),
        local_fields: Vec::new(),
        pairs: Vec::new(),
        refined: None,
        refined_raw: None,
        stage1_reports,
        generation_reports: Vec::new(),
        refinement_reports: Vec::new(),
        metrics: Vec::new(),
        seed: config.seed,
        cursor: StageCursor::Generated(1),
    };

    // Stage 2, one persisted pair at a time.
    let mut prev = state.g1.clone();
    for k in 2..=frames {
        let cloud_path = frame_cloud_path(&dir, k);
        let mlp_path = frame_mlp_path(&dir, k);
        if resume && cloud_path.exists() && mlp_path.exists() {
            let cloud = read_cloud(&cloud_path)?;
            state.local_fields.push(read_mlp(&mlp_path)?);
            state.generated.push(cloud.clone());
            prev = cloud;
        } else {
            let pair = generate_pair(
                &prev,
                &state.video.frames[k - 1],
                &reference,
                oracle.as_ref(),
                k,
                &config.stages,
                config.background,
                config.seed,
            )?;
            write_cloud(&pair.frozen_quantized, &cloud_path)?;
            write_mlp(&pair.mlp_quantized, &mlp_path)?;
            write_loss_csv(&gen_loss_path(&dir, k), &pair.reports)?;
            prev = pair.frozen_quantized.clone();
            state.generated.push(pair.frozen_quantized);
            state.local_fields.push(pair.mlp_quantized);
            state.pairs.push(pair.detail);
            state.generation_reports.push(pair.reports);
        }
        state.cursor = StageCursor::Generated(k);
        if halt_after_frame == Some(k) {
            return Ok(state);
        }
    }

    // Stage 3.
    let rc_path = refine_cloud_path(&dir);
    let rm_path = refine_mlp_path(&dir);
    if resume && rc_path.exists() && rm_path.exists() {
        let canonical = read_cloud(&rc_path)?;
        let mlp = read_mlp(&rm_path)?;
        let shape = &config.stages.refinement.field;
        let expected_in = shape.encoding.output_dim(3) + 2 * shape.time_frequencies;
        if mlp.input_dim() != expected_in || mlp.output_dim() != DELTA_CHANNELS {
            return Err(Error::MalformedCheckpoint {
                path: rm_path.clone(),
                reason: format!(
                    "field shape {}x{} does not match the configured refinement field",
                    mlp.input_dim(),
                    mlp.output_dim()
                ),
            });
        }
        state.refined = Some(RefinedModel {
            canonical,
            field: GlobalField::from_parts(mlp, shape.encoding, shape.time_frequencies),
        });
    } else {
        let outcome = stage_refine(
            &state.g1,
            &state.generated,
            &reference,
            &config.stages,
            config.background,
            config.seed,
        )?;
        write_cloud(&outcome.model.canonical, &rc_path)?;
        write_mlp(&outcome.model.field.mlp, &rm_path)?;
        write_loss_csv(&refine_loss_path(&dir), &outcome.reports)?;
        state.refined = Some(outcome.model);
        state.refined_raw = Some(outcome.raw);
        state.refinement_reports = outcome.reports;
    }
    state.cursor = StageCursor::Refined;

    // Evaluation renders + metrics.
    let model = state.refined.as_ref().expect("refined model set above");
    if config.video_dir.is_none() {
        let (rows, renders) =
            evaluate_model(model, frames, &scene, config.eval_size, config.background)?;
        for (k, az, img) in &renders {
            img.save_png(&eval_png_path(&dir, *k, *az))?;
        }
        state.metrics = rows;
    } else {
        let base_cam = OrbitCamera::default().with_size(config.eval_size, config.eval_size);
        for k in 1..=frames {
            let cloud = model.frame(k, frames)?;
            for az in EVAL_AZIMUTHS {
                let cam = base_cam.with_azimuth(az);
                let img = render(&cloud, &cam, config.background).color;
                img.save_png(&eval_png_path(&dir, k, az))?;
            }
        }
        state.metrics = evaluate_against_video(model, &state.video, config.background)?;
    }
    write_metrics_csv(&metrics_path(&dir), &state.metrics)?;
    state.cursor = StageCursor::Evaluated;
    Ok(state)
}

/// Load the refined model (and frame count) back out of a run directory.
pub fn load_refined_model(dir: &Path, config: &RunConfig) -> Result<(RefinedModel, usize)> {
    let canonical = read_cloud(&refine_cloud_path(dir))?;
    let mlp = read_mlp(&refine_mlp_path(dir))?;
    let shape = &config.stages.refinement.field;
    let expected_in = shape.encoding.output_dim(3) + 2 * shape.time_frequencies;
    if mlp.input_dim() != expected_in || mlp.output_dim() != DELTA_CHANNELS {
        return Err(Error::MalformedCheckpoint {
            path: refine_mlp_path(dir),
            reason: "field shape does not match the configured refinement field".into(),
        });
    }
    let mut frames = 1;
    while frame_cloud_path(dir, frames + 1).exists() {
        frames += 1;
    }
    if frames < 2 {
        return Err(Error::MalformedCheckpoint {
            path: frame_cloud_path(dir, 2),
            reason: "no generated frame checkpoints alongside the refined model".into(),
        });
    }
    Ok((
        RefinedModel {
            canonical,
            field: GlobalField::from_parts(mlp, shape.encoding, shape.time_frequencies),
        },
        frames,
    ))
}

/// Parse and validate a run config file (strict JSON; unknown keys are
/// rejected by name).
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}
