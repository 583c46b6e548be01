//! 4D generation engine: reconstructs a time sequence of 3D Gaussian clouds
//! from a fixed-viewpoint monocular video.
//!
//! The pieces, bottom up:
//! - [`scene`]: Gaussian cloud and video types.
//! - [`rasterizer`]: differentiable CPU splatting (forward and backward).
//! - [`field`]: positional encoding, MLP, Adam, lr schedule.
//! - [`deformation`]: per-pair local and sequence-wide global fields.
//! - [`objectives`]: L1 / D-SSIM / depth losses, PSNR, SSIM.
//! - [`view_sampling`]: progressive novel-view schedule.
//! - [`oracle`]: pluggable pseudo-reconstruction (synthetic or external).
//! - [`pipeline`]: the three stages plus run-directory persistence.

pub mod camera;
pub mod checkpoint;
pub mod deformation;
pub mod error;
pub mod field;
pub mod gradcheck;
pub mod img;
pub mod objectives;
pub mod oracle;
pub mod pipeline;
pub mod rasterizer;
pub mod rng;
pub mod scene;
pub mod view_sampling;

pub use camera::OrbitCamera;
pub use error::{Error, Result};
pub use img::{ImageRgb, ScalarImage};
pub use scene::{GaussianCloud, RenderedFrame, VideoSequence};

use std::sync::OnceLock;

/// Thread pool honoring the AR4D_THREADS cap. All parallel sections run in
/// this pool; results are independent of its size by construction (fixed
/// work decomposition, ordered reduction).
pub fn thread_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Ok(v) = std::env::var("AR4D_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                builder = builder.num_threads(n.max(1));
            }
        }
        builder.build().expect("rayon pool")
    })
}
