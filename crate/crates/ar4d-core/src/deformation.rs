use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    encode, encode_backward, mlp_backward, mlp_forward, EncodingConfig, MlpCache, MlpParams,
};
use crate::rasterizer::RenderGradients;
use crate::scene::GaussianCloud;

/// Output channel layout of a deformation net. Nine slots: position delta,
/// opacity-logit delta, log-scale delta, and two reserved slots that stay
/// zero under the zero-initialized final layer.
pub const DELTA_CHANNELS: usize = 9;
const D_POS: usize = 0;
const D_OPACITY: usize = 3;
const D_SCALE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldShape {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub encoding: EncodingConfig,
    /// Frequencies for the normalized-time encoding of the global field.
    pub time_frequencies: usize,
}

impl Default for FieldShape {
    fn default() -> Self {
        FieldShape {
            hidden_layers: 4,
            hidden_width: 64,
            encoding: EncodingConfig::default(),
            time_frequencies: 6,
        }
    }
}

impl FieldShape {
    /// Full-scale variant: 8 x 256.
    pub fn full_scale() -> Self {
        FieldShape {
            hidden_layers: 8,
            hidden_width: 256,
            ..FieldShape::default()
        }
    }

    fn dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        dims.push(DELTA_CHANNELS);
        dims
    }
}

/// Per-pair deformation: maps encoded splat positions of frame i to the
/// parameter deltas producing frame i+1. Rotations and colors pass through
/// untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalField {
    pub mlp: MlpParams,
    pub encoding: EncodingConfig,
}

impl LocalField {
    pub fn init<R: rand::Rng>(shape: &FieldShape, rng: &mut R) -> Self {
        let input_dim = shape.encoding.output_dim(3);
        LocalField {
            mlp: MlpParams::init(&shape.dims(input_dim), rng),
            encoding: shape.encoding,
        }
    }

    pub fn from_parts(mlp: MlpParams, encoding: EncodingConfig) -> Self {
        LocalField { mlp, encoding }
    }
}

/// Sequence-wide deformation: canonical splat position encoding
/// concatenated with an encoded normalized frame time k/F.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalField {
    pub mlp: MlpParams,
    pub encoding: EncodingConfig,
    pub time_frequencies: usize,
}

impl GlobalField {
    pub fn init<R: rand::Rng>(shape: &FieldShape, rng: &mut R) -> Self {
        let input_dim = shape.encoding.output_dim(3) + time_encoding_dim(shape.time_frequencies);
        GlobalField {
            mlp: MlpParams::init(&shape.dims(input_dim), rng),
            encoding: shape.encoding,
            time_frequencies: shape.time_frequencies,
        }
    }

    pub fn from_parts(mlp: MlpParams, encoding: EncodingConfig, time_frequencies: usize) -> Self {
        GlobalField {
            mlp,
            encoding,
            time_frequencies,
        }
    }
}

fn time_encoding_dim(frequencies: usize) -> usize {
    2 * frequencies
}

fn encode_time(frequencies: usize, t: f64) -> Vec<f64> {
    encode(
        &EncodingConfig {
            num_frequencies: frequencies,
            include_input: false,
        },
        &[t],
    )
}

/// Forward state kept for the matching backward call.
#[derive(Debug, Clone)]
pub struct DeformCache {
    mlp_caches: Vec<MlpCache>,
}

fn apply_deltas(cloud: &GaussianCloud, deltas: &[Vec<f64>]) -> GaussianCloud {
    let mut out = cloud.clone();
    for (i, d) in deltas.iter().enumerate() {
        for k in 0..3 {
            out.positions[3 * i + k] += d[D_POS + k];
            out.log_scales[3 * i + k] += d[D_SCALE + k];
        }
        out.opacity_logits[i] += d[D_OPACITY];
    }
    out
}

/// Deform every splat of `cloud` by the local field. Position deltas add in
/// world space, opacity in logit space, scale in log space; rotation and
/// color arrays are copied bit-exact.
pub fn apply_local(field: &LocalField, cloud: &GaussianCloud) -> GaussianCloud {
    apply_local_cached(field, cloud).0
}

pub fn apply_local_cached(field: &LocalField, cloud: &GaussianCloud) -> (GaussianCloud, DeformCache) {
    let n = cloud.len();
    let mut cache = DeformCache {
        mlp_caches: Vec::with_capacity(n),
    };
    let mut deltas = Vec::with_capacity(n);
    for i in 0..n {
        let enc = encode(&field.encoding, &cloud.positions[3 * i..3 * i + 3]);
        let (out, mc) = mlp_forward(&field.mlp, &enc);
        cache.mlp_caches.push(mc);
        deltas.push(out);
    }
    (apply_deltas(cloud, &deltas), cache)
}

/// Deform the canonical cloud to frame `k` of `frames` (both 1-based;
/// k = 1 is the canonical frame itself and also valid here).
pub fn apply_global(
    field: &GlobalField,
    canonical: &GaussianCloud,
    k: usize,
    frames: usize,
) -> Result<GaussianCloud> {
    Ok(apply_global_cached(field, canonical, k, frames)?.0)
}

pub fn apply_global_cached(
    field: &GlobalField,
    canonical: &GaussianCloud,
    k: usize,
    frames: usize,
) -> Result<(GaussianCloud, DeformCache)> {
    if k < 1 || k > frames {
        return Err(Error::FrameOutOfRange { frame: k, frames });
    }
    let t = k as f64 / frames as f64;
    let time_enc = encode_time(field.time_frequencies, t);
    let n = canonical.len();
    let mut cache = DeformCache {
        mlp_caches: Vec::with_capacity(n),
    };
    let mut deltas = Vec::with_capacity(n);
    for i in 0..n {
        let mut enc = encode(&field.encoding, &canonical.positions[3 * i..3 * i + 3]);
        enc.extend_from_slice(&time_enc);
        let (out, mc) = mlp_forward(&field.mlp, &enc);
        cache.mlp_caches.push(mc);
        deltas.push(out);
    }
    Ok((apply_deltas(canonical, &deltas), cache))
}

/// Backward through a deformation: gradients on the deformed cloud become
/// gradients on the field parameters and on the base cloud. Base positions
/// collect both the identity pass-through and the indirect term through the
/// positional encoding; rotations and colors pass through unchanged.
pub fn deform_backward(
    mlp: &MlpParams,
    encoding: &EncodingConfig,
    base: &GaussianCloud,
    cache: &DeformCache,
    d_deformed: &RenderGradients,
) -> (MlpParams, RenderGradients) {
    let n = base.len();
    assert_eq!(cache.mlp_caches.len(), n, "cache does not match cloud");
    let mut d_mlp = MlpParams::zeros(&mlp.dims());
    let mut d_base = d_deformed.clone();
    let mut d_out = [0.0; DELTA_CHANNELS];
    for i in 0..n {
        for k in 0..3 {
            d_out[D_POS + k] = d_deformed.d_positions[3 * i + k];
            d_out[D_SCALE + k] = d_deformed.d_log_scales[3 * i + k];
        }
        d_out[D_OPACITY] = d_deformed.d_opacity_logits[i];
        d_out[7] = 0.0;
        d_out[8] = 0.0;
        let d_enc = mlp_backward(mlp, &cache.mlp_caches[i], &d_out, &mut d_mlp);
        // Only the position part of the input encodes cloud parameters; a
        // global field's trailing time encoding is a constant input.
        let pos_dim = encoding.output_dim(3);
        let pos: [f64; 3] = base.positions[3 * i..3 * i + 3].try_into().unwrap();
        let d_pos = encode_backward(encoding, &pos, &d_enc[..pos_dim]);
        for k in 0..3 {
            d_base.d_positions[3 * i + k] += d_pos[k];
        }
    }
    (d_mlp, d_base)
}
