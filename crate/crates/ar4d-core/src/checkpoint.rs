use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::MlpParams;
use crate::scene::GaussianCloud;

pub const MAGIC: [u8; 4] = *b"AR4D";
pub const VERSION: u32 = 1;

/// Cloud file layout, all little-endian:
///   magic "AR4D" | version u32 | splat count u64 |
///   positions f32*3N | opacity_logits f32*N | log_scales f32*3N |
///   rotations f32*4N | colors f32*3N
///
/// Mlp file layout:
///   magic "AR4D" | version u32 | dim count u64 | dims u64* |
///   per layer (weights out*in row-major, then bias) as f32
///
/// Writes go to a temp file in the target directory and are renamed into
/// place, so a reader never observes a partial checkpoint.
pub fn write_cloud(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    let mut buf = header(8 + cloud.positions.len() * 16);
    buf.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    for arr in [
        &cloud.positions,
        &cloud.opacity_logits,
        &cloud.log_scales,
        &cloud.rotations,
        &cloud.colors,
    ] {
        push_f32s(&mut buf, arr);
    }
    atomic_write(path, &buf)
}

pub fn read_cloud(path: &Path) -> Result<GaussianCloud> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&buf, path);
    r.check_header()?;
    let n = r.take_u64()? as usize;
    if n == 0 {
        return Err(r.malformed("zero splats"));
    }
    let positions = r.take_f32s(3 * n)?;
    let opacity_logits = r.take_f32s(n)?;
    let log_scales = r.take_f32s(3 * n)?;
    let rotations = r.take_f32s(4 * n)?;
    let colors = r.take_f32s(3 * n)?;
    r.expect_end()?;
    GaussianCloud::new(positions, opacity_logits, log_scales, rotations, colors)
        .map_err(|e| r.malformed(&e.to_string()))
}

pub fn write_mlp(mlp: &MlpParams, path: &Path) -> Result<()> {
    let dims = mlp.dims();
    let mut buf = header(16 + dims.len() * 8);
    buf.extend_from_slice(&(dims.len() as u64).to_le_bytes());
    for d in &dims {
        buf.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for layer in &mlp.layers {
        push_f32s(&mut buf, &layer.weights);
        push_f32s(&mut buf, &layer.bias);
    }
    atomic_write(path, &buf)
}

pub fn read_mlp(path: &Path) -> Result<MlpParams> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&buf, path);
    r.check_header()?;
    let ndims = r.take_u64()? as usize;
    if ndims < 2 || ndims > 64 {
        return Err(r.malformed(&format!("implausible layer-dim count {ndims}")));
    }
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        dims.push(r.take_u64()? as usize);
    }
    if dims.iter().any(|&d| d == 0 || d > 1 << 20) {
        return Err(r.malformed("implausible layer dim"));
    }
    let mut mlp = MlpParams::zeros(&dims);
    for layer in &mut mlp.layers {
        layer.weights = r.take_f32s(layer.weights.len())?;
        layer.bias = r.take_f32s(layer.bias.len())?;
    }
    r.expect_end()?;
    Ok(mlp)
}

/// In-memory f64 -> f32 -> f64 pass over every parameter. Applied at stage
/// boundaries so the live state equals what a reader of the checkpoint sees;
/// that is what makes resumed runs bit-identical to uninterrupted ones.
pub fn quantize_cloud(cloud: &mut GaussianCloud) {
    for arr in [
        &mut cloud.positions,
        &mut cloud.opacity_logits,
        &mut cloud.log_scales,
        &mut cloud.rotations,
        &mut cloud.colors,
    ] {
        for v in arr.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
}

pub fn quantize_mlp(mlp: &mut MlpParams) {
    for layer in &mut mlp.layers {
        for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }
}

fn header(capacity_hint: usize) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + capacity_hint);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf
}

fn push_f32s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

/// Write-temp-then-rename in the destination directory; the rename is atomic
/// so concurrent readers see either the old file or the new one, never a
/// partial write. The run-directory lock keeps tmp names from colliding.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Reader { buf, pos: 0, path }
    }

    fn malformed(&self, reason: &str) -> Error {
        Error::MalformedCheckpoint {
            path: self.path.to_path_buf(),
            reason: reason.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.malformed(&format!(
                "truncated at byte {} (wanted {} more)",
                self.pos, n
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn check_header(&mut self) -> Result<()> {
        let magic = self.take(4).map_err(|_| Error::BadMagic {
            path: self.path.to_path_buf(),
        })?;
        if magic != MAGIC {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
            });
        }
        let version = u32::from_le_bytes(self.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::BadVersion {
                version,
                path: self.path.to_path_buf(),
            });
        }
        Ok(())
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn take_f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.malformed(&format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_cloud() -> GaussianCloud {
        GaussianCloud::new(
            vec![0.125, -0.5, 0.75, 1.0, 2.0, -3.0],
            vec![0.5, -1.25],
            vec![-2.0, -2.5, -3.0, 0.0, 0.25, 0.5],
            vec![1.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5],
            vec![0.25, 0.5, 0.75, 1.0, 0.0, 0.125],
        )
        .unwrap()
    }

    #[test]
    fn cloud_roundtrip_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.cloud");
        let cloud = sample_cloud();
        write_cloud(&cloud, &path).unwrap();
        // All sample values are exactly representable in f32.
        assert_eq!(read_cloud(&path).unwrap(), cloud);
    }

    #[test]
    fn quantize_matches_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.cloud");
        let mut cloud = sample_cloud();
        cloud.positions[0] = 0.1; // not representable in f32
        write_cloud(&cloud, &path).unwrap();
        let read_back = read_cloud(&path).unwrap();
        quantize_cloud(&mut cloud);
        assert_eq!(read_back, cloud);
        assert_ne!(cloud.positions[0], 0.1);
    }

    #[test]
    fn bad_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cloud");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        let err = read_cloud(&path).unwrap_err();
        assert!(err.to_string().contains("bad checkpoint magic"));
    }

    #[test]
    fn truncation_and_trailing_bytes_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.cloud");
        write_cloud(&sample_cloud(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let cut = dir.path().join("cut.cloud");
        std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_cloud(&cut).unwrap_err().to_string().contains("truncated"));

        let long = dir.path().join("long.cloud");
        let mut padded = bytes.clone();
        padded.extend_from_slice(&[0, 0]);
        std::fs::write(&long, &padded).unwrap();
        assert!(read_cloud(&long).unwrap_err().to_string().contains("trailing"));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v9.cloud");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&9u32.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_cloud(&path).unwrap_err().to_string().contains("version 9"));
    }

    #[test]
    fn mlp_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.mlp");
        let mut mlp = MlpParams::zeros(&[6, 8, 8, 9]);
        let mut c = 0.0f64;
        for layer in &mut mlp.layers {
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *v = c;
                c += 0.0625;
            }
        }
        write_mlp(&mlp, &path).unwrap();
        let back = read_mlp(&path).unwrap();
        assert_eq!(back.dims(), vec![6, 8, 8, 9]);
        assert_eq!(back, mlp);
    }
}
