//! The three costs a run is made of: splat rendering (forward and
//! backward), field deformation (forward and backward), and SSIM.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use ar4d_core::deformation::{apply_local_cached, deform_backward, FieldShape, LocalField};
use ar4d_core::objectives::ssim;
use ar4d_core::oracle::{SceneConfig, ScenePreset, SyntheticScene};
use ar4d_core::rasterizer::{render, render_backward};
use ar4d_core::rng::substream;
use ar4d_core::{ImageRgb, OrbitCamera, ScalarImage};

const BACKGROUND: [f64; 3] = [0.0; 3];

/// A 100-splat cloud at the training resolution.
fn fixture() -> (ar4d_core::GaussianCloud, OrbitCamera) {
    let scene = SyntheticScene::build(
        &SceneConfig {
            preset: ScenePreset::Pulser,
            n_splats: 100,
            angular_velocity_deg: 10.0,
            amplitude: 0.05,
            phase: 0.0,
            frames: 4,
        },
        7,
    )
    .unwrap();
    let cloud = scene.ground_truth_cloud(1).unwrap();
    let camera = OrbitCamera::default().with_size(64, 64);
    (cloud, camera)
}

fn bench_renderer(c: &mut Criterion) {
    let (cloud, camera) = fixture();
    c.bench_function("render_64x64_100_splats", |b| {
        b.iter(|| black_box(render(black_box(&cloud), &camera, BACKGROUND)))
    });

    let n_px = camera.width * camera.height;
    let d_color = ImageRgb {
        width: camera.width,
        height: camera.height,
        data: vec![1.0 / (3 * n_px) as f64; 3 * n_px],
    };
    let mut d_depth = ScalarImage::new(camera.width, camera.height);
    d_depth.data.fill(1.0 / n_px as f64);
    c.bench_function("render_backward_64x64_100_splats", |b| {
        b.iter(|| {
            black_box(
                render_backward(black_box(&cloud), &camera, BACKGROUND, &d_color, &d_depth)
                    .unwrap(),
            )
        })
    });
}

fn bench_field(c: &mut Criterion) {
    let (cloud, camera) = fixture();
    let mut rng = substream(7, &[90, 0]);
    let field = LocalField::init(&FieldShape::default(), &mut rng);
    c.bench_function("local_field_forward_100_splats", |b| {
        b.iter(|| black_box(apply_local_cached(black_box(&field), &cloud)))
    });

    let (deformed, cache) = apply_local_cached(&field, &cloud);
    let n_px = camera.width * camera.height;
    let d_color = ImageRgb {
        width: camera.width,
        height: camera.height,
        data: vec![1.0 / (3 * n_px) as f64; 3 * n_px],
    };
    let d_depth = ScalarImage::new(camera.width, camera.height);
    let upstream = render_backward(&deformed, &camera, BACKGROUND, &d_color, &d_depth).unwrap();
    c.bench_function("local_field_backward_100_splats", |b| {
        b.iter(|| {
            black_box(deform_backward(
                black_box(&field.mlp),
                &field.encoding,
                &cloud,
                &cache,
                &upstream,
            ))
        })
    });
}

fn bench_ssim(c: &mut Criterion) {
    let (cloud, camera) = fixture();
    let a = render(&cloud, &camera, BACKGROUND).color;
    let b_img = render(&cloud, &camera.with_azimuth(10.0), BACKGROUND).color;
    c.bench_function("ssim_64x64", |b| b.iter(|| black_box(ssim(&a, &b_img).unwrap())));
}

criterion_group!(benches, bench_renderer, bench_field, bench_ssim);
criterion_main!(benches);
