#[path = "common/dense_kf.rs"]
mod dense_kf;

use spadfuse_core::akf::{fuse, FusionConfig};
use spadfuse_core::events::simulate_events;
use spadfuse_core::spad::{aggregate_stream, simulate_binary_frames};
use spadfuse_core::{Method, SceneSpec, SensorParams};

fn scene() -> SceneSpec {
    SceneSpec::Texture {
        size: 8,
        blobs: 4,
        blob_sigma: 1.5,
        lo: 0.02,
        hi: 1.0,
        vx: 1500.0,
        vy: -600.0,
        omega: 0.0,
        lux: 400.0,
        duration: 0.008,
    }
}

fn check(method: Method) {
    let params = SensorParams::default();
    let clip = scene().build(3).unwrap();
    let stream = simulate_events(&clip, &params, 11).unwrap();
    assert!(stream.len() > 100, "{} events", stream.len());
    let config = FusionConfig {
        method,
        ..FusionConfig::default()
    };
    let frames = simulate_binary_frames(&clip, &params, 0.0, clip.duration, 5).unwrap();
    let aggs = aggregate_stream(&frames, config.n_bins_per_frame).unwrap();
    let fused = fuse(&aggs, &stream, &params, &config).unwrap();
    let dense = dense_kf::dense_filter(&aggs, &stream, &params, &config);

    assert_eq!(fused.frames.len(), dense.len());
    let mut worst = 0.0f64;
    for (a, b) in fused.frames.iter().zip(&dense) {
        assert!((a.t - b.t).abs() < 1e-12);
        for (u, v) in a.log_intensity.iter().zip(&b.mean) {
            worst = worst.max((u - v).abs() / v.abs().max(1.0));
        }
        for (u, v) in a.variance.iter().zip(&b.variance) {
            worst = worst.max((u - v).abs() / v.abs().max(1.0));
        }
    }
    assert!(worst <= 1e-9, "max deviation {worst:e}");
}

#[test]
fn async_filter_matches_dense_filter_nedi() {
    check(Method::Nedi);
}

#[test]
fn async_filter_matches_dense_filter_edi() {
    check(Method::Edi);
}
