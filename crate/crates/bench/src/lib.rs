//! Shared fixtures for the benchmarks.

use spadfuse_core::akf::FusionConfig;
use spadfuse_core::events::simulate_events;
use spadfuse_core::spad::{aggregate_stream, simulate_binary_frames};
use spadfuse_core::{EventStream, SceneClip, SceneSpec, SensorParams, SpadAggregateFrame};

pub struct Fixture {
    pub params: SensorParams,
    pub clip: SceneClip,
    pub events: EventStream,
    pub aggregates: Vec<SpadAggregateFrame>,
}

/// Moving texture of `size`×`size` pixels lasting `duration` seconds.
pub fn scene(size: usize, duration: f64) -> SceneSpec {
    SceneSpec::Texture {
        size,
        blobs: size / 2,
        blob_sigma: 3.0,
        lo: 0.05,
        hi: 1.0,
        vx: 600.0,
        vy: 200.0,
        omega: 0.0,
        lux: 1000.0,
        duration,
    }
}

pub fn fixture(size: usize, duration: f64) -> Fixture {
    let params = SensorParams::default();
    let clip = scene(size, duration).build(1).expect("scene");
    let events = simulate_events(&clip, &params, 2).expect("events");
    let binary = simulate_binary_frames(&clip, &params, 0.0, clip.duration, 3).expect("spad");
    let aggregates = aggregate_stream(&binary, FusionConfig::default().n_bins_per_frame).expect("aggregate");
    Fixture {
        params,
        clip,
        events,
        aggregates,
    }
}
