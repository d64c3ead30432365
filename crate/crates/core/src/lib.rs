//! Simulation and reconstruction for a fused SPAD + event-camera sensor.
//!
//! The crate covers both sensor simulators driven from a shared ground-truth
//! scene, event-guided deblurring of aggregated SPAD frames, a per-pixel
//! asynchronous Kalman filter with uncertainty-triggered frame capture, analytic
//! SNR curves and the evaluation metrics.

pub mod akf;
pub mod deblur;
pub mod error;
pub mod events;
pub mod io;
pub mod metrics;
pub mod params;
pub mod rng;
pub mod scene;
pub mod snr;
pub mod spad;

pub use akf::{FusionConfig, FusionOutput, PixelFilterState, ReconstructedFrame};
pub use deblur::{BlurObservation, LatentImage, Method};
pub use error::{Error, Result};
pub use events::{Event, EventStream, NoiseBreakdown};
pub use metrics::{BandwidthReport, MtfReport};
pub use params::SensorParams;
pub use scene::{FluxFrame, SceneClip, SceneSpec, Trajectory};
pub use spad::{SpadAggregateFrame, SpadBinaryFrame};
