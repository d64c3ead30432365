//! Per-pixel asynchronous Kalman filter fusing events with deblurred SPAD
//! frames, plus the uncertainty-triggered frame-capture controller.
//!
//! State is log flux. Events shift the estimate by `c * polarity` and add
//! process noise; deblurred SPAD frames correct it. Timeline order at equal
//! timestamps is events, then frame arrival, then publication tick.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::deblur::{edi_deblur, latent_at, nedi_deblur, BlurObservation, LatentImage, Method, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::events::{event_noise, noise_rate, Event, EventIndex, EventStream};
use crate::params::{SensorParams, LOG_FLUX_FLOOR};
use crate::spad::{measurement_covariance, spad_response, SpadAggregateFrame};

/// Nudge that makes "at or before" comparisons robust to float round-off of
/// timestamps built from different sums.
const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelFilterState {
    pub n_hat: f64,
    pub p: f64,
    pub t_last: f64,
    pub flux_est: f64,
    /// Set once a SPAD measurement has been fused.
    pub initialized: bool,
}

impl PixelFilterState {
    pub fn new(p0: f64, t0: f64) -> Self {
        Self {
            n_hat: LOG_FLUX_FLOOR.ln(),
            p: p0,
            t_last: t0,
            flux_est: LOG_FLUX_FLOOR,
            initialized: false,
        }
    }

    /// Variance brought forward to `t` without mutating the state.
    #[inline]
    pub fn variance_at(&self, t: f64, params: &SensorParams) -> f64 {
        self.p + noise_rate(self.flux_est, params) * (t - self.t_last).max(0.0)
    }
}

/// How the covariance is corrected at a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// `p <- (1 - K) p` with `K = p / (p + r)`.
    #[default]
    Discrete,
    /// `p <- 1 / (1/p + dt/r) + Q(dt)`, `dt` measured from the last update.
    Continuous,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Publication rate in Hz; `None` publishes once per aggregate window.
    pub publish_rate: Option<f64>,
    pub adaptive: bool,
    /// Serialized as `null` when infinite.
    #[serde(with = "infinite_as_null")]
    pub u_threshold: f64,
    pub n_bins_per_frame: usize,
    pub tol: f64,
    pub method: Method,
    /// Variance of pixels that have not seen a SPAD measurement yet.
    pub p0: f64,
    pub covariance_mode: CovarianceMode,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            publish_rate: None,
            adaptive: false,
            u_threshold: f64::INFINITY,
            n_bins_per_frame: 64,
            tol: DEFAULT_TOL,
            method: Method::Nedi,
            p0: 1.0,
            covariance_mode: CovarianceMode::Discrete,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.publish_rate {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidParameter(format!("publish_rate must be > 0, got {r}")));
            }
        }
        if self.u_threshold.is_nan() || self.u_threshold < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "u_threshold must be >= 0, got {}",
                self.u_threshold
            )));
        }
        if self.n_bins_per_frame == 0 || self.n_bins_per_frame > u16::MAX as usize {
            return Err(Error::out_of_range(
                "n_bins_per_frame",
                self.n_bins_per_frame as f64,
                format!("[1, {}]", u16::MAX),
            ));
        }
        if !(self.tol > 0.0) || !(self.p0 > 0.0) {
            return Err(Error::InvalidParameter("tol and p0 must be > 0".into()));
        }
        Ok(())
    }

    /// Seconds between publication ticks.
    pub fn publish_interval(&self, p: &SensorParams) -> f64 {
        match self.publish_rate {
            Some(r) => 1.0 / r,
            None => self.n_bins_per_frame as f64 * p.t_bin,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedFrame {
    pub t: f64,
    pub log_intensity: Array2<f64>,
    pub variance: Array2<f64>,
}

/// One captured SPAD window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerRecord {
    pub window: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// Tick at which the uncertainty crossed the threshold; `None` for the
    /// initialization frame and for fixed-rate capture.
    pub triggered_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub frames: Vec<ReconstructedFrame>,
    pub trigger_log: Vec<TriggerRecord>,
    /// Candidate windows offered by the SPAD stream.
    pub n_windows: usize,
    /// `(tick time, U)` at every publication.
    pub uncertainty: Vec<(f64, f64)>,
    /// Pixel updates skipped because the measurement was not finite.
    pub skipped_measurements: usize,
}

impl FusionOutput {
    pub fn captured(&self) -> usize {
        self.trigger_log.len()
    }
}

/// Prediction step for one event.
pub fn event_update(state: &PixelFilterState, event: &Event, params: &SensorParams) -> Result<PixelFilterState> {
    let noise = event_noise(event, state.t_last, state.flux_est, params)?;
    let n_hat = state.n_hat + params.c * event.polarity as f64;
    Ok(PixelFilterState {
        n_hat,
        p: state.p + noise.total(),
        t_last: event.t,
        flux_est: n_hat.exp(),
        initialized: state.initialized,
    })
}

/// Correction with log-flux measurement `m` of variance `r` at time `t`.
/// Returns `None` (state untouched) for a non-finite measurement.
pub fn frame_update(state: &PixelFilterState, m: f64, r: f64, t: f64) -> Result<Option<PixelFilterState>> {
    frame_update_with(state, m, r, t, CovarianceMode::Discrete, None)
}

/// [`frame_update`] with an explicit covariance mode; `params` is needed for
/// the continuous mode's process noise.
pub fn frame_update_with(
    state: &PixelFilterState,
    m: f64,
    r: f64,
    t: f64,
    mode: CovarianceMode,
    params: Option<&SensorParams>,
) -> Result<Option<PixelFilterState>> {
    if t < state.t_last - TIME_EPS {
        return Err(Error::Ordering { t, prev: state.t_last });
    }
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("measurement variance must be > 0, got {r}")));
    }
    if !m.is_finite() {
        return Ok(None);
    }
    let t = t.max(state.t_last);
    if !state.initialized {
        return Ok(Some(PixelFilterState {
            n_hat: m,
            p: r,
            t_last: t,
            flux_est: m.exp(),
            initialized: true,
        }));
    }
    let k = state.p / (state.p + r);
    let n_hat = state.n_hat + k * (m - state.n_hat);
    let p = match mode {
        CovarianceMode::Discrete => (1.0 - k) * state.p,
        CovarianceMode::Continuous => {
            let dt = t - state.t_last;
            let q = params.map_or(0.0, |pp| noise_rate(state.flux_est, pp) * dt);
            1.0 / (1.0 / state.p + dt / r) + q
        }
    };
    Ok(Some(PixelFilterState {
        n_hat,
        p,
        t_last: t,
        flux_est: n_hat.exp(),
        initialized: true,
    }))
}

/// Sum of per-pixel variances.
pub fn uncertainty(variances: impl IntoIterator<Item = f64>) -> f64 {
    variances.into_iter().sum()
}

pub fn adaptive_trigger(u: f64, config: &FusionConfig) -> bool {
    u > config.u_threshold
}

/// Log-flux measurement and its variance from a latent count.
#[inline]
pub fn measurement_from_latent(n: f64, params: &SensorParams) -> (f64, f64) {
    let flux = spad_response(n, params);
    (flux.max(LOG_FLUX_FLOOR).ln(), measurement_covariance(flux, params))
}

fn to_ns(t: f64) -> i64 {
    (t * 1e9).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Checkpoint {
    Frame(usize),
    Tick(usize),
}

/// Runs the filter over aggregate windows and events, publishing at the
/// configured rate. In adaptive mode windows are fused only when requested
/// by the controller.
pub fn fuse(
    aggregates: &[SpadAggregateFrame],
    events: &EventStream,
    params: &SensorParams,
    config: &FusionConfig,
) -> Result<FusionOutput> {
    params.validate()?;
    config.validate()?;
    events.validate()?;
    let (h, w) = (events.height, events.width);
    for (k, a) in aggregates.iter().enumerate() {
        if a.dim() != (h, w) {
            return Err(Error::ShapeMismatch {
                expected: (h, w),
                got: a.dim(),
            });
        }
        if k > 0 && a.t_start() < aggregates[k - 1].t_end() - 1e-9 {
            return Err(Error::Ordering {
                t: a.t_start(),
                prev: aggregates[k - 1].t_end(),
            });
        }
    }
    let (t0, t_end) = match (aggregates.first(), aggregates.last()) {
        (Some(a), Some(b)) => (a.t_start(), b.t_end()),
        _ => {
            log::warn!("no SPAD frames: running events only");
            events.t_span
        }
    };
    let index = events.index();
    let n_pix = h * w;
    let mut states = vec![PixelFilterState::new(config.p0, t0); n_pix];

    let interval = config.publish_interval(params);
    let n_ticks = ((t_end - t0) / interval + 1e-6).floor() as usize + 1;
    let tick_time = |k: usize| t0 + k as f64 * interval;

    let mut checkpoints: Vec<(i64, Checkpoint)> = aggregates
        .iter()
        .enumerate()
        .map(|(k, a)| (to_ns(a.t_end()), Checkpoint::Frame(k)))
        .chain((0..n_ticks).map(|k| (to_ns(tick_time(k)), Checkpoint::Tick(k))))
        .collect();
    checkpoints.sort();

    let mut out = FusionOutput {
        frames: Vec::with_capacity(n_ticks),
        trigger_log: Vec::new(),
        n_windows: aggregates.len(),
        uncertainty: Vec::with_capacity(n_ticks),
        skipped_measurements: 0,
    };
    let mut trigger: Option<(i64, f64)> = None;
    let mut next_event = events.events.partition_point(|e| to_ns(e.t) < to_ns(t0));

    for (ns, cp) in checkpoints {
        while next_event < events.events.len() && to_ns(events.events[next_event].t) <= ns {
            let e = &events.events[next_event];
            let i = e.y as usize * w + e.x as usize;
            states[i] = event_update(&states[i], e, params)?;
            next_event += 1;
        }
        match cp {
            Checkpoint::Frame(k) => {
                let agg = &aggregates[k];
                let capture = !config.adaptive || k == 0 || trigger.is_some_and(|(tns, _)| tns <= to_ns(agg.t_start()));
                if !capture {
                    continue;
                }
                let latent = deblur_window(agg, &index, params, config)?;
                let n_now = latent_at(&latent, &index, agg.t_end() + TIME_EPS, params);
                let t_meas = agg.t_end();
                for (i, n) in n_now.iter().enumerate() {
                    let (m, r) = measurement_from_latent(*n, params);
                    let updated =
                        frame_update_with(&states[i], m, r, t_meas, config.covariance_mode, Some(params))?;
                    match updated {
                        Some(s) => states[i] = s,
                        None => out.skipped_measurements += 1,
                    }
                }
                out.trigger_log.push(TriggerRecord {
                    window: k,
                    t_start: agg.t_start(),
                    t_end: agg.t_end(),
                    triggered_at: if config.adaptive && k > 0 { trigger.map(|t| t.1) } else { None },
                });
                trigger = None;
            }
            Checkpoint::Tick(k) => {
                let t = tick_time(k);
                let variance = Array2::from_shape_fn((h, w), |(y, x)| states[y * w + x].variance_at(t, params));
                let log_intensity = Array2::from_shape_fn((h, w), |(y, x)| states[y * w + x].n_hat);
                let u = uncertainty(variance.iter().copied());
                if config.adaptive && trigger.is_none() && adaptive_trigger(u, config) {
                    trigger = Some((ns, t));
                }
                out.uncertainty.push((t, u));
                out.frames.push(ReconstructedFrame {
                    t,
                    log_intensity,
                    variance,
                });
            }
        }
    }
    Ok(out)
}

/// Latent image of one aggregate window.
pub fn deblur_window(
    agg: &SpadAggregateFrame,
    index: &EventIndex,
    params: &SensorParams,
    config: &FusionConfig,
) -> Result<LatentImage> {
    let obs = BlurObservation::from_aggregate(agg, index, params)?;
    match config.method {
        Method::Nedi => nedi_deblur(&obs, params, config.tol),
        Method::Edi => edi_deblur(&obs, params),
    }
}
