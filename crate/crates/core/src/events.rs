//! Event-camera model: change-detection simulator, per-event process noise
//! and signed event integration.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::SensorParams;
use crate::rng::{pixel_rng, substream_seed};
use crate::scene::SceneClip;

/// Added to flux before taking logs in the change detector.
pub const EPS_LOG: f64 = 1e-3;

/// Slack on threshold comparisons so exact multiples of `c` still fire.
const CROSSING_SLACK: f64 = 1e-9;

/// Timestamps are quantized to this resolution (seconds).
pub const TIME_RESOLUTION: f64 = 1e-6;

#[inline]
pub fn quantize_time(t: f64) -> f64 {
    to_micros(t) as f64 * TIME_RESOLUTION
}

#[inline]
pub fn to_micros(t: f64) -> u64 {
    (t / TIME_RESOLUTION).round().max(0.0) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub x: u16,
    pub y: u16,
    pub polarity: i8,
}

/// Time-sorted event list with its span and the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub t_span: (f64, f64),
    pub width: usize,
    pub height: usize,
    pub params: SensorParams,
}

impl EventStream {
    pub fn empty(width: usize, height: usize, t_span: (f64, f64), params: SensorParams) -> Self {
        Self {
            events: Vec::new(),
            t_span,
            width,
            height,
            params,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Checks global `(t, y, x)` order, coordinates and span.
    pub fn validate(&self) -> Result<()> {
        let (t0, t1) = self.t_span;
        for (i, e) in self.events.iter().enumerate() {
            if e.x as usize >= self.width || e.y as usize >= self.height {
                return Err(Error::Format(format!("event {i} at ({}, {}) outside sensor", e.x, e.y)));
            }
            if e.polarity != 1 && e.polarity != -1 {
                return Err(Error::Format(format!("event {i} has polarity {}", e.polarity)));
            }
            if e.t < t0 - 1e-12 || e.t > t1 + 1e-12 {
                return Err(Error::out_of_range("event t", e.t, format!("[{t0}, {t1}]")));
            }
            if i > 0 {
                let p = &self.events[i - 1];
                if e.t < p.t {
                    return Err(Error::Ordering { t: e.t, prev: p.t });
                }
            }
        }
        Ok(())
    }

    /// Events with `t` in `(t_a, t_b]`.
    pub fn slice(&self, t_a: f64, t_b: f64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t <= t_a);
        let hi = self.events.partition_point(|e| e.t <= t_b);
        &self.events[lo..hi.max(lo)]
    }

    pub fn index(&self) -> EventIndex {
        EventIndex::new(self)
    }
}

/// Per-event process-noise variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBreakdown {
    pub q_shot: f64,
    pub q_isol: f64,
    pub q_ref: f64,
    pub q_thresh: f64,
}

impl NoiseBreakdown {
    pub fn total(&self) -> f64 {
        self.q_shot + self.q_isol + self.q_ref + self.q_thresh
    }
}

/// Rate (log^2 per second) of the time-proportional noise terms at `flux`.
#[inline]
pub fn noise_rate(flux: f64, p: &SensorParams) -> f64 {
    p.sigma_shot * p.sigma_shot / (flux.max(0.0) + p.phi_0) + p.sigma_iso * p.sigma_iso
}

/// Process noise attached to `event` given the previous update at `prev_t`.
pub fn event_noise(event: &Event, prev_t: f64, flux: f64, p: &SensorParams) -> Result<NoiseBreakdown> {
    let dt = event.t - prev_t;
    if dt < 0.0 {
        return Err(Error::Ordering { t: event.t, prev: prev_t });
    }
    Ok(NoiseBreakdown {
        q_shot: p.sigma_shot * p.sigma_shot / (flux.max(0.0) + p.phi_0) * dt,
        q_isol: p.sigma_iso * p.sigma_iso * dt,
        q_ref: if dt > p.rho { 0.0 } else { p.rho_ref },
        q_thresh: p.sigma_theta * p.sigma_theta,
    })
}

/// Signed sum of the pixel's polarities over `(t_a, t_b]`, negated when
/// `t_a > t_b`.
pub fn integrate_events(stream: &EventStream, x: usize, y: usize, t_a: f64, t_b: f64) -> i64 {
    if t_a > t_b {
        return -integrate_events(stream, x, y, t_b, t_a);
    }
    stream
        .slice(t_a, t_b)
        .iter()
        .filter(|e| e.x as usize == x && e.y as usize == y)
        .map(|e| e.polarity as i64)
        .sum()
}

/// Per-pixel view of an event stream with prefix sums, for fast
/// `E(t)` queries.
#[derive(Debug, Clone)]
pub struct EventIndex {
    width: usize,
    height: usize,
    offsets: Vec<usize>,
    times: Vec<f64>,
    /// `cum[offsets[p] + k]` = signed sum of the pixel's first `k + 1` events.
    cum: Vec<i64>,
}

impl EventIndex {
    pub fn new(stream: &EventStream) -> Self {
        let n_pix = stream.width * stream.height;
        let mut counts = vec![0usize; n_pix + 1];
        for e in &stream.events {
            counts[e.y as usize * stream.width + e.x as usize + 1] += 1;
        }
        for i in 0..n_pix {
            counts[i + 1] += counts[i];
        }
        let offsets = counts;
        let mut fill = offsets.clone();
        let mut times = vec![0.0; stream.events.len()];
        let mut pols = vec![0i64; stream.events.len()];
        for e in &stream.events {
            let p = e.y as usize * stream.width + e.x as usize;
            times[fill[p]] = e.t;
            pols[fill[p]] = e.polarity as i64;
            fill[p] += 1;
        }
        let mut cum = pols;
        for p in 0..n_pix {
            let mut acc = 0;
            for v in &mut cum[offsets[p]..offsets[p + 1]] {
                acc += *v;
                *v = acc;
            }
        }
        Self {
            width: stream.width,
            height: stream.height,
            offsets,
            times,
            cum,
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Event times of pixel `p` (row-major index).
    pub fn times(&self, p: usize) -> &[f64] {
        &self.times[self.offsets[p]..self.offsets[p + 1]]
    }

    /// Signed sum of pixel `p`'s events with time `<= t`.
    #[inline]
    pub fn cumulative(&self, p: usize, t: f64) -> i64 {
        let times = self.times(p);
        let k = times.partition_point(|s| *s <= t);
        if k == 0 {
            0
        } else {
            self.cum[self.offsets[p] + k - 1]
        }
    }

    /// `E(t_a, t_b)` with the same convention as [`integrate_events`].
    #[inline]
    pub fn integrate(&self, p: usize, t_a: f64, t_b: f64) -> i64 {
        self.cumulative(p, t_b) - self.cumulative(p, t_a)
    }

    /// Piecewise-constant `E(t) - E(f)` over `[t_s, t_e]`, as
    /// `(duration, exponent)` pieces in time order.
    pub fn pieces(&self, p: usize, f: f64, t_s: f64, t_e: f64, out: &mut Vec<(f64, i64)>) {
        out.clear();
        let times = self.times(p);
        let base = self.cumulative(p, f);
        let lo = times.partition_point(|s| *s <= t_s);
        let hi = times.partition_point(|s| *s <= t_e);
        let mut level = self.cumulative(p, t_s) - base;
        let mut t = t_s;
        let off = self.offsets[p];
        for k in lo..hi {
            let te = times[k];
            if te > t {
                out.push((te - t, level));
                t = te;
            }
            level = self.cum[off + k] - base;
        }
        if t_e > t {
            out.push((t_e - t, level));
        }
    }

    pub fn n_events(&self, p: usize) -> usize {
        self.offsets[p + 1] - self.offsets[p]
    }

    pub fn counts(&self) -> Array2<usize> {
        Array2::from_shape_fn((self.height, self.width), |(y, x)| self.n_events(y * self.width + x))
    }
}

/// Optional behaviour of the event simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventSimConfig {
    /// Dense-time step; `None` uses `min(t_bin / 10, rho)`.
    pub step: Option<f64>,
    /// Rate of spurious hot-pixel events per pixel per second.
    pub hot_pixel_rate: f64,
}

impl Default for EventSimConfig {
    fn default() -> Self {
        Self {
            step: None,
            hot_pixel_rate: 0.0,
        }
    }
}

impl EventSimConfig {
    pub fn resolve_step(&self, p: &SensorParams) -> f64 {
        self.step.unwrap_or_else(|| {
            let s = p.t_bin / 10.0;
            if p.rho > 0.0 {
                s.min(p.rho)
            } else {
                s
            }
        })
    }
}

/// Per-pixel contrast thresholds, `N(c, sigma_theta^2)` clamped to `>= 0.1 c`.
pub fn pixel_thresholds(n_pixels: usize, p: &SensorParams, seed: u64) -> Vec<f64> {
    let normal = Normal::new(p.c, p.sigma_theta.max(0.0)).expect("finite threshold spread");
    (0..n_pixels)
        .map(|i| {
            let mut rng = pixel_rng(seed, i);
            normal.sample(&mut rng).max(0.1 * p.c)
        })
        .collect()
}

/// Change detector state of one pixel.
#[derive(Debug, Clone, Copy)]
struct Detector {
    l_ref: f64,
    c_p: f64,
    /// Step index of the last event, if any.
    last: Option<u64>,
}

impl Detector {
    /// Advances to step `k` with log-flux `l`, appending `(k, polarity)` for
    /// each event fired.
    #[inline]
    fn step(&mut self, k: u64, l: f64, refractory_steps: u64, mut emit: impl FnMut(i8)) {
        if let Some(last) = self.last {
            if k - last < refractory_steps {
                return;
            }
        }
        loop {
            let d = l - self.l_ref;
            if d.abs() < self.c_p - CROSSING_SLACK {
                break;
            }
            let pol: i8 = if d > 0.0 { 1 } else { -1 };
            self.l_ref += pol as f64 * self.c_p;
            self.last = Some(k);
            emit(pol);
            if refractory_steps > 0 {
                break;
            }
        }
    }
}

/// Events for one pixel whose flux is `flux(t)`, by dense stepping from `t0`
/// to `t1`. Returns `(t, polarity)` pairs.
pub fn simulate_pixel(
    flux: impl Fn(f64) -> f64,
    t0: f64,
    t1: f64,
    step: f64,
    c_p: f64,
    rho: f64,
) -> Vec<(f64, i8)> {
    let n = ((t1 - t0) / step + 1e-6).floor() as u64;
    let refractory_steps = (rho / step - 1e-9).ceil().max(0.0) as u64;
    let mut det = Detector {
        l_ref: (flux(t0) + EPS_LOG).ln(),
        c_p,
        last: None,
    };
    let mut out = Vec::new();
    for k in 1..=n {
        let t = t0 + k as f64 * step;
        let l = (flux(t) + EPS_LOG).ln();
        det.step(k, l, refractory_steps, |pol| out.push((t, pol)));
    }
    out
}

/// Simulates the event stream of `clip` over `[0, duration]`.
pub fn simulate_events(clip: &SceneClip, params: &SensorParams, seed: u64) -> Result<EventStream> {
    simulate_events_with(clip, params, seed, &EventSimConfig::default())
}

pub fn simulate_events_with(
    clip: &SceneClip,
    params: &SensorParams,
    seed: u64,
    cfg: &EventSimConfig,
) -> Result<EventStream> {
    params.validate()?;
    clip.validate()?;
    let step = cfg.resolve_step(params);
    if !(step > 0.0) || (params.rho > 0.0 && step > params.rho * (1.0 + 1e-9)) {
        return Err(Error::InvalidParameter(format!(
            "event step {step} must be positive and not exceed rho = {}",
            params.rho
        )));
    }
    if clip.width > u16::MAX as usize || clip.height > u16::MAX as usize {
        return Err(Error::InvalidParameter("sensor too large for 16-bit coordinates".into()));
    }
    let (w, h) = (clip.width, clip.height);
    if clip.trajectory.is_static() && cfg.hot_pixel_rate == 0.0 {
        return Ok(EventStream::empty(w, h, (0.0, clip.duration), *params));
    }
    let n_pix = w * h;
    let t1 = clip.duration;
    let n_steps = (t1 / step + 1e-6).floor() as u64;
    let refractory_steps = (params.rho / step - 1e-9).ceil().max(0.0) as u64;

    let thresholds = pixel_thresholds(n_pix, params, seed);
    let pose0 = clip.pose_at(0.0);
    let mut det: Vec<Detector> = (0..n_pix)
        .map(|i| Detector {
            l_ref: (clip.flux_at(&pose0, i % w, i / w) + EPS_LOG).ln(),
            c_p: thresholds[i],
            last: None,
        })
        .collect();

    // hot pixels draw from a stream disjoint from the threshold streams
    let mut hot_rngs: Vec<_> = if cfg.hot_pixel_rate > 0.0 {
        let hot_seed = substream_seed(seed, "hot-pixel");
        (0..n_pix).map(|i| pixel_rng(hot_seed, i)).collect()
    } else {
        Vec::new()
    };
    let hot_p = cfg.hot_pixel_rate * step;

    let mut events = Vec::new();
    for k in 1..=n_steps {
        let t = k as f64 * step;
        let tq = quantize_time(t);
        let pose = clip.pose_at(t);
        for (i, d) in det.iter_mut().enumerate() {
            let (x, y) = (i % w, i / w);
            let l = (clip.flux_at(&pose, x, y) + EPS_LOG).ln();
            let before = d.last;
            d.step(k, l, refractory_steps, |pol| {
                events.push(Event {
                    t: tq,
                    x: x as u16,
                    y: y as u16,
                    polarity: pol,
                })
            });
            if !hot_rngs.is_empty() && d.last == before {
                let rng = &mut hot_rngs[i];
                let allowed = d.last.map_or(true, |last| k - last >= refractory_steps.max(1));
                if rng.random::<f64>() < hot_p && allowed {
                    let pol = if rng.random::<bool>() { 1 } else { -1 };
                    d.last = Some(k);
                    events.push(Event {
                        t: tq,
                        x: x as u16,
                        y: y as u16,
                        polarity: pol,
                    });
                }
            }
        }
    }
    log::debug!("simulated {} events over {} steps", events.len(), n_steps);
    Ok(EventStream {
        events,
        t_span: (0.0, quantize_time(n_steps as f64 * step).max(t1)),
        width: w,
        height: h,
        params: *params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{make_siemens_star, Trajectory};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p0() -> SensorParams {
        SensorParams::default()
    }

    #[test]
    fn static_clip_has_no_events() {
        let clip = SceneClip::new(
            Array2::from_shape_fn((8, 8), |(r, c)| 1.0 + (r * c) as f64),
            Trajectory::identity(0.002),
            1e4,
            0.002,
        )
        .unwrap();
        let s = simulate_events(&clip, &p0(), 1).unwrap();
        assert!(s.is_empty());
        // the dense path agrees with the shortcut
        let thresholds = pixel_thresholds(64, &p0(), 1);
        for (i, c_p) in thresholds.iter().enumerate() {
            let pose = clip.pose_at(0.0);
            let phi = clip.flux_at(&pose, i % 8, i / 8);
            assert!(simulate_pixel(|_| phi, 0.0, 0.002, 1e-6, *c_p, 1e-6).is_empty());
        }
    }

    #[test]
    fn flux_step_crosses_three_thresholds() {
        let phi = 1e6;
        // pixel 1 pans from radiance[1] to radiance[0]: a ramp to phi*e^0.9
        let rad = Array2::from_shape_vec((1, 2), vec![phi * 0.9f64.exp(), phi]).unwrap();
        let clip = SceneClip::new(rad, Trajectory::linear_pan(1.0 / 1e-3, 0.0, 1e-3), 1.0, 1e-3).unwrap();
        let params = SensorParams {
            c: 0.3,
            sigma_theta: 1e-12,
            rho: 1e-6,
            ..p0()
        };
        let cfg = EventSimConfig {
            step: Some(1e-6),
            ..Default::default()
        };
        let s = simulate_events_with(&clip, &params, 2, &cfg).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.events.iter().all(|e| e.x == 1 && e.polarity == 1));

        // the same step applied instantaneously, refractory disabled
        let ev = simulate_pixel(|t| if t < 0.5e-3 { phi } else { phi * 0.9f64.exp() }, 0.0, 1e-3, 1e-6, 0.3, 0.0);
        assert_eq!(ev.len(), 3);
        assert!(ev.iter().all(|e| e.1 == 1 && e.0 == ev[0].0));
    }

    /// Independent dense-time reference: one comparison per fine step.
    fn reference_count(flux: impl Fn(f64) -> f64, t1: f64, step: f64, c: f64, rho: f64) -> usize {
        let mut l_ref = (flux(0.0) + EPS_LOG).ln();
        let mut last = f64::NEG_INFINITY;
        let mut n = 0;
        let steps = (t1 / step).round() as usize;
        for k in 1..=steps {
            let t = k as f64 * step;
            if t - last < rho - 1e-12 {
                continue;
            }
            let d = (flux(t) + EPS_LOG).ln() - l_ref;
            if d.abs() >= c - 1e-9 {
                l_ref += c * d.signum();
                last = t;
                n += 1;
            }
        }
        n
    }

    #[test]
    fn refractory_period_suppresses_fast_ramps() {
        // five thresholds crossed within one refractory period
        let rho = 50e-6;
        let ramp = |t: f64| 1e5 * (1.5 * (t / 40e-6).min(1.0)).exp();
        let fine = 1e-6;
        let ours = simulate_pixel(ramp, 0.0, 200e-6, fine * 10.0, 0.3, rho);
        assert!(ours.len() < 5);
        assert_eq!(ours.len(), reference_count(ramp, 200e-6, fine * 10.0, 0.3, rho));
        let dense = reference_count(ramp, 200e-6, fine, 0.3, rho);
        assert!(dense < 5);
        let dense_ours = simulate_pixel(ramp, 0.0, 200e-6, fine, 0.3, rho);
        assert_eq!(dense_ours.len(), dense);
    }

    fn rotating_star() -> SceneClip {
        make_siemens_star(8, (24, 24), 0.7)
            .unwrap()
            .with_trajectory(Trajectory::rotation(40.0, 0.004), 0.004)
            .unwrap()
            .with_illumination(5e4)
            .unwrap()
    }

    #[test]
    fn refractory_and_ordering_hold_on_full_streams() {
        let clip = rotating_star();
        let p = SensorParams { rho: 20e-6, ..p0() };
        let cfg = EventSimConfig {
            step: Some(2e-6),
            ..Default::default()
        };
        let s = simulate_events_with(&clip, &p, 3, &cfg).unwrap();
        assert!(s.len() > 100);
        s.validate().unwrap();
        let mut last = vec![f64::NEG_INFINITY; 24 * 24];
        for w in s.events.windows(2) {
            assert!((w[0].t, w[0].y, w[0].x) <= (w[1].t, w[1].y, w[1].x));
        }
        for e in &s.events {
            let i = e.y as usize * 24 + e.x as usize;
            assert!(e.t - last[i] >= p.rho - 1e-12);
            last[i] = e.t;
        }
    }

    #[test]
    fn replayed_reference_tracks_log_flux() {
        let clip = rotating_star();
        let p = SensorParams {
            sigma_theta: 1e-9,
            ..p0()
        };
        let s = simulate_events(&clip, &p, 4).unwrap();
        assert!(!s.is_empty());
        let pose0 = clip.pose_at(0.0);
        let mut l = Array2::from_shape_fn((24, 24), |(y, x)| (clip.flux_at(&pose0, x, y) + EPS_LOG).ln());
        for e in &s.events {
            let (x, y) = (e.x as usize, e.y as usize);
            l[[y, x]] += p.c * e.polarity as f64;
            let truth = (clip.flux_at(&clip.pose_at(e.t), x, y) + EPS_LOG).ln();
            assert!((l[[y, x]] - truth).abs() <= p.c + 1e-6);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let clip = rotating_star();
        let a = simulate_events(&clip, &p0(), 5).unwrap();
        let b = simulate_events(&clip, &p0(), 5).unwrap();
        assert_eq!(a, b);
        let c = simulate_events(&clip, &p0(), 6).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn hot_pixels_are_injected_only_on_request() {
        let clip = SceneClip::new(Array2::from_elem((4, 4), 1.0), Trajectory::identity(0.01), 1e4, 0.01).unwrap();
        let quiet = simulate_events(&clip, &p0(), 1).unwrap();
        assert!(quiet.is_empty());
        let cfg = EventSimConfig {
            hot_pixel_rate: 1000.0,
            ..Default::default()
        };
        let noisy = simulate_events_with(&clip, &p0(), 1, &cfg).unwrap();
        // 16 pixels * 1000/s * 0.01 s = 160 expected
        assert!(noisy.len() > 100 && noisy.len() < 230, "{}", noisy.len());
        noisy.validate().unwrap();
    }

    #[test]
    fn noise_examples() {
        let p = p0();
        let e = Event {
            t: 1.0,
            x: 0,
            y: 0,
            polarity: 1,
        };
        let n = event_noise(&e, 1.0, 123.0, &p).unwrap();
        assert_eq!(n.q_shot, 0.0);
        assert_eq!(n.q_isol, 0.0);
        assert_eq!(n.q_ref, p.rho_ref);
        assert_eq!(n.q_thresh, p.sigma_theta * p.sigma_theta);
        let n = event_noise(&e, 1.0 - 2.0 * p.rho, 123.0, &p).unwrap();
        assert_eq!(n.q_ref, 0.0);
        assert!(matches!(event_noise(&e, 1.5, 1.0, &p), Err(Error::Ordering { .. })));

        let lo = event_noise(&e, 0.5, 1e2, &p).unwrap();
        let hi = event_noise(&e, 0.5, 1e12, &p).unwrap();
        assert!(hi.q_shot < 1e-6 * lo.q_shot);
        assert_eq!(hi.q_isol, lo.q_isol);
        assert_relative_eq!(lo.total(), lo.q_shot + lo.q_isol + lo.q_ref + lo.q_thresh);
    }

    proptest! {
        #[test]
        fn noise_is_nonnegative_and_grows_with_dt(flux in 0.0f64..1e9, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let p = p0();
            let e = Event { t: 2.0, x: 0, y: 0, polarity: -1 };
            let (short, long) = if a < b { (a, b) } else { (b, a) };
            let n_short = event_noise(&e, 2.0 - short, flux, &p).unwrap();
            let n_long = event_noise(&e, 2.0 - long, flux, &p).unwrap();
            prop_assert!(n_short.total() >= 0.0);
            prop_assert!(n_short.q_shot >= 0.0 && n_short.q_isol >= 0.0);
            // q_ref drops once dt leaves the refractory window; compare the dt-driven parts
            prop_assert!(n_long.q_shot + n_long.q_isol >= n_short.q_shot + n_short.q_isol);
            if short > p.rho || long <= p.rho {
                prop_assert!(n_long.total() >= n_short.total());
            }
        }

        #[test]
        fn integration_is_additive_and_antisymmetric(
            raw in proptest::collection::vec((0u64..1000, 0u16..3, any::<bool>()), 0..60),
            a in 0u64..1000, b in 0u64..1000, c in 0u64..1000,
        ) {
            let mut events: Vec<Event> = raw
                .iter()
                .map(|&(us, x, pos)| Event { t: us as f64 * 1e-6, x, y: 0, polarity: if pos { 1 } else { -1 } })
                .collect();
            events.sort_by(|p, q| p.t.partial_cmp(&q.t).unwrap().then((p.y, p.x).cmp(&(q.y, q.x))));
            let s = EventStream { events, t_span: (0.0, 1e-3), width: 3, height: 1, params: p0() };
            let (a, b, c) = (a as f64 * 1e-6, b as f64 * 1e-6, c as f64 * 1e-6);
            let idx = s.index();
            for x in 0..3 {
                let e_ab = integrate_events(&s, x, 0, a, b);
                prop_assert_eq!(integrate_events(&s, x, 0, a, c), e_ab + integrate_events(&s, x, 0, b, c));
                prop_assert_eq!(integrate_events(&s, x, 0, b, a), -e_ab);
                prop_assert_eq!(idx.integrate(x, a, b), e_ab);
                // brute force over the raw list
                let (lo, hi, sign) = if a <= b { (a, b, 1) } else { (b, a, -1) };
                let brute: i64 = s.events.iter()
                    .filter(|e| e.x as usize == x && e.t > lo && e.t <= hi)
                    .map(|e| e.polarity as i64).sum();
                prop_assert_eq!(e_ab, sign * brute);
            }
        }
    }

    #[test]
    fn integration_examples() {
        let mk = |t: f64, pol: i8| Event {
            t,
            x: 0,
            y: 0,
            polarity: pol,
        };
        let s = EventStream {
            events: vec![mk(0.1, 1), mk(0.2, 1), mk(0.3, -1), mk(0.4, 1)],
            t_span: (0.0, 1.0),
            width: 1,
            height: 1,
            params: p0(),
        };
        assert_eq!(integrate_events(&s, 0, 0, 0.5, 0.5), 0);
        assert_eq!(integrate_events(&s, 0, 0, 0.0, 1.0), 2);
        let idx = s.index();
        let mut pieces = Vec::new();
        idx.pieces(0, 0.25, 0.0, 1.0, &mut pieces);
        assert_eq!(pieces.len(), 5);
        let levels: Vec<i64> = pieces.iter().map(|p| p.1).collect();
        assert_eq!(levels, vec![-2, -1, 0, -1, 0]);
        let total: f64 = pieces.iter().map(|p| p.0).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-15);
    }
}
