//! SPAD sensor model: dead-time response, binary-frame simulation, frame
//! aggregation and the flux-dependent measurement covariance.
//!
//! Counts fed to [`spad_response`] are "per binary frame" counts: an aggregate
//! of `n` frames with `k` detections corresponds to `N = k / n`.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::SensorParams;
use crate::rng::pixel_rng;
use crate::scene::SceneClip;

/// Flux estimate from a photon count, saturating at `1/tau`.
#[inline]
pub fn spad_response(n: f64, p: &SensorParams) -> f64 {
    n / (p.q * p.t_bin + p.tau * n)
}

/// Expected count producing `flux` under [`spad_response`].
pub fn spad_response_inverse(flux: f64, p: &SensorParams) -> Result<f64> {
    let limit = 1.0 / p.tau;
    if flux * p.tau >= 1.0 {
        return Err(Error::Saturation { flux, limit });
    }
    Ok(p.q * p.t_bin * flux / (1.0 - p.tau * flux))
}

/// Variance (log^2) of a log-flux measurement at `flux`.
#[inline]
pub fn measurement_covariance(flux: f64, p: &SensorParams) -> f64 {
    p.r_bar / (flux.max(0.0) + p.n_0)
}

/// Probability that a pixel fires during one binary frame.
#[inline]
pub fn detection_probability(flux: f64, p: &SensorParams) -> f64 {
    -(-(p.q * flux + p.phi_dark) * p.t_bin).exp_m1()
}

/// One-bit frame covering `[t_start, t_start + t_bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpadBinaryFrame {
    pub t_start: f64,
    pub t_bin: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major bits, LSB first within each word.
    words: Vec<u64>,
}

impl SpadBinaryFrame {
    pub fn from_bits(t_start: f64, t_bin: f64, width: usize, height: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: (height, width),
                got: (bits.len(), 1),
            });
        }
        let mut words = vec![0u64; (bits.len() + 63) / 64];
        for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
            words[i / 64] |= 1 << (i % 64);
        }
        Ok(Self {
            t_start,
            t_bin,
            width,
            height,
            words,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        let i = y * self.width + x;
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Packed little-endian bytes, `ceil(width*height/8)` long.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = (self.width * self.height + 7) / 8;
        self.words.iter().flat_map(|w| w.to_le_bytes()).take(n).collect()
    }

    pub fn from_bytes(t_start: f64, t_bin: f64, width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        let n = (width * height + 7) / 8;
        if bytes.len() != n {
            return Err(Error::Format(format!("binary frame needs {n} bytes, got {}", bytes.len())));
        }
        let mut words = vec![0u64; (width * height + 63) / 64];
        for (i, b) in bytes.iter().enumerate() {
            words[i / 8] |= (*b as u64) << (8 * (i % 8));
        }
        // clear padding bits so equality is well defined
        let used = width * height;
        if used % 64 != 0 {
            let last = words.len() - 1;
            words[last] &= (1u64 << (used % 64)) - 1;
        }
        Ok(Self {
            t_start,
            t_bin,
            width,
            height,
            words,
        })
    }
}

/// Sum of `n_bins` consecutive binary frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SpadAggregateFrame {
    /// Window midpoint.
    pub t_center: f64,
    /// Total exposure, `n_bins * t_bin`.
    pub exposure: f64,
    pub n_bins: usize,
    pub counts: Array2<u16>,
}

impl SpadAggregateFrame {
    pub fn t_start(&self) -> f64 {
        self.t_center - self.exposure / 2.0
    }

    pub fn t_end(&self) -> f64 {
        self.t_center + self.exposure / 2.0
    }

    pub fn dim(&self) -> (usize, usize) {
        self.counts.dim()
    }

    /// Per-binary-frame mean count `N = k / n_bins`.
    pub fn mean_counts(&self) -> Array2<f64> {
        let n = self.n_bins as f64;
        self.counts.mapv(|k| k as f64 / n)
    }
}

/// Binary frame generator. Each pixel owns a ChaCha stream keyed by
/// `(seed, pixel index)` and consumes exactly one draw per frame.
pub struct BinaryFrameSimulator<'a> {
    clip: &'a SceneClip,
    params: SensorParams,
    t0: f64,
    n_frames: usize,
    next: usize,
    rngs: Vec<ChaCha8Rng>,
}

impl<'a> BinaryFrameSimulator<'a> {
    pub fn new(clip: &'a SceneClip, params: &SensorParams, t0: f64, t1: f64, seed: u64) -> Result<Self> {
        params.validate()?;
        if !(t1 - t0 >= params.t_bin) {
            return Err(Error::InvalidParameter(format!(
                "window [{t0}, {t1}] shorter than one binary frame ({})",
                params.t_bin
            )));
        }
        if t0 < 0.0 || t1 > clip.duration + 1e-12 {
            return Err(Error::out_of_range("t1", t1, format!("[0, {}]", clip.duration)));
        }
        let n_frames = ((t1 - t0) / params.t_bin + 1e-9).floor() as usize;
        let rngs = (0..clip.width * clip.height).map(|i| pixel_rng(seed, i)).collect();
        Ok(Self {
            clip,
            params: *params,
            t0,
            n_frames,
            next: 0,
            rngs,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }
}

impl Iterator for BinaryFrameSimulator<'_> {
    type Item = SpadBinaryFrame;

    fn next(&mut self) -> Option<SpadBinaryFrame> {
        if self.next >= self.n_frames {
            return None;
        }
        let p = &self.params;
        let t_start = self.t0 + self.next as f64 * p.t_bin;
        let t_mid = (t_start + 0.5 * p.t_bin).min(self.clip.duration);
        let pose = self.clip.pose_at(t_mid);
        let (w, clip) = (self.clip.width, self.clip);
        let bits: Vec<bool> = self
            .rngs
            .par_iter_mut()
            .enumerate()
            .map(|(i, rng)| {
                let flux = clip.flux_at(&pose, i % w, i / w);
                rng.random::<f64>() < detection_probability(flux, p)
            })
            .collect();
        self.next += 1;
        Some(SpadBinaryFrame::from_bits(t_start, p.t_bin, w, clip.height, &bits).expect("shape"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.n_frames - self.next;
        (n, Some(n))
    }
}

/// Simulates every binary frame in `[t0, t1)`.
pub fn simulate_binary_frames(
    clip: &SceneClip,
    params: &SensorParams,
    t0: f64,
    t1: f64,
    seed: u64,
) -> Result<Vec<SpadBinaryFrame>> {
    Ok(BinaryFrameSimulator::new(clip, params, t0, t1, seed)?.collect())
}

/// Sums the first `n_bins` frames.
pub fn aggregate(frames: &[SpadBinaryFrame], n_bins: usize) -> Result<SpadAggregateFrame> {
    if n_bins == 0 || n_bins > u16::MAX as usize {
        return Err(Error::out_of_range("n_bins", n_bins as f64, format!("[1, {}]", u16::MAX)));
    }
    if frames.len() < n_bins {
        return Err(Error::Underflow {
            needed: n_bins,
            available: frames.len(),
        });
    }
    let window = &frames[..n_bins];
    let (w, h, t_bin) = (window[0].width, window[0].height, window[0].t_bin);
    if let Some(bad) = window.iter().find(|f| f.width != w || f.height != h) {
        return Err(Error::ShapeMismatch {
            expected: (h, w),
            got: (bad.height, bad.width),
        });
    }
    let mut counts = Array2::<u16>::zeros((h, w));
    for f in window {
        for (i, c) in counts.iter_mut().enumerate() {
            *c += (f.words[i / 64] >> (i % 64) & 1) as u16;
        }
    }
    let t_first = window.iter().map(|f| f.t_start).fold(f64::INFINITY, f64::min);
    let exposure = n_bins as f64 * t_bin;
    Ok(SpadAggregateFrame {
        t_center: t_first + exposure / 2.0,
        exposure,
        n_bins,
        counts,
    })
}

/// Splits a frame sequence into consecutive non-overlapping aggregates,
/// dropping a trailing partial window.
pub fn aggregate_stream(frames: &[SpadBinaryFrame], n_bins: usize) -> Result<Vec<SpadAggregateFrame>> {
    frames
        .chunks_exact(n_bins.max(1))
        .map(|chunk| aggregate(chunk, n_bins))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Trajectory;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn uniform_clip(flux: f64, size: usize, duration: f64) -> SceneClip {
        SceneClip::new(
            Array2::from_elem((size, size), 1.0),
            Trajectory::identity(duration),
            flux.max(1e-300),
            duration,
        )
        .unwrap()
    }

    fn example_params() -> SensorParams {
        SensorParams {
            q: 0.4,
            t_bin: 1e-5,
            tau: 1e-7,
            ..Default::default()
        }
    }

    #[test]
    fn response_examples() {
        let p = example_params();
        assert_eq!(spad_response(0.0, &p), 0.0);
        // independent arithmetic: 100 / (0.4*1e-5 + 1e-7*100) = 100 / 1.4e-5
        let expected = 100.0 / 1.4e-5;
        assert_relative_eq!(spad_response(100.0, &p), expected, max_relative = 1e-12);
        assert_relative_eq!(expected, 7.142857e6, max_relative = 1e-7);
        let sat = spad_response(1e9, &p);
        assert!((1e7 - sat) / 1e7 < 1e-4);
    }

    #[test]
    fn inverse_examples() {
        let p = example_params();
        assert_eq!(spad_response_inverse(0.0, &p).unwrap(), 0.0);
        for n in [1.0, 10.0, 1000.0] {
            let back = spad_response_inverse(spad_response(n, &p), &p).unwrap();
            assert_relative_eq!(back, n, max_relative = 1e-9);
        }
        assert_relative_eq!(spad_response_inverse(100.0 / 1.4e-5, &p).unwrap(), 100.0, max_relative = 1e-9);
        assert!(matches!(spad_response_inverse(1e7, &p), Err(Error::Saturation { .. })));
        assert!(spad_response_inverse(2e7, &p).is_err());
    }

    #[test]
    fn response_is_increasing_and_concave_on_integers() {
        let p = example_params();
        let f: Vec<f64> = (0..2000).map(|n| spad_response(n as f64, &p)).collect();
        for w in f.windows(3) {
            assert!(w[1] > w[0]);
            assert!(w[2] - 2.0 * w[1] + w[0] <= 1e-6 * w[1]);
        }
    }

    #[test]
    fn covariance_examples() {
        let p = SensorParams::default();
        assert_relative_eq!(measurement_covariance(0.0, &p), p.r_bar / p.n_0);
        assert_relative_eq!(measurement_covariance(p.n_0, &p), p.r_bar / (2.0 * p.n_0));
        let grid: Vec<f64> = (0..=80).map(|i| 10f64.powf(1.0 + i as f64 * 0.1)).collect();
        for w in grid.windows(2) {
            assert!(measurement_covariance(w[0], &p) > measurement_covariance(w[1], &p));
        }
    }

    proptest! {
        #[test]
        fn inverse_round_trips(n in 0.0f64..1e5) {
            let p = example_params();
            let back = spad_response_inverse(spad_response(n, &p), &p).unwrap();
            prop_assert!((back - n).abs() <= 1e-9 * n.max(1.0));
        }
    }

    #[test]
    fn zero_flux_without_dark_counts_never_fires() {
        let p = SensorParams {
            phi_dark: 0.0,
            ..Default::default()
        };
        let clip = uniform_clip(0.0, 8, 0.01);
        let frames = simulate_binary_frames(&clip, &p, 0.0, 0.01, 5).unwrap();
        assert_eq!(frames.len(), 1000);
        assert!(frames.iter().all(|f| f.count_ones() == 0));
    }

    /// Empirical rate vs the closed-form Bernoulli probability, 3 sigma.
    fn check_rate(flux: f64, p: &SensorParams, expected: f64) {
        let size = 10;
        let n_frames = 1000;
        let duration = n_frames as f64 * p.t_bin;
        let clip = uniform_clip(flux, size, duration);
        let frames = simulate_binary_frames(&clip, p, 0.0, duration, 11).unwrap();
        let trials = (n_frames * size * size) as f64;
        let hits: usize = frames.iter().map(|f| f.count_ones()).sum();
        let rate = hits as f64 / trials;
        let sigma = (expected * (1.0 - expected) / trials).sqrt();
        assert!((rate - expected).abs() <= 3.0 * sigma, "rate {rate} vs {expected} (sigma {sigma})");
    }

    #[test]
    fn detection_rate_matches_bernoulli_half() {
        let p = SensorParams {
            phi_dark: 0.0,
            ..Default::default()
        };
        let flux = std::f64::consts::LN_2 / (p.q * p.t_bin);
        check_rate(flux, &p, 0.5);
    }

    #[test]
    fn dark_rate_matches_closed_form() {
        for dark in [2_000.0, 4_000.0] {
            let p = SensorParams {
                phi_dark: dark,
                ..Default::default()
            };
            check_rate(0.0, &p, 1.0 - (-dark * p.t_bin).exp());
        }
    }

    #[test]
    fn log_mle_recovers_flux() {
        let p = SensorParams::default();
        for flux in [1e3, 1e4, 1e5, 1e6] {
            let n_frames = 10_000;
            let duration = n_frames as f64 * p.t_bin;
            let clip = uniform_clip(flux, 16, duration);
            let frames = simulate_binary_frames(&clip, &p, 0.0, duration, 21).unwrap();
            let hits: usize = frames.iter().map(|f| f.count_ones()).sum();
            let frac = hits as f64 / (n_frames * 256) as f64;
            let est = (-(1.0 - frac).ln() / p.t_bin - p.phi_dark) / p.q;
            assert!((est - flux).abs() / flux < 0.05, "flux {flux}: est {est}");
        }
    }

    #[test]
    fn simulation_is_reproducible() {
        let p = SensorParams::default();
        let clip = SceneClip::new(
            Array2::from_shape_fn((6, 6), |(r, c)| (r * 6 + c) as f64),
            Trajectory::rotation(10.0, 0.002),
            2e4,
            0.002,
        )
        .unwrap();
        let a = simulate_binary_frames(&clip, &p, 0.0, 0.002, 3).unwrap();
        let b = simulate_binary_frames(&clip, &p, 0.0, 0.002, 3).unwrap();
        let c = simulate_binary_frames(&clip, &p, 0.0, 0.002, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(simulate_binary_frames(&clip, &p, 0.0, 5e-6, 3).is_err());
    }

    fn random_frames(n: usize, w: usize, h: usize, seed: u64) -> Vec<SpadBinaryFrame> {
        let mut rng = pixel_rng(seed, 0);
        (0..n)
            .map(|k| {
                let bits: Vec<bool> = (0..w * h).map(|_| rng.random::<bool>()).collect();
                SpadBinaryFrame::from_bits(k as f64 * 1e-5, 1e-5, w, h, &bits).unwrap()
            })
            .collect()
    }

    #[test]
    fn aggregate_examples() {
        let frames = random_frames(70, 5, 3, 1);
        let one = aggregate(&frames, 1).unwrap();
        for y in 0..3 {
            for x in 0..5 {
                assert_eq!(one.counts[[y, x]], frames[0].get(x, y) as u16);
            }
        }
        let ones = SpadBinaryFrame::from_bits(0.0, 1e-5, 5, 3, &[true; 15]).unwrap();
        let all = aggregate(&vec![ones; 64], 64).unwrap();
        assert!(all.counts.iter().all(|c| *c == 64));
        assert_relative_eq!(all.exposure, 64.0 * 1e-5);

        let agg = aggregate(&frames, 64).unwrap();
        for y in 0..3 {
            for x in 0..5 {
                let brute = frames[..64].iter().filter(|f| f.get(x, y)).count();
                assert_eq!(agg.counts[[y, x]] as usize, brute);
            }
        }
        assert_relative_eq!(agg.t_center, 32.0 * 1e-5, max_relative = 1e-12);
        assert!(matches!(aggregate(&frames[..10], 64), Err(Error::Underflow { .. })));
    }

    #[test]
    fn aggregate_ignores_frame_order() {
        let frames = random_frames(32, 7, 4, 2);
        let mut rev = frames.clone();
        rev.reverse();
        rev.swap(3, 17);
        assert_eq!(aggregate(&frames, 32).unwrap().counts, aggregate(&rev, 32).unwrap().counts);
    }

    #[test]
    fn packed_bytes_round_trip() {
        let frames = random_frames(3, 13, 5, 4);
        for f in &frames {
            let bytes = f.to_bytes();
            assert_eq!(bytes.len(), (13 * 5 + 7) / 8);
            let back = SpadBinaryFrame::from_bytes(f.t_start, f.t_bin, 13, 5, &bytes).unwrap();
            assert_eq!(&back, f);
        }
    }
}
