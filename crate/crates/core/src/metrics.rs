//! Evaluation metrics: PSNR, Siemens-star MTF and stream bandwidth.

use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::StarGeometry;

/// `10 log10(peak^2 / MSE)`; `+inf` for identical images.
pub fn psnr(reconstruction: &Array2<f64>, ground_truth: &Array2<f64>, peak: f64) -> Result<f64> {
    psnr_pooled([(reconstruction, ground_truth)], peak)
}

/// PSNR from the MSE pooled over several image pairs.
pub fn psnr_pooled<'a>(
    pairs: impl IntoIterator<Item = (&'a Array2<f64>, &'a Array2<f64>)>,
    peak: f64,
) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::InvalidParameter(format!("peak must be > 0, got {peak}")));
    }
    let (mut sse, mut n) = (0.0, 0usize);
    for (a, b) in pairs {
        if a.dim() != b.dim() {
            return Err(Error::ShapeMismatch {
                expected: b.dim(),
                got: a.dim(),
            });
        }
        sse += a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        n += a.len();
    }
    if n == 0 {
        return Err(Error::InvalidParameter("no pixels to compare".into()));
    }
    let mse = sse / n as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtfCurve {
    pub method: String,
    pub mtf: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtfReport {
    /// Line pairs per mm, increasing.
    pub frequencies: Vec<f64>,
    pub radii: Vec<f64>,
    pub curves: Vec<MtfCurve>,
}

impl MtfReport {
    pub fn curve(&self, method: &str) -> Option<&[f64]> {
        self.curves.iter().find(|c| c.method == method).map(|c| c.mtf.as_slice())
    }

    /// Appends the curves of `other`, which must share the frequency axis.
    pub fn merge(&mut self, other: MtfReport) -> Result<()> {
        if other.frequencies != self.frequencies {
            return Err(Error::InvalidParameter("MTF reports use different frequencies".into()));
        }
        self.curves.extend(other.curves);
        Ok(())
    }
}

fn bilinear(img: &Array2<f64>, u: f64, v: f64) -> f64 {
    let x0 = u.floor() as usize;
    let y0 = v.floor() as usize;
    let (h, w) = img.dim();
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
    let top = img[[y0, x0]] * (1.0 - fx) + img[[y0, x1]] * fx;
    let bot = img[[y1, x0]] * (1.0 - fx) + img[[y1, x1]] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Linear-interpolated percentile of sorted data, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (sorted[j] - sorted[i]) * (pos - i as f64)
}

/// Samples of `image` along the circle of radius `r` around the star center.
pub fn circle_samples(image: &Array2<f64>, star: &StarGeometry, r: f64, n: usize) -> Result<Vec<f64>> {
    let (h, w) = image.dim();
    if !(r > 0.0)
        || star.cx - r < 0.0
        || star.cy - r < 0.0
        || star.cx + r > (w - 1) as f64
        || star.cy + r > (h - 1) as f64
    {
        return Err(Error::out_of_range("star radius", r, format!("circle must fit the {w}x{h} image")));
    }
    Ok((0..n)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / n as f64;
            bilinear(image, star.cx + r * a.cos(), star.cy + r * a.sin())
        })
        .collect())
}

/// Modulation `(p95 - p5) / (p95 + p5)` of a sample set.
pub fn modulation(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let (lo, hi) = (percentile(&s, 0.05), percentile(&s, 0.95));
    if hi + lo <= 0.0 {
        return 0.0;
    }
    ((hi - lo) / (hi + lo)).clamp(0.0, 1.0)
}

/// MTF of a linear-intensity image of the star at each frequency (lp/mm).
pub fn mtf_from_star(image: &Array2<f64>, star: &StarGeometry, frequencies: &[f64]) -> Result<MtfReport> {
    if frequencies.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("frequencies must increase".into()));
    }
    let mut radii = Vec::with_capacity(frequencies.len());
    let mut mtf = Vec::with_capacity(frequencies.len());
    for &f in frequencies {
        let r = star.radius_for_frequency(f);
        // several samples per spoke period whatever the radius
        let n = (16 * star.spokes).max((2.0 * PI * r * 8.0).ceil() as usize);
        let samples = circle_samples(image, star, r, n)?;
        radii.push(r);
        mtf.push(modulation(&samples));
    }
    Ok(MtfReport {
        frequencies: frequencies.to_vec(),
        radii,
        curves: vec![MtfCurve {
            method: "image".into(),
            mtf,
        }],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Events,
    SpadBinary,
    SpadAggregate,
    Conventional,
}

impl StreamKind {
    /// Bits per record: per event, or per pixel per frame.
    pub fn bits_per_sample(self) -> u64 {
        match self {
            StreamKind::Events => 64,
            StreamKind::SpadBinary => 1,
            StreamKind::SpadAggregate => 16,
            StreamKind::Conventional => 12,
        }
    }
}

/// What a stream contains: `count` events, or `count` full frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamDescriptor {
    pub kind: StreamKind,
    pub width: usize,
    pub height: usize,
    pub duration: f64,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamBandwidth {
    pub kind: StreamKind,
    pub records: u64,
    pub bits_per_sample: u64,
    pub bits: u64,
    pub duration: f64,
    pub bits_per_sec: f64,
    /// Samples per pixel per millisecond.
    pub khz_per_pixel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub streams: Vec<StreamBandwidth>,
}

impl BandwidthReport {
    pub fn get(&self, kind: StreamKind) -> Option<&StreamBandwidth> {
        self.streams.iter().find(|s| s.kind == kind)
    }
}

pub fn stream_bandwidth(d: &StreamDescriptor) -> StreamBandwidth {
    let pixels = (d.width * d.height) as u64;
    let bps = d.kind.bits_per_sample();
    let (bits, per_pixel) = match d.kind {
        StreamKind::Events => (bps * d.count, d.count as f64 / pixels.max(1) as f64),
        _ => (bps * pixels * d.count, d.count as f64),
    };
    let ms = d.duration * 1e3;
    StreamBandwidth {
        kind: d.kind,
        records: d.count,
        bits_per_sample: bps,
        bits,
        duration: d.duration,
        bits_per_sec: if d.duration > 0.0 { bits as f64 / d.duration } else { 0.0 },
        khz_per_pixel: if ms > 0.0 { per_pixel / ms } else { 0.0 },
    }
}

pub fn bandwidth(streams: &[StreamDescriptor]) -> BandwidthReport {
    BandwidthReport {
        streams: streams.iter().map(stream_bandwidth).collect(),
    }
}

/// Descriptor of two back-to-back segments of the same stream.
pub fn concat(a: &StreamDescriptor, b: &StreamDescriptor) -> Result<StreamDescriptor> {
    if a.kind != b.kind || a.width != b.width || a.height != b.height {
        return Err(Error::InvalidParameter("segments describe different streams".into()));
    }
    Ok(StreamDescriptor {
        duration: a.duration + b.duration,
        count: a.count + b.count,
        ..*a
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::make_siemens_star;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn psnr_examples() {
        let a = Array2::from_shape_fn((4, 5), |(r, c)| (r * c) as f64 * 0.1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = a.mapv(|v| v + 0.1);
        assert_relative_eq!(psnr(&b, &a, 1.0).unwrap(), 20.0, max_relative = 1e-9);
        assert!(psnr(&a, &Array2::zeros((5, 4)), 1.0).is_err());
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn psnr_matches_two_pass(vals in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..64), peak in 0.1f64..10.0) {
            let n = vals.len();
            let a = Array2::from_shape_vec((1, n), vals.iter().map(|v| v.0).collect()).unwrap();
            let b = Array2::from_shape_vec((1, n), vals.iter().map(|v| v.1).collect()).unwrap();
            let diffs: Vec<f64> = vals.iter().map(|v| v.0 - v.1).collect();
            let mse = diffs.iter().map(|d| d * d).sum::<f64>() / n as f64;
            prop_assume!(mse > 0.0);
            let want = 20.0 * peak.log10() - 10.0 * mse.log10();
            prop_assert!((psnr(&a, &b, peak).unwrap() - want).abs() < 1e-9);
        }

        #[test]
        fn constant_error_lowers_psnr(eps in 1e-6f64..1.0) {
            let gt = Array2::from_shape_fn((3, 3), |(r, c)| (r + 2 * c) as f64);
            let mut rec = gt.clone();
            rec[[0, 0]] += 0.5;
            let worse = rec.mapv(|v| v + eps);
            // shifting every pixel by eps adds eps^2 + eps/9 > 0 to the MSE
            prop_assert!(psnr(&worse, &gt, 10.0).unwrap() < psnr(&rec, &gt, 10.0).unwrap());
        }
    }

    fn star_image(contrast: f64) -> (Array2<f64>, StarGeometry) {
        let clip = make_siemens_star(24, (128, 128), contrast).unwrap();
        (clip.render_flux(0.0).unwrap().flux, clip.star.unwrap())
    }

    #[test]
    fn perfect_star_has_unit_mtf() {
        let (img, star) = star_image(1.0);
        // radii 20..60 px
        let freqs: Vec<f64> = [60.0, 45.0, 30.0, 20.0].iter().map(|r| star.frequency_for_radius(*r)).collect();
        let rep = mtf_from_star(&img, &star, &freqs).unwrap();
        for m in rep.curve("image").unwrap() {
            assert!(*m > 0.999, "{m}");
        }
        let gray = Array2::from_elem((128, 128), 0.4);
        let rep = mtf_from_star(&gray, &star, &freqs).unwrap();
        assert!(rep.curve("image").unwrap().iter().all(|m| *m == 0.0));
        let too_low = star.frequency_for_radius(100.0);
        assert!(mtf_from_star(&img, &star, &[too_low]).is_err());
    }

    fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
        let r = (4.0 * sigma).ceil() as isize;
        let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let s: f64 = k.iter().sum();
        let k: Vec<f64> = k.iter().map(|v| v / s).collect();
        let (h, w) = img.dim();
        let pass = |src: &Array2<f64>, horizontal: bool| {
            Array2::from_shape_fn((h, w), |(y, x)| {
                (-r..=r)
                    .map(|i| {
                        let (yy, xx) = if horizontal {
                            (y as isize, (x as isize + i).clamp(0, w as isize - 1))
                        } else {
                            ((y as isize + i).clamp(0, h as isize - 1), x as isize)
                        };
                        src[[yy as usize, xx as usize]] * k[(i + r) as usize]
                    })
                    .sum()
            })
        };
        pass(&pass(img, true), false)
    }

    #[test]
    fn blurred_star_mtf_decreases_and_matches_dense_oracle() {
        let (img, star) = star_image(1.0);
        let blurred = gaussian_blur(&img, 1.0);
        let radii = [55.0, 40.0, 28.0, 20.0, 14.0];
        let freqs: Vec<f64> = radii.iter().map(|r| star.frequency_for_radius(*r)).collect();
        let rep = mtf_from_star(&blurred, &star, &freqs).unwrap();
        let m = rep.curve("image").unwrap();
        for w in m.windows(2) {
            assert!(w[1] < w[0], "{m:?}");
        }
        // dense oracle: many more samples, nearest-neighbour free
        for (r, got) in radii.iter().zip(m) {
            let dense = circle_samples(&blurred, &star, *r, 200_000).unwrap();
            let mut s = dense.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let lo = s[(0.05 * (s.len() - 1) as f64).round() as usize];
            let hi = s[(0.95 * (s.len() - 1) as f64).round() as usize];
            let want = (hi - lo) / (hi + lo);
            assert!((got - want).abs() < 0.02, "r={r}: {got} vs {want}");
        }
    }

    #[test]
    fn bandwidth_examples() {
        let bin = StreamDescriptor {
            kind: StreamKind::SpadBinary,
            width: 512,
            height: 512,
            duration: 1.0,
            count: 100_000,
        };
        let b = stream_bandwidth(&bin);
        assert_eq!(b.bits, 512 * 512 * 100_000);
        assert!(b.bits as f64 > 1e10 && (b.bits as f64) < 1e11);
        assert_relative_eq!(b.khz_per_pixel, 100.0);

        let ev = StreamDescriptor {
            kind: StreamKind::Events,
            count: 0,
            ..bin
        };
        assert_eq!(stream_bandwidth(&ev).bits, 0);

        let agg = StreamDescriptor {
            kind: StreamKind::SpadAggregate,
            count: 400,
            ..bin
        };
        let quarter = StreamDescriptor { count: 100, ..agg };
        assert_eq!(stream_bandwidth(&quarter).bits * 4, stream_bandwidth(&agg).bits);
        let rep = bandwidth(&[bin, agg]);
        assert_eq!(rep.get(StreamKind::SpadAggregate).unwrap().bits_per_sample, 16);
    }

    proptest! {
        #[test]
        fn bandwidth_is_additive(c1 in 0u64..10_000, c2 in 0u64..10_000, d1 in 0.01f64..1.0, d2 in 0.01f64..1.0) {
            for kind in [StreamKind::Events, StreamKind::SpadBinary, StreamKind::SpadAggregate, StreamKind::Conventional] {
                let a = StreamDescriptor { kind, width: 7, height: 3, duration: d1, count: c1 };
                let b = StreamDescriptor { duration: d2, count: c2, ..a };
                let ab = stream_bandwidth(&concat(&a, &b).unwrap());
                prop_assert_eq!(ab.bits, stream_bandwidth(&a).bits + stream_bandwidth(&b).bits);
            }
        }
    }
}
