// Reference Kalman filter over the whole image as one dense state vector.
// Shared by several test targets through `#[path]`.

use nalgebra::{DMatrix, DVector};
use spadfuse_core::akf::{deblur_window, measurement_from_latent, FusionConfig};
use spadfuse_core::deblur::latent_at;
use spadfuse_core::events::{event_noise, noise_rate, EventStream};
use spadfuse_core::{SensorParams, SpadAggregateFrame};

pub struct DenseFrame {
    pub t: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Runs a non-adaptive filter with one tick per aggregate window.
pub fn dense_filter(
    aggregates: &[SpadAggregateFrame],
    stream: &EventStream,
    params: &SensorParams,
    config: &FusionConfig,
) -> Vec<DenseFrame> {
    let n = stream.width * stream.height;
    let w = stream.width;
    let index = stream.index();
    let t0 = aggregates[0].t_start();
    let t_end = aggregates.last().unwrap().t_end();
    let interval = config.n_bins_per_frame as f64 * params.t_bin;

    let mut x = DVector::from_element(n, 1e-3f64.ln());
    let mut p = DMatrix::from_diagonal_element(n, n, config.p0);
    let mut t_last = vec![t0; n];
    let mut initialized = false;

    // (time, kind, id): kind 0 = event, 1 = frame, 2 = tick
    let mut timeline: Vec<(f64, u8, usize)> = Vec::new();
    for (k, e) in stream.events.iter().enumerate() {
        if e.t >= t0 - 1e-12 {
            timeline.push((e.t, 0, k));
        }
    }
    for (k, a) in aggregates.iter().enumerate() {
        timeline.push((a.t_end(), 1, k));
    }
    let mut k = 0;
    loop {
        let t = t0 + k as f64 * interval;
        if t > t_end + 1e-9 {
            break;
        }
        timeline.push((t, 2, k));
        k += 1;
    }
    timeline.sort_by(|a, b| {
        let ka = ((a.0 * 1e9).round() as i64, a.1, a.2);
        let kb = ((b.0 * 1e9).round() as i64, b.1, b.2);
        ka.cmp(&kb)
    });

    let mut out = Vec::new();
    for (t, kind, id) in timeline {
        match kind {
            0 => {
                let e = &stream.events[id];
                let i = e.y as usize * w + e.x as usize;
                let q = event_noise(e, t_last[i], x[i].exp(), params).unwrap().total();
                x[i] += params.c * e.polarity as f64;
                p[(i, i)] += q;
                t_last[i] = e.t;
            }
            1 => {
                let agg = &aggregates[id];
                let latent = deblur_window(agg, &index, params, config).unwrap();
                let now = latent_at(&latent, &index, agg.t_end() + 1e-12, params);
                let (m, r): (Vec<f64>, Vec<f64>) = now.iter().map(|v| measurement_from_latent(*v, params)).unzip();
                let m = DVector::from_vec(m);
                if !initialized {
                    // limit of a flat prior: the estimate becomes the measurement
                    x = m;
                    p = DMatrix::from_diagonal(&DVector::from_vec(r));
                    initialized = true;
                } else {
                    let rm = DMatrix::from_diagonal(&DVector::from_vec(r));
                    let s = &p + &rm;
                    let s_inv = s.try_inverse().expect("innovation covariance invertible");
                    let gain = &p * s_inv;
                    x = &x + &gain * (&m - &x);
                    p = (DMatrix::identity(n, n) - &gain) * &p;
                }
                t_last.iter_mut().for_each(|v| *v = agg.t_end());
            }
            _ => {
                let variance = (0..n)
                    .map(|i| p[(i, i)] + noise_rate(x[i].exp(), params) * (t - t_last[i]).max(0.0))
                    .collect();
                out.push(DenseFrame {
                    t,
                    mean: x.iter().copied().collect(),
                    variance,
                });
            }
        }
    }
    out
}
