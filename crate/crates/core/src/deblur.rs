//! Event-guided deblurring of aggregated SPAD frames.
//!
//! Latent values are in per-binary-frame count units (the `N` of
//! [`spad_response`]); the latent at time `t` is `N(f) * exp(c * E(t))` with
//! `E` the signed event count since the anchor `f` (window midpoint).

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::EventIndex;
use crate::params::SensorParams;
use crate::spad::{spad_response, spad_response_inverse, SpadAggregateFrame};

pub const DEFAULT_TOL: f64 = 1e-6;
const MAX_DOUBLINGS: usize = 64;
const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Edi,
    Nedi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentImage {
    /// Anchor time (window midpoint).
    pub f: f64,
    pub exposure: f64,
    pub n_latent: Array2<f64>,
    pub method: Method,
    pub tol: f64,
    /// Row-major indices of pixels whose blur saturated the detector; they
    /// hold the EDI value.
    pub saturated: Vec<usize>,
}

/// Blur image `B` (flux units) over `[f - T/2, f + T/2]` with the events
/// needed to deblur it.
#[derive(Debug, Clone)]
pub struct BlurObservation<'a> {
    pub f: f64,
    pub exposure: f64,
    pub blur: Array2<f64>,
    pub events: &'a EventIndex,
}

impl<'a> BlurObservation<'a> {
    pub fn new(f: f64, exposure: f64, blur: Array2<f64>, events: &'a EventIndex) -> Result<Self> {
        if blur.dim() != events.dim() {
            return Err(Error::ShapeMismatch {
                expected: events.dim(),
                got: blur.dim(),
            });
        }
        if !(exposure > 0.0) {
            return Err(Error::InvalidParameter(format!("exposure must be > 0, got {exposure}")));
        }
        if blur.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::InvalidParameter("blur must be finite and >= 0".into()));
        }
        Ok(Self {
            f,
            exposure,
            blur,
            events,
        })
    }

    /// `B = spad_response(k / n_bins)` per pixel.
    pub fn from_aggregate(agg: &SpadAggregateFrame, events: &'a EventIndex, p: &SensorParams) -> Result<Self> {
        let blur = agg.mean_counts().mapv(|n| spad_response(n, p));
        Self::new(agg.t_center, agg.exposure, blur, events)
    }

    fn pieces(&self, pixel: usize, out: &mut Vec<(f64, i64)>) {
        let half = self.exposure / 2.0;
        self.events.pieces(pixel, self.f, self.f - half, self.f + half, out);
    }
}

/// `sum d * exp(c E)` over piecewise-constant segments.
#[inline]
pub fn exp_integral(pieces: &[(f64, i64)], c: f64) -> f64 {
    pieces.iter().map(|&(d, e)| d * (c * e as f64).exp()).sum()
}

#[inline]
fn forward_pieces(n: f64, pieces: &[(f64, i64)], exposure: f64, p: &SensorParams) -> f64 {
    pieces
        .iter()
        .map(|&(d, e)| d * spad_response(n * (p.c * e as f64).exp(), p))
        .sum::<f64>()
        / exposure
}

fn edi_pixel(b: f64, pieces: &[(f64, i64)], exposure: f64, p: &SensorParams) -> (f64, bool) {
    let limit = 1.0 / p.tau;
    let saturated = b >= limit;
    let b = if saturated { limit * (1.0 - 1e-9) } else { b };
    let n = spad_response_inverse(b, p).expect("blur below saturation");
    (n * exposure / exp_integral(pieces, p.c), saturated)
}

/// Linear event double integral in the count domain.
pub fn edi_deblur(obs: &BlurObservation, p: &SensorParams) -> Result<LatentImage> {
    p.validate()?;
    let (h, w) = obs.blur.dim();
    let blur = obs.blur.as_slice().expect("standard layout");
    let out: Vec<(f64, bool)> = (0..h * w)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            obs.pieces(i, buf);
            edi_pixel(blur[i], buf, obs.exposure, p)
        })
        .collect();
    Ok(LatentImage {
        f: obs.f,
        exposure: obs.exposure,
        n_latent: Array2::from_shape_vec((h, w), out.iter().map(|o| o.0).collect()).expect("shape"),
        method: Method::Edi,
        tol: 0.0,
        saturated: out.iter().enumerate().filter(|(_, o)| o.1).map(|(i, _)| i).collect(),
    })
}

/// Blur predicted for latent `n_f` at pixel `(x, y)`.
pub fn nedi_forward(
    n_f: f64,
    events: &EventIndex,
    x: usize,
    y: usize,
    f: f64,
    exposure: f64,
    p: &SensorParams,
) -> f64 {
    let mut pieces = Vec::new();
    let pixel = y * events.dim().1 + x;
    events.pieces(pixel, f, f - exposure / 2.0, f + exposure / 2.0, &mut pieces);
    forward_pieces(n_f, &pieces, exposure, p)
}

/// Bisection for `forward(n) = b`, bracketed by doubling from `guess`.
fn solve_pixel(b: f64, pieces: &[(f64, i64)], exposure: f64, p: &SensorParams, tol: f64, guess: f64) -> Result<f64> {
    if b == 0.0 {
        return Ok(0.0);
    }
    let target = tol * b.max(1e-3 / p.tau);
    let residual = |n: f64| forward_pieces(n, pieces, exposure, p) - b;
    let mut hi = if guess > 0.0 && guess.is_finite() { guess } else { 1.0 };
    let mut lo = 0.0;
    let mut doublings = 0;
    while residual(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::Solver(format!("no bracket for blur {b} after {MAX_DOUBLINGS} doublings")));
        }
    }
    for _ in 0..MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let r = residual(mid);
        if r.abs() <= target {
            return Ok(mid);
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Solver(format!("bisection did not converge for blur {b}")))
}

/// Nonlinear event double integral: per-pixel inversion of [`nedi_forward`].
pub fn nedi_deblur(obs: &BlurObservation, p: &SensorParams, tol: f64) -> Result<LatentImage> {
    p.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be > 0, got {tol}")));
    }
    let (h, w) = obs.blur.dim();
    let blur = obs.blur.as_slice().expect("standard layout");
    let out: Vec<Result<(f64, bool)>> = (0..h * w)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            obs.pieces(i, buf);
            let (edi, saturated) = edi_pixel(blur[i], buf, obs.exposure, p);
            if saturated {
                return Ok((edi, true));
            }
            solve_pixel(blur[i], buf, obs.exposure, p, tol, edi).map(|n| (n, false))
        })
        .collect();
    let out = out.into_iter().collect::<Result<Vec<_>>>()?;
    let saturated: Vec<usize> = out.iter().enumerate().filter(|(_, o)| o.1).map(|(i, _)| i).collect();
    if !saturated.is_empty() {
        log::warn!("{} saturated pixels fell back to EDI", saturated.len());
    }
    Ok(LatentImage {
        f: obs.f,
        exposure: obs.exposure,
        n_latent: Array2::from_shape_vec((h, w), out.iter().map(|o| o.0).collect()).expect("shape"),
        method: Method::Nedi,
        tol,
        saturated,
    })
}

/// Propagates the latent from its anchor to `t` with the events in between.
pub fn latent_at(latent: &LatentImage, events: &EventIndex, t: f64, p: &SensorParams) -> Array2<f64> {
    let w = latent.n_latent.dim().1;
    Array2::from_shape_fn(latent.n_latent.dim(), |(y, x)| {
        let e = events.integrate(y * w + x, latent.f, t);
        latent.n_latent[[y, x]] * (p.c * e as f64).exp()
    })
}
