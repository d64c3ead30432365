//! Ground-truth scene rendering.
//!
//! A [`SceneClip`] is an HDR radiance raster moved by a keyframed rigid
//! trajectory. [`render_flux`] turns it into the per-pixel photon flux at any
//! instant; both sensor simulators and the evaluation ground truth pull from
//! here.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::pixel_rng;

/// Virtual pixel pitch used to express star frequencies in lines/mm.
pub const DEFAULT_PIXEL_PITCH_MM: f64 = 0.016_38;

/// Raster oversampling used by [`make_siemens_star`].
pub const STAR_OVERSAMPLE: usize = 4;

/// Photons/s per unit radiance for each lux of the illumination presets.
pub const PHOTONS_PER_LUX: f64 = 500.0;

pub fn illumination_for_lux(lux: f64) -> f64 {
    lux * PHOTONS_PER_LUX
}

/// One trajectory keyframe: image-plane translation (pixels) and rotation
/// (radians, about the image center) at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub t: f64,
    pub dx: f64,
    pub dy: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub dx: f64,
    pub dy: f64,
    pub theta: f64,
    cos: f64,
    sin: f64,
}

impl Pose {
    pub fn new(dx: f64, dy: f64, theta: f64) -> Self {
        Self {
            dx,
            dy,
            theta,
            cos: theta.cos(),
            sin: theta.sin(),
        }
    }
}

/// Piecewise-linear rigid motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory {
    keyframes: Vec<Keyframe>,
}

impl Trajectory {
    pub fn new(keyframes: Vec<Keyframe>) -> Result<Self> {
        if keyframes.is_empty() {
            return Err(Error::InvalidParameter("trajectory needs at least one keyframe".into()));
        }
        for w in keyframes.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::InvalidParameter(format!(
                    "keyframe times must increase strictly ({} then {})",
                    w[0].t, w[1].t
                )));
            }
        }
        if keyframes
            .iter()
            .any(|k| !(k.t.is_finite() && k.dx.is_finite() && k.dy.is_finite() && k.theta.is_finite()))
        {
            return Err(Error::InvalidParameter("non-finite keyframe".into()));
        }
        Ok(Self { keyframes })
    }

    pub fn identity(duration: f64) -> Self {
        Self::linear(duration, 0.0, 0.0, 0.0)
    }

    /// Constant-velocity pan, `vx`/`vy` in pixels per second.
    pub fn linear_pan(vx: f64, vy: f64, duration: f64) -> Self {
        Self::linear(duration, vx, vy, 0.0)
    }

    /// Constant-rate rotation about the image center (rad/s).
    pub fn rotation(rate: f64, duration: f64) -> Self {
        Self::linear(duration, 0.0, 0.0, rate)
    }

    fn linear(duration: f64, vx: f64, vy: f64, omega: f64) -> Self {
        Self {
            keyframes: vec![
                Keyframe {
                    t: 0.0,
                    dx: 0.0,
                    dy: 0.0,
                    theta: 0.0,
                },
                Keyframe {
                    t: duration,
                    dx: vx * duration,
                    dy: vy * duration,
                    theta: omega * duration,
                },
            ],
        }
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    /// True when every keyframe has the same pose.
    pub fn is_static(&self) -> bool {
        let k0 = &self.keyframes[0];
        self.keyframes.iter().all(|k| k.dx == k0.dx && k.dy == k0.dy && k.theta == k0.theta)
    }

    pub fn covers(&self, t0: f64, t1: f64) -> bool {
        let first = self.keyframes[0].t;
        let last = self.keyframes[self.keyframes.len() - 1].t;
        (self.keyframes.len() == 1) || (first <= t0 && last >= t1)
    }

    pub fn pose_at(&self, t: f64) -> Pose {
        let k = &self.keyframes;
        if k.len() == 1 || t <= k[0].t {
            return Pose::new(k[0].dx, k[0].dy, k[0].theta);
        }
        let last = k[k.len() - 1];
        if t >= last.t {
            return Pose::new(last.dx, last.dy, last.theta);
        }
        let i = k.partition_point(|kf| kf.t <= t);
        let (a, b) = (k[i - 1], k[i]);
        let s = (t - a.t) / (b.t - a.t);
        Pose::new(
            a.dx + s * (b.dx - a.dx),
            a.dy + s * (b.dy - a.dy),
            a.theta + s * (b.theta - a.theta),
        )
    }
}

/// Siemens-star metadata needed to measure MTF on rendered images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarGeometry {
    /// Center in output pixel coordinates.
    pub cx: f64,
    pub cy: f64,
    /// Number of bright/dark cycles around the circle.
    pub spokes: usize,
    pub pixel_pitch_mm: f64,
}

impl StarGeometry {
    /// Radius (pixels) at which the star has spatial frequency `lp_per_mm`.
    pub fn radius_for_frequency(&self, lp_per_mm: f64) -> f64 {
        self.spokes as f64 / (2.0 * PI * lp_per_mm * self.pixel_pitch_mm)
    }

    pub fn frequency_for_radius(&self, radius: f64) -> f64 {
        self.spokes as f64 / (2.0 * PI * radius * self.pixel_pitch_mm)
    }
}

/// HDR radiance plus motion and illumination.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneClip {
    /// Linear radiance raster, `(rows, cols)`. May be oversampled relative to
    /// the output resolution.
    pub radiance: Array2<f64>,
    pub trajectory: Trajectory,
    /// Photons/s per unit radiance.
    pub illumination: f64,
    pub duration: f64,
    pub width: usize,
    pub height: usize,
    pub star: Option<StarGeometry>,
}

/// Flux image at one instant, photons/s per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxFrame {
    pub t: f64,
    pub flux: Array2<f64>,
}

impl SceneClip {
    /// Clip rendered at the radiance raster's own resolution.
    pub fn new(
        radiance: Array2<f64>,
        trajectory: Trajectory,
        illumination: f64,
        duration: f64,
    ) -> Result<Self> {
        let (h, w) = radiance.dim();
        let clip = Self {
            radiance,
            trajectory,
            illumination,
            duration,
            width: w,
            height: h,
            star: None,
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn with_resolution(mut self, width: usize, height: usize) -> Result<Self> {
        self.width = width;
        self.height = height;
        self.validate()?;
        Ok(self)
    }

    pub fn with_trajectory(mut self, trajectory: Trajectory, duration: f64) -> Result<Self> {
        self.trajectory = trajectory;
        self.duration = duration;
        self.validate()?;
        Ok(self)
    }

    pub fn with_illumination(mut self, illumination: f64) -> Result<Self> {
        self.illumination = illumination;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.radiance.is_empty() {
            return Err(Error::InvalidParameter("empty scene".into()));
        }
        if self.radiance.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("radiance must be finite and >= 0".into()));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::InvalidParameter(format!("duration must be > 0, got {}", self.duration)));
        }
        if !(self.illumination.is_finite() && self.illumination > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "illumination must be > 0, got {}",
                self.illumination
            )));
        }
        if !self.trajectory.covers(0.0, self.duration) {
            return Err(Error::InvalidParameter(
                "trajectory must be defined on [0, duration]".into(),
            ));
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    pub fn pose_at(&self, t: f64) -> Pose {
        self.trajectory.pose_at(t)
    }

    /// Flux at output pixel `(x, y)` under `pose`.
    #[inline]
    pub fn flux_at(&self, pose: &Pose, x: usize, y: usize) -> f64 {
        let (cx, cy) = self.center();
        let px = x as f64 - cx - pose.dx;
        let py = y as f64 - cy - pose.dy;
        let u = pose.cos * px + pose.sin * py + cx;
        let v = -pose.sin * px + pose.cos * py + cy;
        let (rh, rw) = self.radiance.dim();
        let sx = rw as f64 / self.width as f64;
        let sy = rh as f64 / self.height as f64;
        self.illumination * bilinear(&self.radiance, (u + 0.5) * sx - 0.5, (v + 0.5) * sy - 0.5)
    }

    pub fn render_flux(&self, t: f64) -> Result<FluxFrame> {
        if !(0.0..=self.duration).contains(&t) {
            return Err(Error::out_of_range("t", t, format!("[0, {}]", self.duration)));
        }
        let pose = self.pose_at(t);
        let flux = Array2::from_shape_fn((self.height, self.width), |(y, x)| self.flux_at(&pose, x, y));
        Ok(FluxFrame { t, flux })
    }
}

/// Free-function form of [`SceneClip::render_flux`].
pub fn render_flux(clip: &SceneClip, t: f64) -> Result<FluxFrame> {
    clip.render_flux(t)
}

/// Bilinear sample with replicate-edge borders.
#[inline]
fn bilinear(img: &Array2<f64>, u: f64, v: f64) -> f64 {
    let (h, w) = img.dim();
    let u = u.clamp(0.0, (w - 1) as f64);
    let v = v.clamp(0.0, (h - 1) as f64);
    let x0 = u.floor() as usize;
    let y0 = v.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let top = img[[y0, x0]] * (1.0 - fx) + img[[y0, x1]] * fx;
    let bottom = img[[y1, x0]] * (1.0 - fx) + img[[y1, x1]] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Binary Siemens star with `spokes` bright/dark cycles and Michelson
/// contrast `contrast` (bright = 1). The clip is static with unit
/// illumination and duration 1 s; use the `with_*` builders to animate it.
pub fn make_siemens_star(spokes: usize, resolution: (usize, usize), contrast: f64) -> Result<SceneClip> {
    if spokes < 2 {
        return Err(Error::InvalidParameter(format!("spokes must be >= 2, got {spokes}")));
    }
    if !(contrast > 0.0 && contrast <= 1.0) {
        return Err(Error::out_of_range("contrast", contrast, "(0, 1]"));
    }
    let (w, h) = resolution;
    if w == 0 || h == 0 {
        return Err(Error::InvalidParameter("empty resolution".into()));
    }
    let dark = (1.0 - contrast) / (1.0 + contrast);
    let os = STAR_OVERSAMPLE as f64;
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let radiance = Array2::from_shape_fn((h * STAR_OVERSAMPLE, w * STAR_OVERSAMPLE), |(r, c)| {
        let x = (c as f64 + 0.5) / os - 0.5;
        let y = (r as f64 + 0.5) / os - 0.5;
        let phi = (y - cy).atan2(x - cx);
        if (spokes as f64 * phi).sin() >= 0.0 {
            1.0
        } else {
            dark
        }
    });
    let mut clip = SceneClip::new(radiance, Trajectory::identity(1.0), 1.0, 1.0)?.with_resolution(w, h)?;
    clip.star = Some(StarGeometry {
        cx,
        cy,
        spokes,
        pixel_pitch_mm: DEFAULT_PIXEL_PITCH_MM,
    });
    Ok(clip)
}

/// Smooth random texture in `[lo, hi]` built from Gaussian blobs.
pub fn smooth_texture(width: usize, height: usize, blobs: usize, blob_sigma: f64, lo: f64, hi: f64, seed: u64) -> Array2<f64> {
    let mut rng = pixel_rng(seed, 0);
    let centers: Vec<(f64, f64, f64, f64)> = (0..blobs)
        .map(|_| {
            let x = rng.random::<f64>() * width as f64;
            let y = rng.random::<f64>() * height as f64;
            let s = blob_sigma * (0.5 + rng.random::<f64>());
            let a = if rng.random::<bool>() { 1.0 } else { -1.0 } * (0.5 + rng.random::<f64>());
            (x, y, s, a)
        })
        .collect();
    let raw = Array2::from_shape_fn((height, width), |(r, c)| {
        centers
            .iter()
            .map(|&(x, y, s, a)| {
                let d2 = (c as f64 - x).powi(2) + (r as f64 - y).powi(2);
                a * (-d2 / (2.0 * s * s)).exp()
            })
            .sum::<f64>()
    });
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(f64::MIN_POSITIVE);
    raw.mapv(|v| lo + (hi - lo) * (v - min) / span)
}

/// Declarative scene description used by run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneSpec {
    /// Random smooth texture under a constant pan and/or rotation.
    Texture {
        size: usize,
        blobs: usize,
        blob_sigma: f64,
        lo: f64,
        hi: f64,
        #[serde(default)]
        vx: f64,
        #[serde(default)]
        vy: f64,
        #[serde(default)]
        omega: f64,
        lux: f64,
        duration: f64,
    },
    /// Siemens star rotating at `omega` rad/s.
    SiemensStar {
        size: usize,
        spokes: usize,
        contrast: f64,
        omega: f64,
        lux: f64,
        duration: f64,
    },
    /// Raw radiance file plus keyframe list on disk.
    File {
        header: String,
        trajectory: String,
        illumination: f64,
        duration: f64,
    },
}

impl SceneSpec {
    pub fn duration(&self) -> f64 {
        match self {
            SceneSpec::Texture { duration, .. }
            | SceneSpec::SiemensStar { duration, .. }
            | SceneSpec::File { duration, .. } => *duration,
        }
    }

    /// Same scene with a different duration.
    pub fn with_duration(&self, d: f64) -> Self {
        let mut s = self.clone();
        match &mut s {
            SceneSpec::Texture { duration, .. }
            | SceneSpec::SiemensStar { duration, .. }
            | SceneSpec::File { duration, .. } => *duration = d,
        }
        s
    }

    /// Builds the clip. `seed` feeds the texture generator only.
    pub fn build(&self, seed: u64) -> Result<SceneClip> {
        match *self {
            SceneSpec::Texture {
                size,
                blobs,
                blob_sigma,
                lo,
                hi,
                vx,
                vy,
                omega,
                lux,
                duration,
            } => {
                if !(lo >= 0.0 && hi >= lo) {
                    return Err(Error::InvalidParameter(format!("bad texture range [{lo}, {hi}]")));
                }
                let radiance = smooth_texture(size, size, blobs, blob_sigma, lo, hi, seed);
                let traj = Trajectory::new(vec![
                    Keyframe {
                        t: 0.0,
                        dx: 0.0,
                        dy: 0.0,
                        theta: 0.0,
                    },
                    Keyframe {
                        t: duration,
                        dx: vx * duration,
                        dy: vy * duration,
                        theta: omega * duration,
                    },
                ])?;
                SceneClip::new(radiance, traj, illumination_for_lux(lux), duration)
            }
            SceneSpec::SiemensStar {
                size,
                spokes,
                contrast,
                omega,
                lux,
                duration,
            } => make_siemens_star(spokes, (size, size), contrast)?
                .with_trajectory(Trajectory::rotation(omega, duration), duration)?
                .with_illumination(illumination_for_lux(lux)),
            SceneSpec::File {
                ref header,
                ref trajectory,
                illumination,
                duration,
            } => {
                let radiance = crate::io::read_radiance(header)?;
                let traj = crate::io::read_trajectory(trajectory)?;
                SceneClip::new(radiance, traj, illumination, duration)
            }
        }
    }
}
