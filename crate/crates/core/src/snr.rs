//! Analytic SNR-vs-flux curves for a conventional camera, a SPAD and an
//! event camera.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::SensorParams;

/// Digitized reference curves: `flux,event_30,event_100,camera,spad` in dB,
/// zero-clipped.
pub const REFERENCE_CSV: &str = include_str!("../data/snr_reference.csv");

/// Conventional camera: shot + read noise with a hard full-well cutoff.
/// Returns `-inf` at and above `n_fwc / (q T)`.
pub fn snr_camera(flux: f64, p: &SensorParams) -> f64 {
    if flux >= p.n_fwc / (p.q * p.t_exp) {
        return f64::NEG_INFINITY;
    }
    10.0 * (flux / (p.q * flux * p.t_exp + p.sigma_f * p.sigma_f)).log10()
}

/// Constants of the SPAD SNR model beyond [`SensorParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpadSnrModel {
    /// Integration time of the photon-count estimate.
    pub exposure: f64,
    /// Detector dead time.
    pub tau_d: f64,
    /// Readout time constant; the model is undefined once `q Phi tau_r >= 1`.
    pub tau_r: f64,
    /// Weight of the dead-time saturation term.
    pub kappa: f64,
}

impl Default for SpadSnrModel {
    fn default() -> Self {
        Self {
            exposure: 0.0131,
            tau_d: 6.44e-7,
            tau_r: 1e-13,
            kappa: 5.25e-3,
        }
    }
}

/// SPAD SNR with dark-count, shot and dead-time saturation terms. Returns
/// `None` outside the model's domain (`q^2 Phi^2 tau_r^2 >= 1`).
pub fn snr_spad(flux: f64, p: &SensorParams, m: &SpadSnrModel) -> Option<f64> {
    let qf = p.q * flux;
    if qf * qf * m.tau_r * m.tau_r >= 1.0 {
        return None;
    }
    let a = 1.0 + qf * m.tau_d;
    let counts = qf * m.exposure;
    let dark = p.phi_dark / flux;
    let sat = a * a / (counts * (1.0 - qf * qf * m.tau_r * m.tau_r));
    let rel = dark * dark + a / counts + m.kappa * sat * sat;
    Some(-10.0 * rel.log10())
}

/// Event trigger probability `P_e(Phi, dPhi/Phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PeModel {
    /// Step at the contrast threshold.
    Hard,
    /// `1 - exp(-(r - C) * scale / sigma_theta)` above `C`.
    Threshold { scale: f64 },
    /// Threshold model with a flux-dependent effective threshold
    /// `C (Phi / phi_c)^gamma` and a low-light sensitivity
    /// `1 - exp(-(Phi / phi_s)^beta)`.
    Calibrated {
        scale: f64,
        phi_c: f64,
        gamma: f64,
        phi_s: f64,
        beta: f64,
    },
}

impl Default for PeModel {
    fn default() -> Self {
        PeModel::Calibrated {
            scale: 0.2131,
            phi_c: 9902.8,
            gamma: 0.0502,
            phi_s: 2188.8,
            beta: 6.065,
        }
    }
}

impl PeModel {
    /// `r` is the relative change `dPhi / Phi`.
    pub fn probability(&self, flux: f64, r: f64, p: &SensorParams) -> f64 {
        let ramp = |c_eff: f64, scale: f64| {
            if r > c_eff {
                1.0 - (-(r - c_eff) * scale / p.sigma_theta).exp()
            } else {
                0.0
            }
        };
        match *self {
            PeModel::Hard => {
                if r >= p.c {
                    1.0
                } else {
                    0.0
                }
            }
            PeModel::Threshold { scale } => ramp(p.c, scale),
            PeModel::Calibrated {
                scale,
                phi_c,
                gamma,
                phi_s,
                beta,
            } => {
                let sensitivity = 1.0 - (-(flux / phi_s).powf(beta)).exp();
                sensitivity * ramp(p.c * (flux / phi_c).powf(gamma), scale)
            }
        }
    }
}

/// Static event noise `a / (Phi + b) + floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventNoiseModel {
    pub a: f64,
    pub b: f64,
    pub floor: f64,
}

impl Default for EventNoiseModel {
    fn default() -> Self {
        Self {
            a: 2.2211e6,
            b: 7.0978e8,
            floor: 0.0079544,
        }
    }
}

impl EventNoiseModel {
    pub fn noise(&self, flux: f64) -> f64 {
        self.a / (flux + self.b) + self.floor
    }
}

/// Event-camera SNR for a relative change `delta_phi` (1.0 = 100%).
pub fn snr_event(flux: f64, delta_phi: f64, p: &SensorParams, pe: &PeModel, noise: &EventNoiseModel) -> f64 {
    let pe = pe.probability(flux, delta_phi, p);
    10.0 * (pe * (delta_phi / p.c) / noise.noise(flux)).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sensor {
    Camera,
    Spad,
    Event,
}

/// Full set of model constants for curve generation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnrModels {
    pub params: SensorParams,
    pub spad: SpadSnrModel,
    pub pe: PeModel,
    pub noise: EventNoiseModel,
}

impl SnrModels {
    /// Raw (unclipped) SNR; `NaN` marks points outside the SPAD model domain.
    pub fn eval(&self, sensor: Sensor, flux: f64, delta_phi: f64) -> f64 {
        match sensor {
            Sensor::Camera => snr_camera(flux, &self.params),
            Sensor::Spad => snr_spad(flux, &self.params, &self.spad).unwrap_or(f64::NAN),
            Sensor::Event => snr_event(flux, delta_phi, &self.params, &self.pe, &self.noise),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrCurveRequest {
    pub grid: Vec<f64>,
    pub sensor: Sensor,
    /// Relative change, event sensor only.
    #[serde(default)]
    pub delta_phi: f64,
    #[serde(default)]
    pub models: SnrModels,
}

/// `n` log-spaced points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && n >= 2) {
        return Err(Error::InvalidParameter(format!("bad grid [{lo}, {hi}] with {n} points")));
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect())
}

/// Grid of the digitized reference curves.
pub fn reference_grid() -> Vec<f64> {
    reference_curves().expect("bundled reference parses").flux
}

fn fmt_db(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v.is_nan() {
        "nan".into()
    } else {
        format!("{:.6}", v.max(0.0))
    }
}

/// CSV with header `flux,snr_db`; values clipped at 0 dB except `-inf`.
pub fn emit_curves(req: &SnrCurveRequest) -> Result<String> {
    if req.grid.is_empty() || req.grid.windows(2).any(|w| !(w[1] > w[0])) || req.grid[0] <= 0.0 {
        return Err(Error::InvalidParameter("flux grid must be positive and strictly increasing".into()));
    }
    if req.sensor == Sensor::Event && !(req.delta_phi > 0.0) {
        return Err(Error::InvalidParameter("delta_phi must be > 0".into()));
    }
    let mut s = String::from("flux,snr_db\n");
    for &f in &req.grid {
        s.push_str(&format!("{f:.6e},{}\n", fmt_db(req.models.eval(req.sensor, f, req.delta_phi))));
    }
    Ok(s)
}

/// All four reference curves on one grid, same layout as [`REFERENCE_CSV`].
pub fn emit_table(grid: &[f64], models: &SnrModels) -> String {
    let mut s = String::from("flux,event_30,event_100,camera,spad\n");
    for &f in grid {
        s.push_str(&format!(
            "{f:.6e},{},{},{},{}\n",
            fmt_db(models.eval(Sensor::Event, f, 0.3)),
            fmt_db(models.eval(Sensor::Event, f, 1.0)),
            fmt_db(models.eval(Sensor::Camera, f, 0.0)),
            fmt_db(models.eval(Sensor::Spad, f, 0.0)),
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCurves {
    pub flux: Vec<f64>,
    pub event_30: Vec<f64>,
    pub event_100: Vec<f64>,
    pub camera: Vec<f64>,
    pub spad: Vec<f64>,
}

pub fn parse_reference(text: &str) -> Result<ReferenceCurves> {
    let mut r = ReferenceCurves {
        flux: vec![],
        event_30: vec![],
        event_100: vec![],
        camera: vec![],
        spad: vec![],
    };
    for (n, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
        let v: Vec<f64> = line
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format(format!("bad reference row {}", n + 1)))?;
        if v.len() != 5 {
            return Err(Error::Format(format!("reference row {} has {} columns", n + 1, v.len())));
        }
        r.flux.push(v[0]);
        r.event_30.push(v[1]);
        r.event_100.push(v[2]);
        r.camera.push(v[3]);
        r.spad.push(v[4]);
    }
    Ok(r)
}

pub fn reference_curves() -> Result<ReferenceCurves> {
    parse_reference(REFERENCE_CSV)
}

/// Largest |model - reference| (dB) per curve over points where the
/// reference is above `min_db`; model values are zero-clipped like the
/// reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub event_30: f64,
    pub event_100: f64,
    pub spad: f64,
}

pub fn calibration_report(reference: &ReferenceCurves, models: &SnrModels, min_db: f64) -> CalibrationReport {
    let err = |sensor: Sensor, dphi: f64, curve: &[f64]| {
        reference
            .flux
            .iter()
            .zip(curve)
            .filter(|(_, r)| **r > min_db)
            .map(|(f, r)| (models.eval(sensor, *f, dphi).max(0.0) - r).abs())
            .fold(0.0, f64::max)
    };
    CalibrationReport {
        event_30: err(Sensor::Event, 0.3, &reference.event_30),
        event_100: err(Sensor::Event, 1.0, &reference.event_100),
        spad: err(Sensor::Spad, 0.0, &reference.spad),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn camera_cutoff_and_onset() {
        let p = SensorParams::default();
        let cutoff = p.n_fwc / (p.q * p.t_exp);
        assert_eq!(snr_camera(cutoff, &p), f64::NEG_INFINITY);
        assert!(snr_camera(cutoff * 0.999, &p).is_finite());
        let grid = reference_grid();
        let first_positive = grid.iter().find(|f| snr_camera(**f, &p) > 0.0).unwrap();
        assert!((1.0e3..=2.5e3).contains(first_positive), "{first_positive}");
        assert!(cutoff > 6.9e6 && cutoff < 1.2e7);
        for f in grid {
            assert_eq!(snr_camera(f, &p) == f64::NEG_INFINITY, f >= cutoff);
        }
    }

    #[test]
    fn camera_read_noise_free_limit() {
        let p = SensorParams {
            sigma_f: 1e-9,
            q: 0.5,
            t_exp: 2.0,
            n_fwc: 1e30,
            ..Default::default()
        };
        for f in [1.0, 1e3, 1e6] {
            assert!(snr_camera(f, &p).abs() < 1e-9);
        }
    }

    #[test]
    fn spad_soft_saturation() {
        let p = SensorParams::default();
        let m = SpadSnrModel::default();
        let grid = log_grid(10.0, 2.2e11, 400).unwrap();
        let vals: Vec<f64> = grid.iter().map(|f| snr_spad(*f, &p, &m).unwrap()).collect();
        let (i, peak) = vals
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
        assert!(i > 0 && i < grid.len() - 1);
        assert!((grid[i] / 4e8).log10().abs() <= 1.0);
        assert!((peak - 45.0).abs() <= 5.0, "peak {peak}");
        assert!(snr_spad(1e-3, &p, &m).unwrap() < -50.0);
        let tight = SpadSnrModel { tau_r: 1e-6, ..m };
        assert!(snr_spad(1e7, &p, &tight).is_none());
    }

    #[test]
    fn spad_beats_camera_below_cutoff() {
        let models = SnrModels::default();
        let p = models.params;
        for f in reference_grid().into_iter().filter(|f| *f < p.n_fwc / (p.q * p.t_exp)) {
            assert!(models.eval(Sensor::Spad, f, 0.0) > models.eval(Sensor::Camera, f, 0.0), "at {f}");
        }
    }

    #[test]
    fn event_examples() {
        let p = SensorParams::default();
        let noise = EventNoiseModel::default();
        assert_eq!(snr_event(1e4, 0.2, &p, &PeModel::Hard, &noise), f64::NEG_INFINITY);
        assert!(snr_event(1e4, 0.5, &p, &PeModel::Hard, &noise).is_finite());
        let m = SnrModels::default();
        for f in reference_grid() {
            assert!(m.eval(Sensor::Event, f, 1.0) >= m.eval(Sensor::Event, f, 0.3));
            if f > 1.4e4 {
                assert!(m.eval(Sensor::Event, f, 0.3) <= 0.0 + 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn event_snr_monotone_in_delta(f in 1.0f64..1e11, a in 0.01f64..3.0, b in 0.01f64..3.0) {
            let m = SnrModels::default();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(m.eval(Sensor::Event, f, hi) >= m.eval(Sensor::Event, f, lo));
            for pe in [PeModel::Hard, PeModel::Threshold { scale: 1.0 }] {
                let p = SensorParams::default();
                let n = EventNoiseModel::default();
                prop_assert!(snr_event(f, hi, &p, &pe, &n) >= snr_event(f, lo, &p, &pe, &n));
            }
        }
    }

    #[test]
    fn crossover_range_exists() {
        let m = SnrModels::default();
        let hits = reference_grid()
            .into_iter()
            .filter(|&f| {
                let cam = m.eval(Sensor::Camera, f, 0.0);
                m.eval(Sensor::Spad, f, 0.0) > cam && m.eval(Sensor::Event, f, 1.0) > cam
            })
            .count();
        assert!(hits >= 2);
    }

    #[test]
    fn calibration_against_reference() {
        let r = reference_curves().unwrap();
        assert_eq!(r.flux.len(), 47);
        let rep = calibration_report(&r, &SnrModels::default(), 0.5);
        assert!(rep.spad < 2.5, "{rep:?}");
        assert!(rep.event_100 < 1.5, "{rep:?}");
        assert!(rep.event_30 < 1.0, "{rep:?}");
    }

    #[test]
    fn emitted_curves() {
        let grid = reference_grid();
        let req = SnrCurveRequest {
            grid: grid.clone(),
            sensor: Sensor::Camera,
            delta_phi: 0.0,
            models: SnrModels::default(),
        };
        let csv = emit_curves(&req).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), grid.len());
        assert!(rows.last().unwrap().ends_with(",-inf"));
        assert_eq!(csv, emit_curves(&req).unwrap());
        let bad = SnrCurveRequest {
            grid: vec![2.0, 1.0],
            ..req
        };
        assert!(emit_curves(&bad).is_err());
        let g = log_grid(1.0, 100.0, 3).unwrap();
        assert_relative_eq!(g[1], 10.0, max_relative = 1e-12);
    }
}
