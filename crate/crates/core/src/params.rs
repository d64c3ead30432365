//! Physical constants shared by the sensor simulators and the reconstruction.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Floor (photons/s) applied to flux before taking logarithms.
pub const LOG_FLUX_FLOOR: f64 = 1e-3;

/// `ln(max(flux, LOG_FLUX_FLOOR))`.
#[inline]
pub fn log_flux(flux: f64) -> f64 {
    flux.max(LOG_FLUX_FLOOR).ln()
}

/// Sensor constants for the SPAD array, the event camera and the
/// conventional-camera reference model.
///
/// Times are in seconds, fluxes in photons per second, log quantities in
/// natural-log units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorParams {
    /// Quantum efficiency.
    pub q: f64,
    /// Exposure of one binary frame.
    pub t_bin: f64,
    /// SPAD dead time.
    pub tau: f64,
    /// Dark count rate.
    pub phi_dark: f64,
    /// Full-well capacity of the conventional camera (electrons).
    pub n_fwc: f64,
    /// Exposure of the conventional camera.
    pub t_exp: f64,
    /// Read-noise standard deviation of the conventional camera (electrons).
    pub sigma_f: f64,
    /// Nominal event contrast threshold (log units).
    pub c: f64,
    /// Standard deviation of the per-pixel threshold mismatch.
    pub sigma_theta: f64,
    /// Event refractory period.
    pub rho: f64,
    /// Isolated-pixel noise coefficient (log units per sqrt(s)).
    pub sigma_iso: f64,
    /// Event shot-noise numerator: the shot-noise rate is `sigma_shot^2 / (flux + phi_0)`.
    pub sigma_shot: f64,
    /// Event shot-noise flux offset.
    pub phi_0: f64,
    /// Variance added for an event inside the refractory window.
    pub rho_ref: f64,
    /// Base SPAD measurement covariance (photons/s times log^2).
    pub r_bar: f64,
    /// Flux offset of the SPAD measurement covariance.
    pub n_0: f64,
}

impl Default for SensorParams {
    fn default() -> Self {
        Self {
            q: 0.4,
            t_bin: 1e-5,
            tau: 1e-7,
            phi_dark: 100.0,
            n_fwc: 36_000.0,
            t_exp: 0.01,
            sigma_f: 36.0,
            c: 0.3,
            sigma_theta: 0.03,
            rho: 1e-6,
            sigma_iso: 0.5,
            sigma_shot: 30.0,
            phi_0: 10.0,
            rho_ref: 0.01,
            // log-variance of a 64-bin aggregate is ~1/(64 q T_bin flux)
            r_bar: 1.0 / (64.0 * 0.4 * 1e-5),
            n_0: 10.0,
        }
    }
}

impl SensorParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("q", self.q),
            ("t_bin", self.t_bin),
            ("tau", self.tau),
            ("n_fwc", self.n_fwc),
            ("t_exp", self.t_exp),
            ("sigma_f", self.sigma_f),
            ("c", self.c),
            ("sigma_theta", self.sigma_theta),
            ("rho", self.rho),
            ("sigma_iso", self.sigma_iso),
            ("sigma_shot", self.sigma_shot),
            ("phi_0", self.phi_0),
            ("rho_ref", self.rho_ref),
            ("r_bar", self.r_bar),
            ("n_0", self.n_0),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.phi_dark.is_finite() && self.phi_dark >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "phi_dark must be >= 0, got {}",
                self.phi_dark
            )));
        }
        if self.q > 1.0 {
            return Err(Error::InvalidParameter(format!("q must be <= 1, got {}", self.q)));
        }
        if self.sigma_theta >= self.c {
            return Err(Error::InvalidParameter(format!(
                "sigma_theta ({}) must be smaller than c ({})",
                self.sigma_theta, self.c
            )));
        }
        Ok(())
    }

    /// Short hex digest of the parameter set, recorded in file headers.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("params serialize");
        let hash = Sha256::digest(&bytes);
        hex::encode(&hash[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SensorParams::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let p = SensorParams {
            q: 1.5,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = SensorParams {
            sigma_theta: 0.4,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = SensorParams {
            phi_dark: -1.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = SensorParams {
            phi_dark: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_ok());
    }

    #[test]
    fn digest_tracks_content() {
        let a = SensorParams::default();
        let b = SensorParams { c: 0.25, ..a };
        assert_eq!(a.digest(), SensorParams::default().digest());
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 16);
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let err = serde_json::from_str::<SensorParams>(r#"{"q":0.3,"bogus":1}"#);
        assert!(err.is_err());
        let p: SensorParams = serde_json::from_str(r#"{"q":0.3}"#).unwrap();
        assert_eq!(p.q, 0.3);
        assert_eq!(p.t_bin, 1e-5);
    }
}
