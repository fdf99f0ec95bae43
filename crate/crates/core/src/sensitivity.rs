//! Minimum detectable flux density from the radiometer equation, with the
//! intrinsic pulse width broadened by sampling, DM-grid and intra-channel
//! dispersion smearing.

use std::fmt::Write as _;

use thiserror::Error;

use crate::dedisp::{DISPERSION_CONSTANT, DEFAULT_DM_MAX, DEFAULT_DM_MIN, DEFAULT_TRIALS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("NonPositivePeriod: {0} ms")]
    NonPositivePeriod(f64),
    #[error("InvalidParams: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityParams {
    pub duty_cycle: f64,
    pub snr_min: f64,
    pub t_obs_s: f64,
    pub bandwidth_mhz: f64,
    pub n_pol: u32,
    pub t_sys_k: f64,
    pub gain_k_per_jy: f64,
    pub t_samp_ms: f64,
    pub channel_bw_mhz: f64,
    pub f_center_mhz: f64,
    /// Spacing of the DM trial grid; half of it is the worst-case DM error.
    pub dm_step: f64,
}

impl Default for SensitivityParams {
    /// Aggregated survey data: 2 ms samples, 24 x 12 MHz channels.
    fn default() -> Self {
        SensitivityParams {
            duty_cycle: 0.05,
            snr_min: 8.0,
            t_obs_s: 2100.0,
            bandwidth_mhz: 288.0,
            n_pol: 2,
            t_sys_k: 21.0,
            gain_k_per_jy: 0.735,
            t_samp_ms: 2.0,
            channel_bw_mhz: 12.0,
            f_center_mhz: 1374.0,
            dm_step: (DEFAULT_DM_MAX - DEFAULT_DM_MIN) / (DEFAULT_TRIALS - 1) as f64,
        }
    }
}

impl SensitivityParams {
    pub fn validate(&self) -> Result<(), SensitivityError> {
        let bad = |m: &str| Err(SensitivityError::InvalidParams(m.to_string()));
        if !(self.duty_cycle > 0.0 && self.duty_cycle < 1.0) {
            return bad("duty_cycle must be in (0, 1)");
        }
        let positive = [
            self.snr_min,
            self.t_obs_s,
            self.bandwidth_mhz,
            self.t_sys_k,
            self.gain_k_per_jy,
            self.f_center_mhz,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || self.n_pol == 0 {
            return bad("radiometer parameters must be positive");
        }
        // Smearing terms may be switched off individually.
        if [self.t_samp_ms, self.channel_bw_mhz, self.dm_step]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return bad("smearing parameters must be non-negative");
        }
        if self.bandwidth_mhz >= 2.0 * self.f_center_mhz {
            return bad("band extends below zero frequency");
        }
        Ok(())
    }

    /// Sweep across the band for half a DM step, in ms.
    pub fn dm_grid_smear_ms(&self) -> f64 {
        let lo = self.f_center_mhz - self.bandwidth_mhz / 2.0;
        let hi = self.f_center_mhz + self.bandwidth_mhz / 2.0;
        DISPERSION_CONSTANT * 0.5 * self.dm_step * (lo.powi(-2) - hi.powi(-2)) * 1e3
    }

    /// Dispersion sweep within one channel at band centre, in ms.
    pub fn channel_smear_ms(&self, dm: f64) -> f64 {
        let lo = self.f_center_mhz - self.channel_bw_mhz / 2.0;
        let hi = self.f_center_mhz + self.channel_bw_mhz / 2.0;
        DISPERSION_CONSTANT * dm * (lo.powi(-2) - hi.powi(-2)) * 1e3
    }

    pub fn effective_width_ms(&self, period_ms: f64, dm: f64) -> f64 {
        let w_int = self.duty_cycle * period_ms;
        (w_int.powi(2)
            + self.t_samp_ms.powi(2)
            + self.dm_grid_smear_ms().powi(2)
            + self.channel_smear_ms(dm).powi(2))
        .sqrt()
    }
}

/// Minimum detectable flux density in mJy; infinite when the broadened
/// pulse fills the whole period.
pub fn min_flux_density(
    p: &SensitivityParams,
    period_ms: f64,
    dm: f64,
) -> Result<f64, SensitivityError> {
    p.validate()?;
    if !(period_ms > 0.0) {
        return Err(SensitivityError::NonPositivePeriod(period_ms));
    }
    if !(dm >= 0.0) {
        return Err(SensitivityError::InvalidParams("dm must be non-negative".into()));
    }
    let w = p.effective_width_ms(period_ms, dm);
    if w >= period_ms {
        return Ok(f64::INFINITY);
    }
    let radiometer = p.snr_min * p.t_sys_k
        / (p.gain_k_per_jy * (p.n_pol as f64 * p.bandwidth_mhz * 1e6 * p.t_obs_s).sqrt());
    Ok(radiometer * (w / (period_ms - w)).sqrt() * 1e3)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityRow {
    pub dm: f64,
    pub period_ms: f64,
    pub smin_mjy: f64,
}

pub fn sensitivity_curve(
    p: &SensitivityParams,
    dm_list: &[f64],
    period_grid_ms: &[f64],
) -> Result<Vec<SensitivityRow>, SensitivityError> {
    if dm_list.is_empty() || period_grid_ms.is_empty() {
        return Err(SensitivityError::InvalidParams("grids must be non-empty".into()));
    }
    let mut rows = Vec::with_capacity(dm_list.len() * period_grid_ms.len());
    for &dm in dm_list {
        for &period_ms in period_grid_ms {
            rows.push(SensitivityRow {
                dm,
                period_ms,
                smin_mjy: min_flux_density(p, period_ms, dm)?,
            });
        }
    }
    Ok(rows)
}

/// `n` log-spaced periods from `lo` to `hi` inclusive.
pub fn log_period_grid(lo_ms: f64, hi_ms: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo_ms],
        _ => {
            let (a, b) = (lo_ms.ln(), hi_ms.ln());
            (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

pub fn curve_csv(rows: &[SensitivityRow]) -> String {
    let mut out = String::from("dm,period_ms,smin_mjy\n");
    for r in rows {
        if r.smin_mjy.is_finite() {
            let _ = writeln!(out, "{},{:.6},{:.6}", r.dm, r.period_ms, r.smin_mjy);
        } else {
            let _ = writeln!(out, "{},{:.6},inf", r.dm, r.period_ms);
        }
    }
    out
}
