//! Incoherent dedispersion: cold-plasma delays, the DM trial grid and
//! shift-and-sum time series.

use thiserror::Error;

use crate::beamio::{BeamIoError, FilterbankBlock};

/// Cold-plasma dispersion constant in MHz^2 pc^-1 cm^3 s.
pub const DISPERSION_CONSTANT: f64 = 4.148808e3;

pub const DEFAULT_TRIALS: usize = 450;
pub const DEFAULT_DM_MIN: f64 = 0.0;
pub const DEFAULT_DM_MAX: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DedispError {
    #[error("NonPositiveFrequency: {0} MHz")]
    NonPositiveFrequency(f64),
    #[error("NegativeDm: {0}")]
    NegativeDm(f64),
    #[error("BadRange: {0}")]
    BadRange(String),
    #[error("ShiftExceedsData: maximum shift {max_shift} samples with only {n_samples} samples")]
    ShiftExceedsData { max_shift: usize, n_samples: usize },
}

impl From<DedispError> for BeamIoError {
    fn from(e: DedispError) -> Self {
        BeamIoError::InvalidParams(e.to_string())
    }
}

/// Arrival delay of `f_chan` relative to `f_ref`, in seconds.
pub fn dm_delay(dm: f64, f_chan_mhz: f64, f_ref_mhz: f64) -> Result<f64, DedispError> {
    if !(f_chan_mhz > 0.0) {
        return Err(DedispError::NonPositiveFrequency(f_chan_mhz));
    }
    if !(f_ref_mhz > 0.0) {
        return Err(DedispError::NonPositiveFrequency(f_ref_mhz));
    }
    if !(dm >= 0.0) {
        return Err(DedispError::NegativeDm(dm));
    }
    Ok(DISPERSION_CONSTANT * dm * (f_chan_mhz.powi(-2) - f_ref_mhz.powi(-2)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmTrialGrid {
    pub dm_values: Vec<f64>,
}

impl DmTrialGrid {
    /// Any strictly increasing list of non-negative DMs, including an empty one.
    pub fn from_values(dm_values: Vec<f64>) -> Result<Self, DedispError> {
        if dm_values.iter().any(|d| !(*d >= 0.0)) {
            return Err(DedispError::BadRange("DMs must be non-negative".into()));
        }
        if dm_values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DedispError::BadRange("DMs must be strictly increasing".into()));
        }
        Ok(DmTrialGrid { dm_values })
    }

    pub fn n_trials(&self) -> usize {
        self.dm_values.len()
    }

    pub fn dm_min(&self) -> Option<f64> {
        self.dm_values.first().copied()
    }

    pub fn dm_max(&self) -> Option<f64> {
        self.dm_values.last().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.dm_values.is_empty()
    }

    /// Mean spacing between trials (0 for fewer than two trials).
    pub fn step(&self) -> f64 {
        match (self.dm_min(), self.dm_max()) {
            (Some(a), Some(b)) if self.n_trials() > 1 => (b - a) / (self.n_trials() - 1) as f64,
            _ => 0.0,
        }
    }
}

/// Linearly spaced grid including both endpoints.
pub fn make_dm_grid(n_trials: usize, dm_min: f64, dm_max: f64) -> Result<DmTrialGrid, DedispError> {
    if n_trials < 2 {
        return Err(DedispError::BadRange(format!(
            "need at least 2 trials, got {n_trials}"
        )));
    }
    if !(dm_max > dm_min) || !(dm_min >= 0.0) {
        return Err(DedispError::BadRange(format!(
            "need 0 <= dm_min < dm_max, got [{dm_min}, {dm_max}]"
        )));
    }
    let step = (dm_max - dm_min) / (n_trials - 1) as f64;
    let mut dm_values: Vec<f64> = (0..n_trials).map(|i| dm_min + step * i as f64).collect();
    dm_values[n_trials - 1] = dm_max;
    Ok(DmTrialGrid { dm_values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub values: Vec<u32>,
    pub t_samp_ms: f64,
    pub dm: f64,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Debug dump: u64 little-endian count followed by u32 little-endian values.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.values.len());
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// Per-channel integer shifts (in samples) for one DM.
pub fn channel_shifts(
    params: &crate::beamio::ObservationParams,
    dm: f64,
) -> Result<Vec<usize>, DedispError> {
    let f_ref = params.f_highest_mhz();
    let ts = params.t_samp_s();
    (0..params.n_channels)
        .map(|c| {
            dm_delay(dm, params.channel_freq_mhz(c), f_ref).map(|d| (d / ts).round() as usize)
        })
        .collect()
}

/// A block rearranged channel-major so each DM trial is a set of
/// contiguous slice additions. Shared read-only across trials.
pub struct Dedisperser<'a> {
    block: &'a FilterbankBlock,
    channels: Vec<Vec<u8>>,
}

impl<'a> Dedisperser<'a> {
    pub fn new(block: &'a FilterbankBlock) -> Self {
        Dedisperser {
            channels: block.channel_major(),
            block,
        }
    }

    pub fn block(&self) -> &FilterbankBlock {
        self.block
    }

    pub fn dedisperse(&self, dm: f64) -> Result<TimeSeries, DedispError> {
        let params = &self.block.params;
        let ns = params.n_samples as usize;
        let shifts = channel_shifts(params, dm)?;
        let max_shift = shifts.iter().copied().max().unwrap_or(0);
        if max_shift >= ns {
            return Err(DedispError::ShiftExceedsData {
                max_shift,
                n_samples: ns,
            });
        }
        let len = ns - max_shift;
        let mut values = vec![0u32; len];
        for (chan, &k) in self.channels.iter().zip(&shifts) {
            for (o, &v) in values.iter_mut().zip(&chan[k..k + len]) {
                *o += v as u32;
            }
        }
        Ok(TimeSeries {
            values,
            t_samp_ms: params.t_samp_ms(),
            dm,
        })
    }
}

/// Shift each channel by its dispersion delay and sum across channels.
/// The output is truncated by the largest shift rather than wrapped.
pub fn dedisperse(block: &FilterbankBlock, dm: f64) -> Result<TimeSeries, DedispError> {
    Dedisperser::new(block).dedisperse(dm)
}
