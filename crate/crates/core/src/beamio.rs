//! Filterbank block formats: synthesis of test beams, channel/time
//! aggregation, canonical conversion and the `BMFB` block file.
//!
//! Samples are stored time-major with the channel index varying fastest.
//! 1-bit samples are packed MSB-first and every time slice is padded to a
//! whole byte. Channel 0 is the highest-frequency channel.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dedisp;

pub const MAGIC: &[u8; 4] = b"BMFB";
pub const FORMAT_VERSION: u16 = 1;
pub const BEAM_ID_LEN: usize = 64;
/// Length of the fixed binary preamble written before the payload.
pub const HEADER_LEN: usize = 4 + 2 + 4 + 8 + 8 + 8 + 8 + 1 + BEAM_ID_LEN + 8 + 8;

/// Centre of the highest channel so that 96 x 3 MHz straddles 1400 MHz.
pub const DEFAULT_F_HIGHEST_MHZ: f64 = 1516.5;
pub const SURVEY_CHANNELS: u32 = 96;
pub const SURVEY_CHANNEL_BW_MHZ: f64 = 3.0;
pub const SURVEY_T_SAMP_MS: f64 = 0.125;
/// Desk-scale raw beam length (2^21 samples, about 262 s).
pub const DESK_SAMPLES: u64 = 1 << 21;
pub const BEAMS_PER_POINTING: usize = 13;

#[derive(Debug, Error)]
pub enum BeamIoError {
    #[error("InvalidParams: {0}")]
    InvalidParams(String),
    #[error("NotDivisible: {0}")]
    NotDivisible(String),
    #[error("Overflow: aggregation factor product {0} exceeds 255")]
    Overflow(usize),
    #[error("CorruptHeader: {0}")]
    CorruptHeader(String),
    #[error("TruncatedData: expected {expected} payload bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("IoError: {0}")]
    Io(#[from] io::Error),
}

impl BeamIoError {
    pub fn kind(&self) -> &'static str {
        match self {
            BeamIoError::InvalidParams(_) => "InvalidParams",
            BeamIoError::NotDivisible(_) => "NotDivisible",
            BeamIoError::Overflow(_) => "Overflow",
            BeamIoError::CorruptHeader(_) => "CorruptHeader",
            BeamIoError::TruncatedData { .. } => "TruncatedData",
            BeamIoError::Io(_) => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, BeamIoError>;

/// Observation parameters, held in the integer units of the file header so
/// that a block survives a write/read cycle bit-exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationParams {
    pub n_channels: u32,
    pub channel_bw_millihz: u64,
    pub f_highest_millihz: u64,
    pub t_samp_ns: u64,
    pub n_samples: u64,
    pub bits_per_sample: u8,
    pub beam_id: String,
    pub ra_udeg: i64,
    pub dec_udeg: i64,
}

fn mhz_to_millihz(mhz: f64) -> u64 {
    (mhz * 1e9).round() as u64
}

impl ObservationParams {
    pub fn new(
        n_channels: u32,
        channel_bw_mhz: f64,
        f_highest_channel_center_mhz: f64,
        t_samp_ms: f64,
        n_samples: u64,
        bits_per_sample: u8,
    ) -> Result<Self> {
        if !(channel_bw_mhz > 0.0) || !(f_highest_channel_center_mhz > 0.0) || !(t_samp_ms > 0.0)
        {
            return Err(BeamIoError::InvalidParams(
                "bandwidth, frequency and sampling time must be positive".into(),
            ));
        }
        let p = ObservationParams {
            n_channels,
            channel_bw_millihz: mhz_to_millihz(channel_bw_mhz),
            f_highest_millihz: mhz_to_millihz(f_highest_channel_center_mhz),
            t_samp_ns: (t_samp_ms * 1e6).round() as u64,
            n_samples,
            bits_per_sample,
            beam_id: String::new(),
            ra_udeg: 0,
            dec_udeg: 0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Raw survey layout: 96 x 3 MHz channels, 0.125 ms, 1-bit.
    pub fn survey(n_samples: u64) -> Self {
        ObservationParams::new(
            SURVEY_CHANNELS,
            SURVEY_CHANNEL_BW_MHZ,
            DEFAULT_F_HIGHEST_MHZ,
            SURVEY_T_SAMP_MS,
            n_samples,
            1,
        )
        .expect("survey parameters are valid")
    }

    pub fn with_beam_id(mut self, id: impl Into<String>) -> Self {
        self.beam_id = id.into();
        self
    }

    pub fn with_position(mut self, ra_deg: f64, dec_deg: f64) -> Self {
        self.ra_udeg = (ra_deg * 1e6).round() as i64;
        self.dec_udeg = (dec_deg * 1e6).round() as i64;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BeamIoError::InvalidParams(m.to_string()));
        if self.n_channels == 0 {
            return bad("n_channels must be at least 1");
        }
        if self.channel_bw_millihz == 0 {
            return bad("channel bandwidth must be positive");
        }
        if self.t_samp_ns == 0 {
            return bad("sampling time must be positive");
        }
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1");
        }
        if self.bits_per_sample != 1 && self.bits_per_sample != 8 {
            return bad("bits_per_sample must be 1 or 8");
        }
        if self.beam_id.len() > BEAM_ID_LEN {
            return bad("beam_id longer than 64 bytes");
        }
        if self.beam_id.as_bytes().contains(&0) {
            return bad("beam_id contains NUL");
        }
        let lowest = self.channel_bw_millihz as u128 * (self.n_channels as u128 - 1);
        if lowest >= self.f_highest_millihz as u128 {
            return bad("lowest channel centre frequency is not positive");
        }
        Ok(())
    }

    pub fn channel_bw_mhz(&self) -> f64 {
        self.channel_bw_millihz as f64 * 1e-9
    }

    pub fn f_highest_mhz(&self) -> f64 {
        self.f_highest_millihz as f64 * 1e-9
    }

    pub fn t_samp_ms(&self) -> f64 {
        self.t_samp_ns as f64 * 1e-6
    }

    pub fn t_samp_s(&self) -> f64 {
        self.t_samp_ns as f64 * 1e-9
    }

    pub fn ra_deg(&self) -> f64 {
        self.ra_udeg as f64 * 1e-6
    }

    pub fn dec_deg(&self) -> f64 {
        self.dec_udeg as f64 * 1e-6
    }

    /// Centre frequency of channel `c` (channel 0 is the highest).
    pub fn channel_freq_mhz(&self, c: u32) -> f64 {
        (self.f_highest_millihz - self.channel_bw_millihz * c as u64) as f64 * 1e-9
    }

    pub fn total_bandwidth_mhz(&self) -> f64 {
        self.channel_bw_mhz() * self.n_channels as f64
    }

    pub fn observation_s(&self) -> f64 {
        self.t_samp_s() * self.n_samples as f64
    }

    pub fn bytes_per_slice(&self) -> usize {
        (self.n_channels as usize * self.bits_per_sample as usize).div_ceil(8)
    }

    pub fn payload_bytes(&self) -> usize {
        self.bytes_per_slice() * self.n_samples as usize
    }
}

/// Size of a raw beam on disk: padded payload plus the block header.
pub fn raw_beam_size_bytes(params: &ObservationParams) -> Result<u64> {
    raw_beam_size_with_header(params, HEADER_LEN as u64)
}

pub fn raw_beam_size_with_header(params: &ObservationParams, header_len: u64) -> Result<u64> {
    params.validate()?;
    let slice = (params.n_channels as u64 * params.bits_per_sample as u64).div_ceil(8);
    Ok(slice * params.n_samples + header_len)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterbankBlock {
    pub params: ObservationParams,
    pub data: Vec<u8>,
}

impl FilterbankBlock {
    pub fn new(params: ObservationParams, data: Vec<u8>) -> Result<Self> {
        params.validate()?;
        if data.len() != params.payload_bytes() {
            return Err(BeamIoError::InvalidParams(format!(
                "payload is {} bytes, parameters require {}",
                data.len(),
                params.payload_bytes()
            )));
        }
        Ok(FilterbankBlock { params, data })
    }

    pub fn zeros(params: ObservationParams) -> Result<Self> {
        let n = params.payload_bytes();
        FilterbankBlock::new(params, vec![0; n])
    }

    /// Build a block from unpacked sample values, `samples[s * n_channels + c]`.
    pub fn from_samples(params: ObservationParams, samples: &[u8]) -> Result<Self> {
        params.validate()?;
        let nch = params.n_channels as usize;
        if samples.len() != nch * params.n_samples as usize {
            return Err(BeamIoError::InvalidParams("sample count mismatch".into()));
        }
        let mut block = FilterbankBlock::zeros(params)?;
        for (i, &v) in samples.iter().enumerate() {
            block.set_sample(i / nch, i % nch, v);
        }
        Ok(block)
    }

    pub fn n_channels(&self) -> usize {
        self.params.n_channels as usize
    }

    pub fn n_samples(&self) -> usize {
        self.params.n_samples as usize
    }

    #[inline]
    pub fn sample(&self, s: usize, c: usize) -> u8 {
        let slice = self.params.bytes_per_slice();
        match self.params.bits_per_sample {
            8 => self.data[s * slice + c],
            _ => (self.data[s * slice + c / 8] >> (7 - (c % 8))) & 1,
        }
    }

    #[inline]
    pub fn set_sample(&mut self, s: usize, c: usize, v: u8) {
        let slice = self.params.bytes_per_slice();
        match self.params.bits_per_sample {
            8 => self.data[s * slice + c] = v,
            _ => {
                let byte = &mut self.data[s * slice + c / 8];
                let mask = 1u8 << (7 - (c % 8));
                if v & 1 == 1 {
                    *byte |= mask;
                } else {
                    *byte &= !mask;
                }
            }
        }
    }

    /// Per-channel sample vectors (channel-major copy of the block).
    pub fn channel_major(&self) -> Vec<Vec<u8>> {
        let nch = self.n_channels();
        let ns = self.n_samples();
        let mut out = vec![vec![0u8; ns]; nch];
        match self.params.bits_per_sample {
            8 => {
                for (s, slice) in self.data.chunks_exact(nch).enumerate() {
                    for (c, &v) in slice.iter().enumerate() {
                        out[c][s] = v;
                    }
                }
            }
            _ => {
                let bps = self.params.bytes_per_slice();
                for (s, slice) in self.data.chunks_exact(bps).enumerate() {
                    for (c, ch) in out.iter_mut().enumerate() {
                        ch[s] = (slice[c / 8] >> (7 - (c % 8))) & 1;
                    }
                }
            }
        }
        out
    }

    /// Sum over channels at every time sample (no dispersion correction).
    pub fn channel_sum(&self) -> Vec<u32> {
        let nch = self.n_channels();
        (0..self.n_samples())
            .map(|s| (0..nch).map(|c| self.sample(s, c) as u32).sum())
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len());
        encode_header(&self.params, &mut out);
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let params = decode_header(bytes)?;
        let payload = &bytes[HEADER_LEN..];
        let expected = params.payload_bytes();
        if payload.len() < expected {
            return Err(BeamIoError::TruncatedData {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(BeamIoError::CorruptHeader(format!(
                "payload of {} bytes does not match {}-bit header ({} bytes)",
                payload.len(),
                params.bits_per_sample,
                expected
            )));
        }
        Ok(FilterbankBlock {
            params,
            data: payload.to_vec(),
        })
    }
}

fn encode_header(p: &ObservationParams, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&p.n_channels.to_le_bytes());
    out.extend_from_slice(&p.channel_bw_millihz.to_le_bytes());
    out.extend_from_slice(&p.f_highest_millihz.to_le_bytes());
    out.extend_from_slice(&p.t_samp_ns.to_le_bytes());
    out.extend_from_slice(&p.n_samples.to_le_bytes());
    out.push(p.bits_per_sample);
    let mut id = [0u8; BEAM_ID_LEN];
    id[..p.beam_id.len()].copy_from_slice(p.beam_id.as_bytes());
    out.extend_from_slice(&id);
    out.extend_from_slice(&p.ra_udeg.to_le_bytes());
    out.extend_from_slice(&p.dec_udeg.to_le_bytes());
}

fn decode_header(bytes: &[u8]) -> Result<ObservationParams> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(BeamIoError::CorruptHeader("bad magic".into()));
        }
        return Err(BeamIoError::CorruptHeader(format!(
            "header needs {HEADER_LEN} bytes, found {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(BeamIoError::CorruptHeader("bad magic".into()));
    }
    let mut pos = 4;
    let mut take = |n: usize| {
        let s = &bytes[pos..pos + n];
        pos += n;
        s
    };
    let version = u16::from_le_bytes(take(2).try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(BeamIoError::CorruptHeader(format!(
            "unsupported format version {version}"
        )));
    }
    let n_channels = u32::from_le_bytes(take(4).try_into().unwrap());
    let channel_bw_millihz = u64::from_le_bytes(take(8).try_into().unwrap());
    let f_highest_millihz = u64::from_le_bytes(take(8).try_into().unwrap());
    let t_samp_ns = u64::from_le_bytes(take(8).try_into().unwrap());
    let n_samples = u64::from_le_bytes(take(8).try_into().unwrap());
    let bits_per_sample = take(1)[0];
    let id_raw = take(BEAM_ID_LEN);
    let id_end = id_raw.iter().position(|&b| b == 0).unwrap_or(BEAM_ID_LEN);
    if id_raw[id_end..].iter().any(|&b| b != 0) {
        return Err(BeamIoError::CorruptHeader("beam id not NUL-padded".into()));
    }
    let beam_id = std::str::from_utf8(&id_raw[..id_end])
        .map_err(|_| BeamIoError::CorruptHeader("beam id is not UTF-8".into()))?
        .to_string();
    let ra_udeg = i64::from_le_bytes(take(8).try_into().unwrap());
    let dec_udeg = i64::from_le_bytes(take(8).try_into().unwrap());
    let params = ObservationParams {
        n_channels,
        channel_bw_millihz,
        f_highest_millihz,
        t_samp_ns,
        n_samples,
        bits_per_sample,
        beam_id,
        ra_udeg,
        dec_udeg,
    };
    params
        .validate()
        .map_err(|e| BeamIoError::CorruptHeader(e.to_string()))?;
    Ok(params)
}

pub fn write_block(block: &FilterbankBlock, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&block.to_bytes())?;
    f.sync_all()?;
    Ok(())
}

pub fn read_block(path: impl AsRef<Path>) -> Result<FilterbankBlock> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    FilterbankBlock::from_bytes(&bytes)
}

/// A periodic pulsar to inject into synthetic data.
#[derive(Debug, Clone, PartialEq)]
pub struct PulsarSpec {
    pub period_ms: f64,
    pub dm: f64,
    pub duty_cycle: f64,
    /// Probability excess added to on-pulse samples.
    pub amplitude: f64,
}

impl PulsarSpec {
    pub fn new(period_ms: f64, dm: f64) -> Self {
        PulsarSpec {
            period_ms,
            dm,
            duty_cycle: 0.05,
            amplitude: 0.05,
        }
    }

    pub fn with_duty(mut self, duty: f64) -> Self {
        self.duty_cycle = duty;
        self
    }

    pub fn with_amplitude(mut self, amp: f64) -> Self {
        self.amplitude = amp;
        self
    }
}

/// Generate 1-bit Bernoulli(0.5) noise with an optional dispersed pulsar.
///
/// A sample is on-pulse when its start time minus the channel's dispersion
/// delay (relative to the highest channel) falls in the first `duty_cycle`
/// of a period; on-pulse samples are Bernoulli(0.5 + amplitude).
pub fn synthesize_beam(
    params: &ObservationParams,
    pulsar: Option<&PulsarSpec>,
    seed: u64,
) -> Result<FilterbankBlock> {
    params.validate()?;
    if params.bits_per_sample != 1 {
        return Err(BeamIoError::InvalidParams(
            "synthesis produces 1-bit data".into(),
        ));
    }
    let t_samp_ms = params.t_samp_ms();
    if let Some(p) = pulsar {
        if !(p.period_ms >= 2.0 * t_samp_ms) {
            return Err(BeamIoError::InvalidParams(format!(
                "period {} ms is below the Nyquist limit of {} ms",
                p.period_ms,
                2.0 * t_samp_ms
            )));
        }
        if !(p.duty_cycle > 0.0 && p.duty_cycle < 1.0) {
            return Err(BeamIoError::InvalidParams("duty cycle must be in (0, 1)".into()));
        }
        if !(p.dm >= 0.0) {
            return Err(BeamIoError::InvalidParams("dm must be non-negative".into()));
        }
        if !(p.amplitude >= 0.0) || p.amplitude + 0.5 > 1.0 {
            return Err(BeamIoError::InvalidParams(format!(
                "amplitude {} pushes the on-pulse probability outside [0.5, 1]",
                p.amplitude
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0u8; params.payload_bytes()];
    rng.fill_bytes(&mut data);
    let mut block = FilterbankBlock {
        params: params.clone(),
        data,
    };
    clear_padding(&mut block);

    if let Some(p) = pulsar {
        let ns = block.n_samples();
        let f_ref = params.f_highest_mhz();
        let on_prob = 0.5 + p.amplitude;
        let width_ms = p.duty_cycle * p.period_ms;
        for c in 0..block.n_channels() {
            let delay_ms =
                dedisp::dm_delay(p.dm, params.channel_freq_mhz(c as u32), f_ref)? * 1e3;
            // Pulse k occupies [k P + delay, k P + delay + width).
            let mut k = (-(delay_ms + width_ms) / p.period_ms).floor() as i64;
            loop {
                let start = k as f64 * p.period_ms + delay_ms;
                let end = start + width_ms;
                let s0 = (start / t_samp_ms).ceil().max(0.0);
                if s0 >= ns as f64 {
                    break;
                }
                let s1 = (end / t_samp_ms).ceil().clamp(0.0, ns as f64);
                for s in s0 as usize..s1 as usize {
                    let bit = rng.gen::<f64>() < on_prob;
                    block.set_sample(s, c, bit as u8);
                }
                k += 1;
            }
        }
    }
    Ok(block)
}

fn clear_padding(block: &mut FilterbankBlock) {
    if block.params.bits_per_sample != 1 {
        return;
    }
    let nch = block.n_channels();
    let rem = nch % 8;
    if rem == 0 {
        return;
    }
    let bps = block.params.bytes_per_slice();
    let mask = !(0xFFu8 >> rem);
    for slice in block.data.chunks_exact_mut(bps) {
        slice[bps - 1] &= mask;
    }
}

/// Sum contiguous groups of `chan_factor` channels and `time_factor`
/// samples of a 1-bit block into an 8-bit block.
pub fn decimate(
    block: &FilterbankBlock,
    chan_factor: usize,
    time_factor: usize,
) -> Result<FilterbankBlock> {
    let p = &block.params;
    p.validate()?;
    if p.bits_per_sample != 1 {
        return Err(BeamIoError::InvalidParams(
            "decimation expects 1-bit input".into(),
        ));
    }
    if chan_factor == 0 || time_factor == 0 {
        return Err(BeamIoError::NotDivisible("factors must be positive".into()));
    }
    let nch = p.n_channels as usize;
    let ns = p.n_samples as usize;
    if nch % chan_factor != 0 {
        return Err(BeamIoError::NotDivisible(format!(
            "{nch} channels not divisible by {chan_factor}"
        )));
    }
    if ns % time_factor != 0 {
        return Err(BeamIoError::NotDivisible(format!(
            "{ns} samples not divisible by {time_factor}"
        )));
    }
    if chan_factor * time_factor > 255 {
        return Err(BeamIoError::Overflow(chan_factor * time_factor));
    }

    let out_nch = nch / chan_factor;
    let out_ns = ns / time_factor;
    // Centre of a group is the mean of its member channel centres.
    let f_top = p.f_highest_millihz * 2 - p.channel_bw_millihz * (chan_factor as u64 - 1);
    let out_params = ObservationParams {
        n_channels: out_nch as u32,
        channel_bw_millihz: p.channel_bw_millihz * chan_factor as u64,
        f_highest_millihz: f_top / 2,
        t_samp_ns: p.t_samp_ns * time_factor as u64,
        n_samples: out_ns as u64,
        bits_per_sample: 8,
        beam_id: p.beam_id.clone(),
        ra_udeg: p.ra_udeg,
        dec_udeg: p.dec_udeg,
    };

    let bps = p.bytes_per_slice();
    let mut out = vec![0u8; out_nch * out_ns];
    let mut counts = vec![0u8; nch];
    for (t, out_slice) in out.chunks_exact_mut(out_nch).enumerate() {
        counts.iter_mut().for_each(|x| *x = 0);
        let rows = &block.data[t * time_factor * bps..(t + 1) * time_factor * bps];
        for row in rows.chunks_exact(bps) {
            for (c8, &byte) in row.iter().enumerate() {
                let base = c8 * 8;
                let n = (nch - base).min(8);
                for (j, cnt) in counts[base..base + n].iter_mut().enumerate() {
                    *cnt += (byte >> (7 - j)) & 1;
                }
            }
        }
        for (o, group) in out_slice.iter_mut().zip(counts.chunks_exact(chan_factor)) {
            *o = group.iter().sum();
        }
    }
    FilterbankBlock::new(out_params, out)
}

/// Canonicalise a block into the normalised form consumed by the search
/// stages: header fields re-validated, beam id trimmed, padding bits
/// cleared and the payload re-encoded in the fixed little-endian layout.
pub fn convert_to_timeseries_format(block: &FilterbankBlock) -> Result<FilterbankBlock> {
    let mut params = block.params.clone();
    params.beam_id = params.beam_id.trim().to_string();
    params
        .validate()
        .map_err(|e| BeamIoError::CorruptHeader(e.to_string()))?;
    if block.data.len() != params.payload_bytes() {
        return Err(BeamIoError::CorruptHeader(
            "payload length inconsistent with header".into(),
        ));
    }
    let mut out = FilterbankBlock {
        params,
        data: block.data.clone(),
    };
    clear_padding(&mut out);
    // Round-trip through the wire form so any header inconsistency surfaces here.
    FilterbankBlock::from_bytes(&out.to_bytes())
}

/// Convert directly from a serialized block.
pub fn convert_bytes(bytes: &[u8]) -> Result<FilterbankBlock> {
    convert_to_timeseries_format(&FilterbankBlock::from_bytes(bytes)?)
}

/// Observation metadata for one multibeam pointing.
#[derive(Debug, Clone, PartialEq)]
pub struct PointingMeta {
    pub pointing_id: String,
    pub source_name: String,
    pub observation_date: String,
    pub beams: Vec<BeamPosition>,
    pub bytes_per_beam: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamPosition {
    pub beam_id: String,
    pub ra_deg: f64,
    pub dec_deg: f64,
    pub l_deg: f64,
    pub b_deg: f64,
}

impl PointingMeta {
    pub fn validate(&self) -> Result<()> {
        if self.beams.len() != BEAMS_PER_POINTING {
            return Err(BeamIoError::InvalidParams(format!(
                "pointing {} has {} beams, expected {BEAMS_PER_POINTING}",
                self.pointing_id,
                self.beams.len()
            )));
        }
        let mut ids: Vec<&str> = self.beams.iter().map(|b| b.beam_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(BeamIoError::InvalidParams(format!(
                "duplicate beam id in pointing {}",
                self.pointing_id
            )));
        }
        Ok(())
    }

    pub fn payload_bytes(&self) -> u64 {
        self.bytes_per_beam * self.beams.len() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(nch: u32, ns: u64, bits: u8) -> ObservationParams {
        ObservationParams::new(nch, 3.0, 1516.5, 0.125, ns, bits).unwrap()
    }

    #[test]
    fn noise_mean_is_half() {
        let p = small(96, 1 << 14, 1);
        let b = synthesize_beam(&p, None, 42).unwrap();
        let ones: u64 = b.data.iter().map(|x| x.count_ones() as u64).sum();
        let mean = ones as f64 / (96.0 * (1 << 14) as f64);
        assert!((0.498..=0.502).contains(&mean), "mean {mean}");
    }

    #[test]
    fn synthesis_is_deterministic() {
        let p = small(13, 4096, 1);
        let psr = PulsarSpec::new(10.0, 30.0).with_amplitude(0.3);
        let a = synthesize_beam(&p, Some(&psr), 7).unwrap();
        let b = synthesize_beam(&p, Some(&psr), 7).unwrap();
        assert_eq!(a, b);
        let c = synthesize_beam(&p, Some(&psr), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthesis_rejects_bad_pulsars() {
        let p = small(8, 1024, 1);
        let fast = PulsarSpec::new(0.2, 0.0);
        assert!(matches!(
            synthesize_beam(&p, Some(&fast), 1),
            Err(BeamIoError::InvalidParams(_))
        ));
        let loud = PulsarSpec::new(10.0, 0.0).with_amplitude(0.6);
        assert!(matches!(
            synthesize_beam(&p, Some(&loud), 1),
            Err(BeamIoError::InvalidParams(_))
        ));
    }

    #[test]
    fn decimate_survey_geometry() {
        let p = small(96, 1024, 1);
        let out = decimate(&FilterbankBlock::zeros(p).unwrap(), 4, 16).unwrap();
        assert_eq!(out.params.n_channels, 24);
        assert!((out.params.channel_bw_mhz() - 12.0).abs() < 1e-12);
        assert!((out.params.t_samp_ms() - 2.0).abs() < 1e-12);
        assert_eq!(out.params.n_samples, 64);
        assert!(out.data.iter().all(|&v| v == 0));
        // Group centre: mean of 1516.5, 1513.5, 1510.5, 1507.5.
        assert!((out.params.f_highest_mhz() - 1512.0).abs() < 1e-9);
    }

    #[test]
    fn decimate_all_ones() {
        let p = small(96, 64, 1);
        let mut b = FilterbankBlock::zeros(p).unwrap();
        b.data.iter_mut().for_each(|x| *x = 0xFF);
        let out = decimate(&b, 4, 16).unwrap();
        assert!(out.data.iter().all(|&v| v == 64));
    }

    #[test]
    fn decimate_errors() {
        let b = FilterbankBlock::zeros(small(10, 64, 1)).unwrap();
        assert!(matches!(decimate(&b, 4, 16), Err(BeamIoError::NotDivisible(_))));
        let b = FilterbankBlock::zeros(small(8, 60, 1)).unwrap();
        assert!(matches!(decimate(&b, 4, 16), Err(BeamIoError::NotDivisible(_))));
        let b = FilterbankBlock::zeros(small(32, 64, 1)).unwrap();
        assert!(matches!(decimate(&b, 32, 16), Err(BeamIoError::Overflow(512))));
    }

    #[test]
    fn beam_sizes() {
        let p = ObservationParams::survey(16_233_333);
        let size = raw_beam_size_bytes(&p).unwrap();
        assert_eq!(size, 12 * 16_233_333 + HEADER_LEN as u64);
        assert!(((size as f64) / 1e6 - 194.8).abs() < 0.01);
        let p = small(8, 10, 8);
        assert_eq!(raw_beam_size_with_header(&p, 64).unwrap(), 144);
        assert!(ObservationParams::new(0, 3.0, 1516.5, 0.125, 10, 1).is_err());
    }

    #[test]
    fn header_len_matches_layout() {
        let b = FilterbankBlock::zeros(small(8, 1, 8)).unwrap();
        assert_eq!(b.to_bytes().len(), HEADER_LEN + 8);
        assert_eq!(HEADER_LEN, 123);
    }

    #[test]
    fn truncated_and_inconsistent_payloads() {
        let p = small(16, 32, 1).with_beam_id("B01");
        let b = synthesize_beam(&p, None, 3).unwrap();
        let bytes = b.to_bytes();
        let err = FilterbankBlock::from_bytes(&bytes[..bytes.len() - 5]).unwrap_err();
        assert!(matches!(err, BeamIoError::TruncatedData { .. }));

        let mut eight = bytes[..HEADER_LEN].to_vec();
        eight.extend(vec![0u8; 16 * 32]);
        let err = FilterbankBlock::from_bytes(&eight).unwrap_err();
        assert!(matches!(err, BeamIoError::CorruptHeader(_)));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(convert_bytes(&bad), Err(BeamIoError::CorruptHeader(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.fil");
        let p = small(12, 100, 1).with_beam_id("P001-B07").with_position(123.456789, -45.5);
        let b = synthesize_beam(&p, None, 11).unwrap();
        write_block(&b, &path).unwrap();
        assert_eq!(read_block(&path).unwrap(), b);
        assert!(matches!(
            read_block(dir.path().join("missing")),
            Err(BeamIoError::Io(_))
        ));
    }

    #[test]
    fn convert_is_idempotent_and_clears_padding() {
        let p = small(12, 50, 1).with_beam_id(" x ");
        let mut b = synthesize_beam(&p, None, 5).unwrap();
        b.data[1] |= 0x0F; // set padding bits of the first slice
        let once = convert_to_timeseries_format(&b).unwrap();
        assert_eq!(once.params.beam_id, "x");
        assert_eq!(once.data[1] & 0x0F, 0);
        assert_eq!(convert_to_timeseries_format(&once).unwrap(), once);
        assert_eq!(once.channel_sum(), b.channel_sum());
    }

    #[test]
    fn pointing_needs_thirteen_unique_beams() {
        let beam = |i: usize| BeamPosition {
            beam_id: format!("B{i:02}"),
            ra_deg: 0.0,
            dec_deg: 0.0,
            l_deg: 0.0,
            b_deg: 0.0,
        };
        let mut p = PointingMeta {
            pointing_id: "P1".into(),
            source_name: "S".into(),
            observation_date: "2002-01-01".into(),
            beams: (1..=13).map(beam).collect(),
            bytes_per_beam: 10,
        };
        p.validate().unwrap();
        p.beams[3] = beam(1);
        assert!(p.validate().is_err());
        p.beams.pop();
        assert!(p.validate().is_err());
    }
}
