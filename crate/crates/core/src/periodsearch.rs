//! Fourier-domain periodicity search over DM trials.
//!
//! Each trial is dedispersed, mean-subtracted, zero-padded to `n_fft` and
//! transformed; known interference lines are masked, the spectrum is
//! normalised by a running median, and bins above the significance
//! threshold become candidates. Candidates from all trials are then merged
//! and ranked (`best`).

use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::beamio::FilterbankBlock;
use crate::dedisp::{DedispError, Dedisperser, DmTrialGrid, TimeSeries};

pub const DEFAULT_SNR_THRESHOLD: f64 = 8.0;
pub const DEFAULT_MAX_CANDIDATES: usize = 50;
pub const MEDIAN_WINDOW: usize = 1001;
/// Merge radius in Fourier bins and DM trial steps.
pub const MERGE_BINS: u64 = 1;
pub const MERGE_DM_STEPS: usize = 2;
/// Unmasked neighbours taken on each side of a masked run.
const BIRDIE_NEIGHBOURS: usize = 50;
/// Ratios above this multiple of the median ratio are left out of the
/// noise-mean estimate used to scale normalised spectra.
const SCALE_CLIP: f64 = 20.0;
const MAD_TO_SIGMA: f64 = 1.482_602_218_505_602;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("BadLength: FFT length {0} must be a power of two >= 2")]
    BadLength(usize),
    #[error("BadThreshold: {0}")]
    BadThreshold(f64),
    #[error(transparent)]
    Dedisp(#[from] DedispError),
}

impl SearchError {
    pub fn kind(&self) -> &'static str {
        match self {
            SearchError::BadLength(_) => "BadLength",
            SearchError::BadThreshold(_) => "BadThreshold",
            SearchError::Dedisp(DedispError::ShiftExceedsData { .. }) => "ShiftExceedsData",
            SearchError::Dedisp(DedispError::BadRange(_)) => "BadRange",
            SearchError::Dedisp(_) => "DedispError",
        }
    }
}

/// One-sided power spectrum; `powers[i]` is Fourier bin `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    pub powers: Vec<f64>,
    pub freq_resolution_hz: f64,
    pub dm: f64,
    pub n_fft: usize,
}

impl PowerSpectrum {
    pub fn bin_freq_hz(&self, index: usize) -> f64 {
        (index + 1) as f64 * self.freq_resolution_hz
    }

    /// Argmax with ties going to the lower index.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &p) in self.powers.iter().enumerate() {
            if best.is_none_or(|b| p > self.powers[b]) {
                best = Some(i);
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Birdie {
    pub center_hz: f64,
    pub half_width_hz: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BirdieList {
    pub entries: Vec<Birdie>,
}

impl BirdieList {
    pub fn new(entries: Vec<Birdie>) -> Result<Self, String> {
        if let Some(b) = entries.iter().find(|b| !(b.half_width_hz > 0.0)) {
            return Err(format!("birdie at {} Hz has non-positive width", b.center_hz));
        }
        Ok(BirdieList { entries })
    }

    /// Parse `center_hz half_width_hz` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(c)), Some(Ok(w)), None) => entries.push(Birdie {
                    center_hz: c,
                    half_width_hz: w,
                }),
                _ => return Err(format!("birdie line {}: expected `center half_width`", n + 1)),
            }
        }
        BirdieList::new(entries)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Bins of `spec` (output indices) covered by any birdie.
    fn mask(&self, spec: &PowerSpectrum) -> Vec<bool> {
        let mut mask = vec![false; spec.powers.len()];
        for b in &self.entries {
            let lo = b.center_hz - b.half_width_hz;
            let hi = b.center_hz + b.half_width_hz;
            let first = (lo / spec.freq_resolution_hz).ceil().max(1.0) as usize;
            let last = (hi / spec.freq_resolution_hz).floor();
            if last < 1.0 {
                continue;
            }
            let last = (last as usize).min(spec.powers.len());
            for k in first..=last {
                mask[k - 1] = true;
            }
        }
        mask
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub period_ms: f64,
    pub freq_hz: f64,
    pub dm: f64,
    pub dm_index: usize,
    pub snr: f64,
    pub fourier_bin: u64,
}

/// A reusable forward transform of one length.
#[derive(Clone)]
pub struct SpectrumPlan {
    n_fft: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl SpectrumPlan {
    pub fn new(n_fft: usize) -> Result<Self, SearchError> {
        if n_fft < 2 || !n_fft.is_power_of_two() {
            return Err(SearchError::BadLength(n_fft));
        }
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(SpectrumPlan { n_fft, fft })
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn power(&self, ts: &TimeSeries) -> PowerSpectrum {
        let n = self.n_fft;
        let used = &ts.values[..ts.values.len().min(n)];
        let mean = if used.is_empty() {
            0.0
        } else {
            used.iter().map(|&v| v as f64).sum::<f64>() / used.len() as f64
        };
        let mut buf: Vec<Complex<f64>> = Vec::with_capacity(n);
        buf.extend(used.iter().map(|&v| Complex::new(v as f64 - mean, 0.0)));
        buf.resize(n, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        let powers = buf[1..=n / 2].iter().map(|c| c.norm_sqr()).collect();
        PowerSpectrum {
            powers,
            freq_resolution_hz: 1000.0 / (n as f64 * ts.t_samp_ms),
            dm: ts.dm,
            n_fft: n,
        }
    }
}

/// `|X_k|^2` for k = 1..=n_fft/2 of the mean-subtracted, zero-padded or
/// truncated series.
pub fn fft_power(ts: &TimeSeries, n_fft: usize) -> Result<PowerSpectrum, SearchError> {
    Ok(SpectrumPlan::new(n_fft)?.power(ts))
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    median_of_sorted(&v)
}

/// Replace bins inside any birdie with the median of the nearest unmasked
/// bins on either side of each masked run.
pub fn apply_birdie_mask(spec: &PowerSpectrum, birdies: &BirdieList) -> PowerSpectrum {
    let mut out = spec.clone();
    if birdies.is_empty() {
        return out;
    }
    let mask = birdies.mask(spec);
    let n = mask.len();
    let mut i = 0;
    while i < n {
        if !mask[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && mask[i] {
            i += 1;
        }
        let mut local = Vec::with_capacity(2 * BIRDIE_NEIGHBOURS);
        local.extend(
            (0..start)
                .rev()
                .filter(|&j| !mask[j])
                .take(BIRDIE_NEIGHBOURS)
                .map(|j| spec.powers[j]),
        );
        local.extend(
            (i..n)
                .filter(|&j| !mask[j])
                .take(BIRDIE_NEIGHBOURS)
                .map(|j| spec.powers[j]),
        );
        let fill = median(&local);
        out.powers[start..i].iter_mut().for_each(|p| *p = fill);
    }
    out
}

/// Centred running median; the window shrinks at the spectrum edges.
pub fn running_median(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let half = window / 2;
    let mut sorted: Vec<f64> = Vec::with_capacity(window + 1);
    let insert = |sorted: &mut Vec<f64>, v: f64| {
        let pos = sorted.partition_point(|x| x.total_cmp(&v).is_lt());
        sorted.insert(pos, v);
    };
    for &v in &values[..n.min(half + 1)] {
        insert(&mut sorted, v);
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(median_of_sorted(&sorted));
        if i + half + 1 < n {
            insert(&mut sorted, values[i + half + 1]);
        }
        if i >= half {
            let v = values[i - half];
            let pos = sorted.partition_point(|x| x.total_cmp(&v).is_lt());
            sorted.remove(pos);
        }
    }
    out
}

/// Divide by the running median and rescale so that pure noise has unit mean.
pub fn normalize_spectrum(spec: &PowerSpectrum) -> PowerSpectrum {
    let med = running_median(&spec.powers, MEDIAN_WINDOW);
    let mut ratios: Vec<f64> = spec
        .powers
        .iter()
        .zip(&med)
        .map(|(&p, &m)| if m > 0.0 { p / m } else if p > 0.0 { f64::INFINITY } else { 1.0 })
        .collect();
    let centre = median(&ratios);
    let clip = SCALE_CLIP * centre.max(f64::MIN_POSITIVE);
    let (sum, count) = ratios
        .iter()
        .filter(|&&r| r <= clip)
        .fold((0.0, 0usize), |(s, c), &r| (s + r, c + 1));
    if count > 0 && sum > 0.0 {
        let scale = count as f64 / sum;
        ratios.iter_mut().for_each(|r| *r *= scale);
    }
    PowerSpectrum {
        powers: ratios,
        ..spec.clone()
    }
}

/// Robust (MAD-based) standard deviation of normalised powers.
pub fn noise_sigma(normalized: &PowerSpectrum) -> f64 {
    let m = median(&normalized.powers);
    let dev: Vec<f64> = normalized.powers.iter().map(|p| (p - m).abs()).collect();
    MAD_TO_SIGMA * median(&dev)
}

/// Significance of a normalised power: (power - 1) / sigma.
pub fn snr_of(power: f64, sigma: f64) -> f64 {
    ((power - 1.0) / sigma.max(1e-12)).max(0.0)
}

#[derive(Debug, Clone)]
pub struct SearchParams {
    pub snr_threshold: f64,
    pub max_candidates: usize,
    /// FFT length; defaults to the next power of two above the block length.
    pub n_fft: Option<usize>,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            snr_threshold: DEFAULT_SNR_THRESHOLD,
            max_candidates: DEFAULT_MAX_CANDIDATES,
            n_fft: None,
        }
    }
}

impl SearchParams {
    pub fn fft_len_for(&self, block: &FilterbankBlock) -> usize {
        self.n_fft
            .unwrap_or_else(|| block.n_samples().next_power_of_two().max(2))
    }
}

/// Candidates above threshold from one normalised spectrum.
pub fn extract_candidates(
    normalized: &PowerSpectrum,
    dm_index: usize,
    t_samp_ms: f64,
    threshold: f64,
) -> Vec<Candidate> {
    let sigma = noise_sigma(normalized);
    let n = normalized.n_fft as f64;
    normalized
        .powers
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| {
            let snr = snr_of(p, sigma);
            (snr >= threshold).then(|| {
                let k = (i + 1) as u64;
                Candidate {
                    // n * t / k is exact at the Nyquist bin (k = n/2 -> 2 t).
                    period_ms: n * t_samp_ms / k as f64,
                    freq_hz: normalized.bin_freq_hz(i),
                    dm: normalized.dm,
                    dm_index,
                    snr,
                    fourier_bin: k,
                }
            })
        })
        .collect()
}

fn validate_threshold(t: f64) -> Result<(), SearchError> {
    if t > 0.0 {
        Ok(())
    } else {
        Err(SearchError::BadThreshold(t))
    }
}

/// Dedisperse and search every trial of `grid`. `progress` is called once
/// per completed trial, possibly from several threads.
pub fn hunt(
    block: &FilterbankBlock,
    grid: &DmTrialGrid,
    birdies: &BirdieList,
    params: &SearchParams,
    progress: &(dyn Fn() + Sync),
) -> Result<Vec<Candidate>, SearchError> {
    validate_threshold(params.snr_threshold)?;
    if grid.is_empty() {
        return Ok(Vec::new());
    }
    let plan = SpectrumPlan::new(params.fft_len_for(block))?;
    let dd = Dedisperser::new(block);
    let t_samp_ms = block.params.t_samp_ms();
    let per_trial: Vec<Vec<Candidate>> = grid
        .dm_values
        .par_iter()
        .enumerate()
        .map(|(idx, &dm)| {
            let ts = dd.dedisperse(dm)?;
            let spec = apply_birdie_mask(&plan.power(&ts), birdies);
            let norm = normalize_spectrum(&spec);
            let c = extract_candidates(&norm, idx, t_samp_ms, params.snr_threshold);
            progress();
            Ok(c)
        })
        .collect::<Result<_, SearchError>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

fn rank(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.snr
        .total_cmp(&a.snr)
        .then(a.fourier_bin.cmp(&b.fourier_bin))
        .then(a.dm_index.cmp(&b.dm_index))
}

/// Merge candidates lying within one Fourier bin and two DM steps of a
/// stronger one, rank by significance and keep at most `max_candidates`.
pub fn best(mut candidates: Vec<Candidate>, max_candidates: usize) -> Vec<Candidate> {
    candidates.sort_by(rank);
    let mut kept: Vec<Candidate> = Vec::new();
    let mut occupied: HashSet<(u64, usize)> = HashSet::new();
    for c in candidates {
        if kept.len() >= max_candidates {
            break;
        }
        let near = (c.fourier_bin.saturating_sub(MERGE_BINS)..=c.fourier_bin + MERGE_BINS)
            .any(|k| {
                (c.dm_index.saturating_sub(MERGE_DM_STEPS)..=c.dm_index + MERGE_DM_STEPS)
                    .any(|d| occupied.contains(&(k, d)))
            });
        if !near {
            occupied.insert((c.fourier_bin, c.dm_index));
            kept.push(c);
        }
    }
    kept
}

pub fn search_all_dms(
    block: &FilterbankBlock,
    grid: &DmTrialGrid,
    birdies: &BirdieList,
    snr_threshold: f64,
    max_candidates: usize,
) -> Result<Vec<Candidate>, SearchError> {
    let params = SearchParams {
        snr_threshold,
        max_candidates,
        n_fft: None,
    };
    let all = hunt(block, grid, birdies, &params, &|| {})?;
    Ok(best(all, max_candidates))
}

pub const CANDIDATE_HEADER: &str = "# snr\tperiod_ms\tdm\tfreq_hz\tbin";

/// Tab-separated candidate file, strongest first.
pub fn format_candidates(candidates: &[Candidate]) -> String {
    let mut out = String::new();
    out.push_str(CANDIDATE_HEADER);
    out.push('\n');
    for c in candidates {
        let _ = writeln!(
            out,
            "{:.4}\t{:.6}\t{:.4}\t{:.6}\t{}",
            c.snr, c.period_ms, c.dm, c.freq_hz, c.fourier_bin
        );
    }
    out
}

/// Parse a candidate file written by [`format_candidates`]. `dm_index` is
/// not stored in the file and is returned as 0.
pub fn parse_candidates(text: &str) -> Result<Vec<Candidate>, String> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 5 {
                return Err(format!("candidate line {}: expected 5 fields", n + 1));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", n + 1));
            Ok(Candidate {
                snr: num(f[0])?,
                period_ms: num(f[1])?,
                dm: num(f[2])?,
                dm_index: 0,
                freq_hz: num(f[3])?,
                fourier_bin: f[4].parse().map_err(|e| format!("line {}: {e}", n + 1))?,
            })
        })
        .collect()
}
