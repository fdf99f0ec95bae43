//! C ABI for beamforge.
//!
//! Every function returns a `BfStatus`. On failure a message is kept per
//! thread and can be read with `bf_last_error`. Handles are opaque and must
//! be released with their `_free` function. No panic crosses the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use beamforge::archive::{self, MediaSpec};
use beamforge::beamio::{self, BeamIoError, FilterbankBlock, ObservationParams, PulsarSpec};
use beamforge::dedisp::{self, DmTrialGrid};
use beamforge::periodsearch::{self, BirdieList, Candidate, SearchParams};
use beamforge::sensitivity::{self, SensitivityParams};
use beamforge::workqueue::{BeamStatus, QueueError, SharedDir};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    NoWork = 5,
    LockTimeout = 6,
    NotClaimant = 7,
    BufferTooSmall = 8,
    Panic = 9,
    AlreadyClaiming = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let mut bytes = msg.into().into_bytes();
    bytes.retain(|&b| b != 0);
    let c = CString::new(bytes).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(BfStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn fail<T>(status: BfStatus, msg: impl Into<String>) -> FfiResult<T> {
    Err(Failure(status, msg.into()))
}

impl From<BeamIoError> for Failure {
    fn from(e: BeamIoError) -> Self {
        let status = match e {
            BeamIoError::Io(_) => BfStatus::Io,
            BeamIoError::CorruptHeader(_) | BeamIoError::TruncatedData { .. } => BfStatus::Format,
            _ => BfStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<QueueError> for Failure {
    fn from(e: QueueError) -> Self {
        let status = match e {
            QueueError::Io(_) | QueueError::NoDatabase(_) => BfStatus::Io,
            QueueError::NoWork => BfStatus::NoWork,
            QueueError::LockTimeout { .. } => BfStatus::LockTimeout,
            QueueError::NotClaimant { .. } => BfStatus::NotClaimant,
            QueueError::AlreadyClaiming { .. } => BfStatus::AlreadyClaiming,
            QueueError::Parse(_) => BfStatus::Format,
            _ => BfStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(e: impl ToString) -> Failure {
    Failure(BfStatus::InvalidArgument, e.to_string())
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> BfStatus {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_error();
            BfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            BfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(BfStatus::NullPointer, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| Failure(BfStatus::NullPointer, format!("{name} is null")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .ok_or_else(|| Failure(BfStatus::NullPointer, format!("{name} is null")))
}

/// Copy `s` and a terminating NUL into `buf` of `len` bytes.
unsafe fn write_str(s: &str, buf: *mut c_char, len: usize) -> FfiResult<()> {
    if buf.is_null() {
        return fail(BfStatus::NullPointer, "buffer is null");
    }
    if s.len() + 1 > len {
        return fail(
            BfStatus::BufferTooSmall,
            format!("need {} bytes, buffer holds {len}", s.len() + 1),
        );
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn bf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, NUL-terminated name of a status code.
#[no_mangle]
pub extern "C" fn bf_status_name(status: BfStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        BfStatus::Ok => b"OK\0",
        BfStatus::NullPointer => b"NULL_POINTER\0",
        BfStatus::InvalidArgument => b"INVALID_ARGUMENT\0",
        BfStatus::Io => b"IO\0",
        BfStatus::Format => b"FORMAT\0",
        BfStatus::NoWork => b"NO_WORK\0",
        BfStatus::LockTimeout => b"LOCK_TIMEOUT\0",
        BfStatus::NotClaimant => b"NOT_CLAIMANT\0",
        BfStatus::BufferTooSmall => b"BUFFER_TOO_SMALL\0",
        BfStatus::Panic => b"PANIC\0",
        BfStatus::AlreadyClaiming => b"ALREADY_CLAIMING\0",
    };
    s.as_ptr().cast()
}

// ---------------------------------------------------------------- blocks

/// A filterbank block.
pub struct BfBlock {
    inner: FilterbankBlock,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BfObservation {
    pub n_channels: u32,
    pub channel_bw_mhz: f64,
    /// Centre frequency of channel 0, the highest channel.
    pub f_highest_mhz: f64,
    pub t_samp_ms: f64,
    pub n_samples: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BfPulsar {
    /// A period of 0 means no pulsar.
    pub period_ms: f64,
    pub dm: f64,
    pub duty_cycle: f64,
    pub amplitude: f64,
}

fn boxed(b: FilterbankBlock) -> *mut BfBlock {
    Box::into_raw(Box::new(BfBlock { inner: b }))
}

/// Synthesize 1-bit noise, with a pulsar unless `pulsar` is NULL or has period 0.
///
/// # Safety
/// `obs` must be valid; `pulsar` may be NULL; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bf_block_synthesize(
    obs: *const BfObservation,
    pulsar: *const BfPulsar,
    seed: u64,
    out: *mut *mut BfBlock,
) -> BfStatus {
    guard(|| {
        let o = ref_arg(obs, "obs")?;
        let out = out_arg(out, "out")?;
        let params = ObservationParams::new(
            o.n_channels,
            o.channel_bw_mhz,
            o.f_highest_mhz,
            o.t_samp_ms,
            o.n_samples,
            1,
        )?;
        let psr = pulsar.as_ref().filter(|p| p.period_ms != 0.0).map(|p| {
            PulsarSpec::new(p.period_ms, p.dm)
                .with_duty(p.duty_cycle)
                .with_amplitude(p.amplitude)
        });
        *out = boxed(beamio::synthesize_beam(&params, psr.as_ref(), seed)?);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bf_block_read(path: *const c_char, out: *mut *mut BfBlock) -> BfStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = boxed(beamio::read_block(path)?);
        Ok(())
    })
}

/// # Safety
/// `block` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bf_block_write(block: *const BfBlock, path: *const c_char) -> BfStatus {
    guard(|| {
        let b = ref_arg(block, "block")?;
        let path = str_arg(path, "path")?;
        beamio::write_block(&b.inner, path)?;
        Ok(())
    })
}

/// # Safety
/// `block` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bf_block_decimate(
    block: *const BfBlock,
    chan_factor: usize,
    time_factor: usize,
    out: *mut *mut BfBlock,
) -> BfStatus {
    guard(|| {
        let b = ref_arg(block, "block")?;
        let out = out_arg(out, "out")?;
        *out = boxed(beamio::decimate(&b.inner, chan_factor, time_factor)?);
        Ok(())
    })
}

/// # Safety
/// `block` must come from this library; `obs` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bf_block_info(block: *const BfBlock, obs: *mut BfObservation) -> BfStatus {
    guard(|| {
        let p = &ref_arg(block, "block")?.inner.params;
        *out_arg(obs, "obs")? = BfObservation {
            n_channels: p.n_channels,
            channel_bw_mhz: p.channel_bw_mhz(),
            f_highest_mhz: p.f_highest_mhz(),
            t_samp_ms: p.t_samp_ms(),
            n_samples: p.n_samples,
        };
        Ok(())
    })
}

/// # Safety
/// `block` must come from this library or be NULL; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn bf_block_free(block: *mut BfBlock) {
    if !block.is_null() {
        drop(Box::from_raw(block));
    }
}

// ------------------------------------------------------------ candidates

/// Ranked search candidates.
pub struct BfCandidates {
    inner: Vec<Candidate>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BfCandidate {
    pub snr: f64,
    pub period_ms: f64,
    pub freq_hz: f64,
    pub dm: f64,
    pub fourier_bin: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BfSearchOptions {
    pub n_trials: usize,
    pub dm_min: f64,
    pub dm_max: f64,
    pub snr_threshold: f64,
    pub max_candidates: usize,
}

/// Defaults: 450 trials over DM 0 to 700, S/N 8, 50 candidates.
#[no_mangle]
pub extern "C" fn bf_search_options_default() -> BfSearchOptions {
    BfSearchOptions {
        n_trials: dedisp::DEFAULT_TRIALS,
        dm_min: dedisp::DEFAULT_DM_MIN,
        dm_max: dedisp::DEFAULT_DM_MAX,
        snr_threshold: periodsearch::DEFAULT_SNR_THRESHOLD,
        max_candidates: periodsearch::DEFAULT_MAX_CANDIDATES,
    }
}

/// Dedisperse over the DM grid, search every trial and keep the best.
///
/// # Safety
/// `block` must come from this library; `opts` valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bf_search(
    block: *const BfBlock,
    opts: *const BfSearchOptions,
    out: *mut *mut BfCandidates,
) -> BfStatus {
    guard(|| {
        let b = ref_arg(block, "block")?;
        let o = ref_arg(opts, "opts")?;
        let out = out_arg(out, "out")?;
        let grid = if o.n_trials == 1 {
            DmTrialGrid::from_values(vec![o.dm_min])
        } else {
            dedisp::make_dm_grid(o.n_trials, o.dm_min, o.dm_max)
        }
        .map_err(invalid)?;
        let params = SearchParams {
            snr_threshold: o.snr_threshold,
            max_candidates: o.max_candidates,
            n_fft: None,
        };
        let all = periodsearch::hunt(&b.inner, &grid, &BirdieList::default(), &params, &|| {})
            .map_err(invalid)?;
        let best = periodsearch::best(all, o.max_candidates);
        *out = Box::into_raw(Box::new(BfCandidates { inner: best }));
        Ok(())
    })
}

/// Number of candidates; 0 for NULL.
///
/// # Safety
/// `c` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn bf_candidates_len(c: *const BfCandidates) -> usize {
    c.as_ref().map_or(0, |c| c.inner.len())
}

/// # Safety
/// `c` must come from this library; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bf_candidates_get(
    c: *const BfCandidates,
    index: usize,
    out: *mut BfCandidate,
) -> BfStatus {
    guard(|| {
        let c = ref_arg(c, "candidates")?;
        let out = out_arg(out, "out")?;
        let Some(x) = c.inner.get(index) else {
            return fail(
                BfStatus::InvalidArgument,
                format!("index {index} out of range (len {})", c.inner.len()),
            );
        };
        *out = BfCandidate {
            snr: x.snr,
            period_ms: x.period_ms,
            freq_hz: x.freq_hz,
            dm: x.dm,
            fourier_bin: x.fourier_bin,
        };
        Ok(())
    })
}

/// # Safety
/// `c` must come from this library or be NULL; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn bf_candidates_free(c: *mut BfCandidates) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

// ----------------------------------------------------------------- queue

/// A shared work-queue directory.
pub struct BfQueue {
    inner: SharedDir,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BfQueueCounts {
    pub version: u64,
    pub available: usize,
    pub claimed: usize,
    pub done: usize,
    pub failed: usize,
}

/// Open a shared directory. The database need not exist yet.
///
/// # Safety
/// `shared_dir` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bf_queue_open(shared_dir: *const c_char, out: *mut *mut BfQueue) -> BfStatus {
    guard(|| {
        let dir = str_arg(shared_dir, "shared_dir")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(BfQueue {
            inner: SharedDir::new(PathBuf::from(dir)),
        }));
        Ok(())
    })
}

/// Create the database from `n` beam ids and data paths.
///
/// # Safety
/// `q` from this library; `beam_ids` and `data_paths` hold `n` strings.
#[no_mangle]
pub unsafe extern "C" fn bf_queue_init(
    q: *const BfQueue,
    beam_ids: *const *const c_char,
    data_paths: *const *const c_char,
    n: usize,
    overwrite: bool,
) -> BfStatus {
    guard(|| {
        let q = ref_arg(q, "queue")?;
        if n > 0 && (beam_ids.is_null() || data_paths.is_null()) {
            return fail(BfStatus::NullPointer, "beam arrays are null");
        }
        let mut beams = Vec::with_capacity(n);
        for i in 0..n {
            beams.push((
                str_arg(*beam_ids.add(i), "beam id")?.to_string(),
                str_arg(*data_paths.add(i), "data path")?.to_string(),
            ));
        }
        q.inner.init_db(&beams, overwrite)?;
        Ok(())
    })
}

/// Claim the next available beam and copy its id into `beam_buf`.
/// Returns `NoWork` when nothing is available and `AlreadyClaiming` when
/// the client still holds a claim.
///
/// # Safety
/// `q` from this library; `client_id` NUL-terminated; `beam_buf` holds `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn bf_queue_claim_next(
    q: *const BfQueue,
    client_id: *const c_char,
    beam_buf: *mut c_char,
    len: usize,
) -> BfStatus {
    guard(|| {
        let q = ref_arg(q, "queue")?;
        let client = str_arg(client_id, "client_id")?;
        if beam_buf.is_null() {
            return fail(BfStatus::NullPointer, "beam_buf is null");
        }
        let rec = q.inner.claim_next(client)?;
        if let Err(e) = write_str(&rec.beam_id, beam_buf, len) {
            // The caller cannot learn which beam it holds, so hand it back.
            let _ = q.inner.abandon_claims(client);
            return Err(e);
        }
        Ok(())
    })
}

/// # Safety
/// `q` from this library; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bf_queue_mark_done(
    q: *const BfQueue,
    client_id: *const c_char,
    beam_id: *const c_char,
    results_path: *const c_char,
) -> BfStatus {
    guard(|| {
        let q = ref_arg(q, "queue")?;
        q.inner.mark_done(
            str_arg(client_id, "client_id")?,
            str_arg(beam_id, "beam_id")?,
            str_arg(results_path, "results_path")?,
        )?;
        Ok(())
    })
}

/// # Safety
/// `q` from this library; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bf_queue_mark_failed(
    q: *const BfQueue,
    client_id: *const c_char,
    beam_id: *const c_char,
    reason: *const c_char,
) -> BfStatus {
    guard(|| {
        let q = ref_arg(q, "queue")?;
        q.inner.mark_failed(
            str_arg(client_id, "client_id")?,
            str_arg(beam_id, "beam_id")?,
            str_arg(reason, "reason")?,
        )?;
        Ok(())
    })
}

/// # Safety
/// `q` from this library; `requeued` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn bf_queue_requeue_stale(q: *const BfQueue, stale_secs: u64, requeued: *mut usize) -> BfStatus {
    guard(|| {
        let q = ref_arg(q, "queue")?;
        let n = q.inner.requeue_stale(stale_secs)?;
        if let Some(r) = requeued.as_mut() {
            *r = n;
        }
        Ok(())
    })
}

/// # Safety
/// `q` from this library; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bf_queue_counts(q: *const BfQueue, out: *mut BfQueueCounts) -> BfStatus {
    guard(|| {
        let q = ref_arg(q, "queue")?;
        let out = out_arg(out, "out")?;
        let db = q.inner.read_db()?;
        *out = BfQueueCounts {
            version: db.version,
            available: db.count(BeamStatus::Available),
            claimed: db.count(BeamStatus::Claimed),
            done: db.count(BeamStatus::Done),
            failed: db.count(BeamStatus::Failed),
        };
        Ok(())
    })
}

/// # Safety
/// `q` must come from this library or be NULL; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn bf_queue_free(q: *mut BfQueue) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

// ------------------------------------------------------ pure functions

/// J2000 (ra, dec) in degrees to Galactic (l, b) in degrees.
///
/// # Safety
/// `l` and `b` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bf_equatorial_to_galactic(ra_deg: f64, dec_deg: f64, l: *mut f64, b: *mut f64) -> BfStatus {
    guard(|| {
        if !(0.0..360.0).contains(&ra_deg) || !(-90.0..=90.0).contains(&dec_deg) {
            return fail(BfStatus::InvalidArgument, "ra must be in [0, 360), dec in [-90, 90]");
        }
        let (lo, la) = archive::equatorial_to_galactic(ra_deg, dec_deg);
        *out_arg(l, "l")? = lo;
        *out_arg(b, "b")? = la;
        Ok(())
    })
}

/// Minimum detectable flux density (mJy) of the aggregated survey data;
/// infinity when the smeared pulse fills the period.
///
/// # Safety
/// `smin_mjy` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bf_min_flux_density(period_ms: f64, dm: f64, smin_mjy: *mut f64) -> BfStatus {
    guard(|| {
        let out = out_arg(smin_mjy, "smin_mjy")?;
        *out = sensitivity::min_flux_density(&SensitivityParams::default(), period_ms, dm).map_err(invalid)?;
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BfMedia {
    pub capacity_gb: f64,
    pub unit_cost: f64,
    pub writer_cost: f64,
    pub other_costs: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BfCostReport {
    pub cost_per_gb_max: f64,
    pub cost_per_gb_actual: f64,
    pub fill_fraction: f64,
    pub total_cost: f64,
}

/// # Safety
/// `media` valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bf_cost_report(
    total_data_gb: f64,
    n_units: u32,
    media: *const BfMedia,
    out: *mut BfCostReport,
) -> BfStatus {
    guard(|| {
        let m = ref_arg(media, "media")?;
        let out = out_arg(out, "out")?;
        let spec = MediaSpec {
            name: "media".into(),
            capacity_gb: m.capacity_gb,
            unit_cost: m.unit_cost,
            writer_cost: m.writer_cost,
            other_costs: m.other_costs,
        };
        let r = archive::cost_report(total_data_gb, n_units, &spec).map_err(invalid)?;
        *out = BfCostReport {
            cost_per_gb_max: r.cost_per_gb_max,
            cost_per_gb_actual: r.cost_per_gb_actual,
            fill_fraction: r.fill_fraction,
            total_cost: r.total_cost,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, BfStatus::Panic);
        let msg = unsafe { CStr::from_ptr(bf_last_error()) }.to_str().unwrap();
        assert_eq!(msg, "panic: boom");
        assert_eq!(guard(|| Ok(())), BfStatus::Ok);
        assert!(bf_last_error().is_null());
    }

    #[test]
    fn write_str_bounds() {
        let mut buf = [1 as c_char; 4];
        unsafe {
            assert!(write_str("abc", buf.as_mut_ptr(), 4).is_ok());
            assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "abc");
            assert!(matches!(
                write_str("abcd", buf.as_mut_ptr(), 4),
                Err(Failure(BfStatus::BufferTooSmall, _))
            ));
        }
    }

    #[test]
    fn status_names_are_terminated() {
        let name = unsafe { CStr::from_ptr(bf_status_name(BfStatus::NotClaimant)) };
        assert_eq!(name.to_str().unwrap(), "NOT_CLAIMANT");
    }
}
