//! The per-client pipeline: claim a beam, download it through the shared
//! slot, decimate, convert, hunt across the DM grid, keep the best
//! candidates, upload, mark done, repeat.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::beamio::{self, BeamIoError, FilterbankBlock};
use crate::dedisp::{self, DedispError, DmTrialGrid, DEFAULT_DM_MAX, DEFAULT_TRIALS};
use crate::fsutil::{atomic_write, epoch_now, is_safe_id};
use crate::periodsearch::{
    self, BirdieList, Candidate, SearchError, SearchParams, DEFAULT_MAX_CANDIDATES,
    DEFAULT_SNR_THRESHOLD,
};
use crate::workqueue::{
    BeamRecord, ClientStatus, Command, FileLock, Phase, QueueError, SharedDir,
    DEFAULT_LOCK_STALE_SECS, RESULTS_DIR,
};

pub const SLOT_FILE: &str = "download.slot";

#[derive(Debug, Error)]
pub enum StageFailure {
    #[error(transparent)]
    Beam(#[from] BeamIoError),
    #[error(transparent)]
    Dedisp(#[from] DedispError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("IoError: {0}")]
    Io(#[from] io::Error),
}

impl StageFailure {
    pub fn kind(&self) -> &'static str {
        match self {
            StageFailure::Beam(e) => e.kind(),
            StageFailure::Dedisp(_) => "Dedisp",
            StageFailure::Search(e) => e.kind(),
            StageFailure::Io(_) => "IoError",
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("FatalConfig: {0}")]
    FatalConfig(String),
    #[error("{source} [stage {stage}]")]
    Stage {
        stage: &'static str,
        source: StageFailure,
    },
    #[error(transparent)]
    Queue(#[from] QueueError),
}

fn at<E: Into<StageFailure>>(stage: &'static str) -> impl FnOnce(E) -> ClientError {
    move |e| ClientError::Stage {
        stage,
        source: e.into(),
    }
}

/// Per-beam stage durations, in the column order of the timing file.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTiming {
    pub beam_id: String,
    pub download_s: f64,
    pub decimate_s: f64,
    pub sc_td_s: f64,
    pub filterbank_s: f64,
    pub hunt_trial_mean_s: f64,
    pub best_s: f64,
    pub total_min: f64,
    pub n_trials: usize,
}

impl StageTiming {
    #[allow(clippy::too_many_arguments)]
    pub fn from_stages(
        beam_id: &str,
        download_s: f64,
        decimate_s: f64,
        sc_td_s: f64,
        filterbank_s: f64,
        hunt_total_s: f64,
        n_trials: usize,
        best_s: f64,
    ) -> Self {
        let total_s = download_s + decimate_s + sc_td_s + filterbank_s + hunt_total_s + best_s;
        StageTiming {
            beam_id: beam_id.to_string(),
            download_s,
            decimate_s,
            sc_td_s,
            filterbank_s,
            hunt_trial_mean_s: hunt_total_s / n_trials.max(1) as f64,
            best_s,
            total_min: total_s / 60.0,
            n_trials,
        }
    }

    /// Sum of the parts, in seconds, using the mean hunt trial time.
    pub fn parts_s(&self) -> f64 {
        self.download_s
            + self.decimate_s
            + self.sc_td_s
            + self.filterbank_s
            + self.n_trials as f64 * self.hunt_trial_mean_s
            + self.best_s
    }

    /// |total - parts| as a fraction of the total.
    pub fn identity_error(&self) -> f64 {
        let total = self.total_min * 60.0;
        if total == 0.0 {
            return self.parts_s().abs();
        }
        (total - self.parts_s()).abs() / total
    }

    /// Floats use shortest round-trip form so the identity survives parsing.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.beam_id,
            self.download_s,
            self.decimate_s,
            self.sc_td_s,
            self.filterbank_s,
            self.hunt_trial_mean_s,
            self.best_s,
            self.total_min,
            self.n_trials
        )
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 9 {
            return Err(format!("expected 9 timing fields, found {}", f.len()));
        }
        let n = |i: usize| f[i].parse::<f64>().map_err(|_| format!("bad number `{}`", f[i]));
        Ok(StageTiming {
            beam_id: f[0].to_string(),
            download_s: n(1)?,
            decimate_s: n(2)?,
            sc_td_s: n(3)?,
            filterbank_s: n(4)?,
            hunt_trial_mean_s: n(5)?,
            best_s: n(6)?,
            total_min: n(7)?,
            n_trials: f[8].parse().map_err(|_| format!("bad trial count `{}`", f[8]))?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub client_id: String,
    pub shared_dir: PathBuf,
    pub scratch_dir: PathBuf,
    pub n_trials: usize,
    pub dm_max: f64,
    pub chan_factor: usize,
    pub time_factor: usize,
    pub stagger_slot_s: f64,
    pub poll_interval_s: f64,
    pub heartbeat_s: f64,
    pub snr_threshold: f64,
    pub max_candidates: usize,
    pub lock_stale_secs: u64,
    pub birdies: BirdieList,
    pub lock_trace: Option<PathBuf>,
}

impl ClientConfig {
    pub fn new(client_id: &str, shared_dir: impl Into<PathBuf>, scratch_dir: impl Into<PathBuf>) -> Self {
        ClientConfig {
            client_id: client_id.to_string(),
            shared_dir: shared_dir.into(),
            scratch_dir: scratch_dir.into(),
            n_trials: DEFAULT_TRIALS,
            dm_max: DEFAULT_DM_MAX,
            chan_factor: 4,
            time_factor: 16,
            stagger_slot_s: 60.0,
            poll_interval_s: 5.0,
            heartbeat_s: 10.0,
            snr_threshold: DEFAULT_SNR_THRESHOLD,
            max_candidates: DEFAULT_MAX_CANDIDATES,
            lock_stale_secs: DEFAULT_LOCK_STALE_SECS,
            birdies: BirdieList::default(),
            lock_trace: None,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |m: String| Err(ClientError::FatalConfig(m));
        if !is_safe_id(&self.client_id) {
            return bad(format!("client id `{}` is not filesystem-safe", self.client_id));
        }
        if self.n_trials == 0 {
            return bad("n_trials must be positive".into());
        }
        for (name, v) in [
            ("stagger_slot_s", self.stagger_slot_s),
            ("poll_interval_s", self.poll_interval_s),
            ("heartbeat_s", self.heartbeat_s),
            ("snr_threshold", self.snr_threshold),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.dm_max > 0.0) {
            return bad(format!("dm_max must be positive, got {}", self.dm_max));
        }
        if self.chan_factor == 0 || self.time_factor == 0 {
            return bad("aggregation factors must be positive".into());
        }
        Ok(())
    }

    pub fn dm_grid(&self) -> Result<DmTrialGrid, DedispError> {
        if self.n_trials == 1 {
            DmTrialGrid::from_values(vec![0.0])
        } else {
            dedisp::make_dm_grid(self.n_trials, 0.0, self.dm_max)
        }
    }

    pub fn search_params(&self) -> SearchParams {
        SearchParams {
            snr_threshold: self.snr_threshold,
            max_candidates: self.max_candidates,
            n_fft: None,
        }
    }

    pub fn queue(&self) -> SharedDir {
        let mut q = SharedDir::new(&self.shared_dir);
        q.lock_stale_secs = self.lock_stale_secs;
        q.lock_trace = self.lock_trace.clone();
        q
    }
}

/// Observation points inside the loop. Tests use them to inject faults or
/// operator actions at precise moments.
pub trait ClientHooks: Sync {
    fn on_phase(&self, _beam_id: &str, _phase: Phase) {}
}

pub struct NoHooks;

impl ClientHooks for NoHooks {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitReason {
    NoWork,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientSummary {
    pub done: usize,
    pub failed: usize,
    /// Beams whose completion was refused because the claim had been requeued.
    pub lost_claims: usize,
    pub reason: ExitReason,
}

impl fmt::Display for ClientSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "done {} failed {} lost {} exit {:?}",
            self.done, self.failed, self.lost_claims, self.reason
        )
    }
}

/// Serialises status-file writes so the on-disk heartbeat never goes back.
struct Reporter<'a> {
    queue: &'a SharedDir,
    status: Mutex<ClientStatus>,
    trials: AtomicU64,
}

impl<'a> Reporter<'a> {
    fn new(queue: &'a SharedDir, client_id: &str) -> Self {
        let previous = queue.heartbeat_of(client_id).unwrap_or(0);
        Reporter {
            queue,
            status: Mutex::new(ClientStatus::idle(client_id, previous)),
            trials: AtomicU64::new(0),
        }
    }

    fn update(&self, f: impl FnOnce(&mut ClientStatus)) {
        let mut s = self.status.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut s);
        s.trials_done = self.trials.load(Ordering::Relaxed);
        s.heartbeat = s.heartbeat.max(epoch_now());
        if let Err(e) = self.queue.write_status(&s) {
            log::warn!("{}: status write failed: {e}", s.client_id);
        }
    }

    fn phase(&self, beam: &str, phase: Phase) {
        self.update(|s| {
            s.current_beam = beam.to_string();
            s.phase = phase;
        });
    }

    fn beat(&self) {
        self.update(|_| {});
    }
}

fn log_line(q: &SharedDir, client: &str, msg: &str) {
    log::info!("{client}: {msg}");
    if let Err(e) = q.append_log(client, msg) {
        log::warn!("{client}: log write failed: {e}");
    }
}

/// Copy a beam from the shared directory while holding the download slot.
/// Returns the local path and the seconds spent copying.
pub fn staggered_download(
    queue: &SharedDir,
    cfg: &ClientConfig,
    rec: &BeamRecord,
) -> Result<(PathBuf, f64), ClientError> {
    let client = &cfg.client_id;
    let slot_path = queue.path(SLOT_FILE);
    let wait = Duration::from_secs_f64(10.0 * cfg.stagger_slot_s);
    let slot = match FileLock::acquire(&slot_path, client, cfg.lock_stale_secs, wait) {
        Ok(s) => Some(s),
        Err(QueueError::LockTimeout { .. }) => {
            log_line(queue, client, &format!("download-slot timeout {}; copying without slot", rec.beam_id));
            None
        }
        Err(e) => return Err(e.into()),
    };
    let local = cfg.scratch_dir.join(format!("{}.raw", rec.beam_id));
    log_line(queue, client, &format!("download-start {}", rec.beam_id));
    let t = Instant::now();
    let copied = fs::copy(queue.data_file(rec), &local);
    let elapsed = t.elapsed().as_secs_f64();
    log_line(queue, client, &format!("download-end {}", rec.beam_id));
    if let Some(s) = slot {
        if let Err(e) = s.release() {
            log_line(queue, client, &format!("download-slot release: {e}"));
        }
    }
    copied.map_err(at("download"))?;
    Ok((local, elapsed))
}

/// Output of the processing stages for one beam.
#[derive(Debug, Clone)]
pub struct BeamOutput {
    pub candidates: Vec<Candidate>,
    pub decimate_s: f64,
    pub sc_td_s: f64,
    pub filterbank_s: f64,
    pub hunt_s: f64,
    pub best_s: f64,
}

/// Aggregate a raw 1-bit beam; blocks already at 8 bits pass through.
pub fn decimate_stage(block: &FilterbankBlock, cfg: &ClientConfig) -> Result<FilterbankBlock, BeamIoError> {
    if block.params.bits_per_sample == 1 {
        beamio::decimate(block, cfg.chan_factor, cfg.time_factor)
    } else {
        Ok(block.clone())
    }
}

/// The search on an in-memory block, without any file handling.
pub fn run_pipeline(block: &FilterbankBlock, cfg: &ClientConfig) -> Result<Vec<Candidate>, ClientError> {
    let dec = decimate_stage(block, cfg).map_err(at("decimate"))?;
    let conv = beamio::convert_to_timeseries_format(&dec).map_err(at("sc_td"))?;
    let grid = cfg.dm_grid().map_err(at("hunt"))?;
    let all = periodsearch::hunt(&conv, &grid, &cfg.birdies, &cfg.search_params(), &|| {})
        .map_err(at("hunt"))?;
    Ok(periodsearch::best(all, cfg.max_candidates))
}

fn process_local(
    raw: &Path,
    beam_id: &str,
    cfg: &ClientConfig,
    reporter: &Reporter,
    hooks: &dyn ClientHooks,
) -> Result<BeamOutput, ClientError> {
    reporter.phase(beam_id, Phase::Decimate);
    hooks.on_phase(beam_id, Phase::Decimate);
    let t = Instant::now();
    let block = beamio::read_block(raw).map_err(at("decimate"))?;
    let dec = decimate_stage(&block, cfg).map_err(at("decimate"))?;
    drop(block);
    let decimate_s = t.elapsed().as_secs_f64();

    reporter.phase(beam_id, Phase::Convert);
    hooks.on_phase(beam_id, Phase::Convert);
    let t = Instant::now();
    let conv = beamio::convert_to_timeseries_format(&dec).map_err(at("sc_td"))?;
    drop(dec);
    let sc_td_s = t.elapsed().as_secs_f64();

    // The search reads its input back from scratch, as a separate program would.
    let t = Instant::now();
    let fil = cfg.scratch_dir.join(format!("{beam_id}.fil"));
    beamio::write_block(&conv, &fil).map_err(at("filterbank"))?;
    let conv = beamio::read_block(&fil).map_err(at("filterbank"))?;
    let filterbank_s = t.elapsed().as_secs_f64();

    reporter.phase(beam_id, Phase::Hunt);
    hooks.on_phase(beam_id, Phase::Hunt);
    let t = Instant::now();
    let grid = cfg.dm_grid().map_err(at("hunt"))?;
    let progress = || {
        reporter.trials.fetch_add(1, Ordering::Relaxed);
    };
    let all = periodsearch::hunt(&conv, &grid, &cfg.birdies, &cfg.search_params(), &progress)
        .map_err(at("hunt"))?;
    let hunt_s = t.elapsed().as_secs_f64();

    reporter.phase(beam_id, Phase::Best);
    hooks.on_phase(beam_id, Phase::Best);
    let t = Instant::now();
    let candidates = periodsearch::best(all, cfg.max_candidates);
    let best_s = t.elapsed().as_secs_f64();
    let _ = fs::remove_file(&fil);
    Ok(BeamOutput {
        candidates,
        decimate_s,
        sc_td_s,
        filterbank_s,
        hunt_s,
        best_s,
    })
}

enum BeamResult {
    Done,
    Failed,
    Lost,
}

fn handle_beam(
    queue: &SharedDir,
    cfg: &ClientConfig,
    rec: &BeamRecord,
    reporter: &Reporter,
    hooks: &dyn ClientHooks,
) -> Result<BeamResult, ClientError> {
    let client = &cfg.client_id;
    let beam = &rec.beam_id;
    reporter.trials.store(0, Ordering::Relaxed);
    reporter.phase(beam, Phase::Download);
    hooks.on_phase(beam, Phase::Download);

    let outcome = staggered_download(queue, cfg, rec).and_then(|(local, download_s)| {
        let out = process_local(&local, beam, cfg, reporter, hooks);
        let _ = fs::remove_file(&local);
        out.map(|o| (o, download_s))
    });
    let (out, download_s) = match outcome {
        Ok(v) => v,
        Err(ClientError::Stage { stage, source }) => {
            let reason = format!("{source} [stage {stage}]");
            log_line(queue, client, &format!("failed {beam}: {reason}"));
            return match queue.mark_failed(client, beam, &reason) {
                Ok(()) => Ok(BeamResult::Failed),
                Err(QueueError::NotClaimant { .. }) => Ok(BeamResult::Lost),
                Err(e) => Err(e.into()),
            };
        }
        Err(e) => return Err(e),
    };

    reporter.phase(beam, Phase::Upload);
    hooks.on_phase(beam, Phase::Upload);
    let rel = format!("{RESULTS_DIR}/{beam}.cand");
    let text = periodsearch::format_candidates(&out.candidates);
    atomic_write(&queue.results_path(beam), text.as_bytes()).map_err(at("upload"))?;
    match queue.mark_done(client, beam, &rel) {
        Ok(()) => {}
        Err(QueueError::NotClaimant { holder, .. }) => {
            log_line(queue, client, &format!("lost claim on {beam} (now `{holder}`); result discarded"));
            return Ok(BeamResult::Lost);
        }
        Err(e) => return Err(e.into()),
    }
    let timing = StageTiming::from_stages(
        beam,
        download_s,
        out.decimate_s,
        out.sc_td_s,
        out.filterbank_s,
        out.hunt_s,
        cfg.n_trials,
        out.best_s,
    );
    queue.append_timing(client, &timing.to_line())?;
    log_line(
        queue,
        client,
        &format!("done {beam} candidates {} total_min {:.4}", out.candidates.len(), timing.total_min),
    );
    Ok(BeamResult::Done)
}

fn sleep_s(s: f64) {
    thread::sleep(Duration::from_secs_f64(s));
}

pub fn run_client(cfg: &ClientConfig) -> Result<ClientSummary, ClientError> {
    run_client_with_hooks(cfg, &NoHooks)
}

pub fn run_client_with_hooks(
    cfg: &ClientConfig,
    hooks: &dyn ClientHooks,
) -> Result<ClientSummary, ClientError> {
    cfg.validate()?;
    if !cfg.shared_dir.is_dir() {
        return Err(ClientError::FatalConfig(format!(
            "shared directory {} is not reachable",
            cfg.shared_dir.display()
        )));
    }
    fs::create_dir_all(&cfg.scratch_dir).map_err(|e| {
        ClientError::FatalConfig(format!("scratch {}: {e}", cfg.scratch_dir.display()))
    })?;
    let queue = cfg.queue();
    queue
        .read_db()
        .map_err(|e| ClientError::FatalConfig(format!("queue database: {e}")))?;
    fs::create_dir_all(queue.path(RESULTS_DIR)).map_err(QueueError::from)?;
    let client = cfg.client_id.as_str();
    let reporter = Reporter::new(&queue, client);
    reporter.phase("-", Phase::Idle);
    log_line(&queue, client, "start");
    let orphans = queue.abandon_claims(client)?;
    if orphans > 0 {
        log_line(&queue, client, &format!("released {orphans} claim(s) left by an earlier run"));
    }

    let mut summary = ClientSummary {
        done: 0,
        failed: 0,
        lost_claims: 0,
        reason: ExitReason::NoWork,
    };
    let mut paused = false;
    loop {
        let command = match queue.read_control(client) {
            Ok(c) => c,
            Err(e) => {
                log_line(&queue, client, &format!("unreadable control file, pausing: {e}"));
                Command::Pause
            }
        };
        match command {
            Command::Stop => {
                summary.reason = ExitReason::Stopped;
                break;
            }
            Command::Pause => {
                if !paused {
                    log_line(&queue, client, "paused");
                    paused = true;
                }
                reporter.phase("-", Phase::Idle);
                sleep_s(cfg.poll_interval_s);
                continue;
            }
            Command::Run => {
                if paused {
                    log_line(&queue, client, "resumed");
                    paused = false;
                }
            }
        }

        let rec = match queue.claim_next(client) {
            Ok(r) => r,
            Err(QueueError::NoWork) => break,
            Err(e @ QueueError::LockTimeout { .. }) => {
                log_line(&queue, client, &format!("claim: {e}"));
                sleep_s(cfg.poll_interval_s);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        log_line(&queue, client, &format!("claimed {} attempt {}", rec.beam_id, rec.attempt_count));

        let (stop_tx, stop_rx) = mpsc::channel::<()>();
        let beat = &reporter;
        let result = thread::scope(|s| {
            s.spawn(move || {
                let period = Duration::from_secs_f64(cfg.heartbeat_s);
                while let Err(mpsc::RecvTimeoutError::Timeout) = stop_rx.recv_timeout(period) {
                    beat.beat();
                }
            });
            let r = handle_beam(&queue, cfg, &rec, &reporter, hooks);
            let _ = stop_tx.send(());
            r
        });
        match result? {
            BeamResult::Done => summary.done += 1,
            BeamResult::Failed => summary.failed += 1,
            BeamResult::Lost => summary.lost_claims += 1,
        }
        reporter.phase("-", Phase::Idle);
    }
    reporter.phase("-", Phase::Idle);
    log_line(&queue, client, &format!("exit {summary}"));
    Ok(summary)
}
