//! Coordinator-less work queue living entirely in one shared directory.
//!
//! Layout of the shared directory:
//!
//! ```text
//! beams.db            flat database, replaced atomically on every change
//! db.lock             exclusive-create lock file (client epoch nonce)
//! db.flock            sidecar for the advisory lock (beams.db itself is renamed over)
//! transitions.log     append-only audit: version epoch beam from to actor
//! results.manifest    beam_id results_path client epoch
//! failures.log        epoch beam_id client reason
//! CONTROL, CONTROL.<id>
//! clients/<id>.status .log .timing
//! results/<beam>.cand
//! ```

pub mod control;
pub mod db;
pub mod lock;
mod monitor;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, ErrorKind};
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

pub use control::{ClientStatus, Command, ControlState, Phase};
pub use db::{BeamRecord, BeamStatus, QueueDatabase, NO_CLAIMANT};
pub use lock::{FileLock, LockToken};
pub use monitor::{ClientView, MonitorSnapshot};

use crate::fsutil::{append_line, atomic_write, epoch_now, epoch_precise, is_safe_id};

pub const DB_FILE: &str = "beams.db";
pub const LOCK_FILE: &str = "db.lock";
pub const ADVISORY_FILE: &str = "db.flock";
pub const TRANSITIONS_FILE: &str = "transitions.log";
pub const MANIFEST_FILE: &str = "results.manifest";
pub const FAILURES_FILE: &str = "failures.log";
pub const CONTROL_FILE: &str = "CONTROL";
pub const CLIENTS_DIR: &str = "clients";
pub const RESULTS_DIR: &str = "results";

pub const DEFAULT_LOCK_STALE_SECS: u64 = 300;
pub const DEFAULT_CLAIM_STALE_SECS: u64 = 600;
pub const DEFAULT_LOCK_TIMEOUT: Duration = Duration::from_secs(120);
pub const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("IoError: {0}")]
    Io(#[from] io::Error),
    #[error("DuplicateBeamId: {0}")]
    DuplicateBeamId(String),
    #[error("LockTimeout: {path} still held after {waited_s:.1} s")]
    LockTimeout { path: String, waited_s: f64 },
    #[error("LockStolen: {0} no longer carries our nonce")]
    LockStolen(String),
    #[error("NoWork: no AVAILABLE beams")]
    NoWork,
    #[error("NotClaimant: beam {beam_id} is {status} by `{holder}`, not `{client_id}`")]
    NotClaimant {
        beam_id: String,
        client_id: String,
        holder: String,
        status: BeamStatus,
    },
    #[error("UnknownBeam: {0}")]
    UnknownBeam(String),
    #[error("AlreadyClaiming: client `{client_id}` already holds {beam_id}")]
    AlreadyClaiming { client_id: String, beam_id: String },
    #[error("ParseError: {0}")]
    Parse(String),
    #[error("InvalidClientId: `{0}`")]
    InvalidClientId(String),
    #[error("DatabaseExists: {0}")]
    DatabaseExists(String),
    #[error("NoDatabase: {0}")]
    NoDatabase(String),
}

impl QueueError {
    pub fn kind(&self) -> &'static str {
        match self {
            QueueError::Io(_) => "IoError",
            QueueError::DuplicateBeamId(_) => "DuplicateBeamId",
            QueueError::LockTimeout { .. } => "LockTimeout",
            QueueError::LockStolen(_) => "LockStolen",
            QueueError::NoWork => "NoWork",
            QueueError::NotClaimant { .. } => "NotClaimant",
            QueueError::UnknownBeam(_) => "UnknownBeam",
            QueueError::AlreadyClaiming { .. } => "AlreadyClaiming",
            QueueError::Parse(_) => "ParseError",
            QueueError::InvalidClientId(_) => "InvalidClientId",
            QueueError::DatabaseExists(_) => "DatabaseExists",
            QueueError::NoDatabase(_) => "NoDatabase",
        }
    }
}

/// One line of `transitions.log`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub version: u64,
    pub epoch: u64,
    pub beam_id: String,
    pub from: BeamStatus,
    pub to: BeamStatus,
    pub actor: String,
}

impl Transition {
    fn render(&self) -> String {
        format!(
            "{} {} {} {} {} {}",
            self.version, self.epoch, self.beam_id, self.from, self.to, self.actor
        )
    }

    pub fn parse(line: &str) -> Result<Transition, QueueError> {
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || QueueError::Parse(format!("bad transition line `{line}`"));
        if f.len() != 6 {
            return Err(bad());
        }
        Ok(Transition {
            version: f[0].parse().map_err(|_| bad())?,
            epoch: f[1].parse().map_err(|_| bad())?,
            beam_id: f[2].to_string(),
            from: f[3].parse()?,
            to: f[4].parse()?,
            actor: f[5].to_string(),
        })
    }
}

/// What a mutation wants committed: status changes plus log lines that are
/// appended only after the new database is in place.
struct Change<T> {
    value: T,
    moves: Vec<(String, BeamStatus, BeamStatus)>,
    appends: Vec<(PathBuf, String)>,
}

impl<T> Change<T> {
    fn new(value: T) -> Self {
        Change {
            value,
            moves: Vec::new(),
            appends: Vec::new(),
        }
    }
}

/// Handle on a shared queue directory. Cheap to clone; one per worker.
#[derive(Debug, Clone)]
pub struct SharedDir {
    root: PathBuf,
    pub lock_stale_secs: u64,
    pub lock_timeout: Duration,
    /// When set, every database critical section appends `enter`/`exit`
    /// lines here. Used to audit mutual exclusion.
    pub lock_trace: Option<PathBuf>,
}

impl SharedDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SharedDir {
            root: root.into(),
            lock_stale_secs: DEFAULT_LOCK_STALE_SECS,
            lock_timeout: DEFAULT_LOCK_TIMEOUT,
            lock_trace: None,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn client_file(&self, client_id: &str, ext: &str) -> PathBuf {
        self.root.join(CLIENTS_DIR).join(format!("{client_id}.{ext}"))
    }

    pub fn results_path(&self, beam_id: &str) -> PathBuf {
        self.root.join(RESULTS_DIR).join(format!("{beam_id}.cand"))
    }

    /// Absolute location of a record's data file.
    pub fn data_file(&self, rec: &BeamRecord) -> PathBuf {
        self.root.join(&rec.data_path)
    }

    fn check_id(id: &str) -> Result<(), QueueError> {
        if is_safe_id(id) {
            Ok(())
        } else {
            Err(QueueError::InvalidClientId(id.to_string()))
        }
    }

    pub fn init_db(
        &self,
        beams: &[(String, String)],
        overwrite: bool,
    ) -> Result<QueueDatabase, QueueError> {
        let records = beams
            .iter()
            .map(|(id, path)| BeamRecord::available(id.clone(), path.clone()))
            .collect();
        let db = QueueDatabase::new(records)?;
        fs::create_dir_all(self.root.join(CLIENTS_DIR))?;
        fs::create_dir_all(self.root.join(RESULTS_DIR))?;
        let token = self.acquire_lock("init", self.lock_timeout)?;
        let path = self.path(DB_FILE);
        if path.exists() && !overwrite {
            return Err(QueueError::DatabaseExists(path.display().to_string()));
        }
        token.verify()?;
        atomic_write(&path, db.render().as_bytes())?;
        if overwrite {
            for f in [TRANSITIONS_FILE, MANIFEST_FILE] {
                match fs::remove_file(self.path(f)) {
                    Err(e) if e.kind() != ErrorKind::NotFound => return Err(e.into()),
                    _ => {}
                }
            }
        }
        token.release()?;
        Ok(db)
    }

    pub fn read_db(&self) -> Result<QueueDatabase, QueueError> {
        let path = self.path(DB_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => QueueDatabase::parse(&text),
            Err(e) if e.kind() == ErrorKind::NotFound => {
                Err(QueueError::NoDatabase(path.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn acquire_lock(&self, client_id: &str, timeout: Duration) -> Result<LockToken, QueueError> {
        Self::check_id(client_id)?;
        LockToken::acquire(
            &self.path(LOCK_FILE),
            &self.path(ADVISORY_FILE),
            self.lock_trace.as_deref(),
            client_id,
            self.lock_stale_secs,
            timeout,
        )
    }

    pub fn release_lock(&self, token: LockToken) -> Result<(), QueueError> {
        token.release()
    }

    fn mutate<T>(
        &self,
        actor: &str,
        f: impl FnOnce(&mut QueueDatabase, u64) -> Result<Change<T>, QueueError>,
    ) -> Result<T, QueueError> {
        let token = self.acquire_lock(actor, self.lock_timeout)?;
        let mut db = self.read_db()?;
        let now = epoch_now();
        let change = f(&mut db, now)?;
        if !change.moves.is_empty() {
            db.version += 1;
            token.verify()?;
            atomic_write(&self.path(DB_FILE), db.render().as_bytes())?;
            let log = self.path(TRANSITIONS_FILE);
            for (beam_id, from, to) in change.moves {
                let t = Transition {
                    version: db.version,
                    epoch: now,
                    beam_id,
                    from,
                    to,
                    actor: actor.to_string(),
                };
                append_line(&log, &t.render())?;
            }
            for (path, line) in &change.appends {
                append_line(path, line)?;
            }
        }
        if let Err(e) = token.release() {
            // The commit above was verified; a theft after it is the thief's problem.
            log::warn!("{actor}: releasing database lock: {e}");
        }
        Ok(change.value)
    }

    /// First AVAILABLE record in file order becomes CLAIMED by `client_id`.
    pub fn claim_next(&self, client_id: &str) -> Result<BeamRecord, QueueError> {
        self.mutate(client_id, |db, now| {
            if let Some(held) = db
                .records
                .iter()
                .find(|r| r.status == BeamStatus::Claimed && r.claimant == client_id)
            {
                return Err(QueueError::AlreadyClaiming {
                    client_id: client_id.to_string(),
                    beam_id: held.beam_id.clone(),
                });
            }
            let rec = db
                .records
                .iter_mut()
                .find(|r| r.status == BeamStatus::Available)
                .ok_or(QueueError::NoWork)?;
            rec.status = BeamStatus::Claimed;
            rec.claimant = client_id.to_string();
            rec.claimed_at = now.max(1);
            rec.finished_at = 0;
            rec.attempt_count += 1;
            let mut ch = Change::new(rec.clone());
            ch.moves
                .push((rec.beam_id.clone(), BeamStatus::Available, BeamStatus::Claimed));
            Ok(ch)
        })
    }

    fn finish(
        &self,
        client_id: &str,
        beam_id: &str,
        to: BeamStatus,
        append: (PathBuf, String),
    ) -> Result<(), QueueError> {
        self.mutate(client_id, |db, now| {
            let rec = db
                .find_mut(beam_id)
                .ok_or_else(|| QueueError::UnknownBeam(beam_id.to_string()))?;
            if rec.status != BeamStatus::Claimed || rec.claimant != client_id {
                return Err(QueueError::NotClaimant {
                    beam_id: beam_id.to_string(),
                    client_id: client_id.to_string(),
                    holder: rec.claimant.clone(),
                    status: rec.status,
                });
            }
            rec.status = to;
            rec.finished_at = now.max(rec.claimed_at);
            let mut ch = Change::new(());
            ch.moves.push((beam_id.to_string(), BeamStatus::Claimed, to));
            ch.appends.push(append);
            Ok(ch)
        })
    }

    pub fn mark_done(&self, client_id: &str, beam_id: &str, results_path: &str) -> Result<(), QueueError> {
        let line = format!("{beam_id} {results_path} {client_id} {}", epoch_now());
        self.finish(client_id, beam_id, BeamStatus::Done, (self.path(MANIFEST_FILE), line))
    }

    pub fn mark_failed(&self, client_id: &str, beam_id: &str, reason: &str) -> Result<(), QueueError> {
        let reason: String = reason
            .chars()
            .map(|c| if c.is_control() { ' ' } else { c })
            .collect();
        let line = format!("{} {beam_id} {client_id} {reason}", epoch_now());
        self.finish(client_id, beam_id, BeamStatus::Failed, (self.path(FAILURES_FILE), line))
    }

    /// Latest sign of life from a client: its status-file heartbeat.
    pub fn heartbeat_of(&self, client_id: &str) -> Option<u64> {
        self.read_status(client_id).ok().flatten().map(|s| s.heartbeat)
    }

    pub fn requeue_stale(&self, stale_secs: u64) -> Result<usize, QueueError> {
        self.requeue_stale_at(stale_secs, None)
    }

    /// Revert CLAIMED records whose claimant has been silent for more than
    /// `stale_secs`. `now` overrides the clock for tests.
    pub fn requeue_stale_at(&self, stale_secs: u64, now: Option<u64>) -> Result<usize, QueueError> {
        let mut heartbeats = BTreeMap::new();
        self.mutate("requeue", |db, clock| {
            let now = now.unwrap_or(clock);
            let mut ch = Change::new(0);
            for rec in db.records.iter_mut().filter(|r| r.status == BeamStatus::Claimed) {
                let hb = *heartbeats
                    .entry(rec.claimant.clone())
                    .or_insert_with(|| self.heartbeat_of(&rec.claimant));
                let last = hb.unwrap_or(0).max(rec.claimed_at);
                if now.saturating_sub(last) > stale_secs {
                    log::info!("requeue {} (claimant {} silent {} s)", rec.beam_id, rec.claimant, now - last);
                    rec.status = BeamStatus::Available;
                    rec.claimant = NO_CLAIMANT.to_string();
                    rec.claimed_at = 0;
                    ch.moves
                        .push((rec.beam_id.clone(), BeamStatus::Claimed, BeamStatus::Available));
                    ch.value += 1;
                }
            }
            Ok(ch)
        })
    }

    /// Return every CLAIMED record of `client_id` to AVAILABLE. A client
    /// calls this on start-up: any claim under its id is an orphan from a
    /// previous incarnation.
    pub fn abandon_claims(&self, client_id: &str) -> Result<usize, QueueError> {
        self.mutate(client_id, |db, _| {
            let mut ch = Change::new(0);
            for rec in db
                .records
                .iter_mut()
                .filter(|r| r.status == BeamStatus::Claimed && r.claimant == client_id)
            {
                rec.status = BeamStatus::Available;
                rec.claimant = NO_CLAIMANT.to_string();
                rec.claimed_at = 0;
                ch.moves
                    .push((rec.beam_id.clone(), BeamStatus::Claimed, BeamStatus::Available));
                ch.value += 1;
            }
            Ok(ch)
        })
    }

    /// FAILED back to AVAILABLE. Beams that already failed `MAX_ATTEMPTS`
    /// times are left alone unless `force`.
    pub fn requeue_failed(&self, force: bool) -> Result<usize, QueueError> {
        self.mutate("requeue", |db, _| {
            let mut ch = Change::new(0);
            for rec in db.records.iter_mut().filter(|r| {
                r.status == BeamStatus::Failed && (force || r.attempt_count < MAX_ATTEMPTS)
            }) {
                rec.status = BeamStatus::Available;
                rec.claimant = NO_CLAIMANT.to_string();
                rec.claimed_at = 0;
                rec.finished_at = 0;
                ch.moves
                    .push((rec.beam_id.clone(), BeamStatus::Failed, BeamStatus::Available));
                ch.value += 1;
            }
            Ok(ch)
        })
    }

    pub fn read_transitions(&self) -> Result<Vec<Transition>, QueueError> {
        match fs::read_to_string(self.path(TRANSITIONS_FILE)) {
            Ok(text) => text.lines().filter(|l| !l.is_empty()).map(Transition::parse).collect(),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }

    fn read_command(path: &Path) -> Result<Option<Command>, QueueError> {
        match fs::read_to_string(path) {
            Ok(text) => Command::parse_file(&text).map(Some),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn read_control(&self, client_id: &str) -> Result<Command, QueueError> {
        if let Some(c) = Self::read_command(&self.path(&format!("{CONTROL_FILE}.{client_id}")))? {
            return Ok(c);
        }
        Ok(Self::read_command(&self.path(CONTROL_FILE))?.unwrap_or(Command::Run))
    }

    pub fn read_control_state(&self) -> Result<ControlState, QueueError> {
        let global = Self::read_command(&self.path(CONTROL_FILE))?.unwrap_or(Command::Run);
        let mut overrides = BTreeMap::new();
        let prefix = format!("{CONTROL_FILE}.");
        for entry in fs::read_dir(&self.root)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_prefix(&prefix) {
                if is_safe_id(id) {
                    if let Some(c) = Self::read_command(&self.path(&name))? {
                        overrides.insert(id.to_string(), c);
                    }
                }
            }
        }
        Ok(ControlState { global, overrides })
    }

    pub fn write_control(&self, command: Command, client_id: Option<&str>) -> Result<(), QueueError> {
        let name = match client_id {
            Some(id) => {
                Self::check_id(id)?;
                format!("{CONTROL_FILE}.{id}")
            }
            None => CONTROL_FILE.to_string(),
        };
        atomic_write(&self.path(&name), format!("{command}\n").as_bytes())?;
        Ok(())
    }

    pub fn clear_control(&self, client_id: &str) -> Result<(), QueueError> {
        Self::check_id(client_id)?;
        match fs::remove_file(self.path(&format!("{CONTROL_FILE}.{client_id}"))) {
            Err(e) if e.kind() != ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    pub fn write_status(&self, status: &ClientStatus) -> Result<(), QueueError> {
        Self::check_id(&status.client_id)?;
        fs::create_dir_all(self.root.join(CLIENTS_DIR))?;
        atomic_write(&self.client_file(&status.client_id, "status"), status.render().as_bytes())?;
        Ok(())
    }

    pub fn read_status(&self, client_id: &str) -> Result<Option<ClientStatus>, QueueError> {
        match fs::read_to_string(self.client_file(client_id, "status")) {
            Ok(text) => ClientStatus::parse(client_id, &text).map(Some),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn append_log(&self, client_id: &str, message: &str) -> Result<(), QueueError> {
        Self::check_id(client_id)?;
        fs::create_dir_all(self.root.join(CLIENTS_DIR))?;
        append_line(&self.client_file(client_id, "log"), &format!("{} {message}", epoch_precise()))?;
        Ok(())
    }

    pub fn append_timing(&self, client_id: &str, line: &str) -> Result<(), QueueError> {
        Self::check_id(client_id)?;
        fs::create_dir_all(self.root.join(CLIENTS_DIR))?;
        append_line(&self.client_file(client_id, "timing"), line)?;
        Ok(())
    }

    /// Ids of every client that has left a status file.
    pub fn known_clients(&self) -> Result<Vec<String>, QueueError> {
        let dir = self.root.join(CLIENTS_DIR);
        let mut ids = Vec::new();
        match fs::read_dir(&dir) {
            Ok(entries) => {
                for e in entries {
                    let name = e?.file_name().to_string_lossy().into_owned();
                    if let Some(id) = name.strip_suffix(".status") {
                        if is_safe_id(id) {
                            ids.push(id.to_string());
                        }
                    }
                }
            }
            Err(e) if e.kind() == ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        ids.sort();
        Ok(ids)
    }

    pub fn monitor_snapshot(&self) -> Result<MonitorSnapshot, QueueError> {
        monitor::snapshot(self, epoch_now())
    }

    pub fn monitor_snapshot_at(&self, now: u64) -> Result<MonitorSnapshot, QueueError> {
        monitor::snapshot(self, now)
    }
}
