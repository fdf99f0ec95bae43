//! Exclusive-create lock files with stale breaking, plus the combined
//! database lock (lock file, advisory lock, nonce verification).

use std::fs::{self, File, OpenOptions};
use std::io::{self, ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;

use super::QueueError;
use crate::fsutil::{append_line, epoch_now, epoch_precise, unique_token};

/// Contents of a lock file: who holds it, since when, and a random nonce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockOwner {
    pub client_id: String,
    pub epoch: u64,
    pub nonce: String,
}

impl LockOwner {
    fn render(&self) -> String {
        format!("{} {} {}\n", self.client_id, self.epoch, self.nonce)
    }

    fn parse(text: &str) -> Option<LockOwner> {
        let mut it = text.split_whitespace();
        let owner = LockOwner {
            client_id: it.next()?.to_string(),
            epoch: it.next()?.parse().ok()?,
            nonce: it.next()?.to_string(),
        };
        it.next().is_none().then_some(owner)
    }
}

pub fn read_owner(path: &Path) -> io::Result<Option<LockOwner>> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(LockOwner::parse(&s)),
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

fn try_create(path: &Path, owner: &LockOwner) -> io::Result<bool> {
    let mut f = match OpenOptions::new().write(true).create_new(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == ErrorKind::AlreadyExists => return Ok(false),
        Err(e) => return Err(e),
    };
    let written = f.write_all(owner.render().as_bytes()).and_then(|_| f.sync_all());
    if let Err(e) = written {
        let _ = fs::remove_file(path);
        return Err(e);
    }
    Ok(true)
}

fn stale_name(path: &Path, now: u64) -> PathBuf {
    let base = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
    let first = path.with_file_name(format!("{base}.stale.{now}"));
    if !first.exists() {
        return first;
    }
    (1..)
        .map(|i| path.with_file_name(format!("{base}.stale.{now}.{i}")))
        .find(|p| !p.exists())
        .unwrap_or(first)
}

/// Age of a lock in seconds, from its recorded epoch or, if the file is
/// unreadable garbage, from its modification time.
fn lock_age(path: &Path, now: u64) -> io::Result<Option<u64>> {
    if let Some(owner) = read_owner(path)? {
        return Ok(Some(now.saturating_sub(owner.epoch)));
    }
    match fs::metadata(path) {
        Ok(m) => {
            let modified = m
                .modified()?
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            Ok(Some(now.saturating_sub(modified)))
        }
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

/// Rename an expired lock aside so it is preserved for inspection.
/// Returns true when the lock was broken (or vanished on its own).
pub fn break_if_stale(path: &Path, stale_secs: u64) -> io::Result<bool> {
    let now = epoch_now();
    let before = read_owner(path)?;
    match lock_age(path, now)? {
        None => return Ok(true),
        Some(age) if age <= stale_secs => return Ok(false),
        Some(_) => {}
    }
    let aside = stale_name(path, now);
    match fs::rename(path, &aside) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::NotFound => return Ok(true),
        Err(e) => return Err(e),
    }
    // Another breaker may have replaced the stale lock with a live one
    // between our read and our rename. Put it back if the slot is free;
    // otherwise the live holder will notice on its next verify.
    if read_owner(&aside)? != before {
        if fs::hard_link(&aside, path).is_ok() {
            let _ = fs::remove_file(&aside);
        }
        return Ok(false);
    }
    log::warn!("broke stale lock {} -> {}", path.display(), aside.display());
    Ok(true)
}

fn backoff(attempt: u32) -> Duration {
    let cap = 2u64.saturating_pow(attempt.min(5)).min(50);
    Duration::from_millis(rand::thread_rng().gen_range(1..=cap.max(2)))
}

/// An exclusive-create lock file held by this process.
#[derive(Debug)]
pub struct FileLock {
    path: PathBuf,
    owner: LockOwner,
    released: bool,
}

impl FileLock {
    pub fn acquire(
        path: &Path,
        client_id: &str,
        stale_secs: u64,
        timeout: Duration,
    ) -> Result<FileLock, QueueError> {
        let start = Instant::now();
        let mut attempt = 0;
        loop {
            let owner = LockOwner {
                client_id: client_id.to_string(),
                epoch: epoch_now(),
                nonce: unique_token(),
            };
            if try_create(path, &owner)? {
                return Ok(FileLock {
                    path: path.to_path_buf(),
                    owner,
                    released: false,
                });
            }
            if break_if_stale(path, stale_secs)? {
                continue;
            }
            if start.elapsed() >= timeout {
                return Err(QueueError::LockTimeout {
                    path: path.display().to_string(),
                    waited_s: start.elapsed().as_secs_f64(),
                });
            }
            thread::sleep(backoff(attempt));
            attempt += 1;
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn owner(&self) -> &LockOwner {
        &self.owner
    }

    /// Re-read the lock file and confirm it still carries our nonce.
    pub fn verify(&self) -> Result<(), QueueError> {
        match read_owner(&self.path)? {
            Some(o) if o.nonce == self.owner.nonce => Ok(()),
            _ => Err(QueueError::LockStolen(self.path.display().to_string())),
        }
    }

    /// Remove the lock file if it is still ours.
    pub fn release(mut self) -> Result<(), QueueError> {
        self.released = true;
        self.verify()?;
        fs::remove_file(&self.path)?;
        Ok(())
    }
}

impl Drop for FileLock {
    fn drop(&mut self) {
        if !self.released && self.verify().is_ok() {
            let _ = fs::remove_file(&self.path);
        }
    }
}

/// Holder of the database lock. Dropping it releases all three layers.
#[derive(Debug)]
pub struct LockToken {
    file: Option<FileLock>,
    advisory: Option<File>,
    trace: Option<PathBuf>,
}

impl LockToken {
    pub(crate) fn acquire(
        lock_path: &Path,
        advisory_path: &Path,
        trace: Option<&Path>,
        client_id: &str,
        stale_secs: u64,
        timeout: Duration,
    ) -> Result<LockToken, QueueError> {
        let start = Instant::now();
        let file = FileLock::acquire(lock_path, client_id, stale_secs, timeout)?;
        let advisory = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(advisory_path)?;
        let mut attempt = 0;
        loop {
            match advisory.try_lock() {
                Ok(()) => break,
                Err(fs::TryLockError::WouldBlock) => {}
                // Filesystems without advisory locks still have the other two layers.
                Err(fs::TryLockError::Error(e)) if e.kind() == ErrorKind::Unsupported => break,
                Err(fs::TryLockError::Error(e)) => return Err(e.into()),
            }
            if start.elapsed() >= timeout {
                return Err(QueueError::LockTimeout {
                    path: advisory_path.display().to_string(),
                    waited_s: start.elapsed().as_secs_f64(),
                });
            }
            thread::sleep(backoff(attempt));
            attempt += 1;
        }
        let token = LockToken {
            file: Some(file),
            advisory: Some(advisory),
            trace: trace.map(Path::to_path_buf),
        };
        token.trace_event("enter")?;
        Ok(token)
    }

    fn file(&self) -> &FileLock {
        self.file.as_ref().expect("lock token already released")
    }

    pub fn owner(&self) -> &LockOwner {
        self.file().owner()
    }

    pub fn verify(&self) -> Result<(), QueueError> {
        self.file().verify()
    }

    fn trace_event(&self, what: &str) -> Result<(), QueueError> {
        if let Some(t) = &self.trace {
            let o = self.owner();
            append_line(t, &format!("{what} {} {} {}", o.client_id, o.nonce, epoch_precise()))?;
        }
        Ok(())
    }

    pub fn release(mut self) -> Result<(), QueueError> {
        self.release_inner()
    }

    fn release_inner(&mut self) -> Result<(), QueueError> {
        let Some(file) = self.file.as_ref() else {
            return Ok(());
        };
        let stolen = file.verify();
        if stolen.is_ok() {
            self.trace_event("exit")?;
        }
        let file = self.file.take().expect("checked above");
        // A stolen lock file belongs to someone else; dropping ours leaves it alone.
        let removed = if stolen.is_ok() { file.release() } else { Ok(()) };
        if let Some(adv) = self.advisory.take() {
            let _ = adv.unlock();
        }
        stolen.and(removed)
    }
}

impl Drop for LockToken {
    fn drop(&mut self) {
        let _ = self.release_inner();
    }
}
