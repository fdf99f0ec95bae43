//! Read-only summary of queue progress for operators.

use std::fmt;

use super::{BeamStatus, Phase, QueueError, SharedDir};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientView {
    pub client_id: String,
    pub phase: Phase,
    pub current_beam: String,
    pub heartbeat_age_s: u64,
    pub trials_done: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorSnapshot {
    pub version: u64,
    pub total: usize,
    pub available: usize,
    pub claimed: usize,
    pub done: usize,
    pub failed: usize,
    pub clients: Vec<ClientView>,
    /// Completed beams per second since the first completed beam was claimed.
    pub rate_per_s: Option<f64>,
    pub eta_s: Option<f64>,
}

pub(super) fn snapshot(q: &SharedDir, now: u64) -> Result<MonitorSnapshot, QueueError> {
    let db = q.read_db()?;
    let done = db.count(BeamStatus::Done);
    let available = db.count(BeamStatus::Available);
    let claimed = db.count(BeamStatus::Claimed);
    let start = db
        .records
        .iter()
        .filter(|r| r.status == BeamStatus::Done)
        .map(|r| r.claimed_at)
        .min();
    let rate_per_s = match start {
        Some(t0) if done > 0 && now > t0 => Some(done as f64 / (now - t0) as f64),
        _ => None,
    };
    let remaining = available + claimed;
    let eta_s = rate_per_s.map(|r| remaining as f64 / r);

    let mut clients = Vec::new();
    for id in q.known_clients()? {
        // A half-written or foreign status file should not break monitoring.
        if let Ok(Some(s)) = q.read_status(&id) {
            clients.push(ClientView {
                heartbeat_age_s: now.saturating_sub(s.heartbeat),
                client_id: id,
                phase: s.phase,
                current_beam: s.current_beam,
                trials_done: s.trials_done,
            });
        }
    }
    Ok(MonitorSnapshot {
        version: db.version,
        total: db.records.len(),
        available,
        claimed,
        done,
        failed: db.count(BeamStatus::Failed),
        clients,
        rate_per_s,
        eta_s,
    })
}

impl fmt::Display for MonitorSnapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |n: usize| {
            if self.total == 0 {
                0.0
            } else {
                100.0 * n as f64 / self.total as f64
            }
        };
        writeln!(f, "status\tcount\tpercent")?;
        for (name, n) in [
            ("AVAILABLE", self.available),
            ("CLAIMED", self.claimed),
            ("DONE", self.done),
            ("FAILED", self.failed),
        ] {
            writeln!(f, "{name}\t{n}\t{:.1}", pct(n))?;
        }
        writeln!(f, "total\t{}\t100.0", self.total)?;
        writeln!(f, "db_version\t{}", self.version)?;
        match (self.rate_per_s, self.eta_s) {
            (Some(r), Some(eta)) => {
                writeln!(f, "rate_beams_per_min\t{:.3}", r * 60.0)?;
                writeln!(f, "eta_min\t{:.1}", eta / 60.0)?;
            }
            _ => writeln!(f, "eta_min\tundefined")?,
        }
        if !self.clients.is_empty() {
            writeln!(f, "client\tphase\tbeam\theartbeat_age_s\ttrials_done")?;
            for c in &self.clients {
                writeln!(
                    f,
                    "{}\t{}\t{}\t{}\t{}",
                    c.client_id, c.phase, c.current_beam, c.heartbeat_age_s, c.trials_done
                )?;
            }
        }
        Ok(())
    }
}
