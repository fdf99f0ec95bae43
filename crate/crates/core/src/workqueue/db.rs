//! The flat `beams.db` file: one pipe-separated record per beam.

use std::fmt;
use std::str::FromStr;

use super::QueueError;

pub const DB_HEADER_PREFIX: &str = "#BEAMDB v1 version=";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BeamStatus {
    Available,
    Claimed,
    Done,
    Failed,
}

impl BeamStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            BeamStatus::Available => "AVAILABLE",
            BeamStatus::Claimed => "CLAIMED",
            BeamStatus::Done => "DONE",
            BeamStatus::Failed => "FAILED",
        }
    }

    /// Transitions the queue may ever perform.
    pub fn can_become(self, to: BeamStatus) -> bool {
        use BeamStatus::*;
        matches!(
            (self, to),
            (Available, Claimed)
                | (Claimed, Done)
                | (Claimed, Failed)
                | (Claimed, Available)
                | (Failed, Available)
        )
    }
}

impl fmt::Display for BeamStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BeamStatus {
    type Err = QueueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "AVAILABLE" => Ok(BeamStatus::Available),
            "CLAIMED" => Ok(BeamStatus::Claimed),
            "DONE" => Ok(BeamStatus::Done),
            "FAILED" => Ok(BeamStatus::Failed),
            other => Err(QueueError::Parse(format!("unknown status `{other}`"))),
        }
    }
}

pub const NO_CLAIMANT: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeamRecord {
    pub beam_id: String,
    pub status: BeamStatus,
    pub data_path: String,
    pub claimant: String,
    pub claimed_at: u64,
    pub finished_at: u64,
    pub attempt_count: u32,
}

impl BeamRecord {
    pub fn available(beam_id: impl Into<String>, data_path: impl Into<String>) -> Self {
        BeamRecord {
            beam_id: beam_id.into(),
            status: BeamStatus::Available,
            data_path: data_path.into(),
            claimant: NO_CLAIMANT.to_string(),
            claimed_at: 0,
            finished_at: 0,
            attempt_count: 0,
        }
    }

    pub fn check(&self) -> Result<(), QueueError> {
        let bad = |m: String| Err(QueueError::Parse(m));
        if self.status == BeamStatus::Claimed
            && (self.claimant == NO_CLAIMANT || self.claimed_at == 0)
        {
            return bad(format!("{}: CLAIMED without claimant", self.beam_id));
        }
        if matches!(self.status, BeamStatus::Done | BeamStatus::Failed)
            && self.finished_at < self.claimed_at
        {
            return bad(format!("{}: finished before claimed", self.beam_id));
        }
        Ok(())
    }
}

fn valid_field(s: &str) -> bool {
    !s.is_empty() && !s.contains(['|', '\n', '\r'])
}

impl fmt::Display for BeamRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}|{}|{}|{}|{}|{}|{}",
            self.beam_id,
            self.status,
            self.data_path,
            self.claimant,
            self.claimed_at,
            self.finished_at,
            self.attempt_count
        )
    }
}

impl FromStr for BeamRecord {
    type Err = QueueError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 7 {
            return Err(QueueError::Parse(format!(
                "expected 7 fields, found {}: `{line}`",
                f.len()
            )));
        }
        let num = |s: &str, what: &str| {
            s.parse::<u64>()
                .map_err(|_| QueueError::Parse(format!("bad {what} `{s}`")))
        };
        if !valid_field(f[0]) || !valid_field(f[2]) || !valid_field(f[3]) {
            return Err(QueueError::Parse(format!("empty field in `{line}`")));
        }
        let rec = BeamRecord {
            beam_id: f[0].to_string(),
            status: f[1].parse()?,
            data_path: f[2].to_string(),
            claimant: f[3].to_string(),
            claimed_at: num(f[4], "claimed_at")?,
            finished_at: num(f[5], "finished_at")?,
            attempt_count: num(f[6], "attempts")? as u32,
        };
        rec.check()?;
        Ok(rec)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueDatabase {
    pub version: u64,
    pub records: Vec<BeamRecord>,
}

impl QueueDatabase {
    pub fn new(records: Vec<BeamRecord>) -> Result<Self, QueueError> {
        let mut seen = std::collections::HashSet::new();
        for r in &records {
            if !valid_field(&r.beam_id) || !valid_field(&r.data_path) {
                return Err(QueueError::Parse(format!("invalid beam `{}`", r.beam_id)));
            }
            if !seen.insert(r.beam_id.as_str()) {
                return Err(QueueError::DuplicateBeamId(r.beam_id.clone()));
            }
        }
        Ok(QueueDatabase {
            version: 1,
            records,
        })
    }

    pub fn find(&self, beam_id: &str) -> Option<&BeamRecord> {
        self.records.iter().find(|r| r.beam_id == beam_id)
    }

    pub fn find_mut(&mut self, beam_id: &str) -> Option<&mut BeamRecord> {
        self.records.iter_mut().find(|r| r.beam_id == beam_id)
    }

    pub fn count(&self, status: BeamStatus) -> usize {
        self.records.iter().filter(|r| r.status == status).count()
    }

    pub fn parse(text: &str) -> Result<Self, QueueError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| QueueError::Parse("empty database".into()))?;
        let version = header
            .strip_prefix(DB_HEADER_PREFIX)
            .and_then(|v| v.trim().parse::<u64>().ok())
            .ok_or_else(|| QueueError::Parse(format!("bad header `{header}`")))?;
        let records = lines
            .filter(|l| !l.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<BeamRecord>, _>>()?;
        let mut db = QueueDatabase::new(records)?;
        db.version = version;
        Ok(db)
    }

    pub fn render(&self) -> String {
        let mut out = format!("{DB_HEADER_PREFIX}{}\n", self.version);
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }
}
