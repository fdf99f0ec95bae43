//! `CONTROL` / `CONTROL.<client>` instruction files and per-client status.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::QueueError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Pause,
    Stop,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Run => "RUN",
            Command::Pause => "PAUSE",
            Command::Stop => "STOP",
        }
    }

    /// Parse a control file body: one word, `#` starts a comment, blank means RUN.
    pub fn parse_file(text: &str) -> Result<Command, QueueError> {
        let words: Vec<&str> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace)
            .collect();
        match words.as_slice() {
            [] => Ok(Command::Run),
            [w] => w.parse(),
            _ => Err(QueueError::Parse(format!(
                "control file must hold one word, found {}",
                words.len()
            ))),
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = QueueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "RUN" => Ok(Command::Run),
            "PAUSE" => Ok(Command::Pause),
            "STOP" => Ok(Command::Stop),
            _ => Err(QueueError::Parse(format!("unknown control command `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlState {
    pub global: Command,
    pub overrides: BTreeMap<String, Command>,
}

impl ControlState {
    pub fn command_for(&self, client_id: &str) -> Command {
        self.overrides.get(client_id).copied().unwrap_or(self.global)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Download,
    Decimate,
    Convert,
    Hunt,
    Best,
    Upload,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Idle => "IDLE",
            Phase::Download => "DOWNLOAD",
            Phase::Decimate => "DECIMATE",
            Phase::Convert => "CONVERT",
            Phase::Hunt => "HUNT",
            Phase::Best => "BEST",
            Phase::Upload => "UPLOAD",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = QueueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "IDLE" => Phase::Idle,
            "DOWNLOAD" => Phase::Download,
            "DECIMATE" => Phase::Decimate,
            "CONVERT" => Phase::Convert,
            "HUNT" => Phase::Hunt,
            "BEST" => Phase::Best,
            "UPLOAD" => Phase::Upload,
            _ => return Err(QueueError::Parse(format!("unknown phase `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientStatus {
    pub client_id: String,
    pub current_beam: String,
    pub phase: Phase,
    pub heartbeat: u64,
    pub trials_done: u64,
}

impl ClientStatus {
    pub fn idle(client_id: &str, heartbeat: u64) -> Self {
        ClientStatus {
            client_id: client_id.to_string(),
            current_beam: super::db::NO_CLAIMANT.to_string(),
            phase: Phase::Idle,
            heartbeat,
            trials_done: 0,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "{} {} {} {}\n",
            self.phase, self.current_beam, self.heartbeat, self.trials_done
        )
    }

    pub fn parse(client_id: &str, text: &str) -> Result<Self, QueueError> {
        let f: Vec<&str> = text.split_whitespace().collect();
        if f.len() != 4 {
            return Err(QueueError::Parse(format!("bad status line `{}`", text.trim())));
        }
        let num = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| QueueError::Parse(format!("bad number `{s}` in status")))
        };
        Ok(ClientStatus {
            client_id: client_id.to_string(),
            phase: f[0].parse()?,
            current_beam: f[1].to_string(),
            heartbeat: num(f[2])?,
            trials_done: num(f[3])?,
        })
    }
}
