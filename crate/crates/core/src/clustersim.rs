//! Event-driven model of the processing cluster: machines described by
//! per-stage times, one shared network link, self-scheduled beam claims.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::{self, Write as _};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("InvalidProfile: {0}")]
    InvalidProfile(String),
    #[error("InvalidInput: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineProfile {
    pub name: String,
    pub download_s: f64,
    pub decimate_s: f64,
    pub sc_td_s: f64,
    pub filterbank_s: f64,
    pub hunt_trial_s: f64,
    pub best_s: f64,
    pub n_trials: usize,
}

impl MachineProfile {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        download_s: f64,
        decimate_s: f64,
        sc_td_s: f64,
        filterbank_s: f64,
        hunt_trial_s: f64,
        best_s: f64,
        n_trials: usize,
    ) -> Self {
        MachineProfile {
            name: name.to_string(),
            download_s,
            decimate_s,
            sc_td_s,
            filterbank_s,
            hunt_trial_s,
            best_s,
            n_trials,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let times = [
            self.download_s,
            self.decimate_s,
            self.sc_td_s,
            self.filterbank_s,
            self.hunt_trial_s,
            self.best_s,
        ];
        if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(SimError::InvalidProfile(format!(
                "{}: stage times must be finite and non-negative",
                self.name
            )));
        }
        if !(self.total_s() > 0.0) {
            return Err(SimError::InvalidProfile(format!("{}: zero total time", self.name)));
        }
        Ok(())
    }

    /// Everything after the download.
    pub fn compute_s(&self) -> f64 {
        self.decimate_s
            + self.sc_td_s
            + self.filterbank_s
            + self.n_trials as f64 * self.hunt_trial_s
            + self.best_s
    }

    pub fn total_s(&self) -> f64 {
        self.download_s + self.compute_s()
    }

    pub fn total_min(&self) -> f64 {
        self.total_s() / 60.0
    }

    fn download_ms(&self) -> u64 {
        secs_to_ms(self.download_s)
    }

    fn compute_ms(&self) -> u64 {
        secs_to_ms(self.decimate_s)
            + secs_to_ms(self.sc_td_s)
            + secs_to_ms(self.filterbank_s)
            + self.n_trials as u64 * secs_to_ms(self.hunt_trial_s)
            + secs_to_ms(self.best_s)
    }
}

/// Stage times in the table are given to 0.1 s, so whole milliseconds
/// keep the stagger simulation in exact integer arithmetic.
fn secs_to_ms(s: f64) -> u64 {
    (s * 1000.0).round() as u64
}

/// The seven measured client machines, 450 DM trials each.
pub fn measured_profiles() -> Vec<MachineProfile> {
    const ROWS: [(&str, [f64; 6]); 7] = [
        ("client0", [44.5, 281.7, 514.9, 55.7, 11.3, 12.3]),
        ("client1", [40.6, 282.4, 513.8, 49.8, 11.4, 12.9]),
        ("client2", [33.2, 282.9, 512.9, 41.6, 11.4, 12.7]),
        ("client3", [31.4, 298.2, 545.9, 53.6, 12.1, 13.1]),
        ("client4", [33.9, 284.7, 514.8, 55.5, 11.4, 12.6]),
        ("client5", [36.7, 66.4, 154.7, 19.5, 3.2, 3.6]),
        ("client6", [35.9, 295.8, 539.3, 54.4, 12.1, 13.3]),
    ];
    ROWS.iter()
        .map(|(name, t)| MachineProfile::new(name, t[0], t[1], t[2], t[3], t[4], t[5], 450))
        .collect()
}

/// Per-beam totals in minutes as printed alongside the stage times.
pub const MEASURED_TOTAL_MIN: [f64; 7] = [99.9, 100.3, 100.4, 106.7, 100.8, 28.3, 106.5];

pub fn download_fraction(p: &MachineProfile) -> f64 {
    let total = p.total_s();
    if total > 0.0 {
        p.download_s / total
    } else {
        1.0
    }
}

/// Smallest machine count for which back-to-back downloads of one beam
/// each keep the link busy for at least one compute period.
pub fn saturation_point(p: &MachineProfile, link_mb_s: f64, beam_mb: f64) -> Result<u64, SimError> {
    if !(link_mb_s > 0.0 && beam_mb > 0.0) {
        return Err(SimError::InvalidInput("link rate and beam size must be positive".into()));
    }
    let per_download = beam_mb / link_mb_s;
    // Guard against 165.0000000001 from representation error.
    let n = (p.compute_s() / per_download - 1e-9).ceil();
    Ok(n.max(1.0) as u64)
}

/// Beams per second the machines would finish if they never waited.
pub fn rate_sum(profiles: &[MachineProfile]) -> f64 {
    profiles.iter().map(|p| 1.0 / p.total_s()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub beam: usize,
    pub machine: usize,
    pub claim_s: f64,
    pub download_start_s: f64,
    pub download_end_s: f64,
    pub done_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub makespan_s: f64,
    pub beams_per_machine: Vec<usize>,
    pub link_busy_s: f64,
    pub overlap_count: usize,
    pub events: Vec<SimEvent>,
}

impl SimResult {
    pub fn link_busy_fraction(&self) -> f64 {
        if self.makespan_s > 0.0 {
            self.link_busy_s / self.makespan_s
        } else {
            0.0
        }
    }

    /// Observed completion rate with start-up and tail effects removed:
    /// each machine contributes (k - 1) beams over the span between its
    /// first and last completion.
    pub fn steady_state_rate(&self) -> Option<f64> {
        let n_machines = self.beams_per_machine.len();
        let mut first = vec![f64::INFINITY; n_machines];
        let mut last = vec![f64::NEG_INFINITY; n_machines];
        for e in &self.events {
            first[e.machine] = first[e.machine].min(e.done_s);
            last[e.machine] = last[e.machine].max(e.done_s);
        }
        let mut rate = 0.0;
        for m in 0..n_machines {
            let k = self.beams_per_machine[m];
            if k < 2 || last[m] <= first[m] {
                return None;
            }
            rate += (k - 1) as f64 / (last[m] - first[m]);
        }
        Some(rate)
    }

    /// Beams finished per unit of the ideal no-wait cluster capacity.
    pub fn efficiency(&self, profiles: &[MachineProfile]) -> f64 {
        self.events.len() as f64 / (self.makespan_s * rate_sum(profiles))
    }

    pub fn events_csv(&self) -> String {
        let mut out = String::from("beam,machine,claim_s,download_start_s,download_end_s,done_s\n");
        for e in &self.events {
            let _ = writeln!(
                out,
                "{},{},{:.3},{:.3},{:.3},{:.3}",
                e.beam, e.machine, e.claim_s, e.download_start_s, e.download_end_s, e.done_s
            );
        }
        out
    }
}

/// Number of pairs of download intervals with overlapping interiors.
pub fn count_overlaps(events: &[SimEvent]) -> usize {
    let mut iv: Vec<(f64, f64)> = events
        .iter()
        .filter(|e| e.download_end_s > e.download_start_s)
        .map(|e| (e.download_start_s, e.download_end_s))
        .collect();
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut count = 0;
    for i in 0..iv.len() {
        for j in i + 1..iv.len() {
            if iv[j].0 >= iv[i].1 {
                break;
            }
            count += 1;
        }
    }
    count
}

pub fn simulate(
    profiles: &[MachineProfile],
    n_beams: usize,
    stagger: bool,
) -> Result<SimResult, SimError> {
    if profiles.is_empty() {
        return Err(SimError::InvalidInput("no machine profiles".into()));
    }
    if n_beams == 0 {
        return Err(SimError::InvalidInput("need at least one beam".into()));
    }
    for p in profiles {
        p.validate()?;
    }
    let mut result = if stagger {
        simulate_staggered(profiles, n_beams)
    } else {
        simulate_shared_link(profiles, n_beams)
    };
    result.overlap_count = count_overlaps(&result.events);
    Ok(result)
}

/// Downloads queue FIFO for the single link; everything in integer ms.
fn simulate_staggered(profiles: &[MachineProfile], n_beams: usize) -> SimResult {
    let mut ready: BinaryHeap<Reverse<(u64, usize)>> =
        (0..profiles.len()).map(|m| Reverse((0, m))).collect();
    let mut link_free = 0u64;
    let mut link_busy = 0u64;
    let mut counts = vec![0; profiles.len()];
    let mut events = Vec::with_capacity(n_beams);
    let mut makespan = 0u64;
    for beam in 0..n_beams {
        let Reverse((t, m)) = ready.pop().expect("one entry per machine");
        let p = &profiles[m];
        let start = t.max(link_free);
        let end = start + p.download_ms();
        link_free = end;
        link_busy += end - start;
        let done = end + p.compute_ms();
        makespan = makespan.max(done);
        counts[m] += 1;
        events.push(SimEvent {
            beam,
            machine: m,
            claim_s: t as f64 / 1e3,
            download_start_s: start as f64 / 1e3,
            download_end_s: end as f64 / 1e3,
            done_s: done as f64 / 1e3,
        });
        ready.push(Reverse((done, m)));
    }
    events.sort_by(|a, b| a.done_s.total_cmp(&b.done_s).then(a.beam.cmp(&b.beam)));
    SimResult {
        makespan_s: makespan as f64 / 1e3,
        beams_per_machine: counts,
        link_busy_s: link_busy as f64 / 1e3,
        overlap_count: 0,
        events,
    }
}

#[derive(Clone, Copy)]
enum State {
    Downloading { beam: usize, claimed: f64, started: f64, left_s: f64 },
    Computing { until: f64 },
    Finished,
}

/// Downloads start as soon as a machine is free and share the link
/// bandwidth equally while they overlap.
fn simulate_shared_link(profiles: &[MachineProfile], n_beams: usize) -> SimResult {
    let n = profiles.len();
    let mut next_beam = 0usize;
    let mut now = 0.0f64;
    let mut link_busy = 0.0;
    let mut counts = vec![0; n];
    let mut events = Vec::with_capacity(n_beams);
    let mut pending: Vec<Option<SimEvent>> = vec![None; n];
    let mut state = vec![State::Finished; n];

    let claim = |m: usize, now: f64, next_beam: &mut usize| -> State {
        if *next_beam >= n_beams {
            return State::Finished;
        }
        let beam = *next_beam;
        *next_beam += 1;
        State::Downloading {
            beam,
            claimed: now,
            started: now,
            left_s: profiles[m].download_s,
        }
    };
    for (m, s) in state.iter_mut().enumerate() {
        *s = claim(m, 0.0, &mut next_beam);
    }

    loop {
        let active = state
            .iter()
            .filter(|s| matches!(s, State::Downloading { .. }))
            .count();
        let mut dt = f64::INFINITY;
        for s in &state {
            match *s {
                State::Downloading { left_s, .. } => dt = dt.min(left_s * active as f64),
                State::Computing { until } => dt = dt.min(until - now),
                State::Finished => {}
            }
        }
        if !dt.is_finite() {
            break;
        }
        let dt = dt.max(0.0);
        if active > 0 {
            link_busy += dt;
        }
        now += dt;
        for m in 0..n {
            match state[m] {
                State::Downloading { beam, claimed, started, left_s } => {
                    let left = left_s - dt / active as f64;
                    if left <= 1e-9 {
                        pending[m] = Some(SimEvent {
                            beam,
                            machine: m,
                            claim_s: claimed,
                            download_start_s: started,
                            download_end_s: now,
                            done_s: 0.0,
                        });
                        state[m] = State::Computing {
                            until: now + profiles[m].compute_s(),
                        };
                    } else {
                        state[m] = State::Downloading { beam, claimed, started, left_s: left };
                    }
                }
                State::Computing { until } if until - now <= 1e-9 => {
                    let mut e = pending[m].take().expect("download precedes compute");
                    e.done_s = now;
                    events.push(e);
                    counts[m] += 1;
                    state[m] = claim(m, now, &mut next_beam);
                }
                _ => {}
            }
        }
    }
    SimResult {
        makespan_s: now,
        beams_per_machine: counts,
        link_busy_s: link_busy,
        overlap_count: 0,
        events,
    }
}

/// CSV with header `name,download_s,decimate_s,sc_td_s,filterbank_s,hunt_trial_s,best_s,n_trials`.
pub fn parse_profiles(text: &str) -> Result<Vec<MachineProfile>, SimError> {
    let mut out = Vec::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if !header_seen {
            header_seen = true;
            if line.starts_with("name,") {
                continue;
            }
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 8 {
            return Err(SimError::InvalidProfile(format!(
                "line {}: expected 8 fields, found {}",
                i + 1,
                f.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| SimError::InvalidProfile(format!("line {}: bad number `{s}`", i + 1)))
        };
        let p = MachineProfile::new(
            f[0],
            num(f[1])?,
            num(f[2])?,
            num(f[3])?,
            num(f[4])?,
            num(f[5])?,
            num(f[6])?,
            f[7].parse()
                .map_err(|_| SimError::InvalidProfile(format!("line {}: bad n_trials `{}`", i + 1, f[7])))?,
        );
        p.validate()?;
        out.push(p);
    }
    Ok(out)
}

pub fn profiles_csv(profiles: &[MachineProfile]) -> String {
    let mut out = String::from("name,download_s,decimate_s,sc_td_s,filterbank_s,hunt_trial_s,best_s,n_trials\n");
    for p in profiles {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            p.name, p.download_s, p.decimate_s, p.sc_td_s, p.filterbank_s, p.hunt_trial_s, p.best_s, p.n_trials
        );
    }
    out
}

/// Summary table printed by the `simulate` command.
pub struct SimSummary<'a> {
    pub profiles: &'a [MachineProfile],
    pub result: &'a SimResult,
}

impl fmt::Display for SimSummary<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = self.result;
        writeln!(f, "machine\tbeams\ttotal_min\tdownload_fraction")?;
        for (p, n) in self.profiles.iter().zip(&r.beams_per_machine) {
            writeln!(f, "{}\t{}\t{:.2}\t{:.4}", p.name, n, p.total_min(), download_fraction(p))?;
        }
        writeln!(f, "beams\t{}", r.events.len())?;
        writeln!(f, "makespan_min\t{:.2}", r.makespan_s / 60.0)?;
        writeln!(f, "makespan_days\t{:.3}", r.makespan_s / 86400.0)?;
        writeln!(f, "ideal_rate_beams_per_min\t{:.6}", rate_sum(self.profiles) * 60.0)?;
        match r.steady_state_rate() {
            Some(rate) => writeln!(f, "observed_rate_beams_per_min\t{:.6}", rate * 60.0)?,
            None => writeln!(f, "observed_rate_beams_per_min\tundefined")?,
        }
        writeln!(f, "efficiency\t{:.4}", r.efficiency(self.profiles))?;
        writeln!(f, "link_busy_fraction\t{:.4}", r.link_busy_fraction())?;
        writeln!(f, "download_overlaps\t{}", r.overlap_count)
    }
}
