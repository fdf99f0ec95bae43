//! Acceptance harness. Each test prints one `ACCEPT #n ...: PASS|FAIL` line
//! and then asserts the verdict. Run with `--nocapture` to see the lines.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use beamforge::archive::coords;
use beamforge::beamio::{self, FilterbankBlock, ObservationParams, PulsarSpec};
use beamforge::clientloop::{self, ClientConfig};
use beamforge::clustersim;
use beamforge::dedisp::{self, TimeSeries};
use beamforge::periodsearch::{self, BirdieList, SearchParams};
use beamforge::sensitivity::{self, SensitivityParams};
use beamforge::workqueue::{BeamStatus, QueueDatabase, SharedDir, DB_FILE, MANIFEST_FILE};

const BIN: &str = env!("CARGO_BIN_EXE_beamforge");

fn verdict(n: u32, name: &str, ok: bool, detail: &str) {
    println!(
        "ACCEPT #{n} {name}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn within(a: f64, b: f64, tol: f64) -> bool {
    // Cells are printed decimals; allow for their binary representation.
    (a - b).abs() <= tol + 1e-9
}

// ---------------------------------------------------------------- #1

#[test]
fn criterion_01_cost_table() {
    let t = Instant::now();
    let out = Command::new(BIN).args(["cost-table", "--defaults"]).output().unwrap();
    let elapsed = t.elapsed().as_secs_f64();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: HashMap<&str, Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0], f[1..].to_vec())
        })
        .collect();

    // (row, DVD, DLT, ratio, tolerance on the media cells)
    let expected: [(&str, f64, f64, Option<f64>, f64); 9] = [
        ("units", 233.0, 22.0, Some(10.59), 0.0),
        ("cost_per_unit_usd", 1.36, 65.0, Some(0.02), 0.0),
        ("writer_cost_usd", 400.0, 2300.0, Some(0.17), 0.0),
        ("other_costs_usd", 45.0, 0.0, None, 0.0),
        ("capacity_gb", 4.7, 35.0, Some(0.13), 0.0),
        ("fill_fraction", 0.53, 0.75, Some(0.70), 0.01),
        ("cost_per_gb_max_usd", 0.29, 1.86, Some(0.16), 0.01),
        ("cost_per_gb_actual_usd", 0.55, 2.48, Some(0.22), 0.01),
        ("total_cost_usd", 760.0, 3730.0, Some(0.20), 5.0),
    ];
    let mut bad = Vec::new();
    let mut cells = 0;
    for (row, dvd, dlt, ratio, tol) in expected {
        let Some(f) = rows.get(row) else {
            bad.push(format!("missing row {row}"));
            continue;
        };
        let num = |s: &str| s.trim().parse::<f64>().ok();
        for (got, want) in [(num(f[0]), dvd), (num(f[1]), dlt)] {
            cells += 1;
            match got {
                Some(g) if within(g, want, tol) => {}
                g => bad.push(format!("{row}: {g:?} vs {want}")),
            }
        }
        cells += 1;
        match (ratio, f.get(2).map(|s| s.trim()).unwrap_or("")) {
            (None, "") => {}
            (Some(r), s) if num(s).is_some_and(|g| within(g, r, 0.01)) => {}
            (r, s) => bad.push(format!("{row} ratio: `{s}` vs {r:?}")),
        }
    }
    let ok = bad.is_empty() && elapsed < 1.0;
    verdict(
        1,
        "cost table",
        ok,
        &format!("{cells} cells, {} mismatches {:?}, runtime {elapsed:.3} s", bad.len(), bad),
    );
}

// ---------------------------------------------------------------- #2

#[test]
fn criterion_02_timing_identity() {
    // Stage times per client: download, decimate, sc_td, filterbank,
    // hunt per trial, best (seconds); then the printed total (minutes).
    const TABLE: [([f64; 6], f64); 7] = [
        ([44.5, 281.7, 514.9, 55.7, 11.3, 12.3], 99.9),
        ([40.6, 282.4, 513.8, 49.8, 11.4, 12.9], 100.3),
        ([33.2, 282.9, 512.9, 41.6, 11.4, 12.7], 100.4),
        ([31.4, 298.2, 545.9, 53.6, 12.1, 13.1], 106.7),
        ([33.9, 284.7, 514.8, 55.5, 11.4, 12.6], 100.8),
        ([36.7, 66.4, 154.7, 19.5, 3.2, 3.6], 28.3),
        ([35.9, 295.8, 539.3, 54.4, 12.1, 13.3], 106.5),
    ];
    let profiles = clustersim::measured_profiles();
    let mut worst: f64 = 0.0;
    let mut ok = profiles.len() == 7;
    for (p, (t, printed)) in profiles.iter().zip(TABLE) {
        let got = [p.download_s, p.decimate_s, p.sc_td_s, p.filterbank_s, p.hunt_trial_s, p.best_s];
        ok &= got == t && p.n_trials == 450;
        let oracle_min = (t[0] + t[1] + t[2] + t[3] + 450.0 * t[4] + t[5]) / 60.0;
        ok &= (p.total_min() - oracle_min).abs() < 1e-9;
        let err = (p.total_min() - printed).abs();
        worst = worst.max(err);
        ok &= err <= 0.5;
    }
    let celeron: Vec<f64> = profiles
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != 5)
        .map(|(_, p)| p.total_s())
        .collect();
    let celeron_avg = celeron.iter().sum::<f64>() / celeron.len() as f64;
    let frac_celeron = 36.0 / celeron_avg;
    let frac_p4 = 36.0 / profiles[5].total_s();
    ok &= (frac_celeron - 0.006).abs() <= 0.003 && (frac_p4 - 0.02).abs() <= 0.003;
    verdict(
        2,
        "timing identity",
        ok,
        &format!(
            "worst |sum - printed| {worst:.3} min; download fraction Celeron {:.3}%, P4 {:.3}%",
            100.0 * frac_celeron,
            100.0 * frac_p4
        ),
    );
}

// ---------------------------------------------------------------- #3

/// Zero when no two download intervals share interior time.
fn overlaps_by_sweep(events: &[clustersim::SimEvent]) -> usize {
    let mut iv: Vec<(f64, f64)> = events
        .iter()
        .map(|e| (e.download_start_s, e.download_end_s))
        .filter(|(a, b)| b > a)
        .collect();
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut reach = f64::NEG_INFINITY;
    let mut n = 0;
    for (a, b) in iv {
        if a < reach {
            n += 1;
        }
        reach = reach.max(b);
    }
    n
}

#[test]
fn criterion_03_simulator_throughput() {
    let profiles = clustersim::measured_profiles();
    let ideal: f64 = profiles.iter().map(|p| 1.0 / p.total_s()).sum();
    let t = Instant::now();
    let main = clustersim::simulate(&profiles, 3016, true).unwrap();
    let mut traces = vec![main.clone()];
    for n in [7, 100, 1000] {
        traces.push(clustersim::simulate(&profiles, n, true).unwrap());
    }
    let elapsed = t.elapsed().as_secs_f64();

    let rate = main.steady_state_rate().unwrap();
    let rate_ratio = rate / ideal;
    let eff = main.events.len() as f64 / (main.makespan_s * ideal);
    let overlaps: Vec<usize> = traces.iter().map(|r| overlaps_by_sweep(&r.events)).collect();
    let reported: Vec<usize> = traces.iter().map(|r| r.overlap_count).collect();

    let rate_ok = (rate_ratio - 1.0).abs() <= 0.001;
    let eff_ok = eff >= 0.99;
    let ovl_ok = overlaps.iter().all(|&n| n == 0) && reported.iter().all(|&n| n == 0);
    verdict(
        3,
        "simulator throughput",
        rate_ok && eff_ok && ovl_ok && elapsed < 5.0,
        &format!(
            "steady rate / sum(1/total) = {rate_ratio:.5} [{}], efficiency {eff:.4} [{}], \
             overlaps {overlaps:?} [{}], runtime {elapsed:.2} s",
            if rate_ok { "ok" } else { "outside 0.1%" },
            if eff_ok { "ok" } else { "low" },
            if ovl_ok { "ok" } else { "overlap" },
        ),
    );
}

// ---------------------------------------------------------------- #4

/// Shift each channel by its own dispersion delay, sum, fold at the given
/// period and return the best boxcar S/N against the off-window bins.
fn folded_snr(block: &FilterbankBlock, dm: f64, period_ms: f64) -> f64 {
    let p = &block.params;
    let t = p.t_samp_ms();
    let nch = block.n_channels();
    let ns = block.n_samples();
    let f_top = p.channel_freq_mhz(0);
    let shifts: Vec<usize> = (0..nch)
        .map(|c| {
            let f = p.channel_freq_mhz(c as u32);
            let d_ms = 4.148808e6 * dm * (f.powi(-2) - f_top.powi(-2));
            (d_ms / t).round() as usize
        })
        .collect();
    let max_shift = *shifts.iter().max().unwrap();
    let n_bins = 50;
    let mut sum = vec![0.0; n_bins];
    let mut cnt = vec![0usize; n_bins];
    for s in 0..ns - max_shift {
        let v: f64 = (0..nch).map(|c| block.sample(s + shifts[c], c) as f64).sum();
        let phase = ((s as f64 + 0.5) * t / period_ms).fract();
        let b = ((phase * n_bins as f64) as usize).min(n_bins - 1);
        sum[b] += v;
        cnt[b] += 1;
    }
    let prof: Vec<f64> = sum.iter().zip(&cnt).map(|(s, &c)| s / c as f64).collect();
    let mut best = f64::NEG_INFINITY;
    for w in 1..=8 {
        for start in 0..n_bins {
            let on: HashSet<usize> = (start..start + w).map(|i| i % n_bins).collect();
            let off: Vec<f64> = (0..n_bins).filter(|i| !on.contains(i)).map(|i| prof[i]).collect();
            let mu = off.iter().sum::<f64>() / off.len() as f64;
            let var = off.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (off.len() - 1) as f64;
            let signal: f64 = on.iter().map(|&i| prof[i] - mu).sum();
            best = best.max(signal / (var.sqrt() * (w as f64).sqrt()));
        }
    }
    best
}

#[test]
fn criterion_04_pipeline_recovery() {
    const SEEDS: u64 = 20;
    const PERIOD_MS: f64 = 100.0;
    const DM: f64 = 60.0;
    // Default pulse shape (5% duty); amplitude chosen for folded S/N well above 12.
    const AMPLITUDE: f64 = 0.005;
    let params = ObservationParams::survey(beamio::DESK_SAMPLES);
    let pulsar = PulsarSpec::new(PERIOD_MS, DM).with_amplitude(AMPLITUDE);
    let cfg = ClientConfig::new("acceptance", "/nonexistent", "/nonexistent");
    let grid = cfg.dm_grid().unwrap();
    let dm_step = grid.dm_values[1] - grid.dm_values[0];

    let mut recovered = 0;
    let mut harmonic_top = 0;
    let mut min_fold = f64::INFINITY;
    let mut worst_seed_s: f64 = 0.0;
    let mut tops = Vec::new();
    for seed in 0..SEEDS {
        let t = Instant::now();
        let raw = beamio::synthesize_beam(&params, Some(&pulsar), 1000 + seed).unwrap();
        let dec = beamio::decimate(&raw, 4, 16).unwrap();
        assert_eq!(raw.n_samples() * raw.n_channels(), 64 * dec.n_samples() * dec.n_channels());
        let cands = clientloop::run_pipeline(&raw, &cfg).unwrap();
        worst_seed_s = worst_seed_s.max(t.elapsed().as_secs_f64());

        let fold = folded_snr(&dec, DM, PERIOD_MS);
        min_fold = min_fold.min(fold);
        let n_fft = dec.n_samples().next_power_of_two() as f64;
        let t_obs_ms = n_fft * dec.params.t_samp_ms();
        let true_bin = t_obs_ms / PERIOD_MS;
        let Some(top) = cands.first() else {
            tops.push("none".to_string());
            continue;
        };
        let bin_ok = (top.fourier_bin as f64 - true_bin).abs() <= 1.0;
        let dm_ok = (top.dm - DM).abs() <= 2.0 * dm_step;
        if bin_ok && dm_ok {
            recovered += 1;
        } else if (top.fourier_bin as f64 / true_bin).round() >= 2.0 {
            harmonic_top += 1;
        }
        tops.push(format!("{:.3}ms@{:.1}", top.period_ms, top.dm));
    }
    let ok = recovered >= 19 && min_fold >= 12.0 && worst_seed_s < 300.0;
    verdict(
        4,
        "pipeline recovery",
        ok,
        &format!(
            "{recovered}/{SEEDS} recovered, {harmonic_top} topped by a harmonic; min folded S/N \
             {min_fold:.1}; slowest seed {worst_seed_s:.1} s; tops {tops:?}"
        ),
    );
}

// ---------------------------------------------------------------- #5

fn bit(block: &FilterbankBlock, s: usize, c: usize) -> u32 {
    let bps = block.n_channels().div_ceil(8);
    let byte = block.data[s * bps + c / 8];
    ((byte >> (7 - c % 8)) & 1) as u32
}

#[test]
fn criterion_05_decimation() {
    let desk = ObservationParams::survey(1 << 14);
    let raw = beamio::synthesize_beam(&desk, None, 5).unwrap();
    let dec = beamio::decimate(&raw, 4, 16).unwrap();
    let reduction = (raw.n_channels() * raw.n_samples()) as f64 / (dec.n_channels() * dec.n_samples()) as f64;
    let mut ok = reduction == 64.0
        && dec.n_channels() == 24
        && (dec.params.t_samp_ms() - 2.0).abs() < 1e-12
        && (dec.params.channel_bw_mhz() - 12.0).abs() < 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut mismatches = 0;
    for case in 0..1000 {
        let cf = [1, 2, 3, 4, 6, 8][rng.gen_range(0..6)];
        let tf = [1, 2, 4, 8, 16, 32][rng.gen_range(0..6)];
        if cf * tf > 255 {
            continue;
        }
        let nch = cf * rng.gen_range(1..=6);
        let ns = tf * rng.gen_range(1..=12);
        let p = ObservationParams::new(nch as u32, 3.0, 1516.5, 0.125, ns as u64, 1).unwrap();
        let b = beamio::synthesize_beam(&p, None, case).unwrap();
        let d = beamio::decimate(&b, cf, tf).unwrap();
        let mut same = d.n_channels() == nch / cf && d.n_samples() == ns / tf;
        for t in 0..ns / tf {
            for g in 0..nch / cf {
                let mut want = 0;
                for s in t * tf..(t + 1) * tf {
                    for c in g * cf..(g + 1) * cf {
                        want += bit(&b, s, c);
                    }
                }
                same &= d.data[t * (nch / cf) + g] as u32 == want;
            }
        }
        if !same {
            mismatches += 1;
        }
    }
    ok &= mismatches == 0;
    verdict(
        5,
        "decimation",
        ok,
        &format!("reduction {reduction}x, {mismatches} oracle mismatches in 1000 random blocks"),
    );
}

// ---------------------------------------------------------------- #6

#[test]
fn criterion_06_nyquist() {
    const RUNS: u64 = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let grid = dedisp::make_dm_grid(2, 0.0, 20.0).unwrap();
    let params = SearchParams::default();
    let mut shortest = f64::INFINITY;
    let mut below = 0;
    let mut emitted = 0usize;
    let mut at_nyquist = 0;
    for run in 0..RUNS {
        let inject = run % 2 == 1;
        let pulsar = inject.then(|| {
            let period = if rng.gen_bool(0.3) { 4.0 } else { rng.gen_range(4.0..60.0) };
            PulsarSpec::new(period, rng.gen_range(0.0..20.0))
                .with_duty(rng.gen_range(0.05..0.6))
                .with_amplitude(rng.gen_range(0.05..0.45))
        });
        // Every tenth run goes through 16x time aggregation of 0.125 ms data.
        let block = if run % 10 == 0 {
            let p = ObservationParams::new(8, 3.0, 1516.5, 0.125, 16 * 512, 1).unwrap();
            let raw = beamio::synthesize_beam(&p, pulsar.as_ref(), run).unwrap();
            beamio::decimate(&raw, 1, 16).unwrap()
        } else {
            let p = ObservationParams::new(8, 3.0, 1516.5, 2.0, 512, 1).unwrap();
            beamio::synthesize_beam(&p, pulsar.as_ref(), run).unwrap()
        };
        assert_eq!(block.params.t_samp_ms(), 2.0);
        let cands = periodsearch::hunt(&block, &grid, &BirdieList::default(), &params, &|| {}).unwrap();
        for c in cands {
            emitted += 1;
            shortest = shortest.min(c.period_ms);
            if c.period_ms < 4.0 {
                below += 1;
            }
            if c.period_ms == 4.0 {
                at_nyquist += 1;
            }
        }
    }
    verdict(
        6,
        "Nyquist property",
        below == 0 && emitted > 0,
        &format!(
            "{RUNS} runs, {emitted} candidates, {at_nyquist} at exactly 4 ms, shortest {shortest} ms, {below} below 4 ms"
        ),
    );
}

// ---------------------------------------------------------------- #7

struct Slot {
    child: Child,
    incarnation: u32,
    finished: bool,
}

fn spawn_client(shared: &Path, scratch: &Path, trace: &Path, slot: usize, inc: u32) -> Child {
    let id = format!("c{slot:02}r{inc}");
    Command::new(BIN)
        .args(["client", "--shared"])
        .arg(shared)
        .args(["--id", &id, "--scratch"])
        .arg(scratch.join(&id))
        .args(["--chan-factor", "2", "--time-factor", "4", "--trials", "2", "--dm-max", "10"])
        .args(["--poll", "0.05", "--heartbeat", "0.2", "--stagger-slot", "0.2", "--lock-stale", "5"])
        .arg("--lock-trace")
        .arg(trace)
        .args(["--fault-rate", "0.05", "--fault-seed"])
        .arg((slot as u64 * 1000 + inc as u64).to_string())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap()
}

/// Lock holders from the trace must never interleave. An `enter` with no
/// matching `exit` is allowed only when its holder died and the next entry
/// waited out the stale timeout.
fn lock_violations(trace: &str, stale_s: f64) -> (usize, usize) {
    let mut held: Option<(String, f64)> = None;
    let mut violations = 0;
    let mut entries = 0;
    for line in trace.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        let (what, nonce, at) = (f[0], f[2].to_string(), f[3].parse::<f64>().unwrap());
        match what {
            "enter" => {
                entries += 1;
                if let Some((_, since)) = &held {
                    if at - since < stale_s {
                        violations += 1;
                    }
                }
                held = Some((nonce, at));
            }
            "exit" => match &held {
                Some((n, _)) if *n == nonce => held = None,
                _ => violations += 1,
            },
            _ => violations += 1,
        }
    }
    (violations, entries)
}

#[test]
fn criterion_07_queue_correctness() {
    const BEAMS: usize = 500;
    const CLIENTS: usize = 16;
    const STALE_S: u64 = 2;
    let dir = tempfile::tempdir().unwrap();
    let shared = dir.path().join("shared");
    let scratch = dir.path().join("scratch");
    let trace = dir.path().join("lock.trace");
    fs::create_dir_all(shared.join("data")).unwrap();
    let p = ObservationParams::new(8, 3.0, 1516.5, 0.125, 256, 1).unwrap();
    for i in 0..BEAMS {
        let b = beamio::synthesize_beam(&p.clone().with_beam_id(format!("B{i:04}")), None, i as u64).unwrap();
        beamio::write_block(&b, shared.join("data").join(format!("B{i:04}.fil"))).unwrap();
    }
    let st = Command::new(BIN)
        .args(["db-init", "--shared"])
        .arg(&shared)
        .args(["--scan", "data"])
        .status()
        .unwrap();
    assert!(st.success());

    let start = Instant::now();
    let mut queue = SharedDir::new(&shared);
    queue.lock_trace = Some(trace.clone());
    let mut slots: Vec<Slot> = (0..CLIENTS)
        .map(|s| Slot { child: spawn_client(&shared, &scratch, &trace, s, 0), incarnation: 0, finished: false })
        .collect();
    let mut kills = 0;
    let mut other_exits = Vec::new();
    let mut samples = 0;
    let mut unparsable = 0;
    let mut requeued = 0;
    let mut last_requeue = Instant::now();
    let timeout = Duration::from_secs(115);
    let all_done = loop {
        match fs::read_to_string(shared.join(DB_FILE)).map(|t| QueueDatabase::parse(&t)) {
            Ok(Ok(_)) => {}
            _ => unparsable += 1,
        }
        samples += 1;
        for (i, s) in slots.iter_mut().enumerate() {
            if s.finished {
                continue;
            }
            if let Some(status) = s.child.try_wait().unwrap() {
                match status.code() {
                    Some(137) => {
                        kills += 1;
                        // A fresh identity leaves the dead claim for requeue_stale.
                        s.incarnation += 1;
                        s.child = spawn_client(&shared, &scratch, &trace, i, s.incarnation);
                    }
                    Some(0) => s.finished = true,
                    other => {
                        other_exits.push(other);
                        s.finished = true;
                    }
                }
            }
        }
        if last_requeue.elapsed() >= Duration::from_secs(1) {
            requeued += queue.requeue_stale(STALE_S).unwrap();
            last_requeue = Instant::now();
        }
        if slots.iter().all(|s| s.finished) {
            let db = queue.read_db().unwrap();
            if db.count(BeamStatus::Done) == BEAMS {
                break true;
            }
            if db.count(BeamStatus::Available) > 0 {
                for (i, s) in slots.iter_mut().enumerate() {
                    s.incarnation += 1;
                    s.child = spawn_client(&shared, &scratch, &trace, i, s.incarnation);
                    s.finished = false;
                }
            }
        }
        if start.elapsed() > timeout {
            for s in slots.iter_mut() {
                let _ = s.child.kill();
            }
            break false;
        }
        std::thread::sleep(Duration::from_millis(20));
    };
    let elapsed = start.elapsed().as_secs_f64();

    // Final state and the exactly-once audit from three independent records.
    let db = queue.read_db().unwrap();
    let done = db.count(BeamStatus::Done);
    let manifest = fs::read_to_string(shared.join(MANIFEST_FILE)).unwrap_or_default();
    let mut manifest_count: HashMap<String, usize> = HashMap::new();
    for l in manifest.lines() {
        *manifest_count.entry(l.split_whitespace().next().unwrap().to_string()).or_default() += 1;
    }
    let manifest_ok = manifest_count.len() == BEAMS && manifest_count.values().all(|&n| n == 1);

    let allowed = |from: BeamStatus, to: BeamStatus| {
        use BeamStatus::*;
        matches!(
            (from, to),
            (Available, Claimed) | (Claimed, Done) | (Claimed, Failed) | (Claimed, Available) | (Failed, Available)
        )
    };
    let transitions = queue.read_transitions().unwrap();
    let mut state: HashMap<String, BeamStatus> = HashMap::new();
    let mut done_events: HashMap<String, usize> = HashMap::new();
    let mut bad_moves = 0;
    let mut last_version = 0;
    for tr in &transitions {
        let cur = *state.get(&tr.beam_id).unwrap_or(&BeamStatus::Available);
        if cur != tr.from || !allowed(tr.from, tr.to) || tr.version < last_version {
            bad_moves += 1;
        }
        last_version = tr.version;
        state.insert(tr.beam_id.clone(), tr.to);
        if tr.to == BeamStatus::Done {
            *done_events.entry(tr.beam_id.clone()).or_default() += 1;
        }
    }
    let once = done_events.len() == BEAMS && done_events.values().all(|&n| n == 1);

    let (violations, entries) =
        lock_violations(&fs::read_to_string(&trace).unwrap_or_default(), 5.0);

    let ok = all_done
        && done == BEAMS
        && once
        && manifest_ok
        && bad_moves == 0
        && unparsable == 0
        && violations == 0
        && other_exits.is_empty()
        && kills > 0
        && elapsed < 120.0;
    verdict(
        7,
        "queue correctness",
        ok,
        &format!(
            "{done}/{BEAMS} DONE, DONE-once {once}, manifest-once {manifest_ok}, {} transitions ({bad_moves} invalid), \
             {kills} kills, {requeued} stale requeues, {samples} db samples ({unparsable} unparsable), \
             {entries} lock entries ({violations} violations), unexpected exits {other_exits:?}, runtime {elapsed:.1} s",
            transitions.len()
        ),
    );
}

// ---------------------------------------------------------------- #8

#[test]
fn criterion_08_sensitivity_shape() {
    let p = SensitivityParams::default();
    let periods = sensitivity::log_period_grid(4.0, 10_000.0, 400);
    let dms = [0.0, 20.0, 40.0, 60.0, 80.0, 100.0];
    let s = |period: f64, dm: f64| sensitivity::min_flux_density(&p, period, dm).unwrap();
    let mut period_breaks = 0;
    let mut dm_breaks = 0;
    for &dm in &dms {
        for w in periods.windows(2) {
            if s(w[1], dm) > s(w[0], dm) {
                period_breaks += 1;
            }
        }
    }
    for &period in &periods {
        for w in dms.windows(2) {
            if s(period, w[1]) < s(period, w[0]) {
                dm_breaks += 1;
            }
        }
    }
    let ratio = s(10.0, 100.0) / s(1000.0, 100.0);
    verdict(
        8,
        "sensitivity shape",
        period_breaks == 0 && dm_breaks == 0 && ratio > 2.0,
        &format!(
            "{period_breaks} period increases, {dm_breaks} DM decreases, S(10 ms)/S(1 s) at DM 100 = {ratio:.2}"
        ),
    );
}

// ---------------------------------------------------------------- #9

/// Power at k = 1..=n/2 of the mean-subtracted, zero-padded or truncated series.
fn direct_power(x: &[u32], n: usize) -> Vec<f64> {
    let used = &x[..x.len().min(n)];
    let mean = used.iter().map(|&v| v as f64).sum::<f64>() / used.len() as f64;
    (1..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &v) in used.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * j % n) as f64 / n as f64;
                re += (v as f64 - mean) * a.cos();
                im += (v as f64 - mean) * a.sin();
            }
            re * re + im * im
        })
        .collect()
}

#[test]
fn criterion_09_fft_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_rel: f64 = 0.0;
    let mut worst_parseval: f64 = 0.0;
    let mut cases = 0;
    for log_n in 1..=8 {
        let n = 1usize << log_n;
        for _ in 0..40 {
            let len = rng.gen_range(1..=2 * n);
            let ts = TimeSeries {
                values: (0..len).map(|_| rng.gen_range(0..=255)).collect(),
                t_samp_ms: 2.0,
                dm: 0.0,
            };
            let got = periodsearch::fft_power(&ts, n).unwrap();
            let want = direct_power(&ts.values, n);
            let scale = want.iter().cloned().fold(0.0, f64::max);
            for (g, w) in got.powers.iter().zip(&want) {
                // Relative error, guarded where the true power is numerically zero.
                worst_rel = worst_rel.max((g - w).abs() / w.max(1e-12 * scale).max(f64::MIN_POSITIVE));
            }
            cases += 1;

            let used = &ts.values[..len.min(n)];
            let mean = used.iter().map(|&v| v as f64).sum::<f64>() / used.len() as f64;
            let time_energy = n as f64 * used.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>();
            let p = &got.powers;
            let freq_energy = 2.0 * p[..p.len() - 1].iter().sum::<f64>() + p[p.len() - 1];
            if time_energy > 0.0 {
                worst_parseval = worst_parseval.max((freq_energy - time_energy).abs() / time_energy);
            }
        }
    }
    verdict(
        9,
        "FFT oracle",
        worst_rel <= 1e-6 && worst_parseval <= 1e-9,
        &format!("{cases} transforms, worst relative error {worst_rel:.2e}, worst Parseval error {worst_parseval:.2e}"),
    );
}

// ---------------------------------------------------------------- #10

#[test]
fn criterion_10_coordinates() {
    let (_, b_ngp) = coords::equatorial_to_galactic(192.85948, 27.12825);
    // J2000 direction of l = 0, b = 0.
    let (l_gc, b_gc) = coords::equatorial_to_galactic(266.40499, -28.93617);
    let l_gc_wrapped = if l_gc > 180.0 { l_gc - 360.0 } else { l_gc };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let (ra1, dec1) = (rng.gen_range(0.0..360.0), rng.gen_range(-90.0f64..90.0));
        let (ra2, dec2) = (rng.gen_range(0.0..360.0), rng.gen_range(-90.0f64..90.0));
        let (l1, b1) = coords::equatorial_to_galactic(ra1, dec1);
        let (l2, b2) = coords::equatorial_to_galactic(ra2, dec2);
        let before = coords::angular_separation(ra1, dec1, ra2, dec2);
        let after = coords::angular_separation(l1, b1, l2, b2);
        worst = worst.max((before - after).abs());
    }
    let ok = (b_ngp - 90.0).abs() < 1e-6
        && l_gc_wrapped.abs() < 0.01
        && b_gc.abs() < 0.01
        && worst < 1e-9;
    verdict(
        10,
        "coordinate conversion",
        ok,
        &format!(
            "NGP b = {b_ngp:.9}, centre ({l_gc_wrapped:.5}, {b_gc:.5}), worst separation change {worst:.2e} deg"
        ),
    );
}
