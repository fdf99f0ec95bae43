use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use beamforge_ffi::*;

fn last_error() -> String {
    let p = bf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_obs() -> BfObservation {
    BfObservation {
        n_channels: 16,
        channel_bw_mhz: 3.0,
        f_highest_mhz: 1516.5,
        t_samp_ms: 0.125,
        n_samples: 1 << 16,
    }
}

#[test]
fn synth_decimate_search_round_trip() {
    let obs = small_obs();
    let psr = BfPulsar {
        period_ms: 100.0,
        dm: 60.0,
        duty_cycle: 0.25,
        amplitude: 0.1,
    };
    let mut block = ptr::null_mut();
    unsafe {
        assert_eq!(bf_block_synthesize(&obs, &psr, 1, &mut block), BfStatus::Ok);
        let mut dec = ptr::null_mut();
        assert_eq!(bf_block_decimate(block, 4, 16, &mut dec), BfStatus::Ok);
        let mut info = small_obs();
        assert_eq!(bf_block_info(dec, &mut info), BfStatus::Ok);
        assert_eq!((info.n_channels, info.n_samples), (4, (1 << 16) / 16));
        assert!((info.t_samp_ms - 2.0).abs() < 1e-12);

        let mut opts = bf_search_options_default();
        assert_eq!((opts.n_trials, opts.max_candidates), (450, 50));
        opts.n_trials = 20;
        opts.dm_max = 100.0;
        let mut cands = ptr::null_mut();
        assert_eq!(bf_search(block, &opts, &mut cands), BfStatus::Ok);
        assert!(bf_candidates_len(cands) > 0);
        let mut top = BfCandidate::default();
        assert_eq!(bf_candidates_get(cands, 0, &mut top), BfStatus::Ok);
        assert!((top.period_ms - 100.0).abs() < 1.0, "{top:?}");
        assert_eq!(
            bf_candidates_get(cands, 10_000, &mut top),
            BfStatus::InvalidArgument
        );
        assert!(last_error().contains("out of range"));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("b.fil").to_str().unwrap()).unwrap();
        assert_eq!(bf_block_write(block, path.as_ptr()), BfStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(bf_block_read(path.as_ptr(), &mut back), BfStatus::Ok);
        let mut c2 = ptr::null_mut();
        assert_eq!(bf_search(back, &opts, &mut c2), BfStatus::Ok);
        assert_eq!(bf_candidates_len(c2), bf_candidates_len(cands));

        bf_candidates_free(c2);
        bf_candidates_free(cands);
        bf_block_free(back);
        bf_block_free(dec);
        bf_block_free(block);
        bf_block_free(ptr::null_mut());
        assert_eq!(bf_candidates_len(ptr::null()), 0);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut block = ptr::null_mut();
        assert_eq!(
            bf_block_synthesize(ptr::null(), ptr::null(), 0, &mut block),
            BfStatus::NullPointer
        );
        assert!(last_error().contains("obs"));
        let mut obs = small_obs();
        obs.t_samp_ms = -1.0;
        assert_eq!(
            bf_block_synthesize(&obs, ptr::null(), 0, &mut block),
            BfStatus::InvalidArgument
        );
        let missing = CString::new("/definitely/not/here.fil").unwrap();
        assert_eq!(bf_block_read(missing.as_ptr(), &mut block), BfStatus::Io);
        assert!(block.is_null());

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.fil");
        std::fs::write(&junk, b"not a block").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(bf_block_read(junk.as_ptr(), &mut block), BfStatus::Format);

        let obs = small_obs();
        assert_eq!(bf_block_synthesize(&obs, ptr::null(), 0, &mut block), BfStatus::Ok);
        let mut dec = ptr::null_mut();
        assert_eq!(bf_block_decimate(block, 5, 16, &mut dec), BfStatus::InvalidArgument);
        assert!(!bf_last_error().is_null());
        bf_block_free(block);
    }
}

#[test]
fn queue_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let root = CString::new(dir.path().to_str().unwrap()).unwrap();
    let ids: Vec<CString> = (0..3).map(|i| CString::new(format!("b{i}")).unwrap()).collect();
    let paths: Vec<CString> = (0..3).map(|i| CString::new(format!("data/b{i}.fil")).unwrap()).collect();
    let id_ptrs: Vec<_> = ids.iter().map(|s| s.as_ptr()).collect();
    let path_ptrs: Vec<_> = paths.iter().map(|s| s.as_ptr()).collect();
    let client = CString::new("c1").unwrap();
    let other = CString::new("c2").unwrap();
    let res = CString::new("results/x.cand").unwrap();
    unsafe {
        let mut q = ptr::null_mut();
        assert_eq!(bf_queue_open(root.as_ptr(), &mut q), BfStatus::Ok);
        let mut counts = BfQueueCounts::default();
        assert_eq!(bf_queue_counts(q, &mut counts), BfStatus::Io);
        assert_eq!(
            bf_queue_init(q, id_ptrs.as_ptr(), path_ptrs.as_ptr(), 3, false),
            BfStatus::Ok
        );
        assert_eq!(
            bf_queue_init(q, id_ptrs.as_ptr(), path_ptrs.as_ptr(), 3, false),
            BfStatus::InvalidArgument
        );

        let mut tiny = [0 as std::ffi::c_char; 2];
        assert_eq!(
            bf_queue_claim_next(q, client.as_ptr(), tiny.as_mut_ptr(), tiny.len()),
            BfStatus::BufferTooSmall
        );
        assert_eq!(bf_queue_counts(q, &mut counts), BfStatus::Ok);
        assert_eq!((counts.available, counts.claimed), (3, 0));

        let mut buf = [0 as std::ffi::c_char; 64];
        let claim = |who: &CString, buf: &mut [std::ffi::c_char; 64]| {
            let s = bf_queue_claim_next(q, who.as_ptr(), buf.as_mut_ptr(), buf.len());
            (s, CStr::from_ptr(buf.as_ptr()).to_owned())
        };
        let (s, first) = claim(&client, &mut buf);
        assert_eq!(s, BfStatus::Ok);
        assert_eq!(claim(&client, &mut buf).0, BfStatus::AlreadyClaiming);
        assert_eq!(
            bf_queue_mark_done(q, other.as_ptr(), first.as_ptr(), res.as_ptr()),
            BfStatus::NotClaimant
        );
        assert_eq!(bf_queue_mark_done(q, client.as_ptr(), first.as_ptr(), res.as_ptr()), BfStatus::Ok);

        let (s, second) = claim(&client, &mut buf);
        assert_eq!(s, BfStatus::Ok);
        let why = CString::new("corrupt").unwrap();
        assert_eq!(bf_queue_mark_failed(q, client.as_ptr(), second.as_ptr(), why.as_ptr()), BfStatus::Ok);

        assert_eq!(claim(&other, &mut buf).0, BfStatus::Ok);
        let third = CString::new("c3").unwrap();
        assert_eq!(claim(&third, &mut buf).0, BfStatus::NoWork);
        // Stale means silent for more than `stale_secs` whole seconds.
        std::thread::sleep(std::time::Duration::from_millis(1100));
        let mut n = 99;
        assert_eq!(bf_queue_requeue_stale(q, 0, &mut n), BfStatus::Ok);
        assert_eq!(n, 1);
        assert_eq!(bf_queue_counts(q, &mut counts), BfStatus::Ok);
        assert_eq!(
            (counts.available, counts.claimed, counts.done, counts.failed),
            (1, 0, 1, 1)
        );
        bf_queue_free(q);
    }
}

#[test]
fn pure_functions() {
    unsafe {
        let (mut l, mut b) = (f64::NAN, f64::NAN);
        assert_eq!(bf_equatorial_to_galactic(266.405, -28.936, &mut l, &mut b), BfStatus::Ok);
        assert!(l.min(360.0 - l) < 0.01 && b.abs() < 0.01, "{l} {b}");
        assert_eq!(bf_equatorial_to_galactic(361.0, 0.0, &mut l, &mut b), BfStatus::InvalidArgument);

        let (mut fast, mut slow) = (0.0, 0.0);
        assert_eq!(bf_min_flux_density(10.0, 100.0, &mut fast), BfStatus::Ok);
        assert_eq!(bf_min_flux_density(1000.0, 100.0, &mut slow), BfStatus::Ok);
        assert!(fast > slow);
        assert_eq!(bf_min_flux_density(-1.0, 0.0, &mut fast), BfStatus::InvalidArgument);

        let dvd = BfMedia {
            capacity_gb: 4.7,
            unit_cost: 1.36,
            writer_cost: 400.0,
            other_costs: 45.0,
        };
        let mut r = BfCostReport::default();
        assert_eq!(bf_cost_report(573.7, 233, &dvd, &mut r), BfStatus::Ok);
        assert!((r.total_cost - (233.0 * 1.36 + 445.0)).abs() < 1e-9);
        assert!((r.cost_per_gb_max - 1.36 / 4.7).abs() < 1e-12);
        assert_eq!(bf_cost_report(573.7, 0, &dvd, &mut r), BfStatus::InvalidArgument);
        assert_eq!(bf_cost_report(573.7, 1, ptr::null(), &mut r), BfStatus::NullPointer);
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("beamforge.h")
}

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok()
}

#[test]
fn header_is_valid_c() {
    let text = std::fs::read_to_string(header()).unwrap();
    for sym in ["bf_last_error", "bf_block_synthesize", "bf_search", "bf_queue_claim_next", "BF_STATUS_NO_WORK"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    if !have_cc() {
        eprintln!("no C compiler found; skipping syntax check");
        return;
    }
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(header())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "beamforge.h"

int main(void) {
    double l = 0.0, b = 0.0;
    if (bf_equatorial_to_galactic(266.405, -28.936, &l, &b) != BF_STATUS_OK) return 1;
    if (fabs(b) > 0.01) return 2;
    BfObservation obs = {16, 3.0, 1516.5, 0.125, 4096};
    BfBlock *block = NULL;
    if (bf_block_synthesize(&obs, NULL, 7, &block) != BF_STATUS_OK) return 3;
    BfBlock *bad = NULL;
    if (bf_block_decimate(block, 5, 16, &bad) != BF_STATUS_INVALID_ARGUMENT) return 4;
    if (bf_last_error() == NULL) return 5;
    bf_block_free(block);
    printf("%s\n", bf_status_name(BF_STATUS_NOT_CLAIMANT));
    return 0;
}
"#;

#[test]
fn c_program_links_against_static_library() {
    if !have_cc() {
        eprintln!("no C compiler found; skipping link test");
        return;
    }
    // target/<profile>/deps/<this test> -> target/<profile>/libbeamforge_ffi.a
    let exe = std::env::current_exe().unwrap();
    let lib = exe.parent().and_then(Path::parent).unwrap().join("libbeamforge_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping link test", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(header().parent().unwrap())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "NOT_CLAIMANT");
}
