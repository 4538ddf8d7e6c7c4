use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use wmlab_ffi::*;

const SMALL: &str = "trials = 2\nsteps = 3\nhorizon = 3\n[dims]\nd_o = 4\nd_h = 5\nd_z = 3\n";

fn small_config() -> *mut WmlabConfig {
    let text = CString::new(SMALL).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { wmlab_config_from_toml(text.as_ptr(), &mut cfg) }, WmlabStatus::Ok);
    cfg
}

fn last_error() -> String {
    let p = wmlab_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn tier_mapping_and_errors() {
    let mut t = WmlabTier::High;
    for (a, want) in [(0.65, WmlabTier::Low), (2.26, WmlabTier::Moderate), (5.0, WmlabTier::High)] {
        assert_eq!(unsafe { wmlab_classify_tier(a, &mut t) }, WmlabStatus::Ok);
        assert_eq!(t, want);
    }
    assert_eq!(unsafe { wmlab_classify_tier(f64::NAN, &mut t) }, WmlabStatus::InvalidParameter);
    assert!(last_error().contains("amplification"));
    assert_eq!(unsafe { wmlab_classify_tier(1.0, ptr::null_mut()) }, WmlabStatus::NullPointer);
}

#[test]
fn config_handles() {
    let cfg = small_config();
    let mut k = 0;
    assert_eq!(unsafe { wmlab_config_steps(cfg, &mut k) }, WmlabStatus::Ok);
    assert_eq!(k, 3);
    assert_eq!(unsafe { wmlab_config_set_trials(cfg, 1) }, WmlabStatus::InvalidParameter);
    assert_eq!(unsafe { wmlab_config_set_trials(cfg, 3) }, WmlabStatus::Ok);
    assert_eq!(unsafe { wmlab_config_set_seed(cfg, 9) }, WmlabStatus::Ok);
    unsafe { wmlab_config_free(cfg) };
    unsafe { wmlab_config_free(ptr::null_mut()) };

    let bad = CString::new("trails = 3").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { wmlab_config_from_toml(bad.as_ptr(), &mut out) }, WmlabStatus::InvalidParameter);
    assert!(out.is_null());
    assert_eq!(unsafe { wmlab_config_steps(ptr::null(), &mut k) }, WmlabStatus::NullPointer);
}

#[test]
fn amplification_is_deterministic_and_checks_capacity() {
    let cfg = small_config();
    let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
    let mut n = 0;
    assert_eq!(unsafe { wmlab_amplification(cfg, a.as_mut_ptr(), 3, &mut n) }, WmlabStatus::Ok);
    assert_eq!(unsafe { wmlab_amplification(cfg, b.as_mut_ptr(), 3, &mut n) }, WmlabStatus::Ok);
    assert_eq!(a, b);
    assert!(a.iter().all(|v| v.is_finite() && *v > 0.0));
    assert_eq!(unsafe { wmlab_amplification(cfg, a.as_mut_ptr(), 1, &mut n) }, WmlabStatus::Buffer);
    assert_eq!(n, 3);
    unsafe { wmlab_config_free(cfg) };
}

#[test]
fn params_round_trip_and_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { wmlab_params_new(4, 5, 3, 0.1, 7, &mut p) }, WmlabStatus::Ok);
    let path = CString::new(dir.path().join("p.txt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { wmlab_params_save(p, path.as_ptr()) }, WmlabStatus::Ok);
    let mut q = ptr::null_mut();
    assert_eq!(unsafe { wmlab_params_load(path.as_ptr(), &mut q) }, WmlabStatus::Ok);
    let (mut lp, mut lq) = (0, 0);
    unsafe {
        wmlab_params_len(p, &mut lp);
        wmlab_params_len(q, &mut lq);
    }
    assert_eq!(lp, lq);
    // W_e, three input and three recurrent gate matrices, biases, readout
    assert_eq!(lp, 5 * 4 + 6 * 5 * 5 + 3 * 5 + 3 * 5);
    unsafe {
        wmlab_params_free(p);
        wmlab_params_free(q);
    }
    let missing = CString::new(dir.path().join("none.txt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { wmlab_params_load(missing.as_ptr(), &mut q) }, WmlabStatus::Io);

    let cfg = small_config();
    let name = CString::new("reward-gap").unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut failed = 0;
    assert_eq!(unsafe { wmlab_run_experiment(cfg, name.as_ptr(), out.as_ptr(), &mut failed) }, WmlabStatus::Ok);
    assert!(dir.path().join("reward.csv").exists());
    let bogus = CString::new("nope").unwrap();
    assert_eq!(
        unsafe { wmlab_run_experiment(cfg, bogus.as_ptr(), out.as_ptr(), &mut failed) },
        WmlabStatus::InvalidParameter
    );
    unsafe { wmlab_config_free(cfg) };
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header_and_staticlib() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libwmlab_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("cc runs");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok 0.1.0"));
}
