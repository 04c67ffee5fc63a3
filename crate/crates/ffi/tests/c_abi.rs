use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use fentrisk::bounds::{BoundContext, BoundKind};
use fentrisk::data::{partition_by_class, synth_imbalanced, Reference};
use fentrisk::model::{forward, xavier_init, Checkpoint, GaussianParamDist, MlpArch, DEFAULT_L_MAX};
use fentrisk::risk::RiskKind;
use fentrisk::trainer::{certify, CertifySettings};
use fentrisk_ffi::*;

fn last_error() -> String {
    let p = fr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn risk_solve_round_trip() {
    let losses = [0.1, 0.9, 0.4];
    let pi = [0.5, 0.25, 0.25];
    let mut sol = ptr::null_mut();
    let st = unsafe { fr_risk_solve(losses.as_ptr(), pi.as_ptr(), 3, 0.5, FrDivergence::None, f64::NAN, &mut sol) };
    assert_eq!(st, FrStatus::Ok);
    unsafe {
        // cap pi/alpha fills 0.9 then 0.4
        assert!((fr_risk_solution_value(sol) - 0.65).abs() < 1e-12);
        assert_eq!(fr_risk_solution_len(sol), 3);
        let mut w = [0.0; 2];
        assert_eq!(fr_risk_solution_weights(sol, w.as_mut_ptr(), 2), FrStatus::BufferTooSmall);
        let mut w = [0.0; 3];
        assert_eq!(fr_risk_solution_weights(sol, w.as_mut_ptr(), 3), FrStatus::Ok);
        assert_eq!(w, [0.0, 0.5, 0.5]);
        fr_risk_solution_free(sol);
    }

    // null reference means uniform; KL budget with the default beta
    let mut sol = ptr::null_mut();
    let st = unsafe { fr_risk_solve(losses.as_ptr(), ptr::null(), 3, 0.5, FrDivergence::Kl, f64::NAN, &mut sol) };
    assert_eq!(st, FrStatus::Ok);
    let v = unsafe { fr_risk_solution_value(sol) };
    assert!((0.4 - 1e-12..=0.9).contains(&v));
    unsafe { fr_risk_solution_free(sol) };
}

#[test]
fn risk_solve_errors() {
    let losses = [0.1, 0.9];
    let mut sol = ptr::null_mut();
    let st = unsafe { fr_risk_solve(ptr::null(), ptr::null(), 2, 0.5, FrDivergence::None, 0.0, &mut sol) };
    assert_eq!(st, FrStatus::NullPointer);
    assert!(last_error().contains("losses"));
    let st = unsafe { fr_risk_solve(losses.as_ptr(), ptr::null(), 2, 1.5, FrDivergence::None, 0.0, &mut sol) };
    assert_eq!(st, FrStatus::InvalidArgument);
    assert!(sol.is_null());
    let st = unsafe { fr_risk_solve(losses.as_ptr(), ptr::null(), 2, 0.5, FrDivergence::None, 0.0, ptr::null_mut()) };
    assert_eq!(st, FrStatus::NullPointer);
    unsafe {
        assert!(fr_risk_solution_value(ptr::null()).is_nan());
        assert_eq!(fr_risk_solution_len(ptr::null()), 0);
        fr_risk_solution_free(ptr::null_mut());
    }
}

#[test]
fn kl_functions() {
    let mut v = f64::NAN;
    assert_eq!(unsafe { fr_kl_plus(0.2, 0.5, &mut v) }, FrStatus::Ok);
    let want = 0.2 * (0.2f64 / 0.5).ln() + 0.8 * (0.8f64 / 0.5).ln();
    assert!((v - want).abs() < 1e-15);
    assert_eq!(unsafe { fr_kl_plus(0.7, 0.5, &mut v) }, FrStatus::Ok);
    assert_eq!(v, 0.0);
    let mut b = f64::NAN;
    assert_eq!(unsafe { fr_kl_inverse(0.2, want, &mut b) }, FrStatus::Ok);
    assert!((b - 0.5).abs() < 1e-9);
    assert_eq!(unsafe { fr_kl_plus(-0.1, 0.5, &mut v) }, FrStatus::InvalidArgument);
    assert_eq!(unsafe { fr_kl_inverse(0.2, 0.1, ptr::null_mut()) }, FrStatus::NullPointer);
}

#[test]
fn bound_evaluate_matches_library() {
    let m_a = [60usize, 20];
    let pi = [0.75, 0.25];
    let input = FrBoundInput {
        kind: FrBoundKind::SubgroupsKl,
        empirical_risk: 0.2,
        kl_term: 1.5,
        delta: 0.05,
        alpha: 0.5,
        lambda: 1.0,
        n_priors: 3,
        m: 0,
        n: 2,
        m_a: m_a.as_ptr(),
        pi: pi.as_ptr(),
    };
    let mut out = FrBoundOutput::default();
    assert_eq!(unsafe { fr_bound_evaluate(&input, &mut out) }, FrStatus::Ok);
    let ctx = BoundContext::subgroups(m_a.to_vec(), pi.to_vec(), 0.5, 0.05, 3, 1.5);
    let want = BoundKind::SubgroupsKl.evaluate(0.2, &ctx).unwrap();
    assert_eq!(out.bound, want.bound);
    assert_eq!(out.certificate, want.certificate());
    assert!(!out.estimate);

    let input = FrBoundInput { kind: FrBoundKind::MhammediEstimate, m: 80, m_a: ptr::null(), pi: ptr::null(), ..input };
    assert_eq!(unsafe { fr_bound_evaluate(&input, &mut out) }, FrStatus::Ok);
    let ctx = BoundContext::per_example(80, 0.5, 0.05, 1.0, 3, 1.5);
    let want = BoundKind::MhammediEstimate.evaluate(0.2, &ctx).unwrap();
    assert_eq!(out.bound, want.bound);
    assert!(out.estimate);

    let bad = FrBoundInput { kind: FrBoundKind::SubgroupsSqrt, m_a: ptr::null(), ..input };
    assert_eq!(unsafe { fr_bound_evaluate(&bad, &mut out) }, FrStatus::NullPointer);
    let bad = FrBoundInput { delta: 0.0, ..input };
    assert_eq!(unsafe { fr_bound_evaluate(&bad, &mut out) }, FrStatus::InvalidArgument);
}

fn saved_model(dir: &Path) -> (PathBuf, PathBuf, Checkpoint) {
    let data = synth_imbalanced(&[40, 20], 3, 2.0, 5).unwrap().standardized();
    let csv = dir.join("data.csv");
    data.write_csv(&csv).unwrap();
    let arch = MlpArch::mlp(3, &[6], 2).unwrap();
    let params = xavier_init(&arch, 1);
    let ckpt = Checkpoint {
        arch,
        class_names: data.class_names().to_vec(),
        params: params.clone(),
        posterior: Some(GaussianParamDist::new(params, 1e-4).unwrap()),
        prior: Some(GaussianParamDist::new(xavier_init(&MlpArch::mlp(3, &[6], 2).unwrap(), 2), 1e-4).unwrap()),
        n_priors: 3,
    };
    let path = dir.join("model.json");
    ckpt.save(&path).unwrap();
    (path, csv, ckpt)
}

#[test]
fn model_handle() {
    let dir = tempfile::tempdir().unwrap();
    let (path, csv, ckpt) = saved_model(dir.path());
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { fr_model_load(cpath.as_ptr(), &mut model) }, FrStatus::Ok);
    unsafe {
        assert_eq!(fr_model_input_dim(model), 3);
        assert_eq!(fr_model_n_classes(model), 2);
        let x = [0.3, -1.0, 2.0];
        let mut p = [0.0; 2];
        assert_eq!(fr_model_predict_proba(model, x.as_ptr(), 3, p.as_mut_ptr(), 2), FrStatus::Ok);
        assert_eq!(p.to_vec(), forward(&ckpt.arch, &ckpt.params, &x).unwrap());
        let mut class = usize::MAX;
        assert_eq!(fr_model_predict(model, x.as_ptr(), 3, &mut class), FrStatus::Ok);
        assert_eq!(class, usize::from(p[1] > p[0]));
        assert_eq!(fr_model_predict(model, x.as_ptr(), 2, &mut class), FrStatus::InvalidArgument);
    }

    let ccsv = CString::new(csv.to_str().unwrap()).unwrap();
    let label = CString::new("label").unwrap();
    let mut out = FrBoundOutput::default();
    let st = unsafe {
        fr_model_certify(model, ccsv.as_ptr(), label.as_ptr(), FrBoundKind::SubgroupsSqrt, 0.5, 0.05, 1.0, &mut out)
    };
    assert_eq!(st, FrStatus::Ok, "{}", last_error());
    let data = fentrisk::data::load_csv(&csv, "label").unwrap();
    let part = partition_by_class(&data, Reference::ClassRatio).unwrap();
    let (q, p) = ckpt.distributions(1e-6).unwrap();
    let settings =
        CertifySettings { risk: RiskKind::Cvar, delta: 0.05, lambda: 1.0, l_max: DEFAULT_L_MAX, n_priors: 3 };
    let want =
        certify(&ckpt.arch, &ckpt.params, &q, &p, BoundKind::SubgroupsSqrt, 0.5, &data, &part, &settings).unwrap();
    assert_eq!(out.bound, want.bound);

    let missing = CString::new(dir.path().join("absent.csv").to_str().unwrap()).unwrap();
    let st = unsafe {
        fr_model_certify(model, missing.as_ptr(), label.as_ptr(), FrBoundKind::SubgroupsSqrt, 0.5, 0.05, 1.0, &mut out)
    };
    assert_eq!(st, FrStatus::Io);
    unsafe { fr_model_free(model) };

    let absent = CString::new(dir.path().join("none.json").to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { fr_model_load(absent.as_ptr(), &mut model) }, FrStatus::Io);
    assert!(model.is_null());
    assert_eq!(unsafe { fr_model_load(ptr::null(), &mut model) }, FrStatus::NullPointer);
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(fr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "fentrisk.h"

int main(void) {
    double losses[3] = {0.1, 0.9, 0.4};
    FrRiskSolution *sol = NULL;
    if (fr_risk_solve(losses, NULL, 3, 0.5, FR_DIVERGENCE_NONE, NAN, &sol) != FR_STATUS_OK) return 1;
    double w[3];
    if (fr_risk_solution_weights(sol, w, 3) != FR_STATUS_OK) return 2;
    printf("%.17g %.17g %.17g %.17g\n", fr_risk_solution_value(sol), w[0], w[1], w[2]);
    fr_risk_solution_free(sol);

    double kl;
    if (fr_kl_plus(0.2, 0.5, &kl) != FR_STATUS_OK) return 3;
    printf("%.17g\n", kl);
    if (fr_kl_plus(2.0, 0.5, &kl) != FR_STATUS_INVALID_ARGUMENT) return 4;
    printf("%s\n", fr_last_error() ? "error set" : "no error");
    return 0;
}
"#;

#[test]
fn header_compiles_and_links_from_c() {
    let target = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = target.join("libfentrisk_ffi.a");
    if !lib.is_file() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let text = String::from_utf8(run.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let first: Vec<f64> = lines[0].split(' ').map(|s| s.parse().unwrap()).collect();
    // uniform reference, cap 2/3: weight 2/3 on 0.9, the rest on 0.4
    assert!((first[0] - (2.0 / 3.0 * 0.9 + 1.0 / 3.0 * 0.4)).abs() < 1e-12);
    assert_eq!(first[1], 0.0);
    let kl: f64 = lines[1].parse().unwrap();
    assert!((kl - (0.2 * 0.4f64.ln() + 0.8 * 1.6f64.ln())).abs() < 1e-15);
    assert_eq!(lines[2], "error set");
}
