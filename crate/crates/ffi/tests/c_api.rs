use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use vitalclust::features::{extract_patient, FeatureCatalog};
use vitalclust::ingest::{generate_synthetic_cohort, write_static_csv, write_timeseries_csv, SyntheticSpec};
use vitalclust::model::Cohort;
use vitalclust::pipeline::{cmd_run, load_config};
use vitalclust_ffi::*;

fn last_error() -> String {
    let p = vc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/vitalclust.h");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(&header)
        .status()
        .expect("run cc");
    assert!(status.success());
    let text = std::fs::read_to_string(header).unwrap();
    for f in ["vc_model_load", "vc_model_assign", "vc_kmeans_fit", "vc_last_error", "VC_STATUS_NULL_POINTER"] {
        assert!(text.contains(f), "{f}");
    }
}

#[test]
fn validity_indices_match_hand_values() {
    let x = [0.0, 2.0, 10.0, 12.0];
    let labels = [0i64, 0, 1, 1];
    let mut out = 0.0;
    unsafe {
        assert_eq!(vc_chi(x.as_ptr(), 4, 1, labels.as_ptr(), &mut out), VcStatus::Ok);
        assert_eq!(out, 50.0);
        assert_eq!(vc_dbi(x.as_ptr(), 4, 1, labels.as_ptr(), &mut out), VcStatus::Ok);
        assert!((out - 0.2).abs() < 1e-15);
        let relabeled = [1i64, 1, 0, 0];
        assert_eq!(vc_ari(labels.as_ptr(), relabeled.as_ptr(), 4, &mut out), VcStatus::Ok);
        assert_eq!(out, 1.0);
    }
}

#[test]
fn errors_set_status_and_message() {
    let x = [1.0];
    let (mut d, mut w) = (0.0, 0i64);
    unsafe {
        assert_eq!(vc_sbd(x.as_ptr(), x.as_ptr(), 1, &mut d, &mut w), VcStatus::InvalidArgument);
        assert!(last_error().contains("at least 2"));
        assert_eq!(vc_sbd(ptr::null(), x.as_ptr(), 2, &mut d, &mut w), VcStatus::NullPointer);
        assert_eq!(last_error(), "x is null");
        let ok = [1.0, 2.0, 4.0];
        assert_eq!(vc_sbd(ok.as_ptr(), ok.as_ptr(), 3, &mut d, &mut w), VcStatus::Ok);
        assert!(vc_last_error().is_null());
        assert_eq!((d, w), (0.0, 0));

        let coincident = [0.0, 2.0, 1.0, 1.0];
        let mut out = 0.0;
        assert_eq!(
            vc_dbi(coincident.as_ptr(), 4, 1, [0i64, 0, 1, 1].as_ptr(), &mut out),
            VcStatus::Undefined
        );
    }
}

#[test]
fn bootstrap_se_and_flag_check() {
    let flags = [1u8, 0, 0, 0];
    let (mut mean, mut se) = (0.0, 0.0);
    unsafe {
        assert_eq!(vc_mortality_bootstrap(flags.as_ptr(), 4, 10_000, 3, &mut mean, &mut se), VcStatus::Ok);
        assert_eq!(mean, 0.25);
        assert!((se - 0.2165).abs() / 0.2165 < 0.1, "{se}");
        let bad = [1u8, 2];
        assert_eq!(vc_mortality_bootstrap(bad.as_ptr(), 2, 10, 3, &mut mean, &mut se), VcStatus::InvalidArgument);
    }
}

#[test]
fn kmeans_on_four_points() {
    let x = [0.0, 1.0, 9.0, 10.0];
    let mut labels = [0i64; 4];
    let mut inertia = 0.0;
    unsafe {
        assert_eq!(vc_kmeans_fit(x.as_ptr(), 4, 1, 2, 1, labels.as_mut_ptr(), &mut inertia), VcStatus::Ok);
        assert_eq!(vc_kmeans_fit(x.as_ptr(), 4, 1, 5, 1, labels.as_mut_ptr(), &mut inertia), VcStatus::InvalidArgument);
    }
    assert_eq!(inertia, 1.0);
    assert_eq!(labels[0], labels[1]);
    assert_eq!(labels[2], labels[3]);
    assert_ne!(labels[0], labels[2]);
}

#[test]
fn feature_catalog_round_trip() {
    let n = vc_feature_count();
    assert_eq!(n, 110);
    let names = FeatureCatalog::default().names();
    for (i, name) in names.iter().enumerate() {
        let p = vc_feature_name(i);
        assert_eq!(unsafe { CStr::from_ptr(p) }.to_str().unwrap(), name);
    }
    assert!(vc_feature_name(n).is_null());

    let (cohort, _) = small_cohort(1);
    let s = &cohort.series[0];
    let mut out = vec![0.0; n];
    unsafe {
        assert_eq!(vc_extract_features(s.as_flat().as_ptr(), 8, out.as_mut_ptr(), n), VcStatus::Ok);
        assert_eq!(vc_extract_features(s.as_flat().as_ptr(), 8, out.as_mut_ptr(), n - 1), VcStatus::Dimension);
    }
    let want = extract_patient(s);
    assert!(out.iter().zip(&want).all(|(a, b)| a == b || (a.is_nan() && b.is_nan())));
}

fn small_cohort(n: usize) -> (Cohort, SyntheticSpec) {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic_default.toml")).unwrap();
    let mut spec = SyntheticSpec::from_toml_str(&text).unwrap();
    for s in &mut spec.subgroups {
        s.n_patients = n;
    }
    spec.era_fraction_validation = 0.0;
    (generate_synthetic_cohort(&spec).unwrap().0, spec)
}

/// Fits through the pipeline, then reassigns the same patients through
/// the handle.
fn model_round_trip(algorithm: &str, k: usize) {
    let dir = tempfile::tempdir().unwrap();
    let (cohort, _) = small_cohort(40);
    write_timeseries_csv(dir.path().join("ts.csv"), &cohort).unwrap();
    write_static_csv(dir.path().join("st.csv"), &cohort).unwrap();
    let cfg_path = dir.path().join("c.toml");
    std::fs::write(
        &cfg_path,
        format!(
            "seed = 4\n[paths]\ntimeseries = \"ts.csv\"\nstatics = \"st.csv\"\noutput_dir = \"out\"\n\
             [clustering]\nalgorithms = [\"{algorithm}\"]\nk_range = [{k}]\nn_init = 2\n"
        ),
    )
    .unwrap();
    let cfg = load_config(&cfg_path, None).unwrap();
    let run = cmd_run(&cfg).unwrap();

    let path = CString::new(dir.path().join("out/model.json").to_str().unwrap()).unwrap();
    let mut handle: *mut VcModel = ptr::null_mut();
    unsafe {
        assert_eq!(vc_model_load(path.as_ptr(), &mut handle), VcStatus::Ok);
        assert_eq!(vc_model_k(handle), k);
        assert_eq!(CStr::from_ptr(vc_model_algorithm(handle)).to_str().unwrap(), algorithm);
        if algorithm != "kshape" {
            assert!(vc_model_n_features(handle) > 0);
        }
        let grids: Vec<f64> = cohort.series.iter().flat_map(|s| s.as_flat().to_vec()).collect();
        let mut labels = vec![0i64; cohort.len()];
        assert_eq!(
            vc_model_assign(handle, grids.as_ptr(), cohort.len(), 8, labels.as_mut_ptr()),
            VcStatus::Ok
        );
        let want: Vec<i64> = cohort.series.iter().map(|s| run.labels[&s.patient_id]).collect();
        assert_eq!(labels, want);
        assert_eq!(
            vc_model_assign(ptr::null(), grids.as_ptr(), cohort.len(), 8, labels.as_mut_ptr()),
            VcStatus::NullPointer
        );
        vc_model_free(handle);
    }
}

#[test]
fn kmeans_model_assigns_like_the_pipeline() {
    model_round_trip("kmeans", 3);
}

#[test]
fn kshape_model_assigns_like_the_pipeline() {
    model_round_trip("kshape", 2);
}

#[test]
fn missing_model_is_io_error() {
    let path = CString::new("/nonexistent/model.json").unwrap();
    let mut handle: *mut VcModel = ptr::null_mut();
    unsafe {
        assert_eq!(vc_model_load(path.as_ptr(), &mut handle), VcStatus::Io);
        assert!(handle.is_null());
        vc_model_free(handle);
    }
    assert!(last_error().contains("nonexistent"));
}
