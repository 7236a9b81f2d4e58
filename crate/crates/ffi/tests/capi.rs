use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use qwyc_ffi::*;

const WORKED: [[f64; 3]; 8] = [
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, -1.0, -1.0],
    [0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0],
    [0.0, 0.0, -1.0],
];

fn fixture(name: &str) -> CString {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = qwyc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn worked_example_matrix() -> *mut QwycScoreMatrix {
    let flat: Vec<f64> = WORKED.iter().flatten().copied().collect();
    let mut m = ptr::null_mut();
    let status = unsafe { qwyc_matrix_from_buffer(flat.as_ptr(), 8, 3, ptr::null(), ptr::null(), 0.0, &mut m) };
    assert_eq!(status, QwycStatus::Ok);
    m
}

#[test]
fn optimize_and_evaluate_from_buffer() {
    let m = worked_example_matrix();
    unsafe {
        assert_eq!(qwyc_matrix_n_examples(m), 8);
        assert_eq!(qwyc_matrix_n_models(m), 3);
        let mut p = ptr::null_mut();
        assert_eq!(qwyc_optimize(m, 0.0, 1, &mut p), QwycStatus::Ok);
        let mut metrics = QwycMetrics::default();
        assert_eq!(qwyc_policy_evaluate(p, m, &mut metrics), QwycStatus::Ok);
        assert_eq!(metrics.mean_cost, 1.75);
        assert_eq!(metrics.disagreements, 0);
        assert_eq!(metrics.n_examples, 8);
        assert_eq!(metrics.has_accuracy, 0);

        let (mut decision, mut stop) = (0, 0);
        assert_eq!(qwyc_policy_evaluate_row(p, WORKED[5].as_ptr(), 3, &mut decision, &mut stop), QwycStatus::Ok);
        assert_eq!((decision, stop), (1, 1));
        assert_eq!(qwyc_policy_evaluate_row(p, WORKED[6].as_ptr(), 3, &mut decision, &mut stop), QwycStatus::Ok);
        assert_eq!((decision, stop), (0, 1));
        assert_eq!(qwyc_policy_evaluate_row(p, WORKED[0].as_ptr(), 3, &mut decision, &mut stop), QwycStatus::Ok);
        assert_eq!((decision, stop), (1, 3));
        qwyc_policy_free(p);
        qwyc_matrix_free(m);
    }
}

#[test]
fn fixed_order_and_json_round_trip() {
    let m = worked_example_matrix();
    unsafe {
        let order = [0usize, 1, 2];
        let mut p = ptr::null_mut();
        assert_eq!(qwyc_policy_for_order(m, order.as_ptr(), 3, 0.0, 1, &mut p), QwycStatus::Ok);
        let mut json = ptr::null_mut();
        assert_eq!(qwyc_policy_to_json(p, &mut json), QwycStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        assert!(text.contains("\"type\": \"qwyc\""));

        let mut back = ptr::null_mut();
        assert_eq!(qwyc_policy_from_json(json, &mut back), QwycStatus::Ok);
        qwyc_string_free(json);
        let mut again = ptr::null_mut();
        assert_eq!(qwyc_policy_to_json(back, &mut again), QwycStatus::Ok);
        assert_eq!(CStr::from_ptr(again).to_str().unwrap(), text);
        assert_eq!(qwyc_policy_n_models(back), 3);
        qwyc_string_free(again);
        qwyc_policy_free(back);
        qwyc_policy_free(p);
        qwyc_matrix_free(m);
    }
}

#[test]
fn load_fixture_matrix() {
    let (csv, meta) = (fixture("worked_example.csv"), fixture("worked_example.meta.json"));
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(qwyc_matrix_load(csv.as_ptr(), meta.as_ptr(), &mut m), QwycStatus::Ok);
        let mut p = ptr::null_mut();
        assert_eq!(qwyc_optimize(m, 0.0, 1, &mut p), QwycStatus::Ok);
        let mut metrics = QwycMetrics::default();
        assert_eq!(qwyc_policy_evaluate(p, m, &mut metrics), QwycStatus::Ok);
        assert_eq!(metrics.mean_models, 1.75);
        qwyc_policy_free(p);
        qwyc_matrix_free(m);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(qwyc_matrix_load(ptr::null(), ptr::null(), &mut m), QwycStatus::NullPointer);
        assert!(last_error().contains("csv_path"));

        let missing = CString::new("/nonexistent/scores.csv").unwrap();
        assert_eq!(qwyc_matrix_load(missing.as_ptr(), ptr::null(), &mut m), QwycStatus::Io);
        assert!(last_error().contains("/nonexistent/scores.csv"));

        let junk = CString::new("{\"type\": \"qwyc\"").unwrap();
        let mut p = ptr::null_mut();
        assert_eq!(qwyc_policy_from_json(junk.as_ptr(), &mut p), QwycStatus::Parse);
        assert!(p.is_null());

        let m = worked_example_matrix();
        assert_eq!(qwyc_optimize(m, 1.5, 1, &mut p), QwycStatus::InvalidArgument);
        assert!(last_error().contains("alpha"));
        let order = [0usize, 0, 1];
        assert_eq!(qwyc_policy_for_order(m, order.as_ptr(), 3, 0.0, 1, &mut p), QwycStatus::InvalidArgument);

        assert_eq!(qwyc_optimize(m, 0.0, 0, &mut p), QwycStatus::Ok);
        let (mut d, mut s) = (0, 0);
        assert_eq!(qwyc_policy_evaluate_row(p, WORKED[0].as_ptr(), 2, &mut d, &mut s), QwycStatus::InvalidArgument);
        assert_eq!(qwyc_policy_evaluate_row(p, ptr::null(), 3, &mut d, &mut s), QwycStatus::NullPointer);
        qwyc_policy_free(p);
        qwyc_matrix_free(m);
        qwyc_matrix_free(ptr::null_mut());
        qwyc_policy_free(ptr::null_mut());
        qwyc_string_free(ptr::null_mut());
    }
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<this test> -> target/<profile>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_static_library() {
    let cc = Path::new("/usr/bin/cc");
    let lib = target_dir().join("libqwyc_ffi.a");
    if !cc.exists() || !lib.exists() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let out = Command::new(cc)
        .arg(root.join("tests/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = root.join("../core/tests/fixtures/worked_example.csv");
    let meta = root.join("../core/tests/fixtures/worked_example.meta.json");
    let run = Command::new(&exe).arg(csv).arg(meta).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{stdout}{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(stdout.trim(), "mean_cost=1.750000 disagreements=0 missing_file_status=4");
}
