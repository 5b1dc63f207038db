use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use libc::c_char;

use hreflex_core::fixtures::{annotated_payload, strict_answer};
use hreflex_core::record_store::StateLabel;
use hreflex_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    hrx_string_free(p);
    s
}

fn last_error() -> String {
    unsafe { take(hrx_last_error()) }
}

#[test]
fn parse_round_trip_and_errors() {
    unsafe {
        let raw = c(&strict_answer(StateLabel::Recovery));
        let model = c("llama-vision");
        let mut out = ptr::null_mut();
        assert_eq!(hrx_parse_assessment(raw.as_ptr(), model.as_ptr(), &mut out), HrxStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["state"], "recovery");
        assert_eq!(v["recovery_required"], true);
        assert!(hrx_last_error().is_null());

        let junk = c("no sections here");
        let mut out = ptr::null_mut();
        assert_eq!(hrx_parse_assessment(junk.as_ptr(), model.as_ptr(), &mut out), HrxStatus::ParseError);
        assert!(out.is_null(), "out pointer untouched on failure");
        assert!(!last_error().is_empty());

        assert_eq!(hrx_parse_assessment(ptr::null(), model.as_ptr(), &mut out), HrxStatus::NullPointer);
        assert_eq!(hrx_parse_assessment(raw.as_ptr(), model.as_ptr(), ptr::null_mut()), HrxStatus::NullPointer);

        let bad_utf8 = [0xffu8, 0xfe, 0];
        assert_eq!(
            hrx_parse_assessment(bad_utf8.as_ptr().cast(), model.as_ptr(), &mut out),
            HrxStatus::InvalidUtf8
        );
    }
}

#[test]
fn consensus_parse_carries_rationale() {
    unsafe {
        let raw = c(&format!("{}RATIONALE: two of three agree\n", strict_answer(StateLabel::Fatigue)));
        let mut out = ptr::null_mut();
        assert_eq!(hrx_parse_consensus(raw.as_ptr(), &mut out), HrxStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["assessment"]["state"], "fatigue");
        assert_eq!(v["rationale"], "two of three agree");
    }
}

#[test]
fn voting_and_agreement() {
    unsafe {
        let mut state = HrxState::Normal;
        let votes = [HrxState::Injury as i32, HrxState::Normal as i32, HrxState::Injury as i32];
        assert_eq!(hrx_majority_vote(votes.as_ptr(), 3, &mut state), HrxStatus::Ok);
        assert_eq!(state, HrxState::Injury);

        let tie = [HrxState::Fatigue as i32, HrxState::Normal as i32];
        assert_eq!(hrx_majority_vote(tie.as_ptr(), 2, &mut state), HrxStatus::Ok);
        assert_eq!(state, HrxState::Tie);

        let mut score = 0.0;
        assert_eq!(hrx_agreement(votes.as_ptr(), 3, &mut score), HrxStatus::Ok);
        assert!((score - 1.0 / 3.0).abs() < 1e-12);

        assert_eq!(hrx_majority_vote(votes.as_ptr(), 0, &mut state), HrxStatus::InvalidArgument);
        let unknown = [7i32];
        assert_eq!(hrx_agreement(unknown.as_ptr(), 1, &mut score), HrxStatus::InvalidArgument);
        assert!(last_error().contains('7'));
    }
}

#[test]
fn split_sizes_follow_weights() {
    unsafe {
        let mut sizes = [0usize; 3];
        assert_eq!(hrx_split_sizes(1200, 4, 1, 1, sizes.as_mut_ptr()), HrxStatus::Ok);
        assert_eq!(sizes, [800, 200, 200]);
        assert_eq!(hrx_split_sizes(10, 0, 0, 0, sizes.as_mut_ptr()), HrxStatus::InvalidArgument);
    }
}

#[test]
fn store_handle_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let path = c(dir.path().to_str().unwrap());
        let mut store = ptr::null_mut();
        assert_eq!(hrx_store_open(path.as_ptr(), &mut store), HrxStatus::Ok);

        let mut ids = Vec::new();
        for i in 0..6 {
            let payload = serde_json::to_string(&annotated_payload(Some(&format!("c{i}")), StateLabel::Injury)).unwrap();
            let payload = c(&payload);
            let mut id = ptr::null_mut();
            assert_eq!(hrx_store_ingest_json(store, payload.as_ptr(), ptr::null(), &mut id), HrxStatus::Ok);
            ids.push(take(id));
        }
        assert_eq!(ids[3], "c3");

        let dup = c(&serde_json::to_string(&annotated_payload(Some("c0"), StateLabel::Injury)).unwrap());
        let mut id = ptr::null_mut();
        assert_eq!(hrx_store_ingest_json(store, dup.as_ptr(), ptr::null(), &mut id), HrxStatus::Store);
        let bad = c("{\"not\": \"a case\"}");
        assert_eq!(hrx_store_ingest_json(store, bad.as_ptr(), ptr::null(), &mut id), HrxStatus::ParseError);

        let mut len = 0;
        assert_eq!(hrx_store_len(store, &mut len), HrxStatus::Ok);
        assert_eq!(len, 6);

        let mut out = ptr::null_mut();
        let cid = c("c2");
        assert_eq!(hrx_store_get_json(store, cid.as_ptr(), &mut out), HrxStatus::Ok);
        let record: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(record["case_id"], "c2");
        let missing = c("nope");
        assert_eq!(hrx_store_get_json(store, missing.as_ptr(), &mut out), HrxStatus::Store);

        assert_eq!(hrx_store_split(store, 7, &mut out), HrxStatus::Ok);
        let first = take(out);
        assert_eq!(hrx_store_split(store, 7, &mut out), HrxStatus::Ok);
        assert_eq!(take(out), first, "same seed, same split");
        let split: serde_json::Value = serde_json::from_str(&first).unwrap();
        assert_eq!(split["train_ids"].as_array().unwrap().len(), 4);
        hrx_store_free(store);
        hrx_store_free(ptr::null_mut());

        // Reopening sees the persisted cases.
        let mut again = ptr::null_mut();
        assert_eq!(hrx_store_open(path.as_ptr(), &mut again), HrxStatus::Ok);
        assert_eq!(hrx_store_len(again, &mut len), HrxStatus::Ok);
        assert_eq!(len, 6);
        hrx_store_free(again);
    }
}

#[test]
fn loss_log_report() {
    let rows = "{\"step\":0,\"train_loss\":3.0,\"val_loss\":3.5}\n\
                {\"step\":10,\"train_loss\":2.0,\"val_loss\":2.5}\n\
                {\"step\":20,\"train_loss\":1.0,\"val_loss\":2.0}\n";
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("loss.jsonl");
    std::fs::write(&file, rows).unwrap();
    unsafe {
        let text = c(rows);
        let mut log = ptr::null_mut();
        assert_eq!(hrx_loss_log_parse(text.as_ptr(), &mut log), HrxStatus::Ok);
        let mut abc = 0.0;
        assert_eq!(hrx_loss_log_abc(log, &mut abc), HrxStatus::Ok);
        // Gap 0.5, 0.5, 1.0 at steps 0, 10, 20.
        assert!((abc - (5.0 + 7.5)).abs() < 1e-12, "abc = {abc}");

        let mut out = ptr::null_mut();
        assert_eq!(hrx_loss_log_report_json(log, 5, 1e-3, 5, 0.1, &mut out), HrxStatus::Ok);
        let report: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(report["abc"].as_f64().unwrap(), abc);
        hrx_loss_log_free(log);

        let path = c(file.to_str().unwrap());
        let mut from_file = ptr::null_mut();
        assert_eq!(hrx_loss_log_open(path.as_ptr(), &mut from_file), HrxStatus::Ok);
        assert_eq!(hrx_loss_log_abc(from_file, &mut abc), HrxStatus::Ok);
        assert!((abc - 12.5).abs() < 1e-12);
        hrx_loss_log_free(from_file);

        let missing = c(dir.path().join("absent.jsonl").to_str().unwrap());
        assert_eq!(hrx_loss_log_open(missing.as_ptr(), &mut from_file), HrxStatus::Io);
        let bad = c("{\"step\":2,\"train_loss\":1.0}\n{\"step\":1,\"train_loss\":1.0}\n");
        assert_eq!(hrx_loss_log_parse(bad.as_ptr(), &mut from_file), HrxStatus::Analytics);
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(hrx_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(|p| p.parent()).unwrap().to_path_buf()
}

#[test]
fn c_client_compiles_and_runs() {
    let lib_dir = target_dir();
    if !lib_dir.join("libhreflex_ffi.a").exists() {
        let status = Command::new(env!("CARGO"))
            .args(["build", "-p", "hreflex-ffi"])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let out_dir = tempfile::tempdir().unwrap();
    let exe = out_dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let output = Command::new(&cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(lib_dir.join("libhreflex_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap_or_else(|e| panic!("running {cc}: {e}"));
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
