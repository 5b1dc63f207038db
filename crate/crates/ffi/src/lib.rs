//! C ABI for `hreflex-core`.
//!
//! Conventions:
//! - every fallible function returns an [`HrxStatus`]; results go through out
//!   pointers, which are written only on `HRX_OK`
//! - on failure, [`hrx_last_error`] returns a description for the calling thread
//! - strings returned by this library are owned by the caller and must be
//!   released with [`hrx_string_free`]
//! - handles ([`HrxStore`], [`HrxLossLog`]) are opaque and released with their
//!   matching `_free` function
//!
//! The generated header lives at `include/hreflex.h`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use libc::{c_char, size_t};

use hreflex_core::analytics::{self, LossLog, ReportOptions};
use hreflex_core::consensus::{majority_vote, state_agreement, Majority};
use hreflex_core::parser::{parse_assessment, parse_consensus};
use hreflex_core::record_store::{split_dataset, CasePayload, CaseStore, SplitRatios, StateLabel};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ParseError = 4,
    Io = 5,
    Store = 6,
    Analytics = 7,
    Panic = 99,
}

/// State labels as integers. `HRX_STATE_TIE` is only produced by
/// [`hrx_majority_vote`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrxState {
    Fatigue = 0,
    Injury = 1,
    Recovery = 2,
    Normal = 3,
    Tie = -1,
}

impl HrxState {
    fn from_label(label: StateLabel) -> Self {
        match label {
            StateLabel::Fatigue => HrxState::Fatigue,
            StateLabel::Injury => HrxState::Injury,
            StateLabel::Recovery => HrxState::Recovery,
            StateLabel::Normal => HrxState::Normal,
        }
    }
}

/// Opaque handle to a case store directory.
pub struct HrxStore {
    inner: CaseStore,
}

/// Opaque handle to a parsed loss log.
pub struct HrxLossLog {
    inner: LossLog,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(HrxStatus, String);

impl Failure {
    fn new(status: HrxStatus, msg: impl ToString) -> Self {
        Failure(status, msg.to_string())
    }
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HrxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HrxStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HrxStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(HrxStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(HrxStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(HrxStatus::NullPointer, format!("`{name}` is null")))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::new(HrxStatus::InvalidArgument, "result contains a nul byte"))
}

unsafe fn state_slice(states: *const i32, len: size_t) -> Result<Vec<StateLabel>, Failure> {
    if len == 0 {
        return Err(Failure::new(HrxStatus::InvalidArgument, "state list is empty"));
    }
    if states.is_null() {
        return Err(Failure::new(HrxStatus::NullPointer, "`states` is null"));
    }
    std::slice::from_raw_parts(states, len)
        .iter()
        .map(|&code| {
            usize::try_from(code)
                .ok()
                .and_then(|i| StateLabel::ALL.get(i).copied())
                .ok_or_else(|| Failure::new(HrxStatus::InvalidArgument, format!("unknown state code {code}")))
        })
        .collect()
}

/// Library version as a static string. Do not free.
#[no_mangle]
pub extern "C" fn hrx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Free with
/// [`hrx_string_free`].
#[no_mangle]
pub extern "C" fn hrx_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |m| m.clone().into_raw()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hrx_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses one model output into assessment JSON.
///
/// # Safety
/// `raw` and `source_model` must be NUL-terminated strings; `out_json` must be
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hrx_parse_assessment(
    raw: *const c_char,
    source_model: *const c_char,
    out_json: *mut *mut c_char,
) -> HrxStatus {
    guard(|| {
        let raw = str_arg(raw, "raw")?;
        let model = str_arg(source_model, "source_model")?;
        let out = out_ptr(out_json, "out_json")?;
        let a = parse_assessment(raw, model).map_err(|e| Failure::new(HrxStatus::ParseError, e))?;
        *out = into_c_string(serde_json::to_string(&a).expect("assessment serializes"))?;
        Ok(())
    })
}

/// Parses a reasoning-model answer into `{"assessment": ..., "rationale": ...}`.
///
/// # Safety
/// `raw` must be a NUL-terminated string; `out_json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hrx_parse_consensus(raw: *const c_char, out_json: *mut *mut c_char) -> HrxStatus {
    guard(|| {
        let raw = str_arg(raw, "raw")?;
        let out = out_ptr(out_json, "out_json")?;
        let (assessment, rationale) = parse_consensus(raw).map_err(|e| Failure::new(HrxStatus::ParseError, e))?;
        let value = serde_json::json!({ "assessment": assessment, "rationale": rationale });
        *out = into_c_string(value.to_string())?;
        Ok(())
    })
}

/// Strict plurality over `len` state codes; writes `HRX_STATE_TIE` on a tie.
///
/// # Safety
/// `states` must point to `len` readable `int32_t`; `out_state` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hrx_majority_vote(states: *const i32, len: size_t, out_state: *mut HrxState) -> HrxStatus {
    guard(|| {
        let labels = state_slice(states, len)?;
        let out = out_ptr(out_state, "out_state")?;
        *out = match majority_vote(&labels).map_err(|e| Failure::new(HrxStatus::InvalidArgument, e))? {
            Majority::Winner(s) => HrxState::from_label(s),
            Majority::Tie => HrxState::Tie,
        };
        Ok(())
    })
}

/// Fraction of unordered pairs with equal states (1.0 for one state).
///
/// # Safety
/// `states` must point to `len` readable `int32_t`; `out_score` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hrx_agreement(states: *const i32, len: size_t, out_score: *mut f64) -> HrxStatus {
    guard(|| {
        let labels = state_slice(states, len)?;
        let out = out_ptr(out_score, "out_score")?;
        *out = state_agreement(&labels).map_err(|e| Failure::new(HrxStatus::InvalidArgument, e))?;
        Ok(())
    })
}

/// Partition sizes for `n` ids under integer weights `train:val:test`.
///
/// # Safety
/// `out_sizes` must point to 3 writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn hrx_split_sizes(
    n: size_t,
    train: u32,
    val: u32,
    test: u32,
    out_sizes: *mut size_t,
) -> HrxStatus {
    guard(|| {
        if out_sizes.is_null() {
            return Err(Failure::new(HrxStatus::NullPointer, "`out_sizes` is null"));
        }
        let (a, b, c) = SplitRatios { train, val, test }
            .sizes(n)
            .map_err(|e| Failure::new(HrxStatus::InvalidArgument, e))?;
        std::slice::from_raw_parts_mut(out_sizes, 3).copy_from_slice(&[a, b, c]);
        Ok(())
    })
}

/// Opens (creating if needed) a case store.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_store` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hrx_store_open(path: *const c_char, out_store: *mut *mut HrxStore) -> HrxStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_ptr(out_store, "out_store")?;
        let inner = CaseStore::open(path).map_err(|e| Failure::new(HrxStatus::Store, e))?;
        *out = Box::into_raw(Box::new(HrxStore { inner }));
        Ok(())
    })
}

/// # Safety
/// `store` must be NULL or a handle from [`hrx_store_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hrx_store_free(store: *mut HrxStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Number of cases in the store.
///
/// # Safety
/// `store` must be a live handle; `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hrx_store_len(store: *const HrxStore, out_len: *mut size_t) -> HrxStatus {
    guard(|| {
        let store = store.as_ref().ok_or_else(|| Failure::new(HrxStatus::NullPointer, "`store` is null"))?;
        *out_ptr(out_len, "out_len")? = store.inner.len();
        Ok(())
    })
}

/// Ingests one case payload (JSON, same schema as `POST /cases`). Image
/// sources must be embedded `data`; paths are resolved against `base_dir`
/// when it is not NULL. Writes the assigned case id.
///
/// # Safety
/// `store` must be a live handle; `payload_json` a NUL-terminated string;
/// `base_dir` NULL or a NUL-terminated string; `out_case_id` valid.
#[no_mangle]
pub unsafe extern "C" fn hrx_store_ingest_json(
    store: *mut HrxStore,
    payload_json: *const c_char,
    base_dir: *const c_char,
    out_case_id: *mut *mut c_char,
) -> HrxStatus {
    guard(|| {
        let store = store.as_ref().ok_or_else(|| Failure::new(HrxStatus::NullPointer, "`store` is null"))?;
        let text = str_arg(payload_json, "payload_json")?;
        let out = out_ptr(out_case_id, "out_case_id")?;
        let mut payload: CasePayload =
            serde_json::from_str(text).map_err(|e| Failure::new(HrxStatus::ParseError, e))?;
        if !base_dir.is_null() {
            let base = str_arg(base_dir, "base_dir")?;
            payload = payload.resolve_image(Path::new(base)).map_err(|e| Failure::new(HrxStatus::Store, e))?;
        }
        let record = store.inner.ingest_case(payload).map_err(|e| Failure::new(HrxStatus::Store, e))?;
        *out = into_c_string(record.case_id)?;
        Ok(())
    })
}

/// Case record as JSON.
///
/// # Safety
/// `store` must be a live handle; `case_id` a NUL-terminated string;
/// `out_json` valid.
#[no_mangle]
pub unsafe extern "C" fn hrx_store_get_json(
    store: *const HrxStore,
    case_id: *const c_char,
    out_json: *mut *mut c_char,
) -> HrxStatus {
    guard(|| {
        let store = store.as_ref().ok_or_else(|| Failure::new(HrxStatus::NullPointer, "`store` is null"))?;
        let id = str_arg(case_id, "case_id")?;
        let out = out_ptr(out_json, "out_json")?;
        let record = store
            .inner
            .get(id)
            .ok_or_else(|| Failure::new(HrxStatus::Store, format!("case `{id}` not found")))?;
        *out = into_c_string(serde_json::to_string(&record).expect("record serializes"))?;
        Ok(())
    })
}

/// Splits every stored case with the default 4:1:1 weights, saves the split
/// in the store and writes it as JSON.
///
/// # Safety
/// `store` must be a live handle; `out_json` valid.
#[no_mangle]
pub unsafe extern "C" fn hrx_store_split(store: *mut HrxStore, seed: u64, out_json: *mut *mut c_char) -> HrxStatus {
    guard(|| {
        let store = store.as_ref().ok_or_else(|| Failure::new(HrxStatus::NullPointer, "`store` is null"))?;
        let out = out_ptr(out_json, "out_json")?;
        let split = split_dataset(&store.inner.ids(), seed, SplitRatios::default())
            .map_err(|e| Failure::new(HrxStatus::InvalidArgument, e))?;
        store.inner.save_split(&split).map_err(|e| Failure::new(HrxStatus::Store, e))?;
        *out = into_c_string(serde_json::to_string(&split).expect("split serializes"))?;
        Ok(())
    })
}

/// Parses loss-log text (line-delimited JSON).
///
/// # Safety
/// `jsonl` must be a NUL-terminated string; `out_log` valid.
#[no_mangle]
pub unsafe extern "C" fn hrx_loss_log_parse(jsonl: *const c_char, out_log: *mut *mut HrxLossLog) -> HrxStatus {
    guard(|| {
        let text = str_arg(jsonl, "jsonl")?;
        let out = out_ptr(out_log, "out_log")?;
        let inner = analytics::parse_loss_log(text.as_bytes()).map_err(|e| Failure::new(HrxStatus::Analytics, e))?;
        *out = Box::into_raw(Box::new(HrxLossLog { inner }));
        Ok(())
    })
}

/// Reads and parses a loss-log file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_log` valid.
#[no_mangle]
pub unsafe extern "C" fn hrx_loss_log_open(path: *const c_char, out_log: *mut *mut HrxLossLog) -> HrxStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_ptr(out_log, "out_log")?;
        let file = std::fs::File::open(path).map_err(|e| Failure::new(HrxStatus::Io, e))?;
        let inner = analytics::parse_loss_log(std::io::BufReader::new(file))
            .map_err(|e| Failure::new(HrxStatus::Analytics, e))?;
        *out = Box::into_raw(Box::new(HrxLossLog { inner }));
        Ok(())
    })
}

/// # Safety
/// `log` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hrx_loss_log_free(log: *mut HrxLossLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// Signed area between validation and training curves.
///
/// # Safety
/// `log` must be a live handle; `out_abc` valid.
#[no_mangle]
pub unsafe extern "C" fn hrx_loss_log_abc(log: *const HrxLossLog, out_abc: *mut f64) -> HrxStatus {
    guard(|| {
        let log = log.as_ref().ok_or_else(|| Failure::new(HrxStatus::NullPointer, "`log` is null"))?;
        *out_ptr(out_abc, "out_abc")? =
            analytics::area_between_curves(&log.inner).map_err(|e| Failure::new(HrxStatus::Analytics, e))?;
        Ok(())
    })
}

/// Full loss report as JSON.
///
/// # Safety
/// `log` must be a live handle; `out_json` valid.
#[no_mangle]
pub unsafe extern "C" fn hrx_loss_log_report_json(
    log: *const HrxLossLog,
    plateau_window: size_t,
    plateau_rel_tol: f64,
    spike_window: size_t,
    spike_threshold: f64,
    out_json: *mut *mut c_char,
) -> HrxStatus {
    guard(|| {
        let log = log.as_ref().ok_or_else(|| Failure::new(HrxStatus::NullPointer, "`log` is null"))?;
        let out = out_ptr(out_json, "out_json")?;
        let options = ReportOptions { plateau_window, plateau_rel_tol, spike_window, spike_threshold };
        let report =
            analytics::loss_report(&log.inner, &options).map_err(|e| Failure::new(HrxStatus::Analytics, e))?;
        *out = into_c_string(serde_json::to_string(&report).expect("report serializes"))?;
        Ok(())
    })
}
