//! C ABI for the adjustkit library.
//!
//! Conventions:
//! - Objects are opaque handles created and destroyed by `akx_*_new` /
//!   `akx_*_free` pairs; never dereference them from C.
//! - Functions returning `AkxStatus` report success as `AKX_STATUS_OK`; on
//!   failure, `akx_last_error_message` returns a thread-local description.
//! - Strings crossing the boundary are NUL-terminated UTF-8. Strings
//!   returned by `akx_*_json` are owned by the handle they came from and
//!   valid until it is freed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

use adjustkit::config::{run_analysis, AnalysisConfig, AnalysisOutput};
use adjustkit::error::{Error, ErrorClass};
use adjustkit::scenarios;
use adjustkit::trialdata::{SchemaConfig, TrialDataset};

/// Status codes mirroring the CLI exit-code contract.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum AkxStatus {
    /// Success.
    Ok = 0,
    /// Null pointer or malformed UTF-8 argument.
    BadArgument = 1,
    /// Configuration error.
    Config = 2,
    /// Data error.
    Data = 3,
    /// Estimation failure.
    Estimation = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> AkxStatus {
    match err.class() {
        ErrorClass::Config => AkxStatus::Config,
        ErrorClass::Data => AkxStatus::Data,
        ErrorClass::Estimation => AkxStatus::Estimation,
    }
}

/// A loaded trial dataset (opaque).
pub struct AkxDataset {
    inner: TrialDataset,
}

/// An analysis result (opaque).
pub struct AkxResult {
    output: AnalysisOutput,
    json: CString,
}

/// A scenario report (opaque).
pub struct AkxReport {
    all_pass: bool,
    json: CString,
}

unsafe fn cstr<'a>(p: *const c_char) -> Option<&'a str> {
    if p.is_null() {
        return None;
    }
    CStr::from_ptr(p).to_str().ok()
}

/// Last error message for this thread, or NULL if none. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn akx_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(ptr::null(), |c| c.as_ptr())
    })
}

/// Parse a CSV dataset using a TOML schema declaration. On success writes a
/// new handle to `out`; free it with `akx_dataset_free`.
///
/// # Safety
/// `csv` and `schema_toml` must be NUL-terminated UTF-8; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn akx_dataset_from_csv(
    csv: *const c_char,
    schema_toml: *const c_char,
    out: *mut *mut AkxDataset,
) -> AkxStatus {
    if out.is_null() {
        return AkxStatus::BadArgument;
    }
    let (Some(csv), Some(schema)) = (cstr(csv), cstr(schema_toml)) else {
        set_error("null or non-UTF-8 argument");
        return AkxStatus::BadArgument;
    };
    let schema = match SchemaConfig::from_toml(schema) {
        Ok(s) => s,
        Err(e) => {
            set_error(&e.to_string());
            return status_of(&e);
        }
    };
    match TrialDataset::from_csv_str(csv, &schema) {
        Ok(d) => {
            *out = Box::into_raw(Box::new(AkxDataset { inner: d }));
            AkxStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// Load one of the built-in datasets: "appendix1", "appendix1_missing" or
/// "table2".
///
/// # Safety
/// `name` must be NUL-terminated UTF-8; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn akx_dataset_builtin(
    name: *const c_char,
    out: *mut *mut AkxDataset,
) -> AkxStatus {
    if out.is_null() {
        return AkxStatus::BadArgument;
    }
    let Some(name) = cstr(name) else {
        set_error("null or non-UTF-8 argument");
        return AkxStatus::BadArgument;
    };
    let data = match name {
        "appendix1" => scenarios::appendix1_full_data(),
        "appendix1_missing" => scenarios::appendix1_missing_data(),
        "table2" => scenarios::table2_data(),
        other => {
            set_error(&format!("unknown builtin dataset `{other}`"));
            return AkxStatus::Config;
        }
    };
    *out = Box::into_raw(Box::new(AkxDataset { inner: data }));
    AkxStatus::Ok
}

/// Number of participants in the dataset.
///
/// # Safety
/// `dataset` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn akx_dataset_len(dataset: *const AkxDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.n()
}

/// # Safety
/// `dataset` must be a handle from this library or NULL; it is invalid
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn akx_dataset_free(dataset: *mut AkxDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Run the analysis pipeline described by a TOML configuration (the CLI's
/// config format; the [schema] section is ignored here because the dataset
/// is already constructed). On success writes a new result handle to `out`.
///
/// # Safety
/// `dataset` must be a live handle; `config_toml` NUL-terminated UTF-8;
/// `out` valid.
#[no_mangle]
pub unsafe extern "C" fn akx_analyze(
    dataset: *const AkxDataset,
    config_toml: *const c_char,
    out: *mut *mut AkxResult,
) -> AkxStatus {
    if dataset.is_null() || out.is_null() {
        set_error("null argument");
        return AkxStatus::BadArgument;
    }
    let Some(config) = cstr(config_toml) else {
        set_error("null or non-UTF-8 config");
        return AkxStatus::BadArgument;
    };
    let config = match AnalysisConfig::from_toml(config) {
        Ok(c) => c,
        Err(e) => {
            set_error(&e.to_string());
            return status_of(&e);
        }
    };
    match run_analysis(&config, &(*dataset).inner) {
        Ok(output) => {
            let json = serde_json::json!({
                "command": "analyze",
                "config": serde_json::to_value(&config).unwrap(),
                "results": [serde_json::to_value(&output.result).unwrap()],
                "diagnostics": output.diagnostics,
                "seed_provenance": output.seed_provenance,
            });
            let json = CString::new(json.to_string()).unwrap();
            *out = Box::into_raw(Box::new(AkxResult { output, json }));
            AkxStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// Point estimate on the estimation scale (log scale for ratio summaries).
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn akx_result_estimate(result: *const AkxResult) -> f64 {
    if result.is_null() {
        return f64::NAN;
    }
    (*result).output.result.estimate
}

/// Standard error on the estimation scale.
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn akx_result_se(result: *const AkxResult) -> f64 {
    if result.is_null() {
        return f64::NAN;
    }
    (*result).output.result.se
}

/// Confidence-interval bounds on the estimation scale.
///
/// # Safety
/// `result` must be a live handle; `lower` and `upper` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn akx_result_ci(
    result: *const AkxResult,
    lower: *mut f64,
    upper: *mut f64,
) -> AkxStatus {
    if result.is_null() || lower.is_null() || upper.is_null() {
        return AkxStatus::BadArgument;
    }
    *lower = (*result).output.result.ci.lower;
    *upper = (*result).output.result.ci.upper;
    AkxStatus::Ok
}

/// Full result document as JSON. Owned by the result handle; valid until
/// `akx_result_free`.
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn akx_result_json(result: *const AkxResult) -> *const c_char {
    if result.is_null() {
        return ptr::null();
    }
    (*result).json.as_ptr()
}

/// # Safety
/// `result` must be a handle from this library or NULL; invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn akx_result_free(result: *mut AkxResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Run a built-in demonstration scenario ("collapsibility", "appendix1",
/// "misspecification", "balance"); writes a report handle to `out`.
///
/// # Safety
/// `name` must be NUL-terminated UTF-8; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn akx_demo(name: *const c_char, out: *mut *mut AkxReport) -> AkxStatus {
    if out.is_null() {
        return AkxStatus::BadArgument;
    }
    let Some(name) = cstr(name) else {
        set_error("null or non-UTF-8 scenario name");
        return AkxStatus::BadArgument;
    };
    match scenarios::run(name) {
        Ok(report) => {
            let json = CString::new(serde_json::to_string(&report).unwrap()).unwrap();
            *out = Box::into_raw(Box::new(AkxReport {
                all_pass: report.all_pass(),
                json,
            }));
            AkxStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// 1 when every reference row of the report passed, else 0.
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn akx_report_all_pass(report: *const AkxReport) -> i32 {
    if report.is_null() {
        return 0;
    }
    i32::from((*report).all_pass)
}

/// Report as JSON; owned by the handle.
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn akx_report_json(report: *const AkxReport) -> *const c_char {
    if report.is_null() {
        return ptr::null();
    }
    (*report).json.as_ptr()
}

/// # Safety
/// `report` must be a handle from this library or NULL; invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn akx_report_free(report: *mut AkxReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn c(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    #[test]
    fn builtin_analyze_round_trip() {
        unsafe {
            let mut data: *mut AkxDataset = ptr::null_mut();
            let st = akx_dataset_builtin(c("appendix1").as_ptr(), &mut data);
            assert!(matches!(st, AkxStatus::Ok));
            assert_eq!(akx_dataset_len(data), 2000);

            let config = c(r#"
[estimand]
summary = "log_odds_ratio"
level = "marginal"
population = "complete_case"

[method]
kind = "standardisation"
covariates = ["x"]
"#);
            let mut result: *mut AkxResult = ptr::null_mut();
            let st = akx_analyze(data, config.as_ptr(), &mut result);
            assert!(matches!(st, AkxStatus::Ok));
            let or = akx_result_estimate(result).exp();
            assert!((or - 0.698).abs() < 5e-4, "{or}");
            let (mut lo, mut hi) = (0.0, 0.0);
            assert!(matches!(akx_result_ci(result, &mut lo, &mut hi), AkxStatus::Ok));
            assert!(lo < akx_result_estimate(result) && akx_result_estimate(result) < hi);
            let json = CStr::from_ptr(akx_result_json(result)).to_str().unwrap();
            assert!(json.contains("\"command\":\"analyze\""));
            akx_result_free(result);
            akx_dataset_free(data);
        }
    }

    #[test]
    fn csv_parse_and_error_codes() {
        unsafe {
            let schema = c(r#"
id = "id"
treat = "treat"
outcome = "y"
outcome_kind = "binary"
"#);
            let csv = c("id,treat,y\na,1,1\nb,0,0\n");
            let mut data: *mut AkxDataset = ptr::null_mut();
            assert!(matches!(
                akx_dataset_from_csv(csv.as_ptr(), schema.as_ptr(), &mut data),
                AkxStatus::Ok
            ));
            assert_eq!(akx_dataset_len(data), 2);
            akx_dataset_free(data);

            let bad = c("id,treat,y\na,7,1\n");
            let st = akx_dataset_from_csv(bad.as_ptr(), schema.as_ptr(), &mut data);
            assert!(matches!(st, AkxStatus::Data));
            let msg = CStr::from_ptr(akx_last_error_message()).to_str().unwrap();
            assert!(msg.contains("treat"), "{msg}");
        }
    }

    #[test]
    fn demo_report_handle() {
        unsafe {
            let mut report: *mut AkxReport = ptr::null_mut();
            assert!(matches!(
                akx_demo(c("collapsibility").as_ptr(), &mut report),
                AkxStatus::Ok
            ));
            assert_eq!(akx_report_all_pass(report), 1);
            let json = CStr::from_ptr(akx_report_json(report)).to_str().unwrap();
            assert!(json.contains("marginal_odds_ratio"));
            akx_report_free(report);

            let st = akx_demo(c("nope").as_ptr(), &mut report);
            assert!(matches!(st, AkxStatus::Config));
        }
    }
}
