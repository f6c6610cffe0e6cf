//! C ABI for the sandbox simulator.
//!
//! The surface is deliberately small: load a scenario, run it, verify a
//! manifest. Everything crosses the boundary as UTF-8 JSON strings, and
//! every function returns a `PccStatus`. On failure the thread-local
//! message from `pcc_last_error_message` explains what went wrong.
//!
//! Ownership rules:
//! - `PccScenario*` handles are freed with `pcc_scenario_free`.
//! - `char*` outputs are freed with `pcc_string_free`.
//! - Input pointers are borrowed for the duration of the call only.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

use pcc_sim::fleet::{load_scenario, run, Scenario};
use pcc_sim::policy::{parse_association_config, parse_manifest, verify_cdd, CddPartnerConfig};

/// Result code for every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PccStatus {
    /// The call succeeded.
    PccOk = 0,
    /// A required pointer was null or a string was not valid UTF-8.
    PccInvalidArgument = 1,
    /// The input failed to parse or validate.
    PccParseError = 2,
    /// The simulation itself failed.
    PccRuntimeError = 3,
    /// The manifest verifier found violations (the report is still returned).
    PccVerifyFailed = 4,
}

/// Opaque handle to a loaded, validated scenario.
pub struct PccScenario {
    inner: Scenario,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul stripped");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

/// Borrows a C string as &str, recording an error on failure.
///
/// # Safety
/// `ptr` must be null or a valid nul-terminated string.
unsafe fn borrow_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, PccStatus> {
    if ptr.is_null() {
        set_error(format!("{what} is null"));
        return Err(PccStatus::PccInvalidArgument);
    }
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(s),
        Err(_) => {
            set_error(format!("{what} is not valid UTF-8"));
            Err(PccStatus::PccInvalidArgument)
        }
    }
}

fn give_string(s: String, out: *mut *mut c_char) {
    let c = CString::new(s.replace('\0', " ")).expect("nul stripped");
    unsafe { *out = c.into_raw() };
}

/// Returns the message for the most recent failure on this thread, or null
/// if the last call succeeded. The pointer is valid until the next call on
/// this thread; do not free it.
#[no_mangle]
pub extern "C" fn pcc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow().as_ref().map_or(ptr::null(), |msg| msg.as_ptr())
    })
}

/// Returns the simulator version as a static string. Do not free it.
#[no_mangle]
pub extern "C" fn pcc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates scenario JSON. On success `*out` owns a new
/// scenario handle.
///
/// # Safety
/// `json` must be a valid nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcc_scenario_load(
    json: *const c_char,
    out: *mut *mut PccScenario,
) -> PccStatus {
    clear_error();
    if out.is_null() {
        set_error("out is null".into());
        return PccStatus::PccInvalidArgument;
    }
    let text = match unsafe { borrow_str(json, "scenario json") } {
        Ok(s) => s,
        Err(status) => return status,
    };
    match load_scenario(text) {
        Ok(inner) => {
            unsafe { *out = Box::into_raw(Box::new(PccScenario { inner })) };
            PccStatus::PccOk
        }
        Err(e) => {
            set_error(e.to_string());
            PccStatus::PccParseError
        }
    }
}

/// Returns the scenario's name. Free the string with `pcc_string_free`.
///
/// # Safety
/// `scenario` must come from `pcc_scenario_load` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pcc_scenario_name(
    scenario: *const PccScenario,
    out: *mut *mut c_char,
) -> PccStatus {
    clear_error();
    if scenario.is_null() || out.is_null() {
        set_error("scenario or out is null".into());
        return PccStatus::PccInvalidArgument;
    }
    give_string(unsafe { &*scenario }.inner.name.clone(), out);
    PccStatus::PccOk
}

/// Runs a scenario and returns the full report as JSON via `report_out`.
/// Pass `has_seed_override = 0` to use the scenario's own seed. `passed_out`
/// may be null; otherwise it is set to 1 when all assertions held.
///
/// # Safety
/// `scenario` must come from `pcc_scenario_load`; `report_out` must be a
/// valid pointer; `passed_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn pcc_scenario_run(
    scenario: *const PccScenario,
    has_seed_override: i32,
    seed_override: u64,
    report_out: *mut *mut c_char,
    passed_out: *mut i32,
) -> PccStatus {
    clear_error();
    if scenario.is_null() || report_out.is_null() {
        set_error("scenario or report_out is null".into());
        return PccStatus::PccInvalidArgument;
    }
    let seed = (has_seed_override != 0).then_some(seed_override);
    match run(&unsafe { &*scenario }.inner, seed) {
        Ok(report) => {
            if !passed_out.is_null() {
                unsafe { *passed_out = report.passed as i32 };
            }
            give_string(report.to_json(), report_out);
            PccStatus::PccOk
        }
        Err(e) => {
            set_error(e.to_string());
            PccStatus::PccRuntimeError
        }
    }
}

/// Frees a scenario handle. Null is a no-op.
///
/// # Safety
/// `scenario` must be null or a pointer from `pcc_scenario_load`, not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn pcc_scenario_free(scenario: *mut PccScenario) {
    if !scenario.is_null() {
        drop(unsafe { Box::from_raw(scenario) });
    }
}

/// Verifies a package manifest against an allow-association config.
/// `report_out` receives the verifier report as JSON Lines and is written
/// on both `PccOk` (clean) and `PccVerifyFailed` (violations found).
///
/// # Safety
/// `manifest_json` and `association_xml` must be valid nul-terminated
/// strings; `report_out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcc_verify_manifest(
    manifest_json: *const c_char,
    association_xml: *const c_char,
    report_out: *mut *mut c_char,
) -> PccStatus {
    clear_error();
    if report_out.is_null() {
        set_error("report_out is null".into());
        return PccStatus::PccInvalidArgument;
    }
    let manifest_text = match unsafe { borrow_str(manifest_json, "manifest json") } {
        Ok(s) => s,
        Err(status) => return status,
    };
    let assoc_text = match unsafe { borrow_str(association_xml, "association xml") } {
        Ok(s) => s,
        Err(status) => return status,
    };
    let manifest = match parse_manifest(manifest_text) {
        Ok(m) => m,
        Err(e) => {
            set_error(e.to_string());
            return PccStatus::PccParseError;
        }
    };
    let rules = match parse_association_config(assoc_text) {
        Ok(r) => r,
        Err(e) => {
            set_error(e.to_string());
            return PccStatus::PccParseError;
        }
    };
    let report = verify_cdd(&manifest, &rules, &CddPartnerConfig::default());
    let clean = report.is_clean();
    give_string(report.to_jsonl(), report_out);
    if clean {
        PccStatus::PccOk
    } else {
        set_error(format!("{} violation(s)", report.violations.len()));
        PccStatus::PccVerifyFailed
    }
}

/// Frees a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pcc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn cstring(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    fn take_string(ptr: *mut c_char) -> String {
        assert!(!ptr.is_null());
        let s = unsafe { CStr::from_ptr(ptr) }.to_str().unwrap().to_string();
        unsafe { pcc_string_free(ptr) };
        s
    }

    fn fixture(rel: &str) -> String {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel);
        std::fs::read_to_string(path).unwrap()
    }

    #[test]
    fn load_run_free_roundtrip() {
        let json = cstring(&fixture("scenarios/pir_demo.json"));
        let mut scenario: *mut PccScenario = ptr::null_mut();
        assert_eq!(
            unsafe { pcc_scenario_load(json.as_ptr(), &mut scenario) },
            PccStatus::PccOk
        );
        let mut name: *mut c_char = ptr::null_mut();
        assert_eq!(unsafe { pcc_scenario_name(scenario, &mut name) }, PccStatus::PccOk);
        assert_eq!(take_string(name), "pir_demo");

        let mut report: *mut c_char = ptr::null_mut();
        let mut passed = 0i32;
        assert_eq!(
            unsafe { pcc_scenario_run(scenario, 0, 0, &mut report, &mut passed) },
            PccStatus::PccOk
        );
        assert_eq!(passed, 1);
        let parsed: serde_json::Value = serde_json::from_str(&take_string(report)).unwrap();
        assert_eq!(parsed["scenario"], "pir_demo");
        unsafe { pcc_scenario_free(scenario) };
        assert!(pcc_last_error_message().is_null());
    }

    #[test]
    fn seed_override_changes_transcript_not_result() {
        let json = cstring(&fixture("scenarios/pir_demo.json"));
        let mut scenario: *mut PccScenario = ptr::null_mut();
        unsafe { pcc_scenario_load(json.as_ptr(), &mut scenario) };
        let mut a: *mut c_char = ptr::null_mut();
        let mut b: *mut c_char = ptr::null_mut();
        unsafe {
            pcc_scenario_run(scenario, 1, 7, &mut a, ptr::null_mut());
            pcc_scenario_run(scenario, 1, 7, &mut b, ptr::null_mut());
        }
        assert_eq!(take_string(a), take_string(b));
        unsafe { pcc_scenario_free(scenario) };
    }

    #[test]
    fn bad_json_reports_parse_error() {
        let json = cstring("{ not json");
        let mut scenario: *mut PccScenario = ptr::null_mut();
        assert_eq!(
            unsafe { pcc_scenario_load(json.as_ptr(), &mut scenario) },
            PccStatus::PccParseError
        );
        assert!(scenario.is_null());
        let msg = unsafe { CStr::from_ptr(pcc_last_error_message()) };
        assert!(!msg.to_bytes().is_empty());
    }

    #[test]
    fn null_arguments_rejected() {
        let mut scenario: *mut PccScenario = ptr::null_mut();
        assert_eq!(
            unsafe { pcc_scenario_load(ptr::null(), &mut scenario) },
            PccStatus::PccInvalidArgument
        );
        assert_eq!(
            unsafe { pcc_scenario_load(cstring("{}").as_ptr(), ptr::null_mut()) },
            PccStatus::PccInvalidArgument
        );
        let mut out: *mut c_char = ptr::null_mut();
        assert_eq!(
            unsafe { pcc_scenario_run(ptr::null(), 0, 0, &mut out, ptr::null_mut()) },
            PccStatus::PccInvalidArgument
        );
    }

    #[test]
    fn verify_clean_and_dirty() {
        let manifest = cstring(&fixture("fixtures/asi_manifest.json"));
        let assoc = cstring(&fixture("fixtures/table2.xml"));
        let mut report: *mut c_char = ptr::null_mut();
        assert_eq!(
            unsafe { pcc_verify_manifest(manifest.as_ptr(), assoc.as_ptr(), &mut report) },
            PccStatus::PccOk
        );
        take_string(report);

        let dirty = cstring(&fixture("fixtures/asi_with_internet.json"));
        let mut report: *mut c_char = ptr::null_mut();
        assert_eq!(
            unsafe { pcc_verify_manifest(dirty.as_ptr(), assoc.as_ptr(), &mut report) },
            PccStatus::PccVerifyFailed
        );
        assert!(take_string(report).contains("9.8.6-internet"));
    }

    #[test]
    fn version_is_static() {
        let v = unsafe { CStr::from_ptr(pcc_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
