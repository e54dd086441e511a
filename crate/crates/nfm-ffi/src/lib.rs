//! C ABI for the feature-memory anomaly scoring library.
//!
//! Everything crosses the boundary through opaque handles and status codes.
//! Handles own their data; free them with the matching `*_free` function
//! exactly once. On any non-`Ok` status the thread-local message retrieved
//! by [`nfm_last_error`] describes the failure; it stays valid until the
//! next failing call on the same thread.
//!
//! The generated header lands in `include/nfm.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nfm_core::memory_bank::MemoryBank;
use nfm_core::metrics::auroc;
use nfm_core::scoring::memory_score;
use nfm_core::tensor_io::{read_nfmb, write_nfmb, Tensor};

/// Result of every fallible call in this API.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfmStatus {
    /// Success.
    NfmOk = 0,
    /// A null handle or output pointer was passed.
    NfmNullPointer = 1,
    /// Arguments were structurally invalid (dimension mismatch, b = 0, ...).
    NfmInvalidArgument = 2,
    /// The filesystem said no (missing file, permissions, short read).
    NfmIoError = 3,
    /// A file exists but is not a valid artifact (bad magic, corrupt payload).
    NfmFormatError = 4,
    /// An internal panic was caught at the boundary; state is unchanged.
    NfmInternalError = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("nul bytes stripped");
    });
}

fn status_of(err: &nfm_core::Error) -> NfmStatus {
    match err {
        nfm_core::Error::Io { .. } => NfmStatus::NfmIoError,
        nfm_core::Error::Format { .. } => NfmStatus::NfmFormatError,
        nfm_core::Error::Invalid(_) => NfmStatus::NfmInvalidArgument,
    }
}

/// Runs `body` with panics converted to `NfmInternalError`.
fn guarded(body: impl FnOnce() -> NfmStatus) -> NfmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal panic".to_string());
            set_error(&message);
            NfmStatus::NfmInternalError
        }
    }
}

/// # Safety: `path` must be a valid NUL-terminated string.
unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, NfmStatus> {
    if path.is_null() {
        set_error("path is null");
        return Err(NfmStatus::NfmNullPointer);
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(NfmStatus::NfmInvalidArgument)
        }
    }
}

macro_rules! out_arg {
    ($ptr:expr, $name:literal) => {
        if $ptr.is_null() {
            set_error(concat!($name, " is null"));
            return NfmStatus::NfmNullPointer;
        }
    };
}

macro_rules! handle_arg {
    ($ptr:expr, $name:literal) => {
        match $ptr.as_ref() {
            Some(h) => h,
            None => {
                set_error(concat!($name, " handle is null"));
                return NfmStatus::NfmNullPointer;
            }
        }
    };
}

/// A matrix of `float` feature rows (opaque).
pub struct NfmTensor(Tensor);

/// A reference bank of normal feature rows (opaque).
pub struct NfmBank(MemoryBank);

/// Message for the most recent failure on this thread, as a NUL-terminated
/// string. Empty if nothing failed yet. The pointer stays valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nfm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Reads a tensor from an `.nfmb` file into a new handle.
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out` to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn nfm_tensor_read(
    path: *const c_char,
    out: *mut *mut NfmTensor,
) -> NfmStatus {
    guarded(|| {
        out_arg!(out, "out");
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match read_nfmb(path) {
            Ok(tensor) => {
                *out = Box::into_raw(Box::new(NfmTensor(tensor)));
                NfmStatus::NfmOk
            }
            Err(err) => {
                set_error(&err.to_string());
                status_of(&err)
            }
        }
    })
}

/// Writes a tensor to an `.nfmb` file.
///
/// # Safety
/// `tensor` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nfm_tensor_write(
    tensor: *const NfmTensor,
    path: *const c_char,
) -> NfmStatus {
    guarded(|| {
        let tensor = handle_arg!(tensor, "tensor");
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match write_nfmb(path, &tensor.0) {
            Ok(()) => NfmStatus::NfmOk,
            Err(err) => {
                set_error(&err.to_string());
                status_of(&err)
            }
        }
    })
}

/// Builds a tensor handle from a dense row-major buffer of `rows * dim`
/// floats. The data is copied; the caller keeps ownership of `data`.
/// Rejects non-finite values.
///
/// # Safety
/// `data` must point to at least `rows * dim` readable floats and `out` to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn nfm_tensor_create(
    rows: u64,
    dim: u64,
    data: *const f32,
    out: *mut *mut NfmTensor,
) -> NfmStatus {
    guarded(|| {
        out_arg!(out, "out");
        out_arg!(data, "data");
        let len = match usize::try_from(rows)
            .ok()
            .zip(usize::try_from(dim).ok())
            .and_then(|(r, d)| r.checked_mul(d))
        {
            Some(len) => len,
            None => {
                set_error("rows * dim overflows");
                return NfmStatus::NfmInvalidArgument;
            }
        };
        let values = std::slice::from_raw_parts(data, len).to_vec();
        match Tensor::new(rows as usize, dim as usize, values) {
            Ok(tensor) => {
                *out = Box::into_raw(Box::new(NfmTensor(tensor)));
                NfmStatus::NfmOk
            }
            Err(err) => {
                set_error(&err.to_string());
                NfmStatus::NfmInvalidArgument
            }
        }
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `tensor` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn nfm_tensor_rows(tensor: *const NfmTensor) -> u64 {
    tensor.as_ref().map_or(0, |t| t.0.rows() as u64)
}

/// Row width, or 0 for a null handle.
///
/// # Safety
/// `tensor` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn nfm_tensor_dim(tensor: *const NfmTensor) -> u64 {
    tensor.as_ref().map_or(0, |t| t.0.dim() as u64)
}

/// Frees a tensor handle. Null is a no-op.
///
/// # Safety
/// `tensor` must be a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn nfm_tensor_free(tensor: *mut NfmTensor) {
    if !tensor.is_null() {
        drop(Box::from_raw(tensor));
    }
}

/// Loads a saved bank (`.nfmb` plus metadata sidecar) into a new handle.
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out` to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn nfm_bank_load(path: *const c_char, out: *mut *mut NfmBank) -> NfmStatus {
    guarded(|| {
        out_arg!(out, "out");
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match MemoryBank::load(path) {
            Ok(bank) => {
                *out = Box::into_raw(Box::new(NfmBank(bank)));
                NfmStatus::NfmOk
            }
            Err(err) => {
                set_error(&err.to_string());
                status_of(&err)
            }
        }
    })
}

/// Wraps a tensor's rows as an ad-hoc bank (no provenance metadata). The
/// tensor is copied; the handle remains owned by the caller.
///
/// # Safety
/// `tensor` must be a live handle and `out` writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn nfm_bank_from_tensor(
    tensor: *const NfmTensor,
    out: *mut *mut NfmBank,
) -> NfmStatus {
    guarded(|| {
        out_arg!(out, "out");
        let tensor = handle_arg!(tensor, "tensor");
        if tensor.0.is_empty() {
            set_error("bank tensor has no rows");
            return NfmStatus::NfmInvalidArgument;
        }
        let rows = tensor.0.rows();
        let bank = MemoryBank {
            tensor: tensor.0.clone(),
            source_ids: (0..rows).map(|i| ("anonymous".to_string(), i)).collect(),
            coreset_ratio: 1.0,
            seed: 0,
        };
        *out = Box::into_raw(Box::new(NfmBank(bank)));
        NfmStatus::NfmOk
    })
}

/// Number of reference rows in the bank, or 0 for a null handle.
///
/// # Safety
/// `bank` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn nfm_bank_rows(bank: *const NfmBank) -> u64 {
    bank.as_ref().map_or(0, |b| b.0.tensor.rows() as u64)
}

/// Row width of the bank, or 0 for a null handle.
///
/// # Safety
/// `bank` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn nfm_bank_dim(bank: *const NfmBank) -> u64 {
    bank.as_ref().map_or(0, |b| b.0.tensor.dim() as u64)
}

/// Frees a bank handle. Null is a no-op.
///
/// # Safety
/// `bank` must be a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn nfm_bank_free(bank: *mut NfmBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Scores one sample (a tensor of feature rows) against the bank with
/// neighborhood size `b`. Higher scores mean more anomalous.
///
/// # Safety
/// `bank` and `sample` must be live handles and `out_score` writable.
#[no_mangle]
pub unsafe extern "C" fn nfm_memory_score(
    bank: *const NfmBank,
    sample: *const NfmTensor,
    b: u64,
    out_score: *mut f64,
) -> NfmStatus {
    guarded(|| {
        out_arg!(out_score, "out_score");
        let bank = handle_arg!(bank, "bank");
        let sample = handle_arg!(sample, "sample");
        match memory_score(&sample.0, &bank.0.tensor, b as usize) {
            Ok(score) => {
                *out_score = score;
                NfmStatus::NfmOk
            }
            Err(err) => {
                set_error(&err.to_string());
                NfmStatus::NfmInvalidArgument
            }
        }
    })
}

/// Area under the ROC curve for `len` samples; `labels[i]` nonzero marks an
/// abnormal sample. Requires at least one abnormal and one normal.
///
/// # Safety
/// `labels` and `scores` must each point to `len` readable elements, and
/// `out_auroc` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfm_auroc(
    labels: *const u8,
    scores: *const f64,
    len: u64,
    out_auroc: *mut f64,
) -> NfmStatus {
    guarded(|| {
        out_arg!(out_auroc, "out_auroc");
        out_arg!(labels, "labels");
        out_arg!(scores, "scores");
        let len = len as usize;
        let labels: Vec<bool> = std::slice::from_raw_parts(labels, len)
            .iter()
            .map(|&v| v != 0)
            .collect();
        let scores = std::slice::from_raw_parts(scores, len);
        match auroc(&labels, scores) {
            Ok(value) => {
                *out_auroc = value;
                NfmStatus::NfmOk
            }
            Err(err) => {
                set_error(&err.to_string());
                NfmStatus::NfmInvalidArgument
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;
    use std::ptr;

    fn c_path(path: &Path) -> CString {
        CString::new(path.to_str().unwrap()).unwrap()
    }

    #[test]
    fn tensor_roundtrip_through_abi() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("t.nfmb");
        let data: Vec<f32> = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        unsafe {
            let mut tensor: *mut NfmTensor = ptr::null_mut();
            assert_eq!(
                nfm_tensor_create(3, 2, data.as_ptr(), &mut tensor),
                NfmStatus::NfmOk
            );
            assert_eq!(nfm_tensor_rows(tensor), 3);
            assert_eq!(nfm_tensor_dim(tensor), 2);
            let path = c_path(&file);
            assert_eq!(nfm_tensor_write(tensor, path.as_ptr()), NfmStatus::NfmOk);
            nfm_tensor_free(tensor);

            let mut back: *mut NfmTensor = ptr::null_mut();
            assert_eq!(nfm_tensor_read(path.as_ptr(), &mut back), NfmStatus::NfmOk);
            assert_eq!(nfm_tensor_rows(back), 3);
            nfm_tensor_free(back);
        }
    }

    #[test]
    fn missing_file_reports_io_error_with_message() {
        unsafe {
            let mut tensor: *mut NfmTensor = ptr::null_mut();
            let path = CString::new("/nonexistent/nope.nfmb").unwrap();
            let status = nfm_tensor_read(path.as_ptr(), &mut tensor);
            assert_eq!(status, NfmStatus::NfmIoError);
            let message = CStr::from_ptr(nfm_last_error()).to_str().unwrap();
            assert!(message.contains("nope.nfmb"), "message: {message}");
        }
    }

    #[test]
    fn null_arguments_are_rejected() {
        unsafe {
            assert_eq!(
                nfm_tensor_read(ptr::null(), ptr::null_mut()),
                NfmStatus::NfmNullPointer
            );
            let mut out: *mut NfmTensor = ptr::null_mut();
            assert_eq!(
                nfm_tensor_read(ptr::null(), &mut out),
                NfmStatus::NfmNullPointer
            );
            assert_eq!(
                nfm_memory_score(ptr::null(), ptr::null(), 3, ptr::null_mut()),
                NfmStatus::NfmNullPointer
            );
        }
    }

    #[test]
    fn non_finite_create_is_invalid() {
        unsafe {
            let data = [1.0f32, f32::NAN];
            let mut tensor: *mut NfmTensor = ptr::null_mut();
            assert_eq!(
                nfm_tensor_create(1, 2, data.as_ptr(), &mut tensor),
                NfmStatus::NfmInvalidArgument
            );
            let message = CStr::from_ptr(nfm_last_error()).to_str().unwrap();
            assert!(message.contains("row 0"), "message: {message}");
        }
    }

    #[test]
    fn scoring_matches_library_path() {
        let bank_data: Vec<f32> = vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 4.0, 4.0];
        let sample_data: Vec<f32> = vec![2.0, 2.0];
        unsafe {
            let mut bank_tensor: *mut NfmTensor = ptr::null_mut();
            assert_eq!(
                nfm_tensor_create(4, 2, bank_data.as_ptr(), &mut bank_tensor),
                NfmStatus::NfmOk
            );
            let mut bank: *mut NfmBank = ptr::null_mut();
            assert_eq!(nfm_bank_from_tensor(bank_tensor, &mut bank), NfmStatus::NfmOk);
            assert_eq!(nfm_bank_rows(bank), 4);

            let mut sample: *mut NfmTensor = ptr::null_mut();
            assert_eq!(
                nfm_tensor_create(1, 2, sample_data.as_ptr(), &mut sample),
                NfmStatus::NfmOk
            );
            let mut score = f64::NAN;
            assert_eq!(nfm_memory_score(bank, sample, 3, &mut score), NfmStatus::NfmOk);

            let bank_rust = Tensor::new(4, 2, bank_data.clone()).unwrap();
            let sample_rust = Tensor::new(1, 2, sample_data.clone()).unwrap();
            let expected = memory_score(&sample_rust, &bank_rust, 3).unwrap();
            assert_eq!(score.to_bits(), expected.to_bits());

            // b = 0 is invalid and must not clobber the score.
            assert_eq!(
                nfm_memory_score(bank, sample, 0, &mut score),
                NfmStatus::NfmInvalidArgument
            );

            nfm_tensor_free(sample);
            nfm_bank_free(bank);
            nfm_tensor_free(bank_tensor);
        }
    }

    #[test]
    fn bank_roundtrip_through_files() {
        use nfm_core::manifest::LoadedSample;
        let dir = tempfile::tempdir().unwrap();
        let bank_path = dir.path().join("bank.nfmb");
        let samples = vec![LoadedSample {
            id: "n1".into(),
            rows: Tensor::new(3, 2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0]).unwrap(),
        }];
        MemoryBank::build(&samples, 1.0, 9).unwrap().save(&bank_path).unwrap();
        unsafe {
            let path = c_path(&bank_path);
            let mut bank: *mut NfmBank = ptr::null_mut();
            assert_eq!(nfm_bank_load(path.as_ptr(), &mut bank), NfmStatus::NfmOk);
            assert_eq!(nfm_bank_rows(bank), 3);
            assert_eq!(nfm_bank_dim(bank), 2);
            nfm_bank_free(bank);
        }
    }

    #[test]
    fn auroc_through_abi() {
        let labels = [0u8, 0, 1, 1];
        let scores = [0.1f64, 0.4, 0.35, 0.8];
        unsafe {
            let mut value = f64::NAN;
            assert_eq!(
                nfm_auroc(labels.as_ptr(), scores.as_ptr(), 4, &mut value),
                NfmStatus::NfmOk
            );
            assert_eq!(value, 0.75);

            // Single-class input is invalid.
            let ones = [1u8, 1];
            assert_eq!(
                nfm_auroc(ones.as_ptr(), scores.as_ptr(), 2, &mut value),
                NfmStatus::NfmInvalidArgument
            );
        }
    }
}
