//! C ABI for the kfs feature-selection library.
//!
//! Conventions:
//!
//! * Opaque handles: callers hold pointers, never struct layouts.
//! * Every fallible function returns an `int32_t` status; `KFS_OK` is 0.
//! * Results come back through out-parameters.
//! * `kfs_last_error()` returns a thread-local message for the most
//!   recent failure on the calling thread.
//! * Handles are freed with the matching `*_free` function, exactly once.
//!
//! ```c
//! KfsDataset *data = NULL;
//! if (kfs_dataset_new(x, n, p, y, &data) != KFS_OK) {
//!     fprintf(stderr, "%s\n", kfs_last_error());
//!     return 1;
//! }
//! KfsSelection *sel = NULL;
//! int32_t rc = kfs_select(data, 1, scales, weights, 1, 0.1, 0.05, 1.0,
//!                         0.0, 300, 1e-6, 1e-8, 1.0, 42, &sel);
//! ```

use kfs::kernels::KernelSpec;
use kfs::krr::Dataset;
use kfs::optimize::{Beta, SelectionConfig, SelectionResult, Stepsize};
use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Success.
pub const KFS_OK: i32 = 0;
/// A required pointer argument was null.
pub const KFS_NULL_POINTER: i32 = -1;
/// Inputs failed validation (dimensions, ranges, non-finite values).
pub const KFS_INVALID_ARGUMENT: i32 = -2;
/// The numeric solve failed (factorization or descent backoff).
pub const KFS_SOLVER_FAILURE: i32 = -3;
/// An internal panic was caught at the boundary.
pub const KFS_PANIC: i32 = -4;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let cleaned: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(cleaned).unwrap_or_default();
    });
}

fn record(err: &kfs::KfsError) -> i32 {
    set_error(&err.to_string());
    if err.is_solver() {
        KFS_SOLVER_FAILURE
    } else {
        KFS_INVALID_ARGUMENT
    }
}

/// Dataset handle: design matrix plus centered response.
pub struct KfsDataset {
    inner: Dataset,
}

/// Selection handle: final weights, support and iteration history.
pub struct KfsSelection {
    inner: SelectionResult,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kfs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent error on this thread. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kfs_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Builds a dataset from a row-major n x p design and n responses.
/// The response is centered internally.
///
/// # Safety
/// `x` must point to n*p readable doubles, `y` to n readable doubles,
/// and `out` must be a valid location for the handle.
#[no_mangle]
pub unsafe extern "C" fn kfs_dataset_new(
    x: *const f64,
    n: usize,
    p: usize,
    y: *const f64,
    out: *mut *mut KfsDataset,
) -> i32 {
    if x.is_null() || y.is_null() || out.is_null() {
        set_error("null pointer passed to kfs_dataset_new");
        return KFS_NULL_POINTER;
    }
    let result = catch_unwind(AssertUnwindSafe(|| {
        let xs = std::slice::from_raw_parts(x, n.saturating_mul(p)).to_vec();
        let ys = std::slice::from_raw_parts(y, n).to_vec();
        Dataset::new(xs, n, p, ys)
    }));
    match result {
        Ok(Ok(inner)) => {
            *out = Box::into_raw(Box::new(KfsDataset { inner }));
            KFS_OK
        }
        Ok(Err(err)) => record(&err),
        Err(_) => {
            set_error("panic in kfs_dataset_new");
            KFS_PANIC
        }
    }
}

/// Frees a dataset handle. Null is ignored.
///
/// # Safety
/// `ds` must be a handle from `kfs_dataset_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kfs_dataset_free(ds: *mut KfsDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of observations in a dataset.
///
/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn kfs_dataset_n(ds: *const KfsDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    (*ds).inner.n()
}

/// Number of features in a dataset.
///
/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn kfs_dataset_p(ds: *const KfsDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    (*ds).inner.p()
}

#[allow(clippy::too_many_arguments)]
unsafe fn run_selection(
    ds: *const KfsDataset,
    q: u32,
    atom_scales: *const f64,
    atom_weights: *const f64,
    n_atoms: usize,
    lambda: f64,
    gamma: f64,
    m: f64,
    stepsize: f64,
    max_iters: usize,
    tol: f64,
    support_eps: f64,
    tau: f64,
    seed: u64,
    hierarchical: bool,
    out: *mut *mut KfsSelection,
) -> i32 {
    if ds.is_null() || atom_scales.is_null() || atom_weights.is_null() || out.is_null() {
        set_error("null pointer passed to selection");
        return KFS_NULL_POINTER;
    }
    let result = catch_unwind(AssertUnwindSafe(|| -> kfs::Result<SelectionResult> {
        let scales = std::slice::from_raw_parts(atom_scales, n_atoms);
        let weights = std::slice::from_raw_parts(atom_weights, n_atoms);
        let atoms: Vec<(f64, f64)> = scales
            .iter()
            .copied()
            .zip(weights.iter().copied())
            .collect();
        let spec = KernelSpec::new(q as u8, atoms)?;
        let config = SelectionConfig {
            lambda,
            gamma,
            m,
            stepsize: if stepsize > 0.0 {
                Stepsize::Fixed(stepsize)
            } else {
                Stepsize::Auto
            },
            max_iters,
            tol,
            support_eps,
            tau,
            seed,
        };
        let data = &(*ds).inner;
        if hierarchical {
            kfs::hier_select(&spec, data, &config)
        } else {
            let beta0 = Beta::zeros(data.p(), config.m)?;
            kfs::pgd_select(&spec, data, &config, &beta0)
        }
    }));
    match result {
        Ok(Ok(inner)) => {
            *out = Box::into_raw(Box::new(KfsSelection { inner }));
            KFS_OK
        }
        Ok(Err(err)) => record(&err),
        Err(_) => {
            set_error("panic in selection");
            KFS_PANIC
        }
    }
}

/// Projected-gradient feature selection from the origin.
///
/// The kernel is a mixture of `n_atoms` exponentials with the given
/// scales and weights over the q-weighted distance (q is 1 or 2).
/// `stepsize <= 0` requests the automatic stepsize.
///
/// # Safety
/// Pointer arguments must be valid for the documented lengths; `out`
/// receives a handle to free with `kfs_selection_free`.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn kfs_select(
    ds: *const KfsDataset,
    q: u32,
    atom_scales: *const f64,
    atom_weights: *const f64,
    n_atoms: usize,
    lambda: f64,
    gamma: f64,
    m: f64,
    stepsize: f64,
    max_iters: usize,
    tol: f64,
    support_eps: f64,
    tau: f64,
    seed: u64,
    out: *mut *mut KfsSelection,
) -> i32 {
    run_selection(
        ds,
        q,
        atom_scales,
        atom_weights,
        n_atoms,
        lambda,
        gamma,
        m,
        stepsize,
        max_iters,
        tol,
        support_eps,
        tau,
        seed,
        false,
        out,
    )
}

/// Multi-round selection that pins discovered features at tau between
/// rounds. Same contract as `kfs_select`.
///
/// # Safety
/// As for `kfs_select`.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn kfs_hier_select(
    ds: *const KfsDataset,
    q: u32,
    atom_scales: *const f64,
    atom_weights: *const f64,
    n_atoms: usize,
    lambda: f64,
    gamma: f64,
    m: f64,
    stepsize: f64,
    max_iters: usize,
    tol: f64,
    support_eps: f64,
    tau: f64,
    seed: u64,
    out: *mut *mut KfsSelection,
) -> i32 {
    run_selection(
        ds,
        q,
        atom_scales,
        atom_weights,
        n_atoms,
        lambda,
        gamma,
        m,
        stepsize,
        max_iters,
        tol,
        support_eps,
        tau,
        seed,
        true,
        out,
    )
}

/// Number of feature weights in a selection result.
///
/// # Safety
/// `sel` must be a live selection handle.
#[no_mangle]
pub unsafe extern "C" fn kfs_selection_dim(sel: *const KfsSelection) -> usize {
    if sel.is_null() {
        return 0;
    }
    (*sel).inner.beta_final.len()
}

/// Copies the final weight vector into `out` (length `len` == dim).
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn kfs_selection_beta(
    sel: *const KfsSelection,
    out: *mut f64,
    len: usize,
) -> i32 {
    if sel.is_null() || out.is_null() {
        set_error("null pointer passed to kfs_selection_beta");
        return KFS_NULL_POINTER;
    }
    let values = (*sel).inner.beta_final.values();
    if len != values.len() {
        set_error("kfs_selection_beta: buffer length does not match dimension");
        return KFS_INVALID_ARGUMENT;
    }
    std::ptr::copy_nonoverlapping(values.as_ptr(), out, len);
    KFS_OK
}

/// Number of selected features.
///
/// # Safety
/// `sel` must be a live selection handle.
#[no_mangle]
pub unsafe extern "C" fn kfs_selection_support_len(sel: *const KfsSelection) -> usize {
    if sel.is_null() {
        return 0;
    }
    (*sel).inner.support.len()
}

/// Copies the selected feature indices (0-based) into `out`.
///
/// # Safety
/// `out` must point to `len` writable uint64 slots, `len` == support length.
#[no_mangle]
pub unsafe extern "C" fn kfs_selection_support(
    sel: *const KfsSelection,
    out: *mut u64,
    len: usize,
) -> i32 {
    if sel.is_null() || out.is_null() {
        set_error("null pointer passed to kfs_selection_support");
        return KFS_NULL_POINTER;
    }
    let support = &(*sel).inner.support;
    if len != support.len() {
        set_error("kfs_selection_support: buffer length does not match support size");
        return KFS_INVALID_ARGUMENT;
    }
    for (slot, &idx) in (0..len).zip(support.iter()) {
        *out.add(slot) = idx as u64;
    }
    KFS_OK
}

/// Length of the objective history (initial value plus accepted steps).
///
/// # Safety
/// `sel` must be a live selection handle.
#[no_mangle]
pub unsafe extern "C" fn kfs_selection_history_len(sel: *const KfsSelection) -> usize {
    if sel.is_null() {
        return 0;
    }
    (*sel).inner.objective_history.len()
}

/// Copies the penalized objective history into `out`.
///
/// # Safety
/// `out` must point to `len` writable doubles, `len` == history length.
#[no_mangle]
pub unsafe extern "C" fn kfs_selection_history(
    sel: *const KfsSelection,
    out: *mut f64,
    len: usize,
) -> i32 {
    if sel.is_null() || out.is_null() {
        set_error("null pointer passed to kfs_selection_history");
        return KFS_NULL_POINTER;
    }
    let history = &(*sel).inner.objective_history;
    if len != history.len() {
        set_error("kfs_selection_history: buffer length does not match history size");
        return KFS_INVALID_ARGUMENT;
    }
    std::ptr::copy_nonoverlapping(history.as_ptr(), out, len);
    KFS_OK
}

/// Frees a selection handle. Null is ignored.
///
/// # Safety
/// `sel` must be a handle from a selection call not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kfs_selection_free(sel: *mut KfsSelection) {
    if !sel.is_null() {
        drop(Box::from_raw(sel));
    }
}
