//! C ABI over the index, descriptor, model and Shapley entry points.
//!
//! Every function returns an [`SdforgeStatus`]. On failure a message is
//! kept per thread and can be copied out with [`sdforge_last_error`].
//! Handles are opaque; each `*_free` accepts null.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use sdforge::descriptors::{compute_descriptors, lipinski_check, AtomicWeights, TpsaContributionTable};
use sdforge::explain::{shapley_exact, ShapConfig};
use sdforge::index::{build_index, read_index_file, write_index_file, OffsetIndex};
use sdforge::models::{read_model_file, FittedModel, Regressor};
use sdforge::sdf::parse_molfile;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdforgeStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    NotFound = 5,
    Model = 6,
    Explain = 7,
    BadDimensions = 8,
    Panic = 9,
}

/// Opaque byte-offset index.
pub struct SdforgeIndex(OffsetIndex);

/// Opaque fitted model.
pub struct SdforgeModel(FittedModel);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SdforgeLocation {
    pub file_id: u32,
    pub offset: u64,
    pub length: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SdforgeDescriptors {
    pub molwt: f64,
    pub tpsa: f64,
    pub num_h_donors: u32,
    pub num_h_acceptors: u32,
    pub num_rotatable_bonds: u32,
    pub num_aromatic_rings: u32,
    pub fraction_csp3: f64,
    pub heavy_atom_count: u32,
    /// Rule of five with the logP supplied by the caller.
    pub lipinski_compliant: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(SdforgeStatus, String);

fn fail<E: std::fmt::Display>(status: SdforgeStatus) -> impl FnOnce(E) -> Failure {
    move |e| Failure(status, e.to_string())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> SdforgeStatus {
    let result = catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        Err(Failure(SdforgeStatus::Panic, msg))
    });
    match result {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            SdforgeStatus::Ok
        }
        Err(Failure(status, msg)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = msg);
            status
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(SdforgeStatus::NullArgument, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` is null or a NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p).to_str().map_err(|_| Failure(SdforgeStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `capacity`. Returns the full message length without the NUL.
///
/// # Safety
/// `buffer` is null or valid for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn sdforge_last_error(buffer: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buffer.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buffer.cast::<u8>(), n);
            *buffer.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds an index over `n_paths` SDF files keyed by `key_tag`.
///
/// # Safety
/// `paths` holds `n_paths` NUL-terminated strings; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sdforge_index_build(
    paths: *const *const c_char,
    n_paths: usize,
    key_tag: *const c_char,
    workers: usize,
    out: *mut *mut SdforgeIndex,
) -> SdforgeStatus {
    guard(|| {
        non_null(paths, "paths")?;
        non_null(out, "out")?;
        let tag = text(key_tag, "key_tag")?;
        let files = slice::from_raw_parts(paths, n_paths)
            .iter()
            .map(|p| text(*p, "path").map(PathBuf::from))
            .collect::<Result<Vec<_>, _>>()?;
        let (index, _) = build_index(&files, tag, workers).map_err(fail(SdforgeStatus::Io))?;
        *out = Box::into_raw(Box::new(SdforgeIndex(index)));
        Ok(())
    })
}

/// # Safety
/// `path` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sdforge_index_load(path: *const c_char, out: *mut *mut SdforgeIndex) -> SdforgeStatus {
    guard(|| {
        non_null(out, "out")?;
        let index = read_index_file(text(path, "path")?.as_ref()).map_err(fail(SdforgeStatus::Parse))?;
        *out = Box::into_raw(Box::new(SdforgeIndex(index)));
        Ok(())
    })
}

/// # Safety
/// `index` comes from this library; `path` is NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sdforge_index_save(index: *const SdforgeIndex, path: *const c_char) -> SdforgeStatus {
    guard(|| {
        non_null(index, "index")?;
        write_index_file(&(*index).0, text(path, "path")?.as_ref()).map_err(fail(SdforgeStatus::Io))
    })
}

/// Number of entries; 0 for a null handle.
///
/// # Safety
/// `index` is null or comes from this library.
#[no_mangle]
pub unsafe extern "C" fn sdforge_index_len(index: *const SdforgeIndex) -> usize {
    index.as_ref().map_or(0, |i| i.0.len())
}

/// Writes the location of `identifier`, or returns `NotFound`.
///
/// # Safety
/// `index` comes from this library; `identifier` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sdforge_index_lookup(
    index: *const SdforgeIndex,
    identifier: *const c_char,
    out: *mut SdforgeLocation,
) -> SdforgeStatus {
    guard(|| {
        non_null(index, "index")?;
        non_null(out, "out")?;
        let id = text(identifier, "identifier")?;
        let loc = (*index).0.get(id).ok_or_else(|| Failure(SdforgeStatus::NotFound, format!("{id} not indexed")))?;
        *out = SdforgeLocation { file_id: loc.file_id, offset: loc.offset, length: loc.length };
        Ok(())
    })
}

/// Copies the path of `file_id` like [`sdforge_last_error`]; returns the full
/// length, or 0 for an unknown id.
///
/// # Safety
/// `index` comes from this library; `buffer` is null or valid for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn sdforge_index_file_path(
    index: *const SdforgeIndex,
    file_id: u32,
    buffer: *mut c_char,
    capacity: usize,
) -> usize {
    let Some(path) = index.as_ref().and_then(|i| i.0.path(file_id)) else {
        return 0;
    };
    let s = path.to_string_lossy();
    if !buffer.is_null() && capacity > 0 {
        let n = s.len().min(capacity - 1);
        ptr::copy_nonoverlapping(s.as_ptr(), buffer.cast::<u8>(), n);
        *buffer.add(n) = 0;
    }
    s.len()
}

/// # Safety
/// `index` is null or comes from this library and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sdforge_index_free(index: *mut SdforgeIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Descriptors of one V2000 molfile (`len` bytes, no NUL needed) with the
/// built-in weights and TPSA table.
///
/// # Safety
/// `molfile` is valid for `len` bytes; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sdforge_descriptors(
    molfile: *const u8,
    len: usize,
    logp: f64,
    out: *mut SdforgeDescriptors,
) -> SdforgeStatus {
    guard(|| {
        non_null(molfile, "molfile")?;
        non_null(out, "out")?;
        let graph = parse_molfile(slice::from_raw_parts(molfile, len)).map_err(fail(SdforgeStatus::Parse))?;
        let (d, _) = compute_descriptors(&graph, &AtomicWeights::default(), &TpsaContributionTable::builtin());
        *out = SdforgeDescriptors {
            molwt: d.molwt,
            tpsa: d.tpsa,
            num_h_donors: d.num_h_donors,
            num_h_acceptors: d.num_h_acceptors,
            num_rotatable_bonds: d.num_rotatable_bonds,
            num_aromatic_rings: d.num_aromatic_rings,
            fraction_csp3: d.fraction_csp3,
            heavy_atom_count: d.heavy_atom_count,
            lipinski_compliant: lipinski_check(d.molwt, logp, d.num_h_donors as f64, d.num_h_acceptors as f64)
                .compliant,
        };
        Ok(())
    })
}

/// # Safety
/// `path` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sdforge_model_load(path: *const c_char, out: *mut *mut SdforgeModel) -> SdforgeStatus {
    guard(|| {
        non_null(out, "out")?;
        let model = read_model_file(text(path, "path")?.as_ref()).map_err(fail(SdforgeStatus::Model))?;
        *out = Box::into_raw(Box::new(SdforgeModel(model)));
        Ok(())
    })
}

/// Feature count the model expects; 0 for a null handle.
///
/// # Safety
/// `model` is null or comes from this library.
#[no_mangle]
pub unsafe extern "C" fn sdforge_model_n_features(model: *const SdforgeModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.n_features())
}

/// Predicts `n_rows` rows of a row-major `n_rows × n_features` matrix.
///
/// # Safety
/// `model` comes from this library; `x` holds `n_rows·n_features` values;
/// `out` holds `n_rows`.
#[no_mangle]
pub unsafe extern "C" fn sdforge_model_predict(
    model: *const SdforgeModel,
    x: *const f64,
    n_rows: usize,
    n_features: usize,
    out: *mut f64,
) -> SdforgeStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(x, "x")?;
        non_null(out, "out")?;
        let m = &(*model).0;
        check_width(m, n_features)?;
        let x = slice::from_raw_parts(x, n_rows * n_features);
        let out = slice::from_raw_parts_mut(out, n_rows);
        for (row, o) in x.chunks_exact(n_features.max(1)).zip(out.iter_mut()) {
            *o = m.predict_row(row);
        }
        Ok(())
    })
}

fn check_width(m: &FittedModel, n_features: usize) -> Result<(), Failure> {
    if n_features != m.n_features() {
        return Err(Failure(
            SdforgeStatus::BadDimensions,
            format!("model takes {} features, got {n_features}", m.n_features()),
        ));
    }
    Ok(())
}

/// Exact Shapley values of one row against a row-major background.
/// Writes `n_features` values to `phi` and the background mean prediction
/// to `base_value`.
///
/// # Safety
/// `model` comes from this library; `background` holds
/// `n_background·n_features` values; `row` and `phi` hold `n_features`;
/// `base_value` is writable.
#[no_mangle]
pub unsafe extern "C" fn sdforge_shapley(
    model: *const SdforgeModel,
    background: *const f64,
    n_background: usize,
    row: *const f64,
    n_features: usize,
    phi: *mut f64,
    base_value: *mut f64,
) -> SdforgeStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(background, "background")?;
        non_null(row, "row")?;
        non_null(phi, "phi")?;
        non_null(base_value, "base_value")?;
        let m = &(*model).0;
        check_width(m, n_features)?;
        let bg: Vec<Vec<f64>> =
            slice::from_raw_parts(background, n_background * n_features).chunks_exact(n_features.max(1)).map(<[f64]>::to_vec).collect();
        let names = m.feature_names().to_vec();
        let config = ShapConfig::new(&names, names.clone(), bg).map_err(fail(SdforgeStatus::Explain))?;
        let e = shapley_exact(m, slice::from_raw_parts(row, n_features), &config).map_err(fail(SdforgeStatus::Explain))?;
        slice::from_raw_parts_mut(phi, n_features).copy_from_slice(&e.phi);
        *base_value = e.base_value;
        Ok(())
    })
}

/// # Safety
/// `model` is null or comes from this library and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sdforge_model_free(model: *mut SdforgeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
