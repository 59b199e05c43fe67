//! C ABI over `vitalclust`.
//!
//! Every fallible call returns a [`VcStatus`]; on failure the message is
//! kept per thread and read with [`vc_last_error`]. Models are opaque
//! handles released with [`vc_model_free`]. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::sync::OnceLock;

use ndarray::ArrayView2;
use vitalclust::cluster::{self, assign_frozen, AssignInput, ClusterModel, ClusterParams, Label, ZnormGrids};
use vitalclust::features::{assemble_matrix, extract_patient, FeatureCatalog, FeatureMatrix};
use vitalclust::model::{Cohort, PatientSeries, VitalChannel};
use vitalclust::{prognosis, validity, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Dimension = 5,
    Undefined = 6,
    Panic = 7,
}

impl From<&Error> for VcStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => VcStatus::Io,
            Error::Csv { .. } | Error::Header { .. } | Error::MalformedRows { .. } | Error::Json(_) | Error::Config(_) => {
                VcStatus::Parse
            }
            Error::Dimension(_) | Error::FeatureMismatch(_) | Error::ClusterCountMismatch(..) => VcStatus::Dimension,
            Error::UndefinedIndex(_) | Error::CoincidentCentroids { .. } => VcStatus::Undefined,
            _ => VcStatus::InvalidArgument,
        }
    }
}

/// A fitted model loaded from JSON.
pub struct VcModel {
    model: ClusterModel,
    algorithm: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(VcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(VcStatus::from(&e), e.to_string())
    }
}

type FfiResult = Result<(), Fail>;

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult) -> VcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VcStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            VcStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(VcStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(VcStatus::InvalidArgument, msg.into())
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn write<T>(p: *mut T, v: T, what: &str) -> FfiResult {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(v);
    Ok(())
}

fn rows(data: &[f64], n: usize, d: usize) -> Result<ArrayView2<'_, f64>, Fail> {
    ArrayView2::from_shape((n, d), data).map_err(|e| Fail(VcStatus::Dimension, e.to_string()))
}

fn grid_cells(n: usize, hours: usize) -> Result<usize, Fail> {
    n.checked_mul(hours)
        .and_then(|v| v.checked_mul(VitalChannel::COUNT))
        .ok_or_else(|| invalid("grid size overflows"))
}

fn cohort_of(grids: &[f64], n: usize, hours: usize) -> Result<Cohort, Fail> {
    let width = VitalChannel::COUNT * hours;
    let series = (0..n)
        .map(|i| PatientSeries::from_flat(format!("row{i:09}"), hours, grids[i * width..(i + 1) * width].to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Cohort::new(series, Vec::new()))
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn vc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn vc_version() -> *const c_char {
    static V: OnceLock<CString> = OnceLock::new();
    V.get_or_init(|| CString::new(env!("CARGO_PKG_VERSION")).unwrap()).as_ptr()
}

/// Number of features in the extraction catalog.
#[no_mangle]
pub extern "C" fn vc_feature_count() -> usize {
    FeatureCatalog::default().len()
}

fn feature_names() -> &'static [CString] {
    static NAMES: OnceLock<Vec<CString>> = OnceLock::new();
    NAMES.get_or_init(|| {
        FeatureCatalog::default()
            .names()
            .into_iter()
            .map(|n| CString::new(n).unwrap())
            .collect()
    })
}

/// Name of catalog feature `i`, or null when out of range. Static storage.
#[no_mangle]
pub extern "C" fn vc_feature_name(i: usize) -> *const c_char {
    feature_names().get(i).map_or(ptr::null(), |c| c.as_ptr())
}

/// Extracts the catalog features of one patient. `grid` is channel-major
/// (temperature, heart rate, mean BP, respiratory rate, SpO2), `hours`
/// values each; `out` holds `vc_feature_count()` values.
///
/// # Safety
/// `grid` must point to `5 * hours` doubles and `out` to `out_len`.
#[no_mangle]
pub unsafe extern "C" fn vc_extract_features(grid: *const f64, hours: usize, out: *mut f64, out_len: usize) -> VcStatus {
    guard(|| {
        let g = input(grid, grid_cells(1, hours)?, "grid")?;
        let series = PatientSeries::from_flat("row", hours, g.to_vec())?;
        let row = extract_patient(&series);
        if out_len != row.len() {
            return Err(Fail(
                VcStatus::Dimension,
                format!("out_len {out_len}, expected {}", row.len()),
            ));
        }
        output(out, out_len, "out")?.copy_from_slice(&row);
        Ok(())
    })
}

/// Shape-based distance of two series and the best shift.
///
/// # Safety
/// `x` and `y` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vc_sbd(x: *const f64, y: *const f64, len: usize, distance: *mut f64, shift: *mut i64) -> VcStatus {
    guard(|| {
        let (d, w) = cluster::sbd(input(x, len, "x")?, input(y, len, "y")?)?;
        write(distance, d, "distance")?;
        write(shift, w, "shift")
    })
}

/// Calinski-Harabasz index of an `n × d` row-major matrix; labels below 0
/// are noise and left out.
///
/// # Safety
/// `data` must point to `n * d` doubles and `labels` to `n` values.
#[no_mangle]
pub unsafe extern "C" fn vc_chi(data: *const f64, n: usize, d: usize, labels: *const i64, out: *mut f64) -> VcStatus {
    guard(|| {
        let cells = n.checked_mul(d).ok_or_else(|| invalid("n * d overflows"))?;
        let x = rows(input(data, cells, "data")?, n, d)?;
        write(out, validity::chi(x, input(labels, n, "labels")?)?, "out")
    })
}

/// Davies-Bouldin index; same layout as [`vc_chi`].
///
/// # Safety
/// `data` must point to `n * d` doubles and `labels` to `n` values.
#[no_mangle]
pub unsafe extern "C" fn vc_dbi(data: *const f64, n: usize, d: usize, labels: *const i64, out: *mut f64) -> VcStatus {
    guard(|| {
        let cells = n.checked_mul(d).ok_or_else(|| invalid("n * d overflows"))?;
        let x = rows(input(data, cells, "data")?, n, d)?;
        write(out, validity::dbi(x, input(labels, n, "labels")?)?, "out")
    })
}

/// Adjusted Rand index of two labelings of `n` points.
///
/// # Safety
/// `a` and `b` must point to `n` values.
#[no_mangle]
pub unsafe extern "C" fn vc_ari(a: *const i64, b: *const i64, n: usize, out: *mut f64) -> VcStatus {
    guard(|| write(out, validity::ari(input(a, n, "a")?, input(b, n, "b")?)?, "out"))
}

/// Death rate of `flags` (0 or 1) and its bootstrap standard error over
/// `b` resamples.
///
/// # Safety
/// `flags` must point to `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn vc_mortality_bootstrap(
    flags: *const u8,
    n: usize,
    b: usize,
    seed: u64,
    mean: *mut f64,
    se: *mut f64,
) -> VcStatus {
    guard(|| {
        let f = input(flags, n, "flags")?;
        if let Some(v) = f.iter().find(|&&v| v > 1) {
            return Err(invalid(format!("flag value {v} is not 0 or 1")));
        }
        let bools: Vec<bool> = f.iter().map(|&v| v == 1).collect();
        let est = prognosis::mortality_bootstrap(&bools, b, seed)?;
        write(mean, est.mean, "mean")?;
        write(se, est.se, "se")
    })
}

/// k-means on an `n × d` row-major matrix with the library defaults
/// (k-means++ seeding, 10 restarts). Rows are treated as given; no
/// normalization is applied.
///
/// # Safety
/// `data` must point to `n * d` doubles and `labels` to `n` values.
#[no_mangle]
pub unsafe extern "C" fn vc_kmeans_fit(
    data: *const f64,
    n: usize,
    d: usize,
    k: usize,
    seed: u64,
    labels: *mut i64,
    inertia: *mut f64,
) -> VcStatus {
    guard(|| {
        let cells = n.checked_mul(d).ok_or_else(|| invalid("n * d overflows"))?;
        let x = rows(input(data, cells, "data")?, n, d)?;
        let ids: Vec<String> = (0..n).map(|i| format!("row{i:09}")).collect();
        let names = (0..d).map(|j| format!("x{j}")).collect();
        let m = FeatureMatrix::new(ids.clone(), names, x.to_owned())?;
        let model = cluster::kmeans_fit(&m, &ClusterParams::new(cluster::Algorithm::KMeans, k, seed))?;
        let out = output(labels, n, "labels")?;
        out.copy_from_slice(&model.labels_for(&ids)?);
        write(inertia, model.objective, "inertia")
    })
}

/// Loads a model written by `vitalclust run` or `sweep`.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_model_load(path: *const c_char, out: *mut *mut VcModel) -> VcStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let model = ClusterModel::load(path)?;
        let algorithm = CString::new(model.algorithm().name()).unwrap();
        let handle = Box::into_raw(Box::new(VcModel { model, algorithm }));
        if let Err(e) = write(out, handle, "out") {
            drop(Box::from_raw(handle));
            return Err(e);
        }
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`vc_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vc_model_free(model: *mut VcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of clusters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_model_k(model: *const VcModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.n_clusters)
}

/// Number of selected features, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_model_n_features(model: *const VcModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.selected_features.len())
}

/// Algorithm name, owned by the handle; null for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_model_algorithm(model: *const VcModel) -> *const c_char {
    model.as_ref().map_or(ptr::null(), |m| m.algorithm.as_ptr())
}

/// Assigns `n` new patients to the model's clusters without refitting.
/// `grids` holds `n` channel-major grids of `5 * hours` raw values. Noise
/// is reported as -1.
///
/// # Safety
/// `grids` must point to `n * 5 * hours` doubles and `labels` to `n` values.
#[no_mangle]
pub unsafe extern "C" fn vc_model_assign(
    model: *const VcModel,
    grids: *const f64,
    n: usize,
    hours: usize,
    labels: *mut i64,
) -> VcStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        let cells = input(grids, grid_cells(n, hours)?, "grids")?;
        let out = output(labels, n, "labels")?;
        if n == 0 {
            return Ok(());
        }
        let cohort = cohort_of(cells, n, hours)?;
        let assigned: Vec<Label> = if m.algorithm().uses_grids() {
            assign_frozen(m, AssignInput::Grids(&ZnormGrids::from_cohort(&cohort)?))?
        } else {
            let raw = assemble_matrix(&cohort, &FeatureCatalog::default())?;
            assign_frozen(m, AssignInput::Features(&m.transform(&raw)?))?
        };
        out.copy_from_slice(&assigned);
        Ok(())
    })
}
