//! C ABI over overlap-rd. Objects are opaque handles created by `rd_*`
//! constructors and released with the matching `*_free`. Every fallible
//! call returns an [`RdStatus`]; the message of the last failure on the
//! calling thread is available from [`rd_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use overlap_rd::checker::{certify, StructureReport};
use overlap_rd::cli::mass_witness;
use overlap_rd::config::{builtin_document, parse_config, ConfigDocument, EnergySettings, ThetaSetting};
use overlap_rd::energy::{gronwall_envelope, multinomial_energy};
use overlap_rd::model::BuiltinParams;
use overlap_rd::solver::{DiagnosticsPlan, Simulator, SolverConfig, Trajectory};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Model = 4,
    Solver = 5,
    Checker = 6,
    Energy = 7,
    OutOfRange = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// A parsed model together with its run and checker settings.
pub struct RdModel {
    doc: ConfigDocument,
}

pub struct RdTrajectory {
    traj: Trajectory,
}

pub struct RdReport {
    report: StructureReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("nul bytes removed"));
}

fn fail(status: RdStatus, message: impl Into<String>) -> RdStatus {
    set_error(message);
    status
}

fn guard(f: impl FnOnce() -> RdStatus) -> RdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(RdStatus::Panic, "internal panic"),
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, RdStatus> {
    if s.is_null() {
        return Err(fail(RdStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(RdStatus::InvalidUtf8, "string is not valid UTF-8"))
}

fn boxed<T>(value: T, out: *mut *mut T) -> RdStatus {
    unsafe { *out = Box::into_raw(Box::new(value)) };
    RdStatus::Ok
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

/// Message of the last failed call on this thread ("" if none). The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses config text (the `overlap-rd` file format).
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rd_model_from_config(text: *const c_char, out: *mut *mut RdModel) -> RdStatus {
    guard(|| {
        if out.is_null() {
            return fail(RdStatus::NullPointer, "null output pointer");
        }
        let text = match read_str(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_config(text) {
            Ok(doc) => boxed(RdModel { doc }, out),
            Err(e) => fail(RdStatus::Parse, e.to_string()),
        }
    })
}

/// Built-in example `ex1`, `ex2` or `ex3` with default parameters.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rd_model_from_builtin(name: *const c_char, out: *mut *mut RdModel) -> RdStatus {
    guard(|| {
        if out.is_null() {
            return fail(RdStatus::NullPointer, "null output pointer");
        }
        let name = match read_str(name) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match builtin_document(name, &BuiltinParams::new()) {
            Ok(doc) => boxed(RdModel { doc }, out),
            Err(e) => fail(RdStatus::Model, e.to_string()),
        }
    })
}

/// # Safety
/// `model` must come from an `rd_model_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn rd_model_free(model: *mut RdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of species, 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rd_model_species(model: *const RdModel) -> usize {
    model.as_ref().map_or(0, |m| m.doc.model.m())
}

/// Spatial dimension, 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rd_model_dimension(model: *const RdModel) -> usize {
    model.as_ref().map_or(0, |m| m.doc.model.dim())
}

fn run_document(doc: &ConfigDocument, solver: &SolverConfig, out: *mut *mut RdTrajectory) -> RdStatus {
    let sim = match Simulator::new(&doc.model, solver) {
        Ok(s) => s,
        Err(e) => return fail(RdStatus::Solver, e.to_string()),
    };
    let (witness, _, _) = mass_witness(doc);
    let settings = doc.energy.clone().unwrap_or(EnergySettings { orders: vec![2, 4], theta: ThetaSetting::Auto });
    let energies = match settings.configs(&doc.model) {
        Ok(e) => e,
        Err(e) => return fail(RdStatus::Energy, e.to_string()),
    };
    match sim.run(&DiagnosticsPlan { witness, energies }) {
        Ok(traj) => boxed(RdTrajectory { traj }, out),
        Err(e) => fail(RdStatus::Solver, e.to_string()),
    }
}

/// Runs with the model's `solve` settings (defaults when absent).
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rd_run(model: *const RdModel, out: *mut *mut RdTrajectory) -> RdStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(RdStatus::NullPointer, "null model");
        };
        if out.is_null() {
            return fail(RdStatus::NullPointer, "null output pointer");
        }
        run_document(&m.doc, &m.doc.solver_or_default(), out)
    })
}

/// Runs with explicit step, horizon, cells per axis and ε.
///
/// # Safety
/// `model` must be a live handle, `cells` must point to `n_cells` values and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rd_run_with(
    model: *const RdModel,
    dt: f64,
    t_end: f64,
    cells: *const usize,
    n_cells: usize,
    epsilon: f64,
    out: *mut *mut RdTrajectory,
) -> RdStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(RdStatus::NullPointer, "null model");
        };
        if out.is_null() || (cells.is_null() && n_cells > 0) {
            return fail(RdStatus::NullPointer, "null pointer argument");
        }
        let cells = if n_cells == 0 { Vec::new() } else { std::slice::from_raw_parts(cells, n_cells).to_vec() };
        let base = m.doc.solver_or_default();
        let solver = SolverConfig { dt, t_end, cells_per_axis: cells, epsilon, ..base };
        run_document(&m.doc, &solver, out)
    })
}

/// # Safety
/// `traj` must come from `rd_run*` or be null.
#[no_mangle]
pub unsafe extern "C" fn rd_trajectory_free(traj: *mut RdTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of ledger rows (steps + 1).
///
/// # Safety
/// `traj` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rd_trajectory_rows(traj: *const RdTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.traj.ledger.rows.len())
}

/// Time, weighted mass, envelope and global minimum of ledger row `row`.
/// Any output pointer may be null.
///
/// # Safety
/// `traj` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rd_trajectory_row(
    traj: *const RdTrajectory,
    row: usize,
    t: *mut f64,
    weighted_mass: *mut f64,
    envelope: *mut f64,
    global_min: *mut f64,
) -> RdStatus {
    guard(|| {
        let Some(tr) = traj.as_ref() else {
            return fail(RdStatus::NullPointer, "null trajectory");
        };
        let Some(r) = tr.traj.ledger.rows.get(row) else {
            return fail(RdStatus::OutOfRange, format!("row {row} out of range"));
        };
        for (p, v) in [(t, r.t), (weighted_mass, r.weighted_mass), (envelope, r.envelope), (global_min, r.global_min())] {
            if !p.is_null() {
                *p = v;
            }
        }
        RdStatus::Ok
    })
}

/// Copies the final cell values of species `species` (0-based). `written`
/// receives the number of cells; with a null or short buffer the call
/// reports `BufferTooSmall` and only sets `written`.
///
/// # Safety
/// `traj` must be a live handle; `buf` must hold `len` values when non-null.
#[no_mangle]
pub unsafe extern "C" fn rd_trajectory_final_field(
    traj: *const RdTrajectory,
    species: usize,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> RdStatus {
    guard(|| {
        let Some(tr) = traj.as_ref() else {
            return fail(RdStatus::NullPointer, "null trajectory");
        };
        let state = tr.traj.final_state();
        let Some(field) = state.fields.get(species) else {
            return fail(RdStatus::OutOfRange, format!("species {species} out of range"));
        };
        if !written.is_null() {
            *written = field.len();
        }
        if buf.is_null() || len < field.len() {
            return fail(RdStatus::BufferTooSmall, format!("need {} values", field.len()));
        }
        ptr::copy_nonoverlapping(field.as_ptr(), buf, field.len());
        RdStatus::Ok
    })
}

/// Ledger as CSV; release with [`rd_string_free`]. Null for a null handle.
///
/// # Safety
/// `traj` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rd_trajectory_ledger_csv(traj: *const RdTrajectory) -> *mut c_char {
    traj.as_ref().map_or(ptr::null_mut(), |t| owned_string(t.traj.ledger.to_csv()))
}

/// Certifies the structural hypotheses with the model's checker settings.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rd_check(model: *const RdModel, out: *mut *mut RdReport) -> RdStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(RdStatus::NullPointer, "null model");
        };
        if out.is_null() {
            return fail(RdStatus::NullPointer, "null output pointer");
        }
        match certify(&m.doc.model, &m.doc.checker_or_default()) {
            Ok(report) => boxed(RdReport { report }, out),
            Err(e) => fail(RdStatus::Checker, e.to_string()),
        }
    })
}

/// 1 when every hypothesis is certified, 0 otherwise (or for null).
///
/// # Safety
/// `report` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rd_report_hypotheses_met(report: *const RdReport) -> i32 {
    report.as_ref().map_or(0, |r| i32::from(r.report.hypotheses_met))
}

/// Fitted mass-control witness: `b` receives m weights when non-null.
///
/// # Safety
/// `report` must be a live handle; `b` must hold `len` values when non-null.
#[no_mangle]
pub unsafe extern "C" fn rd_report_mass_control(
    report: *const RdReport,
    b: *mut f64,
    len: usize,
    k1: *mut f64,
    k2: *mut f64,
) -> RdStatus {
    guard(|| {
        let Some(r) = report.as_ref() else {
            return fail(RdStatus::NullPointer, "null report");
        };
        let bal = &r.report.bal;
        if !b.is_null() {
            if len < bal.b.len() {
                return fail(RdStatus::BufferTooSmall, format!("need {} values", bal.b.len()));
            }
            ptr::copy_nonoverlapping(bal.b.as_ptr(), b, bal.b.len());
        }
        if !k1.is_null() {
            *k1 = bal.k1;
        }
        if !k2.is_null() {
            *k2 = bal.k2;
        }
        RdStatus::Ok
    })
}

/// The report as JSON; release with [`rd_string_free`].
///
/// # Safety
/// `report` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rd_report_json(report: *const RdReport) -> *mut c_char {
    report
        .as_ref()
        .map_or(ptr::null_mut(), |r| owned_string(serde_json::to_string_pretty(&r.report).expect("report serializes")))
}

/// # Safety
/// `report` must come from `rd_check` or be null.
#[no_mangle]
pub unsafe extern "C" fn rd_report_free(report: *mut RdReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `s` must come from an `rd_*` function returning `char *`, or be null.
#[no_mangle]
pub unsafe extern "C" fn rd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// M0 e^{K1 t} + (K2 / K1)(e^{K1 t} − 1), or M0 + K2 t when K1 = 0.
#[no_mangle]
pub extern "C" fn rd_gronwall_envelope(k1: f64, k2: f64, m0: f64, t: f64) -> f64 {
    gronwall_envelope(k1, k2, m0, t)
}

/// H_p[v] with weights θ, both of length `n`.
///
/// # Safety
/// `v` and `theta` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rd_multinomial_energy(v: *const f64, theta: *const f64, n: usize, p: u32, out: *mut f64) -> RdStatus {
    guard(|| {
        if out.is_null() || (n > 0 && (v.is_null() || theta.is_null())) {
            return fail(RdStatus::NullPointer, "null pointer argument");
        }
        let (v, theta) = if n == 0 {
            (&[][..], &[][..])
        } else {
            (std::slice::from_raw_parts(v, n), std::slice::from_raw_parts(theta, n))
        };
        match multinomial_energy(v, theta, p) {
            Ok(h) => {
                *out = h;
                RdStatus::Ok
            }
            Err(e) => fail(RdStatus::Energy, e.to_string()),
        }
    })
}
