//! C interface. Objects are opaque handles created by `dpgo_*_new`/`dpgo_*_from_*`
//! functions and released with the matching `dpgo_*_free`. Fallible calls
//! return a [`DpgoStatus`]; the message of the last failure on the calling
//! thread is available from [`dpgo_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use dpgo::certify::{solve, InitMethod, SolveConfig, SolveOutcome};
use dpgo::cli::simulation_preset;
use dpgo::error::Error;
use dpgo::netsim::run_distributed;
use dpgo::posegraph::{parse_g2o_with, read_g2o_file, simulate_grid, InfoReduction, PoseGraph};
use dpgo::rbcd::Selection;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DpgoStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidInput = 5,
    Numerical = 6,
    OutOfRange = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DpgoSelection {
    Uniform = 0,
    Importance = 1,
    Greedy = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DpgoInit {
    SpanningTree = 0,
    Chordal = 1,
    Random = 2,
}

/// A pose graph with robot ownership.
pub struct DpgoGraph(PoseGraph);

/// Solver configuration.
pub struct DpgoConfig(SolveConfig);

/// Outcome of a solve.
pub struct DpgoResult(SolveOutcome);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DpgoStatus {
    match e {
        Error::Io { .. } => DpgoStatus::Io,
        Error::Parse { .. } | Error::Format(_) => DpgoStatus::Parse,
        Error::Validation(_) | Error::Parameter(_) | Error::Dimension(_) | Error::Coloring(..) => DpgoStatus::InvalidInput,
        Error::Singular(_) | Error::Numerical(_) | Error::EscapeFailed(_) => DpgoStatus::Numerical,
    }
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), (DpgoStatus, String)>) -> DpgoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DpgoStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            DpgoStatus::Panic
        }
    }
}

fn lib<T>(r: dpgo::error::Result<T>) -> Result<T, (DpgoStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(name: &str) -> (DpgoStatus, String) {
    (DpgoStatus::NullArgument, format!("{name} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (DpgoStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|e| (DpgoStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn out_ptr<T>(out: *mut *mut T, value: T) -> Result<(), (DpgoStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dpgo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dpgo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a g2o file and splits its poses among `robots` contiguous ranges.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpgo_graph_from_g2o_file(path: *const c_char, robots: usize, out: *mut *mut DpgoGraph) -> DpgoStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let (g, _) = lib(read_g2o_file(path, InfoReduction::default()))?;
        let g = lib(g.with_contiguous_ownership(robots))?;
        out_ptr(out, DpgoGraph(g))
    })
}

/// Parses g2o text; see [`dpgo_graph_from_g2o_file`].
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpgo_graph_from_g2o_text(text: *const c_char, robots: usize, out: *mut *mut DpgoGraph) -> DpgoStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let (g, _) = lib(parse_g2o_with(text, InfoReduction::default()))?;
        let g = lib(g.with_contiguous_ownership(robots))?;
        out_ptr(out, DpgoGraph(g))
    })
}

/// Simulated multi-robot grid (`preset` is grid9, grid4, plane9 or a TOML path).
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpgo_graph_simulate(preset: *const c_char, seed: u64, out: *mut *mut DpgoGraph) -> DpgoStatus {
    guard(|| {
        let mut p = lib(simulation_preset(str_arg(preset, "preset")?))?;
        p.seed = seed;
        let (g, _) = lib(simulate_grid(&p))?;
        out_ptr(out, DpgoGraph(g))
    })
}

/// # Safety
/// `g` must be NULL or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn dpgo_graph_num_poses(g: *const DpgoGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.num_poses)
}

/// # Safety
/// `g` must be NULL or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn dpgo_graph_num_edges(g: *const DpgoGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.edges.len())
}

/// # Safety
/// `g` must be NULL or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn dpgo_graph_num_robots(g: *const DpgoGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.num_robots())
}

/// # Safety
/// `g` must be NULL or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn dpgo_graph_dimension(g: *const DpgoGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.dimension)
}

/// # Safety
/// `g` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dpgo_graph_free(g: *mut DpgoGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Default configuration.
#[no_mangle]
pub extern "C" fn dpgo_config_new() -> *mut DpgoConfig {
    Box::into_raw(Box::new(DpgoConfig(SolveConfig::default())))
}

/// Configuration from TOML text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpgo_config_from_toml(text: *const c_char, out: *mut *mut DpgoConfig) -> DpgoStatus {
    guard(|| {
        let c = lib(SolveConfig::from_toml(str_arg(text, "text")?))?;
        out_ptr(out, DpgoConfig(c))
    })
}

unsafe fn with_config(c: *mut DpgoConfig, f: impl FnOnce(&mut SolveConfig)) -> DpgoStatus {
    guard(|| {
        let c = c.as_mut().ok_or_else(|| null("config"))?;
        f(&mut c.0);
        lib(c.0.local.validate())
    })
}

/// Seed of the solver and the block selection.
///
/// # Safety
/// `c` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn dpgo_config_set_seed(c: *mut DpgoConfig, seed: u64) -> DpgoStatus {
    with_config(c, |c| {
        c.seed = seed;
        c.local.seed = seed;
    })
}

/// # Safety
/// `c` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn dpgo_config_set_selection(c: *mut DpgoConfig, s: DpgoSelection) -> DpgoStatus {
    with_config(c, |c| {
        c.local.selection = match s {
            DpgoSelection::Uniform => Selection::Uniform,
            DpgoSelection::Importance => Selection::Importance,
            DpgoSelection::Greedy => Selection::Greedy,
        }
    })
}

/// # Safety
/// `c` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn dpgo_config_set_init(c: *mut DpgoConfig, i: DpgoInit) -> DpgoStatus {
    with_config(c, |c| {
        c.init = match i {
            DpgoInit::SpanningTree => InitMethod::SpanningTree,
            DpgoInit::Chordal => InitMethod::Chordal,
            DpgoInit::Random => InitMethod::Random,
        }
    })
}

/// # Safety
/// `c` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn dpgo_config_set_grad_tol(c: *mut DpgoConfig, tol: f64) -> DpgoStatus {
    with_config(c, |c| c.local.grad_tol = tol)
}

/// `accelerated = false` selects plain block-coordinate descent.
///
/// # Safety
/// `c` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn dpgo_config_set_accelerated(c: *mut DpgoConfig, accelerated: bool) -> DpgoStatus {
    with_config(c, |c| c.accelerated = accelerated)
}

/// Rank range of the staircase; `0` keeps the default.
///
/// # Safety
/// `c` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn dpgo_config_set_ranks(c: *mut DpgoConfig, r0: usize, r_max: usize) -> DpgoStatus {
    with_config(c, |c| {
        c.r0 = (r0 > 0).then_some(r0);
        c.r_max = (r_max > 0).then_some(r_max);
    })
}

/// # Safety
/// `c` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dpgo_config_free(c: *mut DpgoConfig) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Solves and certifies. With `distributed`, robots run as simulated agents
/// exchanging messages; the result is identical.
///
/// # Safety
/// `g` and `c` must be live handles; `c` may be NULL for the defaults.
#[no_mangle]
pub unsafe extern "C" fn dpgo_solve(g: *const DpgoGraph, c: *const DpgoConfig, distributed: bool, out: *mut *mut DpgoResult) -> DpgoStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("graph"))?;
        let default = SolveConfig::default();
        let cfg = c.as_ref().map_or(&default, |c| &c.0);
        let outcome = if distributed { lib(run_distributed(&g.0, cfg, true))?.outcome } else { lib(solve(&g.0, cfg))? };
        out_ptr(out, DpgoResult(outcome))
    })
}

/// # Safety
/// `r` must be NULL or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn dpgo_result_certified(r: *const DpgoResult) -> bool {
    r.as_ref().is_some_and(|r| r.0.report.certified)
}

/// `⟨Q, XᵀX⟩` at the final iterate; NaN for NULL.
///
/// # Safety
/// `r` must be NULL or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn dpgo_result_f_sdp(r: *const DpgoResult) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.0.report.f_sdp)
}

/// Cost of the rounded poses; NaN for NULL.
///
/// # Safety
/// `r` must be NULL or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn dpgo_result_f_rounded(r: *const DpgoResult) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.0.report.f_rounded)
}

/// # Safety
/// `r` must be NULL or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn dpgo_result_lambda_min(r: *const DpgoResult) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.0.report.lambda_min)
}

/// # Safety
/// `r` must be NULL or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn dpgo_result_final_rank(r: *const DpgoResult) -> usize {
    r.as_ref().map_or(0, |r| r.0.report.final_rank)
}

/// # Safety
/// `r` must be NULL or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn dpgo_result_num_poses(r: *const DpgoResult) -> usize {
    r.as_ref().map_or(0, |r| r.0.poses.len())
}

/// Copies pose `i`: `d·d` rotation entries (row-major) and `d` translation entries.
///
/// # Safety
/// `rotation` must hold `d·d` and `translation` `d` doubles, where `d` is the
/// graph dimension.
#[no_mangle]
pub unsafe extern "C" fn dpgo_result_pose(r: *const DpgoResult, i: usize, rotation: *mut f64, translation: *mut f64) -> DpgoStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("result"))?;
        if rotation.is_null() || translation.is_null() {
            return Err(null("output buffer"));
        }
        let p = r.0.poses.get(i).ok_or_else(|| (DpgoStatus::OutOfRange, format!("pose {i} of {}", r.0.poses.len())))?;
        let d = p.dim();
        let rot = std::slice::from_raw_parts_mut(rotation, d * d);
        for a in 0..d {
            for b in 0..d {
                rot[a * d + b] = p.rotation[(a, b)];
            }
        }
        std::slice::from_raw_parts_mut(translation, d).copy_from_slice(p.translation.as_slice());
        Ok(())
    })
}

/// Full report as JSON; free with [`dpgo_string_free`]. NULL on failure.
///
/// # Safety
/// `r` must be NULL or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn dpgo_result_report_json(r: *const DpgoResult) -> *mut c_char {
    let Some(r) = r.as_ref() else {
        set_error("result is null".into());
        return std::ptr::null_mut();
    };
    match serde_json::to_string(&r.0.report) {
        Ok(s) => CString::new(s).map_or(std::ptr::null_mut(), CString::into_raw),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `r` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dpgo_result_free(r: *mut DpgoResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dpgo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
