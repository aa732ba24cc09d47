//! C ABI over `archft`.
//!
//! Every function returns an [`ArchftStatus`]. On failure the message is kept
//! per thread and can be read with [`archft_last_error`]. Handles are opaque
//! and must be released with their `_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use archft::archspace::{ActionVector, SupernetSpec};
use archft::controller::{Controller, ControllerConfig, Trajectory};
use archft::earlystop::ActionHistory;
use archft::numkernel::Rng;
use archft::pipeline::{Run, RunConfig};
use archft::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchftStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Checkpoint = 5,
    PhaseFailed = 6,
    Failed = 7,
    Panic = 8,
}

/// A compiled search space.
pub struct ArchftSpace {
    spec: SupernetSpec,
}

/// Early-stop tracker over a fixed set of sites.
pub struct ArchftHistory {
    history: ActionHistory,
}

/// Search controller with its own episode stream.
pub struct ArchftController {
    controller: Controller,
    rng: Rng,
    last: Option<Trajectory>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ArchftStatus {
    match e {
        Error::Config { .. } | Error::Parse { .. } => ArchftStatus::Config,
        Error::Io { .. } => ArchftStatus::Io,
        Error::Checkpoint(_) => ArchftStatus::Checkpoint,
        Error::Phase { .. } => ArchftStatus::PhaseFailed,
        Error::Action(_) | Error::Shape { .. } | Error::Label { .. } | Error::Invalid(_) => ArchftStatus::InvalidArgument,
        _ => ArchftStatus::Failed,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ArchftStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ArchftStatus::Ok,
        Ok(Err(Fail::Null(name))) => {
            set_error(format!("{name} is null"));
            ArchftStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            ArchftStatus::InvalidArgument
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            ArchftStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Arg(format!("{name} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(name))
}

unsafe fn handle_mut<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(name))
}

unsafe fn out<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(name))
}

unsafe fn actions(p: *const usize, len: usize, name: &'static str) -> Result<ActionVector, Fail> {
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    Ok(ActionVector(std::slice::from_raw_parts(p, len).to_vec()))
}

unsafe fn write_actions(a: &ActionVector, p: *mut usize, len: usize) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail::Null("out_actions"));
    }
    if len != a.len() {
        return Err(Fail::Arg(format!("buffer holds {len} sites, episode has {}", a.len())));
    }
    std::slice::from_raw_parts_mut(p, len).copy_from_slice(a.as_slice());
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn archft_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn archft_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Compiles a search space. `arch` and `rule` are builtin names or file
/// paths; `scope` is `small`, `medium` or `large`.
#[no_mangle]
pub unsafe extern "C" fn archft_space_new(
    arch: *const c_char,
    rule: *const c_char,
    scope: *const c_char,
    out_space: *mut *mut ArchftSpace,
) -> ArchftStatus {
    guard(|| {
        let slot = out(out_space, "out_space")?;
        let mut cfg = RunConfig::default();
        cfg.set("arch", text(arch, "arch")?)?;
        cfg.set("rule", text(rule, "rule")?)?;
        cfg.set("scope", text(scope, "scope")?)?;
        let spec = SupernetSpec::compile(&cfg.architecture()?, &cfg.mutation_rule()?, cfg.scope)?;
        *slot = Box::into_raw(Box::new(ArchftSpace { spec }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn archft_space_free(space: *mut ArchftSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

#[no_mangle]
pub unsafe extern "C" fn archft_space_num_sites(space: *const ArchftSpace, out_sites: *mut usize) -> ArchftStatus {
    guard(|| {
        *out(out_sites, "out_sites")? = handle(space, "space")?.spec.num_sites();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn archft_space_num_candidates(
    space: *const ArchftSpace,
    site: usize,
    out_count: *mut usize,
) -> ArchftStatus {
    guard(|| {
        let spec = &handle(space, "space")?.spec;
        let s = spec
            .sites
            .get(site)
            .ok_or_else(|| Fail::Arg(format!("site {site} out of range for {} sites", spec.num_sites())))?;
        *out(out_count, "out_count")? = s.candidates.len();
        Ok(())
    })
}

/// Writes the kernel size chosen at each site by `actions`.
#[no_mangle]
pub unsafe extern "C" fn archft_space_decode(
    space: *const ArchftSpace,
    actions_in: *const usize,
    len: usize,
    out_kernels: *mut usize,
) -> ArchftStatus {
    guard(|| {
        let spec = &handle(space, "space")?.spec;
        let subnet = spec.decode(&actions(actions_in, len, "actions")?)?;
        if out_kernels.is_null() {
            return Err(Fail::Null("out_kernels"));
        }
        std::slice::from_raw_parts_mut(out_kernels, len).copy_from_slice(&subnet.kernels);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn archft_history_new(
    space: *const ArchftSpace,
    window: usize,
    p_stop: f64,
    out_history: *mut *mut ArchftHistory,
) -> ArchftStatus {
    guard(|| {
        let slot = out(out_history, "out_history")?;
        let spec = &handle(space, "space")?.spec;
        let candidates = spec.sites.iter().map(|s| s.candidates.len()).collect();
        let history = ActionHistory::new(candidates, window, p_stop)?;
        *slot = Box::into_raw(Box::new(ArchftHistory { history }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn archft_history_free(history: *mut ArchftHistory) {
    if !history.is_null() {
        drop(Box::from_raw(history));
    }
}

/// Records one round and reports whether the stop rule now holds.
#[no_mangle]
pub unsafe extern "C" fn archft_history_record(
    history: *mut ArchftHistory,
    sampled: *const usize,
    greedy: *const usize,
    len: usize,
    out_stable: *mut bool,
) -> ArchftStatus {
    guard(|| {
        let h = handle_mut(history, "history")?;
        let slot = out(out_stable, "out_stable")?;
        let row = h
            .history
            .record(&actions(sampled, len, "sampled")?, &actions(greedy, len, "greedy")?)?;
        *slot = row.stable;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn archft_history_rounds(history: *const ArchftHistory, out_rounds: *mut usize) -> ArchftStatus {
    guard(|| {
        *out(out_rounds, "out_rounds")? = handle(history, "history")?.history.rounds();
        Ok(())
    })
}

/// Controller with default settings for `space`.
#[no_mangle]
pub unsafe extern "C" fn archft_controller_new(
    space: *const ArchftSpace,
    seed: u64,
    out_controller: *mut *mut ArchftController,
) -> ArchftStatus {
    guard(|| {
        let slot = out(out_controller, "out_controller")?;
        let spec = &handle(space, "space")?.spec;
        let candidates = spec.sites.iter().map(|s| s.candidates.len()).collect();
        let root = Rng::new(seed);
        let controller = Controller::new(candidates, ControllerConfig::default(), root.split("controller").seed())?;
        *slot = Box::into_raw(Box::new(ArchftController {
            controller,
            rng: root.split("episodes"),
            last: None,
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn archft_controller_free(controller: *mut ArchftController) {
    if !controller.is_null() {
        drop(Box::from_raw(controller));
    }
}

/// Samples an episode into `out_actions` and keeps it for the next update.
#[no_mangle]
pub unsafe extern "C" fn archft_controller_sample(
    controller: *mut ArchftController,
    out_actions: *mut usize,
    len: usize,
) -> ArchftStatus {
    guard(|| {
        let c = handle_mut(controller, "controller")?;
        let traj = c.controller.sample(&mut c.rng);
        write_actions(&traj.actions, out_actions, len)?;
        c.last = Some(traj);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn archft_controller_greedy(
    controller: *const ArchftController,
    out_actions: *mut usize,
    len: usize,
) -> ArchftStatus {
    guard(|| {
        let c = handle(controller, "controller")?;
        write_actions(&c.controller.greedy().actions, out_actions, len)
    })
}

/// Policy-gradient update on the last sampled episode. `out_advantage` may
/// be null.
#[no_mangle]
pub unsafe extern "C" fn archft_controller_update(
    controller: *mut ArchftController,
    reward: f64,
    out_advantage: *mut f64,
) -> ArchftStatus {
    guard(|| {
        let c = handle_mut(controller, "controller")?;
        let traj = c
            .last
            .take()
            .ok_or_else(|| Fail::Arg("no sampled episode to update on".into()))?;
        let report = c.controller.update(&traj, reward)?;
        if let Some(a) = out_advantage.as_mut() {
            *a = report.advantage;
        }
        Ok(())
    })
}

/// Runs every pending phase in `run_dir`. `config_text` holds
/// `key = value` lines and may be null for the defaults.
#[no_mangle]
pub unsafe extern "C" fn archft_run_all(config_text: *const c_char, run_dir: *const c_char) -> ArchftStatus {
    guard(|| {
        let cfg = if config_text.is_null() {
            RunConfig::default()
        } else {
            RunConfig::parse(text(config_text, "config_text")?)?
        };
        cfg.validate()?;
        let dir = PathBuf::from(text(run_dir, "run_dir")?);
        Run::new(cfg, dir).run_all()?;
        Ok(())
    })
}
