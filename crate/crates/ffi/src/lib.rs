//! C ABI over the `soatt` simulator.
//!
//! Scenarios and traces are opaque heap handles created by `soatt_*_new`,
//! `soatt_*_load` or `soatt_run` and released with the matching `*_free`.
//! Every fallible call returns a `SoattStatus`; on failure
//! `soatt_last_error_message` describes the error for the calling thread.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use soatt::config::ConfigFile;
use soatt::metrics::MetricsReport;
use soatt::safety::CaStrategy;
use soatt::simulator::{circle_scenario, run, ScenarioConfig, SimTrace};
use soatt::tracking::DeadlockStrategy;
use soatt::SoattError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoattStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Solver = 4,
    Simulation = 5,
    Io = 6,
    MalformedTrace = 7,
    OutOfRange = 8,
    Panic = 9,
}

/// A validated scenario.
pub struct SoattScenario {
    config: ScenarioConfig,
}

/// A finished simulation run.
pub struct SoattTrace {
    trace: SimTrace,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SoattMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub std_dev: f64,
    pub mean_intervention_time: f64,
    pub min_distance: f64,
    pub violations: usize,
    pub max_final_error: f64,
    pub deadlock_events: usize,
    pub feasibility_events: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SoattRobotState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub u1: f64,
    pub u2: f64,
    pub ref_x: f64,
    pub ref_y: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).expect("NULs were replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn status_of(err: &SoattError) -> SoattStatus {
    match err {
        e if e.is_solver_failure() => SoattStatus::Solver,
        SoattError::Step { source, .. } => status_of(source),
        SoattError::Config { .. } => SoattStatus::Config,
        SoattError::Io { .. } => SoattStatus::Io,
        SoattError::Trace { .. } => SoattStatus::MalformedTrace,
        SoattError::NonFinite { .. } | SoattError::DegenerateGeometry { .. } => {
            SoattStatus::Simulation
        }
        _ => SoattStatus::InvalidArgument,
    }
}

enum Failure {
    Status(SoattStatus, String),
    Soatt(SoattError),
}

impl From<SoattError> for Failure {
    fn from(e: SoattError) -> Self {
        Failure::Soatt(e)
    }
}

fn fail(status: SoattStatus, message: impl Into<String>) -> Failure {
    Failure::Status(status, message.into())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> SoattStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            SoattStatus::Ok
        }
        Ok(Err(Failure::Status(status, message))) => {
            set_error(message);
            status
        }
        Ok(Err(Failure::Soatt(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let what = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {what}"));
            SoattStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(fail(SoattStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(SoattStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, Failure> {
    ptr.as_ref()
        .ok_or_else(|| fail(SoattStatus::NullPointer, format!("{name} is null")))
}

unsafe fn mut_arg<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut()
        .ok_or_else(|| fail(SoattStatus::NullPointer, format!("{name} is null")))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    *mut_arg(out, "out")? = value;
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn soatt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a success.
/// Valid until the next `soatt_*` call on the same thread.
#[no_mangle]
pub extern "C" fn soatt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |m| m.as_ptr())
    })
}

/// Parses a TOML scenario document.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soatt_scenario_from_toml(
    toml: *const c_char,
    out: *mut *mut SoattScenario,
) -> SoattStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        let config = ConfigFile::parse(text)?.build()?;
        write_out(out, Box::into_raw(Box::new(SoattScenario { config })))
    })
}

/// Loads a TOML scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soatt_scenario_load(
    path: *const c_char,
    out: *mut *mut SoattScenario,
) -> SoattStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let config = ConfigFile::load(Path::new(path))?.build()?;
        write_out(out, Box::into_raw(Box::new(SoattScenario { config })))
    })
}

/// Robots on a circle of `radius` meters swapping to antipodal points at `speed` m/s.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soatt_scenario_circle(
    count: usize,
    radius: f64,
    speed: f64,
    out: *mut *mut SoattScenario,
) -> SoattStatus {
    guard(|| {
        if count == 0 || !(radius > 0.0) || !(speed > 0.0) {
            return Err(fail(
                SoattStatus::InvalidArgument,
                "count, radius and speed must be positive",
            ));
        }
        let config = circle_scenario(count, radius, speed);
        config.validate()?;
        write_out(out, Box::into_raw(Box::new(SoattScenario { config })))
    })
}

/// # Safety
/// `scenario` must come from a `soatt_scenario_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn soatt_scenario_free(scenario: *mut SoattScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soatt_scenario_robot_count(
    scenario: *const SoattScenario,
    out: *mut usize,
) -> SoattStatus {
    guard(|| write_out(out, ref_arg(scenario, "scenario")?.config.robots.len()))
}

/// Selects the collision-avoidance strategy by name, e.g. `"proposed"` or `"braking"`.
///
/// # Safety
/// `scenario` must be a live handle; `name` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn soatt_scenario_set_collision(
    scenario: *mut SoattScenario,
    name: *const c_char,
) -> SoattStatus {
    guard(|| {
        let scenario = mut_arg(scenario, "scenario")?;
        scenario.config.strategy.collision = str_arg(name, "name")?.parse::<CaStrategy>()?;
        Ok(())
    })
}

/// Selects the deadlock strategy by name, e.g. `"auxiliary_term"` or `"none"`.
///
/// # Safety
/// `scenario` must be a live handle; `name` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn soatt_scenario_set_deadlock(
    scenario: *mut SoattScenario,
    name: *const c_char,
) -> SoattStatus {
    guard(|| {
        let scenario = mut_arg(scenario, "scenario")?;
        scenario.config.strategy.deadlock = str_arg(name, "name")?.parse::<DeadlockStrategy>()?;
        Ok(())
    })
}

/// Sets the step size and horizon in seconds.
///
/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn soatt_scenario_set_timing(
    scenario: *mut SoattScenario,
    dt: f64,
    total_time: f64,
) -> SoattStatus {
    guard(|| {
        let scenario = mut_arg(scenario, "scenario")?;
        let mut config = scenario.config.clone();
        config.sim.dt = dt;
        config.sim.total_time = total_time;
        config.validate()?;
        scenario.config = config;
        Ok(())
    })
}

/// Runs the closed loop to completion.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soatt_run(
    scenario: *const SoattScenario,
    out: *mut *mut SoattTrace,
) -> SoattStatus {
    guard(|| {
        let scenario = ref_arg(scenario, "scenario")?;
        let out = mut_arg(out, "out")?;
        let trace = run(&scenario.config)?;
        *out = Box::into_raw(Box::new(SoattTrace { trace }));
        Ok(())
    })
}

/// Reads `trace.csv` (and `multipliers.csv` beside it, if present).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soatt_trace_load(
    path: *const c_char,
    out: *mut *mut SoattTrace,
) -> SoattStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let trace = soatt::trace_io::load_trace(Path::new(path))?;
        write_out(out, Box::into_raw(Box::new(SoattTrace { trace })))
    })
}

/// Writes `trace.csv` and `multipliers.csv` into an existing directory.
///
/// # Safety
/// `trace` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn soatt_trace_save(
    trace: *const SoattTrace,
    dir: *const c_char,
) -> SoattStatus {
    guard(|| {
        let trace = ref_arg(trace, "trace")?;
        let dir = str_arg(dir, "dir")?;
        soatt::trace_io::save_trace(&trace.trace, Path::new(dir))?;
        Ok(())
    })
}

/// # Safety
/// `trace` must come from `soatt_run` or `soatt_trace_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn soatt_trace_free(trace: *mut SoattTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soatt_trace_robot_count(
    trace: *const SoattTrace,
    out: *mut usize,
) -> SoattStatus {
    guard(|| write_out(out, ref_arg(trace, "trace")?.trace.robot_count))
}

/// Number of recorded steps after the initial state.
///
/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soatt_trace_step_count(
    trace: *const SoattTrace,
    out: *mut usize,
) -> SoattStatus {
    guard(|| write_out(out, ref_arg(trace, "trace")?.trace.steps.len()))
}

/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soatt_trace_dt(trace: *const SoattTrace, out: *mut f64) -> SoattStatus {
    guard(|| write_out(out, ref_arg(trace, "trace")?.trace.dt))
}

/// State of `robot` at `step`; step 0 is the initial state.
///
/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soatt_trace_robot_state(
    trace: *const SoattTrace,
    step: usize,
    robot: usize,
    out: *mut SoattRobotState,
) -> SoattStatus {
    guard(|| {
        let trace = &ref_arg(trace, "trace")?.trace;
        if robot >= trace.robot_count || step > trace.steps.len() {
            return Err(fail(
                SoattStatus::OutOfRange,
                format!(
                    "step {step}, robot {robot} outside {} steps x {} robots",
                    trace.steps.len(),
                    trace.robot_count
                ),
            ));
        }
        let (state, reference) = match step {
            0 => (&trace.initial[robot], &trace.initial_references[robot]),
            k => (
                &trace.steps[k - 1].states[robot],
                &trace.steps[k - 1].references[robot],
            ),
        };
        write_out(
            out,
            SoattRobotState {
                x: state.position.x,
                y: state.position.y,
                theta: state.heading,
                u1: state.wheel_velocities.x,
                u2: state.wheel_velocities.y,
                ref_x: reference.position.x,
                ref_y: reference.position.y,
            },
        )
    })
}

/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soatt_trace_metrics(
    trace: *const SoattTrace,
    out: *mut SoattMetrics,
) -> SoattStatus {
    guard(|| {
        let report = MetricsReport::from_trace(&ref_arg(trace, "trace")?.trace)?;
        write_out(
            out,
            SoattMetrics {
                rmse: report.tracking.rmse,
                mae: report.tracking.mae,
                std_dev: report.tracking.std_dev,
                mean_intervention_time: report.intervention.mean,
                min_distance: report.safety.min_distance,
                violations: report.safety.violations,
                max_final_error: report.max_final_error(),
                deadlock_events: report.deadlock_events.len(),
                feasibility_events: report.feasibility_events,
            },
        )
    })
}
