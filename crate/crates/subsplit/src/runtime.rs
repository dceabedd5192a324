//! Fork-join execution of one training phase.
//!
//! A phase is a batch of independent tasks, one per subnetwork, that write
//! to disjoint state. Tasks are handed to a small scoped thread pool; with
//! one worker (or one task) they run inline on the caller's thread. Results
//! are identical either way because no task reads what another writes and
//! no arithmetic crosses task boundaries, so the worker count affects wall
//! time only.

use crate::error::{Error, Result};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

pub type Task<'a> = Box<dyn FnOnce() -> Result<()> + Send + 'a>;

/// Wall-clock seconds spent in each phase of one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTimings {
    pub w_s: f64,
    pub p_s: f64,
    pub q_s: f64,
    pub u_s: f64,
}

impl PhaseTimings {
    pub fn accumulate(&mut self, other: &PhaseTimings) {
        self.w_s += other.w_s;
        self.p_s += other.p_s;
        self.q_s += other.q_s;
        self.u_s += other.u_s;
    }
}

/// Number of hardware threads, with a floor of one.
pub fn available_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Runs every task to completion and returns the phase wall time.
///
/// On failure the error names the phase and the lowest failing task index;
/// remaining tasks may or may not have run, so callers must treat the
/// epoch as poisoned. Panics inside tasks are caught and reported the same
/// way.
pub fn run_phase(phase: &str, workers: usize, tasks: Vec<Task<'_>>) -> Result<f64> {
    let start = Instant::now();
    let count = tasks.len();
    if workers <= 1 || count <= 1 {
        for (i, task) in tasks.into_iter().enumerate() {
            run_one(phase, i, task)?;
        }
        return Ok(start.elapsed().as_secs_f64());
    }
    let slots: Vec<Mutex<Option<Task>>> = tasks.into_iter().map(|t| Mutex::new(Some(t))).collect();
    let results: Vec<Mutex<Option<Result<()>>>> = (0..count).map(|_| Mutex::new(None)).collect();
    let cursor = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.min(count) {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let task = slots[i].lock().unwrap().take().expect("each task runs once");
                let outcome = run_one(phase, i, task);
                *results[i].lock().unwrap() = Some(outcome);
            });
        }
    });
    for cell in results {
        match cell.into_inner().unwrap() {
            Some(Ok(())) => {}
            Some(Err(e)) => return Err(e),
            None => unreachable!("cursor covers every slot"),
        }
    }
    Ok(start.elapsed().as_secs_f64())
}

fn run_one(phase: &str, index: usize, task: Task<'_>) -> Result<()> {
    match catch_unwind(AssertUnwindSafe(task)) {
        Ok(Ok(())) => Ok(()),
        Ok(Err(e)) => Err(Error::Phase {
            phase: phase.to_string(),
            task: index,
            msg: e.to_string(),
        }),
        Err(payload) => Err(Error::Phase {
            phase: phase.to_string(),
            task: index,
            msg: format!("panic: {}", panic_text(&payload)),
        }),
    }
}

fn panic_text(payload: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "opaque panic payload".to_string()
    }
}
