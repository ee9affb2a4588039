//! Worker scheduling: round-robin on one thread, or one thread per worker.

use std::thread;
use std::time::Duration;

use super::{AgentError, StopSignal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepResult {
    /// Did a unit of work.
    Progress,
    /// Nothing to do right now.
    Idle,
    /// Finished for good.
    Done,
}

pub trait Worker: Send {
    fn label(&self) -> &str;

    fn step(&mut self) -> Result<StepResult, AgentError>;
}

/// Runs workers until each reports [`StepResult::Done`].
///
/// In deterministic mode workers take turns in vector order on the calling
/// thread, and the run also ends when a full round makes no progress. The
/// first error sets `stop` and is returned.
pub fn run_workers(
    workers: Vec<Box<dyn Worker + '_>>,
    deterministic: bool,
    stop: &StopSignal,
) -> Result<(), AgentError> {
    if deterministic {
        round_robin(workers, stop)
    } else {
        threaded(workers, stop)
    }
}

fn round_robin(mut workers: Vec<Box<dyn Worker + '_>>, stop: &StopSignal) -> Result<(), AgentError> {
    let mut done = vec![false; workers.len()];
    loop {
        let mut progress = false;
        for (i, w) in workers.iter_mut().enumerate() {
            if done[i] {
                continue;
            }
            match w.step() {
                Ok(StepResult::Progress) => progress = true,
                Ok(StepResult::Idle) => {}
                Ok(StepResult::Done) => done[i] = true,
                Err(e) => {
                    stop.trigger(&format!("error in {}", w.label()));
                    return Err(e);
                }
            }
        }
        if done.iter().all(|d| *d) || !progress {
            return Ok(());
        }
    }
}

fn threaded(workers: Vec<Box<dyn Worker + '_>>, stop: &StopSignal) -> Result<(), AgentError> {
    thread::scope(|scope| {
        let handles: Vec<_> = workers
            .into_iter()
            .map(|mut w| {
                scope.spawn(move || -> Result<(), AgentError> {
                    loop {
                        match w.step() {
                            Ok(StepResult::Progress) => {}
                            Ok(StepResult::Idle) => {
                                if stop.is_set() {
                                    return Ok(());
                                }
                                thread::sleep(Duration::from_millis(1));
                            }
                            Ok(StepResult::Done) => return Ok(()),
                            Err(e) => {
                                stop.trigger(&format!("error in {}", w.label()));
                                return Err(e);
                            }
                        }
                    }
                })
            })
            .collect();
        let mut first = Ok(());
        for h in handles {
            let res = h.join().expect("worker thread panicked");
            if first.is_ok() {
                first = res;
            }
        }
        first
    })
}
