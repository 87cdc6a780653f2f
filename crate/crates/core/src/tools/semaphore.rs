//! Counting semaphore bounding concurrent builds, with instrumentation.
//!
//! Every build acquires a permit before spawning its process. The semaphore
//! tracks the in-flight high-water mark so tests and reports can check the
//! bound was respected (and reached).

use std::sync::{Arc, Condvar, Mutex};

#[derive(Debug, Default)]
struct State {
    in_flight: usize,
    max_observed: usize,
    total_acquired: u64,
}

#[derive(Debug)]
pub struct BuildSemaphore {
    capacity: usize,
    state: Mutex<State>,
    available: Condvar,
}

impl BuildSemaphore {
    pub fn new(capacity: usize) -> Arc<Self> {
        Arc::new(Self {
            capacity: capacity.max(1),
            state: Mutex::new(State::default()),
            available: Condvar::new(),
        })
    }

    /// Block until a permit is free.
    pub fn acquire(self: &Arc<Self>) -> BuildPermit {
        let mut state = self.state.lock().expect("semaphore lock");
        while state.in_flight >= self.capacity {
            state = self.available.wait(state).expect("semaphore lock");
        }
        state.in_flight += 1;
        state.total_acquired += 1;
        state.max_observed = state.max_observed.max(state.in_flight);
        BuildPermit {
            semaphore: Arc::clone(self),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn in_flight(&self) -> usize {
        self.state.lock().expect("semaphore lock").in_flight
    }

    /// Highest concurrent permit count observed so far.
    pub fn max_observed(&self) -> usize {
        self.state.lock().expect("semaphore lock").max_observed
    }

    pub fn total_acquired(&self) -> u64 {
        self.state.lock().expect("semaphore lock").total_acquired
    }

    fn release(&self) {
        let mut state = self.state.lock().expect("semaphore lock");
        state.in_flight -= 1;
        drop(state);
        self.available.notify_one();
    }
}

/// RAII permit; releasing happens on drop.
#[derive(Debug)]
pub struct BuildPermit {
    semaphore: Arc<BuildSemaphore>,
}

impl Drop for BuildPermit {
    fn drop(&mut self) {
        self.semaphore.release();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;
    use std::time::Duration;

    #[test]
    fn bound_is_never_exceeded_and_is_reached() {
        let semaphore = BuildSemaphore::new(3);
        let mut handles = Vec::new();
        for _ in 0..16 {
            let sem = Arc::clone(&semaphore);
            handles.push(thread::spawn(move || {
                let _permit = sem.acquire();
                assert!(sem.in_flight() <= 3);
                thread::sleep(Duration::from_millis(10));
            }));
        }
        for handle in handles {
            handle.join().unwrap();
        }
        assert_eq!(semaphore.in_flight(), 0);
        assert_eq!(semaphore.max_observed(), 3);
        assert_eq!(semaphore.total_acquired(), 16);
    }

    #[test]
    fn zero_capacity_is_clamped_to_one() {
        let semaphore = BuildSemaphore::new(0);
        assert_eq!(semaphore.capacity(), 1);
        let permit = semaphore.acquire();
        drop(permit);
        assert_eq!(semaphore.max_observed(), 1);
    }
}
