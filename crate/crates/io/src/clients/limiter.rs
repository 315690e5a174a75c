use std::sync::{Condvar, Mutex};

/// Counting semaphore that caps concurrent requests and records the peak.
#[derive(Debug)]
pub struct InFlightLimiter {
    max: usize,
    state: Mutex<(usize, usize)>,
    cv: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            state: Mutex::new((0, 0)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut state = self.state.lock().expect("limiter lock");
        while state.0 >= self.max {
            state = self.cv.wait(state).expect("limiter lock");
        }
        state.0 += 1;
        state.1 = state.1.max(state.0);
        Permit { limiter: self }
    }

    pub fn peak(&self) -> usize {
        self.state.lock().expect("limiter lock").1
    }

    pub fn max(&self) -> usize {
        self.max
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut state = self.limiter.state.lock().expect("limiter lock");
        state.0 -= 1;
        drop(state);
        self.limiter.cv.notify_one();
    }
}
