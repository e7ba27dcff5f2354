use std::sync::{Condvar, Mutex};

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
    capacity: usize,
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Limiter {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Limiter {
            free: Mutex::new(capacity),
            cv: Condvar::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit { limiter: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.limiter.free.lock().unwrap() += 1;
        self.limiter.cv.notify_one();
    }
}
