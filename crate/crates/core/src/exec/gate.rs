use std::sync::{Condvar, Mutex};

/// Counting semaphore bounding the number of concurrently profiled processes.
#[derive(Debug)]
pub struct AdmissionGate {
    capacity: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    gate: &'a AdmissionGate,
}

impl AdmissionGate {
    pub fn new(capacity: usize) -> Self {
        AdmissionGate {
            capacity: capacity.max(1),
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    /// One slot per available core.
    pub fn per_core() -> Self {
        Self::new(std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut used = self.in_use.lock().unwrap();
        while *used >= self.capacity {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        Permit { gate: self }
    }

    pub fn in_use(&self) -> usize {
        *self.in_use.lock().unwrap()
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.gate.in_use.lock().unwrap() -= 1;
        self.gate.freed.notify_one();
    }
}
