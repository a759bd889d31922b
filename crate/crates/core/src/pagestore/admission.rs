//! Admission control for pushdown page work.
//!
//! A page store serves regular reads unconditionally but treats pushdown
//! processing as best-effort: each page task must win a slot from a
//! bounded pool, waiting at most `max_wait`, otherwise the page is
//! returned raw and the compute node finishes the job. A seeded
//! random-skip hook lets tests exercise arbitrary degradation patterns.

use crate::util::XorShift64;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

#[derive(Debug)]
pub struct NdpAdmission {
    capacity: usize,
    max_wait: Duration,
    state: Mutex<State>,
    available: Condvar,
    pub admitted: AtomicU64,
    pub skipped: AtomicU64,
    high_water: AtomicUsize,
}

#[derive(Debug)]
struct State {
    in_flight: usize,
    skip_probability: f64,
    rng: XorShift64,
}

/// RAII admission slot; dropping it releases the slot.
pub struct Permit<'a> {
    admission: &'a NdpAdmission,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut state = self.admission.state.lock().unwrap();
        state.in_flight -= 1;
        drop(state);
        self.admission.available.notify_one();
    }
}

impl NdpAdmission {
    pub fn new(capacity: usize, max_wait: Duration, skip_probability: f64, seed: u64) -> NdpAdmission {
        NdpAdmission {
            capacity,
            max_wait,
            state: Mutex::new(State {
                in_flight: 0,
                skip_probability,
                rng: XorShift64::new(seed),
            }),
            available: Condvar::new(),
            admitted: AtomicU64::new(0),
            skipped: AtomicU64::new(0),
            high_water: AtomicUsize::new(0),
        }
    }

    /// Tries to win a slot, waiting up to `max_wait`. `None` means the page
    /// should be served raw.
    pub fn try_acquire(&self) -> Option<Permit<'_>> {
        if self.capacity == 0 {
            self.skipped.fetch_add(1, Ordering::Relaxed);
            return None;
        }
        let mut state = self.state.lock().unwrap();
        if state.skip_probability > 0.0 && state.rng.next_f64() < state.skip_probability {
            self.skipped.fetch_add(1, Ordering::Relaxed);
            return None;
        }
        let deadline = std::time::Instant::now() + self.max_wait;
        while state.in_flight >= self.capacity {
            let now = std::time::Instant::now();
            if now >= deadline {
                self.skipped.fetch_add(1, Ordering::Relaxed);
                return None;
            }
            let (next, timeout) =
                self.available.wait_timeout(state, deadline - now).unwrap();
            state = next;
            if timeout.timed_out() && state.in_flight >= self.capacity {
                self.skipped.fetch_add(1, Ordering::Relaxed);
                return None;
            }
        }
        state.in_flight += 1;
        self.high_water.fetch_max(state.in_flight, Ordering::Relaxed);
        drop(state);
        self.admitted.fetch_add(1, Ordering::Relaxed);
        Some(Permit { admission: self })
    }

    pub fn high_water_mark(&self) -> usize {
        self.high_water.load(Ordering::Relaxed)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn zero_capacity_skips_everything_immediately() {
        let adm = NdpAdmission::new(0, Duration::from_millis(100), 0.0, 1);
        for _ in 0..10 {
            assert!(adm.try_acquire().is_none());
        }
        assert_eq!(adm.skipped.load(Ordering::Relaxed), 10);
        assert_eq!(adm.admitted.load(Ordering::Relaxed), 0);
    }

    #[test]
    fn in_flight_never_exceeds_capacity() {
        let adm = Arc::new(NdpAdmission::new(3, Duration::from_millis(5), 0.0, 1));
        let mut handles = Vec::new();
        for _ in 0..16 {
            let adm = adm.clone();
            handles.push(std::thread::spawn(move || {
                for _ in 0..50 {
                    if let Some(permit) = adm.try_acquire() {
                        std::thread::sleep(Duration::from_micros(100));
                        drop(permit);
                    }
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert!(adm.high_water_mark() <= 3, "high water {}", adm.high_water_mark());
        assert!(adm.admitted.load(Ordering::Relaxed) > 0);
    }

    #[test]
    fn random_skip_is_seeded_and_roughly_calibrated() {
        let adm = NdpAdmission::new(100, Duration::from_millis(5), 0.5, 42);
        let mut skips = 0;
        for _ in 0..1000 {
            match adm.try_acquire() {
                Some(p) => drop(p),
                None => skips += 1,
            }
        }
        assert!((300..=700).contains(&skips), "skips {skips} far from 50%");

        // Same seed, same decisions.
        let a = NdpAdmission::new(100, Duration::from_millis(5), 0.5, 7);
        let b = NdpAdmission::new(100, Duration::from_millis(5), 0.5, 7);
        for _ in 0..100 {
            assert_eq!(a.try_acquire().is_some(), b.try_acquire().is_some());
        }
    }

    #[test]
    fn permits_release_slots() {
        let adm = NdpAdmission::new(1, Duration::from_millis(50), 0.0, 1);
        let p = adm.try_acquire().unwrap();
        drop(p);
        assert!(adm.try_acquire().is_some());
    }
}
