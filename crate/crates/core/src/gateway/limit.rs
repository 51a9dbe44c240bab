use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

/// Time source used by the rate limiter and retry backoff.
pub trait Clock: Send + Sync {
    /// Time elapsed since the clock's origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Simulated clock: sleeping advances virtual time instantly.
#[derive(Debug, Default)]
pub struct SimClock {
    now: Mutex<Duration>,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for SimClock {
    fn now(&self) -> Duration {
        *self.now.lock().expect("clock lock")
    }
    fn sleep(&self, d: Duration) {
        *self.now.lock().expect("clock lock") += d;
    }
}

/// Sliding-window limiter: at most `limit` acquisitions in any window of
/// length `window`.
pub struct RateLimiter {
    limit: usize,
    window: Duration,
    issued: Mutex<VecDeque<Duration>>,
    clock: Arc<dyn Clock>,
}

impl RateLimiter {
    pub fn new(limit: usize, window: Duration, clock: Arc<dyn Clock>) -> Self {
        assert!(limit > 0, "rate limit must be positive");
        Self {
            limit,
            window,
            issued: Mutex::new(VecDeque::with_capacity(limit)),
            clock,
        }
    }

    /// Blocks until a request may be issued and records it. Returns the
    /// issue time.
    pub fn acquire(&self) -> Duration {
        loop {
            let wait = {
                let mut issued = self.issued.lock().expect("limiter lock");
                let now = self.clock.now();
                while issued
                    .front()
                    .is_some_and(|t| now.saturating_sub(*t) >= self.window)
                {
                    issued.pop_front();
                }
                if issued.len() < self.limit {
                    issued.push_back(now);
                    return now;
                }
                (issued[0] + self.window).saturating_sub(now)
            };
            self.clock.sleep(wait.max(Duration::from_millis(1)));
        }
    }
}

/// Counting semaphore bounding in-flight provider calls.
pub struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    sem: &'a Semaphore,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().expect("semaphore lock");
        while *n == 0 {
            n = self.freed.wait(n).expect("semaphore lock");
        }
        *n -= 1;
        Permit { sem: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().expect("semaphore lock") += 1;
        self.sem.freed.notify_one();
    }
}
