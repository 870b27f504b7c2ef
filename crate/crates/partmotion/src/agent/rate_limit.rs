//! Token-bucket rate limiting shared across concurrent annotation calls.

use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Thread-safe token bucket. The bucket starts full; each request takes
/// one token; tokens refill continuously up to the capacity.
pub struct RateLimiter {
    capacity: f64,
    refill_per_sec: f64,
    state: Mutex<Bucket>,
}

struct Bucket {
    tokens: f64,
    last: Instant,
}

impl RateLimiter {
    pub fn per_minute(requests: u32) -> RateLimiter {
        assert!(requests >= 1);
        RateLimiter {
            capacity: requests as f64,
            refill_per_sec: requests as f64 / 60.0,
            state: Mutex::new(Bucket {
                tokens: requests as f64,
                last: Instant::now(),
            }),
        }
    }

    /// Refills for the elapsed time, then takes a token if one is whole.
    pub fn try_acquire_at(&self, now: Instant) -> bool {
        let mut b = self.state.lock().unwrap();
        let dt = now.saturating_duration_since(b.last).as_secs_f64();
        b.tokens = (b.tokens + dt * self.refill_per_sec).min(self.capacity);
        b.last = b.last.max(now);
        if b.tokens >= 1.0 {
            b.tokens -= 1.0;
            true
        } else {
            false
        }
    }

    pub fn try_acquire(&self) -> bool {
        self.try_acquire_at(Instant::now())
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut b = self.state.lock().unwrap();
                let now = Instant::now();
                let dt = now.saturating_duration_since(b.last).as_secs_f64();
                b.tokens = (b.tokens + dt * self.refill_per_sec).min(self.capacity);
                b.last = b.last.max(now);
                if b.tokens >= 1.0 {
                    b.tokens -= 1.0;
                    return;
                }
                (1.0 - b.tokens) / self.refill_per_sec
            };
            // Re-check after sleeping; another thread may have raced us.
            std::thread::sleep(Duration::from_secs_f64(wait.min(0.25)));
        }
    }
}

impl Default for RateLimiter {
    /// Matches common LLM endpoint throttling.
    fn default() -> Self {
        RateLimiter::per_minute(30)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_bucket_enforces_capacity_and_refills_over_time() {
        let limiter = RateLimiter::per_minute(2);
        let t0 = Instant::now();
        assert!(limiter.try_acquire_at(t0));
        assert!(limiter.try_acquire_at(t0));
        assert!(!limiter.try_acquire_at(t0));
        // Half a minute refills one token at 2/min.
        assert!(limiter.try_acquire_at(t0 + Duration::from_secs(30)));
        assert!(!limiter.try_acquire_at(t0 + Duration::from_secs(30)));
        // Refill caps at capacity even after a long idle stretch.
        let later = t0 + Duration::from_secs(3600);
        assert!(limiter.try_acquire_at(later));
        assert!(limiter.try_acquire_at(later));
        assert!(!limiter.try_acquire_at(later));
    }

    #[test]
    fn concurrent_threads_are_granted_exactly_the_capacity() {
        let limiter = std::sync::Arc::new(RateLimiter::per_minute(8));
        let t0 = Instant::now();
        let handles: Vec<_> = (0..16)
            .map(|_| {
                let limiter = limiter.clone();
                std::thread::spawn(move || limiter.try_acquire_at(t0) as usize)
            })
            .collect();
        let granted: usize = handles.into_iter().map(|h| h.join().unwrap()).sum();
        assert_eq!(granted, 8);
    }

    #[test]
    fn acquire_blocks_then_proceeds() {
        let limiter = RateLimiter::per_minute(6000); // 100/sec: short waits
        for _ in 0..6000 {
            assert!(limiter.try_acquire());
        }
        let start = Instant::now();
        limiter.acquire();
        assert!(start.elapsed() >= Duration::from_millis(1));
    }
}
