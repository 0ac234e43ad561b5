//! Token-bucket rate limiting at the API gateway. Authenticated clients get a
//! bucket each; unauthenticated traffic shares one global bucket.

use std::collections::HashMap;

use crate::clock::SEC;

pub const DEFAULT_CAPACITY: f64 = 50.0;
pub const DEFAULT_REFILL_PER_SEC: f64 = 25.0;

#[derive(Debug, Clone)]
struct Bucket {
    tokens: f64,
    last_refill: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admit,
    Reject,
}

#[derive(Debug)]
pub struct RateLimiter {
    capacity: f64,
    refill_per_sec: f64,
    per_client: HashMap<String, Bucket>,
    global: Bucket,
}

impl RateLimiter {
    pub fn new(capacity: f64, refill_per_sec: f64) -> Self {
        Self {
            capacity,
            refill_per_sec,
            per_client: HashMap::new(),
            global: Bucket { tokens: capacity, last_refill: 0 },
        }
    }

    fn take(bucket: &mut Bucket, capacity: f64, refill: f64, now: u64) -> Admission {
        let elapsed = now.saturating_sub(bucket.last_refill) as f64 / SEC as f64;
        bucket.tokens = (bucket.tokens + elapsed * refill).min(capacity);
        bucket.last_refill = now;
        if bucket.tokens >= 1.0 {
            bucket.tokens -= 1.0;
            Admission::Admit
        } else {
            Admission::Reject
        }
    }

    /// Authenticated request against the client's own bucket.
    pub fn admit(&mut self, client_id: &str, now: u64) -> Admission {
        let bucket = self.per_client.entry(client_id.to_string()).or_insert(Bucket {
            tokens: self.capacity,
            last_refill: now,
        });
        Self::take(bucket, self.capacity, self.refill_per_sec, now)
    }

    /// Unauthenticated request against the shared global bucket.
    pub fn admit_unauthenticated(&mut self, now: u64) -> Admission {
        Self::take(&mut self.global, self.capacity, self.refill_per_sec, now)
    }
}

impl Default for RateLimiter {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY, DEFAULT_REFILL_PER_SEC)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burst_capacity_then_reject() {
        let mut rl = RateLimiter::default();
        for i in 0..50 {
            assert_eq!(rl.admit("c", 0), Admission::Admit, "request {i}");
        }
        assert_eq!(rl.admit("c", 0), Admission::Reject);
    }

    #[test]
    fn refill_rate_25_per_sec() {
        let mut rl = RateLimiter::default();
        for _ in 0..50 {
            rl.admit("c", 0);
        }
        assert_eq!(rl.admit("c", 0), Admission::Reject);
        let mut admitted = 0;
        for _ in 0..30 {
            if rl.admit("c", SEC) == Admission::Admit {
                admitted += 1;
            }
        }
        assert_eq!(admitted, 25);
    }

    #[test]
    fn clients_are_isolated() {
        let mut rl = RateLimiter::default();
        for _ in 0..50 {
            rl.admit("a", 0);
        }
        assert_eq!(rl.admit("a", 0), Admission::Reject);
        assert_eq!(rl.admit("b", 0), Admission::Admit);
    }

    #[test]
    fn unauthenticated_share_one_bucket() {
        let mut rl = RateLimiter::default();
        let mut admitted = 0;
        for _ in 0..1000 {
            if rl.admit_unauthenticated(0) == Admission::Admit {
                admitted += 1;
            }
        }
        assert_eq!(admitted, 50);
    }
}
