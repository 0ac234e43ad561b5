//! Virtual time. The whole system runs on an injected millisecond clock so
//! 30-day renewals and 10-minute telemetry are testable in milliseconds.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub const SEC: u64 = 1_000;
pub const MIN: u64 = 60 * SEC;
pub const HOUR: u64 = 60 * MIN;
pub const DAY: u64 = 24 * HOUR;

/// Shared monotonic virtual clock, in milliseconds.
#[derive(Debug, Clone, Default)]
pub struct VirtualClock(Arc<AtomicU64>);

impl VirtualClock {
    pub fn new(start_ms: u64) -> Self {
        Self(Arc::new(AtomicU64::new(start_ms)))
    }

    pub fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    pub fn advance(&self, delta_ms: u64) -> u64 {
        self.0.fetch_add(delta_ms, Ordering::SeqCst) + delta_ms
    }

    /// Move forward to an absolute time; never goes backwards.
    pub fn advance_to(&self, t_ms: u64) {
        self.0.fetch_max(t_ms, Ordering::SeqCst);
    }
}

/// Seconds-of-day in UTC for the daily policy time window.
pub fn seconds_of_day(t_ms: u64) -> u64 {
    (t_ms / SEC) % (DAY / SEC)
}

/// Parse a strict `YYYY-MM-DDTHH:MM:SSZ` timestamp into virtual epoch ms.
pub fn parse_iso8601(s: &str) -> Option<u64> {
    let b = s.as_bytes();
    if b.len() != 20 || b[4] != b'-' || b[7] != b'-' || b[10] != b'T' || b[13] != b':' || b[16] != b':' || b[19] != b'Z' {
        return None;
    }
    let num = |r: std::ops::Range<usize>| s[r].parse::<u64>().ok();
    let (y, mo, d) = (num(0..4)?, num(5..7)?, num(8..10)?);
    let (h, mi, sec) = (num(11..13)?, num(14..16)?, num(17..19)?);
    if !(1970..=9999).contains(&y) || !(1..=12).contains(&mo) || d < 1 || h > 23 || mi > 59 || sec > 59 {
        return None;
    }
    let leap = |y: u64| (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    let mdays = [31, if leap(y) { 29 } else { 28 }, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    if d > mdays[(mo - 1) as usize] {
        return None;
    }
    let mut days = 0u64;
    for yy in 1970..y {
        days += if leap(yy) { 366 } else { 365 };
    }
    for mm in 0..(mo - 1) as usize {
        days += mdays[mm];
    }
    days += d - 1;
    Some(((days * 24 + h) * 60 + mi) * 60 * SEC + sec * SEC)
}

/// Day-of-week for a virtual epoch time; epoch day 0 (1970-01-01) was a
/// Thursday. 0 = Monday.
pub fn day_of_week(t_ms: u64) -> u64 {
    ((t_ms / DAY) + 3) % 7
}
