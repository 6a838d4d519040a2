//! Timestamps for session event logs.

use chrono::{DateTime, Duration, TimeZone, Utc};

/// Supplies the timestamp of the next log entry given the previous one.
pub trait Clock: Send + Sync {
    fn tick(&self, previous: Option<DateTime<Utc>>) -> DateTime<Utc>;
}

/// Wall-clock time, never earlier than the previous entry.
#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn tick(&self, previous: Option<DateTime<Utc>>) -> DateTime<Utc> {
        let now = Utc::now();
        previous.map_or(now, |p| now.max(p))
    }
}

/// Logical clock: starts at `origin` and advances by `step` per entry.
/// Replays under it produce byte-identical logs, even across processes.
#[derive(Debug, Clone, Copy)]
pub struct StepClock {
    pub origin: DateTime<Utc>,
    pub step: Duration,
}

impl Default for StepClock {
    fn default() -> Self {
        Self {
            origin: Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap(),
            step: Duration::seconds(1),
        }
    }
}

impl Clock for StepClock {
    fn tick(&self, previous: Option<DateTime<Utc>>) -> DateTime<Utc> {
        previous.map_or(self.origin, |p| p + self.step)
    }
}
