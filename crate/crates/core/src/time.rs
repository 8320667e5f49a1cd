//! Simulation time base.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

/// Integer microseconds. All scheduling arithmetic happens on this type;
/// milliseconds only appear at file and API boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Micros(pub i64);

impl Micros {
    pub const ZERO: Micros = Micros(0);
    pub const MAX: Micros = Micros(i64::MAX);

    pub const fn from_millis(ms: i64) -> Self {
        Micros(ms * 1_000)
    }

    /// Rounds to the nearest microsecond.
    pub fn from_millis_f64(ms: f64) -> Self {
        Micros((ms * 1_000.0).round() as i64)
    }

    /// Rounds up, so an estimate converted this way is never smaller than
    /// the millisecond value it came from.
    pub fn from_millis_f64_ceil(ms: f64) -> Self {
        Micros((ms * 1_000.0 - 1e-6).ceil() as i64)
    }

    pub fn from_secs_f64(s: f64) -> Self {
        Micros((s * 1e6).round() as i64)
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_add(self, rhs: Micros) -> Micros {
        Micros(self.0.saturating_add(rhs.0))
    }
}

impl Add for Micros {
    type Output = Micros;
    fn add(self, rhs: Micros) -> Micros {
        Micros(self.0 + rhs.0)
    }
}

impl AddAssign for Micros {
    fn add_assign(&mut self, rhs: Micros) {
        self.0 += rhs.0;
    }
}

impl Sub for Micros {
    type Output = Micros;
    fn sub(self, rhs: Micros) -> Micros {
        Micros(self.0 - rhs.0)
    }
}

impl fmt::Display for Micros {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.as_millis_f64())
    }
}
