//! Bandwidth-constrained uplink.

use serde::{Deserialize, Serialize};

use crate::partition::PatchMeta;
use crate::time::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkModel {
    /// Megabits per second. `f64::INFINITY` models an instant link.
    pub bandwidth_mbps: f64,
    /// Encoded bytes per source pixel.
    pub bytes_per_pixel: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel { bandwidth_mbps: 80.0, bytes_per_pixel: 0.25 }
    }
}

impl LinkModel {
    pub fn instant(bytes_per_pixel: f64) -> Self {
        LinkModel { bandwidth_mbps: f64::INFINITY, bytes_per_pixel }
    }

    /// Serialisation delay of `bytes`, rounded up to whole microseconds.
    pub fn transmit_time(&self, bytes: u64) -> Micros {
        if self.bandwidth_mbps.is_infinite() || bytes == 0 {
            return Micros::ZERO;
        }
        // bits / (Mbit/s) = microseconds
        Micros((bytes as f64 * 8.0 / self.bandwidth_mbps - 1e-9).ceil() as i64)
    }
}

/// Arrival time of each patch over a single FIFO link, in the given order.
pub fn transmission_schedule(patches: &[PatchMeta], link: &LinkModel) -> Vec<Micros> {
    let mut free = Micros(i64::MIN);
    patches
        .iter()
        .map(|p| {
            let start = p.generation_time.max(free);
            let done = start + link.transmit_time(p.size_bytes);
            free = done;
            done
        })
        .collect()
}
