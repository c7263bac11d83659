use std::io::{self, Write};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Uplink shaping: a bandwidth cap (0 = unlimited) and a fixed latency added
/// once per transmission.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkEmulation {
    pub bandwidth_bytes_per_s: f64,
    pub added_latency_ms: f64,
}

impl LinkEmulation {
    pub const PASSTHROUGH: LinkEmulation = LinkEmulation { bandwidth_bytes_per_s: 0.0, added_latency_ms: 0.0 };

    pub fn new(bandwidth_bytes_per_s: f64, added_latency_ms: f64) -> Result<Self, String> {
        for (name, v) in [("bandwidth", bandwidth_bytes_per_s), ("latency", added_latency_ms)] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(Self { bandwidth_bytes_per_s, added_latency_ms })
    }

    pub fn is_passthrough(&self) -> bool {
        self.bandwidth_bytes_per_s == 0.0 && self.added_latency_ms == 0.0
    }

    /// Lower bound on the time to push `bytes` through this link.
    pub fn analytic_ms(&self, bytes: usize) -> f64 {
        let serial = if self.bandwidth_bytes_per_s > 0.0 { bytes as f64 / self.bandwidth_bytes_per_s * 1e3 } else { 0.0 };
        serial + self.added_latency_ms
    }

    fn chunk_size(&self) -> usize {
        if self.bandwidth_bytes_per_s <= 0.0 {
            return usize::MAX;
        }
        // About 5 ms of traffic per write.
        ((self.bandwidth_bytes_per_s * 0.005) as usize).clamp(512, 64 * 1024)
    }
}

/// A writer whose `transmit` calls are delayed and paced per [`LinkEmulation`].
#[derive(Debug)]
pub struct ShapedChannel<W> {
    inner: W,
    link: LinkEmulation,
}

pub fn emulate_link<W: Write>(raw: W, link: LinkEmulation) -> ShapedChannel<W> {
    ShapedChannel { inner: raw, link }
}

fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        thread::sleep(deadline - now);
    }
}

impl<W: Write> ShapedChannel<W> {
    pub fn link(&self) -> LinkEmulation {
        self.link
    }

    pub fn get_ref(&self) -> &W {
        &self.inner
    }

    pub fn get_mut(&mut self) -> &mut W {
        &mut self.inner
    }

    pub fn into_inner(self) -> W {
        self.inner
    }

    /// Sends one message: waits the added latency, then writes in chunks so
    /// that cumulative throughput never exceeds the bandwidth. Returns the
    /// elapsed time.
    pub fn transmit(&mut self, data: &[u8]) -> io::Result<Duration> {
        let start = Instant::now();
        if self.link.is_passthrough() {
            self.inner.write_all(data)?;
            self.inner.flush()?;
            return Ok(start.elapsed());
        }
        let begin = start + Duration::from_secs_f64(self.link.added_latency_ms / 1e3);
        sleep_until(begin);
        let mut sent = 0usize;
        for chunk in data.chunks(self.link.chunk_size()) {
            self.inner.write_all(chunk)?;
            sent += chunk.len();
            if self.link.bandwidth_bytes_per_s > 0.0 {
                sleep_until(begin + Duration::from_secs_f64(sent as f64 / self.link.bandwidth_bytes_per_s));
            }
        }
        self.inner.flush()?;
        Ok(start.elapsed())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passthrough_is_identity() {
        let mut ch = emulate_link(Vec::new(), LinkEmulation::PASSTHROUGH);
        let data: Vec<u8> = (0..=255).collect();
        let d = ch.transmit(&data).unwrap();
        assert_eq!(ch.into_inner(), data);
        assert!(d < Duration::from_millis(50));
    }

    #[test]
    fn thousand_bytes_at_thousand_per_second() {
        let mut ch = emulate_link(Vec::new(), LinkEmulation::new(1000.0, 0.0).unwrap());
        let d = ch.transmit(&[7u8; 1000]).unwrap();
        assert!(d >= Duration::from_secs(1), "{d:?}");
        assert_eq!(ch.into_inner().len(), 1000);
    }

    #[test]
    fn latency_applied_once_per_transmission() {
        let mut ch = emulate_link(Vec::new(), LinkEmulation::new(0.0, 20.0).unwrap());
        let a = ch.transmit(b"abc").unwrap();
        let b = ch.transmit(b"def").unwrap();
        for d in [a, b] {
            assert!(d >= Duration::from_millis(20) && d < Duration::from_millis(200), "{d:?}");
        }
        assert_eq!(ch.into_inner(), b"abcdef");
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(LinkEmulation::new(-1.0, 0.0).is_err());
        assert!(LinkEmulation::new(1.0, f64::NAN).is_err());
        assert!(LinkEmulation::new(0.0, 0.0).unwrap().is_passthrough());
    }
}
