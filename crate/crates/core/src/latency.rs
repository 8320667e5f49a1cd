//! Offline latency profile and slack-time estimation.
//!
//! The profile records the mean and standard deviation of batch execution
//! time per batch size (number of canvases). The slack time for a batch is
//! the conservative estimate `mu + 3 * sigma`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub batch_size: u32,
    pub mu_ms: f64,
    pub sigma_ms: f64,
}

impl ProfileEntry {
    pub fn slack_ms(&self) -> f64 {
        self.mu_ms + 3.0 * self.sigma_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyProfile {
    pub canvas_width: u32,
    pub canvas_height: u32,
    entries: Vec<ProfileEntry>,
}

impl LatencyProfile {
    /// Sorts entries by batch size and validates them. A mean that decreases
    /// with batch size is logged but accepted.
    pub fn new(canvas_width: u32, canvas_height: u32, mut entries: Vec<ProfileEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidProfile("no entries".into()));
        }
        entries.sort_by_key(|e| e.batch_size);
        for e in &entries {
            if e.batch_size == 0 {
                return Err(Error::InvalidProfile("batch size 0".into()));
            }
            if !(e.mu_ms > 0.0) || !(e.sigma_ms >= 0.0) || !e.mu_ms.is_finite() || !e.sigma_ms.is_finite() {
                return Err(Error::InvalidProfile(format!(
                    "k={}: need mu > 0 and sigma >= 0, got mu={} sigma={}",
                    e.batch_size, e.mu_ms, e.sigma_ms
                )));
            }
        }
        for pair in entries.windows(2) {
            if pair[0].batch_size == pair[1].batch_size {
                return Err(Error::InvalidProfile(format!("duplicate batch size {}", pair[0].batch_size)));
            }
            if pair[1].mu_ms < pair[0].mu_ms {
                log::warn!(
                    "latency profile mean decreases from k={} ({} ms) to k={} ({} ms)",
                    pair[0].batch_size,
                    pair[0].mu_ms,
                    pair[1].batch_size,
                    pair[1].mu_ms
                );
            }
        }
        Ok(LatencyProfile { canvas_width, canvas_height, entries })
    }

    pub fn entries(&self) -> &[ProfileEntry] {
        &self.entries
    }

    pub fn max_profiled_batch(&self) -> u32 {
        self.entries.last().map_or(0, |e| e.batch_size)
    }

    /// Conservative execution estimate for a batch of `k` canvases, in ms.
    pub fn slack_time(&self, k: u32) -> Result<f64> {
        if k < 1 {
            return Err(Error::InvalidBatchSize(k));
        }
        Ok(self.interpolate(k, ProfileEntry::slack_ms))
    }

    /// [`Self::slack_time`] rounded up to whole microseconds.
    pub fn slack(&self, k: u32) -> Result<Micros> {
        self.slack_time(k).map(Micros::from_millis_f64_ceil)
    }

    /// Mean and standard deviation at `k`, interpolated the same way as the
    /// slack. Used by the execution sampler.
    pub fn moments(&self, k: u32) -> Result<(f64, f64)> {
        if k < 1 {
            return Err(Error::InvalidBatchSize(k));
        }
        let mu = self.interpolate(k, |e| e.mu_ms);
        let sigma = self.interpolate(k, |e| e.sigma_ms).max(0.0);
        Ok((mu, sigma))
    }

    /// Piecewise-linear in k: exact on profiled sizes, interpolated between
    /// neighbours, extrapolated from the last two entries past the largest,
    /// and held at the first entry's value below the smallest.
    fn interpolate(&self, k: u32, value: impl Fn(&ProfileEntry) -> f64) -> f64 {
        let e = &self.entries;
        match e.binary_search_by_key(&k, |x| x.batch_size) {
            Ok(i) => value(&e[i]),
            Err(0) => value(&e[0]),
            Err(i) if i < e.len() => lerp(&e[i - 1], &e[i], k, &value),
            Err(_) if e.len() == 1 => value(&e[0]),
            Err(_) => lerp(&e[e.len() - 2], &e[e.len() - 1], k, &value),
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# canvas={}x{}", self.canvas_width, self.canvas_height)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "mu_ms", "sigma_ms"])?;
        for e in &self.entries {
            w.write_record([e.batch_size.to_string(), e.mu_ms.to_string(), e.sigma_ms.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self> {
        let mut first = String::new();
        input.read_line(&mut first)?;
        let (cw, ch) = parse_canvas_comment(first.trim())?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["k", "mu_ms", "sigma_ms"] {
            return Err(Error::InvalidProfile(format!("unexpected header {headers:?}")));
        }
        let mut entries = Vec::new();
        for row in rdr.deserialize::<(u32, f64, f64)>() {
            let (batch_size, mu_ms, sigma_ms) = row?;
            entries.push(ProfileEntry { batch_size, mu_ms, sigma_ms });
        }
        LatencyProfile::new(cw, ch, entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn lerp(a: &ProfileEntry, b: &ProfileEntry, k: u32, value: &impl Fn(&ProfileEntry) -> f64) -> f64 {
    let (va, vb) = (value(a), value(b));
    let t = (k as f64 - a.batch_size as f64) / (b.batch_size as f64 - a.batch_size as f64);
    va + t * (vb - va)
}

fn parse_canvas_comment(line: &str) -> Result<(u32, u32)> {
    let bad = || Error::InvalidProfile(format!("expected '# canvas=MxN', got {line:?}"));
    let spec = line.strip_prefix('#').map(str::trim).and_then(|s| s.strip_prefix("canvas=")).ok_or_else(bad)?;
    let (w, h) = spec.split_once('x').ok_or_else(bad)?;
    Ok((w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?))
}

/// Builds a profile from raw execution-time samples per batch size, using
/// the sample mean and the population standard deviation.
pub fn profile_from_samples(
    canvas_width: u32,
    canvas_height: u32,
    samples: &BTreeMap<u32, Vec<f64>>,
) -> Result<LatencyProfile> {
    let mut entries = Vec::with_capacity(samples.len());
    for (&k, xs) in samples {
        if xs.is_empty() {
            return Err(Error::EmptySamples(k));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        entries.push(ProfileEntry { batch_size: k, mu_ms: mean, sigma_ms: var.sqrt() });
    }
    LatencyProfile::new(canvas_width, canvas_height, entries)
}

/// A synthetic ground-truth latency law, linear in batch size:
/// `mu(k) = mu_base + mu_per_canvas * k`, `sigma(k) = sigma_base + sigma_per_canvas * k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyLaw {
    pub mu_base_ms: f64,
    pub mu_per_canvas_ms: f64,
    pub sigma_base_ms: f64,
    pub sigma_per_canvas_ms: f64,
}

impl Default for LatencyLaw {
    fn default() -> Self {
        LatencyLaw { mu_base_ms: 45.0, mu_per_canvas_ms: 35.0, sigma_base_ms: 3.0, sigma_per_canvas_ms: 1.5 }
    }
}

impl LatencyLaw {
    pub fn moments(&self, k: u32) -> (f64, f64) {
        (self.mu_base_ms + self.mu_per_canvas_ms * k as f64, self.sigma_base_ms + self.sigma_per_canvas_ms * k as f64)
    }

    /// The exact profile for this law over batch sizes `1..=max_k`.
    pub fn exact_profile(&self, canvas_width: u32, canvas_height: u32, max_k: u32) -> Result<LatencyProfile> {
        let entries = (1..=max_k)
            .map(|k| {
                let (mu_ms, sigma_ms) = self.moments(k);
                ProfileEntry { batch_size: k, mu_ms, sigma_ms }
            })
            .collect();
        LatencyProfile::new(canvas_width, canvas_height, entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(k: u32, mu: f64, sigma: f64) -> ProfileEntry {
        ProfileEntry { batch_size: k, mu_ms: mu, sigma_ms: sigma }
    }

    #[test]
    fn slack_examples() {
        let p = LatencyProfile::new(1024, 1024, vec![entry(1, 100.0, 0.0)]).unwrap();
        assert_eq!(p.slack_time(1).unwrap(), 100.0);
        let p = LatencyProfile::new(1024, 1024, vec![entry(1, 100.0, 10.0)]).unwrap();
        assert_eq!(p.slack_time(1).unwrap(), 130.0);
        let p = LatencyProfile::new(1024, 1024, vec![entry(2, 120.0, 8.0), entry(4, 200.0, 12.0)]).unwrap();
        assert_eq!(p.slack_time(2).unwrap(), 144.0);
        assert_eq!(p.slack_time(4).unwrap(), 236.0);
        assert_eq!(p.slack_time(3).unwrap(), 190.0);
    }

    #[test]
    fn slack_extrapolation_and_below_range() {
        let p = LatencyProfile::new(64, 64, vec![entry(2, 120.0, 8.0), entry(4, 200.0, 12.0)]).unwrap();
        // slope (236 - 144) / 2 = 46 per canvas
        assert_eq!(p.slack_time(6).unwrap(), 328.0);
        assert_eq!(p.slack_time(1).unwrap(), 144.0);
        let single = LatencyProfile::new(64, 64, vec![entry(1, 100.0, 10.0)]).unwrap();
        assert_eq!(single.slack_time(5).unwrap(), 130.0);
    }

    #[test]
    fn invalid_batch_size() {
        let p = LatencyProfile::new(64, 64, vec![entry(1, 100.0, 10.0)]).unwrap();
        assert_eq!(p.slack_time(0).unwrap_err().to_string(), "invalid batch size 0");
    }

    #[test]
    fn profile_validation() {
        assert!(LatencyProfile::new(64, 64, vec![]).is_err());
        assert!(LatencyProfile::new(64, 64, vec![entry(1, 0.0, 1.0)]).is_err());
        assert!(LatencyProfile::new(64, 64, vec![entry(1, 10.0, -1.0)]).is_err());
        assert!(LatencyProfile::new(64, 64, vec![entry(1, 10.0, 1.0), entry(1, 12.0, 1.0)]).is_err());
        // decreasing mean only warns
        assert!(LatencyProfile::new(64, 64, vec![entry(1, 10.0, 1.0), entry(2, 9.0, 1.0)]).is_ok());
    }

    #[test]
    fn from_samples_examples() {
        let mut s = BTreeMap::new();
        s.insert(1, vec![100.0, 100.0, 100.0]);
        let p = profile_from_samples(64, 64, &s).unwrap();
        assert_eq!(p.entries()[0], entry(1, 100.0, 0.0));

        let mut s = BTreeMap::new();
        s.insert(1, vec![90.0, 110.0]);
        s.insert(2, vec![200.0]);
        let p = profile_from_samples(64, 64, &s).unwrap();
        assert_eq!(p.entries()[0], entry(1, 100.0, 10.0));
        assert_eq!(p.entries()[1], entry(2, 200.0, 0.0));

        let mut s = BTreeMap::new();
        s.insert(3, vec![]);
        assert_eq!(profile_from_samples(64, 64, &s).unwrap_err().to_string(), "empty sample list for batch size 3");
    }

    #[test]
    fn csv_round_trip() {
        let p = LatencyProfile::new(1024, 768, vec![entry(1, 80.0, 4.5), entry(2, 115.25, 6.0)]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# canvas=1024x768\nk,mu_ms,sigma_ms\n1,80,4.5\n"));
        let back = LatencyProfile::read_csv(&buf[..]).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn csv_rejects_missing_canvas_comment() {
        let text = "k,mu_ms,sigma_ms\n1,80,4\n";
        assert!(LatencyProfile::read_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn slack_at_least_mean_and_monotone_for_law() {
        let p = LatencyLaw::default().exact_profile(1024, 1024, 8).unwrap();
        let mut prev = 0.0;
        for k in 1..=12 {
            let s = p.slack_time(k).unwrap();
            let (mu, _) = p.moments(k).unwrap();
            assert!(s >= mu);
            assert!(s >= prev);
            prev = s;
        }
    }
}
