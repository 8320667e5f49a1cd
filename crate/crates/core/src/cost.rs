//! Pay-per-use serverless cost model.
//!
//! An invocation is billed as
//! `t_f * (vcpus * p_cpu + memory * p_mem + gpu_memory * p_gpu) + p_req`.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stitch::CanvasSpec;
use crate::time::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunctionConfig {
    pub vcpus: f64,
    pub memory_gb: f64,
    pub gpu_memory_gb: f64,
    pub model_size_gb: f64,
    pub concurrency: u32,
}

impl Default for FunctionConfig {
    fn default() -> Self {
        FunctionConfig { vcpus: 2.0, memory_gb: 4.0, gpu_memory_gb: 6.0, model_size_gb: 2.0, concurrency: 1 }
    }
}

impl FunctionConfig {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [self.vcpus, self.memory_gb, self.gpu_memory_gb, self.model_size_gb]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !all_positive || self.concurrency == 0 {
            return Err(Error::InvalidConfig("function resources must be positive".into()));
        }
        if self.model_size_gb >= self.gpu_memory_gb {
            return Err(Error::InvalidConfig(format!(
                "model size {} GB must be below gpu memory {} GB",
                self.model_size_gb, self.gpu_memory_gb
            )));
        }
        Ok(())
    }
}

/// Unit prices in dollars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingTable {
    /// Per vCPU-second.
    pub p_cpu: f64,
    /// Per GB-second of memory.
    pub p_mem: f64,
    /// Per GB-second of GPU memory.
    pub p_gpu: f64,
    /// Per invocation.
    pub p_req: f64,
}

impl Default for PricingTable {
    fn default() -> Self {
        PricingTable { p_cpu: 2.138e-5, p_mem: 2.138e-5, p_gpu: 1.05e-4, p_req: 2e-7 }
    }
}

impl PricingTable {
    pub fn validate(&self) -> Result<()> {
        if [self.p_cpu, self.p_mem, self.p_gpu, self.p_req].iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidConfig("prices must be non-negative".into()));
        }
        Ok(())
    }
}

/// Cost in dollars of one invocation running for `t_f_secs`.
pub fn invocation_cost(t_f_secs: f64, cfg: &FunctionConfig, prices: &PricingTable) -> Result<f64> {
    if t_f_secs < 0.0 || t_f_secs.is_nan() {
        return Err(Error::NegativeExecutionTime(t_f_secs));
    }
    let rate = cfg.vcpus * prices.p_cpu + cfg.memory_gb * prices.p_mem + cfg.gpu_memory_gb * prices.p_gpu;
    Ok(t_f_secs * rate + prices.p_req)
}

/// Largest batch (in canvases) that fits next to the model in GPU memory.
pub fn max_canvases_per_batch(cfg: &FunctionConfig, spec: &CanvasSpec) -> Result<u32> {
    let w = spec.vram_per_canvas_gb;
    if !(w > 0.0) {
        return Err(Error::InvalidConfig("vram per canvas must be positive".into()));
    }
    let n = ((cfg.gpu_memory_gb - cfg.model_size_gb) / w + 1e-9).floor();
    if n < 1.0 {
        return Err(Error::CannotFitCanvas {
            gpu_memory_gb: cfg.gpu_memory_gb,
            model_size_gb: cfg.model_size_gb,
            vram_per_canvas_gb: w,
        });
    }
    Ok(n.min(u32::MAX as f64) as u32)
}

/// Bills execution times under a fixed configuration, optionally rounding
/// the execution time up to a billing granularity first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Billing {
    pub function: FunctionConfig,
    pub prices: PricingTable,
    pub granularity: Option<Micros>,
}

impl Billing {
    pub fn new(function: FunctionConfig, prices: PricingTable) -> Self {
        Billing { function, prices, granularity: None }
    }

    pub fn billed_time(&self, t_f: Micros) -> Micros {
        match self.granularity {
            Some(g) if g.0 > 0 => Micros((t_f.0 + g.0 - 1).div_euclid(g.0) * g.0),
            _ => t_f,
        }
    }

    pub fn bill(&self, t_f: Micros) -> Result<Money> {
        let t = self.billed_time(t_f).as_secs_f64();
        invocation_cost(t, &self.function, &self.prices).map(Money::from_dollars)
    }
}

/// Exact money amount in femto-dollars (1e-15 $).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Money(pub i128);

impl Money {
    pub const ZERO: Money = Money(0);
    const SCALE: i128 = 1_000_000_000_000_000;

    pub fn from_dollars(d: f64) -> Money {
        Money((d * Self::SCALE as f64).round() as i128)
    }

    pub fn as_dollars(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

/// Exact decimal dollars, trailing zeros trimmed.
impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let v = self.0.unsigned_abs();
        let scale = Self::SCALE as u128;
        let frac = format!("{:015}", v % scale);
        let frac = frac.trim_end_matches('0');
        if frac.is_empty() {
            write!(f, "{sign}{}", v / scale)
        } else {
            write!(f, "{sign}{}.{frac}", v / scale)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_duration_costs_request_fee() {
        let c = invocation_cost(0.0, &FunctionConfig::default(), &PricingTable::default()).unwrap();
        assert_eq!(c, 2e-7);
    }

    #[test]
    fn worked_examples() {
        let cfg = FunctionConfig::default();
        let prices = PricingTable::default();
        let one = invocation_cost(1.0, &cfg, &prices).unwrap();
        assert!((one - 7.5848e-4).abs() <= 1e-12 * 7.5848e-4);
        assert_eq!(Money::from_dollars(one), Money::from_dollars(7.5848e-4));
        assert_eq!(Money::from_dollars(one).to_string(), "0.00075848");
        let half = invocation_cost(0.5, &cfg, &prices).unwrap();
        assert_eq!(Money::from_dollars(half).to_string(), "0.00037934");
    }

    #[test]
    fn negative_time_is_error() {
        assert!(invocation_cost(-0.1, &FunctionConfig::default(), &PricingTable::default()).is_err());
    }

    #[test]
    fn canvas_cap() {
        let cfg = FunctionConfig { model_size_gb: 2.0, gpu_memory_gb: 6.0, ..Default::default() };
        assert_eq!(max_canvases_per_batch(&cfg, &CanvasSpec::new(64, 64, 1.0)).unwrap(), 4);
        assert_eq!(max_canvases_per_batch(&cfg, &CanvasSpec::new(64, 64, 0.5)).unwrap(), 8);
        let tight = FunctionConfig { model_size_gb: 5.5, ..cfg };
        let err = max_canvases_per_batch(&tight, &CanvasSpec::new(64, 64, 1.0)).unwrap_err();
        assert!(err.to_string().starts_with("cannot fit one canvas"));
        // 0.3 / 0.1 is 2.9999999999999996 in floating point
        let near = FunctionConfig { model_size_gb: 5.7, ..cfg };
        assert_eq!(max_canvases_per_batch(&near, &CanvasSpec::new(64, 64, 0.1)).unwrap(), 3);
    }

    #[test]
    fn billing_granularity_rounds_up() {
        let mut b = Billing::new(FunctionConfig::default(), PricingTable::default());
        assert_eq!(b.billed_time(Micros(1_234)), Micros(1_234));
        b.granularity = Some(Micros(1_000_000));
        assert_eq!(b.billed_time(Micros(1_234)), Micros(1_000_000));
        assert_eq!(b.billed_time(Micros(1_000_000)), Micros(1_000_000));
        assert_eq!(b.billed_time(Micros::ZERO), Micros::ZERO);
        assert_eq!(b.bill(Micros(1)).unwrap(), Money::from_dollars(7.5848e-4));
    }

    #[test]
    fn money_display() {
        assert_eq!(Money::ZERO.to_string(), "0");
        assert_eq!(Money(1).to_string(), "0.000000000000001");
        assert_eq!(Money(3_500_000_000_000_000).to_string(), "3.5");
        assert_eq!(Money(-2_000_000_000_000_000).to_string(), "-2");
    }

    #[test]
    fn cost_monotone_in_resources() {
        let p = PricingTable::default();
        let base = FunctionConfig::default();
        let c0 = invocation_cost(0.3, &base, &p).unwrap();
        for bump in [
            FunctionConfig { vcpus: 3.0, ..base },
            FunctionConfig { memory_gb: 5.0, ..base },
            FunctionConfig { gpu_memory_gb: 7.0, ..base },
        ] {
            assert!(invocation_cost(0.3, &bump, &p).unwrap() > c0);
        }
    }
}
