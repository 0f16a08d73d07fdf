use eventgc_autodiff::normal_cdf;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::quantile;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Dyadic Gaussian basis on elapsed time: `μ_1 = 0`, `μ_r = L / 2^{R-r}`,
/// `σ_r = max(μ_r, μ_2) / 3`. With a single basis, `σ_1 = L / 3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisSpec", into = "BasisSpec")]
pub struct BasisFamily {
    length: f64,
    means: Vec<f64>,
    stds: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BasisSpec {
    num_bases: usize,
    length: f64,
}

impl TryFrom<BasisSpec> for BasisFamily {
    type Error = Error;
    fn try_from(s: BasisSpec) -> Result<Self> {
        BasisFamily::new(s.num_bases, s.length)
    }
}

impl From<BasisFamily> for BasisSpec {
    fn from(b: BasisFamily) -> Self {
        BasisSpec { num_bases: b.len(), length: b.length }
    }
}

impl BasisFamily {
    pub fn new(num_bases: usize, length: f64) -> Result<Self> {
        if num_bases == 0 {
            return Err(Error::Config("basis needs at least one function".into()));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::Config(format!("basis length must be positive, got {length}")));
        }
        let r = num_bases;
        let means: Vec<f64> = (1..=r)
            .map(|i| if i == 1 { 0.0 } else { length / 2f64.powi((r - i) as i32) })
            .collect();
        let floor = if r == 1 { length } else { means[1] };
        let stds = means.iter().map(|&m| m.max(floor) / 3.0).collect();
        Ok(BasisFamily { length, means, stds })
    }

    /// Sizes the family from inter-event gaps: `L` is the 99th percentile
    /// and `R = 2 + round(log2(p99 / p50))`, so `μ_2` lands within a factor
    /// √2 of the median gap.
    pub fn from_gaps(gaps: &[f64]) -> Result<Self> {
        let positive: Vec<f64> = gaps.iter().copied().filter(|&g| g > 0.0).collect();
        if positive.is_empty() {
            return Err(Error::Precondition("no positive inter-event gaps to size the basis".into()));
        }
        let p50 = quantile(&positive, 0.5);
        let p99 = quantile(&positive, 0.99);
        let r = 2 + (p99 / p50).log2().round().max(0.0) as usize;
        BasisFamily::new(r, p99)
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    /// `ψ_r(dt)`, the Gaussian density.
    pub fn density(&self, r: usize, dt: f64) -> Result<f64> {
        check_dt(dt)?;
        Ok(self.log_density_unchecked(r, dt).exp())
    }

    pub(crate) fn log_density_unchecked(&self, r: usize, dt: f64) -> f64 {
        let z = (dt - self.means[r]) / self.stds[r];
        -0.5 * z * z - self.stds[r].ln() - LN_SQRT_2PI
    }

    /// `Ψ_r(dt) = Φ((dt − μ_r)/σ_r) − Φ(−μ_r/σ_r)`.
    pub fn integral(&self, r: usize, dt: f64) -> Result<f64> {
        check_dt(dt)?;
        Ok(self.integral_unchecked(r, dt))
    }

    pub(crate) fn integral_unchecked(&self, r: usize, dt: f64) -> f64 {
        let (m, s) = (self.means[r], self.stds[r]);
        normal_cdf((dt - m) / s) - normal_cdf(-m / s)
    }

    /// `−½ log(2π) − log σ_r` for every basis.
    pub(crate) fn log_norms(&self) -> Vec<f64> {
        self.stds.iter().map(|s| -s.ln() - LN_SQRT_2PI).collect()
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt >= 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("elapsed time must be finite and nonnegative, got {dt}")))
    }
}
