use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the noise rate ν(t) is specified.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleKind {
    /// ν(t) = nu, so σ²(t) = nu²·t, over t ∈ [0, t_max].
    Constant {
        nu: f64,
        #[serde(default = "default_t_max")]
        t_max: f64,
    },
    /// Variance exploding with geometric growth:
    /// σ²(t) = σ_min²·(r^{2t} − 1), r = σ_max/σ_min, over t ∈ [0, 1].
    Geometric { sigma_min: f64, sigma_max: f64 },
    /// ν²(τ) linearly interpolated between `(times[i], nu2[i])` nodes.
    Table { times: Vec<f64>, nu2: Vec<f64> },
}

fn default_t_max() -> f64 {
    1e6
}

/// The forward-process clock: ν(t) and the accumulated variance
/// σ²(t) = ∫₀ᵗ ν²(τ) dτ.
///
/// Time runs forward from 0 to `t_max`. Reverse-time integration walks the
/// same axis with decreasing `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleKind", into = "ScheduleKind")]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    t_max: f64,
    table_cumulative: Vec<f64>,
}

impl TryFrom<ScheduleKind> for NoiseSchedule {
    type Error = Error;

    fn try_from(kind: ScheduleKind) -> Result<Self> {
        NoiseSchedule::new(kind)
    }
}

impl From<NoiseSchedule> for ScheduleKind {
    fn from(s: NoiseSchedule) -> Self {
        s.kind
    }
}

impl Default for NoiseSchedule {
    /// ν ≡ 1, i.e. σ²(t) = t.
    fn default() -> Self {
        NoiseSchedule::constant(1.0, 1e6).expect("valid default schedule")
    }
}

impl NoiseSchedule {
    pub fn constant(nu: f64, t_max: f64) -> Result<Self> {
        Self::new(ScheduleKind::Constant { nu, t_max })
    }

    pub fn geometric(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        Self::new(ScheduleKind::Geometric {
            sigma_min,
            sigma_max,
        })
    }

    pub fn table(times: Vec<f64>, nu2: Vec<f64>) -> Result<Self> {
        Self::new(ScheduleKind::Table { times, nu2 })
    }

    /// Validates `kind` and builds the schedule. Geometric schedules run
    /// over [0, 1]; tables end at their last node.
    pub fn new(kind: ScheduleKind) -> Result<Self> {
        let mut table_cumulative = Vec::new();
        let t_max = match &kind {
            ScheduleKind::Constant { nu, t_max } => {
                if !(nu.is_finite() && *nu > 0.0) {
                    return Err(Error::invalid("schedule", "constant nu must be finite and > 0"));
                }
                *t_max
            }
            ScheduleKind::Geometric {
                sigma_min,
                sigma_max,
            } => {
                if !(sigma_min.is_finite() && *sigma_min > 0.0 && sigma_max.is_finite()) {
                    return Err(Error::invalid("schedule", "sigma_min must be finite and > 0"));
                }
                if sigma_max <= sigma_min {
                    return Err(Error::invalid("schedule", "sigma_max must exceed sigma_min"));
                }
                1.0
            }
            ScheduleKind::Table { times, nu2 } => {
                if times.len() < 2 || times.len() != nu2.len() {
                    return Err(Error::invalid(
                        "schedule",
                        "table needs >= 2 nodes and equal-length times/nu2",
                    ));
                }
                if times[0] != 0.0 {
                    return Err(Error::invalid("schedule", "table must start at t = 0"));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
                    return Err(Error::invalid("schedule", "table times must be strictly increasing"));
                }
                if nu2.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::invalid("schedule", "table nu2 values must be finite and >= 0"));
                }
                if nu2.windows(2).any(|w| w[0] == 0.0 && w[1] == 0.0) {
                    return Err(Error::invalid(
                        "schedule",
                        "nu2 vanishes on a whole segment; sigma2 would not be strictly increasing",
                    ));
                }
                table_cumulative.push(0.0);
                for i in 1..times.len() {
                    let seg = 0.5 * (nu2[i - 1] + nu2[i]) * (times[i] - times[i - 1]);
                    table_cumulative.push(table_cumulative[i - 1] + seg);
                }
                *times.last().unwrap()
            }
        };
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(Error::invalid("schedule", "t_max must be finite and > 0"));
        }
        Ok(NoiseSchedule {
            kind,
            t_max,
            table_cumulative,
        })
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.t_max).contains(&t) {
            return Err(Error::Domain {
                what: "t",
                value: t,
                domain: format!("[0, {}]", self.t_max),
            });
        }
        Ok(())
    }

    /// ν²(t).
    pub fn nu2(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(match &self.kind {
            ScheduleKind::Constant { nu, .. } => nu * nu,
            ScheduleKind::Geometric {
                sigma_min,
                sigma_max,
            } => {
                let log_r = (sigma_max / sigma_min).ln();
                2.0 * log_r * sigma_min * sigma_min * (2.0 * log_r * t).exp()
            }
            ScheduleKind::Table { times, nu2 } => {
                let i = segment(times, t);
                let frac = (t - times[i]) / (times[i + 1] - times[i]);
                nu2[i] + frac * (nu2[i + 1] - nu2[i])
            }
        })
    }

    pub fn nu(&self, t: f64) -> Result<f64> {
        Ok(self.nu2(t)?.sqrt())
    }

    /// σ²(t) = ∫₀ᵗ ν²(τ) dτ for t ∈ [0, t_max].
    pub fn sigma2(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(match &self.kind {
            ScheduleKind::Constant { nu, .. } => nu * nu * t,
            ScheduleKind::Geometric {
                sigma_min,
                sigma_max,
            } => {
                let log_r = (sigma_max / sigma_min).ln();
                sigma_min * sigma_min * (2.0 * log_r * t).exp_m1()
            }
            ScheduleKind::Table { times, nu2 } => {
                let i = segment(times, t);
                let dt = t - times[i];
                let slope = (nu2[i + 1] - nu2[i]) / (times[i + 1] - times[i]);
                self.table_cumulative[i] + nu2[i] * dt + 0.5 * slope * dt * dt
            }
        })
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        Ok(self.sigma2(t)?.sqrt())
    }

    pub fn sigma2_max(&self) -> f64 {
        self.sigma2(self.t_max).expect("t_max is in range")
    }

    /// Inverse of [`sigma2`](Self::sigma2): the time at which the accumulated
    /// variance equals `sigma2`.
    pub fn time_of(&self, sigma2: f64) -> Result<f64> {
        let top = self.sigma2_max();
        if !(0.0..=top).contains(&sigma2) {
            return Err(Error::Domain {
                what: "sigma2",
                value: sigma2,
                domain: format!("[0, {top}]"),
            });
        }
        Ok(match &self.kind {
            ScheduleKind::Constant { nu, .. } => (sigma2 / (nu * nu)).min(self.t_max),
            ScheduleKind::Geometric {
                sigma_min,
                sigma_max,
            } => {
                let log_r = (sigma_max / sigma_min).ln();
                ((sigma2 / (sigma_min * sigma_min)).ln_1p() / (2.0 * log_r)).min(self.t_max)
            }
            ScheduleKind::Table { times, nu2 } => {
                let cum = &self.table_cumulative;
                let i = match cum.partition_point(|&c| c <= sigma2) {
                    0 => 0,
                    p => (p - 1).min(times.len() - 2),
                };
                let rest = sigma2 - cum[i];
                let a = nu2[i];
                let b = (nu2[i + 1] - nu2[i]) / (times[i + 1] - times[i]);
                let disc = (a * a + 2.0 * b * rest).max(0.0);
                let denom = a + disc.sqrt();
                let dt = if denom > 0.0 { 2.0 * rest / denom } else { 0.0 };
                (times[i] + dt).min(self.t_max)
            }
        })
    }
}

fn segment(times: &[f64], t: f64) -> usize {
    let p = times.partition_point(|&x| x <= t);
    p.saturating_sub(1).min(times.len() - 2)
}
