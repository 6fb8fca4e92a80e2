use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    /// `ᾱ_t = 1 − t / steps`
    Linear,
    /// Nichol & Dhariwal cosine `ᾱ`, offset 0.008.
    Cosine,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            _ => Err(Error::invalid(format!("unknown schedule {s:?}"))),
        }
    }
}

/// Variance-preserving coefficients `α_t = √ᾱ_t`, `β_t = √(1 − ᾱ_t)` and a fixed step `t*`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    alphas: Vec<f64>,
    betas: Vec<f64>,
    t_star: usize,
}

impl DiffusionSchedule {
    pub fn new(kind: ScheduleKind, steps: usize, t_star: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid("schedule needs at least 2 steps"));
        }
        let abar: Vec<f64> = match kind {
            ScheduleKind::Linear => (0..steps).map(|t| 1.0 - t as f64 / steps as f64).collect(),
            ScheduleKind::Cosine => {
                let s = 0.008;
                let f = |t: f64| (((t / steps as f64) + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
                let f0 = f(0.0);
                (0..steps).map(|t| (f(t as f64) / f0).clamp(1e-6, 1.0)).collect()
            }
        };
        let alphas = abar.iter().map(|a| a.sqrt()).collect();
        let betas = abar.iter().map(|a| (1.0 - a).max(0.0).sqrt()).collect();
        Self::from_parts(alphas, betas, t_star)
    }

    /// The default: linear over 1000 steps with `t* = 190`, where `α² = 0.81`.
    pub fn linear_default() -> Self {
        Self::new(ScheduleKind::Linear, 1000, 190).expect("valid default schedule")
    }

    pub fn from_parts(alphas: Vec<f64>, betas: Vec<f64>, t_star: usize) -> Result<Self> {
        if alphas.len() != betas.len() || alphas.is_empty() {
            return Err(Error::invalid("alphas and betas must be non-empty and equally long"));
        }
        for (t, (a, b)) in alphas.iter().zip(&betas).enumerate() {
            if !(a.is_finite() && b.is_finite()) || (a * a + b * b - 1.0).abs() > 1e-9 || *a < 0.0 || *b < 0.0 {
                return Err(Error::invalid(format!("step {t}: alpha² + beta² != 1")));
            }
        }
        if alphas.windows(2).any(|p| p[1] > p[0]) {
            return Err(Error::invalid("alphas must be non-increasing"));
        }
        if t_star >= alphas.len() || alphas[t_star] <= 0.0 {
            return Err(Error::invalid(format!("t* = {t_star} out of range or alpha(t*) = 0")));
        }
        Ok(DiffusionSchedule { alphas, betas, t_star })
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn t_star(&self) -> usize {
        self.t_star
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }
}
