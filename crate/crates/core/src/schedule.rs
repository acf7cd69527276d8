//! Noise schedules. Timesteps are 1-based: `alpha(t)` for `t in 1..=T`, and
//! `alpha_bar(0) = 1` so that one-step-back lookups never special-case `t = 1`.

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
        }
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(invalid(format!("unknown schedule kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Offset of the cosine schedule, as in improved DDPM.
const COSINE_OFFSET: f64 = 0.008;

pub fn make_schedule(
    kind: ScheduleKind,
    steps: usize,
    beta_min: f64,
    beta_max: f64,
) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(invalid("schedule needs at least one timestep"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(invalid(format!(
            "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => (0..steps)
            .map(|k| {
                if steps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * k as f64 / (steps - 1) as f64
                }
            })
            .collect(),
        ScheduleKind::Cosine => {
            let f = |t: usize| {
                let u = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                (u * std::f64::consts::FRAC_PI_2).cos().powi(2)
            };
            (1..=steps)
                .map(|t| (1.0 - f(t) / f(t - 1)).clamp(beta_min, beta_max))
                .collect()
        }
    };
    NoiseSchedule::from_alphas(kind, betas.iter().map(|b| 1.0 - b).collect())
}

impl NoiseSchedule {
    pub fn from_alphas(kind: ScheduleKind, alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(invalid("schedule needs at least one timestep"));
        }
        let mut alpha_bars = Vec::with_capacity(alphas.len() + 1);
        alpha_bars.push(1.0);
        for (k, &a) in alphas.iter().enumerate() {
            if !(a > 0.0 && a < 1.0) {
                return Err(invalid(format!(
                    "alpha at t = {} must lie in (0, 1), got {a}",
                    k + 1
                )));
            }
            let prev = alpha_bars[k];
            alpha_bars.push(prev * a);
        }
        Ok(Self {
            kind,
            alphas,
            alpha_bars,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of timesteps `T`.
    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    pub fn alpha(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.steps(), "timestep {t} out of range");
        self.alphas[t - 1]
    }

    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alpha(t)
    }

    /// Cumulative product of the alphas up to `t`; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `alpha_bar(1..=T)`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars[1..]
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t >= 1 && t <= self.steps() {
            Ok(())
        } else {
            Err(Error::TimestepOutOfRange {
                t,
                min: 1,
                max: self.steps(),
            })
        }
    }
}
