use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Self-paced weights `p_i = clamp(1 - L_i / lambda, 0, 1)`, the minimiser
/// of `p L + lambda (p^2 / 2 - p)` over `p` in [0, 1].
pub fn caa_weights(losses: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!("curriculum parameter {lambda} must be positive")));
    }
    losses
        .iter()
        .map(|&l| {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::Parameter(format!("loss {l} must be finite and non-negative")));
            }
            Ok((1.0 - l / lambda).clamp(0.0, 1.0))
        })
        .collect()
}

fn mean_weight(losses: &[f64], lambda: f64) -> f64 {
    losses.iter().map(|&l| (1.0 - l / lambda).clamp(0.0, 1.0)).sum::<f64>() / losses.len() as f64
}

/// How per-sample weights are produced within a curriculum stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Finite(f64),
    /// Final stage: every weight is 1.
    AllOnes,
}

impl Lambda {
    pub fn weights(&self, losses: &[f64]) -> Result<Vec<f64>> {
        match self {
            Lambda::Finite(l) => caa_weights(losses, *l),
            Lambda::AllOnes => Ok(vec![1.0; losses.len()]),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Lambda::Finite(l) => Some(*l),
            Lambda::AllOnes => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSolution {
    pub lambda: Lambda,
    /// Set when every loss is zero: any lambda gives unit weights.
    pub degenerate: bool,
}

const BISECTION_STEPS: usize = 200;
const PROPORTION_TOL: f64 = 1e-9;

/// Finds lambda whose mean weight over `losses` equals `beta`.
///
/// The mean weight is continuous and non-decreasing in lambda, so a
/// geometric bisection over `(max L * 1e-6, max L * 1e6]` converges.
pub fn solve_lambda(losses: &[f64], beta: f64) -> Result<LambdaSolution> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Parameter(format!("curriculum proportion {beta} outside (0, 1]")));
    }
    if losses.is_empty() {
        return Err(Error::Parameter("no losses to calibrate against".into()));
    }
    if losses.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::Parameter("losses must be finite and non-negative".into()));
    }
    if beta >= 1.0 {
        return Ok(LambdaSolution {
            lambda: Lambda::AllOnes,
            degenerate: false,
        });
    }
    let max_loss = losses.iter().copied().fold(0.0, f64::max);
    if max_loss == 0.0 {
        return Ok(LambdaSolution {
            lambda: Lambda::Finite(1.0),
            degenerate: true,
        });
    }
    let mut lo = max_loss * 1e-6;
    let mut hi = max_loss * 1e6;
    if mean_weight(losses, lo) >= beta {
        return Ok(LambdaSolution {
            lambda: Lambda::Finite(lo),
            degenerate: false,
        });
    }
    for _ in 0..BISECTION_STEPS {
        let mid = (lo * hi).sqrt();
        let m = mean_weight(losses, mid);
        if (m - beta).abs() <= PROPORTION_TOL {
            hi = mid;
            break;
        }
        if m < beta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(LambdaSolution {
        lambda: Lambda::Finite(hi),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumStage {
    pub beta: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumSchedule {
    pub betas: Vec<f64>,
    pub epochs: Vec<usize>,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self {
            betas: vec![0.5, 0.8, 1.0],
            epochs: vec![2000, 2000, 3000],
        }
    }
}

impl CurriculumSchedule {
    pub fn single_full_stage(epochs: usize) -> Self {
        Self {
            betas: vec![1.0],
            epochs: vec![epochs],
        }
    }

    /// Same proportions with every stage length multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            betas: self.betas.clone(),
            epochs: self.epochs.iter().map(|&e| ((e as f64 * factor).round() as usize).max(1)).collect(),
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs.iter().sum()
    }

    pub fn stages(&self) -> Vec<CurriculumStage> {
        self.betas
            .iter()
            .zip(&self.epochs)
            .map(|(&beta, &epochs)| CurriculumStage { beta, epochs })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() {
            return Err(Error::config("schedule.betas", "at least one stage is required"));
        }
        if self.betas.len() != self.epochs.len() {
            return Err(Error::config(
                "schedule.epochs",
                format!("{} stage lengths for {} proportions", self.epochs.len(), self.betas.len()),
            ));
        }
        for (i, &b) in self.betas.iter().enumerate() {
            if !(b > 0.0 && b <= 1.0) {
                return Err(Error::config("schedule.betas", format!("stage {i}: {b} outside (0, 1]")));
            }
            if i > 0 && b <= self.betas[i - 1] {
                return Err(Error::config("schedule.betas", "proportions must be strictly increasing"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force minimiser of `p L + lambda (p^2/2 - p)` on a 1e-6 grid.
    fn grid_argmin(l: f64, lambda: f64) -> f64 {
        let n = 1_000_000;
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=n {
            let p = k as f64 / n as f64;
            let f = p * l + lambda * (0.5 * p * p - p);
            if f < best.0 {
                best = (f, p);
            }
        }
        best.1
    }

    #[test]
    fn direct_formula() {
        let p = caa_weights(&[0.2, 0.5, 0.9], 1.0).unwrap();
        for (a, b) in p.iter().zip([0.8, 0.5, 0.1]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(caa_weights(&[0.9], 0.5).unwrap(), vec![0.0]);
    }

    #[test]
    fn matches_grid_oracle() {
        let p = caa_weights(&[0.3], 0.8).unwrap()[0];
        assert!((p - 0.625).abs() < 1e-12);
        assert!((grid_argmin(0.3, 0.8) - 0.625).abs() <= 1e-6);
    }

    #[test]
    fn rejects_bad_lambda_and_losses() {
        assert!(caa_weights(&[0.1], 0.0).is_err());
        assert!(caa_weights(&[0.1], -1.0).is_err());
        assert!(caa_weights(&[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn lambda_for_uniform_losses() {
        let s = solve_lambda(&[0.4; 10], 0.5).unwrap();
        match s.lambda {
            Lambda::Finite(l) => assert!((l - 0.8).abs() < 1e-6, "{l}"),
            Lambda::AllOnes => panic!("expected finite lambda"),
        }
    }

    #[test]
    fn full_proportion_is_all_ones() {
        let s = solve_lambda(&[0.1, 0.7], 1.0).unwrap();
        assert_eq!(s.lambda, Lambda::AllOnes);
        assert_eq!(s.lambda.weights(&[0.1, 0.7]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn bisection_hits_target_proportion() {
        let losses = [0.1, 0.5, 0.9];
        let s = solve_lambda(&losses, 0.5).unwrap();
        let w = s.lambda.weights(&losses).unwrap();
        let m = w.iter().sum::<f64>() / 3.0;
        assert!((m - 0.5).abs() <= 1e-3, "{m}");
    }

    #[test]
    fn all_zero_losses_are_flagged() {
        let s = solve_lambda(&[0.0, 0.0], 0.5).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.lambda.weights(&[0.0, 0.0]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn schedule_validation() {
        assert!(CurriculumSchedule::default().validate().is_ok());
        let bad = CurriculumSchedule {
            betas: vec![0.5, 0.5, 1.0],
            epochs: vec![1, 1, 1],
        };
        assert!(bad.validate().is_err());
        let mismatched = CurriculumSchedule {
            betas: vec![0.5, 1.0],
            epochs: vec![1],
        };
        assert!(mismatched.validate().is_err());
        assert_eq!(CurriculumSchedule::default().scaled(0.05).epochs, vec![100, 100, 150]);
    }
}
