use serde::{Deserialize, Serialize};

use super::ParamVector;
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Learning-rate schedule over 0-based epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant,
    /// `base · 0.5^⌊epoch / every⌋`.
    HalveEvery {
        every: usize,
    },
    /// Constant until `hold_until`, then geometric decay reaching `floor` at
    /// the last epoch (`total_epochs - 1`).
    ExpDecayToFloor {
        hold_until: usize,
        floor: f64,
        total_epochs: usize,
    },
    /// Linear interpolation from `base` to `base / 100` over the run.
    LinearDecay {
        total_epochs: usize,
    },
}

impl Schedule {
    pub fn lr(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            Schedule::Constant => base,
            Schedule::HalveEvery { every } => {
                let halvings = (epoch / every.max(1)).min(1000) as i32;
                base * 0.5f64.powi(halvings)
            }
            Schedule::ExpDecayToFloor {
                hold_until,
                floor,
                total_epochs,
            } => {
                let last = total_epochs.saturating_sub(1);
                if epoch < hold_until || last <= hold_until {
                    return base;
                }
                let frac = ((epoch - hold_until) as f64 / (last - hold_until) as f64).min(1.0);
                base * (floor / base).powf(frac)
            }
            Schedule::LinearDecay { total_epochs } => {
                let last = total_epochs.saturating_sub(1).max(1);
                let frac = (epoch as f64 / last as f64).min(1.0);
                base * (1.0 - 0.99 * frac)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Schedule::HalveEvery { every: 0 } => {
                Err(Error::Config("halve_every.every must be positive".into()))
            }
            Schedule::ExpDecayToFloor { floor, .. } if !(floor > 0.0 && floor.is_finite()) => Err(
                Error::Config("exp_decay_to_floor.floor must be positive".into()),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub base_lr: f64,
    pub schedule: Schedule,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "base_lr must be finite and nonnegative, got {}",
                self.base_lr
            )));
        }
        self.schedule.validate()
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.schedule.lr(self.base_lr, epoch)
    }
}

/// Per-server optimizer state threaded through training.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, len: usize) -> Self {
        let moments = match config.kind {
            OptimizerKind::Adam => len,
            OptimizerKind::Sgd => 0,
        };
        Self {
            config,
            step_count: 0,
            first_moment: vec![0.0; moments],
            second_moment: vec![0.0; moments],
        }
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// Applies one update in place and returns the learning rate used.
    pub fn step(
        &mut self,
        params: &mut ParamVector,
        grad: &ParamVector,
        epoch: usize,
    ) -> Result<f64> {
        if params.len() != grad.len() {
            return Err(Error::DimensionMismatch(format!(
                "params {} vs gradient {}",
                params.len(),
                grad.len()
            )));
        }
        let lr = self.config.lr(epoch);
        self.step_count += 1;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad.iter()) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.first_moment.len() != params.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "optimizer state holds {} moments for {} params",
                        self.first_moment.len(),
                        params.len()
                    )));
                }
                let t = self.step_count as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grad.iter())
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(lr)
    }
}

/// Functional form of [`OptimizerState::step`].
pub fn optimizer_step(
    params: &ParamVector,
    grad: &ParamVector,
    state: &mut OptimizerState,
    epoch: usize,
) -> Result<ParamVector> {
    let mut out = params.clone();
    state.step(&mut out, grad, epoch)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: OptimizerKind, lr: f64, schedule: Schedule) -> OptimizerConfig {
        OptimizerConfig {
            kind,
            base_lr: lr,
            schedule,
        }
    }

    #[test]
    fn sgd_step() {
        let mut st = OptimizerState::new(cfg(OptimizerKind::Sgd, 0.1, Schedule::Constant), 2);
        let out =
            optimizer_step(&vec![1.0, 1.0].into(), &vec![1.0, -1.0].into(), &mut st, 0).unwrap();
        assert_eq!(out.0, vec![0.9, 1.1]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let lr = 1e-3;
        let mut st = OptimizerState::new(cfg(OptimizerKind::Adam, lr, Schedule::Constant), 3);
        let g: ParamVector = vec![0.5, -2.0, 1e-3].into();
        let out = optimizer_step(&ParamVector::zeros(3), &g, &mut st, 0).unwrap();
        // Closed form of step 1: m̂ = g, v̂ = g², so Δ = -lr·g/(|g| + ε).
        for (o, gi) in out.iter().zip(g.iter()) {
            let expected = -lr * gi / (gi.abs() + ADAM_EPS);
            assert!((o - expected).abs() < 1e-15);
            assert!((o.abs() - lr).abs() < 1e-7);
        }
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn zero_gradient() {
        let p: ParamVector = vec![0.3, -0.2].into();
        let mut sgd = OptimizerState::new(cfg(OptimizerKind::Sgd, 0.1, Schedule::Constant), 2);
        assert_eq!(
            optimizer_step(&p, &ParamVector::zeros(2), &mut sgd, 0).unwrap(),
            p
        );
        let mut adam = OptimizerState::new(cfg(OptimizerKind::Adam, 0.1, Schedule::Constant), 2);
        let out = optimizer_step(&p, &ParamVector::zeros(2), &mut adam, 0).unwrap();
        for (a, b) in out.iter().zip(p.iter()) {
            assert!((a - b).abs() <= ADAM_EPS);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut st = OptimizerState::new(cfg(OptimizerKind::Adam, 0.1, Schedule::Constant), 2);
        assert!(
            optimizer_step(&ParamVector::zeros(3), &ParamVector::zeros(3), &mut st, 0).is_err()
        );
        assert!(
            optimizer_step(&ParamVector::zeros(2), &ParamVector::zeros(3), &mut st, 0).is_err()
        );
    }

    #[test]
    fn schedules() {
        let halve = Schedule::HalveEvery { every: 20 };
        assert_eq!(halve.lr(1e-4, 0), 1e-4);
        assert_eq!(halve.lr(1e-4, 19), 1e-4);
        assert!((halve.lr(1e-4, 40) - 2.5e-5).abs() < 1e-20);

        let exp = Schedule::ExpDecayToFloor {
            hold_until: 100,
            floor: 1e-6,
            total_epochs: 201,
        };
        assert_eq!(exp.lr(1e-4, 100), 1e-4);
        assert!((exp.lr(1e-4, 150) - 1e-5).abs() < 1e-18);
        assert!((exp.lr(1e-4, 200) - 1e-6).abs() < 1e-18);

        let lin = Schedule::LinearDecay { total_epochs: 11 };
        assert_eq!(lin.lr(1.0, 0), 1.0);
        assert!((lin.lr(1.0, 10) - 0.01).abs() < 1e-15);
        assert!((lin.lr(1.0, 5) - 0.505).abs() < 1e-15);
        for e in 0..300 {
            assert!(exp.lr(1e-4, e) > 0.0 && lin.lr(1e-4, e) > 0.0 && halve.lr(1e-4, e) > 0.0);
        }
    }

    #[test]
    fn schedule_json() {
        let s: Schedule = serde_json::from_str(r#"{"kind":"halve_every","every":20}"#).unwrap();
        assert_eq!(s, Schedule::HalveEvery { every: 20 });
        let s: Schedule = serde_json::from_str(r#"{"kind":"constant"}"#).unwrap();
        assert_eq!(s, Schedule::Constant);
    }
}
