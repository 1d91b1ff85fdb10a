use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

/// Adam with bias correction over a fixed list of parameter buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            step_count: 0,
            first_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn num_tracked(&self) -> usize {
        self.first_moment.len()
    }

    pub fn first_moment(&self, idx: usize) -> &[f64] {
        &self.first_moment[idx]
    }

    pub fn second_moment(&self, idx: usize) -> &[f64] {
        &self.second_moment[idx]
    }

    /// One Adam update of every tracked parameter buffer.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Dimension {
                op: "adam_step",
                axis: "parameters",
                expected: self.first_moment.len(),
                got: params.len().min(grads.len()),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::Dimension {
                    op: "adam_step",
                    axis: "numel",
                    expected: m.len(),
                    got: if p.len() != m.len() { p.len() } else { g.len() },
                });
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Step decay: multiplies `lr` by `factor` whenever `step` is a positive multiple of `every`.
pub fn lr_decay(state: &mut AdamState, step: usize, every: usize, factor: f64) -> Result<()> {
    if every == 0 {
        return Err(Error::InvalidArgument("decay interval must be positive".into()));
    }
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "decay factor {factor} outside (0, 1]"
        )));
    }
    if step > 0 && step.is_multiple_of(every) {
        state.lr *= factor;
    }
    Ok(())
}
