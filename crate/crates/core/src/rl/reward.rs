use serde::{Deserialize, Serialize};

use crate::autodiff::GradientVector;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Similarity used to turn a gradient pair into a reward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RewardMode {
    Dot,
    #[default]
    Cosine,
}

/// Norms below this make the cosine undefined; the reward is then 0.
pub const COSINE_EPS: f64 = 1e-12;

/// Alignment between a generated-sample gradient and the dev gradient.
pub fn sample_reward<F: Scalar>(
    generated: &GradientVector<F>,
    dev: &GradientVector<F>,
    mode: RewardMode,
) -> Result<f64> {
    if generated.layout_id() != dev.layout_id() {
        return Err(Error::LayoutMismatch { expected: dev.layout_id().into(), found: generated.layout_id().into() });
    }
    if generated.len() != dev.len() {
        return Err(Error::dim("sample_reward", format!("{} vs {} components", generated.len(), dev.len())));
    }
    let mut dot = 0f64;
    let mut gg = 0f64;
    let mut dd = 0f64;
    for (g, d) in generated.values().iter().zip(dev.values()) {
        let (g, d) = (g.to_acc(), d.to_acc());
        dot += g * d;
        gg += g * g;
        dd += d * d;
    }
    Ok(match mode {
        RewardMode::Dot => dot,
        RewardMode::Cosine => {
            let (ng, nd) = (gg.sqrt(), dd.sqrt());
            if ng < COSINE_EPS || nd < COSINE_EPS {
                0.0
            } else {
                dot / (ng * nd)
            }
        }
    })
}

/// Rewards with their mean subtracted.
pub fn center(rewards: &[f64]) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    rewards.iter().map(|r| r - mean).collect()
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
