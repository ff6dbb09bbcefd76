//! GRPO reward components and group-relative advantages.
//!
//! The total reward is the sum of a binary format reward (strict
//! `<think>…</think><answer>…</answer>` template) and a continuous accuracy
//! reward that decays quadratically in the relative error:
//!
//! ```text
//! d_rel   = |pred - gt| / |gt|
//! R_acc   = (1 - d_rel / eps)^2   if d_rel < eps
//!         = 0                     otherwise
//! A_i     = (r_i - mean(r)) / std(r)      (population std)
//! ```

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer_parse;

/// Default tolerance of the accuracy reward.
pub const DEFAULT_EPSILON: f64 = 0.02;
/// Below this reward spread a group carries no preference signal.
pub const DEFAULT_STD_GUARD: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("ground truth is zero; relative error is undefined")]
    ZeroGroundTruth,
    #[error("relative error must be a non-negative number, got {0}")]
    NegativeRelativeError(f64),
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("a reward group needs at least 2 members, got {0}")]
    GroupTooSmall(usize),
    #[error("reward {0} is not finite")]
    NonFiniteReward(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format_reward: f64,
    pub accuracy_reward: f64,
    pub total: f64,
    pub d_rel: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRewards {
    pub group_size: usize,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl GroupRewards {
    pub fn from_rewards(rewards: Vec<f64>, std_guard: f64) -> Result<Self, RewardError> {
        let advantages = group_advantages(&rewards, std_guard)?;
        Ok(Self {
            group_size: rewards.len(),
            rewards,
            advantages,
        })
    }
}

static TEMPLATE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?s)\A\s*<think>(?P<think>.*?)</think>\s*<answer>(?P<answer>.*?)</answer>\s*\z").unwrap()
});

const TAGS: [&str; 4] = ["<think>", "</think>", "<answer>", "</answer>"];

/// 1 when the response is exactly one non-empty think block followed by one
/// non-empty answer block, with only whitespace around them.
pub fn format_reward(raw_text: &str) -> f64 {
    let Some(c) = TEMPLATE_RE.captures(raw_text) else {
        return 0.0;
    };
    let think = &c["think"];
    let answer = &c["answer"];
    let clean = |s: &str| !s.trim().is_empty() && !TAGS.iter().any(|t| s.contains(t));
    if clean(think) && clean(answer) {
        1.0
    } else {
        0.0
    }
}

pub fn relative_error(a_pred: f64, a_gt: f64) -> Result<f64, RewardError> {
    if a_gt == 0.0 {
        return Err(RewardError::ZeroGroundTruth);
    }
    Ok((a_pred - a_gt).abs() / a_gt.abs())
}

/// Quadratic decay from 1 at `d_rel = 0` to 0 at `d_rel = epsilon`.
pub fn accuracy_reward(d_rel: f64, epsilon: f64) -> Result<f64, RewardError> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(RewardError::NonPositiveEpsilon(epsilon));
    }
    if d_rel.is_nan() || d_rel < 0.0 {
        return Err(RewardError::NegativeRelativeError(d_rel));
    }
    if d_rel >= epsilon {
        return Ok(0.0);
    }
    // (eps - d) is exact for d in [eps/2, eps), which keeps the reward
    // strictly positive right up to the threshold.
    let slack = (epsilon - d_rel) / epsilon;
    Ok(slack * slack)
}

/// Format and accuracy scored independently and summed. Accuracy needs a
/// number inside an `<answer>` block; the template itself is not required.
pub fn total_reward(raw_text: &str, a_gt: f64, epsilon: f64) -> Result<RewardBreakdown, RewardError> {
    if a_gt == 0.0 {
        return Err(RewardError::ZeroGroundTruth);
    }
    let format = format_reward(raw_text);
    let (accuracy, d_rel) = match answer_parse::answer_value(raw_text) {
        Some(pred) => {
            let d = relative_error(pred, a_gt)?;
            (accuracy_reward(d, epsilon)?, Some(d))
        }
        None => (0.0, None),
    };
    Ok(RewardBreakdown {
        format_reward: format,
        accuracy_reward: accuracy,
        total: format + accuracy,
        d_rel,
    })
}

/// Normalised advantages `(r_i - mean) / std` with the population standard
/// deviation. Groups whose std falls below `std_guard` get all zeros.
pub fn group_advantages(rewards: &[f64], std_guard: f64) -> Result<Vec<f64>, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall(rewards.len()));
    }
    if let Some(&bad) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(RewardError::NonFiniteReward(bad));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < std_guard {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_reward_cases() {
        assert_eq!(format_reward("<think>a</think><answer>5</answer>"), 1.0);
        assert_eq!(format_reward("  <think>a</think>\n<answer>5</answer>\n"), 1.0);
        assert_eq!(format_reward("<answer>5</answer>"), 0.0);
        assert_eq!(format_reward("<think>a</think><answer>5</answer> extra"), 0.0);
        assert_eq!(format_reward("pre <think>a</think><answer>5</answer>"), 0.0);
        assert_eq!(format_reward("<think> </think><answer>5</answer>"), 0.0);
        assert_eq!(format_reward("<think>a</think><answer></answer>"), 0.0);
        assert_eq!(format_reward("<think>a</think><think>b</think><answer>5</answer>"), 0.0);
        assert_eq!(
            format_reward("<think>a</think><answer>5</answer><answer>6</answer>"),
            0.0
        );
    }

    #[test]
    fn relative_error_cases() {
        assert!((relative_error(101.0, 100.0).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(relative_error(100.0, 100.0).unwrap(), 0.0);
        assert!((relative_error(-49.0, -50.0).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(relative_error(1.0, 0.0), Err(RewardError::ZeroGroundTruth));
        assert_eq!(relative_error(-7.0, 3.0).unwrap(), relative_error(7.0, -3.0).unwrap());
    }

    #[test]
    fn accuracy_reward_cases() {
        assert_eq!(accuracy_reward(0.0, 0.02).unwrap(), 1.0);
        assert_eq!(accuracy_reward(0.01, 0.02).unwrap(), 0.25);
        assert_eq!(accuracy_reward(0.02, 0.02).unwrap(), 0.0);
        assert_eq!(accuracy_reward(0.5, 0.02).unwrap(), 0.0);
        assert!(matches!(
            accuracy_reward(-0.1, 0.02),
            Err(RewardError::NegativeRelativeError(_))
        ));
        assert!(matches!(
            accuracy_reward(0.1, 0.0),
            Err(RewardError::NonPositiveEpsilon(_))
        ));
        // just below the threshold the reward is still positive
        let below = f64::from_bits(0.02f64.to_bits() - 1);
        assert!(accuracy_reward(below, 0.02).unwrap() > 0.0);
    }

    #[test]
    fn total_reward_cases() {
        let perfect = total_reward("<think>x</think><answer>50</answer>", 50.0, 0.02).unwrap();
        assert_eq!(perfect.total, 2.0);
        let off = total_reward("<think>x</think><answer>52</answer>", 50.0, 0.02).unwrap();
        assert_eq!(off.format_reward, 1.0);
        assert_eq!(off.accuracy_reward, 0.0);
        assert_eq!(off.total, 1.0);
        let garbage = total_reward("garbage", 50.0, 0.02).unwrap();
        assert_eq!(garbage.total, 0.0);
        assert_eq!(garbage.d_rel, None);
        let no_think = total_reward("<answer>50</answer>", 50.0, 0.02).unwrap();
        assert_eq!((no_think.format_reward, no_think.accuracy_reward), (0.0, 1.0));
        let bare = total_reward("50", 50.0, 0.02).unwrap();
        assert_eq!(bare.total, 0.0);
        assert_eq!(total_reward("x", 0.0, 0.02), Err(RewardError::ZeroGroundTruth));
    }

    #[test]
    fn advantages_cases() {
        assert_eq!(
            group_advantages(&[2.0, 0.0], DEFAULT_STD_GUARD).unwrap(),
            vec![1.0, -1.0]
        );
        assert_eq!(group_advantages(&[1.0; 4], DEFAULT_STD_GUARD).unwrap(), vec![0.0; 4]);
        assert_eq!(
            group_advantages(&[1.0], DEFAULT_STD_GUARD),
            Err(RewardError::GroupTooSmall(1))
        );
        assert!(group_advantages(&[1.0, f64::NAN], DEFAULT_STD_GUARD).is_err());
    }

    #[test]
    fn advantages_match_two_pass_oracle() {
        let r = [1.0, 0.25, 0.0, 0.0];
        // oracle: mean 0.3125, population variance by explicit sum
        let mean = (1.0 + 0.25 + 0.0 + 0.0) / 4.0;
        let var = ((1.0f64 - mean).powi(2) + (0.25f64 - mean).powi(2) + 2.0 * mean * mean) / 4.0;
        let std = var.sqrt();
        let got = group_advantages(&r, DEFAULT_STD_GUARD).unwrap();
        for (g, x) in got.iter().zip(r) {
            assert!((g - (x - mean) / std).abs() < 1e-9);
        }
        // frozen values: std = sqrt(0.16796875)
        let expected = [
            1.677_484_273_658_651_5,
            -0.152_498_570_332_604_67,
            -0.762_492_851_663_023_4,
            -0.762_492_851_663_023_4,
        ];
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-9, "{g} vs {e}");
        }
    }

    #[test]
    fn group_rewards_wraps_advantages() {
        let g = GroupRewards::from_rewards(vec![2.0, 0.0], DEFAULT_STD_GUARD).unwrap();
        assert_eq!(g.group_size, 2);
        assert_eq!(g.advantages, vec![1.0, -1.0]);
    }
}
