//! Group-relative advantage normalization and the token-masked clipped
//! surrogate loss, as pure numeric functions.
//!
//! Rewards from sibling rollouts of one task are z-scored within the group
//! (population standard deviation); each trajectory's advantage is broadcast
//! to all of its tokens. The loss masks out environment-injected tokens —
//! everything inside `<tool_response>…</tool_response>` spans — so only
//! reasoning tokens carry gradient.

use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GrpoError {
    #[error("degenerate group: need at least 2 rewards, got {0}")]
    DegenerateGroup(usize),
    #[error("non-finite reward: {0}")]
    NonFiniteReward(f64),
    #[error("malformed transcript: {0}")]
    MalformedTranscript(String),
    #[error("importance ratio must be positive and finite, got {0}")]
    BadRatio(f64),
    #[error("mask length {mask} does not match token length {tokens}")]
    MaskLengthMismatch { mask: usize, tokens: usize },
    #[error("mask entries must be 0 or 1, got {0}")]
    BadMaskEntry(u8),
    #[error("trajectory has no tokens")]
    EmptyTokens,
    #[error("{advantages} advantages for {trajectories} trajectories")]
    AdvantageCountMismatch {
        advantages: usize,
        trajectories: usize,
    },
    #[error("eps_clip must be in (0, 1), got {0}")]
    BadEpsClip(f64),
}

/// Loss and normalization parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GrpoConfig {
    /// Clip half-width ε of the surrogate objective.
    pub eps_clip: f64,
    /// Groups with population std below this get all-zero advantages.
    pub std_guard: f64,
    /// Default number of sibling rollouts per task.
    pub group_size: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            eps_clip: 0.2,
            std_guard: 1e-8,
            group_size: 8,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.eps_clip > 0.0 && self.eps_clip < 1.0) {
            return Err(GrpoError::BadEpsClip(self.eps_clip));
        }
        Ok(())
    }
}

/// Rewards of the sibling trajectories for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub rewards: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(rewards: Vec<f64>) -> Result<RolloutGroup, GrpoError> {
        if rewards.len() < 2 {
            return Err(GrpoError::DegenerateGroup(rewards.len()));
        }
        if let Some(&bad) = rewards.iter().find(|r| !r.is_finite()) {
            return Err(GrpoError::NonFiniteReward(bad));
        }
        Ok(RolloutGroup { rewards })
    }

    pub fn advantages(&self, cfg: &GrpoConfig) -> Vec<f64> {
        group_advantages_checked(&self.rewards, cfg).expect("validated at construction")
    }
}

/// Z-score each reward against its group (population standard deviation).
/// A group with (near-)zero variance yields all-zero advantages.
pub fn group_advantages(rewards: &[f64], cfg: &GrpoConfig) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::DegenerateGroup(rewards.len()));
    }
    if let Some(&bad) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(GrpoError::NonFiniteReward(bad));
    }
    group_advantages_checked(rewards, cfg)
}

fn group_advantages_checked(rewards: &[f64], cfg: &GrpoConfig) -> Result<Vec<f64>, GrpoError> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < cfg.std_guard {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

const TOOL_RESPONSE_OPEN: &str = "<tool_response>";
const TOOL_RESPONSE_CLOSE: &str = "</tool_response>";

/// Byte ranges of environment-injected spans, each covering a full
/// `<tool_response>…</tool_response>` block including its delimiters.
pub fn tool_response_spans(text: &str) -> Result<Vec<Range<usize>>, GrpoError> {
    let mut spans = Vec::new();
    let mut cursor = 0usize;
    loop {
        let rest = &text[cursor..];
        let next_open = rest.find(TOOL_RESPONSE_OPEN);
        let next_close = rest.find(TOOL_RESPONSE_CLOSE);
        match (next_open, next_close) {
            (None, None) => break,
            (None, Some(_)) => {
                return Err(GrpoError::MalformedTranscript(
                    "closing tool_response tag without an opening tag".to_string(),
                ))
            }
            (Some(open), Some(close)) if close < open => {
                return Err(GrpoError::MalformedTranscript(
                    "closing tool_response tag without an opening tag".to_string(),
                ))
            }
            (Some(open), maybe_close) => {
                let span_start = cursor + open;
                let after_open = span_start + TOOL_RESPONSE_OPEN.len();
                let body = &text[after_open..];
                if body.find(TOOL_RESPONSE_OPEN).is_some_and(|nested| {
                    body.find(TOOL_RESPONSE_CLOSE).is_none_or(|c| nested < c)
                }) {
                    return Err(GrpoError::MalformedTranscript(
                        "nested tool_response opening tag".to_string(),
                    ));
                }
                if maybe_close.is_none() {
                    return Err(GrpoError::MalformedTranscript(
                        "unterminated tool_response span".to_string(),
                    ));
                }
                let close = after_open
                    + body
                        .find(TOOL_RESPONSE_CLOSE)
                        .expect("checked above")
                    + TOOL_RESPONSE_CLOSE.len();
                spans.push(span_start..close);
                cursor = close;
            }
        }
    }
    Ok(spans)
}

/// Per-character mask over a flat transcript: 0 inside environment-injected
/// `tool_response` spans (delimiters included), 1 elsewhere.
pub fn mask_tokens(text: &str) -> Result<Vec<u8>, GrpoError> {
    let spans = tool_response_spans(text)?;
    let mut mask = Vec::with_capacity(text.len());
    let mut span_iter = spans.iter();
    let mut current = span_iter.next();
    for (byte_idx, _) in text.char_indices() {
        while let Some(span) = current {
            if byte_idx >= span.end {
                current = span_iter.next();
            } else {
                break;
            }
        }
        let masked = current.is_some_and(|span| span.contains(&byte_idx));
        mask.push(u8::from(!masked));
    }
    Ok(mask)
}

/// Token-level view of one trajectory: importance ratios plus the binary
/// reasoning-token mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTokens {
    ratios: Vec<f64>,
    mask: Vec<u8>,
}

impl TrajectoryTokens {
    pub fn from_ratios(ratios: Vec<f64>, mask: Vec<u8>) -> Result<TrajectoryTokens, GrpoError> {
        if ratios.is_empty() {
            return Err(GrpoError::EmptyTokens);
        }
        if mask.len() != ratios.len() {
            return Err(GrpoError::MaskLengthMismatch {
                mask: mask.len(),
                tokens: ratios.len(),
            });
        }
        if let Some(&bad) = ratios.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(GrpoError::BadRatio(bad));
        }
        if let Some(&bad) = mask.iter().find(|m| **m > 1) {
            return Err(GrpoError::BadMaskEntry(bad));
        }
        Ok(TrajectoryTokens { ratios, mask })
    }

    /// Build ratios `exp(new − old)` from per-token log-probabilities.
    pub fn from_log_probs(
        new_log_probs: &[f64],
        old_log_probs: &[f64],
        mask: Vec<u8>,
    ) -> Result<TrajectoryTokens, GrpoError> {
        if new_log_probs.len() != old_log_probs.len() {
            return Err(GrpoError::MaskLengthMismatch {
                mask: old_log_probs.len(),
                tokens: new_log_probs.len(),
            });
        }
        let ratios = new_log_probs
            .iter()
            .zip(old_log_probs)
            .map(|(n, o)| (n - o).exp())
            .collect();
        TrajectoryTokens::from_ratios(ratios, mask)
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty()
    }
}

/// A group's worth of token data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBatch {
    pub trajectories: Vec<TrajectoryTokens>,
}

/// Loss value plus per-token objective contributions (the masked
/// `min(ρÂ, clip(ρ)Â)` terms before the −1/G·1/|o| normalization).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss: f64,
    pub per_token: Vec<Vec<f64>>,
}

/// Clipped surrogate loss over a batch, with each trajectory's advantage
/// broadcast to its tokens:
///
/// `loss = −(1/G) Σ_i (1/|o_i|) Σ_t M_{i,t} · min(ρ_{i,t}·Â_i, clip(ρ_{i,t}, 1−ε, 1+ε)·Â_i)`
pub fn clipped_loss(
    batch: &TokenBatch,
    advantages: &[f64],
    cfg: &GrpoConfig,
) -> Result<LossBreakdown, GrpoError> {
    cfg.validate()?;
    if advantages.len() != batch.trajectories.len() {
        return Err(GrpoError::AdvantageCountMismatch {
            advantages: advantages.len(),
            trajectories: batch.trajectories.len(),
        });
    }
    let mut per_token = Vec::with_capacity(batch.trajectories.len());
    let mut objective = 0.0;
    for (tokens, &adv) in batch.trajectories.iter().zip(advantages) {
        if tokens.is_empty() {
            return Err(GrpoError::EmptyTokens);
        }
        let mut contributions = Vec::with_capacity(tokens.len());
        let mut traj_sum = 0.0;
        for (&ratio, &mask) in tokens.ratios.iter().zip(&tokens.mask) {
            if !(ratio.is_finite() && ratio > 0.0) {
                return Err(GrpoError::BadRatio(ratio));
            }
            let clipped = ratio.clamp(1.0 - cfg.eps_clip, 1.0 + cfg.eps_clip);
            let term = f64::from(mask) * (ratio * adv).min(clipped * adv);
            contributions.push(term);
            traj_sum += term;
        }
        objective += traj_sum / tokens.len() as f64;
        per_token.push(contributions);
    }
    let loss = -objective / batch.trajectories.len() as f64;
    Ok(LossBreakdown { loss, per_token })
}

/// Analytic sensitivity of [`clipped_loss`] to each token's new
/// log-probability. Where the clipped branch is active the derivative is 0;
/// elsewhere it is `−M·ρ·Â / (G·|o_i|)` (since `dρ/d log p_new = ρ`).
///
/// At an exact clip boundary the subgradient from the unclipped side is
/// returned.
pub fn loss_logp_sensitivity(
    batch: &TokenBatch,
    advantages: &[f64],
    cfg: &GrpoConfig,
) -> Result<Vec<Vec<f64>>, GrpoError> {
    cfg.validate()?;
    if advantages.len() != batch.trajectories.len() {
        return Err(GrpoError::AdvantageCountMismatch {
            advantages: advantages.len(),
            trajectories: batch.trajectories.len(),
        });
    }
    let g = batch.trajectories.len() as f64;
    let mut grads = Vec::with_capacity(batch.trajectories.len());
    for (tokens, &adv) in batch.trajectories.iter().zip(advantages) {
        if tokens.is_empty() {
            return Err(GrpoError::EmptyTokens);
        }
        let scale = 1.0 / (g * tokens.len() as f64);
        let mut row = Vec::with_capacity(tokens.len());
        for (&ratio, &mask) in tokens.ratios.iter().zip(&tokens.mask) {
            let clipped = ratio.clamp(1.0 - cfg.eps_clip, 1.0 + cfg.eps_clip);
            let unclipped_active = ratio * adv <= clipped * adv;
            let d = if mask == 1 && unclipped_active {
                -scale * ratio * adv
            } else {
                0.0
            };
            row.push(d);
        }
        grads.push(row);
    }
    Ok(grads)
}
