//! Group-relative advantage normalization and the clipped surrogate loss
//! on a small synthetic batch.
//!
//! Run with: `cargo run --example group_advantages`

use agsql::grpo::{clipped_loss, group_advantages, GrpoConfig, TokenBatch, TrajectoryTokens};

fn main() {
    let cfg = GrpoConfig::default();

    // Eight sibling rollouts of one task: trajectory rewards.
    let rewards = [1.9999, 0.4998, 1.9999, -0.6, 0.0, 1.9999, 0.3, 0.4998];
    let advantages = group_advantages(&rewards, &cfg).expect("group of 8");
    println!("rewards    = {rewards:?}");
    println!(
        "advantages = {:?}",
        advantages.iter().map(|a| (a * 1e4).round() / 1e4).collect::<Vec<_>>()
    );

    // Token-level loss for three of them. Ratios are exp(new - old) per
    // token; the mask zeroes environment-injected tokens.
    let batch = TokenBatch {
        trajectories: vec![
            TrajectoryTokens::from_log_probs(
                &[-0.60, -1.10, -0.20],
                &[-0.70, -1.00, -0.20],
                vec![1, 0, 1], // middle token is a tool response
            )
            .expect("valid tokens"),
            TrajectoryTokens::from_ratios(vec![1.0, 1.3], vec![1, 1]).expect("valid tokens"),
            TrajectoryTokens::from_ratios(vec![0.5], vec![1]).expect("valid tokens"),
        ],
    };
    let adv = [1.0, -0.5, 0.25];
    let out = clipped_loss(&batch, &adv, &cfg).expect("well-formed batch");
    println!("loss = {:.6}", out.loss);
    for (i, tokens) in out.per_token.iter().enumerate() {
        println!("  trajectory {i}: per-token objective {tokens:?}");
    }
}
