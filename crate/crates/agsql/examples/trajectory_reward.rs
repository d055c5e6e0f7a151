//! Aggregate per-turn score sequences into trajectory rewards under both
//! shaping presets, reproducing the characteristic ordering: steady
//! improvement beats stagnation beats oscillation beats regression.
//!
//! Run with: `cargo run --example trajectory_reward`

use agsql::atr::{atr_total, AtrPreset};

fn main() {
    let shapes: &[(&str, &[f64])] = &[
        ("solved at once", &[1.0]),
        ("probe then solve", &[0.0, 1.0]),
        ("slow climb", &[0.0, 0.0, 1.0]),
        ("hold a solution", &[1.0, 1.0]),
        ("oscillate", &[1.0, 0.0, 1.0]),
        ("never solve", &[0.0, 0.0, 0.0]),
        ("regress", &[1.0, 1.0, 0.0]),
        ("partial progress", &[0.2, 0.55, 0.9]),
    ];

    for preset in [AtrPreset::Eq2, AtrPreset::Figure] {
        let cfg = preset.config();
        println!("--- preset {preset:?} ---");
        println!("{:<18} {:>8}  breakdown", "trajectory", "total");
        for (name, scores) in shapes {
            let b = atr_total(scores, &cfg).expect("valid scores");
            println!(
                "{:<18} {:>8.4}  terminal {:+.3}, steps {:+.3}, turns {:-.3}",
                name,
                b.total,
                b.terminal,
                b.step_rewards.iter().fold(0.0, |acc, s| acc + s),
                b.turn_penalty,
            );
        }
        println!();
    }
}
