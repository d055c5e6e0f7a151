//! Machine-check the cycle-negativity of shaping configurations.
//!
//! Both presets are strictly dissipative: every closed score loop loses
//! shaping reward, so an oscillating policy cannot break even. A symmetric
//! matrix (equal up/down magnitudes) only reaches the break-even case; the
//! enumeration below surfaces its zero-sum cycles explicitly.
//!
//! Run with: `cargo run --example verify_shaping`

use agsql::atr::{verify_dissipativity, AtrPreset};

fn main() {
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];

    for preset in [AtrPreset::Eq2, AtrPreset::Figure] {
        let cfg = preset.config();
        let report = verify_dissipativity(&cfg, 6, &grid).expect("within budget");
        println!(
            "{preset:?}: {} cycles checked, {} violations, certified = {}",
            report.cycles_checked,
            report.violations.len(),
            report.certified
        );
    }

    // The symmetric control: same improvement magnitude as degradation.
    let mut symmetric = AtrPreset::Eq2.config();
    symmetric.m_hl = -1.0;
    let report = verify_dissipativity(&symmetric, 4, &[0.0, 1.0]).expect("within budget");
    println!(
        "symmetric control: {} cycles checked, {} break-even cycles",
        report.cycles_checked,
        report.violations.len()
    );
    for violation in report.violations.iter().take(5) {
        println!(
            "  {:?} sums to {:+.3} ({:?})",
            violation.scores, violation.shaping_sum, violation.kind
        );
    }
}
