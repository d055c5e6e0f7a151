//! Score predicted result tables against gold results.
//!
//! Run with: `cargo run --example score_tables`

use agsql::csmr::{csmr_score, CsmrConfig};
use agsql::result_model::{CellValue, ResultTable};

fn table(rows: &[&[&str]]) -> ResultTable {
    ResultTable::from_rows(
        rows.iter()
            .map(|r| r.iter().map(|v| CellValue::text(*v)).collect())
            .collect(),
    )
    .expect("rectangular rows")
}

fn main() {
    let cfg = CsmrConfig::default();
    let gold = table(&[&["a1", "b1"], &["a2", "b2"]]);

    let cases = [
        ("identical", table(&[&["a1", "b1"], &["a2", "b2"]])),
        ("row order flipped", table(&[&["a2", "b2"], &["a1", "b1"]])),
        // Every column's value set matches but rows are recombined: this is
        // the pseudo-perfect case the alpha cap exists for.
        ("rows recombined", table(&[&["a1", "b2"], &["a2", "b1"]])),
        ("one column right", table(&[&["a1", "x"], &["a2", "y"]])),
        ("extra column", table(&[&["a1", "b1", "z1"], &["a2", "b2", "z2"]])),
        ("all wrong", table(&[&["q", "r"]])),
    ];

    println!("{:<20} {:>7} {:>8} {:>3} {:>7}", "prediction", "value", "perfect", "M", "n_prod");
    for (name, pred) in &cases {
        let s = csmr_score(&gold, pred, &cfg);
        println!(
            "{:<20} {:>7.4} {:>8} {:>3} {:>7}",
            name, s.value, s.perfect, s.match_count, s.n_prod
        );
    }
}
