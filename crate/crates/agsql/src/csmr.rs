//! Column-set matching reward: a dense partial-correctness score in [0, 1].
//!
//! A prediction whose result exactly matches the gold result (as a set of
//! row tuples) scores 1.0. Otherwise the score rewards structural overlap:
//! count the gold column value-sets that also appear among the predicted
//! column value-sets (`M`), and score `M² / (N_c^G · N_c^P) · α`. The cap
//! `α < 1` keeps "pseudo-perfect" results — every column's value set right,
//! row composition wrong — strictly below a true match.

use serde::{Deserialize, Serialize};

use crate::result_model::{column_value_sets, dedup_rows, is_perfect_match, ResultTable};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CsmrError {
    #[error("alpha must be in (0, 1], got {0}")]
    InvalidAlpha(f64),
}

/// Scoring parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CsmrConfig {
    /// Cap applied to the partial (non-perfect) branch.
    pub alpha: f64,
}

impl Default for CsmrConfig {
    fn default() -> Self {
        CsmrConfig { alpha: 0.8 }
    }
}

impl CsmrConfig {
    pub fn new(alpha: f64) -> Result<CsmrConfig, CsmrError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(CsmrError::InvalidAlpha(alpha));
        }
        Ok(CsmrConfig { alpha })
    }
}

/// Score plus the intermediate quantities, for inspection and wire replies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsmrScore {
    pub value: f64,
    pub perfect: bool,
    /// Number of gold column value-sets with an equal predicted value-set.
    pub match_count: usize,
    /// `N_c^G × N_c^P`, the normalizer of the partial branch.
    pub n_prod: usize,
}

/// Compute the column-set matching reward of `pred` against `gold`.
///
/// Degenerate inputs are well-defined: a zero-column side makes the
/// normalizer zero and the score 0.0.
pub fn csmr_score(gold: &ResultTable, pred: &ResultTable, cfg: &CsmrConfig) -> CsmrScore {
    let gold_sig = column_value_sets(&dedup_rows(gold));
    let pred_sig = column_value_sets(&dedup_rows(pred));

    let match_count = gold_sig
        .value_sets()
        .intersection(pred_sig.value_sets())
        .count();
    let n_prod = gold_sig.raw_columns() * pred_sig.raw_columns();

    if is_perfect_match(gold, pred) {
        return CsmrScore {
            value: 1.0,
            perfect: true,
            match_count,
            n_prod,
        };
    }

    let value = if n_prod == 0 {
        0.0
    } else {
        (match_count * match_count) as f64 / n_prod as f64 * cfg.alpha
    };
    CsmrScore {
        value,
        perfect: false,
        match_count,
        n_prod,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::result_model::CellValue;
    use proptest::prelude::*;

    fn table(rows: &[&[&str]]) -> ResultTable {
        ResultTable::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|v| CellValue::text(*v)).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_tables_score_one() {
        let g = table(&[&["a1", "b1"], &["a2", "b2"]]);
        let s = csmr_score(&g, &g, &CsmrConfig::default());
        assert_eq!(s.value, 1.0);
        assert!(s.perfect);
    }

    #[test]
    fn pseudo_perfect_pair_capped_at_alpha() {
        // Row recomposition: every column value-set matches, rows do not.
        let g = table(&[&["a1", "b1"], &["a2", "b2"]]);
        let p = table(&[&["a1", "b2"], &["a2", "b1"]]);
        let s = csmr_score(&g, &p, &CsmrConfig::default());
        assert!(!s.perfect);
        assert_eq!(s.match_count, 2);
        assert_eq!(s.n_prod, 4);
        assert_eq!(s.value, 0.8);
    }

    #[test]
    fn zero_column_prediction_scores_zero() {
        let g = table(&[&["a1"]]);
        let p = ResultTable::empty(0);
        let s = csmr_score(&g, &p, &CsmrConfig::default());
        assert_eq!(s.value, 0.0);
        assert_eq!(s.n_prod, 0);
    }

    #[test]
    fn two_zero_column_tables_score_zero() {
        let s = csmr_score(
            &ResultTable::empty(0),
            &ResultTable::empty(0),
            &CsmrConfig::default(),
        );
        assert!(!s.perfect);
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn partial_overlap_on_unequal_widths() {
        // Gold 2 columns, pred 3 columns, 2 gold column-sets matched:
        // 2² / (2·3) · 0.8 = 8/15 = 0.5333…
        let g = table(&[&["a1", "b1"], &["a2", "b2"]]);
        let p = table(&[&["a1", "b1", "x1"], &["a2", "b2", "x2"]]);
        let s = csmr_score(&g, &p, &CsmrConfig::default());
        assert_eq!(s.match_count, 2);
        assert_eq!(s.n_prod, 6);
        assert!((s.value - 4.0 / 6.0 * 0.8).abs() < 1e-15);
    }

    #[test]
    fn duplicate_gold_columns_collapse_in_match_count() {
        // Two identical gold columns yield one value-set, so M can be at
        // most 1 even when the prediction reproduces both columns.
        let g = table(&[&["a1", "a1"], &["a2", "a2"]]);
        let p = table(&[&["a1", "z"], &["a2", "z"]]);
        let s = csmr_score(&g, &p, &CsmrConfig::default());
        assert_eq!(s.match_count, 1);
        assert_eq!(s.n_prod, 4);
        assert_eq!(s.value, 0.25 * 0.8);
    }

    #[test]
    fn invalid_alpha_rejected() {
        assert!(CsmrConfig::new(0.0).is_err());
        assert!(CsmrConfig::new(1.2).is_err());
        assert!(CsmrConfig::new(1.0).is_ok());
    }

    fn arb_cell() -> impl Strategy<Value = CellValue> {
        // Small alphabet makes overlaps and collisions common.
        prop_oneof![
            Just(CellValue::Null),
            Just(CellValue::Integer(1)),
            Just(CellValue::text("a")),
        ]
    }

    fn arb_table() -> impl Strategy<Value = ResultTable> {
        (1usize..=4).prop_flat_map(|cols| {
            proptest::collection::vec(proptest::collection::vec(arb_cell(), cols), 0..=5)
                .prop_map(move |rows| ResultTable::with_columns(cols, rows).unwrap())
        })
    }

    proptest! {
        #[test]
        fn score_in_unit_range_and_perfect_iff_one(a in arb_table(), b in arb_table()) {
            let s = csmr_score(&a, &b, &CsmrConfig::default());
            prop_assert!((0.0..=1.0).contains(&s.value));
            prop_assert_eq!(s.value == 1.0, s.perfect);
            prop_assert_eq!(s.perfect, is_perfect_match(&a, &b));
            if !s.perfect {
                prop_assert!(s.value <= 0.8 + 1e-12);
            }
        }

        #[test]
        fn score_symmetric(a in arb_table(), b in arb_table()) {
            let cfg = CsmrConfig::default();
            let ab = csmr_score(&a, &b, &cfg);
            let ba = csmr_score(&b, &a, &cfg);
            prop_assert_eq!(ab.value, ba.value);
            prop_assert_eq!(ab.match_count, ba.match_count);
            prop_assert_eq!(ab.n_prod, ba.n_prod);
        }

        #[test]
        fn partial_component_invariant_under_column_permutation(
            a in arb_table(),
            b in arb_table(),
            rot in 0usize..4,
        ) {
            let cfg = CsmrConfig::default();
            let rotate = |t: &ResultTable| {
                let cols = t.columns();
                let rows = t
                    .rows()
                    .iter()
                    .map(|row| {
                        (0..cols).map(|i| row[(i + rot) % cols].clone()).collect()
                    })
                    .collect();
                ResultTable::with_columns(cols, rows).unwrap()
            };
            let base = csmr_score(&a, &b, &cfg);
            let rotated = csmr_score(&rotate(&a), &b, &cfg);
            // Column order may flip a perfect match to pseudo-perfect, but
            // the partial quantities are order-free.
            prop_assert_eq!(base.match_count, rotated.match_count);
            prop_assert_eq!(base.n_prod, rotated.n_prod);
            if !base.perfect && !rotated.perfect {
                prop_assert_eq!(base.value, rotated.value);
            }
        }
    }
}
