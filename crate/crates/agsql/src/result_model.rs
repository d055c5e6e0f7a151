//! Canonical representation of SQL execution results.
//!
//! Every table comparison in this crate is defined over canonical forms, so
//! that scoring is deterministic across value encodings, row order, and
//! duplicate rows:
//!
//! - cells are canonicalized on construction ([`CellValue`]): integer-valued
//!   floats snap to integers, remaining floats land on a fixed decimal grid,
//!   blobs are replaced by a content digest;
//! - a table deduplicates into a set of row tuples ([`CanonicalTable`]);
//! - per-column distinct-value sets collapse into a [`ColumnSetSignature`],
//!   the structure the partial-credit score is computed over.

use std::collections::BTreeSet;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

pub mod io;

/// Absolute tolerance for float/integer equality.
///
/// A float within this distance of an integer canonicalizes to that integer;
/// remaining floats are rounded onto the grid of multiples of this tolerance
/// so that near-equal driver outputs (e.g. `0.3` vs `0.3000000001`) compare
/// equal by exact canonical-value equality.
pub const FLOAT_TOLERANCE: f64 = 1e-6;

/// Magnitudes at or above this skip grid rounding: the grid spacing is below
/// one ulp there, and re-rounding would no longer be idempotent.
const GRID_LIMIT: f64 = 1e9;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TableError {
    #[error("row {index} has {got} cells, expected {expected}")]
    RaggedRow {
        index: usize,
        got: usize,
        expected: usize,
    },
}

/// One canonicalized table cell.
///
/// Construct through [`CellValue::from_f64`] / [`canonicalize_cell`] (or a
/// table constructor, which canonicalizes every cell); a hand-built `Float`
/// variant holding a non-canonical value would break set semantics.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CellValue {
    Null,
    Integer(i64),
    /// Canonical float: finite (or ±inf), not within [`FLOAT_TOLERANCE`] of
    /// an integer, rounded to the tolerance grid. Stored as raw bits so the
    /// derive'd `Eq`/`Ord`/`Hash` are exact.
    Float(FloatBits),
    Text(String),
    /// SHA-256 of the blob content; large values are never materialized.
    BlobDigest([u8; 32]),
}

/// Bit-exact wrapper for a canonical float.
#[derive(Debug, Clone, Copy)]
pub struct FloatBits(f64);

impl FloatBits {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl PartialEq for FloatBits {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}
impl Eq for FloatBits {}
impl PartialOrd for FloatBits {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for FloatBits {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
impl std::hash::Hash for FloatBits {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

impl CellValue {
    /// Canonicalize a raw float with the default tolerance.
    pub fn from_f64(raw: f64) -> CellValue {
        CellValue::from_f64_with(raw, FLOAT_TOLERANCE)
    }

    /// Canonicalize a raw float with an explicit tolerance.
    pub fn from_f64_with(raw: f64, tolerance: f64) -> CellValue {
        if raw.is_nan() {
            // SQLite itself cannot store NaN (it becomes NULL); mirror that.
            return CellValue::Null;
        }
        let nearest = raw.round();
        if (raw - nearest).abs() <= tolerance
            && nearest >= i64::MIN as f64
            && nearest <= i64::MAX as f64
        {
            return CellValue::Integer(nearest as i64);
        }
        let grid_limit = GRID_LIMIT / 1e-6 * tolerance;
        if raw.abs() >= grid_limit {
            return CellValue::Float(FloatBits(raw));
        }
        let snapped = (raw / tolerance).round() * tolerance;
        CellValue::Float(FloatBits(snapped))
    }

    pub fn text(s: impl Into<String>) -> CellValue {
        CellValue::Text(s.into())
    }

    pub fn blob(content: &[u8]) -> CellValue {
        let digest = Sha256::digest(content);
        CellValue::BlobDigest(digest.into())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, CellValue::Null)
    }
}

/// Re-canonicalize a cell. Idempotent: applying it to an already canonical
/// cell returns the cell unchanged.
pub fn canonicalize_cell(cell: CellValue) -> CellValue {
    match cell {
        CellValue::Float(bits) => CellValue::from_f64(bits.value()),
        other => other,
    }
}

impl fmt::Display for CellValue {
    /// Python-repr style rendering, matching the observation format agents
    /// see: `None`, `12`, `0.5`, `'text'`, `<blob:8c3f…>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellValue::Null => write!(f, "None"),
            CellValue::Integer(v) => write!(f, "{v}"),
            CellValue::Float(bits) => write!(f, "{}", bits.value()),
            CellValue::Text(s) => write!(f, "'{}'", s.replace('\\', "\\\\").replace('\'', "\\'")),
            CellValue::BlobDigest(d) => {
                write!(f, "<blob:{:02x}{:02x}{:02x}{:02x}>", d[0], d[1], d[2], d[3])
            }
        }
    }
}

impl Serialize for CellValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            CellValue::Null => serializer.serialize_none(),
            CellValue::Integer(v) => serializer.serialize_i64(*v),
            CellValue::Float(bits) => serializer.serialize_f64(bits.value()),
            CellValue::Text(s) => serializer.serialize_str(s),
            CellValue::BlobDigest(d) => {
                let mut hex = String::with_capacity(64);
                for b in d {
                    hex.push_str(&format!("{b:02x}"));
                }
                let mut map = serde_json::Map::new();
                map.insert("$blob".to_string(), serde_json::Value::String(hex));
                serde_json::Value::Object(map).serialize(serializer)
            }
        }
    }
}

impl<'de> Deserialize<'de> for CellValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        CellValue::from_json(&value).map_err(D::Error::custom)
    }
}

impl CellValue {
    /// Parse a JSON scalar into a canonical cell. Booleans map to 0/1 the
    /// way SQLite stores them.
    pub fn from_json(value: &serde_json::Value) -> Result<CellValue, String> {
        match value {
            serde_json::Value::Null => Ok(CellValue::Null),
            serde_json::Value::Bool(b) => Ok(CellValue::Integer(i64::from(*b))),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Ok(CellValue::Integer(i))
                } else if let Some(f) = n.as_f64() {
                    Ok(CellValue::from_f64(f))
                } else {
                    // u64 beyond i64 range; keep the exact digits as text.
                    Ok(CellValue::Text(n.to_string()))
                }
            }
            serde_json::Value::String(s) => Ok(CellValue::Text(s.clone())),
            serde_json::Value::Object(map) => {
                if let Some(serde_json::Value::String(hex)) = map.get("$blob") {
                    let mut digest = [0u8; 32];
                    if hex.len() != 64 {
                        return Err("$blob digest must be 64 hex chars".to_string());
                    }
                    for (i, byte) in digest.iter_mut().enumerate() {
                        *byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
                            .map_err(|e| format!("bad $blob hex: {e}"))?;
                    }
                    Ok(CellValue::BlobDigest(digest))
                } else {
                    Err("table cells must be JSON scalars".to_string())
                }
            }
            serde_json::Value::Array(_) => Err("table cells must be JSON scalars".to_string()),
        }
    }
}

/// A query result as produced: ordered rows, possibly with duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultTable {
    columns: usize,
    rows: Vec<Vec<CellValue>>,
}

impl ResultTable {
    /// Build a table from rows, canonicalizing every cell. The column count
    /// is taken from the first row; all rows must agree.
    pub fn from_rows(rows: Vec<Vec<CellValue>>) -> Result<ResultTable, TableError> {
        let columns = rows.first().map_or(0, Vec::len);
        ResultTable::with_columns(columns, rows)
    }

    /// Build a table with an explicit column count (needed for 0-row tables).
    pub fn with_columns(
        columns: usize,
        rows: Vec<Vec<CellValue>>,
    ) -> Result<ResultTable, TableError> {
        for (index, row) in rows.iter().enumerate() {
            if row.len() != columns {
                return Err(TableError::RaggedRow {
                    index,
                    got: row.len(),
                    expected: columns,
                });
            }
        }
        let rows = rows
            .into_iter()
            .map(|row| row.into_iter().map(canonicalize_cell).collect())
            .collect();
        Ok(ResultTable { columns, rows })
    }

    /// Empty table with a known shape.
    pub fn empty(columns: usize) -> ResultTable {
        ResultTable {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn rows(&self) -> &[Vec<CellValue>] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }
}

/// Deduplicated view of a table: the set of distinct row tuples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalTable {
    columns: usize,
    row_set: BTreeSet<Vec<CellValue>>,
}

impl CanonicalTable {
    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn row_set(&self) -> &BTreeSet<Vec<CellValue>> {
        &self.row_set
    }
}

/// The per-column distinct-value sets of a deduplicated table. Identical
/// columns collapse, since the signature is a set of sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSetSignature {
    raw_columns: usize,
    value_sets: BTreeSet<BTreeSet<CellValue>>,
}

impl ColumnSetSignature {
    pub fn raw_columns(&self) -> usize {
        self.raw_columns
    }

    pub fn value_sets(&self) -> &BTreeSet<BTreeSet<CellValue>> {
        &self.value_sets
    }
}

/// Collapse a table to its set of distinct rows. Column count is preserved.
pub fn dedup_rows(table: &ResultTable) -> CanonicalTable {
    CanonicalTable {
        columns: table.columns,
        row_set: table.rows.iter().cloned().collect(),
    }
}

/// Extract the distinct-value set of every column.
pub fn column_value_sets(table: &CanonicalTable) -> ColumnSetSignature {
    let mut value_sets = BTreeSet::new();
    for col in 0..table.columns {
        let column_set: BTreeSet<CellValue> = table
            .row_set
            .iter()
            .map(|row| row[col].clone())
            .collect();
        value_sets.insert(column_set);
    }
    ColumnSetSignature {
        raw_columns: table.columns,
        value_sets,
    }
}

/// Exact result equality: same column count and same set of row tuples,
/// insensitive to row order and duplicate rows; column order is significant.
///
/// Degenerate tables never match: at least one row (and hence one column) is
/// required, so empty and zero-column results score through the partial
/// branch instead of short-circuiting to a perfect match.
pub fn is_perfect_match(gold: &ResultTable, pred: &ResultTable) -> bool {
    if gold.columns != pred.columns || gold.columns == 0 {
        return false;
    }
    if gold.rows.is_empty() || pred.rows.is_empty() {
        return false;
    }
    dedup_rows(gold).row_set == dedup_rows(pred).row_set
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn int_table(rows: &[&[i64]]) -> ResultTable {
        ResultTable::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|v| CellValue::Integer(*v)).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn canonicalize_snaps_integer_valued_floats() {
        assert_eq!(CellValue::from_f64(1.0), CellValue::Integer(1));
        assert_eq!(CellValue::from_f64(-3.0000004), CellValue::Integer(-3));
        assert_eq!(CellValue::from_f64(2.0000011), CellValue::from_f64(2.000001));
    }

    #[test]
    fn canonicalize_unifies_near_equal_floats() {
        assert_eq!(CellValue::from_f64(0.3000000001), CellValue::from_f64(0.3));
        assert_ne!(CellValue::from_f64(0.3), CellValue::from_f64(0.31));
    }

    #[test]
    fn canonicalize_handles_non_finite() {
        assert_eq!(CellValue::from_f64(f64::NAN), CellValue::Null);
        assert_eq!(
            CellValue::from_f64(f64::INFINITY),
            CellValue::Float(FloatBits(f64::INFINITY))
        );
    }

    #[test]
    fn dedup_rows_set_semantics() {
        let t = int_table(&[&[1], &[1], &[2]]);
        let canon = dedup_rows(&t);
        assert_eq!(canon.row_set().len(), 2);
        assert_eq!(canon.columns(), 1);
    }

    #[test]
    fn dedup_rows_empty_table_keeps_shape() {
        let t = ResultTable::empty(2);
        let canon = dedup_rows(&t);
        assert_eq!(canon.columns(), 2);
        assert!(canon.row_set().is_empty());
    }

    #[test]
    fn column_value_sets_collapses_identical_columns() {
        let t = int_table(&[&[1, 1], &[2, 2]]);
        let sig = column_value_sets(&dedup_rows(&t));
        assert_eq!(sig.raw_columns(), 2);
        assert_eq!(sig.value_sets().len(), 1);
    }

    #[test]
    fn column_value_sets_zero_columns() {
        let sig = column_value_sets(&dedup_rows(&ResultTable::empty(0)));
        assert_eq!(sig.raw_columns(), 0);
        assert!(sig.value_sets().is_empty());
    }

    #[test]
    fn perfect_match_ignores_row_order_and_duplicates() {
        let g = int_table(&[&[1, 2], &[3, 4]]);
        let p = int_table(&[&[3, 4], &[1, 2]]);
        assert!(is_perfect_match(&g, &p));

        let g = int_table(&[&[1]]);
        let p = int_table(&[&[1], &[1]]);
        assert!(is_perfect_match(&g, &p));
    }

    #[test]
    fn perfect_match_rejects_row_recomposition() {
        // Column sets match but the row pairing differs.
        let g = int_table(&[&[1, 10], &[2, 20]]);
        let p = int_table(&[&[1, 20], &[2, 10]]);
        assert!(!is_perfect_match(&g, &p));
    }

    #[test]
    fn perfect_match_equates_integral_floats() {
        let g = int_table(&[&[1]]);
        let p = ResultTable::from_rows(vec![vec![CellValue::from_f64(1.0)]]).unwrap();
        assert!(is_perfect_match(&g, &p));
    }

    #[test]
    fn perfect_match_requires_rows_and_columns() {
        assert!(!is_perfect_match(
            &ResultTable::empty(2),
            &ResultTable::empty(2)
        ));
        assert!(!is_perfect_match(
            &ResultTable::empty(0),
            &ResultTable::empty(0)
        ));
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = ResultTable::from_rows(vec![
            vec![CellValue::Integer(1), CellValue::Integer(2)],
            vec![CellValue::Integer(3)],
        ])
        .unwrap_err();
        assert_eq!(
            err,
            TableError::RaggedRow {
                index: 1,
                got: 1,
                expected: 2
            }
        );
    }

    fn arb_cell() -> impl Strategy<Value = CellValue> {
        prop_oneof![
            Just(CellValue::Null),
            (-3i64..=3).prop_map(CellValue::Integer),
            (-4.0f64..4.0).prop_map(CellValue::from_f64),
            "[a-c]{0,2}".prop_map(CellValue::Text),
        ]
    }

    fn arb_table() -> impl Strategy<Value = ResultTable> {
        (1usize..=3).prop_flat_map(|cols| {
            proptest::collection::vec(proptest::collection::vec(arb_cell(), cols), 0..=5)
                .prop_map(move |rows| ResultTable::with_columns(cols, rows).unwrap())
        })
    }

    proptest! {
        #[test]
        fn canonicalize_cell_is_idempotent(raw in proptest::num::f64::ANY) {
            let once = CellValue::from_f64(raw);
            prop_assert_eq!(canonicalize_cell(once.clone()), once);
        }

        #[test]
        fn perfect_match_invariant_under_permutation_and_duplication(
            t in arb_table(),
            seed in proptest::collection::vec(0usize..32, 0..8),
        ) {
            prop_assume!(t.row_count() > 0);
            // Shuffle + duplicate rows deterministically from the seed.
            let mut rows: Vec<_> = t.rows().to_vec();
            for &s in &seed {
                let i = s % rows.len();
                let row = rows[i].clone();
                rows.push(row);
                let j = (s * 7 + 1) % rows.len();
                rows.swap(i, j);
            }
            let mutated = ResultTable::with_columns(t.columns(), rows).unwrap();
            prop_assert!(is_perfect_match(&t, &mutated));
            prop_assert!(is_perfect_match(&mutated, &t));
            prop_assert_eq!(
                column_value_sets(&dedup_rows(&t)),
                column_value_sets(&dedup_rows(&mutated))
            );
        }

        #[test]
        fn perfect_match_symmetric(a in arb_table(), b in arb_table()) {
            prop_assert_eq!(is_perfect_match(&a, &b), is_perfect_match(&b, &a));
        }
    }
}
