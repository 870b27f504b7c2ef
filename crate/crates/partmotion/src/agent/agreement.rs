//! Gwet's AC1 inter-rater agreement for binary correctness ratings.
//!
//! AC1 = (p_a − p_e) / (1 − p_e), where p_a is the average pairwise
//! agreement across rater pairs per item and p_e = 2π(1−π) is chance
//! agreement from the pooled positive-rating proportion π.

#[derive(Debug, thiserror::Error)]
pub enum AgreementError {
    #[error("ratings table needs at least one item")]
    Empty,
    #[error("ratings table needs at least two raters, got {0}")]
    TooFewRaters(usize),
    #[error("ragged ratings table: item {item} has {got} ratings, expected {expected}")]
    Ragged {
        item: usize,
        got: usize,
        expected: usize,
    },
    #[error("DEGENERATE: chance agreement is 1, AC1 is undefined")]
    Degenerate,
}

/// Binary correctness ratings; rows are rated items, columns are raters.
#[derive(Debug, Clone)]
pub struct RatingsTable {
    rows: Vec<Vec<bool>>,
}

impl RatingsTable {
    pub fn new(rows: Vec<Vec<bool>>) -> Result<RatingsTable, AgreementError> {
        let Some(first) = rows.first() else {
            return Err(AgreementError::Empty);
        };
        let raters = first.len();
        if raters < 2 {
            return Err(AgreementError::TooFewRaters(raters));
        }
        for (item, row) in rows.iter().enumerate() {
            if row.len() != raters {
                return Err(AgreementError::Ragged {
                    item,
                    got: row.len(),
                    expected: raters,
                });
            }
        }
        Ok(RatingsTable { rows })
    }

    pub fn num_items(&self) -> usize {
        self.rows.len()
    }

    pub fn num_raters(&self) -> usize {
        self.rows[0].len()
    }
}

/// Gwet's first-order agreement coefficient over a binary ratings table.
/// 1 exactly when every item's ratings are unanimous.
pub fn gwet_ac1(table: &RatingsTable) -> Result<f64, AgreementError> {
    let raters = table.num_raters();
    let pairs = (raters * (raters - 1) / 2) as f64;
    let mut p_a = 0.0;
    let mut positives = 0usize;
    for row in &table.rows {
        let ones = row.iter().filter(|&&r| r).count();
        let zeros = raters - ones;
        positives += ones;
        let agreeing = ones * ones.saturating_sub(1) / 2 + zeros * zeros.saturating_sub(1) / 2;
        p_a += agreeing as f64 / pairs;
    }
    p_a /= table.num_items() as f64;

    let pi = positives as f64 / (table.num_items() * raters) as f64;
    let p_e = 2.0 * pi * (1.0 - pi);
    if (1.0 - p_e).abs() < 1e-12 {
        return Err(AgreementError::Degenerate);
    }
    Ok((p_a - p_e) / (1.0 - p_e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[u8]]) -> RatingsTable {
        RatingsTable::new(
            rows.iter()
                .map(|r| r.iter().map(|&v| v == 1).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn unanimous_ratings_score_one_exactly() {
        let ones: &[u8] = &[1, 1, 1];
        let all_ones = table(&[ones; 50]);
        assert_eq!(gwet_ac1(&all_ones).unwrap(), 1.0);
        let zeros: &[u8] = &[0, 0, 0];
        let all_zeros = table(&[zeros; 50]);
        assert_eq!(gwet_ac1(&all_zeros).unwrap(), 1.0);
        // Rows unanimous but mixed across items: p_a = 1 still forces 1.
        let mixed = table(&[&[1, 1], &[0, 0], &[1, 1]]);
        assert_eq!(gwet_ac1(&mixed).unwrap(), 1.0);
    }

    #[test]
    fn the_hand_computed_four_item_example_matches() {
        // p_a = 3/4, pi = 5/8, p_e = 2*(5/8)*(3/8) = 15/32,
        // AC1 = (3/4 - 15/32)/(1 - 15/32) = 9/17.
        let t = table(&[&[1, 1], &[1, 0], &[0, 0], &[1, 1]]);
        let value = gwet_ac1(&t).unwrap();
        assert!((value - 9.0 / 17.0).abs() < 1e-15, "{value}");
    }

    #[test]
    fn complete_disagreement_scores_minus_one() {
        let t = table(&[&[1, 0], &[0, 1]]);
        assert_eq!(gwet_ac1(&t).unwrap(), -1.0);
    }

    #[test]
    fn ac1_is_invariant_under_row_and_column_permutations() {
        let base = table(&[&[1, 0, 1], &[0, 0, 1], &[1, 1, 1], &[0, 1, 0]]);
        let rows_swapped = table(&[&[0, 1, 0], &[1, 1, 1], &[1, 0, 1], &[0, 0, 1]]);
        let cols_rotated = table(&[&[1, 1, 0], &[1, 0, 0], &[1, 1, 1], &[0, 0, 1]]);
        let v = gwet_ac1(&base).unwrap();
        assert_eq!(v, gwet_ac1(&rows_swapped).unwrap());
        assert_eq!(v, gwet_ac1(&cols_rotated).unwrap());
    }

    #[test]
    fn one_exactly_when_every_row_is_constant() {
        let nonconstant = table(&[&[1, 1], &[1, 0]]);
        assert!(gwet_ac1(&nonconstant).unwrap() < 1.0);
        let constant = table(&[&[1, 1], &[0, 0]]);
        assert_eq!(gwet_ac1(&constant).unwrap(), 1.0);
    }

    #[test]
    fn invalid_tables_are_rejected() {
        assert!(matches!(
            RatingsTable::new(vec![]).unwrap_err(),
            AgreementError::Empty
        ));
        assert!(matches!(
            RatingsTable::new(vec![vec![true]]).unwrap_err(),
            AgreementError::TooFewRaters(1)
        ));
        assert!(matches!(
            RatingsTable::new(vec![vec![true, false], vec![true]]).unwrap_err(),
            AgreementError::Ragged { item: 1, .. }
        ));
    }
}
