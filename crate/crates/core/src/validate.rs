use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::store::AttentionStore;

pub const DEFAULT_MAX_REPORTED: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecksumViolation {
    pub step: usize,
    pub block: usize,
    pub stored: u32,
    pub computed: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowProblem {
    NonFinite { position: usize },
    Negative { position: usize, value: f64 },
    Sum { sum: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowViolation {
    pub step: usize,
    pub block: usize,
    pub head: usize,
    pub token: usize,
    #[serde(flatten)]
    pub problem: RowProblem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tolerance: f64,
    pub chunks_checked: usize,
    pub rows_checked: usize,
    pub checksum_violations: Vec<ChecksumViolation>,
    /// Total number of offending rows; only the first `max_reported` are listed.
    pub row_violation_count: usize,
    pub row_violations: Vec<RowViolation>,
    pub max_reported: usize,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.checksum_violations.is_empty() && self.row_violation_count == 0
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "checked {} chunks, {} rows (tolerance {:e})",
            self.chunks_checked, self.rows_checked, self.tolerance
        )?;
        for c in &self.checksum_violations {
            writeln!(
                f,
                "checksum mismatch: step {} block {} (stored {:#010x}, computed {:#010x})",
                c.step, c.block, c.stored, c.computed
            )?;
        }
        for r in &self.row_violations {
            let what = match &r.problem {
                RowProblem::NonFinite { position } => format!("non-finite value at position {position}"),
                RowProblem::Negative { position, value } => format!("negative value {value:e} at position {position}"),
                RowProblem::Sum { sum } => format!("row sum {sum:.9} outside 1 ± {:e}", self.tolerance),
            };
            writeln!(
                f,
                "row step {} block {} head {} token {}: {what}",
                r.step, r.block, r.head, r.token
            )?;
        }
        if self.row_violation_count > self.row_violations.len() {
            writeln!(
                f,
                "... {} more row violations",
                self.row_violation_count - self.row_violations.len()
            )?;
        }
        write!(f, "{}", if self.is_ok() { "OK" } else { "FAILED" })
    }
}

struct ChunkOutcome {
    checksum: Option<ChecksumViolation>,
    rows: Vec<RowViolation>,
    row_count: usize,
    rows_checked: usize,
}

/// Verifies every chunk checksum and, for softmax dumps, that each row is a
/// probability distribution within `tolerance`. Rows of chunks that fail
/// their checksum are not inspected.
pub fn validate_dump(store: &AttentionStore, tolerance: f64) -> ValidationReport {
    validate_dump_with_limit(store, tolerance, DEFAULT_MAX_REPORTED)
}

pub fn validate_dump_with_limit(store: &AttentionStore, tolerance: f64, max_reported: usize) -> ValidationReport {
    let h = store.header();
    let d = h.dims;
    let positions = d.positions();
    let row_bytes = h.row_bytes();

    let outcomes: Vec<ChunkOutcome> = (0..d.chunk_count())
        .into_par_iter()
        .map(|idx| {
            let (step, block) = (idx / d.blocks, idx % d.blocks);
            if let Err(crate::Error::Integrity { stored, computed, .. }) = store.check_chunk(step, block) {
                return ChunkOutcome {
                    checksum: Some(ChecksumViolation {
                        step,
                        block,
                        stored,
                        computed,
                    }),
                    rows: Vec::new(),
                    row_count: 0,
                    rows_checked: 0,
                };
            }
            let chunk = store.chunk_raw(step, block);
            let mut rows = Vec::new();
            let mut row_count = 0;
            let mut buf = Vec::with_capacity(positions);
            for head in 0..d.heads {
                for token in 0..d.tokens {
                    let off = h.row_offset_in_chunk(head, token);
                    buf.clear();
                    h.dtype.decode_into(&chunk[off..off + row_bytes], &mut buf);
                    if let Some(problem) = check_row(&buf, h.softmax_applied, tolerance) {
                        row_count += 1;
                        if rows.len() < max_reported {
                            rows.push(RowViolation {
                                step,
                                block,
                                head,
                                token,
                                problem,
                            });
                        }
                    }
                }
            }
            ChunkOutcome {
                checksum: None,
                rows,
                row_count,
                rows_checked: d.heads * d.tokens,
            }
        })
        .collect();

    let mut report = ValidationReport {
        tolerance,
        chunks_checked: outcomes.len(),
        rows_checked: 0,
        checksum_violations: Vec::new(),
        row_violation_count: 0,
        row_violations: Vec::new(),
        max_reported,
    };
    // outcomes are in chunk order, so the merged lists are coordinate-sorted
    for o in outcomes {
        report.rows_checked += o.rows_checked;
        report.row_violation_count += o.row_count;
        report.checksum_violations.extend(o.checksum);
        let room = max_reported.saturating_sub(report.row_violations.len());
        report.row_violations.extend(o.rows.into_iter().take(room));
    }
    report
}

fn check_row(row: &[f64], softmax: bool, tolerance: f64) -> Option<RowProblem> {
    if let Some(position) = row.iter().position(|v| !v.is_finite()) {
        return Some(RowProblem::NonFinite { position });
    }
    if !softmax {
        return None;
    }
    if let Some(position) = row.iter().position(|&v| v < 0.0) {
        return Some(RowProblem::Negative {
            position,
            value: row[position],
        });
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > tolerance {
        return Some(RowProblem::Sum { sum });
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_checks() {
        assert_eq!(check_row(&[0.5, 0.5], true, 1e-6), None);
        assert!(matches!(
            check_row(&[0.6, 0.5], true, 1e-6),
            Some(RowProblem::Sum { .. })
        ));
        assert!(matches!(
            check_row(&[1.1, -0.1], true, 1e-6),
            Some(RowProblem::Negative { position: 1, .. })
        ));
        assert!(matches!(
            check_row(&[f64::NAN, 1.0], false, 1e-6),
            Some(RowProblem::NonFinite { position: 0 })
        ));
        assert_eq!(check_row(&[3.0, -2.0], false, 1e-6), None);
    }
}
