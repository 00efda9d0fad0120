//! Labeled numeric matrices emitted as CSV and JSON.

use serde::{Deserialize, Serialize};

/// Row/column-labeled matrix; `None` marks undefined cells (e.g. the
/// diagonal of an LSS matrix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub name: String,
    pub row_label: String,
    pub col_label: String,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl LabeledMatrix {
    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let i = self.rows.iter().position(|r| r == row)?;
        let j = self.cols.iter().position(|c| c == col)?;
        self.values[i][j]
    }

    /// Header row of column labels, one line per row label. Undefined cells
    /// are empty.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\\{}", self.row_label, self.col_label);
        for c in &self.cols {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (r, row) in self.rows.iter().zip(&self.values) {
            out.push_str(r);
            for v in row {
                out.push(',');
                if let Some(v) = v {
                    out.push_str(&format_value(*v));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Finite defined values, row-major.
    pub fn defined(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().filter_map(|v| *v)
    }
}

/// Shortest round-trip representation, shared by CSV and JSON output so the
/// two carry identical values.
pub fn format_value(v: f64) -> String {
    serde_json::to_string(&v).unwrap_or_else(|_| "nan".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let m = LabeledMatrix {
            name: "x".into(),
            row_label: "source".into(),
            col_label: "target".into(),
            rows: vec!["aa".into(), "bb".into()],
            cols: vec!["aa".into(), "bb".into()],
            values: vec![vec![None, Some(0.5)], vec![Some(1.0), None]],
        };
        assert_eq!(m.to_csv(), "source\\target,aa,bb\naa,,0.5\nbb,1.0,\n");
        assert_eq!(m.get("aa", "bb"), Some(0.5));
        assert_eq!(m.defined().collect::<Vec<_>>(), [0.5, 1.0]);
    }
}
