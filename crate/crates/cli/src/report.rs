//! Tabular reports, written as CSV and echoed as aligned text tables.

use std::path::Path;

use helioflux::metrics::SummaryStats;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut width: Vec<usize> = self.header.iter().map(String::len).collect();
        for r in &self.rows {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:>w$}")).collect();
            padded.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = line(&self.header);
        out.push_str(&(width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ") + "\n"));
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> anyhow::Result<()> {
        helioflux::datagen::write_atomic(path, self.to_csv().as_bytes())?;
        Ok(())
    }
}

pub fn f6(v: f64) -> String {
    format!("{v:.6}")
}

/// A `label` column plus the six summary statistics.
pub fn stats_table(label: &str) -> Table {
    let mut header = vec![label];
    header.extend(SummaryStats::CSV_HEADER.split(','));
    Table::new(&header)
}

pub fn stats_row(name: &str, s: &SummaryStats) -> Vec<String> {
    let mut row = vec![name.to_string()];
    row.extend(s.csv_fields().split(',').map(str::to_string));
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_text_agree() {
        let mut t = Table::new(&["id", "value"]);
        t.push(vec!["H001".into(), f6(0.5)]);
        assert_eq!(t.to_csv(), "id,value\nH001,0.500000\n");
        let text = t.to_text();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(2).unwrap().ends_with("0.500000"));
    }
}
