//! Optimiser history as a whitespace-separated text table.
//!
//! Header `iter J C_1 … C_N L gamma`, then one row per iteration. Values use
//! Rust's shortest round-trip exponent format, so the file reparses exactly.

use std::fmt::Write as _;

use topopt_core::opt::History;

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub j: f64,
    pub c: Vec<f64>,
    pub l: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HistoryTable {
    pub n_constraints: usize,
    pub rows: Vec<HistoryRow>,
}

impl HistoryTable {
    pub fn new(n_constraints: usize) -> Self {
        HistoryTable {
            n_constraints,
            rows: Vec::new(),
        }
    }

    pub fn from_history(h: &History, n_constraints: usize) -> Self {
        HistoryTable {
            n_constraints,
            rows: h
                .records()
                .iter()
                .map(|r| HistoryRow {
                    iter: r.iter,
                    j: r.j,
                    c: r.c.clone(),
                    l: r.l,
                    gamma: r.gamma,
                })
                .collect(),
        }
    }

    pub fn header(&self) -> String {
        let mut s = String::from("iter J");
        for i in 1..=self.n_constraints {
            let _ = write!(s, " C_{i}");
        }
        s.push_str(" L gamma");
        s
    }

    pub fn format_row(row: &HistoryRow) -> String {
        let mut s = format!("{} {:e}", row.iter, row.j);
        for c in &row.c {
            let _ = write!(s, " {c:e}");
        }
        let _ = write!(s, " {:e} {:e}", row.l, row.gamma);
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = self.header();
        s.push('\n');
        for r in &self.rows {
            s.push_str(&Self::format_row(r));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("history line {line}: {message}")]
pub struct HistoryError {
    pub line: usize,
    pub message: String,
}

fn herr(line: usize, message: impl Into<String>) -> HistoryError {
    HistoryError {
        line,
        message: message.into(),
    }
}

/// Parse a history file written by [`HistoryTable::to_text`].
pub fn read_history(text: &str) -> Result<HistoryTable, HistoryError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| herr(1, "missing header"))?;
    let cols: Vec<&str> = header.split_whitespace().collect();
    let n = cols.len();
    if n < 4 || cols[0] != "iter" || cols[1] != "J" || cols[n - 2] != "L" || cols[n - 1] != "gamma" {
        return Err(herr(1, "header must read 'iter J C_1 … C_N L gamma'"));
    }
    let n_constraints = n - 4;
    for (k, c) in cols[2..n - 2].iter().enumerate() {
        if *c != format!("C_{}", k + 1) {
            return Err(herr(1, format!("expected column C_{}, found '{c}'", k + 1)));
        }
    }
    let mut table = HistoryTable::new(n_constraints);
    for (i, line) in lines {
        let ln = i + 1;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != n {
            return Err(herr(ln, format!("expected {n} columns, found {}", parts.len())));
        }
        let iter: usize = parts[0]
            .parse()
            .map_err(|_| herr(ln, format!("invalid iteration '{}'", parts[0])))?;
        if let Some(prev) = table.rows.last() {
            if iter <= prev.iter {
                return Err(herr(ln, "iterations must increase"));
            }
        }
        let mut vals = Vec::with_capacity(n - 1);
        for p in &parts[1..] {
            vals.push(p.parse::<f64>().map_err(|_| herr(ln, format!("invalid number '{p}'")))?);
        }
        table.rows.push(HistoryRow {
            iter,
            j: vals[0],
            c: vals[1..1 + n_constraints].to_vec(),
            l: vals[n - 3],
            gamma: vals[n - 2],
        });
    }
    Ok(table)
}
