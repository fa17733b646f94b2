use std::collections::BTreeMap;
use std::io::{Read, Write};

use jdgsvd::driver::ConvergenceHistory;
use serde::{Deserialize, Serialize};

pub type BoxResult<T> = std::result::Result<T, Box<dyn std::error::Error>>;

pub const HEADER: [&str; 10] = [
    "iteration",
    "component",
    "method",
    "k",
    "theta",
    "res_norm",
    "rho",
    "inner_iterations",
    "inner_relres",
    "events",
];

/// One CSV row; `events` is a `;`-separated list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Row {
    pub iteration: usize,
    pub component: usize,
    pub method: String,
    pub k: usize,
    pub theta: f64,
    pub res_norm: f64,
    pub rho: Option<f64>,
    pub inner_iterations: usize,
    pub inner_relres: Option<f64>,
    pub events: String,
}

pub fn rows(history: &ConvergenceHistory) -> Vec<Row> {
    history
        .rows
        .iter()
        .map(|r| Row {
            iteration: r.iteration,
            component: r.component,
            method: r.method.name().to_string(),
            k: r.k,
            theta: r.theta,
            res_norm: r.res_norm,
            rho: r.rho,
            inner_iterations: r.inner_iterations,
            inner_relres: r.inner_relres,
            events: r.events.iter().map(|e| e.name()).collect::<Vec<_>>().join(";"),
        })
        .collect()
}

pub fn write_csv<W: Write>(out: W, rows: &[Row]) -> BoxResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> BoxResult<Vec<Row>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers()?.clone();
    if header.is_empty() {
        return Ok(Vec::new());
    }
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(format!("unexpected history header `{}`", header.iter().collect::<Vec<_>>().join(",")).into());
    }
    let mut out = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        let row: Row = rec.map_err(|e| format!("history row {}: {e}", i + 1))?;
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSummary {
    pub component: usize,
    pub outer: usize,
    pub inner: usize,
    pub final_res_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub components: Vec<ComponentSummary>,
    pub outer: usize,
    pub inner: usize,
}

pub fn summarize(rows: &[Row]) -> Summary {
    let mut by: BTreeMap<usize, ComponentSummary> = BTreeMap::new();
    for r in rows {
        let e = by.entry(r.component).or_insert(ComponentSummary {
            component: r.component,
            outer: 0,
            inner: 0,
            final_res_norm: f64::NAN,
        });
        e.outer += 1;
        e.inner += r.inner_iterations;
        e.final_res_norm = r.res_norm;
    }
    Summary {
        outer: rows.len(),
        inner: rows.iter().map(|r| r.inner_iterations).sum(),
        components: by.into_values().collect(),
    }
}

pub fn render(s: &Summary) -> String {
    let mut out = format!("{:>9} {:>7} {:>9} {:>12}\n", "component", "I_out", "I_in", "res_norm");
    for c in &s.components {
        out += &format!("{:>9} {:>7} {:>9} {:>12.3e}\n", c.component, c.outer, c.inner, c.final_res_norm);
    }
    out += &format!("{:>9} {:>7} {:>9}\n", "total", s.outer, s.inner);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(iteration: usize, component: usize, inner: usize, res: f64) -> Row {
        Row {
            iteration,
            component,
            method: "rcpf".into(),
            k: 1,
            theta: 2.0,
            res_norm: res,
            rho: None,
            inner_iterations: inner,
            inner_relres: Some(1e-3),
            events: String::new(),
        }
    }

    #[test]
    fn round_trip() {
        let rows = vec![row(1, 1, 4, 1e-2), Row { rho: Some(2.5), events: "deflate;restart".into(), ..row(2, 1, 0, 1e-9) }];
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&HEADER.join(",")));
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].rho, Some(2.5));
        assert_eq!(back[0].rho, None);
        assert_eq!(back[1].events, "deflate;restart");
    }

    #[test]
    fn totals_per_component() {
        let rows = vec![row(1, 1, 3, 1.0), row(2, 1, 5, 1e-9), row(3, 2, 7, 1e-10)];
        let s = summarize(&rows);
        assert_eq!((s.outer, s.inner), (3, 15));
        assert_eq!(s.components.len(), 2);
        assert_eq!((s.components[0].outer, s.components[0].inner), (2, 8));
        assert_eq!(s.components[1].final_res_norm, 1e-10);
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
