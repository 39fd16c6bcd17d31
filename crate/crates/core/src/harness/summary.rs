//! Mean ± sample standard deviation per (method, n_t).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::sink::{ErrorLine, ResultLine, RunRecord};
use super::Method;
use crate::error::{FhaError, Result};
use crate::numfmt::sig17;

pub const CSV_HEADER: &str = "method,n_t,mean_pct,std_pct,seeds";
/// Shown instead of a standard deviation computed from a single seed.
pub const NO_STD: &str = "NA";

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub n_t: usize,
    /// Mean accuracy as a fraction.
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); `None` for one seed.
    pub std: Option<f64>,
    pub seeds: usize,
}

impl SummaryRow {
    /// `"87.7±0.7"`: percent, one decimal.
    pub fn cell(&self) -> String {
        match self.std {
            Some(s) => format!("{:.1}±{:.1}", 100.0 * self.mean, 100.0 * s),
            None => format!("{:.1}±{NO_STD}", 100.0 * self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryTable {
    /// Ordered by method, then n_t.
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn get(&self, method: Method, n_t: usize) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method && r.n_t == n_t)
    }

    /// Methods as rows, shot counts as columns.
    pub fn to_table(&self) -> String {
        let mut shots: Vec<usize> = self.rows.iter().map(|r| r.n_t).collect();
        shots.sort_unstable();
        shots.dedup();
        let mut methods: Vec<Method> = self.rows.iter().map(|r| r.method).collect();
        methods.dedup();

        let mut header = vec!["method".to_string()];
        header.extend(shots.iter().map(|n| format!("{n}-shot")));
        let mut lines = vec![header];
        for m in methods {
            let mut line = vec![m.to_string()];
            for &n in &shots {
                line.push(self.get(m, n).map_or_else(|| "-".into(), SummaryRow::cell));
            }
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:<w$}"))
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    /// Full-precision percentages so every number recomputes exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let std = r.std.map_or_else(|| NO_STD.to_string(), |s| sig17(100.0 * s));
            let _ = writeln!(out, "{},{},{},{},{}", r.method, r.n_t, sig17(100.0 * r.mean), std, r.seeds);
        }
        out
    }
}

/// Groups results by `(method, n_t)`. Within a group accuracies are summed in
/// seed order, so the summary does not depend on completion order.
pub fn summarize(results: &[ResultLine]) -> Result<SummaryTable> {
    if results.is_empty() {
        return Err(FhaError::InvalidArgument("no results to summarize".into()));
    }
    let mut groups: BTreeMap<(Method, usize), Vec<(u64, f64)>> = BTreeMap::new();
    for r in results {
        if !(0.0..=1.0).contains(&r.accuracy) {
            return Err(FhaError::InvalidArgument(format!(
                "accuracy {} outside [0,1]",
                r.accuracy
            )));
        }
        groups.entry((r.method, r.n_t)).or_default().push((r.seed, r.accuracy));
    }
    let rows = groups
        .into_iter()
        .map(|((method, n_t), mut runs)| {
            runs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let n = runs.len() as f64;
            let mean = runs.iter().map(|r| r.1).sum::<f64>() / n;
            let std = (runs.len() >= 2).then(|| {
                let ss: f64 = runs.iter().map(|r| (r.1 - mean) * (r.1 - mean)).sum();
                (ss / (n - 1.0)).sqrt()
            });
            SummaryRow {
                method,
                n_t,
                mean,
                std,
                seeds: runs.len(),
            }
        })
        .collect();
    Ok(SummaryTable { rows })
}

/// Contents of a results file.
#[derive(Debug, Clone, Default)]
pub struct ParsedResults {
    pub results: Vec<ResultLine>,
    pub errors: Vec<ErrorLine>,
    /// `(1-based line number, reason)` for every line that failed to parse.
    pub malformed: Vec<(usize, String)>,
}

pub fn parse_results(text: &str) -> ParsedResults {
    let mut parsed = ParsedResults::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RunRecord>(line) {
            Ok(RunRecord::Result(r)) => parsed.results.push(r),
            Ok(RunRecord::Error(e)) => parsed.errors.push(e),
            Err(e) => parsed.malformed.push((i + 1, e.to_string())),
        }
    }
    parsed
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(method: Method, n_t: usize, seed: u64, accuracy: f64) -> ResultLine {
        ResultLine {
            method,
            task: "t".into(),
            n_t,
            seed,
            accuracy,
            wa_accuracy: 0.5,
            wall_ms: 1,
        }
    }

    #[test]
    fn three_seed_cell() {
        let rs: Vec<_> = [0.876, 0.877, 0.878]
            .iter()
            .enumerate()
            .map(|(s, &a)| line(Method::Tohan, 1, s as u64, a))
            .collect();
        let t = summarize(&rs).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].cell(), "87.7±0.1");
        assert!((t.rows[0].std.unwrap() - 0.001).abs() < 1e-12);
    }

    #[test]
    fn identical_accuracies_have_zero_std() {
        let rs: Vec<_> = (0..4).map(|s| line(Method::Ft, 3, s, 0.625)).collect();
        let t = summarize(&rs).unwrap();
        assert_eq!(t.rows[0].std, Some(0.0));
        assert_eq!(t.rows[0].cell(), "62.5±0.0");
    }

    #[test]
    fn single_seed_gets_marker() {
        let t = summarize(&[line(Method::Wa, 1, 0, 0.5)]).unwrap();
        assert_eq!(t.rows[0].std, None);
        assert_eq!(t.rows[0].cell(), "50.0±NA");
        assert!(t.to_csv().ends_with(",NA,1\n"));
    }

    #[test]
    fn order_of_results_does_not_matter() {
        let mut rs: Vec<_> = (0..7).map(|s| line(Method::Shot, 1, s, 0.1 * s as f64 + 0.03)).collect();
        let a = summarize(&rs).unwrap();
        rs.reverse();
        assert_eq!(summarize(&rs).unwrap(), a);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn malformed_lines_are_reported() {
        let text = "{\"method\":\"wa\",\"task\":\"t\",\"n_t\":1,\"seed\":0,\"accuracy\":0.5,\"wa_accuracy\":0.5,\"wall_ms\":1}\nnot json\n\n";
        let p = parse_results(text);
        assert_eq!(p.results.len(), 1);
        assert_eq!(p.malformed.len(), 1);
        assert_eq!(p.malformed[0].0, 2);
    }

    #[test]
    fn table_has_methods_as_rows() {
        let rs = vec![
            line(Method::Wa, 1, 0, 0.5),
            line(Method::Wa, 1, 1, 0.5),
            line(Method::Tohan, 3, 0, 0.75),
            line(Method::Tohan, 3, 1, 0.75),
        ];
        let table = summarize(&rs).unwrap().to_table();
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].starts_with("method"));
        assert!(lines[1].starts_with("wa") && lines[1].contains("50.0±0.0"));
        assert!(lines[2].starts_with("tohan") && lines[2].contains("75.0±0.0"));
    }
}
