//! Plot-ready CSV files. Floats carry 17 significant digits so they parse
//! back to the identical value.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::write_atomic;
use crate::error::Result;
use crate::instability::InterpolationCurve;

pub const CURVE_HEADER: &str = "alpha,error,split,init_seed,noise_seed_a,noise_seed_b,rewind_k,density";
pub const SUMMARY_HEADER: &str = "k,density,mean_instability,std_instability,stable,mean_error,std_error,matching";

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Where a curve came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub init_seed: u64,
    pub noise_seed_a: u64,
    pub noise_seed_b: u64,
    pub rewind_k: u64,
    pub density: f64,
}

pub fn curve_csv(curve: &InterpolationCurve, meta: &CurveMeta) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for (a, e) in curve.alphas.iter().zip(&curve.errors) {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(*a),
            fmt_f64(*e),
            curve.split,
            meta.init_seed,
            meta.noise_seed_a,
            meta.noise_seed_b,
            meta.rewind_k,
            fmt_f64(meta.density)
        )
        .expect("writing to a String");
    }
    out
}

/// One row per instability report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub k: u64,
    pub density: f64,
    pub mean_instability: f64,
    pub std_instability: f64,
    pub stable: bool,
    pub mean_error: f64,
    pub std_error: f64,
    pub matching: bool,
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.k,
            fmt_f64(r.density),
            fmt_f64(r.mean_instability),
            fmt_f64(r.std_instability),
            r.stable,
            fmt_f64(r.mean_error),
            fmt_f64(r.std_error),
            r.matching
        )
        .expect("writing to a String");
    }
    out
}

/// A CSV table with a fixed header; cells are preformatted.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
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
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::instability::alpha_grid;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, 0.0, 1e-300, 0.9999999999999999, 12345.678] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
            let mantissa = s.split('e').next().unwrap().replace(['.', '-'], "");
            assert_eq!(mantissa.len(), 17, "{s}");
        }
    }

    #[test]
    fn curve_has_header_and_thirty_rows() {
        let curve = InterpolationCurve {
            alphas: alpha_grid(),
            errors: vec![0.25; 30],
            split: Split::Test,
        };
        let meta = CurveMeta {
            init_seed: 1,
            noise_seed_a: 2,
            noise_seed_b: 3,
            rewind_k: 0,
            density: 1.0,
        };
        let text = curve_csv(&curve, &meta);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 31);
        assert_eq!(lines[0], CURVE_HEADER);
        assert_eq!(lines[1], "0.0000000000000000e0,2.5000000000000000e-1,test,1,2,3,0,1.0000000000000000e0");
        assert_eq!(text, curve_csv(&curve, &meta));
    }

    #[test]
    fn summary_rows() {
        let row = SummaryRow {
            k: 500,
            density: 0.5,
            mean_instability: 0.01,
            std_instability: 0.0,
            stable: true,
            mean_error: 0.02,
            std_error: 0.001,
            matching: false,
        };
        let text = summary_csv(&vec![row; 6]);
        assert_eq!(text.lines().count(), 7);
        assert!(text.lines().nth(1).unwrap().starts_with("500,5.0000000000000000e-1,"));
        assert!(text.lines().nth(1).unwrap().ends_with(",true,2.0000000000000000e-2,1.0000000000000000e-3,false"));
    }

    #[test]
    fn tables() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "x".into()]);
        assert_eq!(t.to_csv(), "a,b\n1,x\n");
    }
}
