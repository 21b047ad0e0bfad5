//! CSV serialization of error traces.

use std::fmt::Write as _;

use gapbound::{CollapseReport, ErrorTrace};
use thiserror::Error;

pub const CSV_HEADER: &str = "t,epsilon,bound,term_S,term_L,term_SH1";

#[derive(Debug, Error, PartialEq)]
#[error("non-finite value in column {column} at t = {t}")]
pub struct NonFiniteValue {
    pub column: &'static str,
    pub t: f64,
}

/// 17 significant digits, enough to round-trip an `f64`.
pub fn format_value(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row per sample; missing columns are left empty.
pub fn trace_csv(trace: &ErrorTrace) -> Result<String, NonFiniteValue> {
    let columns: [(&'static str, Option<&Vec<f64>>); 5] = [
        ("epsilon", Some(&trace.epsilon)),
        ("bound", trace.bound.as_ref()),
        ("term_S", trace.term_s.as_ref()),
        ("term_L", trace.term_l.as_ref()),
        ("term_SH1", trace.term_sh1.as_ref()),
    ];
    let mut out = String::with_capacity(64 * (trace.len() + 1) * 6);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (i, &t) in trace.times.iter().enumerate() {
        check("t", t, t)?;
        out.push_str(&format_value(t));
        for (name, column) in &columns {
            out.push(',');
            if let Some(value) = column.and_then(|c| c.get(i)) {
                check(name, *value, t)?;
                out.push_str(&format_value(*value));
            }
        }
        out.push('\n');
    }
    Ok(out)
}

fn check(column: &'static str, value: f64, t: f64) -> Result<(), NonFiniteValue> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(NonFiniteValue { column, t })
    }
}

/// `t` followed by one `Δ₀ε(t)` column per trace.
pub fn rescaled_csv(report: &CollapseReport) -> String {
    let mut out = String::from("t");
    for d in &report.delta0_values {
        let _ = write!(out, ",delta0_{}", format_value(*d));
    }
    out.push('\n');
    for (i, &t) in report.times.iter().enumerate() {
        out.push_str(&format_value(t));
        for column in &report.rescaled_traces {
            out.push(',');
            out.push_str(&format_value(column[i]));
        }
        out.push('\n');
    }
    out
}
