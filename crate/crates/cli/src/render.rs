//! Plain-text output for the `recourse` subcommand.

use std::fmt::Write;

use upar_core::data::{DatasetSchema, FeatureKind};
use upar_core::engine::StepRecord;

use crate::api::RecourseResponse;

fn num(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn signed(v: f64) -> String {
    if v > 0.0 {
        format!("+{}", num(v))
    } else {
        num(v)
    }
}

/// Feature table for a recourse result followed by a summary line.
pub fn table(schema: &DatasetSchema, resp: &RecourseResponse) -> String {
    let r = &resp.result;
    let header = [
        "feature",
        "current",
        "suggested",
        "change",
        "cost",
        "gamma",
        "gamma_hat",
    ];
    let mut rows: Vec<[String; 7]> = Vec::new();
    for (i, f) in schema.features.iter().enumerate() {
        let x = r.instance[i];
        let a = r.final_action[i];
        let continuous = f.kind == FeatureKind::Continuous;
        let share = |m: Option<&std::collections::BTreeMap<String, f64>>| {
            m.and_then(|m| m.get(&f.name))
                .filter(|_| continuous && f.actionable)
                .map_or_else(|| "-".to_string(), |v| num(*v))
        };
        rows.push([
            f.name.clone(),
            num(x),
            num(x + a),
            if a == 0.0 { "0".into() } else { signed(a) },
            resp.metrics
                .feature_costs
                .get(&f.name)
                .map_or_else(|| "-".to_string(), |c| num(*c)),
            share(Some(&resp.gamma)),
            share(resp.gamma_hat.as_ref()),
        ]);
    }
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: &[&str], out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(k, (c, w))| {
                if k == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&header, &mut out);
    for row in &rows {
        line(&row.each_ref().map(String::as_str), &mut out);
    }
    let status = if r.valid { "valid" } else { "not valid" };
    let steps = r
        .steps_used
        .map_or_else(String::new, |s| format!(", {s} steps"));
    let _ = writeln!(
        out,
        "{} recourse: {status}{steps}, P(favorable) = {}, cost = {}{}",
        r.method,
        num(r.final_probability),
        num(r.total_cost_after),
        if r.cost_correction_applied {
            format!(" (corrected from {})", num(r.total_cost_before))
        } else {
            String::new()
        }
    );
    if let Some(d) = &r.diagnostic {
        let _ = writeln!(out, "note: {d}");
    }
    out
}

/// One line per step: index, prediction, moved features and the
/// candidate action on those features.
pub fn trace_line(schema: &DatasetSchema, rec: &StepRecord) -> String {
    let moved: Vec<String> = schema
        .features
        .iter()
        .enumerate()
        .filter(|(i, _)| rec.acted[*i])
        .map(|(i, f)| {
            let dir = match rec.directions[i] {
                d if d > 0 => "+",
                d if d < 0 => "-",
                _ => "0",
            };
            format!("{}{dir}(w={})", f.name, num(rec.weights[i]))
        })
        .collect();
    let action: Vec<String> = schema
        .features
        .iter()
        .zip(&rec.candidate)
        .filter(|(_, v)| **v != 0.0)
        .map(|(f, v)| format!("{}={}", f.name, signed(*v)))
        .collect();
    format!(
        "step {:>3}  p={}  moved [{}]  action [{}]",
        rec.t,
        num(rec.prediction),
        moved.join(" "),
        action.join(" ")
    )
}

pub fn trace(schema: &DatasetSchema, records: &[StepRecord]) -> String {
    records
        .iter()
        .map(|r| trace_line(schema, r) + "\n")
        .collect()
}
