//! CPLEX LP text format: a deterministic writer and a tolerant solution reader.

use crate::error::{Error, Result};
use crate::ir::{ModelIr, ObjSense, RowSense, VarKind};
use std::collections::HashMap;
use std::fmt::Write as _;

const LINE_WIDTH: usize = 100;
const CONSTANT_VAR: &str = "obj_constant";

fn push_terms(out: &mut String, label: &str, terms: &[(String, f64)]) {
    let mut line = format!(" {label}:");
    if terms.is_empty() {
        line.push_str(" 0 ");
        line.push_str(CONSTANT_VAR);
    }
    for (i, (name, coef)) in terms.iter().enumerate() {
        let sign = if *coef < 0.0 { "-" } else { "+" };
        let piece = if i == 0 && *coef >= 0.0 {
            format!(" {} {name}", coef.abs())
        } else {
            format!(" {sign} {} {name}", coef.abs())
        };
        if line.len() + piece.len() > LINE_WIDTH {
            out.push_str(&line);
            out.push('\n');
            line = String::from("  ");
        }
        line.push_str(&piece);
    }
    out.push_str(&line);
}

/// Writes `ir` in CPLEX LP format.
///
/// Variables appear in declaration order and numbers use Rust's shortest round-trip
/// formatting, so equal models give byte-identical files. A non-zero objective constant
/// is carried by a variable fixed at 1.
pub fn write_lp(ir: &ModelIr) -> Result<String> {
    ir.validate()?;
    if !ir.objective().pwl.is_empty() {
        return Err(Error::Build("expand PWL terms before writing an LP file".into()));
    }
    let names: Vec<&str> = ir.vars().iter().map(|v| v.name.as_str()).collect();
    if names.contains(&CONSTANT_VAR) {
        return Err(Error::Build(format!("`{CONSTANT_VAR}` is reserved by the LP writer")));
    }
    let o = ir.objective();
    let mut out = String::new();
    out.push_str("\\ written by stackelberg-ies\n");
    out.push_str(match o.sense {
        ObjSense::Minimize => "Minimize\n",
        ObjSense::Maximize => "Maximize\n",
    });

    let mut linear: Vec<(String, f64)> = Vec::new();
    let mut merged: HashMap<usize, f64> = HashMap::new();
    let mut order = Vec::new();
    for (v, c) in &o.linear {
        if !merged.contains_key(&v.0) {
            order.push(v.0);
        }
        *merged.entry(v.0).or_insert(0.0) += c;
    }
    order.sort_unstable();
    for idx in order {
        linear.push((names[idx].to_owned(), merged[&idx]));
    }
    if o.constant != 0.0 {
        linear.push((CONSTANT_VAR.to_owned(), o.constant));
    }
    push_terms(&mut out, "obj", &linear);
    if !o.quadratic.is_empty() {
        let mut quad: Vec<(usize, f64)> = o.quadratic.iter().map(|(v, c)| (v.0, *c)).collect();
        quad.sort_by_key(|(i, _)| *i);
        let mut line = String::from(" + [");
        for (i, (idx, c)) in quad.iter().enumerate() {
            let sign = if *c < 0.0 { "-" } else { "+" };
            let piece = if i == 0 && *c >= 0.0 {
                format!(" {} {} ^ 2", 2.0 * c.abs(), names[*idx])
            } else {
                format!(" {sign} {} {} ^ 2", 2.0 * c.abs(), names[*idx])
            };
            if line.len() + piece.len() > LINE_WIDTH {
                out.push('\n');
                out.push_str(&line);
                line = String::from("  ");
            }
            line.push_str(&piece);
        }
        out.push('\n');
        out.push_str(&line);
        out.push_str(" ] / 2");
    }
    out.push_str("\nSubject To\n");
    for row in ir.rows() {
        let terms: Vec<(String, f64)> = row.terms.iter().map(|(v, c)| (names[v.0].to_owned(), *c)).collect();
        push_terms(&mut out, &row.name, &terms);
        let op = match row.sense {
            RowSense::Le => "<=",
            RowSense::Ge => ">=",
            RowSense::Eq => "=",
        };
        let _ = writeln!(out, " {op} {}", row.rhs);
    }
    out.push_str("Bounds\n");
    for v in ir.vars() {
        if v.kind == VarKind::Binary {
            continue;
        }
        if v.lower == v.upper {
            let _ = writeln!(out, " {} = {}", v.name, v.lower);
        } else {
            let _ = writeln!(out, " {} <= {} <= {}", v.lower, v.name, v.upper);
        }
    }
    if o.constant != 0.0 {
        let _ = writeln!(out, " {CONSTANT_VAR} = 1");
    }
    let binaries: Vec<&str> = ir.vars().iter().filter(|v| v.kind == VarKind::Binary).map(|v| v.name.as_str()).collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        let mut line = String::new();
        for b in binaries {
            if line.len() + b.len() + 1 > LINE_WIDTH {
                out.push_str(&line);
                out.push('\n');
                line.clear();
            }
            line.push(' ');
            line.push_str(b);
        }
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str("End\n");
    Ok(out)
}

/// Values read back from a solver's solution file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSolution {
    /// Indexed like the model's variables; missing entries are 0.
    pub values: Vec<f64>,
    pub objective: Option<f64>,
    pub infeasible: bool,
    /// How many model variables were found in the file.
    pub matched: usize,
}

/// Reads variable values from a solution file of any common layout.
///
/// A line contributes when one of its tokens is a model variable name; the first number
/// after that token is its value. This covers `name value` (HiGHS, GLPK-style dumps) and
/// `index name value reduced-cost` (CBC) layouts. Status lines mentioning infeasibility
/// and an `Objective` value are also picked up.
pub fn parse_solution(ir: &ModelIr, text: &str) -> ParsedSolution {
    let index: HashMap<&str, usize> = ir.vars().iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
    let mut values = vec![0.0; ir.vars().len()];
    let mut seen = vec![false; ir.vars().len()];
    let mut objective = None;
    let mut infeasible = false;
    let mut in_columns = true;
    for line in text.lines() {
        let lower = line.to_ascii_lowercase();
        if lower.contains("infeasible") && !lower.contains("feasible:") {
            infeasible = true;
        }
        // HiGHS also prints a `# Rows` section whose names could collide with columns.
        if lower.starts_with("# rows") {
            in_columns = false;
        } else if lower.starts_with("# columns") {
            in_columns = true;
        } else if lower.starts_with("# dual solution") || lower.starts_with("# basis") {
            in_columns = false;
        } else if lower.starts_with("# primal solution") {
            in_columns = true;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if objective.is_none() {
            if let Some(pos) = tokens.iter().position(|t| t.to_ascii_lowercase().starts_with("objective")) {
                objective = tokens[pos + 1..].iter().find_map(|t| t.parse::<f64>().ok());
            }
        }
        if !in_columns {
            continue;
        }
        for (i, tok) in tokens.iter().enumerate() {
            if let Some(&idx) = index.get(tok) {
                if let Some(v) = tokens[i + 1..].iter().find_map(|t| t.parse::<f64>().ok()) {
                    if !seen[idx] {
                        values[idx] = v;
                        seen[idx] = true;
                    }
                }
                break;
            }
        }
    }
    let matched = seen.iter().filter(|s| **s).count();
    ParsedSolution { values, objective, infeasible, matched }
}
