//! Fixed-format MPS export, a small reader for the same dialect, and a
//! reader for external solver solution files.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{BinaryMatchProgram, Relation};
use crate::{Error, Result};

const OBJ_ROW: &str = "OBJ";

/// Writes the program as fixed-format MPS (minimization, all variables
/// binary). Columns are named `p_{ℓ}_{m}`; row names follow the row
/// provenance (`D1`, `FB1`, `CAP1`, ...).
pub fn export_mps(program: &BinaryMatchProgram, name: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "NAME          {name}");
    out.push_str("ROWS\n");
    let _ = writeln!(out, " N  {OBJ_ROW}");
    for row in program.rows() {
        let t = match row.relation {
            Relation::Le => 'L',
            Relation::Eq => 'E',
            Relation::Ge => 'G',
        };
        let _ = writeln!(out, " {t}  {}", row.name);
    }

    let mut by_var: Vec<Vec<(usize, f64)>> = vec![Vec::new(); program.n_vars()];
    for (r, row) in program.rows().iter().enumerate() {
        for &(v, c) in &row.coefs {
            by_var[v].push((r, c));
        }
    }
    out.push_str("COLUMNS\n");
    out.push_str("    MARKER                 'MARKER'                 'INTORG'\n");
    for (v, entries) in by_var.iter().enumerate() {
        let var = program.var_name(v);
        let _ = writeln!(out, "    {var:<8}  {OBJ_ROW:<8}  {:>12}", program.objective()[v]);
        for &(r, c) in entries {
            let _ = writeln!(out, "    {var:<8}  {:<8}  {c:>12}", program.rows()[r].name);
        }
    }
    out.push_str("    MARKER                 'MARKER'                 'INTEND'\n");

    out.push_str("RHS\n");
    for row in program.rows() {
        if row.rhs != 0.0 {
            let _ = writeln!(out, "    RHS       {:<8}  {:>12}", row.name, row.rhs);
        }
    }
    out.push_str("BOUNDS\n");
    for v in 0..program.n_vars() {
        let _ = writeln!(out, " BV BND       {}", program.var_name(v));
    }
    out.push_str("ENDATA\n");
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpsRow {
    pub name: String,
    /// `L`, `E` or `G`.
    pub kind: char,
    pub coefs: Vec<(String, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MpsModel {
    pub name: String,
    pub objective: Vec<(String, f64)>,
    pub rows: Vec<MpsRow>,
    /// Column names in order of first appearance.
    pub columns: Vec<String>,
    /// Columns declared between INTORG/INTEND markers.
    pub integer: Vec<String>,
    /// Columns with a `BV` bound.
    pub binary: Vec<String>,
}

fn format_err(detail: String) -> Error {
    Error::Format {
        what: "MPS",
        detail,
    }
}

fn number(tok: &str, line: usize) -> Result<f64> {
    tok.parse()
        .map_err(|_| format_err(format!("line {line}: bad number {tok:?}")))
}

/// Reads MPS text, splitting fields on whitespace (names must not contain
/// spaces). Objective row is the first `N` row.
pub fn parse_mps(text: &str) -> Result<MpsModel> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Rows,
        Columns,
        Rhs,
        Bounds,
        Ranges,
    }
    let mut model = MpsModel::default();
    let mut section = Section::None;
    let mut obj_name: Option<String> = None;
    let mut row_pos: HashMap<String, usize> = HashMap::new();
    let mut in_int = false;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.starts_with('*') {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if !raw.starts_with(' ') {
            section = match fields[0] {
                "NAME" => {
                    model.name = fields.get(1).unwrap_or(&"").to_string();
                    Section::None
                }
                "ROWS" => Section::Rows,
                "COLUMNS" => Section::Columns,
                "RHS" => Section::Rhs,
                "BOUNDS" => Section::Bounds,
                "RANGES" => Section::Ranges,
                "ENDATA" => break,
                other => return Err(format_err(format!("line {line}: unknown section {other}"))),
            };
            continue;
        }
        match section {
            Section::Rows => {
                let [kind, name] = fields[..] else {
                    return Err(format_err(format!("line {line}: expected row type and name")));
                };
                match kind {
                    "N" if obj_name.is_none() => obj_name = Some(name.to_string()),
                    "N" => {}
                    "L" | "E" | "G" => {
                        row_pos.insert(name.to_string(), model.rows.len());
                        model.rows.push(MpsRow {
                            name: name.to_string(),
                            kind: kind.chars().next().unwrap(),
                            coefs: Vec::new(),
                            rhs: 0.0,
                        });
                    }
                    _ => return Err(format_err(format!("line {line}: bad row type {kind}"))),
                }
            }
            Section::Columns => {
                if fields.get(1) == Some(&"'MARKER'") {
                    match fields.get(2) {
                        Some(&"'INTORG'") => in_int = true,
                        Some(&"'INTEND'") => in_int = false,
                        _ => return Err(format_err(format!("line {line}: bad marker"))),
                    }
                    continue;
                }
                if fields.len() < 3 || fields.len().is_multiple_of(2) {
                    return Err(format_err(format!("line {line}: malformed column entry")));
                }
                let col = fields[0].to_string();
                if model.columns.last() != Some(&col) && !model.columns.contains(&col) {
                    model.columns.push(col.clone());
                    if in_int {
                        model.integer.push(col.clone());
                    }
                }
                for pair in fields[1..].chunks(2) {
                    let value = number(pair[1], line)?;
                    if Some(pair[0]) == obj_name.as_deref() {
                        model.objective.push((col.clone(), value));
                    } else {
                        let r = *row_pos
                            .get(pair[0])
                            .ok_or_else(|| format_err(format!("line {line}: unknown row {}", pair[0])))?;
                        model.rows[r].coefs.push((col.clone(), value));
                    }
                }
            }
            Section::Rhs => {
                if fields.len() < 3 || fields.len().is_multiple_of(2) {
                    return Err(format_err(format!("line {line}: malformed RHS entry")));
                }
                for pair in fields[1..].chunks(2) {
                    let value = number(pair[1], line)?;
                    if let Some(&r) = row_pos.get(pair[0]) {
                        model.rows[r].rhs = value;
                    } else if Some(pair[0]) != obj_name.as_deref() {
                        return Err(format_err(format!("line {line}: unknown row {}", pair[0])));
                    }
                }
            }
            Section::Bounds => match fields.as_slice() {
                ["BV", _, col] => model.binary.push(col.to_string()),
                _ => return Err(format_err(format!("line {line}: unsupported bound"))),
            },
            Section::Ranges => {
                return Err(format_err(format!("line {line}: RANGES not supported")))
            }
            Section::None => {
                return Err(format_err(format!("line {line}: data outside a section")))
            }
        }
    }
    Ok(model)
}

/// Reads `name value` lines (whitespace, `=` or `,` separated) from an
/// external solver and returns the 0/1 assignment for `program`. Variables
/// not listed are zero; `#` starts a comment.
pub fn read_solution(text: &str, program: &BinaryMatchProgram) -> Result<Vec<f64>> {
    let names: HashMap<String, usize> = (0..program.n_vars())
        .map(|v| (program.var_name(v), v))
        .collect();
    let mut x = vec![0.0; program.n_vars()];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == '=' || c == ',')
            .filter(|f| !f.is_empty())
            .collect();
        let [name, value] = fields[..] else {
            return Err(Error::Format {
                what: "solution file",
                detail: format!("line {}: expected `name value`", i + 1),
            });
        };
        let v = *names.get(name).ok_or_else(|| Error::Format {
            what: "solution file",
            detail: format!("line {}: unknown variable {name}", i + 1),
        })?;
        let value: f64 = value.parse().map_err(|_| Error::Format {
            what: "solution file",
            detail: format!("line {}: bad value {value:?}", i + 1),
        })?;
        x[v] = if value > 0.5 { 1.0 } else { 0.0 };
    }
    Ok(x)
}
