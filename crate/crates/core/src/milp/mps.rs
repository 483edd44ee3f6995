//! MPS export (and a reader for the subset we emit).
//!
//! Rows are `R0000000…`, columns `C0000000…`, all names eight characters.
//! Numbers carry 17 significant digits so a re-read reproduces every `f64`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::milp::{MilpInstance, RawInstance, RowSense};

fn row_name(i: usize) -> String {
    format!("R{i:07}")
}

fn col_name(j: usize) -> String {
    format!("C{j:07}")
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn export_mps(instance: &MilpInstance, destination: &Path) -> Result<()> {
    let file = File::create(destination)?;
    let mut out = BufWriter::new(file);
    write_mps(instance, "PREDFIX", &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_mps<W: Write>(instance: &MilpInstance, name: &str, out: &mut W) -> Result<()> {
    let nb = instance.num_binary();
    writeln!(out, "NAME          {name}")?;
    writeln!(out, "ROWS")?;
    writeln!(out, " N  OBJ")?;
    for i in 0..instance.num_rows() {
        writeln!(out, " L  {}", row_name(i))?;
    }
    writeln!(out, "COLUMNS")?;
    let columns = instance.a().transpose();
    for j in 0..instance.num_vars() {
        if j == 0 && nb > 0 {
            writeln!(
                out,
                "    MARKER                 'MARKER'                 'INTORG'"
            )?;
        }
        let cname = col_name(j);
        writeln!(out, "    {cname}  {:<8}  {}", "OBJ", num(instance.c()[j]))?;
        let (rows, vals) = columns.row(j);
        for (&i, &v) in rows.iter().zip(vals) {
            writeln!(out, "    {cname}  {}  {}", row_name(i), num(v))?;
        }
        if j + 1 == nb {
            writeln!(
                out,
                "    MARKER                 'MARKER'                 'INTEND'"
            )?;
        }
    }
    writeln!(out, "RHS")?;
    for (i, &b) in instance.b().iter().enumerate() {
        if b != 0.0 {
            writeln!(out, "    RHS       {}  {}", row_name(i), num(b))?;
        }
    }
    writeln!(out, "BOUNDS")?;
    for j in 0..instance.num_vars() {
        let kind = if j < nb { "BV" } else { "FR" };
        writeln!(out, " {kind} BND       {}", col_name(j))?;
    }
    writeln!(out, "ENDATA")?;
    Ok(())
}

#[derive(PartialEq)]
enum Section {
    None,
    Rows,
    Columns,
    Rhs,
    Bounds,
}

/// Reads `N`/`L`/`G`/`E` rows, `BV`/`FR` bounds, and integer markers.
/// Equality and `G` rows are converted to standard form.
pub fn parse_mps(text: &str) -> Result<MilpInstance> {
    let bad = |line: usize, msg: &str| Error::Format(format!("MPS line {line}: {msg}"));
    let mut section = Section::None;
    let mut objective_row: Option<String> = None;
    let mut rows: Vec<(String, RowSense)> = Vec::new();
    let mut row_index: HashMap<String, usize> = HashMap::new();
    let mut cols: Vec<String> = Vec::new();
    let mut col_index: HashMap<String, usize> = HashMap::new();
    let mut col_integer: Vec<bool> = Vec::new();
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    let mut objective: HashMap<usize, f64> = HashMap::new();
    let mut rhs: HashMap<usize, f64> = HashMap::new();
    let mut binary: Vec<bool> = Vec::new();
    let mut in_integer_block = false;

    for (n, raw) in text.lines().enumerate() {
        let lineno = n + 1;
        if raw.trim().is_empty() || raw.starts_with('*') {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if !raw.starts_with(' ') {
            section = match fields[0] {
                "NAME" => Section::None,
                "ROWS" => Section::Rows,
                "COLUMNS" => Section::Columns,
                "RHS" => Section::Rhs,
                "BOUNDS" => Section::Bounds,
                "ENDATA" => break,
                other => return Err(bad(lineno, &format!("unknown section {other}"))),
            };
            continue;
        }
        match section {
            Section::Rows => {
                if fields.len() != 2 {
                    return Err(bad(lineno, "row line needs a type and a name"));
                }
                let sense = match fields[0] {
                    "N" => {
                        if objective_row.is_none() {
                            objective_row = Some(fields[1].to_string());
                        }
                        continue;
                    }
                    "L" => RowSense::Le,
                    "G" => RowSense::Ge,
                    "E" => RowSense::Eq,
                    other => return Err(bad(lineno, &format!("row type {other}"))),
                };
                row_index.insert(fields[1].to_string(), rows.len());
                rows.push((fields[1].to_string(), sense));
            }
            Section::Columns => {
                if fields.len() >= 3 && fields[1] == "'MARKER'" {
                    in_integer_block = match fields[2] {
                        "'INTORG'" => true,
                        "'INTEND'" => false,
                        other => return Err(bad(lineno, &format!("marker {other}"))),
                    };
                    continue;
                }
                if fields.len() != 3 && fields.len() != 5 {
                    return Err(bad(lineno, "column line needs 1 or 2 (row, value) pairs"));
                }
                let j = *col_index.entry(fields[0].to_string()).or_insert_with(|| {
                    cols.push(fields[0].to_string());
                    col_integer.push(in_integer_block);
                    cols.len() - 1
                });
                for pair in fields[1..].chunks(2) {
                    let value: f64 = pair[1]
                        .parse()
                        .map_err(|_| bad(lineno, &format!("bad number {}", pair[1])))?;
                    if Some(pair[0]) == objective_row.as_deref() {
                        objective.insert(j, value);
                    } else {
                        let i = *row_index
                            .get(pair[0])
                            .ok_or_else(|| bad(lineno, &format!("unknown row {}", pair[0])))?;
                        entries.push((i, j, value));
                    }
                }
            }
            Section::Rhs => {
                if fields.len() != 3 && fields.len() != 5 {
                    return Err(bad(lineno, "rhs line needs 1 or 2 (row, value) pairs"));
                }
                for pair in fields[1..].chunks(2) {
                    let value: f64 = pair[1]
                        .parse()
                        .map_err(|_| bad(lineno, &format!("bad number {}", pair[1])))?;
                    let i = *row_index
                        .get(pair[0])
                        .ok_or_else(|| bad(lineno, &format!("unknown row {}", pair[0])))?;
                    rhs.insert(i, value);
                }
            }
            Section::Bounds => {
                if fields.len() != 3 {
                    return Err(bad(lineno, "only BV and FR bounds are supported"));
                }
                let j = *col_index
                    .get(fields[2])
                    .ok_or_else(|| bad(lineno, &format!("unknown column {}", fields[2])))?;
                if binary.len() < cols.len() {
                    binary.resize(cols.len(), false);
                }
                match fields[0] {
                    "BV" => binary[j] = true,
                    "FR" => binary[j] = false,
                    other => return Err(bad(lineno, &format!("bound type {other}"))),
                }
            }
            Section::None => return Err(bad(lineno, "data outside a section")),
        }
    }
    binary.resize(cols.len(), false);
    for j in 0..cols.len() {
        if col_integer[j] && !binary[j] {
            return Err(Error::Format(format!(
                "integer column {} is not binary",
                cols[j]
            )));
        }
    }
    let n_binary = binary.iter().take_while(|b| **b).count();
    if binary[n_binary..].iter().any(|b| *b) {
        return Err(Error::Format(
            "binary columns must precede continuous ones".into(),
        ));
    }

    let mut raw = RawInstance::new(n_binary, cols.len() - n_binary);
    for (j, v) in objective {
        raw.c[j] = v;
    }
    let mut row_terms: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows.len()];
    for (i, j, v) in entries {
        row_terms[i].push((j, v));
    }
    for (i, terms) in row_terms.into_iter().enumerate() {
        raw.add_row(terms, rows[i].1, rhs.get(&i).copied().unwrap_or(0.0));
    }
    raw.to_standard_form()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knapsack_round_trip() {
        let inst =
            MilpInstance::from_dense(vec![-3.0, -2.0], &[vec![2.0, 2.0 / 3.0]], vec![4.1], 2)
                .unwrap();
        let mut buf = Vec::new();
        write_mps(&inst, "K", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(parse_mps(&text).unwrap(), inst);
    }

    #[test]
    fn empty_constraints_give_empty_rhs() {
        let inst = MilpInstance::from_dense(vec![1.0, 0.0], &[], vec![], 1).unwrap();
        let mut buf = Vec::new();
        write_mps(&inst, "E", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let rhs = lines.iter().position(|l| *l == "RHS").unwrap();
        assert_eq!(lines[rhs + 1], "BOUNDS");
        assert_eq!(parse_mps(&text).unwrap(), inst);
    }

    #[test]
    fn marker_wraps_exactly_the_binaries() {
        let inst = MilpInstance::from_dense(
            vec![1.0, 2.0, 3.0, 4.0],
            &[vec![1.0, 1.0, 1.0, 1.0]],
            vec![1.0],
            3,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_mps(&inst, "M", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let start = text.find("'INTORG'").unwrap();
        let end = text.find("'INTEND'").unwrap();
        let inside: std::collections::BTreeSet<&str> = text[start..end]
            .lines()
            .skip(1)
            .filter_map(|l| l.split_whitespace().next())
            .filter(|name| *name != "MARKER")
            .collect();
        assert_eq!(inside.len(), 3);
        assert!(!inside.contains("C0000003"));
        assert_eq!(text.matches(" BV ").count(), 3);
        assert_eq!(text.matches(" FR ").count(), 1);
    }
}
