//! Reader for the subset of the MATPOWER `.m` case format used by PGLib-OPF.
//!
//! Only the `baseMVA`, `bus`, `gen`, `branch` and `gencost` fields are
//! interpreted. Every other `mpc.*` assignment (version strings, cell
//! arrays of bus names, extra matrices) is skipped.

use super::CaseError;

/// Column offsets into `mpc.bus` rows (0-based).
pub mod bus_col {
    pub const BUS_I: usize = 0;
    pub const BUS_TYPE: usize = 1;
    pub const PD: usize = 2;
    pub const MIN_WIDTH: usize = 13;
}

/// Column offsets into `mpc.gen` rows (0-based).
pub mod gen_col {
    pub const GEN_BUS: usize = 0;
    pub const GEN_STATUS: usize = 7;
    pub const PMAX: usize = 8;
    pub const PMIN: usize = 9;
    pub const MIN_WIDTH: usize = 10;
}

/// Column offsets into `mpc.branch` rows (0-based).
pub mod branch_col {
    pub const F_BUS: usize = 0;
    pub const T_BUS: usize = 1;
    pub const BR_X: usize = 3;
    pub const RATE_A: usize = 5;
    pub const BR_STATUS: usize = 10;
    pub const MIN_WIDTH: usize = 11;
}

/// Column offsets into `mpc.gencost` rows (0-based).
pub mod cost_col {
    pub const MODEL: usize = 0;
    pub const NCOST: usize = 3;
    pub const COST: usize = 4;
    pub const MIN_WIDTH: usize = 4;
}

/// Bus type code of the reference bus.
pub const REF_BUS_TYPE: f64 = 3.0;

/// Numeric tables read from a case file, before any unit conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCase {
    pub base_mva: f64,
    pub bus: Vec<Vec<f64>>,
    pub gen: Vec<Vec<f64>>,
    pub branch: Vec<Vec<f64>>,
    pub gencost: Vec<Vec<f64>>,
}

impl RawCase {
    /// Checks the structural invariants that do not depend on units.
    pub fn validate(&self) -> Result<(), CaseError> {
        if !(self.base_mva > 0.0) {
            return Err(CaseError::Data(format!(
                "baseMVA must be positive, got {}",
                self.base_mva
            )));
        }
        check_width("bus", &self.bus, bus_col::MIN_WIDTH)?;
        check_width("gen", &self.gen, gen_col::MIN_WIDTH)?;
        check_width("branch", &self.branch, branch_col::MIN_WIDTH)?;
        check_width("gencost", &self.gencost, cost_col::MIN_WIDTH)?;

        let slack = self
            .bus
            .iter()
            .filter(|row| row[bus_col::BUS_TYPE] == REF_BUS_TYPE)
            .count();
        if slack != 1 {
            return Err(CaseError::Data(format!(
                "expected exactly one reference bus (type 3), found {slack}"
            )));
        }

        let has_bus = |id: f64| self.bus.iter().any(|row| row[bus_col::BUS_I] == id);
        for (k, row) in self.branch.iter().enumerate() {
            for col in [branch_col::F_BUS, branch_col::T_BUS] {
                if !has_bus(row[col]) {
                    return Err(CaseError::Data(format!(
                        "branch {} references unknown bus {}",
                        k + 1,
                        row[col]
                    )));
                }
            }
        }
        for (k, row) in self.gen.iter().enumerate() {
            if !has_bus(row[gen_col::GEN_BUS]) {
                return Err(CaseError::Data(format!(
                    "generator {} references unknown bus {}",
                    k + 1,
                    row[gen_col::GEN_BUS]
                )));
            }
        }
        if self.gencost.len() < self.gen.len() {
            return Err(CaseError::Data(format!(
                "{} generators but only {} gencost rows",
                self.gen.len(),
                self.gencost.len()
            )));
        }
        Ok(())
    }
}

fn check_width(block: &str, rows: &[Vec<f64>], min: usize) -> Result<(), CaseError> {
    if let Some((k, row)) = rows.iter().enumerate().find(|(_, r)| r.len() < min) {
        return Err(CaseError::Data(format!(
            "mpc.{block} row {} has {} columns, need at least {min}",
            k + 1,
            row.len()
        )));
    }
    Ok(())
}

/// Parses MATPOWER case source text into a [`RawCase`].
pub fn parse_matpower(text: &str) -> Result<RawCase, CaseError> {
    let mut base_mva = None;
    let mut bus = None;
    let mut gen = None;
    let mut branch = None;
    let mut gencost = None;

    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, strip_comment(l)))
        .collect();

    let mut i = 0;
    while i < lines.len() {
        let (lineno, line) = lines[i];
        let trimmed = line.trim();
        let Some(rest) = trimmed.strip_prefix("mpc.") else {
            i += 1;
            continue;
        };
        let Some(eq) = rest.find('=') else {
            i += 1;
            continue;
        };
        let name = rest[..eq].trim();
        let rhs = rest[eq + 1..].trim();

        if let Some(body) = rhs.strip_prefix('[') {
            let (rows, next) = read_matrix(&lines, i, body)?;
            match name {
                "bus" => bus = Some(rows),
                "gen" => gen = Some(rows),
                "branch" => branch = Some(rows),
                "gencost" => gencost = Some(rows),
                _ => {}
            }
            i = next;
        } else if rhs.starts_with('{') {
            // cell arrays (bus names and the like)
            i = skip_until(&lines, i, '}');
        } else {
            if name == "baseMVA" {
                let value = rhs.trim_end_matches(';').trim();
                base_mva = Some(value.parse::<f64>().map_err(|_| CaseError::Parse {
                    line: lineno,
                    msg: format!("cannot read baseMVA value `{value}`"),
                })?);
            }
            i += 1;
        }
    }

    let missing = |what: &str| CaseError::MissingBlock(format!("mpc.{what}"));
    let raw = RawCase {
        base_mva: base_mva.ok_or_else(|| missing("baseMVA"))?,
        bus: bus.ok_or_else(|| missing("bus"))?,
        gen: gen.ok_or_else(|| missing("gen"))?,
        branch: branch.ok_or_else(|| missing("branch"))?,
        gencost: gencost.ok_or_else(|| missing("gencost"))?,
    };
    Ok(raw)
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

fn skip_until(lines: &[(usize, &str)], start: usize, close: char) -> usize {
    let mut i = start;
    while i < lines.len() {
        if lines[i].1.contains(close) {
            return i + 1;
        }
        i += 1;
    }
    i
}

/// Reads matrix rows starting with `first` (the text after `[` on line
/// `start`). Returns the rows and the index of the line after `]`.
fn read_matrix(
    lines: &[(usize, &str)],
    start: usize,
    first: &str,
) -> Result<(Vec<Vec<f64>>, usize), CaseError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut current: Vec<f64> = Vec::new();
    let mut i = start;
    let mut text = first;
    let start_line = lines[start].0;
    loop {
        let lineno = lines[i].0;
        let (body, closed) = match text.find(']') {
            Some(pos) => (&text[..pos], true),
            None => (text, false),
        };
        // rows end at `;` or at a line break
        for (k, chunk) in body.split(';').enumerate() {
            if k > 0 {
                push_row(&mut rows, &mut current, lineno)?;
            }
            for tok in chunk.split(|c: char| c.is_whitespace() || c == ',') {
                if tok.is_empty() {
                    continue;
                }
                let value = parse_number(tok).ok_or_else(|| CaseError::Parse {
                    line: lineno,
                    msg: format!("invalid number `{tok}`"),
                })?;
                current.push(value);
            }
        }
        push_row(&mut rows, &mut current, lineno)?;
        if closed {
            return Ok((rows, i + 1));
        }
        i += 1;
        if i >= lines.len() {
            return Err(CaseError::Parse {
                line: start_line,
                msg: "matrix block is never closed with `]`".into(),
            });
        }
        text = lines[i].1;
    }
}

fn push_row(rows: &mut Vec<Vec<f64>>, current: &mut Vec<f64>, line: usize) -> Result<(), CaseError> {
    if current.is_empty() {
        return Ok(());
    }
    if let Some(first) = rows.first() {
        if first.len() != current.len() {
            return Err(CaseError::Parse {
                line,
                msg: format!(
                    "row has {} columns but the block started with {}",
                    current.len(),
                    first.len()
                ),
            });
        }
    }
    rows.push(std::mem::take(current));
    Ok(())
}

fn parse_number(tok: &str) -> Option<f64> {
    match tok {
        "Inf" | "inf" => Some(f64::INFINITY),
        "-Inf" | "-inf" => Some(f64::NEG_INFINITY),
        _ => tok.parse::<f64>().ok(),
    }
}
