//! Text format: one `target q r s` triple per line, target `W` or `H`,
//! 1-based indices, `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;

use super::{ConstraintSet, ConstraintTriple, Constraints, Target};
use crate::error::{Error, Result};

pub fn parse_constraints(text: &str) -> Result<Constraints> {
    let mut w = Vec::new();
    let mut h = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Malformed {
                line: line_no,
                message: format!("expected `target q r s`, found {} fields", fields.len()),
            });
        }
        let target = match fields[0] {
            "W" | "w" => Target::RowsOfW,
            "H" | "h" => Target::ColsOfH,
            other => {
                return Err(Error::Malformed {
                    line: line_no,
                    message: format!("unknown target {other:?}, expected W or H"),
                })
            }
        };
        let mut idx3 = [0usize; 3];
        for (slot, field) in idx3.iter_mut().zip(&fields[1..]) {
            *slot = field.parse().map_err(|_| Error::Malformed {
                line: line_no,
                message: format!("index {field:?} is not a positive integer"),
            })?;
        }
        let triple = ConstraintTriple::new(idx3[0], idx3[1], idx3[2]).map_err(|e| Error::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        match target {
            Target::RowsOfW => w.push(triple),
            Target::ColsOfH => h.push(triple),
        }
    }
    let wrap = |target, triples: Vec<ConstraintTriple>| {
        (!triples.is_empty()).then(|| ConstraintSet::new(target, triples))
    };
    Ok(Constraints {
        w: wrap(Target::RowsOfW, w),
        h: wrap(Target::ColsOfH, h),
    })
}

pub fn render_constraints(constraints: &Constraints) -> String {
    let mut out = String::from("# target q r s (1-based)\n");
    for set in [&constraints.w, &constraints.h].into_iter().flatten() {
        let tag = set.target().tag();
        for t in set.triples() {
            let _ = writeln!(out, "{tag} {} {} {}", t.q, t.r, t.s);
        }
    }
    out
}

pub fn read_constraints(path: impl AsRef<Path>) -> Result<Constraints> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_constraints(&text)
}

pub fn write_constraints(path: impl AsRef<Path>, constraints: &Constraints) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_constraints(constraints)).map_err(|e| Error::file(path, e))
}
