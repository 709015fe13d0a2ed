//! Plain-text problem files (`ncop` version 1).
//!
//! ```text
//! # comment
//! ncop 1
//! <n>
//! dom <i> <size>          one per variable
//! unary <i> <v0> ... <v_{size-1}>
//! binary <i> <j>
//! <|D_i| rows of |D_j| reals>
//! ```
//!
//! Tokens are whitespace separated; `#` starts a comment running to end of
//! line. Reals are written with 17 significant digits, so write/read
//! round-trips are value exact. `inf` encodes a hard constraint.

use crate::model::{ModelError, Problem};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NcopError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected {expected}, found {found:?}")]
    UnexpectedToken {
        line: usize,
        expected: String,
        found: String,
    },
    #[error("line {line}: unexpected end of file, expected {expected}")]
    UnexpectedEof { line: usize, expected: String },
    #[error("unsupported format version {0} (this reader understands 1)")]
    UnsupportedVersion(String),
    #[error("line {line}: directive {directive:?} for variable {var} before its dom line")]
    MissingDomain {
        line: usize,
        directive: String,
        var: usize,
    },
    #[error("line {line}: duplicate {what}")]
    Duplicate { line: usize, what: String },
    #[error("missing {what}")]
    Missing { what: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>, // (line number, token)
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let body = raw.split('#').next().unwrap_or("");
            for tok in body.split_whitespace() {
                items.push((ln + 1, tok));
            }
        }
        Tokens { items, pos: 0 }
    }

    fn line(&self) -> usize {
        if self.pos < self.items.len() {
            self.items[self.pos].0
        } else {
            self.items.last().map(|&(l, _)| l).unwrap_or(0)
        }
    }

    fn next(&mut self, expected: &str) -> Result<&'a str, NcopError> {
        match self.items.get(self.pos) {
            Some(&(_, tok)) => {
                self.pos += 1;
                Ok(tok)
            }
            None => Err(NcopError::UnexpectedEof {
                line: self.line(),
                expected: expected.to_string(),
            }),
        }
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|&(_, t)| t)
    }

    fn usize(&mut self, expected: &str) -> Result<usize, NcopError> {
        let line = self.line();
        let tok = self.next(expected)?;
        tok.parse().map_err(|_| NcopError::UnexpectedToken {
            line,
            expected: format!("{expected} (unsigned integer)"),
            found: tok.to_string(),
        })
    }

    fn real(&mut self, expected: &str) -> Result<f64, NcopError> {
        let line = self.line();
        let tok = self.next(expected)?;
        tok.parse().map_err(|_| NcopError::UnexpectedToken {
            line,
            expected: format!("{expected} (real)"),
            found: tok.to_string(),
        })
    }
}

/// Formats with 17 significant digits; every f64 parses back to the same
/// bits (`inf` included).
pub fn format_real(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v:.16e}")
    }
}

pub fn read_str(text: &str) -> Result<Problem, NcopError> {
    let mut t = Tokens::new(text);
    let line = t.line();
    let magic = t.next("header `ncop 1`")?;
    if magic != "ncop" {
        return Err(NcopError::UnexpectedToken {
            line,
            expected: "header `ncop`".to_string(),
            found: magic.to_string(),
        });
    }
    let version = t.next("format version")?;
    if version != "1" {
        return Err(NcopError::UnsupportedVersion(version.to_string()));
    }
    let n = t.usize("variable count")?;

    let mut domains: Vec<Option<usize>> = vec![None; n];
    let mut unary: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut binary: Vec<(usize, usize, Vec<f64>)> = Vec::new();

    let var_index = |t: &mut Tokens, what: &str| -> Result<usize, NcopError> {
        let line = t.line();
        let i = t.usize(what)?;
        if i >= n {
            return Err(NcopError::UnexpectedToken {
                line,
                expected: format!("{what} < {n}"),
                found: i.to_string(),
            });
        }
        Ok(i)
    };

    while let Some(directive) = t.peek() {
        let line = t.line();
        match directive {
            "dom" => {
                t.next("dom")?;
                let i = var_index(&mut t, "variable index")?;
                let size = t.usize("domain size")?;
                if domains[i].is_some() {
                    return Err(NcopError::Duplicate {
                        line,
                        what: format!("dom {i}"),
                    });
                }
                domains[i] = Some(size);
            }
            "unary" => {
                t.next("unary")?;
                let i = var_index(&mut t, "variable index")?;
                let size = domains[i].ok_or(NcopError::MissingDomain {
                    line,
                    directive: "unary".to_string(),
                    var: i,
                })?;
                if unary[i].is_some() {
                    return Err(NcopError::Duplicate {
                        line,
                        what: format!("unary {i}"),
                    });
                }
                let mut table = Vec::with_capacity(size);
                for _ in 0..size {
                    table.push(t.real("unary value")?);
                }
                unary[i] = Some(table);
            }
            "binary" => {
                t.next("binary")?;
                let i = var_index(&mut t, "first variable index")?;
                let j = var_index(&mut t, "second variable index")?;
                let di = domains[i].ok_or(NcopError::MissingDomain {
                    line,
                    directive: "binary".to_string(),
                    var: i,
                })?;
                let dj = domains[j].ok_or(NcopError::MissingDomain {
                    line,
                    directive: "binary".to_string(),
                    var: j,
                })?;
                let mut table = Vec::with_capacity(di * dj);
                for _ in 0..di * dj {
                    table.push(t.real("binary value")?);
                }
                binary.push((i, j, table));
            }
            other => {
                return Err(NcopError::UnexpectedToken {
                    line,
                    expected: "directive dom|unary|binary".to_string(),
                    found: other.to_string(),
                });
            }
        }
    }

    let mut doms = Vec::with_capacity(n);
    for (i, d) in domains.into_iter().enumerate() {
        doms.push(d.ok_or(NcopError::Missing {
            what: format!("dom {i}"),
        })?);
    }
    let unaries = unary
        .into_iter()
        .enumerate()
        .map(|(i, u)| u.unwrap_or_else(|| vec![0.0; doms[i]]))
        .collect();

    Ok(Problem::new(doms, unaries, binary)?)
}

pub fn write_str(p: &Problem) -> String {
    let n = p.num_vars();
    let mut out = String::new();
    out.push_str("ncop 1\n");
    out.push_str(&format!("{n}\n"));
    for i in 0..n {
        out.push_str(&format!("dom {i} {}\n", p.domain(i)));
    }
    for i in 0..n {
        out.push_str(&format!("unary {i}"));
        for &v in p.unary(i) {
            out.push(' ');
            out.push_str(&format_real(v));
        }
        out.push('\n');
    }
    for e in p.edges() {
        out.push_str(&format!("binary {} {}\n", e.i, e.j));
        for xi in 0..p.domain(e.i) {
            let mut first = true;
            for xj in 0..p.domain(e.j) {
                if !first {
                    out.push(' ');
                }
                first = false;
                out.push_str(&format_real(e.value(xi, xj)));
            }
            out.push('\n');
        }
    }
    out
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Problem, NcopError> {
    read_str(&std::fs::read_to_string(path)?)
}

pub fn write_file(path: impl AsRef<Path>, p: &Problem) -> Result<(), NcopError> {
    Ok(std::fs::write(path, write_str(p))?)
}
