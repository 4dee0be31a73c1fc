//! GAL neighbor-list exchange format.
//!
//! ```text
//! 0 n
//! id k
//! nbr_1 ... nbr_k
//! ...
//! ```
//! Ids are 1-based. Only adjacency is stored.

use std::fmt::Write as _;
use std::path::Path;

use super::{AdjacencyMatrix, CsrMatrix};
use crate::error::{Error, Result};

pub fn write_gal(adj: &AdjacencyMatrix) -> String {
    let n = adj.n();
    let mut out = String::new();
    writeln!(out, "0 {n}").expect("write to string");
    for i in 0..n {
        let nbrs: Vec<String> = adj.neighbors(i).map(|j| (j + 1).to_string()).collect();
        writeln!(out, "{} {}", i + 1, nbrs.len()).expect("write to string");
        writeln!(out, "{}", nbrs.join(" ")).expect("write to string");
    }
    out
}

fn parse_usize(tok: &str, line: usize, what: &str) -> Result<usize> {
    tok.parse().map_err(|_| Error::Gal {
        line,
        msg: format!("expected {what}, found '{tok}'"),
    })
}

pub fn read_gal(text: &str) -> Result<AdjacencyMatrix> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (hline, header) = lines.next().ok_or(Error::Gal {
        line: 1,
        msg: "empty input".into(),
    })?;
    let head: Vec<&str> = header.split_whitespace().collect();
    let n = match head.as_slice() {
        [flag, n] => {
            if *flag != "0" {
                return Err(Error::Gal {
                    line: hline,
                    msg: format!("header flag must be 0, found '{flag}'"),
                });
            }
            parse_usize(n, hline, "unit count")?
        }
        _ => {
            return Err(Error::Gal {
                line: hline,
                msg: "header must be '0 n'".into(),
            })
        }
    };

    let mut rows: Vec<Option<Vec<(usize, f64)>>> = vec![None; n];
    for _ in 0..n {
        let (lno, line) = lines.next().ok_or(Error::Gal {
            line: hline,
            msg: format!("expected {n} unit records"),
        })?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let [id, k] = toks.as_slice() else {
            return Err(Error::Gal {
                line: lno,
                msg: "unit record must be 'id k'".into(),
            });
        };
        let id = parse_usize(id, lno, "unit id")?;
        let k = parse_usize(k, lno, "neighbor count")?;
        if id == 0 || id > n {
            return Err(Error::Gal {
                line: lno,
                msg: format!("unit id {id} outside 1..={n}"),
            });
        }
        if rows[id - 1].is_some() {
            return Err(Error::Gal {
                line: lno,
                msg: format!("unit id {id} listed twice"),
            });
        }
        let (nline, nbr_line) = lines.next().unwrap_or((lno + 1, ""));
        let nbrs = nbr_line
            .split_whitespace()
            .map(|t| {
                let j = parse_usize(t, nline, "neighbor id")?;
                if j == 0 || j > n {
                    return Err(Error::Gal {
                        line: nline,
                        msg: format!("neighbor id {j} outside 1..={n}"),
                    });
                }
                Ok((j - 1, 1.0))
            })
            .collect::<Result<Vec<_>>>()?;
        if nbrs.len() != k {
            return Err(Error::Gal {
                line: nline,
                msg: format!("unit {id} declares {k} neighbors but lists {}", nbrs.len()),
            });
        }
        rows[id - 1] = Some(nbrs);
    }
    if let Some((lno, extra)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(Error::Gal {
            line: lno,
            msg: format!("trailing content '{extra}'"),
        });
    }
    let rows = rows.into_iter().map(|r| r.expect("every id seen once")).collect();
    AdjacencyMatrix::from_csr(CsrMatrix::from_rows(n, rows)?)
}

pub fn read_gal_file(path: impl AsRef<Path>) -> Result<AdjacencyMatrix> {
    read_gal(&std::fs::read_to_string(path)?)
}

pub fn write_gal_file(adj: &AdjacencyMatrix, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_gal(adj))?;
    Ok(())
}
