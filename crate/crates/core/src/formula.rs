//! Model-formula parsing and design-matrix construction.
//!
//! Grammar: `response "~" term ("+" term)*` where a term is a bare column
//! name (numeric), `cat(name)` (categorical expansion against the smallest
//! level as reference), `bs(name, n_internal_knots, order)` (B-spline
//! block), or the literal `1` (intercept only; the intercept is always
//! present as column 0 regardless).
//!
//! A [`DesignInfo`] freezes everything data-dependent about the expansion
//! (category levels, spline knots) so a matrix built on one set of rows
//! (say, the complete cases) can later be rebuilt consistently on another
//! (say, pseudo-records carrying substituted values).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::splines::SplineBasis;
use crate::tabular::{ColumnKind, ObservationTable};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Numeric(String),
    Categorical(String),
    Spline {
        column: String,
        internal_knots: usize,
        order: usize,
    },
}

impl Term {
    pub fn column(&self) -> &str {
        match self {
            Term::Numeric(c) | Term::Categorical(c) => c,
            Term::Spline { column, .. } => column,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Formula {
    pub response: String,
    pub terms: Vec<Term>,
}

impl Formula {
    pub fn parse(text: &str) -> Result<Formula> {
        parse_formula(text)
    }

    /// Every column the formula references (response first).
    pub fn columns(&self) -> Vec<&str> {
        let mut out = vec![self.response.as_str()];
        out.extend(self.terms.iter().map(|t| t.column()));
        out
    }
}

impl std::fmt::Display for Formula {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ~ ", self.response)?;
        if self.terms.is_empty() {
            return write!(f, "1");
        }
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            match t {
                Term::Numeric(c) => write!(f, "{c}")?,
                Term::Categorical(c) => write!(f, "cat({c})")?,
                Term::Spline {
                    column,
                    internal_knots,
                    order,
                } => write!(f, "bs({column},{internal_knots},{order})")?,
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Tilde,
    Plus,
    LParen,
    RParen,
    Comma,
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\r' | '\n' => i += 1,
            '~' => {
                toks.push((Tok::Tilde, i));
                i += 1;
            }
            '+' => {
                toks.push((Tok::Plus, i));
                i += 1;
            }
            '(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            ')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            ',' => {
                toks.push((Tok::Comma, i));
                i += 1;
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                    i += 1;
                }
                let n: i64 = text[start..i].parse().map_err(|_| Error::Formula {
                    position: start,
                    message: "integer out of range".into(),
                })?;
                toks.push((Tok::Int(n), start));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() {
                    let c = bytes[i] as char;
                    if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
                        i += 1;
                    } else {
                        break;
                    }
                }
                toks.push((Tok::Ident(text[start..i].to_string()), start));
            }
            other => {
                return Err(Error::Formula {
                    position: i,
                    message: format!("unknown token '{other}'"),
                })
            }
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&(Tok, usize)> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<(Tok, usize)> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<usize> {
        match self.next() {
            Some((t, at)) if t == want => Ok(at),
            Some((t, at)) => Err(Error::Formula {
                position: at,
                message: format!("expected {what}, found {t:?}"),
            }),
            None => Err(Error::Formula {
                position: self.end,
                message: format!("expected {what}, found end of input"),
            }),
        }
    }
}

/// Parse a formula string. Whitespace-insensitive; errors carry the byte
/// position of the offending token.
pub fn parse_formula(text: &str) -> Result<Formula> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    let response = match p.next() {
        Some((Tok::Ident(name), _)) => name,
        Some((t, at)) => {
            return Err(Error::Formula {
                position: at,
                message: format!("expected response name, found {t:?}"),
            })
        }
        None => {
            return Err(Error::Formula {
                position: 0,
                message: "empty formula".into(),
            })
        }
    };
    p.expect(Tok::Tilde, "'~'")?;
    let mut terms = Vec::new();
    loop {
        match p.next() {
            Some((Tok::Int(1), _)) => {} // explicit intercept marker, nothing to add
            Some((Tok::Ident(name), at)) => {
                let is_call = matches!(p.peek(), Some((Tok::LParen, _)));
                let term = match (name.as_str(), is_call) {
                    ("cat", true) => {
                        p.expect(Tok::LParen, "'('")?;
                        let col = ident(&mut p)?;
                        p.expect(Tok::RParen, "')'")?;
                        Term::Categorical(col)
                    }
                    ("bs", true) => {
                        p.expect(Tok::LParen, "'('")?;
                        let col = ident(&mut p)?;
                        p.expect(Tok::Comma, "','")?;
                        let n = int(&mut p)?;
                        p.expect(Tok::Comma, "','")?;
                        let m = int(&mut p)?;
                        p.expect(Tok::RParen, "')'")?;
                        if m < 1 {
                            return Err(Error::Formula {
                                position: at,
                                message: "spline order must be >= 1".into(),
                            });
                        }
                        Term::Spline {
                            column: col,
                            internal_knots: n as usize,
                            order: m as usize,
                        }
                    }
                    _ => Term::Numeric(name),
                };
                if term.column() == response {
                    return Err(Error::Formula {
                        position: at,
                        message: format!("response '{response}' reused as a term"),
                    });
                }
                if terms.iter().any(|t: &Term| t.column() == term.column()) {
                    return Err(Error::Formula {
                        position: at,
                        message: format!("duplicate term for column '{}'", term.column()),
                    });
                }
                terms.push(term);
            }
            Some((t, at)) => {
                return Err(Error::Formula {
                    position: at,
                    message: format!("expected a term, found {t:?}"),
                })
            }
            None => {
                return Err(Error::Formula {
                    position: p.end,
                    message: "expected a term, found end of input".into(),
                })
            }
        }
        match p.next() {
            Some((Tok::Plus, _)) => continue,
            Some((t, at)) => {
                return Err(Error::Formula {
                    position: at,
                    message: format!("expected '+' or end of formula, found {t:?}"),
                })
            }
            None => break,
        }
    }
    Ok(Formula { response, terms })
}

fn ident(p: &mut Parser) -> Result<String> {
    match p.next() {
        Some((Tok::Ident(name), _)) => Ok(name),
        Some((t, at)) => Err(Error::Formula {
            position: at,
            message: format!("expected a column name, found {t:?}"),
        }),
        None => Err(Error::Formula {
            position: p.end,
            message: "expected a column name, found end of input".into(),
        }),
    }
}

fn int(p: &mut Parser) -> Result<i64> {
    match p.next() {
        Some((Tok::Int(n), _)) => Ok(n),
        Some((t, at)) => Err(Error::Formula {
            position: at,
            message: format!("expected an integer, found {t:?}"),
        }),
        None => Err(Error::Formula {
            position: p.end,
            message: "expected an integer, found end of input".into(),
        }),
    }
}

// ---------------------------------------------------------------------------
// design construction

#[derive(Debug, Clone)]
pub enum TermInfo {
    Numeric {
        column: String,
    },
    Categorical {
        column: String,
        levels: Vec<i64>,
        reference: i64,
    },
    Spline {
        column: String,
        basis: SplineBasis,
    },
}

impl TermInfo {
    // A spline block omits its first basis function, for the same reason a
    // categorical block omits the reference level: the full basis sums to
    // one at every point, so together with the intercept the design would
    // be exactly singular.
    fn width(&self) -> usize {
        match self {
            TermInfo::Numeric { .. } => 1,
            TermInfo::Categorical { levels, .. } => levels.len() - 1,
            TermInfo::Spline { basis, .. } => basis.dim() - 1,
        }
    }
}

/// Frozen, data-dependent expansion plan for a formula.
#[derive(Debug, Clone)]
pub struct DesignInfo {
    pub response: String,
    pub terms: Vec<TermInfo>,
    pub column_names: Vec<String>,
}

/// Optional per-column substitutes; each vector is indexed by table row.
pub type Overrides = BTreeMap<String, Vec<f64>>;

impl DesignInfo {
    /// Resolve a formula against a table. Category levels come from the
    /// column metadata; spline knots come from the non-masked values of the
    /// term's column among `rows`.
    pub fn new(formula: &Formula, table: &ObservationTable, rows: &[usize]) -> Result<DesignInfo> {
        let mut terms = Vec::new();
        let mut column_names = vec!["(intercept)".to_string()];
        for term in &formula.terms {
            let col = table.column(term.column())?;
            let info = match term {
                Term::Numeric(name) => {
                    if matches!(col.kind, ColumnKind::Categorical { .. }) {
                        return Err(Error::Schema(format!(
                            "column '{name}' is categorical; use cat({name})"
                        )));
                    }
                    TermInfo::Numeric { column: name.clone() }
                }
                Term::Categorical(name) => match &col.kind {
                    ColumnKind::Categorical { levels } => {
                        let mut sorted = levels.clone();
                        sorted.sort_unstable();
                        let reference = sorted[0];
                        TermInfo::Categorical {
                            column: name.clone(),
                            levels: sorted,
                            reference,
                        }
                    }
                    ColumnKind::Numeric => {
                        return Err(Error::Schema(format!(
                            "cat({name}) requires a categorical column"
                        )))
                    }
                },
                Term::Spline {
                    column,
                    internal_knots,
                    order,
                } => {
                    if matches!(col.kind, ColumnKind::Categorical { .. }) {
                        return Err(Error::Schema(format!(
                            "bs({column},..) requires a numeric column"
                        )));
                    }
                    let observed: Vec<f64> = rows
                        .iter()
                        .filter(|&&r| !col.missing[r])
                        .map(|&r| col.values[r])
                        .collect();
                    let basis = SplineBasis::from_data(&observed, *internal_knots, *order)?;
                    TermInfo::Spline {
                        column: column.clone(),
                        basis,
                    }
                }
            };
            match &info {
                TermInfo::Numeric { column } => column_names.push(column.clone()),
                TermInfo::Categorical {
                    column,
                    levels,
                    reference,
                } => {
                    for l in levels.iter().filter(|&&l| l != *reference) {
                        column_names.push(format!("{column}={l}"));
                    }
                }
                TermInfo::Spline { column, basis } => {
                    for s in 2..=basis.dim() {
                        column_names.push(format!(
                            "bs({column},{},{})[{s}]",
                            basis.internal_knots().len(),
                            basis.order()
                        ));
                    }
                }
            }
            terms.push(info);
        }
        Ok(DesignInfo {
            response: formula.response.clone(),
            terms,
            column_names,
        })
    }

    /// Total design width including the intercept.
    pub fn width(&self) -> usize {
        1 + self.terms.iter().map(TermInfo::width).sum::<usize>()
    }

    /// Build the design rows for `rows` of `table`, with `overrides`
    /// substituting values for masked (or any) cells of named columns.
    pub fn build(
        &self,
        table: &ObservationTable,
        rows: &[usize],
        overrides: Option<&Overrides>,
    ) -> Result<DMatrix<f64>> {
        let p = self.width();
        let mut out = DMatrix::zeros(rows.len(), p);
        for (i, &r) in rows.iter().enumerate() {
            out[(i, 0)] = 1.0;
            let mut j = 1;
            for term in &self.terms {
                let name = match term {
                    TermInfo::Numeric { column } => column,
                    TermInfo::Categorical { column, .. } => column,
                    TermInfo::Spline { column, .. } => column,
                };
                let v = cell_value(table, name, r, overrides)?;
                match term {
                    TermInfo::Numeric { .. } => {
                        out[(i, j)] = v;
                        j += 1;
                    }
                    TermInfo::Categorical {
                        column,
                        levels,
                        reference,
                    } => {
                        let code = v.round() as i64;
                        if (v - code as f64).abs() > 1e-9 || !levels.contains(&code) {
                            return Err(Error::Numeric(format!(
                                "row {r}: value {v} is not a level of '{column}'"
                            )));
                        }
                        for l in levels.iter().filter(|&&l| l != *reference) {
                            out[(i, j)] = if code == *l { 1.0 } else { 0.0 };
                            j += 1;
                        }
                    }
                    TermInfo::Spline { basis, .. } => {
                        for b in basis.eval(v).into_iter().skip(1) {
                            out[(i, j)] = b;
                            j += 1;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Response values for `rows`, honoring overrides and the mask.
    pub fn response_vector(
        &self,
        table: &ObservationTable,
        rows: &[usize],
        overrides: Option<&Overrides>,
    ) -> Result<DVector<f64>> {
        let mut y = DVector::zeros(rows.len());
        for (i, &r) in rows.iter().enumerate() {
            y[i] = cell_value(table, &self.response, r, overrides)?;
        }
        Ok(y)
    }
}

fn cell_value(
    table: &ObservationTable,
    name: &str,
    row: usize,
    overrides: Option<&Overrides>,
) -> Result<f64> {
    if let Some(ov) = overrides.and_then(|o| o.get(name)) {
        return Ok(ov[row]);
    }
    let col = table.column(name)?;
    if col.missing[row] {
        return Err(Error::MissingData {
            row,
            column: name.to_string(),
        });
    }
    Ok(col.values[row])
}

/// Design matrix with labeled columns; the intercept is always column 0.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub column_names: Vec<String>,
}

/// One-shot design build over all rows of the table.
pub fn build_design(
    formula: &Formula,
    table: &ObservationTable,
    overrides: Option<&Overrides>,
) -> Result<DesignMatrix> {
    let rows: Vec<usize> = (0..table.n_rows()).collect();
    let info = DesignInfo::new(formula, table, &rows)?;
    let values = info.build(table, &rows, overrides)?;
    Ok(DesignMatrix {
        values,
        column_names: info.column_names.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{ColumnRole, TableBuilder};
    use approx::assert_abs_diff_eq;

    #[test]
    fn parses_numeric_and_categorical() {
        let f = parse_formula("y ~ z1 + cat(z2)").unwrap();
        assert_eq!(f.response, "y");
        assert_eq!(
            f.terms,
            vec![Term::Numeric("z1".into()), Term::Categorical("z2".into())]
        );
    }

    #[test]
    fn parses_spline_term() {
        let f = parse_formula("y ~ z1 + cat(z2) + bs(a,3,4)").unwrap();
        assert_eq!(
            f.terms[2],
            Term::Spline {
                column: "a".into(),
                internal_knots: 3,
                order: 4
            }
        );
    }

    #[test]
    fn double_tilde_is_an_error_at_position() {
        let err = parse_formula("y ~ ~ z1").unwrap_err();
        match err {
            Error::Formula { position, .. } => assert_eq!(position, 4),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_and_reused_response_rejected() {
        assert!(parse_formula("y ~ z + z").is_err());
        assert!(parse_formula("y ~ z + cat(z)").is_err());
        assert!(parse_formula("y ~ y").is_err());
    }

    #[test]
    fn whitespace_insensitive() {
        let a = parse_formula("y~z1+bs( a , 3 , 4 )").unwrap();
        let b = parse_formula("y ~ z1 + bs(a,3,4)").unwrap();
        assert_eq!(a, b);
    }

    fn small_table() -> crate::tabular::ObservationTable {
        TableBuilder::new()
            .numeric("y", ColumnRole::Response, vec![1.0, 0.0, 1.0, 0.0, 1.0])
            .numeric("z1", ColumnRole::Covariate, vec![0.1, -0.2, 0.3, 1.5, -1.1])
            .categorical(
                "z2",
                ColumnRole::Covariate,
                vec![1, 2, 3],
                vec![1.0, 2.0, 3.0, 2.0, 1.0],
            )
            .build()
            .unwrap()
    }

    #[test]
    fn intercept_only_design() {
        let t = small_table();
        let f = parse_formula("y ~ 1").unwrap();
        let d = build_design(&f, &t, None).unwrap();
        assert_eq!(d.values.shape(), (5, 1));
        assert!(d.values.iter().all(|&v| v == 1.0));
        assert_eq!(d.column_names, vec!["(intercept)"]);
    }

    #[test]
    fn categorical_one_hot_minus_reference() {
        let t = small_table();
        let f = parse_formula("y ~ cat(z2)").unwrap();
        let d = build_design(&f, &t, None).unwrap();
        assert_eq!(d.column_names, vec!["(intercept)", "z2=2", "z2=3"]);
        // row 1 has level 2 -> indicators (1, 0); row 2 level 3 -> (0, 1)
        assert_eq!((d.values[(1, 1)], d.values[(1, 2)]), (1.0, 0.0));
        assert_eq!((d.values[(2, 1)], d.values[(2, 2)]), (0.0, 1.0));
        // reference level rows are all-zero indicators
        assert_eq!((d.values[(0, 1)], d.values[(0, 2)]), (0.0, 0.0));
    }

    #[test]
    fn spline_block_complements_omitted_basis() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let t = TableBuilder::new()
            .numeric("y", ColumnRole::Response, vec![0.0; 50])
            .numeric("a", ColumnRole::Covariate, xs.clone())
            .build()
            .unwrap();
        let f = parse_formula("y ~ bs(a,3,4)").unwrap();
        let d = build_design(&f, &t, None).unwrap();
        // intercept + 6 basis columns: the full 7-function cubic basis sums
        // to one per row, so the design keeps functions 2..7 and the block
        // sums to 1 - B_1(x)
        assert_eq!(d.values.shape(), (50, 7));
        let full = crate::splines::SplineBasis::from_data(&xs, 3, 4).unwrap();
        for i in 0..50 {
            let s: f64 = (1..7).map(|j| d.values[(i, j)]).sum();
            assert_abs_diff_eq!(s, 1.0 - full.eval(xs[i])[0], epsilon = 1e-12);
        }
        // and the design stays full rank when fitted with an intercept
        let gram = d.values.transpose() * &d.values;
        assert!(crate::linalg::Cholesky::new(&gram).is_ok());
    }

    #[test]
    fn masked_cell_without_override_errors() {
        let t = TableBuilder::new()
            .numeric("y", ColumnRole::Response, vec![1.0, 0.0, 1.0])
            .numeric("z", ColumnRole::Covariate, vec![0.5, 0.7, 0.9])
            .incomplete("z", vec![false, true, false])
            .build()
            .unwrap();
        let f = parse_formula("y ~ z").unwrap();
        let err = build_design(&f, &t, None).unwrap_err();
        match err {
            Error::MissingData { row, column } => {
                assert_eq!((row, column.as_str()), (1, "z"));
            }
            other => panic!("unexpected {other}"),
        }
        // an override fills the hole
        let mut ov = Overrides::new();
        ov.insert("z".into(), vec![0.5, 0.6, 0.9]);
        let d = build_design(&f, &t, Some(&ov)).unwrap();
        assert_eq!(d.values[(1, 1)], 0.6);
    }

    #[test]
    fn deterministic_and_width_checks() {
        let t = small_table();
        let f = parse_formula("y ~ z1 + cat(z2)").unwrap();
        let a = build_design(&f, &t, None).unwrap();
        let b = build_design(&f, &t, None).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.values.ncols(), 1 + 1 + 2);
    }
}
