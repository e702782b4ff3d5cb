//! Rectangular observation tables with per-cell missingness, plus
//! delimited-text ingestion.
//!
//! A table holds one id column (synthesized as 1..n when the file has
//! none), named numeric or integer-coded categorical columns, and at most
//! one incomplete column whose missing cells are tracked in a mask. A
//! numeric column may additionally be declared the *square companion* of
//! the incomplete column (it stores the incomplete value squared and shares
//! its mask); that layout is what lets second-moment substitution work for
//! squared covariate terms.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ColumnRole {
    Response,
    Covariate,
    Auxiliary,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnKind {
    Numeric,
    /// Integer-coded categorical; levels must be exactly 1..=K with K >= 2.
    Categorical { levels: Vec<i64> },
}

#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

impl Column {
    pub fn levels(&self) -> Option<&[i64]> {
        match &self.kind {
            ColumnKind::Categorical { levels } => Some(levels),
            ColumnKind::Numeric => None,
        }
    }
}

/// Count of rows, count of incomplete rows, and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MissingnessSummary {
    pub n: usize,
    pub m: usize,
    pub rate: f64,
}

#[derive(Debug, Clone)]
pub struct ObservationTable {
    id_name: String,
    subject_ids: Vec<i64>,
    columns: Vec<Column>,
    index: HashMap<String, usize>,
    roles: HashMap<String, ColumnRole>,
    incomplete: Option<String>,
    square_companion: Option<String>,
}

impl ObservationTable {
    pub fn n_rows(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn id_name(&self) -> &str {
        &self.id_name
    }

    pub fn subject_ids(&self) -> &[i64] {
        &self.subject_ids
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.index
            .get(name)
            .map(|&i| &self.columns[i])
            .ok_or_else(|| Error::Schema(format!("unknown column '{name}'")))
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn role(&self, name: &str) -> Option<ColumnRole> {
        self.roles.get(name).copied()
    }

    pub fn incomplete_column(&self) -> Option<&str> {
        self.incomplete.as_deref()
    }

    pub fn square_companion(&self) -> Option<&str> {
        self.square_companion.as_deref()
    }

    /// R indicator per row: true when the row is completely observed.
    pub fn complete_mask(&self) -> Vec<bool> {
        match &self.incomplete {
            None => vec![true; self.n_rows()],
            Some(col) => self.column(col).unwrap().missing.iter().map(|&m| !m).collect(),
        }
    }

    pub fn complete_rows(&self) -> Vec<usize> {
        self.complete_mask()
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| c.then_some(i))
            .collect()
    }

    pub fn incomplete_rows(&self) -> Vec<usize> {
        self.complete_mask()
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| (!c).then_some(i))
            .collect()
    }

    pub fn missingness_summary(&self) -> MissingnessSummary {
        let n = self.n_rows();
        let m = self.incomplete_rows().len();
        MissingnessSummary {
            n,
            m,
            rate: if n == 0 { 0.0 } else { m as f64 / n as f64 },
        }
    }

    /// Copy of the table containing `rows` in order (duplicates allowed).
    /// With `reassign_ids`, subjects are renumbered 1..len so the id
    /// uniqueness invariant holds after resampling with replacement.
    pub fn gather(&self, rows: &[usize], reassign_ids: bool) -> ObservationTable {
        let subject_ids = if reassign_ids {
            (1..=rows.len() as i64).collect()
        } else {
            rows.iter().map(|&r| self.subject_ids[r]).collect()
        };
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                kind: c.kind.clone(),
                values: rows.iter().map(|&r| c.values[r]).collect(),
                missing: rows.iter().map(|&r| c.missing[r]).collect(),
            })
            .collect();
        ObservationTable {
            id_name: self.id_name.clone(),
            subject_ids,
            columns,
            index: self.index.clone(),
            roles: self.roles.clone(),
            incomplete: self.incomplete.clone(),
            square_companion: self.square_companion.clone(),
        }
    }

    /// Overwrite a column's values and clear its mask (used when an
    /// augmentation substitutes pseudo-values for the incomplete column).
    pub fn fill_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_rows() {
            return Err(Error::Schema(format!(
                "fill_column '{name}': {} values for {} rows",
                values.len(),
                self.n_rows()
            )));
        }
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::Schema(format!("unknown column '{name}'")))?;
        self.columns[i].missing = vec![false; values.len()];
        self.columns[i].values = values;
        Ok(())
    }

    /// Drop missingness bookkeeping entirely (a materialized pseudo-complete
    /// table has no masked cells left).
    pub fn mark_complete(&mut self) {
        self.incomplete = None;
        self.square_companion = None;
        for c in &mut self.columns {
            for m in &mut c.missing {
                *m = false;
            }
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_path(path)?;
        let mut header = vec![self.id_name.clone()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        w.write_record(&header).map_err(csv_io)?;
        for r in 0..self.n_rows() {
            let mut rec = vec![self.subject_ids[r].to_string()];
            for c in &self.columns {
                if c.missing[r] {
                    rec.push("NA".to_string());
                } else {
                    // Display for f64 is the shortest round-trip form
                    rec.push(format!("{}", c.values[r]));
                }
            }
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Schema(format!("csv write error: {e}"))
}

/// Declares how a delimited file maps onto a table.
#[derive(Debug, Clone)]
pub struct TableSchema {
    /// Id column name; when `None`, ids 1..n are synthesized.
    pub id: Option<String>,
    pub response: String,
    pub covariates: Vec<String>,
    pub auxiliaries: Vec<String>,
    pub incomplete: Option<String>,
    pub square_companion: Option<String>,
    /// Categorical columns, each with an optional explicit level list.
    pub categorical: BTreeMap<String, Option<Vec<i64>>>,
    /// Cell contents treated as missing (after trimming).
    pub missing_sentinels: Vec<String>,
    pub delimiter: u8,
}

impl TableSchema {
    pub fn new(response: impl Into<String>) -> Self {
        TableSchema {
            id: None,
            response: response.into(),
            covariates: Vec::new(),
            auxiliaries: Vec::new(),
            incomplete: None,
            square_companion: None,
            categorical: BTreeMap::new(),
            missing_sentinels: vec![String::new(), "NA".to_string()],
            delimiter: b',',
        }
    }

    fn declared_columns(&self) -> Vec<(String, ColumnRole)> {
        let mut out = vec![(self.response.clone(), ColumnRole::Response)];
        for c in &self.covariates {
            out.push((c.clone(), ColumnRole::Covariate));
        }
        for a in &self.auxiliaries {
            out.push((a.clone(), ColumnRole::Auxiliary));
        }
        out
    }
}

/// Load a delimited text file (first row header, UTF-8) under `schema`.
pub fn load_csv(path: &Path, schema: &TableSchema) -> Result<ObservationTable> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: format!("cannot read header: {e}"),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let col_of: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();

    let declared = schema.declared_columns();
    for (name, _) in &declared {
        if !col_of.contains_key(name.as_str()) {
            return Err(Error::Schema(format!(
                "column '{name}' required by the schema is not in the header"
            )));
        }
    }
    if let Some(id) = &schema.id {
        if !col_of.contains_key(id.as_str()) {
            return Err(Error::Schema(format!("id column '{id}' is not in the header")));
        }
    }
    if let Some(inc) = &schema.incomplete {
        if !declared.iter().any(|(n, _)| n == inc) {
            return Err(Error::Schema(format!(
                "incomplete column '{inc}' must be declared as response, covariate, or auxiliary"
            )));
        }
    }
    if schema.square_companion.is_some() && schema.incomplete.is_none() {
        return Err(Error::Schema(
            "square companion declared without an incomplete column".into(),
        ));
    }

    let mut raw: Vec<Vec<String>> = Vec::new();
    let mut record_lines: Vec<usize> = Vec::new();
    for (ri, rec) in reader.records().enumerate() {
        let line = ri + 2; // header is line 1
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: format!("{e}"),
        })?;
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        raw.push(rec.iter().map(|c| c.trim().to_string()).collect());
        record_lines.push(line);
    }
    let n = raw.len();

    let subject_ids: Vec<i64> = match &schema.id {
        None => (1..=n as i64).collect(),
        Some(id) => {
            let ci = col_of[id.as_str()];
            let mut ids = Vec::with_capacity(n);
            for (r, rec) in raw.iter().enumerate() {
                ids.push(rec[ci].parse::<i64>().map_err(|_| Error::Parse {
                    line: record_lines[r],
                    message: format!("id column '{id}': cannot parse '{}'", rec[ci]),
                })?);
            }
            ids
        }
    };
    {
        let mut seen = HashSet::new();
        for (r, id) in subject_ids.iter().enumerate() {
            if !seen.insert(id) {
                return Err(Error::Schema(format!(
                    "duplicate subject id {id} at line {}",
                    record_lines.get(r).copied().unwrap_or(0)
                )));
            }
        }
    }

    let is_missing = |cell: &str| schema.missing_sentinels.iter().any(|s| s == cell);
    let mut columns = Vec::new();
    for (name, _) in &declared {
        let ci = col_of[name.as_str()];
        let maskable = Some(name) == schema.incomplete.as_ref()
            || Some(name) == schema.square_companion.as_ref();
        let mut values = Vec::with_capacity(n);
        let mut missing = Vec::with_capacity(n);
        for (r, rec) in raw.iter().enumerate() {
            let cell = rec[ci].as_str();
            if is_missing(cell) {
                if !maskable {
                    return Err(Error::Schema(format!(
                        "missing value at line {} in column '{name}', which is not declared incomplete",
                        record_lines[r]
                    )));
                }
                values.push(f64::NAN);
                missing.push(true);
            } else {
                let v = cell.parse::<f64>().map_err(|_| Error::Parse {
                    line: record_lines[r],
                    message: format!("column '{name}': cannot parse '{cell}' as a number"),
                })?;
                values.push(v);
                missing.push(false);
            }
        }
        let kind = if let Some(spec_levels) = schema.categorical.get(name) {
            let levels = infer_levels(name, &values, &missing, spec_levels.as_deref())?;
            ColumnKind::Categorical { levels }
        } else {
            ColumnKind::Numeric
        };
        columns.push(Column {
            name: name.clone(),
            kind,
            values,
            missing,
        });
    }

    let roles: HashMap<String, ColumnRole> = declared.into_iter().collect();
    let table = ObservationTable {
        id_name: schema.id.clone().unwrap_or_else(|| "id".to_string()),
        subject_ids,
        columns: columns.clone(),
        index: columns
            .iter()
            .enumerate()
            .map(|(i, c)| (c.name.clone(), i))
            .collect(),
        roles,
        incomplete: schema.incomplete.clone(),
        square_companion: schema.square_companion.clone(),
    };
    validate(&table)?;
    Ok(table)
}

fn infer_levels(
    name: &str,
    values: &[f64],
    missing: &[bool],
    explicit: Option<&[i64]>,
) -> Result<Vec<i64>> {
    let mut seen: Vec<i64> = Vec::new();
    for (r, (&v, &m)) in values.iter().zip(missing).enumerate() {
        if m {
            continue;
        }
        if v.fract() != 0.0 {
            return Err(Error::Parse {
                line: r + 2,
                message: format!("categorical column '{name}': non-integer value {v}"),
            });
        }
        let code = v as i64;
        if !seen.contains(&code) {
            seen.push(code);
        }
    }
    let levels = match explicit {
        Some(lv) => {
            for code in &seen {
                if !lv.contains(code) {
                    return Err(Error::Schema(format!(
                        "categorical column '{name}': value {code} outside the configured levels {lv:?}"
                    )));
                }
            }
            lv.to_vec()
        }
        None => seen,
    };
    validate_level_set(name, &levels)?;
    Ok(levels)
}

fn validate_level_set(name: &str, levels: &[i64]) -> Result<()> {
    let k = levels.len();
    if k < 2 {
        return Err(Error::Schema(format!(
            "categorical column '{name}' needs at least 2 levels, found {k}"
        )));
    }
    let mut sorted = levels.to_vec();
    sorted.sort_unstable();
    if sorted != (1..=k as i64).collect::<Vec<_>>() {
        return Err(Error::Schema(format!(
            "categorical column '{name}': levels must be exactly 1..{k}, found {levels:?}"
        )));
    }
    Ok(())
}

fn validate(table: &ObservationTable) -> Result<()> {
    let n = table.n_rows();
    for c in &table.columns {
        if c.values.len() != n || c.missing.len() != n {
            return Err(Error::Schema(format!("column '{}' has ragged length", c.name)));
        }
        let maskable = Some(c.name.as_str()) == table.incomplete.as_deref()
            || Some(c.name.as_str()) == table.square_companion.as_deref();
        if !maskable && c.missing.iter().any(|&m| m) {
            return Err(Error::Schema(format!(
                "column '{}' has masked cells but is not the incomplete column",
                c.name
            )));
        }
    }
    if let (Some(inc), Some(sq)) = (&table.incomplete, &table.square_companion) {
        let inc_col = table.column(inc)?;
        let sq_col = table.column(sq)?;
        if matches!(sq_col.kind, ColumnKind::Categorical { .. }) {
            return Err(Error::Schema(format!(
                "square companion '{sq}' must be numeric"
            )));
        }
        if inc_col.missing != sq_col.missing {
            return Err(Error::Schema(format!(
                "square companion '{sq}' mask differs from incomplete column '{inc}'"
            )));
        }
        for r in 0..n {
            if !inc_col.missing[r] {
                let want = inc_col.values[r] * inc_col.values[r];
                if (sq_col.values[r] - want).abs() > 1e-8 * want.abs().max(1.0) {
                    return Err(Error::Schema(format!(
                        "square companion '{sq}' row {r} is not the square of '{inc}'"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// In-memory table construction (generators, tests, fixtures).
#[derive(Debug, Default)]
pub struct TableBuilder {
    id_name: Option<String>,
    subject_ids: Option<Vec<i64>>,
    columns: Vec<(Column, ColumnRole)>,
    incomplete: Option<(String, Vec<bool>)>,
    square_companion: Option<String>,
}

impl TableBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subject_ids(mut self, ids: Vec<i64>) -> Self {
        self.subject_ids = Some(ids);
        self
    }

    pub fn id_name(mut self, name: impl Into<String>) -> Self {
        self.id_name = Some(name.into());
        self
    }

    pub fn numeric(mut self, name: &str, role: ColumnRole, values: Vec<f64>) -> Self {
        let n = values.len();
        self.columns.push((
            Column {
                name: name.to_string(),
                kind: ColumnKind::Numeric,
                values,
                missing: vec![false; n],
            },
            role,
        ));
        self
    }

    pub fn categorical(mut self, name: &str, role: ColumnRole, levels: Vec<i64>, values: Vec<f64>) -> Self {
        let n = values.len();
        self.columns.push((
            Column {
                name: name.to_string(),
                kind: ColumnKind::Categorical { levels },
                values,
                missing: vec![false; n],
            },
            role,
        ));
        self
    }

    /// Mark `name` as the incomplete column with the given mask.
    pub fn incomplete(mut self, name: &str, mask: Vec<bool>) -> Self {
        self.incomplete = Some((name.to_string(), mask));
        self
    }

    pub fn square_companion(mut self, name: &str) -> Self {
        self.square_companion = Some(name.to_string());
        self
    }

    pub fn build(self) -> Result<ObservationTable> {
        let n = self
            .columns
            .first()
            .map(|(c, _)| c.values.len())
            .unwrap_or(0);
        let subject_ids = self.subject_ids.unwrap_or_else(|| (1..=n as i64).collect());
        if subject_ids.len() != n {
            return Err(Error::Schema("subject id count differs from row count".into()));
        }
        let mut columns: Vec<Column> = Vec::new();
        let mut roles = HashMap::new();
        for (mut c, role) in self.columns {
            if let Some((inc, mask)) = &self.incomplete {
                if &c.name == inc {
                    if mask.len() != n {
                        return Err(Error::Schema("incomplete mask length mismatch".into()));
                    }
                    c.missing = mask.clone();
                    for (v, &m) in c.values.iter_mut().zip(mask) {
                        if m {
                            *v = f64::NAN;
                        }
                    }
                }
                if Some(c.name.as_str()) == self.square_companion.as_deref() {
                    c.missing = mask.clone();
                    for (v, &m) in c.values.iter_mut().zip(mask) {
                        if m {
                            *v = f64::NAN;
                        }
                    }
                }
            }
            if let ColumnKind::Categorical { levels } = &c.kind {
                validate_level_set(&c.name, levels)?;
            }
            roles.insert(c.name.clone(), role);
            columns.push(c);
        }
        {
            let mut seen = HashSet::new();
            if !subject_ids.iter().all(|id| seen.insert(*id)) {
                return Err(Error::Schema("subject ids are not unique".into()));
            }
        }
        let table = ObservationTable {
            id_name: self.id_name.unwrap_or_else(|| "id".to_string()),
            subject_ids,
            index: columns
                .iter()
                .enumerate()
                .map(|(i, c)| (c.name.clone(), i))
                .collect(),
            columns,
            roles,
            incomplete: self.incomplete.map(|(name, _)| name),
            square_companion: self.square_companion,
        };
        validate(&table)?;
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn registry_schema() -> TableSchema {
        let mut s = TableSchema::new("rehab");
        s.covariates = vec!["male".into(), "age".into(), "race".into(), "er".into()];
        s.auxiliaries = vec!["year".into()];
        s.incomplete = Some("race".into());
        s.categorical.insert("race".into(), None);
        s
    }

    #[test]
    fn blank_cell_sets_mask() {
        let f = write_tmp("rehab,male,age,race,er,year\n1,1,40,1,0,2004\n0,0,55,,1,2005\n1,1,33,2,0,2006\n");
        let t = load_csv(f.path(), &registry_schema()).unwrap();
        let race = t.column("race").unwrap();
        assert_eq!(race.missing, vec![false, true, false]);
        assert!(race.values[1].is_nan());
    }

    #[test]
    fn all_present_means_no_missingness() {
        let f = write_tmp("rehab,male,age,race,er,year\n1,1,40,1,0,2004\n0,0,55,2,1,2005\n");
        let t = load_csv(f.path(), &registry_schema()).unwrap();
        let s = t.missingness_summary();
        assert_eq!((s.n, s.m), (2, 0));
        assert_eq!(s.rate, 0.0);
    }

    #[test]
    fn registry_shaped_fixture_summary() {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/registry_tiny.csv");
        let t = load_csv(&path, &registry_schema()).unwrap();
        let s = t.missingness_summary();
        assert_eq!((s.n, s.m), (4, 1));
        assert_abs_diff_eq!(s.rate, 0.25);
    }

    #[test]
    fn wrong_arity_reports_line() {
        let f = write_tmp("rehab,male,age,race,er,year\n1,1,40,1,0,2004\n0,0,55,2,1\n");
        let err = load_csv(f.path(), &registry_schema()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn missing_in_undeclared_column_is_schema_error() {
        let f = write_tmp("rehab,male,age,race,er,year\n1,,40,1,0,2004\n");
        let err = load_csv(f.path(), &registry_schema()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn na_sentinel_and_levels() {
        let f = write_tmp("rehab,male,age,race,er,year\n1,1,40,2,0,2004\n0,0,55,NA,1,2005\n1,0,60,1,1,2006\n0,1,21,3,0,2007\n");
        let t = load_csv(f.path(), &registry_schema()).unwrap();
        // first-appearance inference still yields the validated set {1,2,3}
        assert_eq!(t.column("race").unwrap().levels().unwrap(), &[2, 1, 3]);
        assert_eq!(t.missingness_summary().m, 1);
    }

    #[test]
    fn bad_level_set_rejected() {
        let f = write_tmp("rehab,male,age,race,er,year\n1,1,40,2,0,2004\n0,0,55,5,1,2005\n");
        let err = load_csv(f.path(), &registry_schema()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let t = TableBuilder::new()
            .numeric("y", ColumnRole::Response, vec![0.1, 2.0 / 3.0, -1.25e-7, 3.0])
            .numeric("z", ColumnRole::Covariate, vec![1.5, f64::MIN_POSITIVE, 1e300, -0.0])
            .incomplete("z", vec![false, false, true, false])
            .build()
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        t.write_csv(&path).unwrap();
        let mut schema = TableSchema::new("y");
        schema.covariates = vec!["z".into()];
        schema.incomplete = Some("z".into());
        schema.id = Some("id".into());
        let back = load_csv(&path, &schema).unwrap();
        for col in ["y", "z"] {
            let a = t.column(col).unwrap();
            let b = back.column(col).unwrap();
            assert_eq!(a.missing, b.missing);
            for (x, y) in a.values.iter().zip(&b.values) {
                if !x.is_nan() {
                    assert_eq!(x.to_bits(), y.to_bits(), "column {col}");
                }
            }
        }
    }

    #[test]
    fn summary_counts_match_mask() {
        let t = TableBuilder::new()
            .numeric("y", ColumnRole::Response, vec![1.0; 10])
            .numeric("z", ColumnRole::Covariate, (0..10).map(|i| i as f64).collect())
            .incomplete("z", (0..10).map(|i| i % 3 == 0).collect())
            .build()
            .unwrap();
        let s = t.missingness_summary();
        assert_eq!((s.n, s.m), (10, 4));
        assert_abs_diff_eq!(s.rate, 0.4);
        assert_eq!(t.incomplete_rows(), vec![0, 3, 6, 9]);
    }

    #[test]
    fn tab_delimited_files_load() {
        let f = write_tmp("rehab\tmale\tage\trace\ter\tyear\n1\t1\t40\t1\t0\t2004\n0\t0\t55\tNA\t1\t2005\n1\t0\t33\t2\t1\t2006\n");
        let mut schema = registry_schema();
        schema.delimiter = b'\t';
        let t = load_csv(f.path(), &schema).unwrap();
        assert_eq!(t.missingness_summary().m, 1);
        assert_eq!(t.column("age").unwrap().values, vec![40.0, 55.0, 33.0]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = TableBuilder::new()
            .subject_ids(vec![1, 1])
            .numeric("y", ColumnRole::Response, vec![0.0, 1.0])
            .build();
        assert!(r.is_err());
    }

    #[test]
    fn square_companion_must_match() {
        let r = TableBuilder::new()
            .numeric("y", ColumnRole::Response, vec![1.0, 2.0])
            .numeric("z", ColumnRole::Covariate, vec![2.0, 3.0])
            .numeric("z2", ColumnRole::Covariate, vec![4.0, 8.0])
            .incomplete("z", vec![false, false])
            .square_companion("z2")
            .build();
        assert!(r.is_err());
        let ok = TableBuilder::new()
            .numeric("y", ColumnRole::Response, vec![1.0, 2.0])
            .numeric("z", ColumnRole::Covariate, vec![2.0, 3.0])
            .numeric("z2", ColumnRole::Covariate, vec![4.0, 9.0])
            .incomplete("z", vec![false, true])
            .square_companion("z2")
            .build();
        assert!(ok.is_ok());
    }
}
