//! Column schemas, CSV input/output and a typed columnar table.
//!
//! Schemas are TOML documents with one `[[column]]` entry per column:
//!
//! ```toml
//! [[column]]
//! name = "age"
//! kind = "numerical"
//! min = 17.0
//! max = 90.0
//!
//! [[column]]
//! name = "sex"
//! kind = "categorical"
//! categories = ["F", "M"]
//! ```
//!
//! Bounds and category lists are public metadata; nothing here is inferred
//! from the private rows.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SchemaViolation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Numerical { min: f64, max: f64 },
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn numerical(name: &str, min: f64, max: f64) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Numerical { min, max },
        }
    }

    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Categorical {
                categories: categories.iter().map(|c| c.to_string()).collect(),
            },
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, ColumnKind::Categorical { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    #[serde(rename = "column")]
    pub columns: Vec<ColumnSpec>,
}

impl ColumnSchema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let schema = ColumnSchema { columns };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut seen = HashSet::new();
        if self.columns.is_empty() {
            return Err(Error::InvalidConfig("schema has no columns".into()));
        }
        for c in &self.columns {
            let mut bad = |reason: String| {
                problems.push(SchemaViolation {
                    row: None,
                    column: c.name.clone(),
                    reason,
                })
            };
            if !seen.insert(c.name.as_str()) {
                bad("duplicate column name".into());
            }
            match &c.kind {
                ColumnKind::Numerical { min, max } => {
                    if !(min.is_finite() && max.is_finite() && min < max) {
                        bad(format!("bounds ({min}, {max}) must be finite with min < max"));
                    }
                }
                ColumnKind::Categorical { categories } => {
                    if categories.is_empty() {
                        bad("category list is empty".into());
                    }
                    let unique: HashSet<_> = categories.iter().collect();
                    if unique.len() != categories.len() {
                        bad("category list has duplicates".into());
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Schema(problems))
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: ColumnSchema = toml::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes to TOML")
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }
}

/// Untyped CSV content: a header and string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(|s| s.to_string()).collect());
        }
        Ok(RawTable { header, rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.header)?;
        for r in &self.rows {
            wtr.write_record(r)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numerical(Vec<f64>),
    /// Indices into the schema's category list.
    Categorical(Vec<usize>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numerical(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Schema-validated table stored column by column, in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: ColumnSchema,
    columns: Vec<Column>,
}

impl Table {
    pub fn new(schema: ColumnSchema, columns: Vec<Column>) -> Result<Self> {
        if columns.len() != schema.columns.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} columns for a schema of {}",
                columns.len(),
                schema.columns.len()
            )));
        }
        let n = columns.first().map_or(0, Column::len);
        for (spec, col) in schema.columns.iter().zip(&columns) {
            let ok = match (&spec.kind, col) {
                (ColumnKind::Numerical { .. }, Column::Numerical(_)) => true,
                (ColumnKind::Categorical { categories }, Column::Categorical(v)) => {
                    v.iter().all(|&c| c < categories.len())
                }
                _ => false,
            };
            if !ok || col.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "column `{}` does not match its schema entry",
                    spec.name
                )));
            }
        }
        Ok(Table { schema, columns })
    }

    /// Parses string cells against `schema`. Every offending cell is reported
    /// with its coordinates; missing cells are errors, never imputed.
    pub fn from_raw(raw: &RawTable, schema: &ColumnSchema) -> Result<Self> {
        let mut problems = Vec::new();
        let index: HashMap<&str, usize> = raw
            .header
            .iter()
            .enumerate()
            .map(|(i, h)| (h.as_str(), i))
            .collect();
        let mut positions = Vec::with_capacity(schema.columns.len());
        for c in &schema.columns {
            match index.get(c.name.as_str()) {
                Some(&p) => positions.push(p),
                None => problems.push(SchemaViolation {
                    row: None,
                    column: c.name.clone(),
                    reason: "column missing from header".into(),
                }),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Schema(problems));
        }

        let mut columns: Vec<Column> = schema
            .columns
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Numerical { .. } => Column::Numerical(Vec::with_capacity(raw.rows.len())),
                ColumnKind::Categorical { .. } => {
                    Column::Categorical(Vec::with_capacity(raw.rows.len()))
                }
            })
            .collect();

        for (r, row) in raw.rows.iter().enumerate() {
            for ((spec, &pos), col) in schema.columns.iter().zip(&positions).zip(&mut columns) {
                let mut bad = |reason: String| {
                    problems.push(SchemaViolation {
                        row: Some(r),
                        column: spec.name.clone(),
                        reason,
                    })
                };
                let cell = row.get(pos).map(|s| s.trim()).unwrap_or("");
                if cell.is_empty() {
                    bad("missing value".into());
                    continue;
                }
                match (&spec.kind, col) {
                    (ColumnKind::Numerical { min, max }, Column::Numerical(v)) => {
                        match cell.parse::<f64>() {
                            Ok(x) if x.is_finite() && x >= *min && x <= *max => v.push(x),
                            Ok(x) => bad(format!("value {x} outside bounds [{min}, {max}]")),
                            Err(_) => bad(format!("`{cell}` is not a number")),
                        }
                    }
                    (ColumnKind::Categorical { categories }, Column::Categorical(v)) => {
                        match categories.iter().position(|c| c == cell) {
                            Some(i) => v.push(i),
                            None => bad(format!("unknown category `{cell}`")),
                        }
                    }
                    _ => unreachable!("column storage follows the schema"),
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Schema(problems));
        }
        Ok(Table {
            schema: schema.clone(),
            columns,
        })
    }

    pub fn load_csv(path: &Path, schema: &ColumnSchema) -> Result<Self> {
        Self::from_raw(&RawTable::load(path)?, schema)
    }

    pub fn to_raw(&self) -> RawTable {
        let header = self.schema.columns.iter().map(|c| c.name.clone()).collect();
        let rows = (0..self.n_rows())
            .map(|r| {
                self.schema
                    .columns
                    .iter()
                    .zip(&self.columns)
                    .map(|(spec, col)| match (&spec.kind, col) {
                        (_, Column::Numerical(v)) => format!("{}", v[r]),
                        (ColumnKind::Categorical { categories }, Column::Categorical(v)) => {
                            categories[v[r]].clone()
                        }
                        _ => unreachable!(),
                    })
                    .collect()
            })
            .collect();
        RawTable { header, rows }
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.to_raw().save(path)
    }

    pub fn schema(&self) -> &ColumnSchema {
        &self.schema
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.schema.position(name).map(|i| &self.columns[i])
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Column::len)
    }

    /// Rows selected by `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Table {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                Column::Numerical(v) => Column::Numerical(idx.iter().map(|&i| v[i]).collect()),
                Column::Categorical(v) => Column::Categorical(idx.iter().map(|&i| v[i]).collect()),
            })
            .collect();
        Table {
            schema: self.schema.clone(),
            columns,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> ColumnSchema {
        ColumnSchema::new(vec![
            ColumnSpec::numerical("x", 0.0, 10.0),
            ColumnSpec::categorical("c", &["A", "B"]),
        ])
        .unwrap()
    }

    #[test]
    fn toml_round_trip() {
        let s = schema();
        let back = ColumnSchema::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn invalid_schemas() {
        assert!(ColumnSchema::new(vec![ColumnSpec::numerical("x", 1.0, 1.0)]).is_err());
        assert!(ColumnSchema::new(vec![ColumnSpec::categorical("c", &[])]).is_err());
        assert!(ColumnSchema::new(vec![ColumnSpec::categorical("c", &["a", "a"])]).is_err());
        assert!(ColumnSchema::new(vec![
            ColumnSpec::numerical("x", 0.0, 1.0),
            ColumnSpec::numerical("x", 0.0, 1.0)
        ])
        .is_err());
    }

    #[test]
    fn violations_carry_coordinates() {
        let csv = "c,x\nA,1\nC,2\nB,11\n,3\nB,abc\n";
        let raw = RawTable::read_csv(csv.as_bytes()).unwrap();
        let Err(Error::Schema(v)) = Table::from_raw(&raw, &schema()) else {
            panic!("expected schema error");
        };
        let coords: Vec<_> = v.iter().map(|p| (p.row, p.column.as_str())).collect();
        assert_eq!(
            coords,
            vec![(Some(1), "c"), (Some(2), "x"), (Some(3), "c"), (Some(4), "x")]
        );
    }

    #[test]
    fn csv_round_trip_with_quoting() {
        let s = ColumnSchema::new(vec![ColumnSpec::categorical("c", &["a,b", "q\"x"])]).unwrap();
        let t = Table::new(s.clone(), vec![Column::Categorical(vec![0, 1, 0])]).unwrap();
        let mut buf = Vec::new();
        t.to_raw().write_csv(&mut buf).unwrap();
        let back = Table::from_raw(&RawTable::read_csv(buf.as_slice()).unwrap(), &s).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn header_order_is_irrelevant() {
        let raw = RawTable::read_csv("c,x\nB,2.5\n".as_bytes()).unwrap();
        let t = Table::from_raw(&raw, &schema()).unwrap();
        assert_eq!(t.columns()[0], Column::Numerical(vec![2.5]));
        assert_eq!(t.columns()[1], Column::Categorical(vec![1]));
    }
}
