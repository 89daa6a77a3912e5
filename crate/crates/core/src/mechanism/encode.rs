//! Mixed-type table <-> norm-bounded real matrix.
//!
//! Numerical columns are min-max scaled with the schema's public bounds,
//! categorical columns become one-hot blocks, and the whole matrix is then
//! multiplied by `1/sqrt(d)` so every row has Euclidean norm at most 1.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::table::{Column, ColumnKind, ColumnSchema, RawTable, Table};

/// Column layout of an encoded matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    schema: ColumnSchema,
    offsets: Vec<usize>,
    width: usize,
}

impl Encoding {
    pub fn new(schema: ColumnSchema) -> Self {
        let mut offsets = Vec::with_capacity(schema.columns.len());
        let mut width = 0;
        for c in &schema.columns {
            offsets.push(width);
            width += match &c.kind {
                ColumnKind::Numerical { .. } => 1,
                ColumnKind::Categorical { categories } => categories.len(),
            };
        }
        Encoding {
            schema,
            offsets,
            width,
        }
    }

    pub fn schema(&self) -> &ColumnSchema {
        &self.schema
    }

    /// Encoded width `d`.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Matrix columns `offset..offset + len` holding original column `i`.
    pub fn block(&self, i: usize) -> (usize, usize) {
        let len = match &self.schema.columns[i].kind {
            ColumnKind::Numerical { .. } => 1,
            ColumnKind::Categorical { categories } => categories.len(),
        };
        (self.offsets[i], len)
    }

    pub fn row_scale(&self) -> f64 {
        1.0 / (self.width as f64).sqrt()
    }

    /// Writes one table row into `out` before the row scaling.
    fn fill_unscaled(&self, table: &Table, r: usize, out: &mut [f64]) {
        for (i, (spec, col)) in self.schema.columns.iter().zip(table.columns()).enumerate() {
            let off = self.offsets[i];
            match (&spec.kind, col) {
                (ColumnKind::Numerical { min, max }, Column::Numerical(v)) => {
                    out[off] = (v[r] - min) / (max - min);
                }
                (ColumnKind::Categorical { .. }, Column::Categorical(v)) => {
                    out[off + v[r]] = 1.0;
                }
                _ => unreachable!("table follows its schema"),
            }
        }
    }

    /// Min-max / one-hot features without the `1/sqrt(d)` factor.
    pub fn features(&self, table: &Table) -> Result<Matrix> {
        self.check_table(table)?;
        let mut m = Matrix::zeros(table.n_rows(), self.width);
        for r in 0..table.n_rows() {
            self.fill_unscaled(table, r, m.row_mut(r));
        }
        Ok(m)
    }

    fn check_table(&self, table: &Table) -> Result<()> {
        if table.schema() != &self.schema {
            return Err(Error::DimensionMismatch(
                "table schema differs from the encoding schema".into(),
            ));
        }
        Ok(())
    }
}

/// The private matrix `X` together with how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    data: Matrix,
    encoding: Option<Encoding>,
    row_scale: f64,
    subsample_rate: Option<f64>,
}

impl EncodedMatrix {
    /// Wraps an already-normalized matrix; fails if any row norm exceeds 1.
    pub fn from_unit_rows(data: Matrix) -> Result<Self> {
        let worst = data.max_row_norm();
        if worst > 1.0 + 1e-12 || !data.is_finite() {
            return Err(Error::DimensionMismatch(format!(
                "rows must have norm <= 1, found {worst}"
            )));
        }
        Ok(EncodedMatrix {
            data,
            encoding: None,
            row_scale: 1.0,
            subsample_rate: None,
        })
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn encoding(&self) -> Option<&Encoding> {
        self.encoding.as_ref()
    }

    pub fn row_scale(&self) -> f64 {
        self.row_scale
    }

    pub fn subsample_rate(&self) -> Option<f64> {
        self.subsample_rate
    }

    pub fn n_rows(&self) -> usize {
        self.data.rows()
    }

    pub fn width(&self) -> usize {
        self.data.cols()
    }

    pub(crate) fn with_rows(&self, data: Matrix, rate: f64) -> Self {
        EncodedMatrix {
            data,
            encoding: self.encoding.clone(),
            row_scale: self.row_scale,
            subsample_rate: Some(self.subsample_rate.unwrap_or(1.0) * rate),
        }
    }
}

pub fn encode_table(table: &Table) -> Result<EncodedMatrix> {
    let encoding = Encoding::new(table.schema().clone());
    let scale = encoding.row_scale();
    let mut data = encoding.features(table)?;
    data.scale(scale);
    Ok(EncodedMatrix {
        data,
        row_scale: scale,
        encoding: Some(encoding),
        subsample_rate: None,
    })
}

/// Validates `raw` against `schema` and encodes it.
pub fn encode(raw: &RawTable, schema: &ColumnSchema) -> Result<EncodedMatrix> {
    encode_table(&Table::from_raw(raw, schema)?)
}

/// Maps encoded rows (e.g. generator output) back to a table: numerical
/// entries are unscaled and clipped to their bounds, one-hot blocks are
/// decoded by argmax (first maximum wins).
pub fn decode(rows: &Matrix, encoding: &Encoding) -> Result<Table> {
    if rows.cols() != encoding.width() {
        return Err(Error::DimensionMismatch(format!(
            "{} columns cannot be decoded with an encoding of width {}",
            rows.cols(),
            encoding.width()
        )));
    }
    let inv = 1.0 / encoding.row_scale();
    let n = rows.rows();
    let columns = encoding
        .schema()
        .columns
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let (off, len) = encoding.block(i);
            match &spec.kind {
                ColumnKind::Numerical { min, max } => Column::Numerical(
                    (0..n)
                        .map(|r| (min + rows.get(r, off) * inv * (max - min)).clamp(*min, *max))
                        .collect(),
                ),
                ColumnKind::Categorical { .. } => Column::Categorical(
                    (0..n)
                        .map(|r| argmax(&rows.row(r)[off..off + len]))
                        .collect(),
                ),
            }
        })
        .collect();
    Table::new(encoding.schema().clone(), columns)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::ColumnSpec;
    use proptest::prelude::*;

    #[test]
    fn numerical_column_scaling() {
        // d = 4: one numerical column plus a 3-way categorical.
        let schema = ColumnSchema::new(vec![
            ColumnSpec::numerical("x", 0.0, 10.0),
            ColumnSpec::categorical("c", &["p", "q", "r"]),
        ])
        .unwrap();
        let raw = RawTable::read_csv("x,c\n0,p\n5,q\n10,r\n".as_bytes()).unwrap();
        let enc = encode(&raw, &schema).unwrap();
        assert_eq!(enc.width(), 4);
        assert_eq!(enc.row_scale(), 0.5);
        assert_eq!(enc.data().col(0), vec![0.0, 0.25, 0.5]);
    }

    #[test]
    fn categorical_block_scaling() {
        let schema = ColumnSchema::new(vec![
            ColumnSpec::categorical("c", &["A", "B"]),
            ColumnSpec::numerical("x", 0.0, 1.0),
            ColumnSpec::numerical("y", 0.0, 1.0),
        ])
        .unwrap();
        let raw = RawTable::read_csv("c,x,y\nA,0,0\n".as_bytes()).unwrap();
        let enc = encode(&raw, &schema).unwrap();
        assert_eq!(&enc.data().row(0)[..2], &[0.5, 0.0]);
    }

    #[test]
    fn decode_argmax_and_clipping() {
        let schema = ColumnSchema::new(vec![
            ColumnSpec::categorical("c", &["A", "B", "C"]),
            ColumnSpec::numerical("x", 0.0, 1.0),
        ])
        .unwrap();
        let enc = Encoding::new(schema);
        let s = enc.row_scale();
        let rows = Matrix::from_rows(&[vec![0.1, 0.7, 0.2, 1.3 * s], vec![0.0, 0.0, 0.0, -4.0]]).unwrap();
        let t = decode(&rows, &enc).unwrap();
        assert_eq!(t.columns()[0], Column::Categorical(vec![1, 0]));
        assert_eq!(t.columns()[1], Column::Numerical(vec![1.0, 0.0]));
        assert!(decode(&Matrix::zeros(1, 3), &enc).is_err());
    }

    #[test]
    fn unit_row_guard() {
        assert!(EncodedMatrix::from_unit_rows(Matrix::from_rows(&[vec![0.6, 0.8]]).unwrap()).is_ok());
        assert!(EncodedMatrix::from_unit_rows(Matrix::from_rows(&[vec![0.8, 0.8]]).unwrap()).is_err());
    }

    fn schema_and_rows() -> impl Strategy<Value = (ColumnSchema, Vec<Vec<f64>>)> {
        // Each column: Ok(bounds) for numerical, Err(count) for categorical.
        let col = prop_oneof![
            (-50.0f64..50.0, 0.1f64..100.0).prop_map(|(lo, w)| Ok((lo, lo + w))),
            (1usize..6).prop_map(Err),
        ];
        prop::collection::vec(col, 1..6).prop_flat_map(|cols| {
            let cells: Vec<BoxedStrategy<f64>> = cols
                .iter()
                .map(|c| match *c {
                    Ok((lo, hi)) => (lo..=hi).boxed(),
                    Err(n) => (0..n).prop_map(|i| i as f64).boxed(),
                })
                .collect();
            let schema = ColumnSchema::new(
                cols.iter()
                    .enumerate()
                    .map(|(i, c)| match *c {
                        Ok((lo, hi)) => ColumnSpec::numerical(&format!("n{i}"), lo, hi),
                        Err(n) => {
                            let cats: Vec<String> = (0..n).map(|j| format!("k{j}")).collect();
                            let refs: Vec<&str> = cats.iter().map(String::as_str).collect();
                            ColumnSpec::categorical(&format!("c{i}"), &refs)
                        }
                    })
                    .collect(),
            )
            .unwrap();
            (Just(schema), prop::collection::vec(cells, 1..20))
        })
    }

    fn to_table(schema: &ColumnSchema, rows: &[Vec<f64>]) -> Table {
        let columns = schema
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| {
                if c.is_categorical() {
                    Column::Categorical(rows.iter().map(|r| r[j] as usize).collect())
                } else {
                    Column::Numerical(rows.iter().map(|r| r[j]).collect())
                }
            })
            .collect();
        Table::new(schema.clone(), columns).unwrap()
    }

    proptest! {
        #[test]
        fn encoded_rows_have_bounded_norm((schema, rows) in schema_and_rows()) {
            let enc = encode_table(&to_table(&schema, &rows)).unwrap();
            prop_assert!(enc.data().max_row_norm() <= 1.0 + 1e-12);
            // one-hot blocks hold exactly one entry equal to the row scale
            let e = enc.encoding().unwrap();
            for (i, c) in schema.columns.iter().enumerate() {
                if c.is_categorical() {
                    let (off, len) = e.block(i);
                    for r in 0..enc.n_rows() {
                        let block = &enc.data().row(r)[off..off + len];
                        prop_assert_eq!(block.iter().filter(|&&v| v == e.row_scale()).count(), 1);
                        prop_assert_eq!(block.iter().filter(|&&v| v == 0.0).count(), len - 1);
                    }
                }
            }
        }

        #[test]
        fn decode_inverts_encode((schema, rows) in schema_and_rows()) {
            let table = to_table(&schema, &rows);
            let enc = encode_table(&table).unwrap();
            let back = decode(enc.data(), enc.encoding().unwrap()).unwrap();
            for (a, b) in table.columns().iter().zip(back.columns()) {
                match (a, b) {
                    (Column::Categorical(x), Column::Categorical(y)) => prop_assert_eq!(x, y),
                    (Column::Numerical(x), Column::Numerical(y)) => {
                        for (u, v) in x.iter().zip(y) {
                            prop_assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()));
                        }
                    }
                    _ => prop_assert!(false),
                }
            }
        }
    }
}
