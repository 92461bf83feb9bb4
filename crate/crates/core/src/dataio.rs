//! Tabular datasets: CSV ingestion, interaction expansion and standardization.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Where a row of a dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowOrigin {
    /// Row `i` of the dataset as originally constructed or loaded.
    Original(usize),
    /// SMOTE interpolation between two original rows.
    Synthetic { parent_a: usize, parent_b: usize },
}

impl RowOrigin {
    pub fn is_synthetic(self) -> bool {
        matches!(self, RowOrigin::Synthetic { .. })
    }

    /// Index of the original row this row derives from (first parent for synthetic rows).
    pub fn root(self) -> usize {
        match self {
            RowOrigin::Original(i) => i,
            RowOrigin::Synthetic { parent_a, .. } => parent_a,
        }
    }
}

/// Feature matrix with named columns, binary labels and optional row weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    column_names: Vec<String>,
    features: Matrix<T>,
    labels: Vec<u8>,
    weights: Option<Vec<T>>,
    ids: Option<Vec<i64>>,
    origins: Vec<RowOrigin>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(column_names: Vec<String>, features: Matrix<T>, labels: Vec<u8>) -> Result<Self> {
        if column_names.len() != features.cols() {
            return Err(Error::DimensionMismatch {
                expected: features.cols(),
                got: column_names.len(),
            });
        }
        if labels.len() != features.rows() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                got: labels.len(),
            });
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(invalid("labels must be 0 or 1"));
        }
        if !features.all_finite() {
            return Err(Error::NonFinite("features".into()));
        }
        let origins = (0..labels.len()).map(RowOrigin::Original).collect();
        Ok(Self {
            column_names,
            features,
            labels,
            weights: None,
            ids: None,
            origins,
        })
    }

    /// Convenience constructor with generated column names `x1..xp`.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R], labels: Vec<u8>) -> Result<Self> {
        let features = Matrix::from_rows(rows)?;
        let names = (1..=features.cols()).map(|j| format!("x{j}")).collect();
        Self::new(names, features, labels)
    }

    pub fn with_weights(mut self, weights: Vec<T>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|&w| !(w > T::zero()) || !w.is_finite()) {
            return Err(invalid("weights must be finite and strictly positive"));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn without_weights(mut self) -> Self {
        self.weights = None;
        self
    }

    pub fn with_ids(mut self, ids: Vec<i64>) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: ids.len(),
            });
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn weights(&self) -> Option<&[T]> {
        self.weights.as_deref()
    }

    /// Weight of row `i`, 1 when the dataset is unweighted.
    pub fn weight(&self, i: usize) -> T {
        self.weights.as_ref().map_or(T::one(), |w| w[i])
    }

    pub fn ids(&self) -> Option<&[i64]> {
        self.ids.as_deref()
    }

    pub fn origins(&self) -> &[RowOrigin] {
        &self.origins
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    pub(crate) fn require_both_classes(&self, context: &str) -> Result<()> {
        let pos = self.positives();
        if pos == 0 || pos == self.len() {
            return Err(Error::SingleClass(context.to_owned()));
        }
        Ok(())
    }

    /// Subset of rows, keeping provenance, ids and weights.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            column_names: self.column_names.clone(),
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            weights: self.weights.as_ref().map(|w| idx.iter().map(|&i| w[i]).collect()),
            ids: self.ids.as_ref().map(|d| idx.iter().map(|&i| d[i]).collect()),
            origins: idx.iter().map(|&i| self.origins[i]).collect(),
        }
    }

    /// Subset of columns, by position.
    pub fn select_columns(&self, idx: &[usize]) -> Self {
        Self {
            column_names: idx.iter().map(|&j| self.column_names[j].clone()).collect(),
            features: self.features.select_cols(idx),
            ..self.clone()
        }
    }

    pub(crate) fn replace_features(&self, features: Matrix<T>, column_names: Vec<String>) -> Self {
        debug_assert_eq!(features.rows(), self.len());
        Self {
            column_names,
            features,
            ..self.clone()
        }
    }

    /// Appends a synthetic row. Ids are not tracked for synthetic rows, so the
    /// id column is dropped.
    pub(crate) fn push_synthetic(&mut self, row: &[T], label: u8, weight: T, origin: RowOrigin) {
        self.features.push_row(row).expect("synthetic row width matches");
        self.labels.push(label);
        if let Some(w) = self.weights.as_mut() {
            w.push(weight);
        }
        self.ids = None;
        self.origins.push(origin);
    }

    /// Casts features and weights to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            column_names: self.column_names.clone(),
            features: self.features.cast(),
            labels: self.labels.clone(),
            weights: self
                .weights
                .as_ref()
                .map(|w| w.iter().map(|&v| U::lit(v.as_f64())).collect()),
            ids: self.ids.clone(),
            origins: self.origins.clone(),
        }
    }
}

/// Column layout expected by [`load_csv`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub feature_columns: Vec<String>,
    pub label_column: String,
    /// Optional integer identifier column.
    pub id_column: Option<String>,
}

/// Herd-year covariates in file order.
pub const HERD_FEATURES: [&str; 12] = [
    "calves_born",
    "non_dairy_count",
    "moves_factory",
    "moves_knackery",
    "moves_farm",
    "moves_mart",
    "exports",
    "stillbirths",
    "degree",
    "betweenness",
    "closeness",
    "local_density",
];

impl CsvSchema {
    pub fn new(features: &[&str], label: &str) -> Self {
        Self {
            feature_columns: features.iter().map(|s| (*s).to_owned()).collect(),
            label_column: label.to_owned(),
            id_column: None,
        }
    }

    /// One row per herd-year: `herd_id, year, bvd_status` plus [`HERD_FEATURES`].
    pub fn herd() -> Self {
        Self {
            id_column: Some("herd_id".into()),
            ..Self::new(&HERD_FEATURES, "bvd_status")
        }
    }
}

fn parse_label(s: &str) -> Option<u8> {
    match s.trim().to_ascii_lowercase().as_str() {
        "0" | "false" | "negative" => Some(0),
        "1" | "true" | "positive" => Some(1),
        _ => None,
    }
}

/// Reads a dataset from a CSV file with a header row.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_csv(file, schema, path)
}

/// Reads a dataset from any CSV source. `origin` names the source in errors.
pub fn read_csv<T: Scalar, R: Read>(reader: R, schema: &CsvSchema, origin: &Path) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: origin.to_path_buf(),
                column: name.to_owned(),
            })
    };
    let feature_pos = schema
        .feature_columns
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;
    let label_pos = find(&schema.label_column)?;
    let id_pos = schema.id_column.as_deref().map(find).transpose()?;

    let parse_err = |row: usize, column: &str, message: String| Error::Parse {
        path: PathBuf::from(origin),
        row,
        column: column.to_owned(),
        message,
    };

    let p = feature_pos.len();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // header is line 1
        let line = r + 2;
        for (&pos, name) in feature_pos.iter().zip(&schema.feature_columns) {
            let cell = rec.get(pos).unwrap_or("");
            if cell.is_empty() {
                return Err(parse_err(line, name, "missing value".into()));
            }
            let v: T = cell
                .parse()
                .map_err(|_| parse_err(line, name, format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, name, format!("`{cell}` is not finite")));
            }
            data.push(v);
        }
        let cell = rec.get(label_pos).unwrap_or("");
        labels.push(parse_label(cell).ok_or_else(|| {
            parse_err(line, &schema.label_column, format!("`{cell}` is not a binary label"))
        })?);
        if let (Some(pos), Some(name)) = (id_pos, schema.id_column.as_deref()) {
            let cell = rec.get(pos).unwrap_or("");
            ids.push(
                cell.parse::<i64>()
                    .map_err(|_| parse_err(line, name, format!("`{cell}` is not an integer id")))?,
            );
        }
    }
    let features = Matrix::from_vec(labels.len(), p, data)?;
    let ds = Dataset::new(schema.feature_columns.clone(), features, labels)?;
    if id_pos.is_some() {
        ds.with_ids(ids)
    } else {
        Ok(ds)
    }
}

/// Writes features, label (and ids when present) as CSV.
///
/// Values are written in shortest round-trip form, so reading the file back
/// reproduces every value bit for bit.
pub fn write_csv<T: Scalar, W: Write>(ds: &Dataset<T>, schema: &CsvSchema, writer: W) -> Result<()> {
    if schema.feature_columns.len() != ds.width() {
        return Err(Error::DimensionMismatch {
            expected: ds.width(),
            got: schema.feature_columns.len(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = Vec::new();
    if let Some(id) = schema.id_column.as_deref() {
        header.push(id);
    }
    header.push(&schema.label_column);
    header.extend(schema.feature_columns.iter().map(String::as_str));
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if schema.id_column.is_some() {
            let id = ds.ids().map_or(i as i64, |d| d[i]);
            rec.push(id.to_string());
        }
        rec.push(ds.labels()[i].to_string());
        rec.extend(ds.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends every pairwise product of distinct columns, named `a×b`.
pub fn expand_interactions<T: Scalar>(ds: &Dataset<T>) -> Result<Dataset<T>> {
    let p = ds.width();
    if p == 0 {
        return Err(invalid("interaction expansion needs at least one column"));
    }
    let q = p + p * (p - 1) / 2;
    let mut names = ds.column_names().to_vec();
    for a in 0..p {
        for b in a + 1..p {
            names.push(format!("{}×{}", ds.column_names()[a], ds.column_names()[b]));
        }
    }
    let mut data = Vec::with_capacity(ds.len() * q);
    for row in ds.features().iter_rows() {
        data.extend_from_slice(row);
        for a in 0..p {
            for b in a + 1..p {
                data.push(row[a] * row[b]);
            }
        }
    }
    Ok(ds.replace_features(Matrix::from_vec(ds.len(), q, data)?, names))
}

/// Per-column centring and scaling fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    /// Population standard deviation; 0 marks a constant column.
    pub scale: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(x: &Matrix<T>) -> Result<Self> {
        let n = x.rows();
        if n < 2 {
            return Err(invalid("standardizer needs at least two rows"));
        }
        let nt = T::count(n);
        let p = x.cols();
        let mut mean = vec![T::zero(); p];
        for r in x.iter_rows() {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m = *m + v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / nt);
        let mut var = vec![T::zero(); p];
        for r in x.iter_rows() {
            for ((s, &v), &m) in var.iter_mut().zip(r).zip(&mean) {
                *s = *s + (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .zip(&mean)
            .map(|(s, &m)| {
                let sd = (s / nt).sqrt();
                // rounding noise on a constant column
                if sd <= T::epsilon() * T::lit(16.0) * m.abs().max(T::one()) {
                    T::zero()
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_row(&self, row: &[T], out: &mut [T]) {
        for (((o, &v), &m), &s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.scale) {
            let c = v - m;
            *o = if s > T::zero() { c / s } else { c };
        }
    }

    pub fn transform(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.width() {
            return Err(Error::DimensionMismatch {
                expected: self.width(),
                got: x.cols(),
            });
        }
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            self.transform_row(x.row(i), out.row_mut(i));
        }
        Ok(out)
    }

    pub fn apply(&self, ds: &Dataset<T>) -> Result<Dataset<T>> {
        let x = self.transform(ds.features())?;
        Ok(ds.replace_features(x, ds.column_names().to_vec()))
    }
}

/// Fits a [`Standardizer`] on the dataset's features.
pub fn fit_standardizer<T: Scalar>(ds: &Dataset<T>) -> Result<Standardizer<T>> {
    Standardizer::fit(ds.features())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn herd_csv(extra_header: &str, label: &str) -> String {
        let mut header: Vec<&str> = vec!["herd_id", "year", "bvd_status"];
        header.extend(HERD_FEATURES);
        let header = header.join(",").replace("stillbirths", extra_header);
        let row = |id: i64| {
            let mut cells = vec![id.to_string(), "2021".into(), label.to_owned()];
            cells.extend((0..12).map(|j| format!("{}.5", j + id)));
            cells.join(",")
        };
        format!("{header}\n{}\n{}\n{}\n", row(1), row(2), row(3))
    }

    #[test]
    fn loads_three_rows() {
        let text = herd_csv("stillbirths", "1");
        let ds: Dataset<f64> = read_csv(text.as_bytes(), &CsvSchema::herd(), Path::new("mem")).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.width(), 12);
        assert_eq!(ds.ids(), Some(&[1, 2, 3][..]));
        assert_eq!(ds.row(1)[0], 2.5);
    }

    #[test]
    fn missing_column_is_named() {
        let text = herd_csv("still_births", "0");
        let err = read_csv::<f64, _>(text.as_bytes(), &CsvSchema::herd(), Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("stillbirths"), "{err}");
    }

    #[test]
    fn bad_label_is_rejected() {
        let text = herd_csv("stillbirths", "2");
        let err = read_csv::<f64, _>(text.as_bytes(), &CsvSchema::herd(), Path::new("mem")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bvd_status") && msg.contains("row 2"), "{msg}");
    }

    #[test]
    fn non_numeric_and_empty_cells_rejected() {
        let schema = CsvSchema::new(&["a"], "y");
        let err = read_csv::<f64, _>("a,y\nfoo,1\n".as_bytes(), &schema, Path::new("m")).unwrap_err();
        assert!(err.to_string().contains("`a`"));
        assert!(read_csv::<f64, _>("a,y\n,1\n".as_bytes(), &schema, Path::new("m")).is_err());
        assert!(read_csv::<f64, _>("a,y\nNaN,1\n".as_bytes(), &schema, Path::new("m")).is_err());
    }

    #[test]
    fn interaction_widths_and_products() {
        let ds = Dataset::from_rows(&[[2.0, 3.0]], vec![1]).unwrap();
        let e = expand_interactions(&ds).unwrap();
        assert_eq!(e.width(), 3);
        assert_eq!(e.row(0), &[2.0, 3.0, 6.0]);
        assert_eq!(e.column_names()[2], "x1×x2");

        let wide = Dataset::from_rows(&[vec![1.0f64; 20]], vec![0]).unwrap();
        let e = expand_interactions(&wide).unwrap();
        assert_eq!(e.width(), 210);
        let back = e.select_columns(&(0..20).collect::<Vec<_>>());
        assert_eq!(back, wide);
    }

    #[test]
    fn standardizer_examples() {
        let ds = Dataset::from_rows(&[[1.0, 5.0], [3.0, 5.0]], vec![0, 1]).unwrap();
        let st = fit_standardizer(&ds).unwrap();
        assert_eq!(st.mean, vec![2.0, 5.0]);
        assert_eq!(st.scale[1], 0.0);
        let out = st.apply(&ds).unwrap();
        assert_eq!(out.row(0), &[-1.0, 0.0]);
        assert_eq!(out.row(1), &[1.0, 0.0]);

        // test data uses training statistics
        let test = Dataset::from_rows(&[[5.0, 7.0]], vec![0]).unwrap();
        assert_eq!(st.apply(&test).unwrap().row(0), &[3.0, 2.0]);

        let narrow = Dataset::from_rows(&[[1.0]], vec![0]).unwrap();
        assert!(st.apply(&narrow).is_err());
        assert!(fit_standardizer(&narrow).is_err());
    }

    #[test]
    fn weights_must_be_positive() {
        let ds = Dataset::from_rows(&[[1.0], [2.0]], vec![0, 1]).unwrap();
        assert!(ds.clone().with_weights(vec![1.0, 0.0]).is_err());
        assert!(ds.with_weights(vec![1.0, 2.0]).is_ok());
    }
}
