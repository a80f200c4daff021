//! Right-censored survival data: records, CSV ingestion, feature fusion and
//! splitting. Synthetic cohorts with known ground truth live in [`simulate`].

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::numerics::{rows_to_matrix, Rng};

pub mod simulate;

pub use simulate::{simulate_cohort, GroundTruth, LogRiskForm, SimConfig, WeibullBaseline};

/// One subject: observed time in days, whether death was observed, and the
/// covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    pub id: String,
    pub time: f64,
    /// `true` = death observed, `false` = right-censored at `time`.
    pub event: bool,
    pub features: Vec<f64>,
}

/// An ordered, validated collection of records sharing one feature schema.
/// Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    records: Vec<SurvivalRecord>,
    feature_names: Vec<String>,
}

impl Cohort {
    pub fn new(records: Vec<SurvivalRecord>, feature_names: Vec<String>) -> Result<Self> {
        let dim = feature_names.len();
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.id.is_empty() {
                return Err(Error::invalid(format!("record {i}: empty id")));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::invalid(format!(
                    "record {i}: duplicate id {:?}",
                    r.id
                )));
            }
            if !(r.time.is_finite() && r.time > 0.0) {
                return Err(Error::invalid(format!(
                    "record {i} ({}): time must be positive and finite, got {}",
                    r.id, r.time
                )));
            }
            if r.features.len() != dim {
                return Err(Error::dim(format!(
                    "record {i} ({}): {} features, schema has {dim}",
                    r.id,
                    r.features.len()
                )));
            }
            if let Some(j) = r.features.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    index: j,
                    context: format!("feature of record {:?}", r.id),
                });
            }
        }
        Ok(Self {
            records,
            feature_names,
        })
    }

    /// Generic feature names `f0, f1, ...`.
    pub fn default_feature_names(dim: usize, prefix: &str) -> Vec<String> {
        (0..dim).map(|i| format!("{prefix}{i}")).collect()
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn event_count(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        1.0 - self.event_count() as f64 / self.len() as f64
    }

    /// `n x d` design matrix in record order.
    pub fn feature_matrix(&self) -> Array2<f64> {
        let rows: Vec<&[f64]> = self.records.iter().map(|r| r.features.as_slice()).collect();
        rows_to_matrix(&rows, self.feature_dim()).expect("validated at construction")
    }

    /// Records at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Same subjects with the feature block replaced.
    pub fn with_features(&self, features: Vec<Vec<f64>>, names: Vec<String>) -> Result<Cohort> {
        if features.len() != self.len() {
            return Err(Error::dim(format!(
                "{} feature rows for {} records",
                features.len(),
                self.len()
            )));
        }
        let records = self
            .records
            .iter()
            .zip(features)
            .map(|(r, f)| SurvivalRecord {
                id: r.id.clone(),
                time: r.time,
                event: r.event,
                features: f,
            })
            .collect();
        Cohort::new(records, names)
    }

    /// Early fusion of every record's features with an embedding looked up
    /// by id; clinical columns come first.
    pub fn fuse_with(
        &self,
        embeddings: &HashMap<String, Vec<f64>>,
        embedding_names: &[String],
    ) -> Result<Cohort> {
        let mut fused = Vec::with_capacity(self.len());
        for r in &self.records {
            let z = embeddings
                .get(&r.id)
                .ok_or_else(|| Error::invalid(format!("no embedding for id {:?}", r.id)))?;
            if z.len() != embedding_names.len() {
                return Err(Error::dim(format!(
                    "embedding for {:?} has length {}, expected {}",
                    r.id,
                    z.len(),
                    embedding_names.len()
                )));
            }
            fused.push(fuse_features(&r.features, z)?);
        }
        let mut names = self.feature_names.clone();
        names.extend_from_slice(embedding_names);
        self.with_features(fused, names)
    }

    pub fn load_csv(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Cohort> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, path, expected_dim)
    }

    /// Parses `id,time,event,<features...>`. `label` only names the source
    /// in error messages.
    pub fn from_csv_reader<R: Read>(
        reader: R,
        label: &Path,
        expected_dim: Option<usize>,
    ) -> Result<Cohort> {
        let parse_err = |row: usize, message: String| Error::Parse {
            path: label.to_path_buf(),
            row,
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .clone();
        if header.len() < 3 || &header[0] != "id" || &header[1] != "time" || &header[2] != "event" {
            return Err(parse_err(1, "header must start with id,time,event".into()));
        }
        let feature_names: Vec<String> = header.iter().skip(3).map(str::to_owned).collect();
        if let Some(d) = expected_dim {
            if d != feature_names.len() {
                return Err(parse_err(
                    1,
                    format!("expected {d} features, header has {}", feature_names.len()),
                ));
            }
        }

        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, row) in rdr.records().enumerate() {
            // Header is row 1.
            let row_no = i + 2;
            let row = row.map_err(|e| parse_err(row_no, e.to_string()))?;
            if row.len() != header.len() {
                return Err(parse_err(
                    row_no,
                    format!("expected {} fields, found {}", header.len(), row.len()),
                ));
            }
            let id = row[0].trim().to_owned();
            if id.is_empty() {
                return Err(parse_err(row_no, "missing id".into()));
            }
            if !seen.insert(id.clone()) {
                return Err(parse_err(row_no, format!("duplicate id {id:?}")));
            }
            let time: f64 = row[1]
                .trim()
                .parse()
                .map_err(|_| parse_err(row_no, format!("time {:?} is not a number", &row[1])))?;
            if !(time.is_finite() && time > 0.0) {
                return Err(parse_err(
                    row_no,
                    format!("time must be positive and finite, got {time}"),
                ));
            }
            let event = match row[2].trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(parse_err(
                        row_no,
                        format!("event must be 0 or 1, got {other:?}"),
                    ))
                }
            };
            let features = row
                .iter()
                .skip(3)
                .enumerate()
                .map(|(j, s)| {
                    let v: f64 = s.trim().parse().map_err(|_| {
                        parse_err(
                            row_no,
                            format!("feature {:?} value {s:?} is not a number", feature_names[j]),
                        )
                    })?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(parse_err(
                            row_no,
                            format!("feature {:?} is not finite", feature_names[j]),
                        ))
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            records.push(SurvivalRecord {
                id,
                time,
                event,
                features,
            });
        }
        if records.is_empty() {
            return Err(Error::NoRecords {
                path: label.to_path_buf(),
            });
        }
        Cohort::new(records, feature_names)
    }

    /// Writes the CSV form read by [`Cohort::load_csv`]. Reals use the
    /// shortest representation that parses back to the same value.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::Numerical(format!("csv write: {e}"));
        let mut header = vec!["id".to_owned(), "time".to_owned(), "event".to_owned()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = Vec::with_capacity(3 + r.features.len());
            row.push(r.id.clone());
            row.push(format!("{}", r.time));
            row.push(if r.event { "1" } else { "0" }.to_owned());
            row.extend(r.features.iter().map(|v| format!("{v}")));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Early fusion: `clinical` followed by `embedding`.
pub fn fuse_features(clinical: &[f64], embedding: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(clinical.len() + embedding.len());
    out.extend_from_slice(clinical);
    out.extend_from_slice(embedding);
    if let Some(index) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index,
            context: "fused feature".into(),
        });
    }
    Ok(out)
}

/// Uniformly shuffled partition into `(train, test)` with
/// `round(n * train_fraction)` training records. Both halves keep the
/// original record order.
pub fn split_cohort(cohort: &Cohort, train_fraction: f64, seed: u64) -> Result<(Cohort, Cohort)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    if cohort.is_empty() {
        return Err(Error::invalid("cannot split an empty cohort"));
    }
    let n = cohort.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    let perm = Rng::new(seed).permutation(n);
    let mut train: Vec<usize> = perm[..n_train].to_vec();
    let mut test: Vec<usize> = perm[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((cohort.subset(&train), cohort.subset(&test)))
}
