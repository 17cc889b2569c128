//! Domain-labelled datasets, label-free views for the pipeline, and the CSV format.
//!
//! CSV layout: header `split,domain,label,x0,...,x{p-1}`, one record per line.
//! Domains and labels are zero-based; a label of `-1` marks a hidden label.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "valid" => Some(Split::Valid),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub split: Split,
    pub features: Vec<f64>,
    pub domain: usize,
    /// Hidden ground-truth class; only evaluation code reads it.
    pub label: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    r: usize,
    p: usize,
    records: Vec<Record>,
}

/// Features and domains of a subset of records, without any class labels.
#[derive(Clone, Debug)]
pub struct ObservedView<'a> {
    /// Positions of the records in the parent dataset.
    pub indices: Vec<usize>,
    pub features: Vec<&'a [f64]>,
    pub domains: Vec<usize>,
}

impl ObservedView<'_> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

impl DomainDataset {
    pub fn new(r: usize, p: usize, records: Vec<Record>) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidInput("dataset needs at least one domain".into()));
        }
        for (i, rec) in records.iter().enumerate() {
            if rec.features.len() != p {
                return Err(Error::ShapeMismatch(format!(
                    "record {i} has {} features, expected {p}",
                    rec.features.len()
                )));
            }
            if rec.domain >= r {
                return Err(Error::InvalidInput(format!(
                    "record {i} has domain {} outside 0..{r}",
                    rec.domain
                )));
            }
        }
        Ok(Self { r, p, records })
    }

    pub fn num_domains(&self) -> usize {
        self.r
    }

    pub fn feature_dim(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn has_labels(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.label.is_some())
    }

    /// Copy with every label removed.
    pub fn without_labels(&self) -> Self {
        let mut out = self.clone();
        for rec in &mut out.records {
            rec.label = None;
        }
        out
    }

    /// Copy with labels taken from `labels` (one per record, in order).
    pub fn with_labels(&self, labels: &[usize]) -> Result<Self> {
        if labels.len() != self.records.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} records",
                labels.len(),
                self.records.len()
            )));
        }
        let mut out = self.clone();
        for (rec, &y) in out.records.iter_mut().zip(labels) {
            rec.label = Some(y);
        }
        Ok(out)
    }

    pub fn observed(&self, splits: &[Split]) -> ObservedView<'_> {
        let mut view = ObservedView {
            indices: Vec::new(),
            features: Vec::new(),
            domains: Vec::new(),
        };
        for (i, rec) in self.records.iter().enumerate() {
            if splits.contains(&rec.split) {
                view.indices.push(i);
                view.features.push(&rec.features);
                view.domains.push(rec.domain);
            }
        }
        view
    }

    /// Labels for the given record indices, or `None` if any is hidden.
    pub fn labels_at(&self, indices: &[usize]) -> Option<Vec<usize>> {
        indices.iter().map(|&i| self.records[i].label).collect()
    }

    pub fn all_labels(&self) -> Option<Vec<usize>> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn count(&self, split: Split, domain: usize) -> usize {
        self.records
            .iter()
            .filter(|r| r.split == split && r.domain == domain)
            .count()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["split".to_string(), "domain".into(), "label".into()];
        header.extend((0..self.p).map(|j| format!("x{j}")));
        out.write_record(&header).map_err(csv_err)?;
        for rec in &self.records {
            let mut row = Vec::with_capacity(3 + self.p);
            row.push(rec.split.as_str().to_string());
            row.push(rec.domain.to_string());
            row.push(rec.label.map_or_else(|| "-1".to_string(), |y| y.to_string()));
            row.extend(rec.features.iter().map(|x| format!("{x:?}")));
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::InvalidInput(format!("csv write failed: {e}")))?;
        Ok(())
    }

    /// Parses the CSV format; the domain count is the largest domain index plus one
    /// unless `r` is given.
    pub fn read_csv<R: Read>(reader: R, r: Option<usize>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers().map_err(csv_err)?.clone();
        if header.len() < 3
            || &header[0] != "split"
            || &header[1] != "domain"
            || &header[2] != "label"
        {
            return Err(Error::InvalidInput(
                "line 1: header must start with split,domain,label".into(),
            ));
        }
        for (j, name) in header.iter().skip(3).enumerate() {
            if name != format!("x{j}") {
                return Err(Error::InvalidInput(format!(
                    "line 1: expected column x{j}, found {name}"
                )));
            }
        }
        let p = header.len() - 3;
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| Error::InvalidInput(format!("line {line}: {e}")))?;
            let bad = |what: &str| Error::InvalidInput(format!("line {line}: {what}"));
            if row.len() != 3 + p {
                return Err(bad(&format!("expected {} fields, found {}", 3 + p, row.len())));
            }
            let split = Split::parse(&row[0]).ok_or_else(|| bad("unknown split"))?;
            let domain: usize = row[1].trim().parse().map_err(|_| bad("invalid domain"))?;
            let label: i64 = row[2].trim().parse().map_err(|_| bad("invalid label"))?;
            let label = match label {
                -1 => None,
                y if y >= 0 => Some(y as usize),
                _ => return Err(bad("label must be -1 or non-negative")),
            };
            let features = (3..3 + p)
                .map(|j| {
                    row[j]
                        .trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| bad(&format!("invalid feature x{}", j - 3)))
                })
                .collect::<Result<Vec<_>>>()?;
            records.push(Record {
                split,
                features,
                domain,
                label,
            });
        }
        let r = match r {
            Some(r) => r,
            None => records.iter().map(|r| r.domain + 1).max().unwrap_or(0),
        };
        Self::new(r, p, records)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}
