use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::Diagnosis;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub sample_id: String,
    pub label: Diagnosis,
    pub features: Vec<f64>,
}

/// Per-subject image feature vectors, all of one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: Vec<FeatureRow>,
    dim: usize,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<FeatureRow>) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.features.len());
        let mut seen = HashSet::new();
        for r in &rows {
            if r.features.len() != dim {
                return Err(Error::dim(format!(
                    "feature row `{}` has {} values, expected {dim}",
                    r.sample_id,
                    r.features.len()
                )));
            }
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::contract(format!(
                    "duplicate sample_id `{}`",
                    r.sample_id
                )));
            }
        }
        Ok(Self { rows, dim })
    }

    pub fn rows(&self) -> &[FeatureRow] {
        &self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, sample_id: &str) -> Option<&FeatureRow> {
        self.rows.iter().find(|r| r.sample_id == sample_id)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("ascii")
    }

    /// Header `sample_id,label,f0,...,f{dim-1}`; values use the shortest
    /// representation that round-trips.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        write!(w, "sample_id,label")?;
        for i in 0..self.dim {
            write!(w, ",f{i}")?;
        }
        writeln!(w)?;
        for r in &self.rows {
            write!(w, "{},{}", r.sample_id, r.label)?;
            for v in &r.features {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: source.to_string(),
            line,
            msg,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(text.as_bytes());
        let header = rdr
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .clone();
        let dim = header.len().saturating_sub(2);
        let expected: Vec<String> = ["sample_id".to_string(), "label".to_string()]
            .into_iter()
            .chain((0..dim).map(|i| format!("f{i}")))
            .collect();
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(parse_err(1, "header must be sample_id,label,f0,...".into()));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| parse_err(0, e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            if rec.len() != header.len() {
                return Err(parse_err(
                    line,
                    format!("expected {} columns, found {}", header.len(), rec.len()),
                ));
            }
            let label = rec[1]
                .parse()
                .map_err(|e: Error| parse_err(line, e.to_string()))?;
            let features = rec
                .iter()
                .skip(2)
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(line, e.to_string()))?;
            rows.push(FeatureRow {
                sample_id: rec[0].to_string(),
                label,
                features,
            });
        }
        Self::new(rows)
    }
}
