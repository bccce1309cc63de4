use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Diagnosis;

/// The three driver genes, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gene {
    APOE,
    PSEN1,
    PSEN2,
}

impl Gene {
    pub const ALL: [Gene; 3] = [Gene::APOE, Gene::PSEN1, Gene::PSEN2];

    pub fn dim(self) -> usize {
        match self {
            Gene::APOE => 1,
            Gene::PSEN1 | Gene::PSEN2 => 4,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gene::APOE => "APOE",
            Gene::PSEN1 => "PSEN1",
            Gene::PSEN2 => "PSEN2",
        }
    }

    /// Offset of this gene's first column among the nine gene columns.
    pub fn column_offset(self) -> usize {
        Gene::ALL[..self.index()].iter().map(|g| g.dim()).sum()
    }
}

impl fmt::Display for Gene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Gene {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "APOE" => Ok(Gene::APOE),
            "PSEN1" => Ok(Gene::PSEN1),
            "PSEN2" => Ok(Gene::PSEN2),
            other => Err(Error::contract(format!("unknown gene `{other}`"))),
        }
    }
}

/// Parses a comma or `+` separated gene list such as `PSEN1,PSEN2`.
pub fn parse_gene_list(s: &str) -> Result<Vec<Gene>> {
    let mut genes = s
        .split([',', '+'])
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Gene>>>()?;
    genes.sort();
    genes.dedup();
    if genes.is_empty() {
        return Err(Error::contract("gene subset must not be empty"));
    }
    Ok(genes)
}

pub fn gene_list_name(genes: &[Gene]) -> String {
    genes
        .iter()
        .map(|g| g.as_str())
        .collect::<Vec<_>>()
        .join("+")
}

pub const GENE_CSV_HEADER: &str =
    "sample_id,label,apoe_1,psen1_1,psen1_2,psen1_3,psen1_4,psen2_1,psen2_2,psen2_3,psen2_4";

pub const GENE_COLUMNS: usize = 9;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneRecord {
    pub sample_id: String,
    pub label: Diagnosis,
    /// APOE(1), PSEN1(4), PSEN2(4) in that order.
    pub values: [f64; GENE_COLUMNS],
}

impl GeneRecord {
    pub fn gene(&self, g: Gene) -> &[f64] {
        &self.values[g.column_offset()..g.column_offset() + g.dim()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Exclusion {
    pub line: usize,
    pub sample_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneExpressionTable {
    pub rows: Vec<GeneRecord>,
    /// Rows dropped at load time for missing values.
    pub excluded: Vec<Exclusion>,
}

impl GeneExpressionTable {
    pub fn new(rows: Vec<GeneRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rows {
            if r.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::contract(format!(
                    "non-finite gene value for `{}`",
                    r.sample_id
                )));
            }
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::contract(format!(
                    "duplicate sample_id `{}`",
                    r.sample_id
                )));
            }
        }
        Ok(Self {
            rows,
            excluded: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, sample_id: &str) -> Option<&GeneRecord> {
        self.rows.iter().find(|r| r.sample_id == sample_id)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{GENE_CSV_HEADER}")?;
        for r in &self.rows {
            write!(w, "{},{}", r.sample_id, r.label)?;
            for v in &r.values {
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
        load_gene_csv(path)
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: source.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, h)) if h.trim_end() == GENE_CSV_HEADER => {}
            _ => return Err(err(1, format!("header must be `{GENE_CSV_HEADER}`"))),
        }
        let mut rows = Vec::new();
        let mut excluded = Vec::new();
        for (line, raw) in lines {
            let raw = raw.trim_end_matches('\r');
            if raw.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = raw.split(',').collect();
            if cells.len() != GENE_COLUMNS + 2 {
                return Err(err(
                    line,
                    format!(
                        "expected {} columns, found {}",
                        GENE_COLUMNS + 2,
                        cells.len()
                    ),
                ));
            }
            let sample_id = cells[0].trim().to_string();
            if sample_id.is_empty() {
                return Err(err(line, "empty sample_id".into()));
            }
            let label: Diagnosis = cells[1]
                .parse()
                .map_err(|e: Error| err(line, e.to_string()))?;
            if let Some(col) = cells[2..].iter().position(|c| c.trim().is_empty()) {
                let column = GENE_CSV_HEADER.split(',').nth(col + 2).unwrap_or("?");
                warn!("{source}:{line}: excluding `{sample_id}`, missing {column}");
                excluded.push(Exclusion {
                    line,
                    sample_id,
                    reason: format!("missing {column}"),
                });
                continue;
            }
            let mut values = [0.0f64; GENE_COLUMNS];
            for (v, c) in values.iter_mut().zip(&cells[2..]) {
                *v = c
                    .trim()
                    .parse()
                    .map_err(|e| err(line, format!("bad value `{c}`: {e}")))?;
                if !v.is_finite() {
                    return Err(err(line, format!("non-finite value `{c}`")));
                }
            }
            rows.push(GeneRecord {
                sample_id,
                label,
                values,
            });
        }
        if rows.is_empty() {
            return Err(Error::EmptyDataset(format!("{source} has no usable rows")));
        }
        let mut table = Self::new(rows).map_err(|e| err(0, e.to_string()))?;
        table.excluded = excluded;
        Ok(table)
    }
}

/// Reads the gene CSV, dropping (and logging) rows with missing values.
pub fn load_gene_csv(path: &Path) -> Result<GeneExpressionTable> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    GeneExpressionTable::parse(&std::fs::read_to_string(path)?, &path.display().to_string())
}

/// Per-column min-max scaling fitted on a training subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    /// Fits on the rows whose ids are in `train_ids`.
    pub fn fit<'a>(
        table: &GeneExpressionTable,
        train_ids: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let ids: HashSet<&str> = train_ids.into_iter().collect();
        let mut min = vec![f64::INFINITY; GENE_COLUMNS];
        let mut max = vec![f64::NEG_INFINITY; GENE_COLUMNS];
        let mut any = false;
        for r in table
            .rows
            .iter()
            .filter(|r| ids.contains(r.sample_id.as_str()))
        {
            any = true;
            for (j, &v) in r.values.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        if !any {
            return Err(Error::EmptyDataset(
                "no training rows to fit normalization".into(),
            ));
        }
        Ok(Self { min, max })
    }

    /// `(x − min)/(max − min)`, no clipping; constant columns map to 0.
    pub fn apply(&self, x: f64, column: usize) -> f64 {
        let range = self.max[column] - self.min[column];
        if range > 0.0 {
            (x - self.min[column]) / range
        } else {
            0.0
        }
    }

    pub fn transform(&self, table: &GeneExpressionTable) -> GeneExpressionTable {
        let rows = table
            .rows
            .iter()
            .map(|r| {
                let mut values = r.values;
                for (j, v) in values.iter_mut().enumerate() {
                    *v = self.apply(*v, j);
                }
                GeneRecord {
                    values,
                    ..r.clone()
                }
            })
            .collect();
        GeneExpressionTable {
            rows,
            excluded: table.excluded.clone(),
        }
    }
}

/// Fits on the train partition and transforms the whole table.
pub fn min_max_normalize<'a>(
    table: &GeneExpressionTable,
    train_ids: impl IntoIterator<Item = &'a str>,
) -> Result<(GeneExpressionTable, MinMaxScaler)> {
    let scaler = MinMaxScaler::fit(table, train_ids)?;
    Ok((scaler.transform(table), scaler))
}
