//! Work-directory layout and the volume-directory format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bgrl::volume::{read_rvt, write_rvt, VolumeSample};
use bgrl::Diagnosis;

pub const LABELS: &str = "labels.csv";

pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn create(&self) -> Result<()> {
        std::fs::create_dir_all(&self.dir)
            .with_context(|| format!("cannot create `{}`", self.dir.display()))
    }
}

/// Writes `<id>.rvt` per sample and `labels.csv` listing them in order.
pub fn write_volume_dir(dir: &Path, samples: &[VolumeSample]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create `{}`", dir.display()))?;
    let mut labels = String::from("sample_id,label\n");
    for s in samples {
        write_rvt(&dir.join(format!("{}.rvt", s.sample_id)), &s.volume)?;
        let _ = writeln!(labels, "{},{}", s.sample_id, s.label);
    }
    std::fs::write(dir.join(LABELS), labels)?;
    Ok(())
}

pub fn read_volume_dir(dir: &Path) -> Result<Vec<VolumeSample>> {
    let manifest = dir.join(LABELS);
    if !manifest.exists() {
        return Err(bgrl::Error::MissingArtifact(manifest).into());
    }
    let text = std::fs::read_to_string(&manifest)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, label)) = line.trim().split_once(',') else {
            bail!(
                "{}:{}: expected `sample_id,label`",
                manifest.display(),
                i + 1
            );
        };
        let label: Diagnosis = label
            .parse()
            .with_context(|| format!("{}:{}", manifest.display(), i + 1))?;
        let volume = read_rvt(&dir.join(format!("{id}.rvt")))?;
        out.push(VolumeSample::new(id, volume, label)?);
    }
    if out.is_empty() {
        return Err(bgrl::Error::EmptyDataset(format!(
            "`{}` lists no volumes",
            manifest.display()
        ))
        .into());
    }
    Ok(out)
}
