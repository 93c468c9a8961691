//! Image directories described by a `manifest.csv` with header
//! `id,filename,label,target` (target may be empty).

use std::fs;
use std::path::{Path, PathBuf};

use perc_core::attacks::Goal;
use perc_core::ImageTensor;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result, RowError};
use crate::io;

pub const MANIFEST: &str = "manifest.csv";
const HEADER: [&str; 4] = ["id", "filename", "label", "target"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub filename: String,
    pub label: usize,
    pub target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    pub label: usize,
    pub target: Option<usize>,
    pub image: ImageTensor,
}

impl ImageRecord {
    pub fn goal(&self, targeted: bool) -> Goal {
        match (targeted, self.target) {
            (true, Some(t)) => Goal::targeted(self.label, t),
            _ => Goal::untargeted(self.label),
        }
    }
}

fn row_error(line: usize, message: impl Into<String>) -> RowError {
    RowError {
        line,
        message: message.into(),
    }
}

/// Parses and validates manifest text. Every bad row is reported, not just the first.
pub fn parse_manifest(path: &Path, text: &str, classes: Option<usize>) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if header.iter().map(str::trim).collect::<Vec<_>>() != HEADER {
        return Err(CliError::Manifest {
            path: path.to_path_buf(),
            rows: vec![row_error(1, format!("header must be `{}`", HEADER.join(",")))],
        });
    }
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                errors.push(row_error(line, e.to_string()));
                continue;
            }
        };
        if rec.len() != 4 {
            errors.push(row_error(line, format!("expected 4 fields, found {}", rec.len())));
            continue;
        }
        let id = rec[0].trim().to_string();
        let filename = rec[1].trim().to_string();
        if id.is_empty() || filename.is_empty() {
            errors.push(row_error(line, "empty id or filename"));
            continue;
        }
        if !seen.insert(id.clone()) {
            errors.push(row_error(line, format!("duplicate id `{id}`")));
            continue;
        }
        let label: usize = match rec[2].trim().parse() {
            Ok(v) => v,
            Err(_) => {
                errors.push(row_error(line, format!("label `{}` is not a non-negative integer", &rec[2])));
                continue;
            }
        };
        let target = match rec[3].trim() {
            "" => None,
            t => match t.parse::<usize>() {
                Ok(v) => Some(v),
                Err(_) => {
                    errors.push(row_error(line, format!("target `{t}` is not a non-negative integer")));
                    continue;
                }
            },
        };
        if let Some(n) = classes {
            if label >= n {
                errors.push(row_error(line, format!("label {label} is out of range for {n} classes")));
                continue;
            }
            if let Some(t) = target.filter(|&t| t >= n) {
                errors.push(row_error(line, format!("target {t} is out of range for {n} classes")));
                continue;
            }
        }
        if target == Some(label) {
            errors.push(row_error(line, "target equals the ground-truth label"));
            continue;
        }
        rows.push(ManifestRow {
            id,
            filename,
            label,
            target,
        });
    }
    if errors.is_empty() {
        Ok(rows)
    } else {
        Err(CliError::Manifest {
            path: path.to_path_buf(),
            rows: errors,
        })
    }
}

/// Reads `dir/manifest.csv` and decodes every listed image. A directory with
/// neither a manifest nor any files yields an empty list and a warning.
pub fn ingest(dir: &Path, classes: Option<usize>) -> Result<Vec<ImageRecord>> {
    let manifest = dir.join(MANIFEST);
    if !manifest.exists() {
        let empty = fs::read_dir(dir).map_err(io_err(dir))?.next().is_none();
        if empty {
            log::warn!("{} is empty; no images ingested", dir.display());
            return Ok(Vec::new());
        }
        return Err(CliError::MissingManifest(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
    let rows = parse_manifest(&manifest, &text, classes)?;
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let path = dir.join(&row.filename);
        let image = io::read_image(&path)?;
        out.push(ImageRecord {
            id: row.id,
            path,
            label: row.label,
            target: row.target,
            image,
        });
    }
    Ok(out)
}

/// Writes images as `images/<id>.png` plus the manifest.
pub fn export(dir: &Path, items: &[(String, &ImageTensor, usize, Option<usize>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for (id, image, label, target) in items {
        let filename = format!("images/{id}.png");
        io::write_png(&dir.join(&filename), image)?;
        let target = target.map(|t| t.to_string()).unwrap_or_default();
        w.write_record([id.as_str(), &filename, &label.to_string(), &target])
            .expect("in-memory write");
    }
    io::write_bytes(&dir.join(MANIFEST), &w.into_inner().expect("in-memory flush"))
}
