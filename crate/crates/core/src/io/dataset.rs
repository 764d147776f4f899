//! Dataset directories: `schema.toml` names a matrix file and a metadata
//! table; optional ground-truth latents and mixer sit beside them.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::atomic_write;
use super::matrix::{read_matrix, write_fcrm};
use crate::data::{Dataset, GroundTruth, Labels};
use crate::error::{FcrError, Result};
use crate::simgen::Mixer;

pub const SCHEMA_FILE: &str = "schema.toml";
/// Separator used when several covariate columns form one label.
pub const COVARIATE_JOIN: &str = "|";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub matrix: PathBuf,
    pub metadata: PathBuf,
    #[serde(default)]
    pub cell_id_column: Option<String>,
    pub covariate_columns: Vec<String>,
    pub treatment_column: String,
    #[serde(default)]
    pub control_label: Option<String>,
    /// One gene name per line.
    #[serde(default)]
    pub genes: Option<PathBuf>,
    #[serde(default)]
    pub latents: Option<PathBuf>,
    #[serde(default)]
    pub mixer: Option<PathBuf>,
}

impl Schema {
    /// The layout written by [`export_dataset`].
    pub fn standard(control_label: Option<String>, with_latents: bool, with_mixer: bool) -> Self {
        Schema {
            matrix: "matrix.fcrm".into(),
            metadata: "metadata.csv".into(),
            cell_id_column: Some("cell_id".into()),
            covariate_columns: vec!["covariate".into()],
            treatment_column: "treatment".into(),
            control_label,
            genes: Some("genes.txt".into()),
            latents: with_latents.then(|| "latents.fcrm".into()),
            mixer: with_mixer.then(|| "mixer.json".into()),
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| FcrError::Format {
            path: path.to_path_buf(),
            message: e.message().to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| FcrError::io(path, e))
}

/// Builds a dataset from an outcome matrix and a metadata table. Levels are
/// enumerated lexicographically. A control label missing from the treatment
/// column yields a warning and no control cells.
pub fn ingest_dataset(matrix_path: &Path, metadata_path: &Path, schema: &Schema) -> Result<Ingested> {
    let (outcomes, header) = read_matrix(matrix_path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(metadata_path)
        .map_err(|e| FcrError::Ingest {
            location: metadata_path.display().to_string(),
            message: e.to_string(),
        })?;
    let csv_err = |e: csv::Error| FcrError::Ingest {
        location: metadata_path.display().to_string(),
        message: e.to_string(),
    };
    let headers: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let column = |name: &str| {
        index.get(name).copied().ok_or_else(|| FcrError::Ingest {
            location: metadata_path.display().to_string(),
            message: format!("missing column `{name}`"),
        })
    };
    if schema.covariate_columns.is_empty() {
        return Err(FcrError::Config("schema needs at least one covariate column".into()));
    }
    let cov_cols: Vec<usize> = schema.covariate_columns.iter().map(|c| column(c)).collect::<Result<_>>()?;
    let treat_col = column(&schema.treatment_column)?;
    let id_col = schema.cell_id_column.as_deref().map(column).transpose()?;

    let (mut covs, mut treats, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let field = |c: usize| rec.get(c).unwrap_or("").to_string();
        covs.push(cov_cols.iter().map(|&c| field(c)).collect::<Vec<_>>().join(COVARIATE_JOIN));
        treats.push(field(treat_col));
        ids.push(id_col.map_or_else(|| format!("c{i}"), field));
    }
    if ids.len() != outcomes.nrows() {
        return Err(FcrError::Ingest {
            location: format!("{} vs {}", matrix_path.display(), metadata_path.display()),
            message: format!("matrix has {} rows, metadata has {}", outcomes.nrows(), ids.len()),
        });
    }
    if let Some(((r, c), _)) = outcomes.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(FcrError::Ingest {
            location: format!("{} row {r}, column {c}", matrix_path.display()),
            message: "non-finite value".into(),
        });
    }

    let mut warnings = Vec::new();
    let treatments = Labels::from_strings(&treats);
    let control_level = match &schema.control_label {
        None => None,
        Some(label) => {
            let level = treatments.level_of(label);
            if level.is_none() {
                warnings.push(format!("control label `{label}` does not occur in column `{}`", schema.treatment_column));
            }
            level
        }
    };
    let mut ds = Dataset::new(outcomes, Labels::from_strings(&covs), treatments, control_level)?;
    ds.cell_ids = ids;
    if let Some(h) = header {
        if h.len() == ds.n_genes() {
            ds.gene_names = h;
        }
    }
    Ok(Ingested { dataset: ds, warnings })
}

/// Loads `dir/schema.toml` and every file it names, relative to `dir`.
pub fn load_dataset_dir(dir: &Path) -> Result<Ingested> {
    let schema_path = dir.join(SCHEMA_FILE);
    let schema = Schema::parse(&read_text(&schema_path)?, &schema_path)?;
    let mut out = ingest_dataset(&dir.join(&schema.matrix), &dir.join(&schema.metadata), &schema)?;
    let ds = &mut out.dataset;
    if let Some(g) = &schema.genes {
        let path = dir.join(g);
        let names: Vec<String> = read_text(&path)?.lines().map(str::to_string).collect();
        if names.len() != ds.n_genes() {
            return Err(FcrError::Ingest {
                location: path.display().to_string(),
                message: format!("{} gene names for {} columns", names.len(), ds.n_genes()),
            });
        }
        ds.gene_names = names;
    }
    if let Some(l) = &schema.latents {
        let path = dir.join(l);
        let (latents, _) = read_matrix(&path)?;
        if latents.nrows() != ds.n_cells() {
            return Err(FcrError::Ingest {
                location: path.display().to_string(),
                message: format!("{} latent rows for {} cells", latents.nrows(), ds.n_cells()),
            });
        }
        let mixer = match &schema.mixer {
            Some(m) => {
                let path = dir.join(m);
                let mixer: Mixer = serde_json::from_str(&read_text(&path)?).map_err(|e| FcrError::Format {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                Some(mixer)
            }
            None => None,
        };
        ds.truth = Some(GroundTruth { latents, mixer });
    }
    ds.validate()?;
    Ok(out)
}

/// Writes the standard layout into `dir`, creating it if needed.
pub fn export_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| FcrError::io(dir, e))?;
    let truth = ds.truth.as_ref();
    let schema = Schema::standard(
        ds.control_level.map(|l| ds.treatments.levels[l].clone()),
        truth.is_some(),
        truth.is_some_and(|t| t.mixer.is_some()),
    );
    write_fcrm(&dir.join(&schema.matrix), &ds.outcomes)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt = |e: csv::Error| FcrError::Format {
        path: dir.join(&schema.metadata),
        message: e.to_string(),
    };
    w.write_record(["cell_id", "covariate", "treatment"]).map_err(fmt)?;
    for i in 0..ds.n_cells() {
        w.write_record([ds.cell_ids[i].as_str(), ds.covariates.name(i), ds.treatments.name(i)])
            .map_err(fmt)?;
    }
    let meta = w.into_inner().map_err(|e| FcrError::Format {
        path: dir.join(&schema.metadata),
        message: e.to_string(),
    })?;
    atomic_write(&dir.join(&schema.metadata), &meta)?;

    let mut genes = ds.gene_names.join("\n");
    genes.push('\n');
    atomic_write(&dir.join(schema.genes.as_ref().expect("standard layout")), genes.as_bytes())?;
    if let Some(t) = truth {
        write_fcrm(&dir.join(schema.latents.as_ref().expect("latents named")), &t.latents)?;
        if let (Some(m), Some(name)) = (&t.mixer, &schema.mixer) {
            atomic_write(&dir.join(name), serde_json::to_string_pretty(m)?.as_bytes())?;
        }
    }
    let text = toml::to_string(&schema).map_err(|e| FcrError::Config(e.to_string()))?;
    atomic_write(&dir.join(SCHEMA_FILE), text.as_bytes())
}
