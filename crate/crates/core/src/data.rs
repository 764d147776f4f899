//! In-memory perturbation dataset.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{FcrError, Result};
use crate::simgen::Mixer;

/// A categorical per-cell annotation: integer codes into a level table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub codes: Vec<usize>,
    pub levels: Vec<String>,
}

impl Labels {
    pub fn new(codes: Vec<usize>, levels: Vec<String>) -> Result<Self> {
        if let Some(&bad) = codes.iter().find(|c| **c >= levels.len()) {
            return Err(FcrError::Index {
                index: bad,
                len: levels.len(),
            });
        }
        Ok(Labels { codes, levels })
    }

    /// Enumerates levels lexicographically from raw string values.
    pub fn from_strings<S: AsRef<str>>(values: &[S]) -> Self {
        let mut levels: Vec<String> = values.iter().map(|v| v.as_ref().to_string()).collect();
        levels.sort();
        levels.dedup();
        let codes = values
            .iter()
            .map(|v| levels.binary_search_by(|l| l.as_str().cmp(v.as_ref())).unwrap())
            .collect();
        Labels { codes, levels }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_of(&self, name: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == name)
    }

    pub fn name(&self, row: usize) -> &str {
        &self.levels[self.codes[row]]
    }

    pub fn subset(&self, rows: &[usize]) -> Labels {
        Labels {
            codes: rows.iter().map(|&r| self.codes[r]).collect(),
            levels: self.levels.clone(),
        }
    }
}

/// Ground truth available for simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Rows are cells, columns are `[z_x, z_tx, z_t]`.
    pub latents: Array2<f64>,
    pub mixer: Option<Mixer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Cells × genes.
    pub outcomes: Array2<f64>,
    pub covariates: Labels,
    pub treatments: Labels,
    /// Level index of the control treatment, when one exists.
    pub control_level: Option<usize>,
    pub control_mask: Vec<bool>,
    pub gene_names: Vec<String>,
    pub cell_ids: Vec<String>,
    pub truth: Option<GroundTruth>,
}

impl Dataset {
    /// Assembles and validates a dataset; gene names and cell ids default to indices.
    pub fn new(
        outcomes: Array2<f64>,
        covariates: Labels,
        treatments: Labels,
        control_level: Option<usize>,
    ) -> Result<Self> {
        let control_mask = treatments
            .codes
            .iter()
            .map(|c| Some(*c) == control_level)
            .collect();
        let ds = Dataset {
            gene_names: (0..outcomes.ncols()).map(|g| format!("g{g}")).collect(),
            cell_ids: (0..outcomes.nrows()).map(|c| format!("c{c}")).collect(),
            outcomes,
            covariates,
            treatments,
            control_level,
            control_mask,
            truth: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.outcomes.nrows();
        let check = |what: &str, len: usize| {
            if len != n {
                Err(FcrError::dim(format!("dataset {what} rows"), n, len))
            } else {
                Ok(())
            }
        };
        check("covariate", self.covariates.len())?;
        check("treatment", self.treatments.len())?;
        check("control mask", self.control_mask.len())?;
        check("cell id", self.cell_ids.len())?;
        if self.gene_names.len() != self.outcomes.ncols() {
            return Err(FcrError::dim(
                "gene names",
                self.outcomes.ncols(),
                self.gene_names.len(),
            ));
        }
        if let Some((idx, _)) = self.outcomes.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(FcrError::Ingest {
                location: format!("row {}, column {}", idx.0, idx.1),
                message: "non-finite outcome value".into(),
            });
        }
        if let Some(level) = self.control_level {
            if level >= self.treatments.n_levels() {
                return Err(FcrError::Index {
                    index: level,
                    len: self.treatments.n_levels(),
                });
            }
        }
        if let Some(truth) = &self.truth {
            check("latent", truth.latents.nrows())?;
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.outcomes.nrows()
    }

    pub fn n_genes(&self) -> usize {
        self.outcomes.ncols()
    }

    pub fn n_controls(&self) -> usize {
        self.control_mask.iter().filter(|c| **c).count()
    }

    /// Row-subset copy preserving level tables.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            outcomes: self.outcomes.select(Axis(0), rows),
            covariates: self.covariates.subset(rows),
            treatments: self.treatments.subset(rows),
            control_level: self.control_level,
            control_mask: rows.iter().map(|&r| self.control_mask[r]).collect(),
            gene_names: self.gene_names.clone(),
            cell_ids: rows.iter().map(|&r| self.cell_ids[r].clone()).collect(),
            truth: self.truth.as_ref().map(|t| GroundTruth {
                latents: t.latents.select(Axis(0), rows),
                mixer: t.mixer.clone(),
            }),
        }
    }

    /// Indices of rows with the given covariate code.
    pub fn rows_with_covariate(&self, code: usize) -> Vec<usize> {
        (0..self.n_cells())
            .filter(|&r| self.covariates.codes[r] == code)
            .collect()
    }
}
