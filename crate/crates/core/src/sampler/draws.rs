use std::io::{Read, Write};
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::diagnostics::{bulk_ess, split_rhat, DiagnosticsReport, ParameterDiagnostics, RHAT_FLAG};
use crate::models::ParamLayout;
use crate::stats::{mean, sd};

#[derive(Debug, Error)]
pub enum DrawsError {
    #[error("draw matrix has {found} values, expected {expected}")]
    Length { expected: usize, found: usize },
    #[error("non-finite value in draw {row}, column {column}")]
    NonFinite { row: usize, column: String },
    #[error("draws have no parameter block '{0}'")]
    MissingBlock(String),
    #[error("block '{name}' has length {found}, expected {expected}")]
    BlockLength { name: String, expected: usize, found: usize },
    #[error("draws CSV: {0}")]
    Csv(String),
}

/// Per-chain sampler statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainInfo {
    pub step_size: f64,
    pub divergences: usize,
    pub warmup_divergences: usize,
    pub max_depth_hits: usize,
    pub n_leapfrog: usize,
    pub mean_accept: f64,
    pub inverse_metric_mean: f64,
}

/// Draws of all chains, stored row-major: chain 0's draws first.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    layout: ParamLayout,
    n_chains: usize,
    n_draws: usize,
    values: Vec<f64>,
    chains: Vec<ChainInfo>,
}

impl PosteriorDraws {
    pub fn new(
        layout: ParamLayout,
        n_chains: usize,
        n_draws: usize,
        values: Vec<f64>,
        chains: Vec<ChainInfo>,
    ) -> Result<Self, DrawsError> {
        let dim = layout.dim();
        let expected = n_chains * n_draws * dim;
        if values.len() != expected {
            return Err(DrawsError::Length {
                expected,
                found: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(DrawsError::NonFinite {
                row: k / dim,
                column: layout.column_names()[k % dim].clone(),
            });
        }
        let chains = if chains.len() == n_chains {
            chains
        } else {
            vec![ChainInfo::default(); n_chains]
        };
        Ok(Self {
            layout,
            n_chains,
            n_draws,
            values,
            chains,
        })
    }

    /// One chain holding the given rows.
    pub fn from_rows(layout: ParamLayout, rows: &[Vec<f64>]) -> Result<Self, DrawsError> {
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(layout, 1, rows.len(), values, Vec::new())
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_chains(&self) -> usize {
        self.n_chains
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn n_rows(&self) -> usize {
        self.n_chains * self.n_draws
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn chain_info(&self) -> &[ChainInfo] {
        &self.chains
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let d = self.dim();
        &self.values[r * d..(r + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks(self.dim().max(1))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    fn chain_columns(&self, j: usize) -> Vec<Vec<f64>> {
        let col = self.column(j);
        col.chunks(self.n_draws.max(1)).map(|c| c.to_vec()).collect()
    }

    pub fn block_range(&self, name: &str) -> Result<Range<usize>, DrawsError> {
        self.layout
            .range(name)
            .ok_or_else(|| DrawsError::MissingBlock(name.to_string()))
    }

    /// Checks that a block exists with the given length.
    pub fn require_block(&self, name: &str, len: usize) -> Result<Range<usize>, DrawsError> {
        let r = self.block_range(name)?;
        if r.len() != len {
            return Err(DrawsError::BlockLength {
                name: name.to_string(),
                expected: len,
                found: r.len(),
            });
        }
        Ok(r)
    }

    /// All draws of a scalar (or the first entry of a vector block).
    pub fn scalar(&self, name: &str) -> Result<Vec<f64>, DrawsError> {
        let r = self.block_range(name)?;
        Ok(self.column(r.start))
    }

    /// Replaces every row by `f(row)` under a new layout.
    pub fn map(&self, layout: ParamLayout, f: impl Fn(&[f64]) -> Vec<f64> + Sync) -> Result<Self, DrawsError> {
        let rows: Vec<Vec<f64>> = self.rows().collect::<Vec<_>>().par_iter().map(|r| f(r)).collect();
        let values = rows.into_iter().flatten().collect();
        Self::new(layout, self.n_chains, self.n_draws, values, self.chains.clone())
    }

    pub fn diagnostics(&self) -> DiagnosticsReport {
        let names = self.layout.column_names();
        let parameters = (0..self.dim())
            .into_par_iter()
            .map(|j| {
                let chains = self.chain_columns(j);
                let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
                let all = self.column(j);
                let rhat = split_rhat(&refs);
                ParameterDiagnostics {
                    name: names[j].clone(),
                    mean: mean(&all),
                    sd: if all.len() > 1 { sd(&all) } else { 0.0 },
                    rhat,
                    ess_bulk: bulk_ess(&refs),
                    flagged: rhat.is_some_and(|r| r > RHAT_FLAG),
                }
            })
            .collect();
        DiagnosticsReport {
            n_chains: self.n_chains,
            n_draws: self.n_draws,
            divergences: self.chains.iter().map(|c| c.divergences).collect(),
            parameters,
        }
    }

    /// CSV with `chain,draw` followed by the layout's column names.
    /// Values use the shortest representation that round-trips exactly.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DrawsError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.layout.column_names());
        out.write_record(&header).map_err(|e| DrawsError::Csv(e.to_string()))?;
        for (r, row) in self.rows().enumerate() {
            let mut rec = vec![(r / self.n_draws + 1).to_string(), (r % self.n_draws + 1).to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec).map_err(|e| DrawsError::Csv(e.to_string()))?;
        }
        out.flush().map_err(|e| DrawsError::Csv(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, DrawsError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers().map_err(|e| DrawsError::Csv(e.to_string()))?.clone();
        if header.len() < 2 || &header[0] != "chain" || &header[1] != "draw" {
            return Err(DrawsError::Csv("header must start with chain,draw".into()));
        }
        let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let layout = ParamLayout::from_column_names(&names);
        let mut values = Vec::new();
        let mut chain_ids = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| DrawsError::Csv(e.to_string()))?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| DrawsError::Csv(format!("line {}: bad number '{s}'", line + 2)))
            };
            chain_ids.push(parse(&rec[0])? as usize);
            for s in rec.iter().skip(2) {
                values.push(parse(s)?);
            }
        }
        if chain_ids.is_empty() {
            return Err(DrawsError::Csv("no draws".into()));
        }
        let n_chains = *chain_ids.iter().max().unwrap_or(&1);
        let n_rows = chain_ids.len();
        if n_rows % n_chains != 0 {
            return Err(DrawsError::Csv("chains have unequal draw counts".into()));
        }
        Self::new(layout, n_chains, n_rows / n_chains, values, Vec::new())
    }
}
