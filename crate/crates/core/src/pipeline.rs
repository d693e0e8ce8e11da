//! Glue from loaded datasets to fitted draws, shared by the command line
//! and the end-to-end tests.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ModelSpec;
use crate::data_io::{DataError, Dataset, PanelWell, Standardization};
use crate::geo_basis::{build_basis_system, build_knot_grid, BasisError, Location};
use crate::measurement::CalibrationModel;
use crate::models::{
    autoregression_knots, BlanketData, BlanketModel, BlanketParams, ModelError, ResampledData, ResampledModel,
    ResampledParams,
};
use crate::sampler::{iteration_rng, sample, DrawsError, Init, PosteriorDraws, SamplerConfig, SamplerError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Draws(#[from] DrawsError),
    #[error("{0}")]
    Input(String),
}

/// Geometry shared by both surveys of a blanket fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlanketGeometry {
    pub standardization: Standardization,
    pub d0: f64,
    pub n_basis: usize,
    pub n1: usize,
    pub n2: usize,
    pub laplacian_divisor: f64,
}

pub struct BlanketProblem {
    pub model: BlanketModel,
    pub geometry: BlanketGeometry,
    /// Survey-2 depths in metres.
    pub depths2: Vec<f64>,
    pub well_ids2: Vec<String>,
}

/// Standardizes both surveys jointly, builds the knot grid on all wells and
/// assembles the blanket posterior.
pub fn build_blanket(
    spec: &ModelSpec,
    survey1: &Dataset,
    survey2: &Dataset,
    calibration: &CalibrationModel,
) -> Result<BlanketProblem, PipelineError> {
    let s1 = &survey1.records;
    let s2 = &survey2.records;
    let standardization = Standardization::fit(s1.iter().chain(s2), spec.east_extent_m)?;
    let d0 = spec
        .d0_m
        .unwrap_or_else(|| s1.iter().chain(s2).map(|r| r.depth).sum::<f64>() / (s1.len() + s2.len()) as f64);

    let log_y1 = s1
        .iter()
        .map(|r| {
            r.lab_value
                .map(f64::ln)
                .ok_or_else(|| PipelineError::Input(format!("survey-1 well {} has no lab value", r.well_id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let kit2 = s2
        .iter()
        .map(|r| {
            r.kit_category
                .ok_or_else(|| PipelineError::Input(format!("survey-2 well {} has no kit reading", r.well_id)))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let loc1: Vec<Location> = s1.iter().map(|r| standardization.apply(r.east, r.north)).collect();
    let loc2: Vec<Location> = s2.iter().map(|r| standardization.apply(r.east, r.north)).collect();
    let all: Vec<Location> = loc1.iter().chain(&loc2).copied().collect();
    let grid = build_knot_grid(&all, spec.n_east_inner)?;
    let b1 = build_basis_system(&grid, &loc1)?;
    let b2 = build_basis_system(&grid, &loc2)?.with_laplacian_divisor(spec.laplacian_divisor);
    let n_basis = b1.n_basis();

    let data = BlanketData {
        log_y1,
        depth1: s1.iter().map(|r| r.depth - d0).collect(),
        kit2,
        depth2: s2.iter().map(|r| r.depth - d0).collect(),
        basis1: b1.basis,
        basis2: b2.basis,
        laplacian2: b2.laplacian,
    };
    let model = BlanketModel::new(data, calibration.clone(), spec.mixing, spec.blanket_priors.clone())?;
    Ok(BlanketProblem {
        model,
        geometry: BlanketGeometry {
            standardization,
            d0,
            n_basis,
            n1: s1.len(),
            n2: s2.len(),
            laplacian_divisor: spec.laplacian_divisor,
        },
        depths2: s2.iter().map(|r| r.depth).collect(),
        well_ids2: s2.iter().map(|r| r.well_id.clone()).collect(),
    })
}

/// Spread of the per-chain jitter added to data-informed starting points.
const INIT_JITTER: f64 = 0.3;

fn jittered(center: &[f64], config: &SamplerConfig) -> Init {
    Init::PerChain(
        (0..config.n_chains)
            .map(|chain| {
                let mut rng = iteration_rng(config.seed ^ 0xd1b5_4a32_d192_ed03, chain, 0);
                center
                    .iter()
                    .map(|v| v + rng.random_range(-INIT_JITTER..INIT_JITTER))
                    .collect()
            })
            .collect(),
    )
}

impl BlanketProblem {
    /// Starting points near the survey-1 mean with unit noise scales.
    pub fn init(&self, config: &SamplerConfig) -> Init {
        let d = &self.model.data;
        let m = d.log_y1.iter().sum::<f64>() / d.log_y1.len() as f64;
        let mut p = BlanketParams::zeros(d.n_basis(), d.n2());
        p.beta0 = m;
        p.sigma_obs = 1.0;
        p.tau = 1.0;
        p.theta2.fill(m);
        p.eta2.fill(m);
        jittered(&self.model.to_unconstrained(&p), config)
    }

    /// Samples and returns draws in the output layout (constrained
    /// parameters, θ₁ and δ).
    pub fn fit(&self, config: &SamplerConfig) -> Result<PosteriorDraws, PipelineError> {
        let raw = sample(&self.model, config, &self.init(config))?;
        Ok(raw.map(self.model.output_layout(), |x| self.model.constrain_with_generated(x))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampledGeometry {
    pub standardization: Standardization,
    pub d0: f64,
    pub knots: Vec<f64>,
    pub n_wells: usize,
}

pub struct ResampledProblem {
    pub model: ResampledModel,
    pub geometry: ResampledGeometry,
    pub wells: Vec<PanelWell>,
}

pub fn build_resampled(spec: &ModelSpec, panel: &Dataset) -> Result<ResampledProblem, PipelineError> {
    let wells = panel.panel_wells()?;
    if wells.len() < 2 {
        return Err(PipelineError::Input("panel needs at least two wells".into()));
    }
    let standardization = Standardization::fit(&panel.records, spec.east_extent_m)?;
    let d0 = spec
        .d0_m
        .unwrap_or_else(|| wells.iter().map(|w| w.depth).sum::<f64>() / wells.len() as f64);
    let log = |k: usize| wells.iter().map(|w| w.lab[k].ln()).collect::<Vec<f64>>();
    let log_y2000 = log(0);
    let knots = autoregression_knots(&log_y2000, spec.spline_quantiles, spec.spline_margin)?;
    let data = ResampledData {
        log_y2014: log(1),
        log_y2015: log(2),
        log_y2000,
        depth: wells.iter().map(|w| w.depth - d0).collect(),
        locations: wells.iter().map(|w| standardization.apply(w.east, w.north)).collect(),
        knots: knots.clone(),
    };
    let model = ResampledModel::new(data, spec.resampled_priors.clone())?;
    Ok(ResampledProblem {
        model,
        geometry: ResampledGeometry {
            standardization,
            d0,
            knots,
            n_wells: wells.len(),
        },
        wells,
    })
}

impl ResampledProblem {
    /// Starting points at the observed log values.
    pub fn init(&self, config: &SamplerConfig) -> Init {
        let d = &self.model.data;
        let mut p = ResampledParams::zeros(d.n_spline(), d.n_wells());
        p.mu = d.log_y2000.iter().sum::<f64>() / d.n_wells() as f64;
        p.alpha = 1.0;
        p.rho = self.model.priors.rho_unit;
        p.sigma_s = 0.5;
        p.sigma_l = 0.5;
        p.theta2000 = d.log_y2000.clone();
        p.theta2014 = d
            .log_y2014
            .iter()
            .zip(&d.log_y2015)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        jittered(&p.to_unconstrained(), config)
    }

    pub fn fit(&self, config: &SamplerConfig) -> Result<PosteriorDraws, PipelineError> {
        let raw = sample(&self.model, config, &self.init(config))?;
        Ok(raw.map(self.model.output_layout(), |x| self.model.constrain(x))?)
    }
}
