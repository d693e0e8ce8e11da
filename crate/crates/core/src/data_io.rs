//! Survey CSV ingestion, coordinate standardization and a forward simulator
//! of the blanket-survey and resampled-panel models.
//!
//! Schemas (exact headers):
//!
//! | schema      | header |
//! |-------------|--------|
//! | survey1     | `well_id,east_m,north_m,depth_m,as_ugL` |
//! | survey2     | `well_id,east_m,north_m,depth_m,kit_level` |
//! | calibration | `lab_ugL,kit_level` |
//! | panel       | `well_id,east_m,north_m,depth_m,as2000_ugL,as2014_ugL,as2015_ugL` |

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ModelSpec;
use crate::geo_basis::{build_basis_system, build_knot_grid, BasisError, GpKernelParams, Location};
use crate::measurement::{category_of_label, CalibrationError, CalibrationModel, CalibrationPair, DETECTION_FLOOR, KIT_LABELS};
use crate::models::{extract_theta1_delta, BlanketParams, ModelError, ResampledModel};
use crate::sparse::LinearOperator;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("header mismatch for {schema} schema: expected `{expected}`, found `{found}`")]
    Header {
        schema: Schema,
        expected: String,
        found: String,
    },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("line {line}: unknown kit label '{label}' (valid labels: {})", KIT_LABELS.join(", "))]
    UnknownLabel { line: u64, label: String },
    #[error("no records in input")]
    Empty,
    #[error("degenerate coordinates: {0}")]
    Degenerate(String),
    #[error("simulation: {0}")]
    Simulation(String),
    #[error("the calibration schema holds lab/kit pairs, not wells; use load_calibration")]
    NotWells,
    #[error("CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    Survey1,
    Survey2,
    Calibration,
    Panel,
}

impl Schema {
    pub fn header(self) -> &'static [&'static str] {
        match self {
            Schema::Survey1 => &["well_id", "east_m", "north_m", "depth_m", "as_ugL"],
            Schema::Survey2 => &["well_id", "east_m", "north_m", "depth_m", "kit_level"],
            Schema::Calibration => &["lab_ugL", "kit_level"],
            Schema::Panel => &[
                "well_id",
                "east_m",
                "north_m",
                "depth_m",
                "as2000_ugL",
                "as2014_ugL",
                "as2015_ugL",
            ],
        }
    }
}

impl std::fmt::Display for Schema {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Schema::Survey1 => "survey1",
            Schema::Survey2 => "survey2",
            Schema::Calibration => "calibration",
            Schema::Panel => "panel",
        })
    }
}

impl FromStr for Schema {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "survey1" => Ok(Schema::Survey1),
            "survey2" => Ok(Schema::Survey2),
            "calibration" => Ok(Schema::Calibration),
            "panel" => Ok(Schema::Panel),
            _ => Err(format!("unknown schema '{s}' (expected survey1, survey2, calibration or panel)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Epoch {
    Survey1_2000,
    Survey2_2012,
    Panel2000,
    Panel2014,
    Panel2015,
}

/// One sampled well at one epoch. Coordinates in metres, concentrations in
/// µg/L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellRecord {
    pub well_id: String,
    pub east: f64,
    pub north: f64,
    pub depth: f64,
    pub epoch: Epoch,
    pub lab_value: Option<f64>,
    pub kit_category: Option<u8>,
}

impl WellRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.lab_value.is_none() && self.kit_category.is_none() {
            return Err("record has neither a lab value nor a kit reading".into());
        }
        if !(self.depth > 0.0 && self.depth.is_finite()) {
            return Err(format!("depth must be positive, got {}", self.depth));
        }
        if !(self.east.is_finite() && self.north.is_finite()) {
            return Err("non-finite coordinate".into());
        }
        if let Some(v) = self.lab_value {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("lab value must be positive after flooring, got {v}"));
            }
        }
        if let Some(k) = self.kit_category {
            if !(1..=9).contains(&k) {
                return Err(format!("kit category {k} outside 1..9"));
            }
        }
        Ok(())
    }
}

/// Affine map from metres to unit-scaled coordinates: translate by the
/// offsets, then divide both axes by the east extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub east_offset: f64,
    pub north_offset: f64,
    pub east_extent: f64,
}

impl Standardization {
    /// Offsets at the minimum coordinates; extent from the data unless
    /// `extent_override` is given.
    pub fn fit<'a>(records: impl IntoIterator<Item = &'a WellRecord>, extent_override: Option<f64>) -> Result<Self, DataError> {
        let mut e = (f64::INFINITY, f64::NEG_INFINITY);
        let mut n_min = f64::INFINITY;
        let mut count = 0;
        for r in records {
            e = (e.0.min(r.east), e.1.max(r.east));
            n_min = n_min.min(r.north);
            count += 1;
        }
        if count < 2 {
            return Err(DataError::Degenerate("need at least two locations".into()));
        }
        let extent = extent_override.unwrap_or(e.1 - e.0);
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(DataError::Degenerate(format!("east extent is {extent} m")));
        }
        Ok(Self {
            east_offset: e.0,
            north_offset: n_min,
            east_extent: extent,
        })
    }

    pub fn apply(&self, east: f64, north: f64) -> Location {
        Location::new(
            (east - self.east_offset) / self.east_extent,
            (north - self.north_offset) / self.east_extent,
        )
    }

    pub fn invert(&self, loc: Location) -> (f64, f64) {
        (
            loc.east * self.east_extent + self.east_offset,
            loc.north * self.east_extent + self.north_offset,
        )
    }
}

/// Which values were changed on load.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    /// Input lines whose zero lab values were floored.
    pub floored_lines: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<WellRecord>,
    pub standardization: Standardization,
    /// Reference depth in metres.
    pub d0: f64,
    pub report: LoadReport,
}

/// Translates and scales coordinates; d₀ is the mean depth.
pub fn standardize(records: Vec<WellRecord>) -> Result<Dataset, DataError> {
    let standardization = Standardization::fit(&records, None)?;
    let d0 = mean_depth(&records);
    Ok(Dataset {
        records,
        standardization,
        d0,
        report: LoadReport::default(),
    })
}

/// Mean depth over records, counting each well once per epoch.
pub fn mean_depth(records: &[WellRecord]) -> f64 {
    records.iter().map(|r| r.depth).sum::<f64>() / records.len().max(1) as f64
}

/// One panel well with its three lab values.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelWell {
    pub well_id: String,
    pub east: f64,
    pub north: f64,
    pub depth: f64,
    /// µg/L in 2000, 2014, 2015
    pub lab: [f64; 3],
}

impl Dataset {
    pub fn locations(&self) -> Vec<Location> {
        self.records
            .iter()
            .map(|r| self.standardization.apply(r.east, r.north))
            .collect()
    }

    pub fn with_d0(mut self, d0: f64) -> Self {
        self.d0 = d0;
        self
    }

    pub fn with_standardization(mut self, s: Standardization) -> Self {
        self.standardization = s;
        self
    }

    /// Groups panel records by well in first-appearance order.
    pub fn panel_wells(&self) -> Result<Vec<PanelWell>, DataError> {
        let mut out: Vec<PanelWell> = Vec::new();
        let mut filled: Vec<[bool; 3]> = Vec::new();
        for r in &self.records {
            let slot = match r.epoch {
                Epoch::Panel2000 => 0,
                Epoch::Panel2014 => 1,
                Epoch::Panel2015 => 2,
                _ => return Err(DataError::Simulation(format!("well {} is not a panel record", r.well_id))),
            };
            let lab = r
                .lab_value
                .ok_or_else(|| DataError::Simulation(format!("panel well {} lacks a lab value", r.well_id)))?;
            let i = match out.iter().position(|w| w.well_id == r.well_id) {
                Some(i) => i,
                None => {
                    out.push(PanelWell {
                        well_id: r.well_id.clone(),
                        east: r.east,
                        north: r.north,
                        depth: r.depth,
                        lab: [0.0; 3],
                    });
                    filled.push([false; 3]);
                    out.len() - 1
                }
            };
            out[i].lab[slot] = lab;
            filled[i][slot] = true;
        }
        if let Some(i) = filled.iter().position(|f| !f.iter().all(|x| *x)) {
            return Err(DataError::Simulation(format!("panel well {} is missing an epoch", out[i].well_id)));
        }
        Ok(out)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a survey or panel CSV. Use [`load_calibration`] for calibration
/// pairs.
pub fn load_survey(path: &Path, schema: Schema) -> Result<Dataset, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_survey(file, schema)
}

fn parse_num(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<f64, DataError> {
    let s = rec.get(i).unwrap_or("").trim();
    if s.is_empty() {
        return Err(DataError::Row {
            line,
            message: format!("missing {name}"),
        });
    }
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DataError::Row {
            line,
            message: format!("{name} '{s}' is not a finite number"),
        })
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, schema: Schema) -> Result<(), DataError> {
    let header = rdr.headers().map_err(|e| DataError::Csv(e.to_string()))?;
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(DataError::Empty);
    }
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != schema.header() {
        return Err(DataError::Header {
            schema,
            expected: schema.header().join(","),
            found: found.join(","),
        });
    }
    Ok(())
}

fn lab(rec: &csv::StringRecord, i: usize, name: &str, line: u64, report: &mut LoadReport) -> Result<f64, DataError> {
    let v = parse_num(rec, i, name, line)?;
    if v < 0.0 {
        return Err(DataError::Row {
            line,
            message: format!("{name} is negative"),
        });
    }
    if v == 0.0 {
        report.floored_lines.push(line);
        return Ok(DETECTION_FLOOR);
    }
    Ok(v)
}

fn kit(rec: &csv::StringRecord, i: usize, line: u64) -> Result<u8, DataError> {
    let label = rec.get(i).unwrap_or("").trim();
    category_of_label(label).map_err(|_| DataError::UnknownLabel {
        line,
        label: label.to_string(),
    })
}

pub fn read_survey<R: Read>(input: R, schema: Schema) -> Result<Dataset, DataError> {
    if schema == Schema::Calibration {
        return Err(DataError::NotWells);
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    check_header(&mut rdr, schema)?;
    let mut records = Vec::new();
    let mut report = LoadReport::default();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Csv(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != schema.header().len() {
            return Err(DataError::Row {
                line,
                message: format!("expected {} fields, found {}", schema.header().len(), rec.len()),
            });
        }
        let well_id = rec[0].trim().to_string();
        if well_id.is_empty() {
            return Err(DataError::Row {
                line,
                message: "missing well_id".into(),
            });
        }
        let east = parse_num(&rec, 1, "east_m", line)?;
        let north = parse_num(&rec, 2, "north_m", line)?;
        let depth = parse_num(&rec, 3, "depth_m", line)?;
        let base = |epoch, lab_value, kit_category| WellRecord {
            well_id: well_id.clone(),
            east,
            north,
            depth,
            epoch,
            lab_value,
            kit_category,
        };
        let new: Vec<WellRecord> = match schema {
            Schema::Survey1 => vec![base(Epoch::Survey1_2000, Some(lab(&rec, 4, "as_ugL", line, &mut report)?), None)],
            Schema::Survey2 => vec![base(Epoch::Survey2_2012, None, Some(kit(&rec, 4, line)?))],
            Schema::Panel => vec![
                base(Epoch::Panel2000, Some(lab(&rec, 4, "as2000_ugL", line, &mut report)?), None),
                base(Epoch::Panel2014, Some(lab(&rec, 5, "as2014_ugL", line, &mut report)?), None),
                base(Epoch::Panel2015, Some(lab(&rec, 6, "as2015_ugL", line, &mut report)?), None),
            ],
            Schema::Calibration => unreachable!(),
        };
        for r in &new {
            r.validate().map_err(|message| DataError::Row { line, message })?;
        }
        records.extend(new);
    }
    if records.is_empty() {
        return Err(DataError::Empty);
    }
    let mut ds = standardize(records)?;
    ds.report = report;
    Ok(ds)
}

pub fn load_calibration(path: &Path) -> Result<Vec<CalibrationPair>, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_calibration(file)
}

pub fn read_calibration<R: Read>(input: R) -> Result<Vec<CalibrationPair>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    check_header(&mut rdr, Schema::Calibration)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Csv(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(DataError::Row {
                line,
                message: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        let v = parse_num(&rec, 0, "lab_ugL", line)?;
        let k = kit(&rec, 1, line)?;
        let pair = CalibrationPair::new(v, k as i64).map_err(|e: CalibrationError| DataError::Row {
            line,
            message: e.to_string(),
        })?;
        out.push(pair);
    }
    if out.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(out)
}

fn csv_err(e: impl std::fmt::Display) -> DataError {
    DataError::Csv(e.to_string())
}

/// Writes records in the given schema. Numbers use the shortest decimal
/// form that parses back to the same value.
pub fn write_survey<W: Write>(out: W, records: &[WellRecord], schema: Schema) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(schema.header()).map_err(csv_err)?;
    let label = |r: &WellRecord| -> Result<String, DataError> {
        let k = r
            .kit_category
            .ok_or_else(|| DataError::Csv(format!("well {} has no kit reading", r.well_id)))?;
        Ok(KIT_LABELS[k as usize - 1].to_string())
    };
    let value = |r: &WellRecord| -> Result<String, DataError> {
        r.lab_value
            .map(|v| v.to_string())
            .ok_or_else(|| DataError::Csv(format!("well {} has no lab value", r.well_id)))
    };
    match schema {
        Schema::Survey1 | Schema::Survey2 => {
            for r in records {
                let last = if schema == Schema::Survey1 { value(r)? } else { label(r)? };
                w.write_record([
                    r.well_id.clone(),
                    r.east.to_string(),
                    r.north.to_string(),
                    r.depth.to_string(),
                    last,
                ])
                .map_err(csv_err)?;
            }
        }
        Schema::Panel => {
            let ds = Dataset {
                records: records.to_vec(),
                standardization: Standardization {
                    east_offset: 0.0,
                    north_offset: 0.0,
                    east_extent: 1.0,
                },
                d0: 0.0,
                report: LoadReport::default(),
            };
            for p in ds.panel_wells()? {
                let mut row = vec![p.well_id, p.east.to_string(), p.north.to_string(), p.depth.to_string()];
                row.extend(p.lab.iter().map(|v| v.to_string()));
                w.write_record(row).map_err(csv_err)?;
            }
        }
        Schema::Calibration => return Err(DataError::NotWells),
    }
    w.flush().map_err(|e| DataError::Csv(e.to_string()))
}

pub fn write_calibration<W: Write>(out: W, pairs: &[CalibrationPair]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(Schema::Calibration.header()).map_err(csv_err)?;
    for p in pairs {
        w.write_record([p.lab_value.to_string(), KIT_LABELS[p.kit_category as usize - 1].to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| DataError::Csv(e.to_string()))
}

/// Axis-aligned rectangle in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub east_min: f64,
    pub east_max: f64,
    pub north_min: f64,
    pub north_max: f64,
}

impl Rect {
    pub fn contains(&self, east: f64, north: f64) -> bool {
        east >= self.east_min && east <= self.east_max && north >= self.north_min && north <= self.north_max
    }
}

/// Study region `[0, east_m] × [0, north_m]` minus rectangular holes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub east_m: f64,
    pub north_m: f64,
    pub holes: Vec<Rect>,
    /// Minimum distance between wells.
    pub min_separation_m: f64,
}

impl Region {
    pub fn rectangle(east_m: f64, north_m: f64) -> Self {
        Self {
            east_m,
            north_m,
            holes: Vec::new(),
            min_separation_m: 0.0,
        }
    }

    pub fn with_hole(mut self, hole: Rect) -> Self {
        self.holes.push(hole);
        self
    }

    fn allowed(&self, east: f64, north: f64) -> bool {
        !self.holes.iter().any(|h| h.contains(east, north))
    }

    /// Uniform placement by rejection; fails if the separation cannot be met.
    pub fn place<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<(f64, f64)>, DataError> {
        let sep2 = self.min_separation_m * self.min_separation_m;
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(n);
        let budget = 1000 * n.max(1);
        let mut tries = 0;
        while out.len() < n {
            tries += 1;
            if tries > budget {
                return Err(DataError::Simulation(format!(
                    "region too small: placed {} of {n} wells at {} m separation",
                    out.len(),
                    self.min_separation_m
                )));
            }
            let e = rng.random_range(0.0..=self.east_m);
            let nn = rng.random_range(0.0..=self.north_m);
            if !self.allowed(e, nn) {
                continue;
            }
            if sep2 > 0.0 && out.iter().any(|(a, b)| (a - e).powi(2) + (b - nn).powi(2) < sep2) {
                continue;
            }
            out.push((e, nn));
        }
        Ok(out)
    }
}

/// Simulation settings beyond the model specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    pub n1: usize,
    pub n2: usize,
    pub region: Region,
    /// Seed of well placement and depths, kept apart from the truth seed.
    pub layout_seed: u64,
    pub calibration: CalibrationModel,
    /// Panel wells resampled from survey 2, with lab values at both epochs.
    pub n_panel: usize,
    /// Generating parameters; drawn from the prior when absent.
    pub fixed_truth: Option<BlanketParams>,
}

/// Generating values and latent states of a simulated blanket dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub params: BlanketParams,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub delta: Vec<f64>,
    pub eta2: Vec<f64>,
    /// survey-1 log-scale noise
    pub noise_survey1: Vec<f64>,
    /// innovation of the mixing autoregression
    pub noise_dynamics: Vec<f64>,
    /// lab-scale noise of η₂
    pub noise_eta: Vec<f64>,
    pub d0: f64,
    pub n_basis: usize,
}

pub struct SimulatedBlanket {
    pub survey1: Dataset,
    pub survey2: Dataset,
    pub panel: Dataset,
    pub truth: SyntheticTruth,
}

fn inv_gamma_draw<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g = rand_distr::Gamma::new(shape, 1.0 / scale).expect("valid gamma");
    1.0 / g.sample(rng)
}

fn normal<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("valid normal").sample(rng)
}

/// Depth in metres: log-normal around 15 m, at least 3 m.
fn draw_depth<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    normal(15f64.ln(), 0.5, rng).exp().max(3.0)
}

/// Forward simulation of the blanket model. Locations and depths depend on
/// `settings.layout_seed` only; parameters (unless fixed) and all noise on
/// `truth_seed`.
pub fn simulate_blanket(spec: &ModelSpec, truth_seed: u64, settings: &SimulationSettings) -> Result<SimulatedBlanket, DataError> {
    let (n1, n2) = (settings.n1, settings.n2);
    if n1 < 2 || n2 < 2 {
        return Err(DataError::Simulation("need at least two wells per survey".into()));
    }
    if settings.n_panel > n2 {
        return Err(DataError::Simulation("panel larger than survey 2".into()));
    }
    let mut layout_rng = ChaCha8Rng::seed_from_u64(settings.layout_seed);
    let coords = settings.region.place(n1 + n2, &mut layout_rng)?;
    let depths: Vec<f64> = (0..n1 + n2).map(|_| draw_depth(&mut layout_rng)).collect();
    let panel_pick = rand::seq::index::sample(&mut layout_rng, n2, settings.n_panel).into_vec();

    let mk = |i: usize, epoch: Epoch, prefix: &str| WellRecord {
        well_id: format!("{prefix}{:05}", i + 1),
        east: coords[i].0,
        north: coords[i].1,
        depth: depths[i],
        epoch,
        lab_value: None,
        kit_category: None,
    };
    let mut s1: Vec<WellRecord> = (0..n1).map(|i| mk(i, Epoch::Survey1_2000, "a")).collect();
    let mut s2: Vec<WellRecord> = (n1..n1 + n2).map(|i| mk(i, Epoch::Survey2_2012, "b")).collect();

    let standardization = Standardization::fit(s1.iter().chain(&s2), spec.east_extent_m)?;
    let d0 = spec
        .d0_m
        .unwrap_or_else(|| s1.iter().chain(&s2).map(|r| r.depth).sum::<f64>() / (n1 + n2) as f64);
    let loc1: Vec<Location> = s1.iter().map(|r| standardization.apply(r.east, r.north)).collect();
    let loc2: Vec<Location> = s2.iter().map(|r| standardization.apply(r.east, r.north)).collect();
    let all: Vec<Location> = loc1.iter().chain(&loc2).copied().collect();
    let grid = build_knot_grid(&all, spec.n_east_inner)?;
    let b1 = build_basis_system(&grid, &loc1)?;
    let b2 = build_basis_system(&grid, &loc2)?.with_laplacian_divisor(spec.laplacian_divisor);
    let l = b1.n_basis();

    let mut rng = ChaCha8Rng::seed_from_u64(truth_seed);
    let pr = &spec.blanket_priors;
    let params = match &settings.fixed_truth {
        Some(p) => {
            if p.beta.len() != l || p.theta2.len() != n2 && !p.theta2.is_empty() {
                return Err(DataError::Simulation(format!(
                    "fixed truth has {} surface coefficients, grid needs {l}",
                    p.beta.len()
                )));
            }
            p.clone()
        }
        None => {
            let mut p = BlanketParams::zeros(l, 0);
            p.beta0 = normal(pr.beta0_mean, pr.beta0_sd, &mut rng);
            p.beta = (0..l).map(|_| normal(0.0, pr.beta_sd, &mut rng)).collect();
            p.beta_depth = normal(0.05, 0.02, &mut rng);
            p.sigma_obs = inv_gamma_draw(pr.sigma_shape, pr.sigma_scale, &mut rng);
            p.alpha_y = normal(0.0, pr.alpha_y_sd, &mut rng);
            p.alpha_theta = normal(0.0, pr.alpha_theta_sd, &mut rng);
            p.alpha_delta = normal(0.0, pr.alpha_delta_sd, &mut rng);
            p.beta_delta = normal(0.0, pr.beta_delta_sd, &mut rng);
            p.tau = inv_gamma_draw(pr.sigma_shape, pr.sigma_scale, &mut rng);
            p
        }
    };
    let (theta1, delta) = extract_theta1_delta(params.beta0, &params.beta, &b2)?;
    let mu1 = b1.basis.matvec(&params.beta);

    let mut noise_survey1 = Vec::with_capacity(n1);
    for (i, r) in s1.iter_mut().enumerate() {
        let e = normal(0.0, params.sigma_obs, &mut rng);
        noise_survey1.push(e);
        r.lab_value = Some((params.beta0 + mu1[i] + params.beta_depth * (r.depth - d0) + e).exp());
    }
    let mut theta2 = Vec::with_capacity(n2);
    let mut eta2 = Vec::with_capacity(n2);
    let mut noise_dynamics = Vec::with_capacity(n2);
    let mut noise_eta = Vec::with_capacity(n2);
    for (i, r) in s2.iter_mut().enumerate() {
        let (gamma, _) = spec.mixing.gamma(params.alpha_y, params.alpha_theta, theta1[i]);
        let e2 = normal(0.0, params.tau, &mut rng);
        let t2 = theta1[i] + params.alpha_delta + (params.beta_delta + gamma) * delta[i] + e2;
        let e3 = normal(0.0, params.sigma_obs, &mut rng);
        let eta = t2 + params.beta_depth * (r.depth - d0) + e3;
        r.kit_category = Some(settings.calibration.sample_category(eta, &mut rng));
        theta2.push(t2);
        eta2.push(eta);
        noise_dynamics.push(e2);
        noise_eta.push(e3);
    }

    // validation panel: lab readings of resampled survey-2 wells, the 2000
    // epoch from θ₁ and the later epochs from θ₂, each with fresh lab noise
    let mut panel = Vec::with_capacity(3 * settings.n_panel);
    for &j in &panel_pick {
        let r = &s2[j];
        let shift = params.beta_depth * (r.depth - d0);
        let draws = [
            (Epoch::Panel2000, theta1[j]),
            (Epoch::Panel2014, theta2[j]),
            (Epoch::Panel2015, theta2[j]),
        ];
        for (epoch, theta) in draws {
            let e = normal(0.0, params.sigma_obs, &mut rng);
            panel.push(WellRecord {
                well_id: r.well_id.clone(),
                east: r.east,
                north: r.north,
                depth: r.depth,
                epoch,
                lab_value: Some((theta + shift + e).exp()),
                kit_category: None,
            });
        }
    }

    let mut truth_params = params;
    truth_params.theta2 = theta2.clone();
    truth_params.eta2 = eta2.clone();
    let mk_ds = |records: Vec<WellRecord>| Dataset {
        records,
        standardization,
        d0,
        report: LoadReport::default(),
    };
    let truth = SyntheticTruth {
        params: truth_params,
        theta1,
        theta2,
        delta,
        eta2,
        noise_survey1,
        noise_dynamics,
        noise_eta,
        d0,
        n_basis: l,
    };
    Ok(SimulatedBlanket {
        survey1: mk_ds(s1),
        survey2: mk_ds(s2),
        panel: mk_ds(panel),
        truth,
    })
}

/// Generating values of a simulated panel. The autoregression truth is
/// `β_lin θ + c`, which the spline represents exactly with every
/// coefficient equal to `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelTruth {
    pub gp: GpKernelParams,
    pub beta_depth: f64,
    pub sigma_s: f64,
    pub sigma_l: f64,
    pub beta_lin: f64,
    pub change_offset: f64,
    pub theta2000: Vec<f64>,
    pub theta2014: Vec<f64>,
    pub d0: f64,
}

/// Forward simulation of the resampled-panel model on `n_wells` wells.
pub fn simulate_panel(
    spec: &ModelSpec,
    truth_seed: u64,
    n_wells: usize,
    region: &Region,
    layout_seed: u64,
) -> Result<(Dataset, PanelTruth), DataError> {
    if n_wells < 2 {
        return Err(DataError::Simulation("need at least two panel wells".into()));
    }
    let mut layout_rng = ChaCha8Rng::seed_from_u64(layout_seed);
    let coords = region.place(n_wells, &mut layout_rng)?;
    let depths: Vec<f64> = (0..n_wells).map(|_| draw_depth(&mut layout_rng)).collect();
    let d0 = spec.d0_m.unwrap_or_else(|| depths.iter().sum::<f64>() / n_wells as f64);
    let stub: Vec<WellRecord> = coords
        .iter()
        .zip(&depths)
        .map(|(&(e, n), &d)| WellRecord {
            well_id: String::new(),
            east: e,
            north: n,
            depth: d,
            epoch: Epoch::Panel2000,
            lab_value: Some(1.0),
            kit_category: None,
        })
        .collect();
    let standardization = Standardization::fit(&stub, spec.east_extent_m)?;
    let locs: Vec<Location> = coords.iter().map(|&(e, n)| standardization.apply(e, n)).collect();

    let pr = &spec.resampled_priors;
    let mut rng = ChaCha8Rng::seed_from_u64(truth_seed);
    let gp = GpKernelParams {
        amplitude: inv_gamma_draw(pr.gp_shape, pr.gp_scale, &mut rng),
        length_scale: pr.rho_unit * inv_gamma_draw(pr.gp_shape, pr.gp_scale, &mut rng),
        mean: normal(pr.mu_mean, 0.5 * pr.mu_sd, &mut rng),
    };
    let beta_depth = normal(-0.02, 0.01, &mut rng);
    let sigma_s = rng.random_range(0.3..0.6);
    let sigma_l = rng.random_range(0.2..0.5);
    let beta_lin = normal(-0.2, 0.1, &mut rng);
    let change_offset = -beta_lin * gp.mean + normal(0.0, 0.1, &mut rng);

    let k = crate::geo_basis::gp_covariance_jittered(&gp, &locs)?;
    let chol = nalgebra::Cholesky::new(k).ok_or_else(|| DataError::Simulation("GP covariance not positive definite".into()))?;
    let z = nalgebra::DVector::from_iterator(n_wells, (0..n_wells).map(|_| normal(0.0, 1.0, &mut rng)));
    let f = chol.l() * z;
    let theta2000: Vec<f64> = f.iter().map(|v| gp.mean + v).collect();
    let theta2014: Vec<f64> = theta2000
        .iter()
        .map(|&t| t + beta_lin * t + change_offset + normal(0.0, sigma_l, &mut rng))
        .collect();

    let mut records = Vec::with_capacity(3 * n_wells);
    for i in 0..n_wells {
        let shift = beta_depth * (depths[i] - d0);
        for (epoch, theta) in [
            (Epoch::Panel2000, theta2000[i]),
            (Epoch::Panel2014, theta2014[i]),
            (Epoch::Panel2015, theta2014[i]),
        ] {
            records.push(WellRecord {
                well_id: format!("p{:04}", i + 1),
                east: coords[i].0,
                north: coords[i].1,
                depth: depths[i],
                epoch,
                lab_value: Some((theta + shift + normal(0.0, sigma_s, &mut rng)).exp()),
                kit_category: None,
            });
        }
    }
    let ds = Dataset {
        records,
        standardization,
        d0,
        report: LoadReport::default(),
    };
    let truth = PanelTruth {
        gp,
        beta_depth,
        sigma_s,
        sigma_l,
        beta_lin,
        change_offset,
        theta2000,
        theta2014,
        d0,
    };
    Ok((ds, truth))
}

impl PanelTruth {
    /// Mean autoregression change at θ under the generating values, in the
    /// same form the model evaluates.
    pub fn change(&self, theta: f64) -> f64 {
        let knots = [theta - 1.0, theta + 1.0];
        ResampledModel::spline_change(&knots, self.beta_lin, &[self.change_offset; 4], theta).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const S1: &str = "well_id,east_m,north_m,depth_m,as_ugL\n23456,1200.5,345.2,14.0,112\n23457,10300.5,1345.2,20.5,0\n";

    #[test]
    fn parses_survey1_row() {
        let ds = read_survey(S1.as_bytes(), Schema::Survey1).unwrap();
        let r = &ds.records[0];
        assert_eq!(r.well_id, "23456");
        assert_eq!((r.east, r.north, r.depth), (1200.5, 345.2, 14.0));
        assert_eq!(r.lab_value, Some(112.0));
        assert_eq!(r.epoch, Epoch::Survey1_2000);
        // zero floored and reported
        assert_eq!(ds.records[1].lab_value, Some(2.5));
        assert_eq!(ds.report.floored_lines, vec![3]);
        assert!((ds.d0 - 17.25).abs() < 1e-12);
    }

    #[test]
    fn kit_label_maps_to_position() {
        let text = "well_id,east_m,north_m,depth_m,kit_level\nw1,0,0,10,25\nw2,5,5,10,1000\n";
        let ds = read_survey(text.as_bytes(), Schema::Survey2).unwrap();
        assert_eq!(ds.records[0].kit_category, Some(3));
        assert_eq!(ds.records[1].kit_category, Some(9));
    }

    #[test]
    fn unknown_label_lists_valid_ones() {
        let text = "well_id,east_m,north_m,depth_m,kit_level\nw1,0,0,10,30\n";
        let err = read_survey(text.as_bytes(), Schema::Survey2).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("0, 10, 25, 50, 100, 200, 300, 500, 1000"), "{err}");
    }

    #[test]
    fn non_numeric_coordinate_names_line() {
        let text = "well_id,east_m,north_m,depth_m,as_ugL\nw1,0,0,10,5\nw2,abc,0,10,5\n";
        let err = read_survey(text.as_bytes(), Schema::Survey1).unwrap_err();
        assert!(matches!(err, DataError::Row { line: 3, .. }), "{err}");
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(matches!(read_survey("".as_bytes(), Schema::Survey1), Err(DataError::Empty)));
        let header_only = "well_id,east_m,north_m,depth_m,as_ugL\n";
        assert!(matches!(read_survey(header_only.as_bytes(), Schema::Survey1), Err(DataError::Empty)));
        assert!(matches!(read_calibration("lab_ugL,kit_level\n".as_bytes()), Err(DataError::Empty)));
    }

    #[test]
    fn wrong_header_rejected() {
        let text = "id,east,north,depth,as\nw1,0,0,10,5\n";
        assert!(matches!(read_survey(text.as_bytes(), Schema::Survey1), Err(DataError::Header { .. })));
    }

    #[test]
    fn missing_field_rejected() {
        let text = "well_id,east_m,north_m,depth_m,as_ugL\nw1,0,0,,5\n";
        let err = read_survey(text.as_bytes(), Schema::Survey1).unwrap_err();
        assert!(err.to_string().contains("missing depth_m"));
    }

    #[test]
    fn calibration_floors_below_detection_limit() {
        let text = "lab_ugL,kit_level\n3,0\n120,100\n";
        let pairs = read_calibration(text.as_bytes()).unwrap();
        assert_eq!(pairs[0].lab_value, 2.5);
        assert_eq!((pairs[1].lab_value, pairs[1].kit_category), (120.0, 5));
    }

    #[test]
    fn standardization_examples() {
        let rec = |e: f64, n: f64| WellRecord {
            well_id: "w".into(),
            east: e,
            north: n,
            depth: 10.0,
            epoch: Epoch::Survey1_2000,
            lab_value: Some(5.0),
            kit_category: None,
        };
        let ds = standardize(vec![rec(0.0, 0.0), rec(9100.0, 0.0)]).unwrap();
        let locs = ds.locations();
        assert_eq!((locs[0].east, locs[1].east), (0.0, 1.0));

        let a = vec![rec(100.0, 300.0), rec(2100.0, 900.0), rec(700.0, 1500.0)];
        let b: Vec<WellRecord> = a.iter().map(|r| rec(r.east + 1000.0, r.north + 1000.0)).collect();
        let (la, lb) = (standardize(a.clone()).unwrap().locations(), standardize(b).unwrap().locations());
        for (x, y) in la.iter().zip(&lb) {
            assert!((x.east - y.east).abs() < 1e-12 && (x.north - y.north).abs() < 1e-12);
        }
        let ds = standardize(a.clone()).unwrap();
        for (r, l) in a.iter().zip(ds.locations()) {
            let (e, n) = ds.standardization.invert(l);
            assert!((e - r.east).abs() < 1e-9 && (n - r.north).abs() < 1e-9);
        }
        assert!(standardize(vec![rec(5.0, 0.0), rec(5.0, 10.0)]).is_err());
    }

    #[test]
    fn text_round_trip_is_lossless() {
        let text = "well_id,east_m,north_m,depth_m,as_ugL\nw1,1200.5,345.2,14,112.345678\nw2,8000.25,12.5,7.5,3.14159265\n";
        let ds = read_survey(text.as_bytes(), Schema::Survey1).unwrap();
        let mut buf = Vec::new();
        write_survey(&mut buf, &ds.records, Schema::Survey1).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);

        let panel = "well_id,east_m,north_m,depth_m,as2000_ugL,as2014_ugL,as2015_ugL\np1,1,2,15.29,50,40,42.5\np2,3,4,20,7,8,9\n";
        let ds = read_survey(panel.as_bytes(), Schema::Panel).unwrap();
        assert_eq!(ds.records.len(), 6);
        assert_eq!(ds.panel_wells().unwrap()[0].lab, [50.0, 40.0, 42.5]);
        let mut buf = Vec::new();
        write_survey(&mut buf, &ds.records, Schema::Panel).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), panel);
    }

    fn settings(n1: usize, n2: usize) -> SimulationSettings {
        SimulationSettings {
            n1,
            n2,
            region: Region::rectangle(9100.0, 6700.0).with_hole(Rect {
                east_min: 3000.0,
                east_max: 4500.0,
                north_min: 2000.0,
                north_max: 3500.0,
            }),
            layout_seed: 5,
            calibration: crate::measurement::CalibrationModel::new(
                &[5.0f64, 17.0, 37.0, 75.0, 150.0, 250.0, 400.0, 750.0].map(|x| 3.0 * x.ln()),
                -3.0,
            )
            .unwrap(),
            n_panel: 20,
            fixed_truth: None,
        }
    }

    fn spec() -> ModelSpec {
        ModelSpec {
            n_east_inner: 4,
            ..ModelSpec::default()
        }
    }

    #[test]
    fn simulation_is_deterministic_and_valid() {
        let a = simulate_blanket(&spec(), 9, &settings(60, 80)).unwrap();
        let b = simulate_blanket(&spec(), 9, &settings(60, 80)).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.survey2.records, b.survey2.records);
        for r in a.survey1.records.iter().chain(&a.survey2.records).chain(&a.panel.records) {
            r.validate().unwrap();
        }
        let hole = settings(1, 1).region.holes[0];
        assert!(a.survey1.records.iter().all(|r| !hole.contains(r.east, r.north)));
        assert_eq!(a.panel.panel_wells().unwrap().len(), 20);
    }

    #[test]
    fn noise_free_limit_reproduces_surfaces() {
        let base = simulate_blanket(&spec(), 1, &settings(40, 40)).unwrap();
        let mut fixed = base.truth.params.clone();
        fixed.sigma_obs = 1e-6;
        fixed.tau = 1e-6;
        let mut s = settings(40, 40);
        s.fixed_truth = Some(fixed);
        let sim = simulate_blanket(&spec(), 2, &s).unwrap();
        let t = &sim.truth;
        let locs = sim.survey1.locations();
        let all: Vec<Location> = locs.iter().chain(&sim.survey2.locations()).copied().collect();
        let grid = build_knot_grid(&all, 4).unwrap();
        let b1 = build_basis_system(&grid, &locs).unwrap();
        let mu = b1.basis.matvec(&t.params.beta);
        for (i, r) in sim.survey1.records.iter().enumerate() {
            let want = t.params.beta0 + mu[i] + t.params.beta_depth * (r.depth - t.d0);
            assert!((r.lab_value.unwrap().ln() - want).abs() < 1e-4);
        }
        for i in 0..40 {
            let (g, _) = spec().mixing.gamma(t.params.alpha_y, t.params.alpha_theta, t.theta1[i]);
            let want = t.theta1[i] + t.params.alpha_delta + (t.params.beta_delta + g) * t.delta[i];
            assert!((t.theta2[i] - want).abs() < 1e-4);
        }
    }

    #[test]
    fn truth_seed_changes_noise_not_surface() {
        let base = simulate_blanket(&spec(), 1, &settings(40, 40)).unwrap();
        let mut s = settings(40, 40);
        s.fixed_truth = Some(base.truth.params.clone());
        let a = simulate_blanket(&spec(), 2, &s).unwrap();
        let b = simulate_blanket(&spec(), 3, &s).unwrap();
        assert_eq!(a.truth.theta1, b.truth.theta1);
        assert_eq!(a.truth.delta, b.truth.delta);
        assert_ne!(a.truth.noise_survey1, b.truth.noise_survey1);
        assert_ne!(a.truth.theta2, b.truth.theta2);
    }

    #[test]
    fn kit_frequencies_match_category_probabilities() {
        let sim = simulate_blanket(&spec(), 4, &settings(20, 3000)).unwrap();
        let cal = settings(1, 1).calibration;
        let n = 3000.0;
        for k in 1..=9u8 {
            let emp = sim.survey2.records.iter().filter(|r| r.kit_category == Some(k)).count() as f64 / n;
            let p: f64 = sim
                .truth
                .eta2
                .iter()
                .map(|&e| cal.kit_category_probabilities(e).unwrap()[k as usize - 1])
                .sum::<f64>()
                / n;
            let se = (p * (1.0 - p) / n).sqrt().max(1e-9);
            assert!((emp - p).abs() < 3.0 * se + 1e-12, "k={k}: {emp} vs {p}");
        }
    }

    #[test]
    fn crowded_region_errors() {
        let mut s = settings(50, 50);
        s.region = Region::rectangle(100.0, 100.0);
        s.region.min_separation_m = 50.0;
        assert!(matches!(simulate_blanket(&spec(), 1, &s), Err(DataError::Simulation(_))));
    }

    #[test]
    fn panel_simulation() {
        let (ds, truth) = simulate_panel(&spec(), 3, 30, &Region::rectangle(9100.0, 6700.0), 1).unwrap();
        assert_eq!(ds.panel_wells().unwrap().len(), 30);
        let t = truth.theta2000[0];
        assert!((truth.change(t) - (truth.beta_lin * t + truth.change_offset)).abs() < 1e-12);
    }
}
