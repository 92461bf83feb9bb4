//! Synthetic multi-year herd panels driven by a latent risk variable.
//!
//! Each emitted year draws `Z = μ + ε`, `ε ~ N(0, 1)`, and labels positive
//! exactly the `⌈n·ρ⌉` herds with the largest `Z`. Years 1–3 are burn-in with
//! i.i.d. Bernoulli(ρ) statuses so the three status lags exist from year 4.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{invalid, Error, Result};
use crate::herdgraph::{local_density, NeighborGraph};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::seed;

const BURN_IN_YEARS: u32 = 3;

const STREAM_GRAPH: u64 = 1;
const STREAM_BURN_IN: u64 = 2;
const STREAM_COVARIATES: u64 = 3;
const STREAM_NOISE: u64 = 4;

/// Latent-mean coefficients: intercept, seven linear terms, the periodic
/// stillbirth×knackery term and the quadratic density term.
pub type Betas = [f64; 10];

/// Shipped coefficients, calibrated against the default covariate distributions.
pub const DEFAULT_BETAS: Betas = [0.0, 10.0, 4.0, 2.0, 0.02, 0.1, 0.1, 0.001, 4.0, 8.0];

/// Distribution parameters for the count covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovariateParams {
    /// Herd size `x7 ~ round(LogNormal(meanlog, sdlog))`, at least 1.
    pub herd_size_meanlog: f64,
    pub herd_size_sdlog: f64,
    /// Imports `x4 ~ Poisson(imports_mean)`.
    pub imports_mean: f64,
    /// Stillbirths `x5 ~ Poisson(stillbirth_rate · x7)`.
    pub stillbirth_rate: f64,
    /// Knackery movements `x6 ~ Poisson(knackery_rate · x7)`.
    pub knackery_rate: f64,
    /// Redraw x4..x7 every year; when false each herd keeps one draw.
    pub redraw_each_year: bool,
}

impl Default for CovariateParams {
    fn default() -> Self {
        Self {
            herd_size_meanlog: 4.0,
            herd_size_sdlog: 0.6,
            imports_mean: 3.0,
            stillbirth_rate: 0.05,
            knackery_rate: 0.05,
            redraw_each_year: true,
        }
    }
}

/// Random geometric neighbour graph in the unit square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphParams {
    /// Target mean degree; sets the connection radius.
    pub mean_degree: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self { mean_degree: 8.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_herds: usize,
    pub n_years: u32,
    /// Fraction of herds labelled positive in every emitted year.
    pub target_prevalence: f64,
    pub betas: Betas,
    /// Multiplier inside the periodic term, `sin(π·f·x5·x6)`.
    pub sine_frequency: f64,
    pub covariate_params: CovariateParams,
    pub graph_params: GraphParams,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_herds: 800,
            n_years: 4,
            target_prevalence: 0.1,
            betas: DEFAULT_BETAS,
            sine_frequency: 0.5,
            covariate_params: CovariateParams::default(),
            graph_params: GraphParams::default(),
            seed: 42,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_herds == 0 {
            return Err(invalid("degenerate graph: n_herds must be positive"));
        }
        if self.n_years < BURN_IN_YEARS + 1 {
            return Err(invalid(format!(
                "n_years must be at least {} to provide three status lags",
                BURN_IN_YEARS + 1
            )));
        }
        if !(self.target_prevalence > 0.0 && self.target_prevalence <= 1.0) {
            return Err(invalid("target_prevalence must lie in (0, 1]"));
        }
        if self.betas.iter().any(|b| !b.is_finite()) || !self.sine_frequency.is_finite() {
            return Err(Error::NonFinite("betas".into()));
        }
        let c = &self.covariate_params;
        let positive = [
            ("herd_size_meanlog", c.herd_size_meanlog),
            ("herd_size_sdlog", c.herd_size_sdlog),
            ("imports_mean", c.imports_mean),
            ("stillbirth_rate", c.stillbirth_rate),
            ("knackery_rate", c.knackery_rate),
            ("mean_degree", self.graph_params.mean_degree),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be strictly positive")));
            }
        }
        Ok(())
    }

    /// Number of herds labelled positive per emitted year.
    pub fn positives_per_year(&self) -> usize {
        positive_count(self.n_herds, self.target_prevalence)
    }
}

fn positive_count(n: usize, rho: f64) -> usize {
    // guard against 0.1 · 10000 = 1000.0000000000001 style products
    (((n as f64) * rho) - 1e-9).ceil().max(0.0) as usize
}

/// One herd in one year. Covariates x4..x8 describe the previous year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HerdYearRecord {
    pub herd_id: i64,
    pub year: u32,
    pub x1: u8,
    pub x2: u8,
    pub x3: u8,
    pub x4: u32,
    pub x5: u32,
    pub x6: u32,
    pub x7: u32,
    pub x8: f64,
    pub z: f64,
    pub status: u8,
}

impl HerdYearRecord {
    /// Covariates `x1..x8` as reals.
    pub fn covariates(&self) -> [f64; 8] {
        [
            f64::from(self.x1),
            f64::from(self.x2),
            f64::from(self.x3),
            f64::from(self.x4),
            f64::from(self.x5),
            f64::from(self.x6),
            f64::from(self.x7),
            self.x8,
        ]
    }
}

pub const COVARIATE_NAMES: [&str; 8] = ["x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8"];

/// Mean of the latent variable for a record, using covariates as reals.
///
/// `β0 + Σ βk·xk + β8·sin(π·x5·x6) + β9·(x8 − (x8_min + x8_max)/2)²`
pub fn latent_mean(record: &[f64; 8], betas: &Betas, x8_min: f64, x8_max: f64) -> Result<f64> {
    latent_mean_with_frequency(record, betas, 1.0, x8_min, x8_max)
}

/// [`latent_mean`] with the periodic term evaluated as `sin(π·f·x5·x6)`.
pub fn latent_mean_with_frequency(
    x: &[f64; 8],
    betas: &Betas,
    frequency: f64,
    x8_min: f64,
    x8_max: f64,
) -> Result<f64> {
    if x.iter().chain(betas).chain([&frequency, &x8_min, &x8_max]).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("latent mean inputs".into()));
    }
    if x8_min > x8_max {
        return Err(invalid("x8_min exceeds x8_max"));
    }
    let linear: f64 = betas[1..8].iter().zip(&x[..7]).map(|(b, v)| b * v).sum();
    let periodic = (std::f64::consts::PI * frequency * x[4] * x[5]).sin();
    let centre = (x8_min + x8_max) / 2.0;
    let quad = (x[7] - centre).powi(2);
    Ok(betas[0] + linear + betas[8] * periodic + betas[9] * quad)
}

fn records_to_dataset<'a, T: Scalar>(records: impl Iterator<Item = &'a HerdYearRecord>) -> Result<Dataset<T>> {
    let records: Vec<&HerdYearRecord> = records.collect();
    let mut data = Vec::with_capacity(records.len() * 8);
    for r in &records {
        data.extend(r.covariates().iter().map(|&v| T::lit(v)));
    }
    let features = Matrix::from_vec(records.len(), 8, data)?;
    let names = COVARIATE_NAMES.iter().map(|s| (*s).to_owned()).collect();
    let labels = records.iter().map(|r| r.status).collect();
    Dataset::new(names, features, labels)?.with_ids(records.iter().map(|r| r.herd_id).collect())
}

/// Every emitted herd-year of a simulation and the graph behind x8.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    pub records: Vec<HerdYearRecord>,
    pub graph: NeighborGraph,
}

impl PanelData {
    pub fn years(&self) -> Vec<u32> {
        let mut y: Vec<u32> = self.records.iter().map(|r| r.year).collect();
        y.dedup();
        y
    }

    pub fn year(&self, year: u32) -> impl Iterator<Item = &HerdYearRecord> {
        self.records.iter().filter(move |r| r.year == year)
    }

    /// Covariates x1..x8 with `status` as label and herd ids attached.
    pub fn to_dataset<T: Scalar>(&self) -> Result<Dataset<T>> {
        records_to_dataset(self.records.iter())
    }

    /// Like [`PanelData::to_dataset`], restricted to one year.
    pub fn year_dataset<T: Scalar>(&self, year: u32) -> Result<Dataset<T>> {
        records_to_dataset(self.year(year))
    }

    pub fn last_year(&self) -> Option<u32> {
        self.records.iter().map(|r| r.year).max()
    }

    /// CSV with columns `herd_id, year, x1..x8, status`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["herd_id", "year", "x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "status"])?;
        for r in &self.records {
            w.write_record([
                r.herd_id.to_string(),
                r.year.to_string(),
                r.x1.to_string(),
                r.x2.to_string(),
                r.x3.to_string(),
                r.x4.to_string(),
                r.x5.to_string(),
                r.x6.to_string(),
                r.x7.to_string(),
                r.x8.to_string(),
                r.status.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Random geometric graph: uniform points in the unit square, joined when
/// closer than the radius giving the requested mean degree.
pub fn random_geometric_graph(n: usize, mean_degree: f64, seed_value: u64) -> Result<NeighborGraph> {
    if n == 0 {
        return Err(invalid("degenerate graph: zero nodes"));
    }
    let mut rng = seed::rng(seed_value, &[STREAM_GRAPH]);
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
    let radius = if n > 1 {
        (mean_degree / (std::f64::consts::PI * (n - 1) as f64)).sqrt().min(1.5)
    } else {
        0.0
    };
    let cells = ((1.0 / radius.max(1e-12)).floor() as usize).clamp(1, 4096);
    let cell_of = |v: f64| ((v * cells as f64) as usize).min(cells - 1);
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); cells * cells];
    for (i, &(x, y)) in pts.iter().enumerate() {
        grid[cell_of(y) * cells + cell_of(x)].push(i);
    }
    let r2 = radius * radius;
    let mut edges = Vec::new();
    for (i, &(x, y)) in pts.iter().enumerate() {
        let (cx, cy) = (cell_of(x) as isize, cell_of(y) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (cx + dx, cy + dy);
                if nx < 0 || ny < 0 || nx >= cells as isize || ny >= cells as isize {
                    continue;
                }
                for &j in &grid[ny as usize * cells + nx as usize] {
                    if j > i {
                        let (ex, ey) = (pts[j].0 - x, pts[j].1 - y);
                        if ex * ex + ey * ey <= r2 {
                            edges.push((i, j));
                        }
                    }
                }
            }
        }
    }
    NeighborGraph::new((0..n as i64).collect(), &edges)
}

#[derive(Clone, Copy)]
struct Covariates {
    imports: u32,
    stillbirths: u32,
    knackery: u32,
    herd_size: u32,
}

fn draw_covariates(params: &CovariateParams, seed_value: u64, year: u32, herd: usize) -> Covariates {
    let stream_year = if params.redraw_each_year { u64::from(year) } else { 0 };
    let mut rng = seed::rng(seed_value, &[STREAM_COVARIATES, stream_year, herd as u64]);
    let size = LogNormal::new(params.herd_size_meanlog, params.herd_size_sdlog)
        .expect("validated lognormal parameters")
        .sample(&mut rng)
        .round()
        .max(1.0);
    let poisson = |rate: f64, rng: &mut seed::Rng| -> u32 {
        Poisson::new(rate).expect("validated poisson rate").sample(rng) as u32
    };
    let imports = poisson(params.imports_mean, &mut rng);
    let stillbirths = poisson(params.stillbirth_rate * size, &mut rng);
    let knackery = poisson(params.knackery_rate * size, &mut rng);
    Covariates {
        imports,
        stillbirths,
        knackery,
        herd_size: size.min(f64::from(u32::MAX)) as u32,
    }
}

/// Simulates a panel on a freshly generated random geometric graph.
pub fn simulate_panel(config: &SimConfig) -> Result<PanelData> {
    config.validate()?;
    let graph = random_geometric_graph(config.n_herds, config.graph_params.mean_degree, config.seed)?;
    simulate_panel_on(config, graph)
}

/// Simulates a panel on a caller-supplied neighbour graph.
pub fn simulate_panel_on(config: &SimConfig, graph: NeighborGraph) -> Result<PanelData> {
    config.validate()?;
    if graph.len() != config.n_herds {
        return Err(Error::DimensionMismatch {
            expected: config.n_herds,
            got: graph.len(),
        });
    }
    let n = config.n_herds;
    let rho = config.target_prevalence;
    let n_pos = positive_count(n, rho);

    // statuses[y - 1] holds year y
    let mut statuses: Vec<Vec<u8>> = (1..=BURN_IN_YEARS)
        .map(|y| {
            (0..n)
                .map(|h| {
                    let mut rng = seed::rng(config.seed, &[STREAM_BURN_IN, u64::from(y), h as u64]);
                    u8::from(rng.random::<f64>() < rho)
                })
                .collect()
        })
        .collect();

    let mut records = Vec::with_capacity(n * (config.n_years - BURN_IN_YEARS) as usize);
    for year in BURN_IN_YEARS + 1..=config.n_years {
        let j = year as usize - 1;
        let density = local_density(&graph, &statuses[j - 1])?;
        let (x8_min, x8_max) = density
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));

        let mut year_records: Vec<HerdYearRecord> = (0..n)
            .into_par_iter()
            .map(|h| {
                let cov = draw_covariates(&config.covariate_params, config.seed, year, h);
                let mut rec = HerdYearRecord {
                    herd_id: graph.node_ids()[h],
                    year,
                    x1: statuses[j - 1][h],
                    x2: statuses[j - 2][h],
                    x3: statuses[j - 3][h],
                    x4: cov.imports,
                    x5: cov.stillbirths,
                    x6: cov.knackery,
                    x7: cov.herd_size,
                    x8: density[h],
                    z: 0.0,
                    status: 0,
                };
                let mu = latent_mean_with_frequency(
                    &rec.covariates(),
                    &config.betas,
                    config.sine_frequency,
                    x8_min,
                    x8_max,
                )?;
                let mut rng = seed::rng(config.seed, &[STREAM_NOISE, u64::from(year), h as u64]);
                let eps: f64 = rng.sample(StandardNormal);
                rec.z = mu + eps;
                Ok(rec)
            })
            .collect::<Result<_>>()?;

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            year_records[b]
                .z
                .total_cmp(&year_records[a].z)
                .then(a.cmp(&b))
        });
        let mut status = vec![0u8; n];
        for &h in &order[..n_pos] {
            status[h] = 1;
            year_records[h].status = 1;
        }
        statuses.push(status);
        records.extend(year_records);
    }
    Ok(PanelData { records, graph })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeros() -> [f64; 8] {
        [0.0; 8]
    }

    #[test]
    fn latent_mean_examples() {
        assert_eq!(latent_mean(&zeros(), &[0.0; 10], 0.0, 0.0).unwrap(), 0.0);
        let mut b = [0.0; 10];
        b[8] = 1.0;
        let mut x = zeros();
        x[4] = 1.0;
        x[5] = 1.0;
        assert!(latent_mean(&x, &b, 0.0, 0.0).unwrap().abs() < 1e-15);
        x[4] = 0.5;
        assert!((latent_mean(&x, &b, 0.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn latent_mean_full_formula() {
        let x = [1.0, 0.0, 1.0, 3.0, 2.0, 0.25, 50.0, 0.5];
        let b = [0.5, 1.0, 2.0, 3.0, 0.1, 0.2, 0.3, 0.01, 2.0, 4.0];
        let expected = 0.5 + 1.0 + 3.0 + 0.3 + 0.4 + 0.075 + 0.5
            + 2.0 * (std::f64::consts::PI * 0.5).sin()
            + 4.0 * (0.5f64 - 0.4).powi(2);
        let got = latent_mean(&x, &b, 0.0, 0.8).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn latent_mean_rejects_non_finite() {
        let mut x = zeros();
        x[7] = f64::NAN;
        assert!(latent_mean(&x, &[0.0; 10], 0.0, 1.0).is_err());
        assert!(latent_mean(&zeros(), &[f64::INFINITY; 10], 0.0, 1.0).is_err());
    }

    #[test]
    fn latent_mean_linear_in_betas() {
        let x = [1.0, 1.0, 0.0, 2.0, 3.0, 1.0, 40.0, 0.3];
        let b = [0.3, 1.5, 1.0, 0.5, 0.02, 0.1, 0.1, 0.001, 2.0, 8.0];
        let b2 = b.map(|v| 2.0 * v);
        let one = latent_mean_with_frequency(&x, &b, 0.5, 0.0, 0.9).unwrap();
        let two = latent_mean_with_frequency(&x, &b2, 0.5, 0.0, 0.9).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = SimConfig::default();
        c.n_years = 3;
        assert!(simulate_panel(&c).is_err());
        let mut c = SimConfig::default();
        c.n_herds = 0;
        assert!(simulate_panel(&c).is_err());
        let mut c = SimConfig::default();
        c.target_prevalence = 0.0;
        assert!(c.validate().is_err());
        let mut c = SimConfig::default();
        c.covariate_params.knackery_rate = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn positive_counts() {
        assert_eq!(positive_count(800, 0.5), 400);
        assert_eq!(positive_count(800, 0.01), 8);
        assert_eq!(positive_count(10_000, 0.1), 1000);
        assert_eq!(positive_count(10, 0.15), 2);
    }

    #[test]
    fn small_panel_counts() {
        let c = SimConfig {
            n_herds: 800,
            target_prevalence: 0.01,
            ..SimConfig::default()
        };
        let panel = simulate_panel(&c).unwrap();
        assert_eq!(panel.records.len(), 800);
        assert_eq!(panel.records.iter().filter(|r| r.status == 1).count(), 8);
    }

    #[test]
    fn geometric_graph_mean_degree() {
        let g = random_geometric_graph(4000, 8.0, 3).unwrap();
        let mean = 2.0 * g.edge_count() as f64 / g.len() as f64;
        // boundary effects pull the mean slightly below the target
        assert!((6.5..=8.5).contains(&mean), "mean degree {mean}");
    }
}
