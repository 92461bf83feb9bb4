use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use herdsurv::anomaly::{threshold_from_scores, Detector, DetectorKind, DetectorParams, ThresholdMethod};
use herdsurv::bench::{emit_report, run_scenarios_with_workers, ReportFormat, ScenarioConfig};
use herdsurv::herdgraph::{centralities, local_density, NeighborGraph};
use herdsurv::simgen::{simulate_panel, SimConfig};
use herdsurv::{Matrix64, Standardizer};

const WORKERS_ENV: &str = "BVDBENCH_WORKERS";

#[derive(Parser)]
#[command(name = "bvdbench", version, about = "Herd surveillance simulation, scoring and benchmarking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a herd panel and write it as CSV.
    Simulate {
        /// Simulation settings (JSON); omitted fields take their defaults.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the neighbour graph as an edge list.
        #[arg(long)]
        edges_out: Option<PathBuf>,
    },
    /// Degree, betweenness, closeness and local disease density per herd.
    GraphFeatures {
        /// Edge list; the first two columns hold herd ids.
        #[arg(long)]
        edges: PathBuf,
        /// Prior-year statuses with `herd_id` and `status` columns.
        #[arg(long)]
        statuses: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score rows with an anomaly detector and flag the highest.
    Score {
        /// lof, knn, abof, mahalanobis, mcd, isolation_forest or autoencoder.
        #[arg(long)]
        detector: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated feature columns; defaults to every column except id and label.
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<String>>,
        #[arg(long, default_value = "herd_id")]
        id_column: String,
        /// Column ignored when features are inferred.
        #[arg(long, default_value = "status")]
        label_column: String,
        /// Expected fraction of anomalies; sets the flagging threshold.
        #[arg(long, default_value_t = 0.05)]
        contamination: f64,
        /// Neighbours for lof and knn.
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Run the scenario grid and write reports.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// csv, md or json; all three when omitted.
        #[arg(long)]
        format: Option<String>,
        /// Worker threads; the BVDBENCH_WORKERS variable takes precedence.
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { config, out, edges_out } => simulate(&config, &out, edges_out.as_deref()),
        Command::GraphFeatures { edges, statuses, out } => graph_features(&edges, &statuses, &out),
        Command::Score {
            detector,
            input,
            out,
            features,
            id_column,
            label_column,
            contamination,
            k,
            seed,
        } => {
            let kind: DetectorKind = detector.parse()?;
            let params = DetectorParams { k, ..DetectorParams::default() };
            let table = NumericTable::read(&input, &id_column, &label_column, features.as_deref())?;
            score(kind, &table, &params, contamination, seed, &out)
        }
        Command::Bench {
            config,
            out_dir,
            format,
            workers,
        } => bench(&config, &out_dir, format.as_deref(), workers),
    }
}

fn simulate(config: &Path, out: &Path, edges_out: Option<&Path>) -> Result<ExitCode> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let config: SimConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
    let panel = simulate_panel(&config)?;
    panel.save_csv(out)?;
    if let Some(path) = edges_out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["herd_a", "herd_b"])?;
        let ids = panel.graph.node_ids();
        for (a, b) in panel.graph.edges() {
            w.write_record([ids[a].to_string(), ids[b].to_string()])?;
        }
        w.flush()?;
    }
    eprintln!("wrote {} records to {}", panel.records.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_id(s: &str, path: &Path, row: usize) -> Result<i64> {
    s.trim()
        .parse()
        .map_err(|_| anyhow!("{}: row {row}: {s:?} is not an integer id", path.display()))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| anyhow!("{}: missing column {name:?}", path.display()))
}

fn graph_features(edges: &Path, statuses: &Path, out: &Path) -> Result<ExitCode> {
    let mut status_of = HashMap::new();
    let mut order = Vec::new();
    let mut rdr = csv::Reader::from_path(statuses).with_context(|| format!("opening {}", statuses.display()))?;
    let headers = rdr.headers()?.clone();
    let (id_col, status_col) = (column(&headers, "herd_id", statuses)?, column(&headers, "status", statuses)?);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let id = parse_id(&rec[id_col], statuses, row)?;
        let status = match rec[status_col].trim() {
            "0" => 0u8,
            "1" => 1u8,
            other => bail!("{}: row {row}: status {other:?} is not 0 or 1", statuses.display()),
        };
        if status_of.insert(id, status).is_some() {
            bail!("{}: row {row}: duplicate herd {id}", statuses.display());
        }
        order.push(id);
    }

    let mut rdr = csv::Reader::from_path(edges).with_context(|| format!("opening {}", edges.display()))?;
    if rdr.headers()?.len() < 2 {
        bail!("{}: expected two id columns", edges.display());
    }
    let mut pairs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        pairs.push((parse_id(&rec[0], edges, i + 2)?, parse_id(&rec[1], edges, i + 2)?));
    }
    let graph = NeighborGraph::from_id_edges(&order, &pairs)?;
    let ids = graph.node_ids();
    if let Some(id) = ids.iter().find(|id| !status_of.contains_key(id)) {
        bail!("herd {id} appears in {} but has no status", edges.display());
    }
    let statuses: Vec<u8> = ids.iter().map(|id| status_of[id]).collect();
    let cent = centralities(&graph)?;
    let density = local_density(&graph, &statuses)?;

    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["herd_id", "degree", "betweenness", "closeness", "local_density"])?;
    for (i, c) in cent.iter().enumerate() {
        w.write_record([
            ids[i].to_string(),
            c.degree.to_string(),
            c.betweenness.to_string(),
            c.closeness.to_string(),
            density[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

/// Identifier column plus numeric features read from a CSV file.
struct NumericTable {
    ids: Vec<String>,
    features: Matrix64,
}

impl NumericTable {
    fn read(path: &Path, id_column: &str, label_column: &str, features: Option<&[String]>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        let headers = rdr.headers()?.clone();
        let id_col = headers.iter().position(|h| h.trim() == id_column);
        let cols: Vec<usize> = match features {
            Some(names) => names.iter().map(|n| column(&headers, n, path)).collect::<Result<_>>()?,
            None => (0..headers.len())
                .filter(|&c| Some(c) != id_col && headers[c].trim() != label_column)
                .collect(),
        };
        if cols.is_empty() {
            bail!("{}: no feature columns", path.display());
        }
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            ids.push(id_col.map_or_else(|| (i + 1).to_string(), |c| rec[c].trim().to_owned()));
            for &c in &cols {
                let cell = rec.get(c).unwrap_or("").trim();
                let v: f64 = cell
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| anyhow!("{}: row {row}, column {:?}: {cell:?} is not a number", path.display(), &headers[c]))?;
                data.push(v);
            }
        }
        let features = Matrix64::from_vec(ids.len(), cols.len(), data)?;
        Ok(Self { ids, features })
    }
}

fn score(kind: DetectorKind, table: &NumericTable, params: &DetectorParams, contamination: f64, seed: u64, out: &Path) -> Result<ExitCode> {
    let x = Standardizer::fit(&table.features)?.transform(&table.features)?;
    let detector = Detector::fit(kind, &x, params, seed)?;
    let scores = detector.train_scores(&x)?;
    let threshold = threshold_from_scores(scores.values(), ThresholdMethod::ContaminationQuantile(contamination))?;
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["herd_id", "score", "flagged"])?;
    let mut flagged = 0;
    for (id, &s) in table.ids.iter().zip(scores.values()) {
        let f = s >= threshold;
        flagged += usize::from(f);
        w.write_record([id.clone(), s.to_string(), u8::from(f).to_string()])?;
    }
    w.flush()?;
    eprintln!("{kind}: flagged {flagged} of {} rows (threshold {threshold})", table.ids.len());
    Ok(ExitCode::SUCCESS)
}

fn worker_count(flag: Option<usize>) -> Result<usize> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow!("{WORKERS_ENV}={v:?} is not a positive integer"))?;
        if n == 0 {
            bail!("{WORKERS_ENV} must be at least 1");
        }
        return Ok(n);
    }
    match flag {
        Some(0) => bail!("--workers must be at least 1"),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn bench(config: &Path, out_dir: &Path, format: Option<&str>, workers: Option<usize>) -> Result<ExitCode> {
    let config = ScenarioConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    let formats = match format {
        Some(f) => vec![f.parse::<ReportFormat>()?],
        None => vec![ReportFormat::Csv, ReportFormat::Markdown, ReportFormat::Json],
    };
    let workers = worker_count(workers)?;
    let reports = run_scenarios_with_workers(&config, workers)?;
    for f in formats {
        let path = emit_report(&config, &reports, f, out_dir)?;
        eprintln!("wrote {}", path.display());
    }
    let failed: Vec<_> = reports.iter().filter(|r| r.is_failure()).collect();
    for r in &failed {
        eprintln!(
            "failed: n={} prevalence={} {} {}: {:?}",
            r.scenario.sample_size,
            r.scenario.prevalence,
            r.scenario.strategy.name(),
            r.scenario.model,
            r.status
        );
    }
    Ok(if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
