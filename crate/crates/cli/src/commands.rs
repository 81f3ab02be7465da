use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use kernlat_core::curve::RationalFit;
use kernlat_core::membound::fit_all;
use kernlat_core::nas::{precompute, CacheStore, GridSpec, PrecomputeOptions};
use kernlat_core::oracle::{emit_fixture, planted_map, preset, OracleConfig};
use kernlat_core::partition::{partition_with, PartitionPlan, TransferModel};
use kernlat_core::report::{build_error_report, case_axis, Case};
use kernlat_core::{
    fit_rational, grid_error_report, load_dataset, load_model_graph, merge_datasets, DType,
    Dataset, Error, Family, LayerShape, LayerSpec, MatMulShape, MemBoundFeatures, Predictor,
    RowShape, TransposeMode,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::args::{Cli, Command, Format, GlobalArgs, OracleCommand, PredictArgs, ReportCommand};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Ingest { files } => ingest(g, files),
        Command::Fit { refit } => fit(g, *refit),
        Command::Predict(args) => predict(g, args),
        Command::PredictModel { graph } => predict_model(g, graph),
        Command::Precompute {
            grid,
            out,
            skip_unresolved,
        } => run_precompute(g, grid, out, *skip_unresolved),
        Command::Lookup { cache, point, grid } => lookup(g, cache, point, grid.as_deref()),
        Command::Partition {
            graph,
            dataset_b,
            requests,
            transfer,
        } => partition(g, graph, dataset_b, *requests, transfer.as_deref()),
        Command::Report(ReportCommand::Errors { cases, bins }) => report_errors(g, cases, *bins),
        Command::Report(ReportCommand::Grid {
            oracle_config,
            preset,
        }) => report_grid(g, oracle_config.as_deref(), preset.as_deref()),
        Command::Oracle(OracleCommand::Emit {
            preset,
            config,
            noise,
        }) => oracle_emit(g, preset.as_deref(), config.as_deref(), *noise),
        Command::Oracle(OracleCommand::Config { preset: name }) => {
            let cfg = preset(name)?;
            json_only(g)?;
            write_json(g, &cfg)
        }
    }
}

fn dataset_path(g: &GlobalArgs) -> Result<&Path> {
    g.dataset
        .as_deref()
        .ok_or_else(|| usage("--dataset (or PM2LAT_DATASET) is required"))
}

fn dataset(g: &GlobalArgs) -> Result<Dataset> {
    Ok(load_dataset(dataset_path(g)?)?)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Core(Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    })
}

fn write_out(g: &GlobalArgs, text: &str) -> Result<()> {
    let io = |path: PathBuf| move |source| CliError::Core(Error::Io { path, source });
    match &g.output {
        Some(path) => std::fs::write(path, text).map_err(io(path.clone())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(io(PathBuf::from("<stdout>")))
        }
    }
}

fn write_json<T: Serialize>(g: &GlobalArgs, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    write_out(g, &text)
}

fn write_csv(g: &GlobalArgs, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| usage(format!("csv output: {e}"));
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| usage(format!("csv output: {e}")))?;
    write_out(g, &String::from_utf8(bytes).expect("csv is utf-8"))
}

fn json_only(g: &GlobalArgs) -> Result<()> {
    match g.format {
        Format::Json => Ok(()),
        Format::Csv => Err(usage("this command only writes JSON")),
    }
}

fn note(g: &GlobalArgs, msg: impl AsRef<str>) {
    if !g.quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn ingest(g: &GlobalArgs, files: &[PathBuf]) -> Result<()> {
    json_only(g)?;
    let paths: Vec<&Path> = if files.is_empty() {
        vec![dataset_path(g)?]
    } else {
        files.iter().map(PathBuf::as_path).collect()
    };
    let mut merged: Option<Dataset> = None;
    for p in paths {
        let ds = load_dataset(p)?;
        merged = Some(match merged {
            None => ds,
            Some(acc) => merge_datasets(&acc, &ds)?,
        });
    }
    let ds = merged.expect("at least one path");
    note(
        g,
        format!(
            "{}: {} curves, {} config records, {} memory-bound records, {} models",
            ds.device.device_id,
            ds.curves.len(),
            ds.config_map.len(),
            ds.membound_records.len(),
            ds.membound_models.len()
        ),
    );
    write_out(g, &(ds.to_json_string() + "\n"))
}

fn fit(g: &GlobalArgs, refit: bool) -> Result<()> {
    json_only(g)?;
    let mut ds = dataset(g)?;
    let records: Vec<_> = ds
        .membound_records
        .iter()
        .filter(|r| refit || ds.membound_model(&r.kernel_name, r.dtype).is_none())
        .cloned()
        .collect();
    let fitted = fit_all(&records, &ds.device.device_id)?;
    for m in &fitted {
        note(
            g,
            format!(
                "{}/{}: mean rel err {:.4}, max {:.4}",
                m.kernel_name, m.dtype, m.residual_stats.mean_rel_err, m.residual_stats.max_rel_err
            ),
        );
    }
    ds.membound_models
        .retain(|m| !fitted.iter().any(|f| f.kernel_name == m.kernel_name && f.dtype == m.dtype));
    ds.membound_models.extend(fitted);
    ds.canonicalize();
    ds.validate()?;
    write_out(g, &(ds.to_json_string() + "\n"))
}

fn parse_arg<T: std::str::FromStr<Err = Error>>(flag: &str, v: &str) -> Result<T> {
    v.parse().map_err(|e: Error| usage(format!("--{flag}: {e}")))
}

fn layer_from_args(a: &PredictArgs) -> Result<LayerSpec> {
    let family: Family = parse_arg("family", &a.family)?;
    let dtype: DType = parse_arg("dtype", &a.dtype)?;
    let transpose = a
        .transpose
        .as_deref()
        .map(|t| parse_arg::<TransposeMode>("transpose", t))
        .transpose()?;
    let need = |flag: &str, v: Option<u64>| {
        v.ok_or_else(|| usage(format!("--{flag} is required for family {family}")))
    };
    let (shape, features) = if family.is_utility() {
        let f = MemBoundFeatures {
            flops: a.flops.unwrap_or(0.0),
            int_ops: a.int_ops.unwrap_or(0.0),
            bytes_loaded: a.bytes_loaded.unwrap_or(0.0),
            bytes_stored: a.bytes_stored.unwrap_or(0.0),
            total_bytes_accessed: a.total_bytes.unwrap_or(0.0),
        };
        (None, Some(f))
    } else if family.is_row_generic() {
        let rows = need("rows", a.rows)?;
        let dim = need("dim", a.dim)?;
        (Some(LayerShape::Rows(RowShape { rows, dim })), None)
    } else {
        let s = MatMulShape::new(a.batch.unwrap_or(1), need("m", a.m)?, need("n", a.n)?, need("k", a.k)?);
        (Some(LayerShape::MatMul(s)), None)
    };
    Ok(LayerSpec {
        layer_id: "cli".into(),
        family,
        dtype,
        shape,
        features,
        transpose_mode: transpose,
        resolved_key: None,
    })
}

fn predict(g: &GlobalArgs, args: &PredictArgs) -> Result<()> {
    let layer = layer_from_args(args)?;
    let ds = dataset(g)?;
    let p = Predictor::new(&ds)?;
    if let Some(LayerShape::MatMul(s)) = &layer.shape {
        s.validate()?;
    }
    let pred = p.predict_layer(&layer)?;
    match g.format {
        Format::Json => write_json(g, &pred),
        Format::Csv => write_csv(
            g,
            &["latency_us", "kernel"],
            vec![vec![pred.latency_us.to_string(), pred.kernel.to_string()]],
        ),
    }
}

fn predict_model(g: &GlobalArgs, graph: &Path) -> Result<()> {
    let graph = load_model_graph(graph)?;
    let ds = dataset(g)?;
    let m = Predictor::new(&ds)?.predict_model(&graph)?;
    for f in &m.flags {
        note(g, format!("layer {}: {:?}", f.layer_id, f.flag));
    }
    match g.format {
        Format::Json => write_json(g, &m),
        Format::Csv => {
            let mut rows: Vec<Vec<String>> = m
                .per_layer
                .iter()
                .map(|l| {
                    vec![
                        l.layer_id.clone(),
                        l.prediction.latency_us.to_string(),
                        l.prediction.kernel.to_string(),
                    ]
                })
                .collect();
            rows.push(vec!["total".into(), m.total_latency_us.to_string(), String::new()]);
            write_csv(g, &["layer_id", "latency_us", "kernel"], rows)
        }
    }
}

#[derive(Serialize)]
struct PrecomputeOutput<'a> {
    out: &'a Path,
    count: u64,
    skipped: u64,
    dataset_fingerprint: String,
    grid_fingerprint: String,
}

fn run_precompute(g: &GlobalArgs, grid_path: &Path, out: &Path, skip_unresolved: bool) -> Result<()> {
    let grid: GridSpec = read_json(grid_path)?;
    let ds = dataset(g)?;
    let p = Predictor::new(&ds)?;
    let opts = PrecomputeOptions {
        skip_unresolved,
        jobs: g.jobs,
    };
    let s = precompute(&grid, &ds, &p, out, &opts)?;
    note(
        g,
        format!(
            "{} points in {:.3} s ({:.2} us per prediction)",
            s.count + s.skipped,
            s.elapsed_s,
            s.mean_us_per_prediction
        ),
    );
    let summary = PrecomputeOutput {
        out,
        count: s.count,
        skipped: s.skipped,
        dataset_fingerprint: ds.fingerprint(),
        grid_fingerprint: grid.fingerprint(),
    };
    match g.format {
        Format::Json => write_json(g, &summary),
        Format::Csv => write_csv(
            g,
            &["out", "count", "skipped"],
            vec![vec![out.display().to_string(), s.count.to_string(), s.skipped.to_string()]],
        ),
    }
}

#[derive(Serialize)]
struct LookupOutput {
    point: BTreeMap<String, u64>,
    latency_us: f64,
}

fn lookup(g: &GlobalArgs, cache: &Path, point: &[String], grid: Option<&Path>) -> Result<()> {
    let mut named = BTreeMap::new();
    for pair in point {
        let (axis, value) = pair
            .split_once('=')
            .ok_or_else(|| usage(format!("--point: expected axis=value, got {pair:?}")))?;
        let v: u64 = value
            .trim()
            .parse()
            .map_err(|_| usage(format!("--point: {value:?} is not a non-negative integer")))?;
        if named.insert(axis.trim().to_string(), v).is_some() {
            return Err(usage(format!("--point: axis {axis} given twice")));
        }
    }
    let grid_fp = grid.map(read_json::<GridSpec>).transpose()?.map(|g| g.fingerprint());
    let store = CacheStore::open(cache)?;
    match &g.dataset {
        Some(path) => {
            let ds = load_dataset(path)?;
            store.check_fingerprints(&ds.fingerprint(), grid_fp.as_deref())?;
        }
        None => {
            if let Some(fp) = &grid_fp {
                if &store.header().grid_fingerprint != fp {
                    return Err(Error::StaleCache(format!(
                        "built for grid {}, requested grid is {fp}",
                        store.header().grid_fingerprint
                    ))
                    .into());
                }
            }
        }
    }
    let axes = &store.header().axes;
    if let Some(extra) = named.keys().find(|k| !axes.contains(k)) {
        return Err(usage(format!("--point: cache has no axis {extra} (axes: {axes:?})")));
    }
    let coords = axes
        .iter()
        .map(|a| {
            named
                .get(a)
                .copied()
                .ok_or_else(|| usage(format!("--point: missing axis {a}")))
        })
        .collect::<Result<Vec<u64>>>()?;
    let latency_us = store.lookup(&coords)?;
    match g.format {
        Format::Json => write_json(
            g,
            &LookupOutput {
                point: named,
                latency_us,
            },
        ),
        Format::Csv => {
            let mut header: Vec<&str> = axes.iter().map(String::as_str).collect();
            header.push("latency_us");
            let mut row: Vec<String> = coords.iter().map(u64::to_string).collect();
            row.push(latency_us.to_string());
            write_csv(g, &header, vec![row])
        }
    }
}

#[derive(Serialize)]
struct PartitionOutput {
    #[serde(flatten)]
    plan: PartitionPlan,
    num_requests: u64,
    pipeline_estimate_us: f64,
}

fn partition(
    g: &GlobalArgs,
    graph: &Path,
    dataset_b: &Path,
    requests: u64,
    transfer: Option<&Path>,
) -> Result<()> {
    if requests == 0 {
        return Err(usage("--requests must be >= 1"));
    }
    let graph = load_model_graph(graph)?;
    let a = dataset(g)?;
    let b = load_dataset(dataset_b)?;
    let transfer: Option<TransferModel> = transfer.map(read_json).transpose()?;
    let pa = Predictor::new(&a)?;
    let pb = Predictor::new(&b)?;
    let plan = partition_with(&graph, &pa, &pb, transfer.as_ref()).map_err(|e| match e {
        Error::UnresolvedLayer {
            layer_id,
            device: None,
            reason,
        } => Error::UnresolvedLayer {
            layer_id,
            device: Some(a.device.device_id.clone()),
            reason,
        },
        other => other,
    })?;
    let estimate = plan.throughput_estimate(requests);
    match g.format {
        Format::Json => write_json(
            g,
            &PartitionOutput {
                plan,
                num_requests: requests,
                pipeline_estimate_us: estimate,
            },
        ),
        Format::Csv => write_csv(
            g,
            &[
                "cut_after_layer_index",
                "stage_a_us",
                "stage_b_us",
                "transfer_us",
                "bottleneck_us",
                "num_requests",
                "pipeline_estimate_us",
            ],
            vec![vec![
                plan.cut_after_layer_index.to_string(),
                plan.stage_a_us.to_string(),
                plan.stage_b_us.to_string(),
                plan.transfer_us.to_string(),
                plan.bottleneck_us.to_string(),
                requests.to_string(),
                estimate.to_string(),
            ]],
        ),
    }
}

fn report_errors(g: &GlobalArgs, cases: &Path, bins: usize) -> Result<()> {
    let cases: Vec<Case> = read_json(cases)?;
    let r = build_error_report(&cases, case_axis, bins)?;
    note(g, format!("{} cases, mean |rel err| {:.4}", r.records.len(), r.mean_abs_rel_err));
    match g.format {
        Format::Json => write_json(g, &r),
        Format::Csv => write_out(g, &r.to_csv()?),
    }
}

#[derive(Serialize)]
struct CurveReport {
    kernel: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<RationalFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit_error: Option<String>,
    oracle: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_rel_err: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    argmax_dim: Option<u64>,
}

fn report_grid(g: &GlobalArgs, oracle_config: Option<&Path>, preset_name: Option<&str>) -> Result<()> {
    let ds = dataset(g)?;
    let planted = match (oracle_config, preset_name) {
        (Some(path), _) => Some(planted_map(&read_json::<OracleConfig>(path)?.device)),
        (None, Some(name)) => Some(planted_map(&preset(name)?.device)),
        (None, None) => None,
    };
    let mut out = Vec::with_capacity(ds.curves.len());
    for (key, curve) in &ds.curves {
        let samples: Vec<(f64, f64)> = curve
            .samples
            .iter()
            .map(|s| (s.dim_value as f64, s.throughput_gflops))
            .collect();
        let fitted = fit_rational(&samples);
        let (fit, fit_error) = match fitted {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let (oracle, report) = match (&planted, &fit) {
            (Some(map), _) => {
                let params = map.get(key).ok_or_else(|| Error::UnknownKernel {
                    key: key.to_string(),
                })?;
                ("planted", Some(grid_error_report(curve, |d| params.eval(d as f64))))
            }
            (None, Some(f)) => ("rational_fit", Some(grid_error_report(curve, |d| f.eval(d as f64)))),
            (None, None) => ("rational_fit", None),
        };
        out.push(CurveReport {
            kernel: key.to_string(),
            fit,
            fit_error,
            oracle,
            max_rel_err: report.as_ref().map(|r| r.max_rel_err),
            argmax_dim: report.as_ref().map(|r| r.argmax_dim),
        });
    }
    match g.format {
        Format::Json => write_json(g, &out),
        Format::Csv => {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let rows = out
                .iter()
                .map(|r| {
                    vec![
                        r.kernel.clone(),
                        opt(r.fit.map(|f| f.a)),
                        opt(r.fit.map(|f| f.b)),
                        opt(r.fit.map(|f| f.c)),
                        opt(r.fit.map(|f| f.d)),
                        opt(r.fit.map(|f| f.rms_rel_err)),
                        r.oracle.to_string(),
                        opt(r.max_rel_err),
                        r.argmax_dim.map(|d| d.to_string()).unwrap_or_default(),
                    ]
                })
                .collect();
            write_csv(
                g,
                &["kernel", "a", "b", "c", "d", "rms_rel_err", "oracle", "max_rel_err", "argmax_dim"],
                rows,
            )
        }
    }
}

fn oracle_emit(
    g: &GlobalArgs,
    preset_name: Option<&str>,
    config: Option<&Path>,
    noise: Option<f64>,
) -> Result<()> {
    json_only(g)?;
    let mut cfg = match (preset_name, config) {
        (Some(name), None) => preset(name)?,
        (None, Some(path)) => read_json(path)?,
        _ => return Err(usage("exactly one of --preset and --config is required")),
    };
    if let Some(seed) = g.seed {
        cfg.device.noise_seed = seed;
    }
    if let Some(sigma) = noise {
        cfg.device.noise_rel_sigma = sigma;
    }
    cfg.device.validate()?;
    let ds = emit_fixture(&cfg.device, &cfg.plan)?;
    note(g, format!("{}: {} curves", ds.device.device_id, ds.curves.len()));
    write_out(g, &(ds.to_json_string() + "\n"))
}
