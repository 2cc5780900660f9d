//! Command-line driver for the manistream pipeline.

pub mod args;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Parser;
use manistream::datasets::{self, PointCloud, Scene};
use manistream::eval::{self, EvalReport};
use manistream::msvd::{self, MsvdParams};
use manistream::pipeline::{self, FitParams, FittedModel};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::args::{BenchArgs, Cli, Command, EvalArgs, FigureArgs, FigureKind, FitArgs, GenerateArgs, Metric, StreamArgs};
use crate::config::{dir_of, env_seed, resolve_params, RunConfig};
use crate::error::CliError;

type CliResult<T = ()> = Result<T, CliError>;

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> CliResult {
    let default_threads = match cli.command {
        Command::Bench(_) => 1,
        _ => rayon::current_num_threads(),
    };
    let threads = cli.threads.unwrap_or(default_threads);
    if threads == 0 {
        return Err(CliError::Usage("--threads must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::runtime("setup", e))?;
    pool.install(|| match cli.command {
        Command::Generate(a) => generate(a, threads),
        Command::Fit(a) => fit(a, threads),
        Command::Stream(a) => stream(a, threads),
        Command::Eval(a) => evaluate(a, threads),
        Command::Bench(a) => bench(a, threads),
        Command::Figure(a) => figure(a, threads),
    })
}

fn read_cloud(path: &Path) -> CliResult<PointCloud> {
    datasets::read_csv(path).map_err(|e| CliError::runtime("read input", anyhow::Error::new(e).context(path.display().to_string())))
}

fn load_model(path: &Path) -> CliResult<FittedModel> {
    FittedModel::load(path).map_err(|e| CliError::runtime("load model", anyhow::Error::new(e).context(path.display().to_string())))
}

fn write_err(path: &Path) -> impl FnOnce(manistream::Error) -> CliError + '_ {
    move |e| CliError::runtime("write output", anyhow::Error::new(e).context(path.display().to_string()))
}

fn record(run: &RunConfig, dir: &Path) -> CliResult {
    run.write(dir).map_err(|e| CliError::runtime("write output", e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn build_scene(kind: &str, sizes: Option<&[usize]>, noise: Option<f64>) -> CliResult<Scene> {
    let mut scene = Scene::standard(kind).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(sizes) = sizes {
        scene = scene.with_sizes(sizes).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(noise) = noise {
        scene.set_noise(noise);
    }
    scene.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(scene)
}

/// Writes the cloud, its metadata sidecar and, when known, the generating
/// coordinates next to `path`.
fn write_cloud(cloud: &PointCloud, path: &Path) -> CliResult {
    datasets::write_csv(cloud, path).map_err(write_err(path))?;
    let side = with_suffix(path, ".json");
    datasets::write_sidecar(cloud, &side).map_err(write_err(&side))?;
    if let Some(truth) = &cloud.truth {
        let tpath = with_suffix(path, ".truth.csv");
        let cols: Vec<String> = (1..=truth.ncols()).map(|j| format!("u{j}")).collect();
        datasets::write_matrix_csv(truth, &cols, &tpath).map_err(write_err(&tpath))?;
    }
    Ok(())
}

fn generate(a: GenerateArgs, threads: usize) -> CliResult {
    let scene = build_scene(&a.scene, a.sizes.as_deref(), a.noise)?;
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let cloud = datasets::gen_scene(&scene, seed).map_err(|e| CliError::core("generate", e))?;
    let mut run = RunConfig::new("generate", seed, threads).output("out", &a.out);
    run.scene = Some(scene);
    match (a.batch_size, &a.stream_out) {
        (Some(size), Some(stream_out)) => {
            let (batch, stream) = datasets::split_batch_stream(&cloud, size, seed).map_err(|e| CliError::core("split", e))?;
            write_cloud(&batch, &a.out)?;
            write_cloud(&stream, stream_out)?;
            run = run.output("stream_out", stream_out);
            run.extra.insert("batch_size".into(), size.into());
        }
        _ => write_cloud(&cloud, &a.out)?,
    }
    log::info!("generated {} samples of {}", cloud.len(), a.scene);
    record(&run, &dir_of(&a.out))
}

#[derive(Serialize)]
struct AlignmentDump {
    d_global: usize,
    support_size: usize,
    clusters: Vec<ClusterDump>,
}

#[derive(Serialize)]
struct ClusterDump {
    cluster: usize,
    size: usize,
    dim: usize,
    /// Row-major `d_global × dim`.
    rotation: Vec<Vec<f64>>,
    translation: Vec<f64>,
    mean: Vec<f64>,
}

fn alignment_dump(fitted: &FittedModel) -> AlignmentDump {
    AlignmentDump {
        d_global: fitted.d_global(),
        support_size: fitted.report.support_size,
        clusters: fitted
            .models
            .iter()
            .zip(&fitted.alignment.transforms)
            .enumerate()
            .map(|(c, (m, t))| ClusterDump {
                cluster: c + 1,
                size: m.len(),
                dim: m.dim,
                rotation: t.rotation.row_iter().map(|r| r.iter().copied().collect()).collect(),
                translation: t.translation.iter().copied().collect(),
                mean: t.mean.iter().copied().collect(),
            })
            .collect(),
    }
}

fn fit(a: FitArgs, threads: usize) -> CliResult {
    let params = resolve_params(&a.params)?;
    let batch = read_cloud(&a.input)?;
    let fitted = pipeline::fit_batch(&batch, &params).map_err(|e| CliError::core("fit", e))?;
    fitted.save(&a.out).map_err(write_err(&a.out))?;
    let mut run = RunConfig::new("fit", params.seed, threads).input("in", &a.input).output("out", &a.out);
    if let Some(path) = &a.dump_alignment {
        let text = serde_json::to_string_pretty(&alignment_dump(&fitted)).map_err(|e| CliError::runtime("write output", e))?;
        std::fs::write(path, text + "\n").map_err(|e| CliError::runtime("write output", e))?;
        run = run.output("alignment", path);
    }
    log::info!(
        "fitted {} samples: p={} dims {:?} sizes {:?}",
        batch.len(),
        fitted.p(),
        fitted.report.dims,
        fitted.report.sizes
    );
    run.params = Some(params);
    record(&run, &a.out)
}

fn stream(a: StreamArgs, threads: usize) -> CliResult {
    let fitted = load_model(&a.model)?;
    let cloud = read_cloud(&a.input)?;
    let result = pipeline::map_stream(&cloud, &fitted).map_err(|e| CliError::core("stream", e))?;
    result.write_csv(&a.out).map_err(write_err(&a.out))?;
    let mut run = RunConfig::new("stream", fitted.params.seed, threads)
        .input("model", &a.model)
        .input("in", &a.input)
        .output("out", &a.out);
    run.params = Some(fitted.params.clone());
    record(&run, &dir_of(&a.out))
}

fn labels_of<'a>(cloud: &'a PointCloud, path: &Path) -> CliResult<&'a [u32]> {
    cloud
        .labels
        .as_deref()
        .ok_or_else(|| CliError::runtime("eval", anyhow::anyhow!("{} has no label column", path.display())))
}

fn evaluate(a: EvalArgs, threads: usize) -> CliResult {
    let fitted = load_model(&a.model)?;
    let cloud = read_cloud(&a.input)?;
    let mut run = RunConfig::new("eval", fitted.params.seed, threads)
        .input("model", &a.model)
        .input("in", &a.input)
        .output("out", &a.out);
    let report = match a.metric {
        Metric::Clustering => {
            let truth = labels_of(&cloud, &a.input)?;
            let acc = eval::clustering_accuracy(&fitted.assignment.labels, truth).map_err(|e| CliError::core("eval", e))?;
            EvalReport::new("clustering_accuracy", acc)
        }
        Metric::Accuracy | Metric::Procrustes => {
            let result = pipeline::map_stream(&cloud, &fitted).map_err(|e| CliError::core("stream", e))?;
            if a.metric == Metric::Accuracy {
                let truth = labels_of(&cloud, &a.input)?;
                let acc = eval::clustering_accuracy(&result.indices(), truth).map_err(|e| CliError::core("eval", e))?;
                EvalReport::new("stream_accuracy", acc)
            } else {
                let path = a
                    .truth
                    .as_ref()
                    .ok_or_else(|| CliError::Usage("--metric procrustes needs --truth".into()))?;
                let (_, truth) = datasets::read_matrix_csv(path).map_err(|e| CliError::runtime("read input", e))?;
                let p = eval::procrustes(&truth, &result.global()).map_err(|e| CliError::core("eval", e))?;
                run = run.input("truth", path);
                let mut report = EvalReport::new("procrustes_error", p.error);
                report.details.insert("scale".into(), p.scale);
                report
            }
        }
    };
    report.write_json(&a.out).map_err(write_err(&a.out))?;
    println!("{} {:.6}", report.metric, report.value);
    record(&run, &dir_of(&a.out))
}

fn bench(a: BenchArgs, threads: usize) -> CliResult {
    let fitted = load_model(&a.model)?;
    let cloud = read_cloud(&a.input)?;
    let report = eval::bench_stream_scaling(&fitted, &cloud, &a.sizes).map_err(|e| CliError::core("bench", e))?;
    report.write_timings_csv(&a.out).map_err(write_err(&a.out))?;
    let mut run = RunConfig::new("bench", fitted.params.seed, threads)
        .input("model", &a.model)
        .input("in", &a.input)
        .output("out", &a.out);
    if let Some(path) = &a.report {
        report.write_json(path).map_err(write_err(path))?;
        run = run.output("report", path);
    }
    run.extra.insert("sizes".into(), serde_json::json!(a.sizes));
    record(&run, &dir_of(&a.out))
}

fn columns(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("{prefix}{j}")).collect()
}

/// `m` with extra integer columns appended.
fn with_columns(m: &DMatrix<f64>, extra: &[&[u32]]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols() + extra.len(), |r, c| {
        if c < m.ncols() {
            m[(r, c)]
        } else {
            f64::from(extra[c - m.ncols()][r])
        }
    })
}

fn write_table(m: &DMatrix<f64>, cols: &[String], path: &Path) -> CliResult {
    datasets::write_matrix_csv(m, cols, path).map_err(write_err(path))
}

fn figure(a: FigureArgs, threads: usize) -> CliResult {
    let params = resolve_params(&a.params)?;
    let scene = build_scene(&a.scene, a.sizes.as_deref(), None)?;
    let cloud = datasets::gen_scene(&scene, params.seed).map_err(|e| CliError::core("generate", e))?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::runtime("write output", e))?;
    let mut run = RunConfig::new("figure", params.seed, threads).output("out", &a.out);
    run.extra.insert("kind".into(), format!("{:?}", a.kind).to_lowercase().into());
    let truth = cloud.labels.clone().unwrap_or_else(|| vec![1; cloud.len()]);

    match a.kind {
        FigureKind::Lambda | FigureKind::K | FigureKind::L => {
            let (name, defaults): (&str, &[f64]) = match a.kind {
                FigureKind::Lambda => ("lambda", &[0.0, 0.001, 0.01, 0.1, 1.0]),
                FigureKind::K => ("k", &[1.0, 2.0, 4.0, 8.0, 16.0]),
                _ => ("l", &[0.0, 1.0, 2.0, 4.0]),
            };
            let values = a.values.clone().unwrap_or_else(|| defaults.to_vec());
            let mut written = Vec::new();
            for v in values {
                let mut p: FitParams = params.clone();
                match a.kind {
                    FigureKind::Lambda => p.lambda = v,
                    FigureKind::K => p.k = v as usize,
                    _ => p.l = v as usize,
                }
                let fitted = match pipeline::fit_batch(&cloud, &p) {
                    Ok(f) => f,
                    Err(e) if matches!(e.root(), manistream::Error::Singular(_) | manistream::Error::Parameter(_)) => {
                        log::warn!("{name}={v}: {e}");
                        continue;
                    }
                    Err(e) => return Err(CliError::core("fit", e)),
                };
                let emb = fitted.batch_embedding();
                let table = with_columns(&emb, &[&fitted.assignment.labels, &truth]);
                let mut cols = columns("g", emb.ncols());
                cols.extend(["cluster".to_string(), "label".to_string()]);
                let path = a.out.join(format!("{name}_{v}.csv"));
                write_table(&table, &cols, &path)?;
                written.push(v);
            }
            run.extra.insert("values".into(), serde_json::json!(written));
        }
        FigureKind::Clusters => {
            let assignment = manistream::tangent_cluster::find_clusters(&cloud, &params.cluster_params())
                .map_err(|e| CliError::core("clustering", e))?;
            let acc = eval::clustering_accuracy(&assignment.labels, &truth).map_err(|e| CliError::core("eval", e))?;
            let table = with_columns(&cloud.points, &[&assignment.labels, &truth]);
            let mut cols = columns("x", cloud.dim());
            cols.extend(["cluster".to_string(), "label".to_string()]);
            write_table(&table, &cols, &a.out.join(format!("clusters_{}.csv", a.scene)))?;
            run.extra.insert("accuracy".into(), acc.into());
            run.extra.insert("p".into(), assignment.p.into());
        }
        FigureKind::Msvd => {
            if a.point >= cloud.len() {
                return Err(CliError::Usage(format!("--point {} out of range for {} samples", a.point, cloud.len())));
            }
            let mp = MsvdParams {
                levels: params.levels,
                gap_ratio: params.gap_ratio,
                ..MsvdParams::default()
            };
            let radii = msvd::scale_grid(&cloud, mp.levels).map_err(|e| CliError::core("msvd", e))?;
            let prof = msvd::sv_profile(&cloud, a.point, &radii, &mp).map_err(|e| CliError::core("msvd", e))?;
            let keep = cloud.dim().min(mp.max_dim + 2);
            let table = DMatrix::from_fn(prof.radii.len(), keep + 2, |r, c| match c {
                0 => prof.radii[r],
                1 => prof.counts[r] as f64,
                _ => prof.sv[r][c - 2],
            });
            let mut cols = vec!["radius".to_string(), "count".to_string()];
            cols.extend(columns("sv", keep));
            write_table(&table, &cols, &a.out.join("msvd_profile.csv"))?;
            if let Ok(choice) = msvd::estimate_scale_and_dim(&prof, mp.gap_ratio, mp.max_dim) {
                run.extra.insert("radius".into(), choice.radius.into());
                run.extra.insert("dim".into(), choice.dim.into());
            }
        }
        FigureKind::Recreation => {
            let (batch, stream) =
                datasets::split_batch_stream(&cloud, a.batch_size, params.seed).map_err(|e| CliError::core("split", e))?;
            let fitted = pipeline::fit_batch(&batch, &params).map_err(|e| CliError::core("fit", e))?;
            let result = pipeline::map_stream(&stream, &fitted).map_err(|e| CliError::core("stream", e))?;
            let global = result.global();
            let labels = stream.labels.clone().unwrap_or_else(|| vec![1; stream.len()]);
            let table = with_columns(&global, &[&result.indices(), &labels]);
            let mut cols = columns("g", global.ncols());
            cols.extend(["index".to_string(), "label".to_string()]);
            write_table(&table, &cols, &a.out.join("recreation_stream.csv"))?;
            if let Some(t) = &stream.truth {
                write_table(t, &columns("u", t.ncols()), &a.out.join("recreation_truth.csv"))?;
                if let Ok(err) = eval::procrustes_error(t, &global) {
                    run.extra.insert("procrustes_error".into(), err.into());
                }
            }
        }
    }
    run.params = Some(params);
    run.scene = Some(scene);
    record(&run, &a.out)
}
