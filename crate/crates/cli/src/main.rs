//! `catsim` command-line front end.

mod manifest;
mod opts;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use catsim::analysis::{
    corr_diff_randomization_test, pairwise_matrix, summarized_coefficient, CorrTestInput,
    Similarity,
};
use catsim::distort::{disagreement_rate, DistortionSpec, Region};
use catsim::io::{self as cio, LoadedGrid};
use catsim::pyramid::downsample;
use catsim::{catsim as run_catsim, CatsimReport, LabelGrid};
use clap::{Parser, Subcommand};
use serde_json::json;

use crate::manifest::{InputDigest, RunManifest};
use crate::opts::{parse_list, ConfigArgs};

#[derive(Parser)]
#[command(
    name = "catsim",
    version,
    about = "Multi-scale structural similarity for categorical images and volumes"
)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare two grids.
    Compare {
        x: PathBuf,
        y: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Print the per-level breakdown.
        #[arg(long)]
        per_level: bool,
        #[arg(long)]
        json: bool,
    },
    /// Pairwise similarity matrix and summarized coefficient of several grids.
    Matrix {
        #[arg(required = true, num_args = 2..)]
        paths: Vec<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
        /// Use the plain agreement index over whole grids instead of the
        /// multi-scale index.
        #[arg(long)]
        raw: bool,
        /// Write the matrix CSV here instead of standard output.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Apply distortions to a grid.
    Distort {
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Translate the central region by these offsets (grid axis order).
        #[arg(long, allow_hyphen_values = true)]
        shift: Option<String>,
        /// Central region as `start:end` per axis, comma separated.
        #[arg(long)]
        region: Option<String>,
        /// Margin defining the default central region.
        #[arg(long, default_value_t = 12)]
        margin: usize,
        #[arg(long)]
        dilate: Option<usize>,
        #[arg(long)]
        erode: Option<usize>,
        /// Fraction of non-target cells to switch to the target class.
        #[arg(long)]
        activate: Option<f64>,
        /// Target class for --dilate, --erode and --activate.
        #[arg(long, default_value_t = 1)]
        class: u32,
        /// Salt-and-pepper rate.
        #[arg(long)]
        noise: Option<f64>,
        /// Salt-and-pepper noise matching the disagreement rate of this grid.
        #[arg(long)]
        match_to: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Manifest path (default: `<out>.manifest.json`).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Mode-downsample a grid by a factor of 2 per step.
    Downsample {
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        #[arg(long, default_value = "random")]
        tie: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Randomization test that metric 1 tracks the rating better than metric 2.
    Corrtest {
        csv: PathBuf,
        /// Columns for m1, m2 and the rating, by header name or 0-based index.
        #[arg(long)]
        columns: Option<String>,
        #[arg(long, default_value_t = CorrTestInput::DEFAULT_ITERATIONS)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Compare { .. } => "compare",
            Command::Matrix { .. } => "matrix",
            Command::Distort { .. } => "distort",
            Command::Downsample { .. } => "downsample",
            Command::Corrtest { .. } => "corrtest",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error[config]: {e}");
            return ExitCode::from(6);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            let (category, code) = categorize(&e);
            eprintln!("error[{category}]: {}", describe(&e));
            ExitCode::from(code)
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<io::Error>())
        .any(|io| io.kind() == io::ErrorKind::BrokenPipe)
}

/// Error chain joined by `: `, dropping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn categorize(e: &anyhow::Error) -> (&'static str, u8) {
    use catsim::Error as E;
    match e.chain().find_map(|c| c.downcast_ref::<E>()) {
        Some(E::Io { .. }) => ("io", 3),
        Some(E::Parse { .. } | E::Alphabet(_) | E::UnsupportedFormat(_) | E::Csv(_)) => {
            ("input", 4)
        }
        Some(E::DimensionMismatch(_) | E::Shape(_) | E::WindowTooLarge { .. } | E::TooSmall(_)) => {
            ("shape", 5)
        }
        Some(E::Pair { source, .. }) => match **source {
            E::DimensionMismatch(_) | E::WindowTooLarge { .. } => ("shape", 5),
            _ => ("compute", 7),
        },
        Some(
            E::InvalidConfig(_)
            | E::InvalidWindow(_)
            | E::InvalidForeground { .. }
            | E::InvalidDistortion(_)
            | E::OutOfBounds(_),
        ) => ("config", 6),
        Some(_) => ("compute", 7),
        None if e.chain().any(|c| c.downcast_ref::<io::Error>().is_some()) => ("io", 3),
        None => ("config", 6),
    }
}

fn run(cli: Cli) -> Result<()> {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let sub = cli.command.name();
    match cli.command {
        Command::Compare {
            x,
            y,
            config,
            per_level,
            json,
        } => {
            let grids = load_grids(&[x.clone(), y.clone()])?;
            let cfg = config.resolve(grids[0].grid.ndim())?;
            let report = run_catsim(&grids[0].grid, &grids[1].grid, &cfg)?;
            let manifest = RunManifest::new(
                sub,
                argv,
                serde_json::to_value(&cfg)?,
                digests(&[x, y], &grids),
                cfg_seed(&cfg),
            );
            let stdout = io::stdout();
            let mut out = stdout.lock();
            if json {
                let doc = json!({
                    "schema_version": manifest::SCHEMA_VERSION,
                    "value": report.value,
                    "report": report,
                    "manifest": manifest,
                });
                writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
            } else {
                writeln!(out, "catsim {}", fmt_value(report.value))?;
                if per_level {
                    write_levels(&mut out, &report)?;
                }
            }
        }
        Command::Matrix {
            paths,
            config,
            raw,
            out,
            json,
        } => {
            let grids = load_grids(&paths)?;
            let cfg = config.resolve(grids[0].grid.ndim())?;
            let sim = if raw {
                Similarity::Agreement(cfg.agreement)
            } else {
                Similarity::Catsim(cfg.clone())
            };
            let labels: Vec<String> = paths
                .iter()
                .map(|p| {
                    p.file_stem()
                        .unwrap_or_default()
                        .to_string_lossy()
                        .into_owned()
                })
                .collect();
            let plain: Vec<LabelGrid> = grids.iter().map(|g| g.grid.clone()).collect();
            let m = pairwise_matrix(&plain, Some(labels), &sim)?;
            let coef = summarized_coefficient(&m)?;
            let mut config_value = serde_json::to_value(&cfg)?;
            config_value["raw"] = json!(raw);
            let manifest = RunManifest::new(
                sub,
                argv,
                config_value,
                digests(&paths, &grids),
                cfg_seed(&cfg),
            );
            if let Some(path) = &out {
                let f =
                    File::create(path).with_context(|| format!("creating {}", path.display()))?;
                m.write_csv(BufWriter::new(f))?;
            }
            let stdout = io::stdout();
            let mut so = stdout.lock();
            if json {
                let rows: Vec<Vec<f64>> = (0..m.n())
                    .map(|i| (0..m.n()).map(|j| m.get(i, j)).collect())
                    .collect();
                let doc = json!({
                    "schema_version": manifest::SCHEMA_VERSION,
                    "labels": m.labels(),
                    "matrix": rows,
                    "coefficient": coef,
                    "manifest": manifest,
                });
                writeln!(so, "{}", serde_json::to_string_pretty(&doc)?)?;
            } else {
                if out.is_none() {
                    m.write_csv(&mut so)?;
                }
                writeln!(so, "coefficient {}", fmt_value(coef))?;
            }
        }
        Command::Distort {
            input,
            out,
            shift,
            region,
            margin,
            dilate,
            erode,
            activate,
            class,
            noise,
            match_to,
            seed,
            manifest,
        } => {
            let mut paths = vec![input.clone()];
            paths.extend(match_to.iter().cloned());
            let grids = load_grids(&paths)?;
            let g = &grids[0].grid;
            let mut steps = Vec::new();
            let mut params = serde_json::Map::new();
            if let Some(s) = &shift {
                let offsets: Vec<isize> = parse_list(s)?;
                let region = match &region {
                    Some(r) => parse_region(r)?,
                    None => Region::central(g.dims(), margin)?,
                };
                params.insert("shift".into(), json!(offsets));
                params.insert(
                    "region".into(),
                    json!({"start": region.start, "end": region.end}),
                );
                steps.push(DistortionSpec::ShiftCentral { offsets, region });
            }
            if let Some(radius) = dilate {
                params.insert("dilate".into(), json!({"radius": radius, "class": class}));
                steps.push(DistortionSpec::Dilate { radius, class });
            }
            if let Some(radius) = erode {
                params.insert("erode".into(), json!({"radius": radius, "class": class}));
                steps.push(DistortionSpec::Erode { radius, class });
            }
            if let Some(fraction) = activate {
                params.insert(
                    "activate".into(),
                    json!({"fraction": fraction, "class": class}),
                );
                steps.push(DistortionSpec::ActivateNoise { fraction, class });
            }
            if let Some(rate) = noise {
                params.insert("noise".into(), json!(rate));
                steps.push(DistortionSpec::SaltPepper { rate });
            }
            if match_to.is_some() {
                params.insert("match_to".into(), json!(paths[1].display().to_string()));
                steps.push(DistortionSpec::SaltPepperMatched {
                    reference: grids[1].grid.clone(),
                });
            }
            if steps.is_empty() {
                bail!(catsim::Error::InvalidDistortion(
                    "no distortion requested".into()
                ));
            }
            let result = DistortionSpec::Compose(steps).apply(g, seed)?;
            save_grid(&result, &grids[0].alphabet, &out)?;
            let rate = disagreement_rate(g, &result)?;
            params.insert("seed".into(), json!(seed));
            params.insert("margin".into(), json!(margin));
            let mut m = RunManifest::new(
                sub,
                argv,
                serde_json::Value::Object(params),
                digests(&paths, &grids),
                seed,
            );
            m.outputs.push(InputDigest::of_file(&out)?);
            write_manifest(&m, manifest.unwrap_or_else(|| manifest_path(&out)))?;
            println!("disagreement_rate {}", fmt_value(rate));
            if match_to.is_some() {
                println!(
                    "reference_rate {}",
                    fmt_value(disagreement_rate(g, &grids[1].grid)?)
                );
            }
        }
        Command::Downsample {
            input,
            out,
            steps,
            tie,
            seed,
            manifest,
        } => {
            let grids = load_grids(std::slice::from_ref(&input))?;
            let policy = opts::parse_tie(&tie, seed)?;
            let mut g = grids[0].grid.clone();
            for level in 1..=steps {
                g = downsample(&g, policy, level)?;
            }
            save_grid(&g, &grids[0].alphabet, &out)?;
            let params = json!({"steps": steps, "tie_policy": policy});
            let mut m = RunManifest::new(sub, argv, params, digests(&[input], &grids), seed);
            m.outputs.push(InputDigest::of_file(&out)?);
            write_manifest(&m, manifest.unwrap_or_else(|| manifest_path(&out)))?;
            println!("extents {}", fmt_dims(g.dims()));
        }
        Command::Corrtest {
            csv,
            columns,
            iterations,
            seed,
            json,
        } => {
            let select: Option<Vec<String>> =
                columns.map(|c| c.split(',').map(|s| s.trim().to_string()).collect());
            let cols = cio::read_score_columns(&csv, select.as_deref())?;
            let [m1, m2, mos] = cols.columns.clone();
            let input = CorrTestInput {
                m1,
                m2,
                mos,
                iterations,
                seed,
            };
            let r = corr_diff_randomization_test(&input)?;
            let params = json!({"columns": cols.names, "iterations": iterations, "seed": seed});
            let m = RunManifest::new(sub, argv, params, vec![InputDigest::of_file(&csv)?], seed);
            if json {
                let doc = json!({
                    "schema_version": manifest::SCHEMA_VERSION,
                    "result": r,
                    "manifest": m,
                });
                println!("{}", serde_json::to_string_pretty(&doc)?);
            } else {
                println!("m1 {}", cols.names[0]);
                println!("m2 {}", cols.names[1]);
                println!("rating {}", cols.names[2]);
                println!("observed_diff {}", fmt_value(r.observed));
                println!("iterations {}", r.iterations);
                println!("p_value {}", fmt_value(r.p_value));
            }
        }
    }
    Ok(())
}

fn cfg_seed(cfg: &catsim::CatsimConfig) -> u64 {
    match cfg.tie_policy {
        catsim::TiePolicy::SeededRandom { seed } => seed,
        catsim::TiePolicy::LowestLabel => 0,
    }
}

fn fmt_value(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_dims(d: &[usize]) -> String {
    d.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

fn write_levels(out: &mut impl Write, report: &CatsimReport) -> Result<()> {
    writeln!(
        out,
        "{:<6} {:<12} {:<9} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "level", "extents", "window", "mean_l", "mean_c", "mean_s", "usable", "skipped"
    )?;
    for lc in &report.per_level {
        writeln!(
            out,
            "{:<6} {:<12} {:<9} {:>8} {:>8.4} {:>8.4} {:>8} {:>8}",
            lc.level,
            fmt_dims(&lc.extents),
            fmt_dims(&lc.window),
            lc.mean_l.map_or("-".to_string(), |l| format!("{l:.4}")),
            lc.mean_c,
            lc.mean_s,
            lc.usable_windows,
            lc.skipped_windows
        )?;
    }
    if report.exhausted() {
        writeln!(
            out,
            "note: {} of {} levels available; weights renormalized",
            report.effective_levels, report.requested_levels
        )?;
    }
    Ok(())
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn load_grids(paths: &[PathBuf]) -> Result<Vec<LoadedGrid>> {
    let loaded = paths
        .iter()
        .map(|p| {
            if is_png(p) {
                cio::load_png_labels(p, None)
            } else {
                cio::load_catgrid(p)
            }
            .with_context(|| format!("loading {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    if loaded.windows(2).all(|w| w[0].alphabet == w[1].alphabet) {
        return Ok(loaded);
    }
    Ok(cio::unify_alphabets(loaded)?)
}

fn save_grid(g: &LabelGrid, alphabet: &[i64], path: &Path) -> Result<()> {
    let identity = alphabet.iter().enumerate().all(|(i, &v)| v == i as i64);
    if is_png(path) {
        let a: Option<Vec<u8>> = if identity {
            None
        } else {
            Some(
                alphabet
                    .iter()
                    .map(|&v| {
                        u8::try_from(v).map_err(|_| {
                            catsim::Error::Alphabet(format!("value {v} does not fit 8 bits"))
                        })
                    })
                    .collect::<std::result::Result<_, _>>()?,
            )
        };
        cio::save_png_labels(g, path, a.as_deref())?;
    } else {
        cio::save_catgrid_with_alphabet(g, (!identity).then_some(alphabet), path)?;
    }
    Ok(())
}

fn parse_region(s: &str) -> Result<Region> {
    let mut start = Vec::new();
    let mut end = Vec::new();
    for part in s.split(',') {
        let (a, b) = part.split_once(':').ok_or_else(|| {
            catsim::Error::InvalidConfig(format!("region axis `{part}` is not start:end"))
        })?;
        start.push(
            a.trim()
                .parse()
                .map_err(|_| catsim::Error::InvalidConfig(format!("bad region start `{a}`")))?,
        );
        end.push(
            b.trim()
                .parse()
                .map_err(|_| catsim::Error::InvalidConfig(format!("bad region end `{b}`")))?,
        );
    }
    Ok(Region::new(start, end))
}

fn digests(paths: &[PathBuf], grids: &[LoadedGrid]) -> Vec<InputDigest> {
    paths
        .iter()
        .zip(grids)
        .map(|(p, g)| InputDigest::of_grid(p, &g.grid))
        .collect()
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest(m: &RunManifest, path: PathBuf) -> Result<()> {
    let text = serde_json::to_string_pretty(m)? + "\n";
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
