use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use annustitch::config::{CompositeSource, PipelineConfig, ThresholdChoice};
use annustitch::depth::{ellipse_overlay, threshold_mask, DepthThreshold};
use annustitch::eval::variants::{analyze_frames, match_frames};
use annustitch::eval::{build_report, emit_report, run_variants, MatchRow, MethodVariant};
use annustitch::image::GrayImage;
use annustitch::ingest::{load_frames, load_gray, select_keyframes, FrameManifest};
use annustitch::phantom::{tube_video, write_video, TubeParams};
use annustitch::pipeline::{prepare_manifest, run_pipeline, stitch_chain, PreparedFrame, Stage, StageError};
use annustitch::ransac::{ModelKind, RansacResult};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "annustitch", version, about = "Panoramas and match statistics from tubular endoscopy video")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Flags override the config file, which
/// overrides built-in defaults.
#[derive(Debug, Args)]
struct Common {
    /// Worker threads; defaults to the hardware count.
    #[arg(long, global = true, env = "ANNUSTITCH_THREADS")]
    threads: Option<usize>,
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Lumen threshold for the ellipse fit: a grey level or "otsu".
    #[arg(long, global = true)]
    depth_threshold: Option<ThresholdChoice>,
    /// Threshold for the deepest point and inner radius; defaults to --depth-threshold.
    #[arg(long, global = true)]
    deepest_threshold: Option<ThresholdChoice>,
    #[arg(long, global = true)]
    circle_ambiguity_ratio: Option<f64>,
    #[arg(long, global = true)]
    head_trim: Option<f64>,
    #[arg(long, global = true)]
    tail_trim: Option<f64>,
    #[arg(long, global = true)]
    stride: Option<usize>,
    #[arg(long, global = true)]
    n_theta: Option<Auto<usize>>,
    #[arg(long, global = true)]
    n_r: Option<Auto<usize>>,
    #[arg(long, global = true)]
    r_min: Option<f64>,
    #[arg(long, global = true)]
    r_max: Option<f64>,
    /// Tile grid, e.g. 8x8.
    #[arg(long, global = true, value_parser = parse_tiles)]
    ahe_tiles: Option<(usize, usize)>,
    /// Clip limit as a multiple of the uniform bin height, or "off".
    #[arg(long, global = true, value_parser = parse_clip)]
    ahe_clip: Option<f64>,
    #[arg(long, global = true)]
    ahe_bins: Option<usize>,
    #[arg(long, global = true)]
    ratio: Option<f64>,
    #[arg(long, global = true)]
    contrast_threshold: Option<f64>,
    #[arg(long, global = true)]
    edge_threshold: Option<f64>,
    /// translation or homography.
    #[arg(long, global = true)]
    model: Option<ModelKind>,
    #[arg(long, global = true)]
    ransac_iters: Option<usize>,
    #[arg(long, global = true)]
    ransac_tol: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write every intermediate artefact here.
    #[arg(long, global = true)]
    debug_dir: Option<PathBuf>,
    /// ahe or original.
    #[arg(long, global = true)]
    composite_source: Option<CompositeSource>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the keyframe selection for a manifest.
    Keyframes {
        #[arg(long)]
        manifest: PathBuf,
        /// Write the selection JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the lumen ellipse and rotate each keyframe to canonical orientation.
    Rotate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Unwrap each keyframe's annulus into a strip.
    Unwrap {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Unwrap the frames as given, without lumen rotation.
        #[arg(long)]
        no_rotate: bool,
    },
    /// Unwrap and apply adaptive histogram equalization.
    Enhance {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_rotate: bool,
    },
    /// Match consecutive keyframes and estimate motion with RANSAC.
    Match {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// original, ahe or ahe_rotated.
        #[arg(long, default_value = "ahe_rotated")]
        variant: MethodVariant,
    },
    /// Composite strips into panoramas using the motion from `match`.
    Stitch {
        /// Directory of strip PNGs, composited in file-name order.
        #[arg(long)]
        input: PathBuf,
        /// `matches.json` written by `match`.
        #[arg(long)]
        matches: PathBuf,
        /// Output PNG; extra segments get a `_<first strip>` suffix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the three variants over a directory of videos.
    Eval {
        /// A manifest directory, or a directory of them.
        #[arg(long)]
        manifest_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild report files from `rows.json`.
    Report {
        #[arg(long)]
        rows: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage on one video.
    Pipeline {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic rotating-tube videos.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        videos: usize,
        /// JSON phantom parameters.
        #[arg(long)]
        params: Option<PathBuf>,
    },
}

/// A value or `auto`.
#[derive(Debug, Clone, Copy)]
struct Auto<T>(Option<T>);

impl<T: std::str::FromStr> std::str::FromStr for Auto<T>
where
    T::Err: std::fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            Ok(Auto(None))
        } else {
            s.parse().map(|v| Auto(Some(v))).map_err(|e: T::Err| e.to_string())
        }
    }
}

fn parse_tiles(s: &str) -> Result<(usize, usize), String> {
    let (x, y) = s.split_once('x').ok_or_else(|| format!("expected <x>x<y>, got {s:?}"))?;
    let parse = |v: &str| v.parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(x)?, parse(y)?))
}

fn parse_clip(s: &str) -> Result<f64, String> {
    if s == "off" {
        Ok(0.0)
    } else {
        s.parse().map_err(|_| format!("expected a number or \"off\", got {s:?}"))
    }
}

impl Common {
    fn config(&self) -> Result<PipelineConfig, StageError> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path).map_err(|e| StageError::new(Stage::Config, path.display().to_string(), e))?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($flag:expr => $($field:tt)+) => {
                if let Some(v) = $flag {
                    c.$($field)+ = v;
                }
            };
        }
        set!(self.depth_threshold => depth.threshold);
        set!(self.deepest_threshold.map(Some) => depth.deepest_threshold);
        set!(self.circle_ambiguity_ratio => depth.circle_ambiguity_ratio);
        set!(self.head_trim => ingest.head_trim);
        set!(self.tail_trim => ingest.tail_trim);
        set!(self.stride => ingest.stride);
        set!(self.n_theta.map(|a| a.0) => unwrap.n_theta);
        set!(self.n_r.map(|a| a.0) => unwrap.n_r);
        set!(self.r_min.map(Some) => unwrap.r_min);
        set!(self.r_max.map(Some) => unwrap.r_max);
        set!(self.ahe_tiles.map(|t| t.0) => ahe.tiles_x);
        set!(self.ahe_tiles.map(|t| t.1) => ahe.tiles_y);
        set!(self.ahe_clip => ahe.clip_limit);
        set!(self.ahe_bins => ahe.bins);
        set!(self.ratio => feature.ratio);
        set!(self.contrast_threshold => feature.contrast_threshold);
        set!(self.edge_threshold => feature.edge_ratio_threshold);
        set!(self.model => ransac.model);
        set!(self.ransac_iters => ransac.iterations);
        set!(self.ransac_tol => ransac.inlier_tolerance);
        set!(self.seed => seed);
        set!(self.debug_dir.clone().map(Some) => debug_dir);
        set!(self.composite_source => stitch.composite_source);
        c.validate().map_err(|e| StageError::new(Stage::Config, "config", e))?;
        Ok(c)
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StageError + '_ {
    move |e| StageError::new(Stage::Report, path.display().to_string(), e)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), StageError> {
    let text = serde_json::to_string_pretty(value).expect("serializable output");
    fs::write(path, text + "\n").map_err(io(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: Stage) -> Result<T, StageError> {
    let text = fs::read_to_string(path).map_err(|e| StageError::new(stage, path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| StageError::new(stage, path.display().to_string(), e))
}

fn save_png(img: &GrayImage, path: &Path) -> Result<(), StageError> {
    img.save_png(path).map_err(|e| StageError::new(Stage::Report, path.display().to_string(), e))
}

fn load_manifest(path: &Path) -> Result<FrameManifest, StageError> {
    FrameManifest::load(path).map_err(|e| StageError::new(Stage::Load, path.display().to_string(), e))
}

fn create_dir(dir: &Path) -> Result<(), StageError> {
    fs::create_dir_all(dir).map_err(io(dir))
}

/// Runs the per-frame stages and keeps the successes; failures are reported
/// on stderr and in `errors.json`.
fn prepared(
    config: &PipelineConfig,
    manifest: &Path,
    variant: MethodVariant,
    out: &Path,
) -> Result<Vec<(String, PreparedFrame)>, StageError> {
    let manifest = load_manifest(manifest)?;
    let frames = prepare_manifest(config, &manifest, variant)?;
    create_dir(out)?;
    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for (i, frame) in frames {
        match frame {
            Ok(f) => ok.push((format!("frame_{i:05}"), f)),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        for e in &errors {
            eprintln!("{e}");
        }
        write_json(&out.join("errors.json"), &errors)?;
    }
    Ok(ok)
}

#[derive(Debug, Serialize, Deserialize)]
struct MatchesFile {
    source_id: String,
    variant: MethodVariant,
    frames: Vec<String>,
    pairs: Vec<PairRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRecord {
    pair_index: usize,
    valid_match_count: usize,
    matches: Vec<annustitch::features::MatchPair>,
    ransac: Option<RansacResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<StageError>,
}

/// `dir/manifest.json` alone, or every `*/manifest.json` below `dir` in name order.
fn find_manifests(dir: &Path) -> Result<Vec<PathBuf>, StageError> {
    let direct = dir.join("manifest.json");
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let entries = fs::read_dir(dir).map_err(|e| StageError::new(Stage::Load, dir.display().to_string(), e))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path().join("manifest.json"))
        .filter(|p| p.is_file())
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(StageError::new(Stage::Load, dir.display().to_string(), "no manifest.json found"));
    }
    Ok(found)
}

fn run(cli: Cli) -> Result<(), StageError> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| StageError::new(Stage::Config, "threads", e))?;
    }
    let config = cli.common.config()?;
    match cli.command {
        Command::Keyframes { manifest, out } => {
            let m = load_manifest(&manifest)?;
            let selection = select_keyframes(&m, &config.ingest).map_err(|e| StageError::new(Stage::Keyframes, &m.source_id, e))?;
            match out {
                Some(path) => write_json(&path, &selection)?,
                None => println!("{}", serde_json::to_string_pretty(&selection).expect("serializable")),
            }
        }
        Command::Rotate { manifest, out } => {
            for (id, f) in prepared(&config, &manifest, MethodVariant::AheRotated, &out)? {
                save_png(&f.frame, &out.join(format!("{id}.png")))?;
                let tau = DepthThreshold::new(f.tau).expect("valid threshold");
                save_png(&threshold_mask(&f.frame, tau).to_image(), &out.join(format!("{id}_mask.png")))?;
                if let Some(e) = &f.ellipse {
                    save_png(&ellipse_overlay(&f.frame, e), &out.join(format!("{id}_ellipse.png")))?;
                }
                let meta = serde_json::json!({
                    "tau": f.tau,
                    "ellipse": f.ellipse,
                    "applied_angle": f.applied_angle,
                });
                write_json(&out.join(format!("{id}.json")), &meta)?;
            }
        }
        Command::Unwrap { manifest, out, no_rotate } => {
            let variant = if no_rotate { MethodVariant::Original } else { MethodVariant::AheRotated };
            for (id, f) in prepared(&config, &manifest, variant, &out)? {
                save_png(&f.raw_strip, &out.join(format!("{id}.png")))?;
                write_json(&out.join(format!("{id}.json")), &f.spec)?;
            }
        }
        Command::Enhance { manifest, out, no_rotate } => {
            let variant = if no_rotate { MethodVariant::Ahe } else { MethodVariant::AheRotated };
            for (id, f) in prepared(&config, &manifest, variant, &out)? {
                save_png(&f.strip, &out.join(format!("{id}.png")))?;
            }
        }
        Command::Match { manifest, out, variant } => {
            let m = load_manifest(&manifest)?;
            let selection = select_keyframes(&m, &config.ingest).map_err(|e| StageError::new(Stage::Keyframes, &m.source_id, e))?;
            let frames = load_frames(&m, &selection.selected_indices).map_err(|e| StageError::new(Stage::Load, &m.source_id, e))?;
            let ids: Vec<String> = selection.selected_indices.iter().map(|i| format!("frame_{i:05}")).collect();
            let analyzed = analyze_frames(&frames, &ids, variant, &config);
            let outcomes = match_frames(&m.source_id, variant, &analyzed, &config);
            create_dir(&out)?;
            let file = MatchesFile {
                source_id: m.source_id.clone(),
                variant,
                frames: ids,
                pairs: outcomes
                    .into_iter()
                    .map(|o| PairRecord {
                        pair_index: o.row.pair_index,
                        valid_match_count: o.row.valid_match_count,
                        matches: o.matches,
                        ransac: o.ransac,
                        error: o.error,
                    })
                    .collect(),
            };
            write_json(&out.join("matches.json"), &file)?;
        }
        Command::Stitch { input, matches, out } => {
            let file: MatchesFile = read_json(&matches, Stage::Stitch)?;
            let entries = fs::read_dir(&input).map_err(|e| StageError::new(Stage::Load, input.display().to_string(), e))?;
            let mut paths: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "png"))
                .collect();
            paths.sort();
            let strips = paths
                .iter()
                .map(|p| load_gray(p).map(Some).map_err(|e| StageError::new(Stage::Load, p.display().to_string(), e)))
                .collect::<Result<Vec<_>, _>>()?;
            let names: Vec<String> = paths
                .iter()
                .map(|p| p.file_stem().unwrap_or_default().to_string_lossy().into_owned())
                .collect();
            let links: Vec<Option<RansacResult>> = file.pairs.into_iter().map(|p| p.ransac).collect();
            let (outputs, breaks) = stitch_chain(&file.source_id, &strips, &links, &names, config.stitch.cyclic)?;
            if !breaks.is_empty() {
                eprintln!("chain broken after strips {breaks:?}");
            }
            let single = outputs.len() == 1;
            let stem = out.with_extension("");
            for o in outputs {
                let base = if single {
                    stem.clone()
                } else {
                    PathBuf::from(format!("{}_{}", stem.display(), o.name.trim_start_matches("panorama_")))
                };
                save_png(&o.canvas, &base.with_extension("png"))?;
                write_json(&base.with_extension("json"), &o.meta)?;
            }
        }
        Command::Eval { manifest_dir, out } => {
            let mut rows: Vec<MatchRow> = Vec::new();
            for path in find_manifests(&manifest_dir)? {
                let m = load_manifest(&path)?;
                let selection = select_keyframes(&m, &config.ingest).map_err(|e| StageError::new(Stage::Keyframes, &m.source_id, e))?;
                let frames = load_frames(&m, &selection.selected_indices).map_err(|e| StageError::new(Stage::Load, &m.source_id, e))?;
                rows.extend(run_variants(&m.source_id, &frames, &config)?);
            }
            let report = build_report(&rows, &config.eval);
            emit_report(&report, &out).map_err(|e| StageError::new(Stage::Report, out.display().to_string(), e))?;
            write_json(&out.join("rows.json"), &report.rows)?;
        }
        Command::Report { rows, out } => {
            let rows: Vec<MatchRow> = read_json(&rows, Stage::Report)?;
            let report = build_report(&rows, &config.eval);
            emit_report(&report, &out).map_err(|e| StageError::new(Stage::Report, out.display().to_string(), e))?;
        }
        Command::Pipeline { manifest, out } => {
            let m = load_manifest(&manifest)?;
            let summary = run_pipeline(&config, &m, &out)?;
            for e in &summary.errors {
                eprintln!("{e}");
            }
        }
        Command::Phantom { out, videos, params } => {
            let params: TubeParams = match params {
                Some(p) => read_json(&p, Stage::Config)?,
                None => TubeParams::default(),
            };
            for k in 0..videos {
                let id = format!("tube_{k:02}");
                let video = tube_video(&params, config.seed.wrapping_add(k as u64));
                write_video(&video, &out.join(&id), &id).map_err(|e| StageError::new(Stage::Report, &id, e))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
