use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use partstyle::eval::{
    clip_descriptor, export_attention, fmd, matrix_csv, msd_metric, EvalReport, FootConfig,
};
use partstyle::motion::features::to_world;
use partstyle::motion::{
    clip_dataset, extract_features, mirror, parse_bvh, read_archive, read_clip, synth, to_raw,
    write_archive, write_bvh, write_clip, BodyPart, ClipRecord, JointMap, MotionClip, Skeleton,
    DOF, N_JOINTS,
};
use partstyle::net::{read_checkpoint, Model};
use partstyle::skeletal::{build_graph_levels, Reach};
use partstyle::stylize::{parse_alpha, stylize_with_cleanup, PartAssignment, PartSource, Stylizer};
use partstyle::train::{TrainConfig, Trainer, LOG_HEADER};
use partstyle::Error;

#[derive(Parser)]
#[command(name = "partstyle", version, about = "Body-part motion style transfer")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Mpz,
    Bvh,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ReachArg {
    Main,
    Wide,
}

#[derive(clap::Args)]
struct OutputArgs {
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the output file extension, else mpz.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// BVH units per meter when writing BVH.
    #[arg(long, default_value_t = 100.0)]
    bvh_units: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a directory of BVH files into a windowed clip archive.
    Prepare {
        #[arg(long)]
        bvh_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 120)]
        window: usize,
        #[arg(long, default_value_t = 60)]
        overlap: usize,
        /// Also store the left/right mirrored copy of every window.
        #[arg(long)]
        mirror: bool,
        /// BVH units per meter.
        #[arg(long, default_value_t = 100.0)]
        bvh_units: f64,
    },
    /// Write an archive of procedurally generated walking clips in several styles.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        clips: usize,
        #[arg(long, default_value_t = 120)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on an archive.
    Train {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for checkpoints and the CSV log.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured step count.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Stylize a clip with per-part style sources.
    Stylize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        /// PART=CLIP_OR_source, repeatable; PART is LL, RL, SP, LA, RA or ALL.
        #[arg(long = "part")]
        parts: Vec<String>,
        /// PART=FLOAT interpolation weight toward the assigned clip, repeatable.
        #[arg(long = "alpha")]
        alphas: Vec<String>,
        #[arg(long, value_enum, default_value_t = OnOff::Off)]
        postprocess: OnOff,
        #[command(flatten)]
        output: OutputArgs,
        /// Seed is accepted for interface symmetry; inference is deterministic.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Encode and decode a clip with its own style.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Sweep the interpolation weight of some parts toward a target clip.
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Comma-separated parts to interpolate.
        #[arg(long, default_value = "LL,RL,SP,LA,RA")]
        parts: String,
        /// Number of evenly spaced weights in [0, 1].
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Mpz)]
        format: Format,
    },
    /// Per-joint mean squared displacement between two clips.
    EvalMsd {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Fréchet motion distance between two sets of clips.
    EvalFmd {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        generated: PathBuf,
    },
    /// Write a spatially averaged attention map as CSV.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        part: BodyPart,
        /// Graph level 1, 2 or 3 (3 is the coarsest).
        #[arg(long, default_value_t = 3)]
        level: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the graph levels, pooling groups and distance classes.
    InspectGraph {
        #[arg(long, value_enum, default_value_t = ReachArg::Main)]
        reach: ReachArg,
        /// Also print the layer shape ladder for this many frames.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value_t = 128)]
        channels: usize,
    },
}

/// Error with the process exit code it maps to.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Numeric(_) => 2,
            Error::Io(_)
            | Error::Format(_)
            | Error::Parse { .. }
            | Error::Retarget(_)
            | Error::Extraction(_) => 3,
            _ => 1,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        msg: msg.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn load_clip(path: &Path, bvh_units: f64) -> CliResult<MotionClip> {
    let is_bvh = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("bvh"));
    if is_bvh {
        let text = fs::read_to_string(path)?;
        let (sk, raw) = parse_bvh(&text, &JointMap::default(), 1.0 / bvh_units)?;
        Ok(extract_features(&raw, &sk)?)
    } else if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        clip_from_csv(&fs::read_to_string(path)?)
    } else {
        Ok(read_clip(path)?)
    }
}

/// One frame per row, 21 × 15 values each, as written by `--format csv`.
fn clip_from_csv(text: &str) -> CliResult<MotionClip> {
    let mut data = Vec::new();
    let mut frames = 0;
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
        let row: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(format!("bad number `{v}`")))
            })
            .collect::<Result<_, _>>()?;
        if row.len() != N_JOINTS * DOF {
            return Err(parse_err(format!(
                "expected {} values, found {}",
                N_JOINTS * DOF,
                row.len()
            ))
            .into());
        }
        data.extend(row);
        frames += 1;
    }
    Ok(MotionClip::new(frames, data)?)
}

fn resolve_clip(name: &str) -> CliResult<MotionClip> {
    let path = Path::new(name);
    if !path.is_file() {
        return Err(Error::Resolution(format!("style clip `{name}` does not exist")).into());
    }
    load_clip(path, 100.0)
}

fn output_format(args: &OutputArgs) -> Format {
    args.format
        .unwrap_or_else(|| match args.out.extension().and_then(|e| e.to_str()) {
            Some("bvh") => Format::Bvh,
            Some("csv") => Format::Csv,
            _ => Format::Mpz,
        })
}

fn clip_csv(clip: &MotionClip) -> String {
    let rows: Vec<Vec<f64>> = (0..clip.frames()).map(|t| clip.frame(t).to_vec()).collect();
    matrix_csv(&rows)
}

fn save(clip: &MotionClip, path: &Path, format: Format, bvh_units: f64) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    match format {
        Format::Mpz => write_clip(path, clip)?,
        Format::Bvh => {
            let sk = Skeleton::standard();
            fs::write(path, write_bvh(&sk, &to_raw(clip, &sk), 1.0 / bvh_units))?;
        }
        Format::Csv => fs::write(path, clip_csv(clip))?,
    }
    Ok(())
}

fn load_dir_clips(dir: &Path) -> CliResult<Vec<MotionClip>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "mpz" || e == "bvh"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_clip(p, 100.0)).collect()
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Prepare {
            bvh_dir,
            out,
            window,
            overlap,
            mirror: with_mirror,
            bvh_units,
        } => {
            if overlap >= window {
                return Err(usage("overlap must be smaller than the window"));
            }
            let mut files: Vec<PathBuf> = fs::read_dir(&bvh_dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("bvh")))
                .collect();
            files.sort();
            let mut records = Vec::new();
            for f in &files {
                let text = fs::read_to_string(f)?;
                let (sk, raw) = parse_bvh(&text, &JointMap::default(), 1.0 / bvh_units)?;
                let clip = extract_features(&raw, &sk)?;
                let stem = f
                    .file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .to_string();
                let starts = partstyle::motion::window_starts(clip.frames(), window, overlap);
                for (w, start) in clip_dataset(&clip, window, overlap).into_iter().zip(starts) {
                    let rec = |m: bool| ClipRecord {
                        id: format!("{stem}_{start:06}{}", if m { "_m" } else { "" }),
                        source: stem.clone(),
                        start,
                        mirrored: m,
                    };
                    if with_mirror {
                        records.push((rec(true), mirror(&w, &sk)));
                    }
                    records.push((rec(false), w));
                }
            }
            records.sort_by(|a, b| a.0.id.cmp(&b.0.id));
            write_archive(&out, &records)?;
            println!("{} clips from {} files", records.len(), files.len());
        }
        Command::Synth {
            out,
            clips,
            frames,
            seed,
        } => {
            let sk = Skeleton::standard();
            let presets = synth::StyleParams::presets();
            let mut records = Vec::new();
            for i in 0..clips {
                let style = &presets[i % presets.len()];
                let raw = synth::walk(&sk, style, frames, seed.wrapping_add(i as u64));
                let clip = extract_features(&raw, &sk)?;
                records.push((
                    ClipRecord {
                        id: format!("{i:03}_{}", style.name),
                        source: style.name.clone(),
                        start: 0,
                        mirrored: false,
                    },
                    clip,
                ));
            }
            write_archive(&out, &records)?;
            println!("{} clips of {frames} frames", records.len());
        }
        Command::Train {
            archive,
            config,
            out,
            steps,
            seed,
            resume,
        } => {
            let mut cfg = match &config {
                Some(p) => TrainConfig::from_toml(&fs::read_to_string(p)?)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = steps {
                cfg.steps = Some(s);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let clips: Vec<MotionClip> = read_archive(&archive)?
                .into_iter()
                .map(|(_, c)| c)
                .collect();
            if clips.is_empty() {
                return Err(usage("archive holds no clips"));
            }
            let total = cfg.total_steps(clips.len()) as u64;
            fs::create_dir_all(&out)?;
            let (mut trainer, append) = match &resume {
                Some(p) => (Trainer::resume(cfg, clips, read_checkpoint(p)?)?, true),
                None => (Trainer::new(cfg, clips)?, false),
            };
            fs::write(out.join("config.toml"), trainer.config.to_toml())?;
            let log_path = out.join("log.csv");
            let file = fs::OpenOptions::new()
                .create(true)
                .write(true)
                .append(append)
                .truncate(!append)
                .open(&log_path)?;
            let mut log = BufWriter::new(file);
            if !append {
                writeln!(log, "{LOG_HEADER}")?;
            }
            let reports = trainer.run(total, &mut log, Some(&out))?;
            if let Some(r) = reports.last() {
                println!(
                    "step {}: l_rec {:.5} l_cyc {:.5} l_root {:.5} l_sm {:.5} total {:.5}",
                    trainer.step(),
                    r.l_rec,
                    r.l_cyc,
                    r.l_root,
                    r.l_sm,
                    r.total
                );
            }
        }
        Command::Stylize {
            checkpoint,
            source,
            parts,
            alphas,
            postprocess,
            output,
            seed: _,
        } => {
            let ck = read_checkpoint(&checkpoint)?;
            let model = ck.inference_model();
            let st = Stylizer {
                model: &model,
                norm: &ck.norm,
            };
            let src = load_clip(&source, output.bvh_units)?;
            let mut assignment = PartAssignment::default();
            for p in &parts {
                assignment.apply_spec(p)?;
            }
            let alpha = parse_alpha(&alphas)?;
            let styles: Vec<MotionClip> = assignment
                .clips()
                .iter()
                .map(|c| resolve_clip(c))
                .collect::<CliResult<_>>()?;
            let refs: Vec<&MotionClip> = styles.iter().collect();
            let sk = Skeleton::standard();
            let foot = FootConfig::default();
            let cleanup = (postprocess == OnOff::On).then_some((&sk, &foot));
            let out = stylize_with_cleanup(&st, &src, &assignment, &refs, alpha, cleanup)?;
            save(&out, &output.out, output_format(&output), output.bvh_units)?;
        }
        Command::Reconstruct {
            checkpoint,
            source,
            output,
        } => {
            let ck = read_checkpoint(&checkpoint)?;
            let model = ck.inference_model();
            let st = Stylizer {
                model: &model,
                norm: &ck.norm,
            };
            let src = load_clip(&source, output.bvh_units)?;
            let out = st.reconstruct(&src)?;
            save(&out, &output.out, output_format(&output), output.bvh_units)?;
        }
        Command::Interpolate {
            checkpoint,
            source,
            target,
            parts,
            steps,
            out,
            format,
        } => {
            if steps < 2 {
                return Err(usage("interpolate needs at least 2 steps"));
            }
            let ck = read_checkpoint(&checkpoint)?;
            let model = ck.inference_model();
            let st = Stylizer {
                model: &model,
                norm: &ck.norm,
            };
            let src = load_clip(&source, 100.0)?;
            let tar = load_clip(&target, 100.0)?;
            let chosen: Vec<BodyPart> = parts
                .split(',')
                .map(|p| p.parse())
                .collect::<Result<_, _>>()?;
            let mut assignment = PartAssignment::default();
            let name = target.to_string_lossy().to_string();
            for p in &chosen {
                assignment.parts[p.index()] = PartSource::Clip(name.clone());
            }
            fs::create_dir_all(&out)?;
            let ext = match format {
                Format::Mpz => "mpz",
                Format::Bvh => "bvh",
                Format::Csv => "csv",
            };
            for k in 0..steps {
                let a = k as f64 / (steps - 1) as f64;
                let mut alpha = [1.0; 5];
                for p in &chosen {
                    alpha[p.index()] = a;
                }
                let y = st.stylize(&src, &assignment, &[&tar], alpha)?;
                save(&y, &out.join(format!("alpha_{a:.3}.{ext}")), format, 100.0)?;
            }
        }
        Command::EvalMsd { source, output } => {
            let a = load_clip(&source, 100.0)?;
            let b = load_clip(&output, 100.0)?;
            let sk = Skeleton::standard();
            let msd = msd_metric(&to_world(&a), &to_world(&b), sk.height())?;
            print!("{}", EvalReport::new(&sk, msd).to_text());
        }
        Command::EvalFmd { real, generated } => {
            let a: Vec<Vec<f64>> = load_dir_clips(&real)?.iter().map(clip_descriptor).collect();
            let b: Vec<Vec<f64>> = load_dir_clips(&generated)?
                .iter()
                .map(clip_descriptor)
                .collect();
            println!("{:.6}", fmd(&a, &b)?);
        }
        Command::ExportAttention {
            checkpoint,
            source,
            target,
            part,
            level,
            out,
        } => {
            if !(1..=3).contains(&level) {
                return Err(usage("level must be 1, 2 or 3"));
            }
            let ck = read_checkpoint(&checkpoint)?;
            let model = ck.inference_model();
            let prep = |p: &Path| -> CliResult<_> {
                let c = load_clip(p, 100.0)?;
                let c = c.fit_length(c.frames().div_ceil(4) * 4);
                Ok(ck.norm.normalize(&c).to_tensor())
            };
            let (_, map) =
                export_attention(&model, &prep(&source)?, &prep(&target)?, part, level - 1)?;
            fs::write(&out, matrix_csv(&map))?;
            println!("{} x {}", map.len(), map.first().map_or(0, Vec::len));
        }
        Command::InspectGraph {
            reach,
            frames,
            channels,
        } => {
            let reach = match reach {
                ReachArg::Main => Reach::MAIN,
                ReachArg::Wide => Reach::WIDE,
            };
            let sg = build_graph_levels(&Skeleton::standard(), reach)?;
            print!("{}", sg.export_text());
            if let Some(t) = frames {
                let cfg = partstyle::net::NetConfig {
                    reach,
                    ..partstyle::net::NetConfig::with_base(channels)
                };
                let model: Model<f32> = Model::new(cfg, 0)?;
                println!("parameters {}", model.num_parameters());
                for (name, shape) in model.shape_trace(t)? {
                    println!("{name} {shape:?}");
                }
            }
        }
    }
    Ok(())
}
