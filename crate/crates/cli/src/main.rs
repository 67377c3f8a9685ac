use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use roomforge::config::PipelineConfig;
use roomforge::constraints::Detection;
use roomforge::depth_lift::{rescale_depth_or_shift, ReferenceSet, ReferenceMode};
use roomforge::geometry::{Aabb3, DepthMap};
use roomforge::pipeline::{self, AssetLibrary, PipelineError};
use roomforge::render::{depth_to_gray, floor_visibility, ids_to_rgb, occupancy, rasterize, shade};
use roomforge::scene::{deserialize_scene, serialize_scene, Category, ObjectSpec, Room, SceneState};
use roomforge::validate::validate_scene;
use roomforge::view_mask::{room_views, RoomViewParams, StopPolicy};

#[derive(Parser)]
#[command(name = "roomforge", version, about = "Image-guided indoor scene layout synthesis")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full furniture and small-object pipeline.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Scripted offline backend, overriding the config.
        #[arg(long)]
        mock: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Align an estimated depth map to a reference depth map.
    Lift {
        /// Estimated (relative) depth, DPTH raster.
        #[arg(long)]
        depth: PathBuf,
        /// Reference (metric) depth, DPTH raster.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Inpainting mask PNG; non-zero pixels are excluded from the references.
        #[arg(long)]
        mask: PathBuf,
        /// Where to write the rescaled depth.
        #[arg(long, default_value = "rescaled.dpth")]
        out: PathBuf,
    },
    /// Derive constraints for detected boxes and place them.
    Place {
        /// JSON list of `{name, category, bbox: {min, max}}` records.
        #[arg(long)]
        detections: PathBuf,
        /// `XxY[xH]` in meters, or a JSON room file.
        #[arg(long)]
        room: String,
        /// Optional config for thresholds and weights.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the resulting scene here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the room-centered cameras as JSON.
    PlanViews {
        #[arg(long)]
        room: String,
    },
    /// Check scene invariants; exits non-zero on violations.
    Validate {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Render shaded, instance and depth images of one room view.
    RenderDebug {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        view: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Deserialize)]
struct DetectionRecord {
    #[serde(default)]
    id: Option<String>,
    name: String,
    #[serde(default)]
    description: String,
    category: Category,
    bbox: Aabb3,
}

fn parse_room(spec: &str) -> Result<Room> {
    let path = Path::new(spec);
    if path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("reading room file {spec}"))?;
        let room: Room = serde_json::from_str(&text).with_context(|| format!("parsing room file {spec}"))?;
        room.validate()?;
        return Ok(room);
    }
    let parts: Vec<f64> = spec
        .split(['x', 'X', ','])
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("room spec `{spec}` is neither a file nor `XxY[xH]`"))?;
    let room = match parts[..] {
        [x, y] => Room::rectangle(x, y, 2.8),
        [x, y, h] => Room::rectangle(x, y, h),
        _ => bail!("room spec `{spec}` needs two or three dimensions"),
    };
    room.validate()?;
    Ok(room)
}

fn read_depth(path: &Path) -> Result<DepthMap> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    DepthMap::read_from(&bytes[..]).with_context(|| format!("decoding depth {}", path.display()))
}

fn cmd_generate(config: &Path, mock: Option<PathBuf>, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExitCode> {
    let mut cfg = PipelineConfig::load(config)?;
    if let Some(m) = mock {
        cfg.backend.mock = Some(m);
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    match pipeline::generate(&cfg) {
        Ok(out) => {
            println!(
                "{} instances, occupancy {:.3}\nscene:  {}\nevents: {}",
                out.scene.instances.len(),
                occupancy(&out.scene),
                out.scene_path.display(),
                out.events_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Err(PipelineError::Validation { path, violations }) => {
            for v in &violations {
                eprintln!("violation: {v}");
            }
            eprintln!("scene written to {} but failed validation", path.display());
            Ok(ExitCode::FAILURE)
        }
        Err(e @ PipelineError::NoBackend) => {
            eprintln!("error: {e}");
            Ok(ExitCode::from(2))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_lift(depth: &Path, reference: &Path, mask: &Path, out: &Path) -> Result<()> {
    let d_e = read_depth(depth)?;
    let d_r = read_depth(reference)?;
    let mask = image::open(mask).with_context(|| format!("reading mask {}", mask.display()))?.to_luma8();
    if (d_e.width(), d_e.height()) != (d_r.width(), d_r.height()) || mask.dimensions() != (d_e.width(), d_e.height()) {
        bail!("depth, reference and mask must share one resolution");
    }
    let pixels = mask.pixels().enumerate().filter(|(_, p)| p.0[0] == 0).map(|(k, _)| k).collect();
    let refs = ReferenceSet { pixels, mode: ReferenceMode::RoomContext };
    let (rescaled, stats) = rescale_depth_or_shift(&d_e, &d_r, &refs)?;
    fs::write(out, rescaled.to_bytes()).with_context(|| format!("writing {}", out.display()))?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn cmd_place(detections: &Path, room: &str, config: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let room = parse_room(room)?;
    let cfg = match config {
        Some(p) => {
            let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<PipelineConfig>(&text)?
        }
        None => PipelineConfig::default(),
    };
    let text = fs::read_to_string(detections).with_context(|| format!("reading {}", detections.display()))?;
    let records: Vec<DetectionRecord> = serde_json::from_str(&text).context("parsing detections")?;
    let dets: Vec<Detection> = records
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            let id = r.id.unwrap_or_else(|| format!("{}-{k:03}", r.name.replace(' ', "_")));
            Detection::new(id, ObjectSpec::new(r.name, r.description, r.category), r.bbox)
        })
        .collect();
    let mut scene = SceneState::new(room, cfg.seed);
    let assets = AssetLibrary::from_config(&cfg)?;
    pipeline::place_detections(&mut scene, dets, &cfg, &assets, Err("no annotator".into()));
    for e in &scene.pass_log {
        println!("{:>4} {:<16} {}", e.ordinal, serde_json::to_value(e.kind)?.as_str().unwrap_or(""), e.payload);
    }
    let bytes = serialize_scene(&scene);
    match out {
        Some(p) => fs::write(&p, &bytes).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}

fn cmd_plan_views(room: &str) -> Result<()> {
    let room = parse_room(room)?;
    let plan = room_views(&room, &RoomViewParams::default(), StopPolicy::default())?;
    let views: Vec<serde_json::Value> = plan
        .cameras
        .iter()
        .map(|c| {
            serde_json::json!({
                "camera": c,
                "floor_visibility": floor_visibility(&room, c, 200),
            })
        })
        .collect();
    println!("{}", serde_json::to_string_pretty(&views)?);
    Ok(())
}

fn load_scene(path: &Path) -> Result<SceneState> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(deserialize_scene(&bytes)?)
}

fn cmd_validate(scene: &Path) -> Result<ExitCode> {
    let scene = load_scene(scene)?;
    let violations = validate_scene(&scene);
    if violations.is_empty() {
        println!("ok: {} instances, occupancy {:.3}", scene.instances.len(), occupancy(&scene));
        return Ok(ExitCode::SUCCESS);
    }
    for v in &violations {
        println!("violation: {v}");
    }
    Ok(ExitCode::FAILURE)
}

fn cmd_render_debug(scene: &Path, view: usize, out: &Path) -> Result<()> {
    let scene = load_scene(scene)?;
    let plan = room_views(&scene.room, &RoomViewParams::default(), StopPolicy::default())?;
    let Some(cam) = plan.cameras.get(view) else {
        bail!("view {view} out of range, the room has {} views", plan.cameras.len());
    };
    let frame = rasterize(&scene, cam);
    fs::create_dir_all(out)?;
    let files = [
        (format!("view{view}_shaded.png"), image::DynamicImage::ImageRgb8(shade(&frame))),
        (format!("view{view}_ids.png"), image::DynamicImage::ImageRgb8(ids_to_rgb(&frame.ids))),
        (format!("view{view}_depth.png"), image::DynamicImage::ImageLuma8(depth_to_gray(&frame.depth))),
    ];
    for (name, img) in files {
        let path = out.join(name);
        img.save(&path).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    let result = match cli.command {
        Command::Generate { config, mock, seed, out } => cmd_generate(&config, mock, seed, out),
        Command::Lift { depth, reference, mask, out } => cmd_lift(&depth, &reference, &mask, &out).map(|_| ExitCode::SUCCESS),
        Command::Place { detections, room, config, out } => {
            cmd_place(&detections, &room, config, out).map(|_| ExitCode::SUCCESS)
        }
        Command::PlanViews { room } => cmd_plan_views(&room).map(|_| ExitCode::SUCCESS),
        Command::Validate { scene } => cmd_validate(&scene),
        Command::RenderDebug { scene, view, out } => cmd_render_debug(&scene, view, &out).map(|_| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
