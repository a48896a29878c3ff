use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use scenekit::edit::{apply_placement_edit, color_guidance, finetune_color, finetune_geometry, EditError, EditRequest};
use scenekit::field::{Field, FieldRegistry};
use scenekit::geometry::ShapeSpec;
use scenekit::guidance::{select_guidance, GuidanceConfig, GuidanceHandle, NullGuidance};
use scenekit::math::Vec3;
use scenekit::render::{render_composed, render_object, Camera, CameraSpec, Image, RenderOptions};
use scenekit::scene::{load_scene, save_scene, template_scene, validate_scene, SceneDescription, SceneError};
use scenekit::service::{serve, Service};
use scenekit::train::{preview_camera, CameraDistribution, RunRecorder, TrainConfig, TrainError, Trainer};

#[derive(Parser)]
#[command(name = "scenekit", version, about = "Compose, train, render and edit object-proxy neural field scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the two-object template scene.
    Init {
        #[arg(long, default_value = "scene.json")]
        scene: PathBuf,
        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Check a scene file and list every violation.
    Validate {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Render the composed scene to PNG or PFM (by extension).
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[command(flatten)]
        view: ViewArgs,
        #[arg(long, default_value = "render.png")]
        out: PathBuf,
    },
    /// Render one field alone in its canonical frame.
    RenderObject {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        field: String,
        #[command(flatten)]
        view: ViewArgs,
        #[arg(long, default_value = "object.png")]
        out: PathBuf,
    },
    /// Run interleaved training and write events, previews and checkpoints.
    Train {
        #[arg(long)]
        scene: PathBuf,
        /// Training config JSON; missing keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        guidance: GuidanceArgs,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Apply an edit request JSON; writes the edited scene (and fine-tuned
    /// checkpoints) under --out.
    Edit {
        #[arg(long)]
        scene: PathBuf,
        /// Edit request JSON file.
        #[arg(long = "edit")]
        request: PathBuf,
        #[command(flatten)]
        guidance: GuidanceArgs,
        #[arg(long, default_value = "edited")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve the HTTP API for one scene.
    Serve {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[command(flatten)]
        guidance: GuidanceArgs,
        #[arg(long, default_value = "serve-out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ViewArgs {
    /// Camera JSON: a full pose or {"eye", "target", "up", "fov_y"}.
    #[arg(long, conflicts_with_all = ["eye", "target"])]
    camera: Option<PathBuf>,
    /// Eye position "x,y,z".
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    eye: Option<Vec3>,
    /// Look-at point "x,y,z".
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    target: Option<Vec3>,
    /// Vertical field of view, radians.
    #[arg(long, default_value_t = 0.8)]
    fov: f64,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 128)]
    samples: usize,
    /// Stratified sampling with this seed instead of midpoints.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GuidanceArgs {
    /// `photometric:TARGET.pfm`, `photometric:REFERENCE.json`, `remote[:URL]`,
    /// `none`, or a guidance config JSON file.
    #[arg(long)]
    guidance: Option<String>,
    #[arg(long, env = "SCENEKIT_GUIDANCE_URL", hide = true)]
    guidance_url: Option<String>,
}

enum Failure {
    Invalid(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<SceneError> for Failure {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Io { .. } => Failure::Runtime(e.into()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) | TrainError::InvalidScene(_) | TrainError::UnknownField(_) => {
                Failure::Invalid(e.to_string())
            }
            _ => Failure::Runtime(e.into()),
        }
    }
}

impl From<EditError> for Failure {
    fn from(e: EditError) -> Self {
        match e {
            EditError::Train(t) => t.into(),
            EditError::Guidance(_) => Failure::Runtime(e.into()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Invalid(msg.into()))
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    match v[..] {
        [x, y, z] if v.iter().all(|c| c.is_finite()) => Ok(Vec3::new(x, y, z)),
        _ => Err(format!("expected three finite numbers, got {s:?}")),
    }
}

fn base_dir(scene_path: &Path) -> PathBuf {
    scene_path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_owned()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))?;
    serde_json::from_str(&text).or_else(|e| invalid(format!("{}: invalid {what}: {e}", path.display())))
}

fn load(scene_path: &Path) -> Result<(SceneDescription, FieldRegistry<f32>, PathBuf), Failure> {
    let scene = load_scene(scene_path)?;
    let base = base_dir(scene_path);
    let fields = FieldRegistry::load_for_scene(&scene, &base).with_context(|| format!("loading fields for {}", scene_path.display()))?;
    Ok((scene, fields, base))
}

/// Absolute checkpoint and mesh paths, so the scene can be written elsewhere.
fn absolutize(scene: &mut SceneDescription, base: &Path) -> anyhow::Result<()> {
    let abs = |p: &Path| -> anyhow::Result<PathBuf> {
        Ok(if p.is_absolute() { p.to_owned() } else { std::path::absolute(base.join(p))? })
    };
    for spec in scene.fields.values_mut() {
        if let Some(c) = &spec.checkpoint {
            spec.checkpoint = Some(abs(c)?);
        }
    }
    for p in &mut scene.proxies {
        if let Some(ShapeSpec::Mesh { path }) = &mut p.shape {
            *path = abs(path)?;
        }
    }
    Ok(())
}

/// Saves checkpoints under `out/checkpoints` and the scene pointing at them as `out/scene.json`.
fn write_result(mut scene: SceneDescription, fields: &FieldRegistry<f32>, base: &Path, out: &Path) -> Result<PathBuf, Failure> {
    absolutize(&mut scene, base)?;
    let saved = fields.save_checkpoints(&out.join("checkpoints")).context("writing checkpoints")?;
    for (id, path) in saved {
        if let Some(spec) = scene.fields.get_mut(&id) {
            spec.checkpoint = Some(std::path::absolute(path).context("resolving checkpoint path")?);
        }
    }
    let path = out.join("scene.json");
    save_scene(&scene, &path)?;
    Ok(path)
}

fn guidance(args: &GuidanceArgs) -> Result<GuidanceHandle, Failure> {
    let url = args.guidance_url.as_deref().filter(|u| !u.is_empty());
    let (config, base) = match args.guidance.as_deref() {
        Some(s) if s.ends_with(".json") && !s.contains(':') => {
            let path = Path::new(s);
            (read_json::<GuidanceConfig>(path, "guidance config")?, base_dir(path))
        }
        Some(s) => match GuidanceConfig::parse_flag(s, url) {
            Ok(c) => (c, PathBuf::from(".")),
            Err(e) => return invalid(e.to_string()),
        },
        None => match url {
            Some(u) => (GuidanceConfig::parse_flag(&format!("remote:{u}"), None).map_err(|e| Failure::Invalid(e.to_string()))?, PathBuf::from(".")),
            None => return Ok(GuidanceHandle::new(Arc::new(NullGuidance), "none")),
        },
    };
    select_guidance(&config, &base).or_else(|e| invalid(e.to_string()))
}

fn camera(view: &ViewArgs, scene: &SceneDescription, object: bool) -> Result<Camera, Failure> {
    let res = (view.width, view.height);
    let cam = if let Some(path) = &view.camera {
        let spec: CameraSpec = read_json(path, "camera")?;
        spec.build(None, res)
    } else {
        match (view.eye, view.target) {
            (Some(eye), target) => {
                let target = target.unwrap_or(if object { Vec3::ZERO } else { scene.bounds.center() });
                CameraSpec::LookAt { eye, target, up: Vec3::new(0.0, 1.0, 0.0), fov_y: view.fov }.build(Some(res), res)
            }
            (None, Some(_)) => return invalid("--target needs --eye"),
            (None, None) => {
                let bounds = if object { scene.object_bounds } else { scene.bounds };
                let cam = preview_camera(&bounds, CameraDistribution::default().radius_range, view.fov, res);
                cam.validate().map(|_| cam)
            }
        }
    };
    cam.or_else(|e| invalid(e.to_string()))
}

fn render_options(view: &ViewArgs) -> Result<RenderOptions, Failure> {
    let opts = match view.seed {
        Some(s) => RenderOptions::stratified(view.samples, s),
        None => RenderOptions::midpoint(view.samples),
    };
    opts.validate().or_else(|e| invalid(e.to_string()))?;
    Ok(opts)
}

fn write_image(img: &Image<f32>, out: &Path) -> Result<(), Failure> {
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let res = match out.extension().and_then(|e| e.to_str()) {
        Some("pfm") => img.write_pfm(out),
        Some("png") => img.write_png(out),
        _ => return invalid(format!("{}: output must end in .png or .pfm", out.display())),
    };
    res.with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn train_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig, Failure> {
    let mut cfg = match path {
        Some(p) => read_json::<TrainConfig>(p, "training config")?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Init { scene, force } => {
            if scene.exists() && !force {
                return invalid(format!("{} exists; pass --force to overwrite", scene.display()));
            }
            save_scene(&template_scene(), &scene)?;
            println!("wrote {}", scene.display());
        }
        Command::Validate { scene } => {
            let text = std::fs::read_to_string(&scene).with_context(|| format!("reading {}", scene.display()))?;
            let parsed: SceneDescription = serde_json::from_str(&text)
                .or_else(|e| invalid(format!("{}:{}:{}: {e}", scene.display(), e.line(), e.column())))?;
            let bad = validate_scene(&parsed);
            if !bad.is_empty() {
                for v in &bad {
                    eprintln!("{v}");
                }
                return invalid(format!("{}: {} violation(s)", scene.display(), bad.len()));
            }
            println!("{}: ok ({} proxies, {} fields)", scene.display(), parsed.proxies.len(), parsed.fields.len());
        }
        Command::Render { scene, view, out } => {
            let (scene, fields, _) = load(&scene)?;
            let cam = camera(&view, &scene, false)?;
            let img = render_composed(&scene, &fields, &cam, &render_options(&view)?).context("rendering")?;
            write_image(&img, &out)?;
            println!("wrote {}", out.display());
        }
        Command::RenderObject { scene, field, view, out } => {
            let (scene, fields, _) = load(&scene)?;
            let Some(f) = fields.get(&field) else {
                return invalid(format!("unknown field '{field}'"));
            };
            let cam = camera(&view, &scene, true)?;
            let img = render_object(f, &cam, &scene.object_bounds, &render_options(&view)?).context("rendering")?;
            write_image(&img, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Train { scene, config, guidance: g, out, seed } => {
            let (scene, fields, base) = load(&scene)?;
            let cfg = train_config(config.as_deref(), seed)?;
            let handle = guidance(&g)?;
            let mut trainer = Trainer::new(scene.clone(), fields, cfg.clone(), handle, &base)?;
            let mut rec = RunRecorder::create(&out, &cfg)?;
            let summary = trainer.train(&mut rec)?;
            drop(rec);
            let path = write_result(scene, trainer.fields(), &base, &out)?;
            println!(
                "trained {} steps ({} skipped); events in {}, scene in {}",
                summary.iters,
                summary.skipped,
                out.join("events.jsonl").display(),
                path.display()
            );
        }
        Command::Edit { scene: scene_path, request, guidance: g, out, seed } => {
            let (scene, fields, base) = load(&scene_path)?;
            let edit: EditRequest = read_json(&request, "edit request")?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let (scene, fields, iters) = match &edit {
                e if e.is_placement() => (apply_placement_edit(&scene, e)?, fields, 0),
                EditRequest::Geometry { proxy_id, shape, finetune } => {
                    let mut cfg = finetune.clone();
                    cfg.seed = seed.unwrap_or(cfg.seed);
                    let mut rec = RunRecorder::create(&out, &cfg)?;
                    let r = finetune_geometry(&scene, &fields, proxy_id, shape, &cfg, guidance(&g)?, &base, &mut rec)?;
                    (r.scene, r.fields, r.summary.iters)
                }
                EditRequest::Color { field_id, steps, finetune, .. } => {
                    let mut cfg = finetune.clone();
                    cfg.seed = seed.unwrap_or(cfg.seed);
                    let base_guidance = if g.guidance.is_some() || g.guidance_url.is_some() { Some(guidance(&g)?) } else { None };
                    let handle = color_guidance(&edit, cfg.render_resolution, base_guidance, Path::new("."))?;
                    let mut rec = RunRecorder::create(&out, &cfg)?;
                    let r = finetune_color(&scene, &fields, field_id, *steps, &cfg, handle, &mut rec)?;
                    (r.scene, r.fields, r.summary.iters)
                }
                _ => unreachable!("placement edits are handled above"),
            };
            let path = write_result(scene, &fields, &base, &out)?;
            println!("edited scene in {} ({iters} fine-tune steps)", path.display());
        }
        Command::Serve { scene: scene_path, port, host, guidance: g, out } => {
            let (scene, fields, base) = load(&scene_path)?;
            let handle = guidance(&g)?;
            let neural = fields.iter().filter(|(_, f)| matches!(f, Field::Neural(_))).count();
            let addr: SocketAddr = format!("{host}:{port}").parse().or_else(|e| invalid(format!("bad address: {e}")))?;
            let service = Service::new(scene, fields, handle, base, &out).context("preparing output directory")?;
            eprintln!("serving {} ({neural} trainable fields) on http://{addr}", scene_path.display());
            let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
            rt.block_on(serve(service, addr)).context("serving")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
