use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ibmvs::cloud::{fuse_cloud, read_ply, write_ply, DepthView, FusionParams};
use ibmvs::decision::{ConstantOracle, DecisionOracle, GroundTruthOracle, NeuralOracle, ZnccConfig, ZnccOracle};
use ibmvs::engine::{self, EngineConfig};
use ibmvs::fusion::{EntropyWeights, NeuralWeights, UniformWeights, WeightOracle};
use ibmvs::geometry::InverseDepthInterval;
use ibmvs::io;
use ibmvs::metrics::{cloud_accuracy_completeness, depth_error_stats, CloudMetrics, MetricMode};
use ibmvs::neural::{Manifest, Network, WeightStore};
use ibmvs::scene::{select_sources, SceneBundle};
use ibmvs::scenegen::{presets, SceneSpec};
use ibmvs::Grid;

use crate::config::{parse_enum, pick, require, EvalConfig, FuseConfig, GenConfig, InferConfig};
use crate::{
    CliError, DepthFormat, EvalArgs, FuseArgs, GenArgs, InferArgs, ModeArg, OracleKind, Preset, WeightKind,
    WeightsCommand,
};

type Result<T> = std::result::Result<T, CliError>;

const DEFAULT_GT_SPACING: f64 = 0.005;

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

pub fn gen(args: GenArgs, cfg: GenConfig) -> Result<()> {
    let out = require(pick(args.out, cfg.out), "out")?;
    let spec = match (args.preset, pick(args.spec, cfg.spec)) {
        (Some(p), _) => match p {
            Preset::Plane => presets::plane(args.size),
            Preset::Occlusion => presets::occlusion(args.size, args.sources),
            Preset::Textured => presets::textured(args.size, args.sources),
        },
        (None, Some(path)) => {
            let text = fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("spec {}: {e}", path.display())))?;
            SceneSpec::from_json(&text)?
        }
        (None, None) => return Err(CliError::Usage("gen needs --spec or --preset".into())),
    };
    let spacing = pick(args.gt_spacing, cfg.gt_spacing).unwrap_or(DEFAULT_GT_SPACING);
    let views = spec.render_views()?;
    let cloud = if spacing > 0.0 {
        Some(spec.sample_surface(spacing)?).filter(|c| !c.is_empty())
    } else {
        None
    };
    io::write_scene_dir(&out, &views, spec.depth_range, cloud.as_ref())?;
    fs::write(out.join("spec.json"), spec.to_json() + "\n")?;
    log::info!("wrote {} views to {}", views.len(), out.display());
    Ok(())
}

fn zncc_config(args: &InferArgs, cfg: &InferConfig) -> ZnccConfig {
    let d = ZnccConfig::default();
    ZnccConfig {
        window: pick(args.zncc_window, cfg.zncc.window).unwrap_or(d.window),
        rho: pick(args.zncc_rho, cfg.zncc.rho).unwrap_or(d.rho),
        gamma: pick(args.zncc_gamma, cfg.zncc.gamma).unwrap_or(d.gamma),
    }
}

fn load_network(path: Option<&PathBuf>, who: &str) -> Result<Arc<Network>> {
    let path = path.ok_or_else(|| CliError::Usage(format!("{who} needs --weights")))?;
    Ok(Arc::new(Network::new(WeightStore::load_validated(path)?)?))
}

fn write_grid(grid: &Grid<f64>, path: &Path, format: DepthFormat) -> Result<()> {
    let mut w = create(path)?;
    match format {
        DepthFormat::Pfm => io::write_pfm(grid, &mut w)?,
        DepthFormat::Raw => io::write_depth_raw(grid, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

fn mask_values(mask: &ibmvs::SoftMask) -> Grid<f64> {
    let (w, h) = (mask.width(), mask.height());
    Grid::from_fn(w, h, |x, y| if mask.validity().at(x, y) { mask.values().at(x, y) } else { f64::NAN })
}

pub fn infer(args: InferArgs, cfg: InferConfig) -> Result<()> {
    let scene_dir = require(pick(args.scene.clone(), cfg.scene.clone()), "scene")?;
    let out = require(pick(args.out.clone(), cfg.out.clone()), "out")?;
    let oracle_kind = pick(args.oracle, parse_enum(cfg.oracle.clone(), "infer.oracle")?).unwrap_or(OracleKind::Zncc);
    let weight_kind =
        pick(args.weight_oracle, parse_enum(cfg.weight_oracle.clone(), "infer.weight_oracle")?).unwrap_or(WeightKind::Entropy);
    let format = pick(args.format, parse_enum(cfg.format.clone(), "infer.format")?).unwrap_or(DepthFormat::Pfm);
    let sources = pick(args.sources, cfg.sources).unwrap_or(4);
    let engine_cfg = EngineConfig {
        iterations: pick(args.iterations, cfg.iterations).unwrap_or(8),
        workers: pick(args.workers, cfg.workers).unwrap_or(0),
        record_trace: args.trace || cfg.trace.unwrap_or(false),
    };
    engine_cfg.validate()?;
    if sources == 0 {
        return Err(CliError::Usage("-S must be at least 1".into()));
    }
    let weights_path = pick(args.weights.clone(), cfg.weights.clone());

    let scene = io::read_scene_dir(&scene_dir)?;
    let range = scene.manifest.depth_range;
    let dmin = pick(args.dmin, cfg.dmin).or(range.map(|r| r[0]));
    let dmax = pick(args.dmax, cfg.dmax).or(range.map(|r| r[1]));
    let (Some(dmin), Some(dmax)) = (dmin, dmax) else {
        return Err(CliError::Usage("no depth range: pass --dmin/--dmax or add depth_range to the manifest".into()));
    };
    let interval = InverseDepthInterval::new(dmin, dmax)?;
    let n = scene.views.len();
    if sources > n - 1 {
        return Err(CliError::Usage(format!("-S {sources} needs at least {} views, scene has {n}", sources + 1)));
    }

    let mut network = None;
    let mut oracle: Box<dyn DecisionOracle> = match oracle_kind {
        OracleKind::Gt => Box::new(GroundTruthOracle),
        OracleKind::Zncc => Box::new(ZnccOracle::new(zncc_config(&args, &cfg))?),
        OracleKind::Neural => {
            let net = load_network(weights_path.as_ref(), "--oracle neural")?;
            network = Some(net.clone());
            Box::new(NeuralOracle::new(net))
        }
        OracleKind::Half => Box::new(ConstantOracle(0.5)),
    };
    let weights: Box<dyn WeightOracle> = match weight_kind {
        WeightKind::Uniform => Box::new(UniformWeights),
        WeightKind::Entropy => Box::new(EntropyWeights),
        WeightKind::Neural => {
            let net = match network {
                Some(n) => n,
                None => load_network(weights_path.as_ref(), "--weight-oracle neural")?,
            };
            Box::new(NeuralWeights::new(net))
        }
    };

    let references: Vec<usize> = if args.reference.is_empty() { (0..n).collect() } else { args.reference.clone() };
    if let Some(r) = references.iter().find(|r| **r >= n) {
        return Err(CliError::Usage(format!("reference view {r} out of range (scene has {n} views)")));
    }
    fs::create_dir_all(&out)?;
    let ext = match format {
        DepthFormat::Pfm => "pfm",
        DepthFormat::Raw => "depth",
    };
    for r in references {
        let src = select_sources(&scene.views, r, sources)?;
        let bundle = SceneBundle::from_views(&scene.views, r, &src)?;
        log::info!("view {r}: sources {src:?}");
        let result = engine::run(&bundle, interval, &engine_cfg, oracle.as_mut(), weights.as_ref())?;
        let name = io::view_name(r);
        write_grid(&result.depth, &out.join(format!("{name}.{ext}")), format)?;
        if let Some(trace) = &result.trace {
            let dir = out.join("trace").join(&name);
            for step in &trace.steps {
                let t = step.iteration;
                write_grid(&step.hypothesis, &dir.join(format!("t{t:02}_hypothesis.pfm")), DepthFormat::Pfm)?;
                for (s, source) in step.sources.iter().enumerate() {
                    let base = format!("t{t:02}_s{s:02}");
                    write_grid(&mask_values(&source.decision), &dir.join(format!("{base}_mask.pfm")), DepthFormat::Pfm)?;
                    write_grid(&source.weight, &dir.join(format!("{base}_weight.pfm")), DepthFormat::Pfm)?;
                    write_grid(&source.hypothesis, &dir.join(format!("{base}_hypothesis.pfm")), DepthFormat::Pfm)?;
                }
            }
        }
        if let Some(gt) = &bundle.reference.depth {
            if let Ok(stats) = depth_error_stats(&result.depth, gt, None, &[]) {
                println!(
                    "view={name} valid_pixels={} median_abs_depth={} median_abs_inverse_depth={}",
                    stats.valid_pixels, stats.depth.median_abs, stats.inverse_depth.median_abs
                );
            }
        }
    }
    Ok(())
}

pub fn fuse(args: FuseArgs, cfg: FuseConfig) -> Result<()> {
    let scene_dir = require(pick(args.scene, cfg.scene), "scene")?;
    let out = require(pick(args.out, cfg.out), "out")?;
    let params = FusionParams {
        min_views: pick(args.sg, cfg.sg).unwrap_or(3),
        max_reprojection: pick(args.g, cfg.g).unwrap_or(0.5),
    };
    params.validate()?;
    let scene = io::read_scene_dir(&scene_dir)?;
    let depths: Vec<Grid<f64>> = match pick(args.depths, cfg.depths) {
        Some(dir) => (0..scene.views.len())
            .map(|i| io::read_pfm_file(io::depth_output_path(&dir, i)))
            .collect::<ibmvs::Result<_>>()?,
        None => scene
            .views
            .iter()
            .map(|v| v.depth.clone().ok_or(ibmvs::Error::EmptyInput("ground-truth depth (pass --depths)")))
            .collect::<ibmvs::Result<_>>()?,
    };
    let views: Vec<DepthView> = scene.views.iter().zip(&depths).map(|(view, depth)| DepthView { view, depth }).collect();
    let cloud = fuse_cloud(&views, &params)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_ply(&cloud, &out)?;
    println!("points={}", cloud.len());
    Ok(())
}

pub fn eval(args: EvalArgs, cfg: EvalConfig) -> Result<()> {
    let pred = require(pick(args.pred, cfg.pred), "pred")?;
    let gt = require(pick(args.gt, cfg.gt), "gt")?;
    let tau = require(pick(args.tau, cfg.tau), "tau")?;
    let mode = match pick(args.mode, parse_enum(cfg.mode, "eval.mode")?).unwrap_or(ModeArg::Percentage) {
        ModeArg::Percentage => MetricMode::Percentage,
        ModeArg::Distance => MetricMode::Distance,
    };
    let metrics = cloud_accuracy_completeness(&read_ply(&pred)?, &read_ply(&gt)?, tau, mode)?;
    match pick(args.out, cfg.out) {
        Some(path) => fs::write(path, metrics.report())?,
        None => print!("{}", metrics.report()),
    }
    if let Some(path) = pick(args.csv, cfg.csv) {
        let fresh = !path.exists();
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&path)?;
        if fresh {
            writeln!(f, "{}", CloudMetrics::CSV_HEADER)?;
        }
        writeln!(f, "{}", metrics.csv_row())?;
    }
    Ok(())
}

pub fn weights(cmd: WeightsCommand) -> Result<()> {
    let manifest = Manifest::full()?;
    match cmd {
        WeightsCommand::Manifest { out } => match out {
            Some(path) => fs::write(path, manifest.to_text())?,
            None => print!("{}", manifest.to_text()),
        },
        WeightsCommand::Random { seed, scale, out } => {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(CliError::Usage(format!("--scale must be positive, got {scale}")));
            }
            WeightStore::random(&manifest, seed, scale).save(&out)?;
        }
        WeightsCommand::Validate { path } => {
            let store = WeightStore::load(&path)?;
            store.validate(&manifest)?;
            println!("ok tensors={} parameters={}", store.len(), manifest.parameter_count());
        }
    }
    Ok(())
}
