use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use phaseforge::config::RunConfig;
use phaseforge::dataset::{build_dataset, frequency_tag, load_set, Dataset, Manifest, Split};
use phaseforge::fringe::{height_from_phase, wrapped_phase, AbsolutePhaseMap, FrequencyLadder, FringeImage, PhaseMap};
use phaseforge::metrics::{evaluate_fringes, evaluate_phase, write_report, Metrics, Report};
use phaseforge::nn::{build_network, train, Network, Variant};
use phaseforge::pipeline::{
    end_to_end_retrieve, load_model, run_classical_e2e, save_model, score_retrieval, NetworkTransformer, Retrieval,
    SceneResult,
};
use phaseforge::raster::{self, FloatRaster};
use phaseforge::Error;
use serde_json::{json, Value};

use crate::{Cli, Command, Global};

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Library(#[from] Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Library(e) if e.is_numeric() => 3,
            Failure::Library(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Library(Error::InvalidInput(_)) => "invalid_input",
            Failure::Library(Error::Shape(_)) => "shape",
            Failure::Library(Error::Numeric(_)) => "numeric",
            Failure::Library(Error::Format { .. }) => "format",
            Failure::Library(Error::Checksum(_)) => "checksum",
            Failure::Library(Error::Fingerprint { .. }) => "fingerprint",
            Failure::Library(Error::Io { .. }) => "io",
            Failure::Library(Error::Json(_)) => "json",
        }
    }

    /// Prints the error as one JSON line on stderr.
    pub fn report(&self) -> ExitCode {
        let code = self.exit_code();
        let body = json!({"error": {"kind": self.kind(), "message": self.to_string(), "exit_code": code}});
        eprintln!("{body}");
        ExitCode::from(code)
    }
}

type Outcome = Result<Value, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn required<'a, T>(value: &'a Option<T>, flag: &str, command: &str) -> Result<&'a T, Failure> {
    value.as_ref().ok_or_else(|| usage(format!("{command} needs --{flag}")))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Config file (or defaults) with command-line overrides applied.
fn resolve_config(g: &Global) -> Result<RunConfig, Failure> {
    let mut config = match &g.config {
        Some(path) => RunConfig::read(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        config.seed = seed;
        config.train.seed = seed;
    }
    if let Some(kind) = g.variant {
        config.network.variant = kind;
    }
    if let Some(ladder) = &g.ladder {
        config.ladder = FrequencyLadder::new(ladder.clone())?;
    }
    if let Some(steps) = g.steps {
        config.phase_steps = steps;
    }
    if let Some(freq) = g.freq {
        config.network.frequency = Some(freq);
    }
    if let Some(data) = &g.data {
        config.dataset.path = Some(data.clone());
    }
    config.validate()?;
    Ok(config)
}

pub fn dispatch(cli: &Cli) -> Outcome {
    let g = &cli.global;
    if g.input.len() > 2 {
        return Err(usage(format!("--input may be given at most twice, got {}", g.input.len())));
    }
    let config = resolve_config(g)?;
    match cli.command {
        Command::GenData => gen_data(g, &config),
        Command::Train => train_cmd(g, &config),
        Command::Infer => infer_cmd(g),
        Command::Phase => phase_cmd(g, &config),
        Command::Unwrap => unwrap_cmd(g, &config),
        Command::Height => height_cmd(g, &config),
        Command::Eval => eval_cmd(g, &config),
        Command::RunE2e => run_e2e(g, &config),
        Command::ShowConfig => show_config(g, &config),
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e }.into())
}

fn write_raster(dir: &Path, stem: &str, width: usize, height: usize, data: &[f64]) -> Result<Value, Failure> {
    let raster_path = dir.join(format!("{stem}.f32r"));
    let vis_path = dir.join(format!("{stem}.pgm"));
    FloatRaster::from_f64(width, height, data).write(&raster_path)?;
    let (pixels, range) = raster::visualize(data);
    raster::write_bytes(&vis_path, &raster::encode_pgm(width, height, &pixels))?;
    Ok(json!({"raster": path_str(&raster_path), "visualization": path_str(&vis_path), "range": [range.0, range.1]}))
}

fn dataset_root(config: &RunConfig, command: &str) -> Result<PathBuf, Failure> {
    config
        .dataset
        .path
        .clone()
        .ok_or_else(|| usage(format!("{command} needs --data or dataset.path in the config")))
}

fn open_dataset(root: &Path) -> Result<Dataset, Failure> {
    let dataset = Dataset::open(root)?;
    dataset.verify()?;
    Ok(dataset)
}

fn gen_data(g: &Global, config: &RunConfig) -> Outcome {
    let out = required(&g.out, "out", "gen-data")?;
    let variant = config.variant()?;
    let spec = config.dataset_spec(&variant);
    let manifest = build_dataset(&spec, out)?;
    Ok(json!({
        "manifest": path_str(&out.join("manifest.json")),
        "content_checksum": manifest.content_checksum,
        "frequencies": spec.all_frequencies(),
        "surfaces": {
            "train": manifest.splits.train.count,
            "validation": manifest.splits.validation.count,
            "test": manifest.splits.test.count,
        },
    }))
}

fn train_cmd(g: &Global, config: &RunConfig) -> Outcome {
    let out = required(&g.out, "out", "train")?;
    let dataset = open_dataset(&dataset_root(config, "train")?)?;
    let variant = config.variant()?;
    dataset.check_variant(&variant)?;
    let mut network = match &g.weights {
        Some(path) => {
            let (network, stored, _) = load_model(path)?;
            if stored != variant {
                return Err(Error::InvalidInput(format!(
                    "checkpoint {} was trained for {:?}, config selects {:?}",
                    path.display(),
                    stored.kind,
                    variant.kind
                ))
                .into());
            }
            network
        }
        None => {
            let spec = build_network(&variant, config.network.width_multiplier, config.train.normalization_enabled)?;
            Network::new(spec, config.train.seed)?
        }
    };
    let train_set = dataset.samples(Split::Train, &variant)?;
    let validation = dataset.samples(Split::Validation, &variant)?;

    create_dir(out)?;
    raster::write_bytes(&out.join("config.json"), config.to_json().as_bytes())?;
    let log_path = out.join("train_log.jsonl");
    let log_file = File::create(&log_path).map_err(|e| Error::Io { path: log_path.clone(), source: e })?;
    let mut log = BufWriter::new(log_file);
    let every = config.train.checkpoint_every;
    let mut checkpoints = Vec::new();
    let records = train(&mut network, &train_set, &validation, &config.train, |record, net, adam| {
        let line = serde_json::to_string(record)?;
        writeln!(log, "{line}")
            .and_then(|_| log.flush())
            .map_err(|e| Error::Io { path: log_path.clone(), source: e })?;
        if every > 0 && (record.epoch + 1) % every == 0 {
            let path = out.join(format!("checkpoint_e{:04}.fptw", record.epoch + 1));
            save_model(&path, net, &variant, Some(adam))?;
            checkpoints.push(path_str(&path));
        }
        Ok(())
    })?;
    let weights = out.join("weights.fptw");
    save_model(&weights, &network, &variant, None)?;
    let last = records.last();
    Ok(json!({
        "weights": path_str(&weights),
        "weights_sha256": raster::file_sha256(&weights)?,
        "log": path_str(&log_path),
        "checkpoints": checkpoints,
        "epochs": records.len(),
        "final_train_loss": last.map(|r| r.train_loss),
        "final_val_loss": last.and_then(|r| r.val_loss),
    }))
}

fn read_inputs(g: &Global, command: &str) -> Result<Vec<FringeImage>, Failure> {
    if g.input.is_empty() {
        return Err(usage(format!("{command} needs --input")));
    }
    Ok(g.input.iter().map(|p| raster::read_pgm(p)).collect::<Result<Vec<_>, _>>()?)
}

fn infer_cmd(g: &Global) -> Outcome {
    let weights = required(&g.weights, "weights", "infer")?;
    let out = required(&g.out, "out", "infer")?;
    let inputs = read_inputs(g, "infer")?;
    let (network, variant, _) = load_model(weights)?;
    let transformer = NetworkTransformer::new(network, variant)?;
    let sets = phaseforge::nn::infer(&transformer.network, &transformer.variant, &inputs)?;
    let mut written = Vec::new();
    for set in &sets {
        let dir = out.join(frequency_tag(set.frequency()));
        create_dir(&dir)?;
        for (k, image) in set.images().iter().enumerate() {
            raster::write_pgm(&dir.join(format!("n{k}.pgm")), image)?;
        }
        written.push(json!({"frequency": set.frequency(), "dir": path_str(&dir), "phase_steps": set.phase_steps()}));
    }
    Ok(json!({"variant": transformer.variant.kind, "outputs": written}))
}

fn single_input<'a>(g: &'a Global, command: &str) -> Result<&'a PathBuf, Failure> {
    match g.input.as_slice() {
        [one] => Ok(one),
        _ => Err(usage(format!("{command} needs exactly one --input"))),
    }
}

fn phase_cmd(g: &Global, config: &RunConfig) -> Outcome {
    let dir = single_input(g, "phase")?;
    let freq = *required(&g.freq, "freq", "phase")?;
    let out = required(&g.out, "out", "phase")?;
    let set = load_set(dir, freq, config.phase_steps)?;
    let map = wrapped_phase(&set, config.modulation_threshold);
    create_dir(out)?;
    let files = write_raster(out, "phase", map.width, map.height, &map.phase)?;
    Ok(json!({"frequency": freq, "valid_pixel_count": map.valid_count(), "phase": files}))
}

fn unwrap_cmd(g: &Global, config: &RunConfig) -> Outcome {
    let dir = single_input(g, "unwrap")?;
    let out = required(&g.out, "out", "unwrap")?;
    let sets = config
        .ladder
        .frequencies()
        .iter()
        .map(|f| load_set(&dir.join(frequency_tag(*f)), *f, config.phase_steps))
        .collect::<Result<Vec<_>, _>>()?;
    let r = phaseforge::pipeline::classical_retrieve(&sets, &config.render, config.modulation_threshold)?;
    let abs = r.output();
    let phase: Vec<f64> = abs.phase.iter().zip(&abs.valid).map(|(p, ok)| if *ok { *p } else { f64::NAN }).collect();
    create_dir(out)?;
    let files = write_raster(out, "abs_phase", abs.width, abs.height, &phase)?;
    Ok(json!({
        "frequency": abs.frequency,
        "ladder": config.ladder.frequencies(),
        "valid_pixel_count": abs.valid.iter().filter(|v| **v).count(),
        "abs_phase": files,
    }))
}

fn read_absolute(path: &Path, frequency: f64) -> Result<AbsolutePhaseMap, Failure> {
    let r = FloatRaster::read(path)?;
    let phase = r.to_f64();
    let valid: Vec<bool> = phase.iter().map(|p| p.is_finite()).collect();
    let wrapped = PhaseMap::from_phase(r.width, r.height, frequency, phase.clone())?;
    let order = phase
        .iter()
        .zip(&wrapped.phase)
        .map(|(p, w)| if p.is_finite() { ((p - w) / std::f64::consts::TAU).round() as i64 } else { 0 })
        .collect();
    Ok(AbsolutePhaseMap { width: r.width, height: r.height, frequency, phase, order, valid })
}

fn height_cmd(g: &Global, config: &RunConfig) -> Outcome {
    let input = single_input(g, "height")?;
    let out = required(&g.out, "out", "height")?;
    let freq = g.freq.unwrap_or(config.ladder.highest());
    let abs = read_absolute(input, freq)?;
    let surface = height_from_phase(&abs, &config.render)?;
    create_dir(out)?;
    let files = write_raster(out, "height", surface.width(), surface.height(), surface.depth())?;
    let (lo, hi) = surface.depth_range();
    Ok(json!({"frequency": freq, "depth_range": [lo, hi], "height": files}))
}

fn report_summary(path: &Path, report: &Report) -> Value {
    let entries: Vec<Value> = report
        .entries
        .iter()
        .map(|e| {
            json!({
                "label": e.label,
                "mean_abs_phase_error": e.mean_abs_phase_error,
                "max_abs_phase_error": e.max_abs_phase_error,
                "mean_grayscale_error": e.mean_grayscale_error,
                "order_error_rate": e.order_error_rate,
            })
        })
        .collect();
    let mean = if report.entries.is_empty() {
        0.0
    } else {
        report.entries.iter().map(|e| e.mean_abs_phase_error).sum::<f64>() / report.entries.len() as f64
    };
    json!({"report": path_str(path), "mean_abs_phase_error": mean, "entries": entries})
}

fn eval_cmd(g: &Global, config: &RunConfig) -> Outcome {
    let out = required(&g.out, "out", "eval")?;
    let metrics = if let Some(weights) = &g.weights {
        if !g.input.is_empty() {
            return Err(usage("eval takes either --weights with a dataset or two --input paths"));
        }
        evaluate_network(weights, &dataset_root(config, "eval")?, config)?
    } else {
        let [pred, gt] = g.input.as_slice() else {
            return Err(usage("eval needs two --input paths (prediction, ground truth) or --weights"));
        };
        vec![evaluate_pair(pred, gt, g, config)?]
    };
    let (path, report) = write_report(&metrics, out)?;
    Ok(report_summary(&path, &report))
}

fn evaluate_pair(pred: &Path, gt: &Path, g: &Global, config: &RunConfig) -> Result<Metrics, Failure> {
    match (pred.is_dir(), gt.is_dir()) {
        (true, true) => {
            let freq = *required(&g.freq, "freq", "eval")?;
            let p = load_set(pred, freq, config.phase_steps)?;
            let t = load_set(gt, freq, config.phase_steps)?;
            Ok(evaluate_fringes(&frequency_tag(freq), &p, &t, config.modulation_threshold)?)
        }
        (false, false) => {
            let read = |path: &Path| -> Result<PhaseMap, Failure> {
                let r = FloatRaster::read(path)?;
                Ok(PhaseMap::from_phase(r.width, r.height, g.freq.unwrap_or(1.0), r.to_f64())?)
            };
            Ok(evaluate_phase("phase", &read(pred)?, &read(gt)?)?)
        }
        _ => Err(Error::InvalidInput("eval inputs must both be fringe directories or both phase rasters".into()).into()),
    }
}

/// Scores every output stack of a network on the dataset's test split.
fn evaluate_network(weights: &Path, root: &Path, config: &RunConfig) -> Result<Vec<Metrics>, Failure> {
    let (network, variant, _) = load_model(weights)?;
    let dataset = open_dataset(root)?;
    dataset.check_variant(&variant)?;
    let mut metrics = Vec::new();
    for i in 0..dataset.count(Split::Test) {
        let scene = dataset.load_scene(Split::Test, i)?;
        let inputs = variant_inputs(&scene, &variant)?;
        let predicted = phaseforge::nn::infer(&network, &variant, &inputs)?;
        for set in &predicted {
            let truth = scene
                .set(set.frequency())
                .ok_or_else(|| Error::InvalidInput(format!("scene {} lacks frequency {}", scene.id, set.frequency())))?;
            let label = format!("{}/{}", scene.id, frequency_tag(set.frequency()));
            metrics.push(evaluate_fringes(&label, set, truth, config.modulation_threshold)?);
        }
    }
    Ok(metrics)
}

fn variant_inputs(scene: &phaseforge::dataset::Scene, variant: &Variant) -> Result<Vec<FringeImage>, Failure> {
    variant
        .input_frequencies
        .iter()
        .map(|f| {
            scene
                .set(*f)
                .map(|s| s.images()[0].clone())
                .ok_or_else(|| Error::InvalidInput(format!("scene {} lacks input frequency {f}", scene.id)).into())
        })
        .collect()
}

fn write_e2e(out: &Path, results: &[(SceneResult, Metrics, Retrieval)]) -> Outcome {
    let metrics: Vec<Metrics> = results.iter().map(|(_, m, _)| m.clone()).collect();
    let (path, report) = write_report(&metrics, out)?;
    for (score, _, r) in results {
        let h = &r.height;
        write_raster(out, &format!("{}_height", score.label), h.width(), h.height(), h.depth())?;
    }
    let scenes: Vec<&SceneResult> = results.iter().map(|(s, _, _)| s).collect();
    let max = scenes.iter().map(|s| s.max_abs_height_error).fold(0.0, f64::max);
    raster::write_bytes(&out.join("e2e.json"), &serde_json::to_vec_pretty(&scenes).map_err(Error::from)?)?;
    let mut summary = report_summary(&path, &report);
    summary["max_abs_height_error"] = json!(max);
    summary["scenes"] = serde_json::to_value(&scenes).map_err(Error::from)?;
    Ok(summary)
}

fn run_e2e(g: &Global, config: &RunConfig) -> Outcome {
    let out = required(&g.out, "out", "run-e2e")?;
    if g.classical {
        let results = run_classical_e2e(config)?;
        return write_e2e(out, &results);
    }
    let calc = required(&g.weights, "weights", "run-e2e")?;
    let unwrap = required(&g.weights2, "weights2", "run-e2e")?;
    let (net_c, var_c, _) = load_model(calc)?;
    let (net_u, var_u, _) = load_model(unwrap)?;
    let c = NetworkTransformer::new(net_c, var_c)?;
    let u = NetworkTransformer::new(net_u, var_u)?;
    if !g.input.is_empty() {
        let inputs = read_inputs(g, "run-e2e")?;
        let r = end_to_end_retrieve(&inputs, &c, &u, &config.ladder, &config.render, config.modulation_threshold)?;
        create_dir(out)?;
        let abs = r.output();
        let phase: Vec<f64> =
            abs.phase.iter().zip(&abs.valid).map(|(p, ok)| if *ok { *p } else { f64::NAN }).collect();
        let abs_files = write_raster(out, "abs_phase", abs.width, abs.height, &phase)?;
        let h = &r.height;
        let height_files = write_raster(out, "height", h.width(), h.height(), h.depth())?;
        return Ok(json!({"abs_phase": abs_files, "height": height_files}));
    }
    let dataset = open_dataset(&dataset_root(config, "run-e2e")?)?;
    let render = dataset.manifest.spec.render;
    dataset.check_variant(&u.variant)?;
    let mut results = Vec::new();
    for i in 0..dataset.count(Split::Test) {
        let scene = dataset.load_scene(Split::Test, i)?;
        let inputs = variant_inputs(&scene, &u.variant)?;
        let r = end_to_end_retrieve(&inputs, &c, &u, &config.ladder, &render, config.modulation_threshold)?;
        let (score, metrics) = score_retrieval(&scene.id, &r, &scene.surface, &render)?;
        results.push((score, metrics, r));
    }
    write_e2e(out, &results)
}

/// Resolved config, or a normalized report/manifest/config file given with `--input`.
fn show_config(g: &Global, config: &RunConfig) -> Outcome {
    let Some(path) = g.input.first() else {
        return Ok(serde_json::to_value(config).map_err(Error::from)?);
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    if let Ok(c) = serde_json::from_str::<RunConfig>(&text) {
        c.validate()?;
        return Ok(serde_json::to_value(c).map_err(Error::from)?);
    }
    if let Ok(r) = serde_json::from_str::<Report>(&text) {
        return Ok(serde_json::to_value(r).map_err(Error::from)?);
    }
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.clone(),
        reason: format!("not a config, report or manifest: {e}"),
    })?;
    Ok(serde_json::to_value(m).map_err(Error::from)?)
}
