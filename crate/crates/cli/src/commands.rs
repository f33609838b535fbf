use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use logoforge_core::corpus::{
    generate_synthetic_corpus, load_char_embeddings, load_textlogo3k, split_dataset, FontRegistry, LoadOptions,
    LogoRecord, SynthConfig, Vocabulary, DEFAULT_FONT,
};
use logoforge_core::evaluation::{baseline_layouts, evaluate_layouts, sample_layouts, EvalReport, ProxyBackbone, Rule};
use logoforge_core::layout::{LayoutFile, CANVAS_SIZE};
use logoforge_core::raster::V_MAX;
use logoforge_core::sampling;
use logoforge_core::training::{self, Checkpoint, TrainConfig};
use logoforge_service::AppState;

use crate::{ComposeArgs, EvalArgs, SampleArgs, ServeArgs, TrainArgs};

const DEFAULT_TEST_FRACTION: f64 = 0.2;
const CANVAS: (usize, usize) = (CANVAS_SIZE, CANVAS_SIZE);

/// Bad invocation; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Data and output settings that live beside the training config in a
/// config file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct RunSettings {
    data: Option<PathBuf>,
    synthetic: Option<usize>,
    test_fraction: Option<f64>,
    out: Option<PathBuf>,
    embeddings: Option<PathBuf>,
}

const RUN_KEYS: [&str; 5] = ["data", "synthetic", "test_fraction", "out", "embeddings"];

/// The resolved invocation, echoed to `run.json` beside the outputs.
#[derive(Serialize)]
struct RunEcho<'a> {
    #[serde(flatten)]
    settings: &'a RunSettings,
    train: &'a TrainConfig,
    resume: Option<&'a Path>,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

/// Defaults, then the config file, then flags.
fn resolve_train(args: &TrainArgs) -> Result<(TrainConfig, RunSettings)> {
    let base = if args.toy { TrainConfig::toy() } else { TrainConfig::default() };
    let mut value = serde_json::to_value(&base).expect("config serializes");
    let mut settings = RunSettings::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut file: Value =
            serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?;
        let Some(obj) = file.as_object_mut() else {
            return Err(usage(format!("config {} must be a JSON object", path.display())));
        };
        let mut run = serde_json::Map::new();
        for key in RUN_KEYS {
            if let Some(v) = obj.remove(key) {
                run.insert(key.to_string(), v);
            }
        }
        settings = serde_json::from_value(Value::Object(run)).map_err(|e| usage(format!("invalid config: {e}")))?;
        merge(&mut value, file);
    }
    let mut cfg: TrainConfig = serde_json::from_value(value).map_err(|e| usage(format!("invalid config: {e}")))?;

    let d = &args.data;
    if d.data.is_some() || d.synthetic.is_some() {
        settings.data = d.data.clone();
        settings.synthetic = d.synthetic;
    }
    settings.test_fraction = d.test_fraction.or(settings.test_fraction);
    settings.out = args.out.clone().or(settings.out);
    settings.embeddings = args.embeddings.clone().or(settings.embeddings);
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lambda_ol {
        cfg.lambda_ol = v;
    }
    if let Some(v) = args.lr {
        cfg.lr_g = v;
        cfg.lr_d = v;
    }
    for a in &args.ablation {
        cfg.set_ablation(a).map_err(|e| usage(e.to_string()))?;
    }
    cfg.check().map_err(|e| usage(e.to_string()))?;
    Ok((cfg, settings))
}

fn load_records(data: Option<&Path>, synthetic: Option<usize>, strict: bool, seed: u64) -> Result<Vec<LogoRecord>> {
    match (data, synthetic) {
        (Some(dir), _) => {
            let opts = LoadOptions {
                strict,
                ..Default::default()
            };
            Ok(load_textlogo3k(dir, &opts)?)
        }
        (None, Some(n)) => {
            let cfg = SynthConfig {
                records: n,
                ..Default::default()
            };
            Ok(generate_synthetic_corpus(&cfg, seed)?)
        }
        (None, None) => Err(usage("no data source: pass --data <dir> or --synthetic <n>")),
    }
}

fn split(records: &[LogoRecord], fraction: Option<f64>, seed: u64) -> Result<(Vec<LogoRecord>, Vec<LogoRecord>)> {
    let f = fraction.unwrap_or(DEFAULT_TEST_FRACTION);
    if !(0.0..1.0).contains(&f) {
        return Err(usage(format!("test fraction must lie in [0, 1), got {f}")));
    }
    Ok(split_dataset(records, f, seed)?)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let (mut cfg, settings) = resolve_train(&args)?;
    let resume = args
        .resume
        .as_deref()
        .map(Checkpoint::load)
        .transpose()
        .context("loading resume checkpoint")?;
    if let Some(ckpt) = &resume {
        // The architecture and seed come from the checkpoint.
        let epochs = cfg.epochs;
        cfg = ckpt.config.clone();
        cfg.epochs = epochs;
    }
    let out = settings.out.clone().ok_or_else(|| usage("missing --out directory"))?;
    let records = load_records(settings.data.as_deref(), settings.synthetic, args.data.strict, cfg.seed)?;
    if records.is_empty() {
        bail!("the dataset has no valid records");
    }
    let (train_set, test_set) = split(&records, settings.test_fraction, cfg.seed)?;
    let embeddings = match &settings.embeddings {
        Some(path) => {
            let vocab = Vocabulary::from_records(&train_set);
            Some(load_char_embeddings(Some(path), &vocab, cfg.model.d_e, cfg.seed)?)
        }
        None => None,
    };
    create_dir(&out)?;
    let echo = RunEcho {
        settings: &settings,
        train: &cfg,
        resume: args.resume.as_deref(),
    };
    let echo = serde_json::to_string_pretty(&echo).expect("echo serializes");
    write(&out.join("run.json"), &echo)?;
    log::info!("resolved configuration:\n{echo}");
    log::info!("{} training and {} held-out records", train_set.len(), test_set.len());

    let summary = training::train(train_set, &test_set, cfg, embeddings, &out, resume.as_ref())?;
    println!(
        "trained to step {} ({} epochs this run); last checkpoint {}",
        summary.final_checkpoint.step,
        summary.epochs.len(),
        summary.last_checkpoint.display()
    );
    Ok(())
}

fn fonts(font_dir: Option<&Path>) -> Result<FontRegistry> {
    let mut fonts = FontRegistry::builtin();
    if let Some(dir) = font_dir {
        let n = fonts.add_dir(dir)?;
        log::info!("loaded {n} fonts from {}", dir.display());
    }
    Ok(fonts)
}

fn prepare(fonts: &FontRegistry, font: Option<&str>, text: &str) -> Result<sampling::PreparedText> {
    sampling::prepare_text(fonts, font.unwrap_or(DEFAULT_FONT), text).map_err(|e| usage(e.to_string()))
}

pub fn sample(args: SampleArgs) -> Result<()> {
    let fonts = fonts(args.font_dir.as_deref())?;
    let prepared = prepare(&fonts, args.font.as_deref(), &args.text)?;
    if args.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let model = Checkpoint::load(&args.ckpt)?.to_model()?;
    let candidates = sampling::sample_candidates(&model, &prepared, args.k, args.seed, &[])?;
    create_dir(&args.out)?;
    for (j, c) in candidates.iter().enumerate() {
        write(&args.out.join(format!("layout_{j}.json")), c.layout.to_json(CANVAS))?;
        write(&args.out.join(format!("logo_{j}.png")), sampling::png_bytes(&c.logo))?;
        let path = args.out.join(format!("overlay_{j}.png"));
        sampling::overlay(&c.logo, &c.layout)
            .save(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        println!("candidate {j}: score {:.4} -> {}", c.score(), args.out.join(format!("layout_{j}.json")).display());
    }
    Ok(())
}

fn ablation_names(cfg: &TrainConfig) -> Vec<&'static str> {
    let mut out = Vec::new();
    if cfg.model.ablation.no_text {
        out.push("no_text");
    }
    if cfg.model.ablation.no_img {
        out.push("no_img");
    }
    if cfg.no_seq_dis {
        out.push("no_seq_dis");
    }
    if cfg.no_img_dis {
        out.push("no_img_dis");
    }
    out
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let records = load_records(args.data.data.as_deref(), args.data.synthetic, args.data.strict, args.seed)?;
    let (_, test) = split(&records, args.data.test_fraction, args.seed)?;
    if test.len() < 2 {
        bail!("the held-out split has {} records; at least 2 are needed", test.len());
    }
    let (method, layouts) = match (&args.baseline, &args.ckpt) {
        (Some(rule), _) => {
            let rule: Rule = rule.parse().map_err(|e: logoforge_core::evaluation::EvalError| usage(e.to_string()))?;
            (format!("rule-{rule}"), baseline_layouts(&test, rule, args.seed)?)
        }
        (None, Some(path)) => {
            let ckpt = Checkpoint::load(path)?;
            let trained = ablation_names(&ckpt.config);
            let label = match &args.ablation {
                Some(a) => {
                    if !trained.contains(&a.as_str()) {
                        return Err(usage(format!(
                            "checkpoint was not trained with ablation '{a}' (trained with: {})",
                            if trained.is_empty() { "none".to_string() } else { trained.join(", ") }
                        )));
                    }
                    format!("model ({a})")
                }
                None if trained.is_empty() => "model".to_string(),
                None => format!("model ({})", trained.join(", ")),
            };
            let model = ckpt.to_model()?;
            (label, sample_layouts(&model, &test, args.seed)?)
        }
        (None, None) => return Err(usage("pass --ckpt or --baseline")),
    };
    let backbone = ProxyBackbone::from_env()?;
    let row = evaluate_layouts(&method, &backbone, &test, &layouts)?;
    let report = EvalReport { rows: vec![row] };
    create_dir(&args.out)?;
    write(&args.out.join("report.csv"), report.to_csv())?;
    write(&args.out.join("report.md"), report.to_markdown())?;
    print!("{}", report.to_markdown());
    Ok(())
}

pub fn compose(args: ComposeArgs) -> Result<()> {
    let fonts = fonts(args.font_dir.as_deref())?;
    let prepared = prepare(&fonts, args.font.as_deref(), &args.text)?;
    let text = std::fs::read_to_string(&args.layout).with_context(|| format!("reading {}", args.layout.display()))?;
    let file = LayoutFile::from_json(&text).map_err(|e| usage(format!("{}: {e}", args.layout.display())))?;
    if file.canvas != [CANVAS.0, CANVAS.1] {
        return Err(usage(format!("layout canvas must be {}x{}", CANVAS.0, CANVAS.1)));
    }
    let layout = file.to_sequence();
    if layout.len() != prepared.units.len() {
        return Err(usage(format!(
            "layout has {} boxes but the text has {} glyph units",
            layout.len(),
            prepared.units.len()
        )));
    }
    layout.check_range(CANVAS).map_err(|e| usage(e.to_string()))?;
    let rasters = prepared.rasters();
    let logo = sampling::compose(&rasters, &layout)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    logo.save_png(&args.out, V_MAX)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("overlap {} px -> {}", sampling::layout_overlap(&rasters, &layout), args.out.display());
    Ok(())
}

pub fn serve(args: ServeArgs) -> Result<()> {
    let fonts = fonts(args.font_dir.as_deref())?;
    let model = match &args.ckpt {
        Some(path) => Some(Checkpoint::load(path)?.to_model()?),
        None => {
            log::warn!("no checkpoint given; /api/sample will answer 503");
            None
        }
    };
    let state = AppState::new(model, fonts);
    let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    rt.block_on(logoforge_service::serve(args.addr, state))
        .with_context(|| format!("serving on {}", args.addr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_overrides_nested_keys() {
        let mut base = json!({"a": 1, "model": {"d_z": 4, "d_c": 8}});
        merge(&mut base, json!({"model": {"d_z": 16}, "b": true}));
        assert_eq!(base, json!({"a": 1, "b": true, "model": {"d_z": 16, "d_c": 8}}));
    }
}
