//! The `hvn` command-line driver.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 I/O or file
//! format error, 3 non-finite loss during training.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{load_config, validate_config, ExperimentConfig};
use crate::data::{generate_synthetic, save_features, Dataset, SplitSpec, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::{
    export_embeddings, format_table, run_scenario_with, shot_ablation, train_for_scenario, write_reports_jsonl,
    EmbeddingSource, EvalReport, Scenario,
};
use crate::fewshot::{load_embedder, meta_train, save_embedder, Embedder, FeatureView, TrainHistory};
use crate::halluc::{load_gan, pretrain, save_gan, CmmGan, GanCurves};

pub const SEED_ENV: &str = "HVN_SEED";

pub const GAN_LOSSES: &str = "gan_losses.csv";
pub const HISTORY: &str = "history.csv";
pub const REPORTS: &str = "reports.jsonl";
pub const ABLATION: &str = "ablation.jsonl";
pub const RESOLVED_CONFIG: &str = "config.json";

#[derive(Debug, Parser)]
#[command(name = "hvn", version, about = "Few-shot audio-visual classification with hallucinated modalities")]
pub struct Cli {
    /// Worker threads for parallel episode evaluation.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic feature file.
    GenData {
        /// Synthetic spec as JSON; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// `.hvnf` or `.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the cross-modal generators on base classes.
    PretrainGan {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Meta-train the prototypical embedder on fused base-class features.
    MetaTrain {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Needed for joint GAN updates or support augmentation.
        #[arg(long)]
        gan: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every configured scenario on the novel classes.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gan: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrain and evaluate once per shot count.
    AblateShots {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Pretrained GAN; trained from scratch when absent.
        #[arg(long)]
        gan: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write novel-class embeddings per source as CSV.
    ExportEmbeddings {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gan: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of audio, visual, hallucinated_visual, hallucinated_audio.
        #[arg(long, value_delimiter = ',')]
        sources: Option<Vec<String>>,
    },
    /// GAN pretraining, meta-training, then every scenario.
    RunAll {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Format { .. } | Error::Csv(_) => 2,
        Error::Numerical { .. } => 3,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::config("--threads", "must be positive"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::GenData { spec, out } => gen_data(spec.as_deref(), &out),
        Command::PretrainGan { config, out } => {
            let cfg = config_from(config.as_deref())?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("gan"));
            let (ds, split) = data_and_split(&cfg)?;
            pretrain_phase(&cfg, &ds, &split, &out, &out.join(GAN_LOSSES)).map(drop)
        }
        Command::MetaTrain { config, gan, out } => {
            let cfg = config_from(config.as_deref())?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("model"));
            let (ds, split) = data_and_split(&cfg)?;
            let mut gan = gan.map(|g| open_gan(&g, &ds)).transpose()?;
            train_phase(&cfg, &ds, &split, gan.as_mut(), &out, &out.join(HISTORY)).map(drop)
        }
        Command::Eval { config, model, gan, out } => {
            let cfg = config_from(config.as_deref())?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let (ds, split) = data_and_split(&cfg)?;
            let embedder = open_embedder(&model, &ds)?;
            let gan = gan.map(|g| open_gan(&g, &ds)).transpose()?;
            eval_phase(&cfg, &ds, &split, &embedder, gan.as_ref(), &out).map(drop)
        }
        Command::AblateShots { config, gan, out } => {
            let cfg = config_from(config.as_deref())?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let (ds, split) = data_and_split(&cfg)?;
            let gan = match gan {
                Some(g) => open_gan(&g, &ds)?,
                None => pretrain_phase(&cfg, &ds, &split, &out.join("gan"), &out.join(GAN_LOSSES))?,
            };
            ablate(&cfg, &ds, &split, &gan, &out)
        }
        Command::ExportEmbeddings {
            config,
            model,
            gan,
            out,
            sources,
        } => {
            let cfg = config_from(config.as_deref())?;
            let (ds, split) = data_and_split(&cfg)?;
            let embedder = open_embedder(&model, &ds)?;
            let gan = gan.map(|g| open_gan(&g, &ds)).transpose()?;
            let sources = parse_sources(sources, gan.is_some())?;
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let hal = gan.as_ref().map(|g| cfg.hallucinator(g));
            let rows = export_embeddings(&embedder, hal.as_deref(), &ds, &split.novel_classes, &sources, &out)?;
            eprintln!("wrote {rows} rows to {}", out.display());
            Ok(())
        }
        Command::RunAll { config, out } => {
            let cfg = config_from(config.as_deref())?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            run_all(&cfg, &out).map(drop)
        }
    }
}

/// Reads the config (or defaults) and applies the seed override.
fn config_from(path: Option<&Path>) -> Result<ExperimentConfig> {
    let cfg = match path {
        Some(p) => load_config(p)?,
        None => validate_config("{}")?,
    };
    apply_seed_env(cfg)
}

fn apply_seed_env(cfg: ExperimentConfig) -> Result<ExperimentConfig> {
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            let seed = v
                .trim()
                .parse::<u64>()
                .map_err(|e| Error::config(SEED_ENV, format!("{v:?} is not a u64: {e}")))?;
            Ok(cfg.with_seed(seed))
        }
        Err(_) => Ok(cfg),
    }
}

fn gen_data(spec: Option<&Path>, out: &Path) -> Result<()> {
    let mut spec: SynthSpec = match spec {
        Some(p) => {
            let raw = std::fs::read_to_string(p)?;
            let de = &mut serde_json::Deserializer::from_str(&raw);
            serde_path_to_error::deserialize(de).map_err(|e| {
                let path = e.path().to_string();
                Error::config(path, e.into_inner().to_string())
            })?
        }
        None => SynthSpec::default(),
    };
    if let Ok(v) = std::env::var(SEED_ENV) {
        spec.seed = v
            .trim()
            .parse()
            .map_err(|e| Error::config(SEED_ENV, format!("{v:?} is not a u64: {e}")))?;
    }
    let ds = generate_synthetic(&spec)?;
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_features(&ds, out)?;
    eprintln!("wrote {} samples to {}", ds.len(), out.display());
    Ok(())
}

fn data_and_split(cfg: &ExperimentConfig) -> Result<(Dataset, SplitSpec)> {
    let ds = cfg.load_data()?;
    let split = cfg.split_for(&ds)?;
    Ok((ds, split))
}

fn open_gan(dir: &Path, ds: &Dataset) -> Result<CmmGan> {
    let (gan, _) = load_gan(dir)?;
    if gan.audio_dim() != ds.audio_dim() || gan.visual_dim() != ds.visual_dim() {
        return Err(Error::dims(
            "gan checkpoint vs dataset",
            (gan.audio_dim(), gan.visual_dim()),
            (ds.audio_dim(), ds.visual_dim()),
        ));
    }
    Ok(gan)
}

fn open_embedder(dir: &Path, ds: &Dataset) -> Result<Embedder> {
    let (embedder, manifest) = load_embedder(dir)?;
    let want = ds.audio_dim() + ds.visual_dim();
    if manifest.view != FeatureView::FusedReal || embedder.input_dim() != want {
        return Err(Error::config(
            "--model",
            format!(
                "expected a fused embedder of width {want}, found {:?} of width {}",
                manifest.view,
                embedder.input_dim()
            ),
        ));
    }
    Ok(embedder)
}

fn parse_sources(names: Option<Vec<String>>, have_gan: bool) -> Result<Vec<EmbeddingSource>> {
    let Some(names) = names else {
        return Ok(if have_gan {
            EmbeddingSource::ALL.to_vec()
        } else {
            vec![EmbeddingSource::Audio, EmbeddingSource::Visual]
        });
    };
    names
        .iter()
        .map(|n| {
            EmbeddingSource::ALL
                .into_iter()
                .find(|s| s.name() == n.trim())
                .ok_or_else(|| Error::config("--sources", format!("unknown source {n:?}")))
        })
        .collect()
}

fn pretrain_phase(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    split: &SplitSpec,
    dir: &Path,
    curves_path: &Path,
) -> Result<CmmGan> {
    eprintln!("pretraining GAN for {} epochs", cfg.gan.epochs);
    let mut gan = cfg.gan.build(ds.audio_dim(), ds.visual_dim())?;
    let curves = pretrain(&mut gan, ds, &split.base_classes, &cfg.gan)?;
    save_gan(&gan, dir, &cfg.gan)?;
    write_curves(&curves, curves_path)?;
    Ok(gan)
}

fn train_phase(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    split: &SplitSpec,
    gan: Option<&mut CmmGan>,
    dir: &Path,
    history_path: &Path,
) -> Result<Embedder> {
    eprintln!("meta-training for {} epochs", cfg.fsl.epochs);
    let mut embedder = cfg
        .fsl
        .build_embedder(FeatureView::FusedReal.input_dim(ds.audio_dim(), ds.visual_dim()))?;
    let joint = cfg.fsl.joint_gan;
    let history = match gan {
        Some(g) => {
            let h = meta_train(&mut embedder, ds, split, &cfg.fsl, Some(&mut *g))?;
            if joint {
                save_gan(g, dir.join("gan"), &cfg.gan)?;
            }
            h
        }
        None => meta_train(&mut embedder, ds, split, &cfg.fsl, None)?,
    };
    save_embedder(&embedder, dir, &cfg.fsl, FeatureView::FusedReal)?;
    write_history(&history, history_path)?;
    Ok(embedder)
}

fn eval_phase(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    split: &SplitSpec,
    embedder: &Embedder,
    gan: Option<&CmmGan>,
    out: &Path,
) -> Result<Vec<EvalReport>> {
    let ctx = cfg.fingerprint_context();
    let boxed = gan.map(|g| cfg.hallucinator(g));
    let hal = boxed.as_deref();
    let mut reports = Vec::with_capacity(cfg.scenarios.len());
    for sc in &cfg.scenarios {
        eprintln!("evaluating {}", sc.tag);
        let report = if sc.tag.is_cross() {
            let g = gan.ok_or_else(|| Error::config("gan", format!("scenario {} needs a trained generator", sc.tag)))?;
            let fsl = crate::fewshot::FslTrainConfig {
                seed: crate::rng::child_seed(cfg.fsl.seed, sc.tag.name()),
                ..cfg.fsl.clone()
            };
            let (e, history) = train_for_scenario(sc.tag, ds, split, &fsl, Some(&mut g.clone()))?;
            let dir = out.join(format!("model_{}", sc.tag));
            save_embedder(&e, &dir, &fsl, sc.tag.train_view())?;
            write_history(&history, &dir.join(HISTORY))?;
            run_scenario_with(&e, hal, ds, split, sc, &ctx)?
        } else {
            run_scenario_with(embedder, hal, ds, split, sc, &ctx)?
        };
        reports.push(report);
    }
    std::fs::create_dir_all(out)?;
    write_reports_jsonl(&reports, out.join(REPORTS))?;
    println!("{}", format_table(&reports));
    Ok(reports)
}

fn ablate(cfg: &ExperimentConfig, ds: &Dataset, split: &SplitSpec, gan: &CmmGan, out: &Path) -> Result<()> {
    let ab = &cfg.ablation;
    let factory = |shot: usize, seed: u64| -> Result<Embedder> {
        eprintln!("meta-training for shot {shot}");
        let fsl = crate::fewshot::FslTrainConfig {
            shot,
            seed,
            ..cfg.fsl.clone()
        };
        let mut e = fsl.build_embedder(FeatureView::FusedReal.input_dim(ds.audio_dim(), ds.visual_dim()))?;
        meta_train(&mut e, ds, split, &fsl, None)?;
        Ok(e)
    };
    // one embedder per shot, shared by every tag
    let mut cache: Vec<(usize, Embedder)> = Vec::new();
    let hal = cfg.hallucinator(gan);
    let mut reports = Vec::new();
    for &tag in &ab.tags {
        let base = Scenario {
            tag,
            episode_count: ab.episode_count,
            seed: cfg.scenarios.first().map_or(cfg.seed, |s| s.seed),
            way: cfg.fsl.way,
            query_per_class: cfg.fsl.query_per_class,
            ..Scenario::default()
        };
        let mut cached = |shot: usize, seed: u64| -> Result<Embedder> {
            if let Some((_, e)) = cache.iter().find(|(s, _)| *s == shot) {
                return Ok(e.clone());
            }
            let e = factory(shot, seed)?;
            cache.push((shot, e.clone()));
            Ok(e)
        };
        reports.extend(shot_ablation(&mut cached, Some(&*hal), ds, split, &ab.shots, &base)?);
    }
    std::fs::create_dir_all(out)?;
    write_reports_jsonl(&reports, out.join(ABLATION))?;
    println!("{}", format_table(&reports));
    Ok(())
}

/// The whole pipeline; artifacts land under `out`.
pub fn run_all(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<EvalReport>> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(RESOLVED_CONFIG), serde_json::to_string_pretty(cfg)?)?;
    let (ds, split) = data_and_split(cfg)?;
    let mut gan = pretrain_phase(cfg, &ds, &split, &out.join("gan"), &out.join(GAN_LOSSES))?;
    let embedder = train_phase(cfg, &ds, &split, Some(&mut gan), &out.join("model"), &out.join(HISTORY))?;
    eval_phase(cfg, &ds, &split, &embedder, Some(&gan), out)
}

fn write_curves(curves: &GanCurves, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    curves.write_csv(BufWriter::new(File::create(path)?))
}

fn write_history(history: &TrainHistory, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    history.write_csv(BufWriter::new(File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&Error::config("x", "y")), 1);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), 2);
        assert_eq!(exit_code(&Error::format(3, "bad")), 2);
        let num = Error::Numerical {
            phase: "meta-training",
            what: "loss".into(),
            epoch: 1,
            step: 2,
        };
        assert_eq!(exit_code(&num), 3);
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(run(["hvn", "run-all", "--bogus"]), 1);
        assert_eq!(run(["hvn"]), 1);
        assert_eq!(run(["hvn", "--help"]), 0);
    }

    #[test]
    fn sources_parse_by_name() {
        let s = parse_sources(Some(vec!["audio".into(), "hallucinated_visual".into()]), true).unwrap();
        assert_eq!(s, [EmbeddingSource::Audio, EmbeddingSource::HallucinatedVisual]);
        assert!(parse_sources(Some(vec!["smell".into()]), true).is_err());
        assert_eq!(parse_sources(None, false).unwrap().len(), 2);
    }
}
