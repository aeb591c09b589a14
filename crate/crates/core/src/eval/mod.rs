//! Episodic meta-testing on novel classes.
//!
//! A [`Scenario`] fixes which features the embedder sees at test time (and,
//! for the two cross scenarios, which it was trained on). [`run_scenario`]
//! samples episodes from the novel classes, classifies queries against
//! support prototypes and reports the mean episode accuracy with its
//! standard error.

mod export;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use export::{export_embeddings, read_embeddings_csv, EmbeddingRow, EmbeddingSource};

use crate::data::{check_feasible, sample_episode, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::fewshot::{
    compute_prototypes, meta_train_on, predict, Embedder, EpisodeBatch, FeatureView, FslTrainConfig, TrainHistory,
};
use crate::halluc::{CmmGan, Hallucinator};
use crate::numerics::Tensor2;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioTag {
    FusionReal,
    AudioPlusHalVisual,
    VisualPlusHalAudio,
    AudioOnly,
    VisualOnly,
    /// Trained on real visual features, tested on `G1(A)`.
    TrainRealTestHal,
    /// Trained and tested on `G1(A)`.
    TrainHalTestHal,
}

impl ScenarioTag {
    pub const ALL: [ScenarioTag; 7] = [
        ScenarioTag::FusionReal,
        ScenarioTag::AudioPlusHalVisual,
        ScenarioTag::VisualPlusHalAudio,
        ScenarioTag::AudioOnly,
        ScenarioTag::VisualOnly,
        ScenarioTag::TrainRealTestHal,
        ScenarioTag::TrainHalTestHal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioTag::FusionReal => "fusion_real",
            ScenarioTag::AudioPlusHalVisual => "audio_plus_hal_visual",
            ScenarioTag::VisualPlusHalAudio => "visual_plus_hal_audio",
            ScenarioTag::AudioOnly => "audio_only",
            ScenarioTag::VisualOnly => "visual_only",
            ScenarioTag::TrainRealTestHal => "train_real_test_hal",
            ScenarioTag::TrainHalTestHal => "train_hal_test_hal",
        }
    }

    /// Features of novel support and query rows.
    pub fn test_view(self) -> FeatureView {
        match self {
            ScenarioTag::FusionReal => FeatureView::FusedReal,
            ScenarioTag::AudioPlusHalVisual => FeatureView::AudioPlusHalVisual,
            ScenarioTag::VisualPlusHalAudio => FeatureView::VisualPlusHalAudio,
            ScenarioTag::AudioOnly => FeatureView::AudioOnly,
            ScenarioTag::VisualOnly => FeatureView::VisualOnly,
            ScenarioTag::TrainRealTestHal | ScenarioTag::TrainHalTestHal => FeatureView::HalVisual,
        }
    }

    /// Features the embedder must have been meta-trained on.
    pub fn train_view(self) -> FeatureView {
        match self {
            ScenarioTag::TrainRealTestHal => FeatureView::Visual,
            ScenarioTag::TrainHalTestHal => FeatureView::HalVisual,
            _ => FeatureView::FusedReal,
        }
    }

    /// Whether this tag needs its own unimodal-width embedder.
    pub fn is_cross(self) -> bool {
        self.train_view() != FeatureView::FusedReal
    }

    pub fn needs_gan(self) -> bool {
        self.test_view().needs_hallucinator() || self.train_view().needs_hallucinator()
    }
}

impl std::fmt::Display for ScenarioTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub tag: ScenarioTag,
    pub way: usize,
    pub shot: usize,
    pub query_per_class: usize,
    pub episode_count: usize,
    /// Stochastic passes averaged per prediction; 1 is a single eval-mode pass.
    pub n_times: usize,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            tag: ScenarioTag::FusionReal,
            way: 5,
            shot: 1,
            query_per_class: 5,
            episode_count: 600,
            n_times: 1,
            seed: 0,
        }
    }
}

impl Scenario {
    pub fn new(tag: ScenarioTag) -> Self {
        Self {
            tag,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("way", self.way),
            ("shot", self.shot),
            ("query_per_class", self.query_per_class),
            ("episode_count", self.episode_count),
            ("n_times", self.n_times),
        ] {
            if v == 0 {
                return Err(Error::config(format!("scenario.{name}"), "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: Scenario,
    pub mean_accuracy: f64,
    /// Standard error of the per-episode accuracies.
    pub dispersion: f64,
    pub episode_count: usize,
    pub fingerprint: String,
}

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn fingerprint<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(&serde_json::to_value(value)?)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Serialize)]
struct FingerprintInput<'a, C: Serialize> {
    scenario: &'a Scenario,
    embedder_input: usize,
    embedder_output: usize,
    dropout_rate: f64,
    context: &'a C,
}

/// Mean and standard error (sample std, `n − 1`, over `√n`).
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Per-episode accuracies in episode order.
pub fn episode_accuracies(
    embedder: &Embedder,
    gan: Option<&dyn Hallucinator>,
    dataset: &Dataset,
    split: &SplitSpec,
    scenario: &Scenario,
) -> Result<Vec<f64>> {
    scenario.validate()?;
    let view = scenario.tag.test_view();
    if view.needs_hallucinator() && gan.is_none() {
        return Err(Error::config("gan", format!("scenario {} needs a trained generator", scenario.tag)));
    }
    let width = view.input_dim(dataset.audio_dim(), dataset.visual_dim());
    if embedder.input_dim() != width {
        return Err(Error::dims("run_scenario", (1, width), (1, embedder.input_dim())));
    }
    let novel = &split.novel_classes;
    check_feasible(dataset, novel, scenario.way, scenario.shot, scenario.query_per_class)
        .map_err(|e| Error::config("scenario", e.to_string()))?;

    // hallucination is row-wise and deterministic, so every novel row is
    // featurised once up front
    let pool = dataset.indices_in(novel);
    let features = view.features(dataset, &pool, gan)?;
    let row_of: HashMap<usize, usize> = pool.iter().enumerate().map(|(r, &i)| (i, r)).collect();

    (0..scenario.episode_count)
        .into_par_iter()
        .map(|e| {
            let mut r = rng::indexed(scenario.seed, "eval-episode", e as u64);
            let ep = sample_episode(dataset, novel, scenario.way, scenario.shot, scenario.query_per_class, &mut r)?;
            if let Some(c) = ep.classes.iter().find(|c| !novel.contains(c)) {
                return Err(Error::State(format!("episode {e} drew non-novel class {c}")));
            }
            let batch = EpisodeBatch::new(
                gather(&features, &row_of, &ep.support_indices()),
                ep.support_slots(),
                gather(&features, &row_of, &ep.query_indices()),
                ep.query_slots(),
                ep.way,
            )?;
            let protos = compute_prototypes(embedder, &batch)?;
            let (labels, _) = predict(embedder, &protos, batch.query(), scenario.n_times, &mut r)?;
            let hits = labels.iter().zip(batch.query_slots()).filter(|(a, b)| a == b).count();
            Ok(hits as f64 / labels.len() as f64)
        })
        .collect()
}

/// Runs one scenario. `context` is folded into the fingerprint; pass the
/// full experiment configuration so reports from different setups differ.
pub fn run_scenario_with<C: Serialize>(
    embedder: &Embedder,
    gan: Option<&dyn Hallucinator>,
    dataset: &Dataset,
    split: &SplitSpec,
    scenario: &Scenario,
    context: &C,
) -> Result<EvalReport> {
    let acc = episode_accuracies(embedder, gan, dataset, split, scenario)?;
    let (mean, se) = mean_and_std_error(&acc);
    Ok(EvalReport {
        scenario: *scenario,
        mean_accuracy: mean,
        dispersion: se,
        episode_count: acc.len(),
        fingerprint: fingerprint(&FingerprintInput {
            scenario,
            embedder_input: embedder.input_dim(),
            embedder_output: embedder.embed_dim(),
            dropout_rate: embedder.dropout_rate(),
            context,
        })?,
    })
}

pub fn run_scenario(
    embedder: &Embedder,
    gan: Option<&dyn Hallucinator>,
    dataset: &Dataset,
    split: &SplitSpec,
    scenario: &Scenario,
) -> Result<EvalReport> {
    run_scenario_with(embedder, gan, dataset, split, scenario, &())
}

/// Meta-trains a fresh embedder on the base classes with the features
/// `tag` calls for.
pub fn train_for_scenario(
    tag: ScenarioTag,
    dataset: &Dataset,
    split: &SplitSpec,
    cfg: &FslTrainConfig,
    gan: Option<&mut CmmGan>,
) -> Result<(Embedder, TrainHistory)> {
    let view = tag.train_view();
    let mut embedder = cfg.build_embedder(view.input_dim(dataset.audio_dim(), dataset.visual_dim()))?;
    let history = meta_train_on(&mut embedder, dataset, &split.base_classes, view, cfg, gan)?;
    Ok((embedder, history))
}

/// One train + evaluate run per shot value. The factory receives the shot
/// and a seed derived from `base.seed` and that shot.
pub fn shot_ablation(
    factory: &mut dyn FnMut(usize, u64) -> Result<Embedder>,
    gan: Option<&dyn Hallucinator>,
    dataset: &Dataset,
    split: &SplitSpec,
    shots: &[usize],
    base: &Scenario,
) -> Result<Vec<EvalReport>> {
    if shots.is_empty() {
        return Err(Error::config("shots", "list is empty"));
    }
    let smallest = split
        .novel_classes
        .iter()
        .map(|&c| dataset.indices_of(c).len())
        .min()
        .unwrap_or(0);
    let max_shot = smallest.saturating_sub(base.query_per_class);
    if let Some(&bad) = shots.iter().find(|&&s| s == 0 || s > max_shot) {
        return Err(Error::config(
            "shots",
            format!("shot {bad} infeasible; with {} queries per class the maximum is {max_shot}", base.query_per_class),
        ));
    }
    shots
        .iter()
        .map(|&shot| {
            let seed = rng::child_seed(base.seed, &format!("shot-{shot}"));
            let embedder = factory(shot, seed)?;
            let scenario = Scenario { shot, seed, ..*base };
            run_scenario(&embedder, gan, dataset, split, &scenario)
        })
        .collect()
}

pub fn write_reports_jsonl(reports: &[EvalReport], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_reports_jsonl(path: impl AsRef<Path>) -> Result<Vec<EvalReport>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Scenario rows by `way`/`shot` columns, cells `mean ± se` in percent.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut cols: Vec<(usize, usize)> = Vec::new();
    let mut rows: Vec<ScenarioTag> = Vec::new();
    for r in reports {
        let c = (r.scenario.way, r.scenario.shot);
        if !cols.contains(&c) {
            cols.push(c);
        }
        if !rows.contains(&r.scenario.tag) {
            rows.push(r.scenario.tag);
        }
    }
    let headers: Vec<String> = cols.iter().map(|(w, s)| format!("{w}-way {s}-shot")).collect();
    let name_w = rows.iter().map(|t| t.name().len()).max().unwrap_or(0).max(8);
    let cell_w = headers.iter().map(String::len).max().unwrap_or(0).max(14);
    let mut out = String::new();
    let _ = write!(out, "{:<name_w$}", "scenario");
    for h in &headers {
        let _ = write!(out, "  {h:>cell_w$}");
    }
    out.push('\n');
    for tag in rows {
        let _ = write!(out, "{:<name_w$}", tag.name());
        for c in &cols {
            let cell = reports
                .iter()
                .find(|r| r.scenario.tag == tag && (r.scenario.way, r.scenario.shot) == *c)
                .map(|r| format!("{:.2} ± {:.2}", 100.0 * r.mean_accuracy, 100.0 * r.dispersion))
                .unwrap_or_else(|| "-".into());
            let _ = write!(out, "  {cell:>cell_w$}");
        }
        out.push('\n');
    }
    out
}

/// Rows of `features` for the given dataset indices, in order.
fn gather(features: &Tensor2, row_of: &HashMap<usize, usize>, idx: &[usize]) -> Tensor2 {
    features.select_rows(&idx.iter().map(|i| row_of[i]).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split_classes, SynthSpec};
    use crate::halluc::OracleHallucinator;

    fn setup() -> (Dataset, SplitSpec) {
        let ds = generate_synthetic(&SynthSpec {
            class_count: 8,
            samples_per_class: 12,
            audio_dim: 6,
            visual_dim: 5,
            latent_dim: 4,
            seed: 4,
            ..SynthSpec::default()
        })
        .unwrap();
        let split = split_classes(&ds, 5, 1).unwrap();
        (ds, split)
    }

    fn embedder(input: usize) -> Embedder {
        Embedder::new(input, &[8], 4, 0.2, &mut rng::stream(2, "e")).unwrap()
    }

    #[test]
    fn std_error_matches_two_pass_formula() {
        let v = [0.2, 0.4, 0.4, 1.0];
        let (m, se) = mean_and_std_error(&v);
        assert!((m - 0.5).abs() < 1e-15);
        let var = (0.09 + 0.01 + 0.01 + 0.25) / 3.0;
        assert!((se - (var / 4.0f64).sqrt()).abs() < 1e-15);
        assert_eq!(mean_and_std_error(&[0.3]), (0.3, 0.0));
    }

    #[test]
    fn accuracies_lie_on_the_query_grid_and_are_reproducible() {
        let (ds, split) = setup();
        let e = embedder(11);
        let sc = Scenario {
            episode_count: 40,
            query_per_class: 5,
            seed: 9,
            ..Scenario::default()
        };
        let acc = episode_accuracies(&e, None, &ds, &split, &sc).unwrap();
        assert!(acc.iter().all(|a| ((a * 25.0).round() - a * 25.0).abs() < 1e-12));
        let a = run_scenario(&e, None, &ds, &split, &sc).unwrap();
        let b = run_scenario(&e, None, &ds, &split, &sc).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.mean_accuracy) && a.dispersion >= 0.0);
    }

    #[test]
    fn oracle_hallucination_reproduces_real_fusion() {
        let (ds, split) = setup();
        let e = embedder(11);
        let base = Scenario {
            episode_count: 30,
            ..Scenario::default()
        };
        let real = run_scenario(&e, None, &ds, &split, &base).unwrap();
        for tag in [ScenarioTag::AudioPlusHalVisual, ScenarioTag::VisualPlusHalAudio] {
            let hal = run_scenario(&e, Some(&OracleHallucinator), &ds, &split, &Scenario { tag, ..base }).unwrap();
            assert_eq!(hal.mean_accuracy, real.mean_accuracy);
        }
    }

    #[test]
    fn missing_gan_is_a_config_error() {
        let (ds, split) = setup();
        let sc = Scenario::new(ScenarioTag::AudioPlusHalVisual);
        let err = run_scenario(&embedder(11), None, &ds, &split, &sc).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "gan"));
    }

    #[test]
    fn ablation_reports_one_per_shot_with_distinct_fingerprints() {
        let (ds, split) = setup();
        let base = Scenario {
            episode_count: 5,
            query_per_class: 3,
            ..Scenario::default()
        };
        let mut factory = |_shot: usize, seed: u64| Embedder::new(11, &[8], 4, 0.0, &mut rng::stream(seed, "e"));
        let one = shot_ablation(&mut factory, None, &ds, &split, &[2], &base).unwrap();
        assert_eq!(one.len(), 1);
        let many = shot_ablation(&mut factory, None, &ds, &split, &[1, 3, 5], &base).unwrap();
        assert_eq!(many.iter().map(|r| r.scenario.shot).collect::<Vec<_>>(), vec![1, 3, 5]);
        let prints: std::collections::HashSet<_> = many.iter().map(|r| r.fingerprint.clone()).collect();
        assert_eq!(prints.len(), 3);
        let err = shot_ablation(&mut factory, None, &ds, &split, &[1, 10], &base).unwrap_err();
        assert!(err.to_string().contains("maximum is 9"), "{err}");
    }

    #[test]
    fn reports_round_trip_and_tabulate() {
        let (ds, split) = setup();
        let r = run_scenario(&embedder(11), None, &ds, &split, &Scenario { episode_count: 10, ..Scenario::default() })
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        write_reports_jsonl(&[r.clone(), r.clone()], &p).unwrap();
        assert_eq!(read_reports_jsonl(&p).unwrap(), vec![r.clone(), r.clone()]);
        let table = format_table(&[r]);
        assert!(table.contains("fusion_real") && table.contains("5-way 1-shot"), "{table}");
    }
}
