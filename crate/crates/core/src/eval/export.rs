//! Embedding export for external visualisation.
//!
//! CSV columns: `sample_id,label,source,e_0,…,e_{d-1}`. Each sample is
//! embedded once per requested source, with the other modality's columns
//! zero-filled: `audio` is `[A ; 0]`, `visual` is `[0 ; V]`,
//! `hallucinated_visual` is `[0 ; G1(A)]` and `hallucinated_audio` is
//! `[G2(V) ; 0]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fewshot::{fuse, Embedder};
use crate::halluc::{Direction, Hallucinator};
use crate::numerics::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Audio,
    Visual,
    HallucinatedVisual,
    HallucinatedAudio,
}

impl EmbeddingSource {
    pub const ALL: [EmbeddingSource; 4] = [
        EmbeddingSource::Audio,
        EmbeddingSource::Visual,
        EmbeddingSource::HallucinatedVisual,
        EmbeddingSource::HallucinatedAudio,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EmbeddingSource::Audio => "audio",
            EmbeddingSource::Visual => "visual",
            EmbeddingSource::HallucinatedVisual => "hallucinated_visual",
            EmbeddingSource::HallucinatedAudio => "hallucinated_audio",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub sample_id: usize,
    pub label: usize,
    pub source: EmbeddingSource,
    pub values: Vec<f64>,
}

/// Embeds every sample of `classes` once per source and writes the CSV.
/// Returns the number of data rows.
pub fn export_embeddings(
    embedder: &Embedder,
    gan: Option<&dyn Hallucinator>,
    dataset: &Dataset,
    classes: &[usize],
    sources: &[EmbeddingSource],
    path: impl AsRef<Path>,
) -> Result<usize> {
    let (da, dv) = (dataset.audio_dim(), dataset.visual_dim());
    if embedder.input_dim() != da + dv {
        return Err(Error::dims("export_embeddings", (1, da + dv), (1, embedder.input_dim())));
    }
    let idx = dataset.indices_in(classes);
    let n = idx.len();
    let hal = || gan.ok_or_else(|| Error::config("gan", "hallucinated sources need a trained generator"));

    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_string(), "label".into(), "source".into()];
    header.extend((0..embedder.embed_dim()).map(|i| format!("e_{i}")));
    w.write_record(&header)?;
    for &source in sources {
        let input = match source {
            EmbeddingSource::Audio => fuse(&dataset.audio_rows(&idx), &Tensor2::zeros(n, dv))?,
            EmbeddingSource::Visual => fuse(&Tensor2::zeros(n, da), &dataset.visual_rows(&idx))?,
            EmbeddingSource::HallucinatedVisual => fuse(
                &Tensor2::zeros(n, da),
                &hal()?.hallucinate_samples(dataset, &idx, Direction::AudioToVisual)?,
            )?,
            EmbeddingSource::HallucinatedAudio => fuse(
                &hal()?.hallucinate_samples(dataset, &idx, Direction::VisualToAudio)?,
                &Tensor2::zeros(n, dv),
            )?,
        };
        let emb = embedder.embed(&input)?;
        for (r, &i) in idx.iter().enumerate() {
            let mut rec = vec![i.to_string(), dataset.samples()[i].label.to_string(), source.name().to_string()];
            rec.extend(emb.row(r).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(n * sources.len())
}

pub fn read_embeddings_csv(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    let header = rd.headers()?.clone();
    if header.len() < 3 || &header[0] != "sample_id" || &header[1] != "label" || &header[2] != "source" {
        return Err(Error::format(0, "embedding CSV must start with sample_id,label,source"));
    }
    let width = header.len();
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let off = rec.position().map_or(0, |p| p.byte());
        if rec.len() != width {
            return Err(Error::format(off, format!("row has {} fields, header declares {width}", rec.len())));
        }
        let int = |f: &str| f.parse::<usize>().map_err(|e| Error::format(off, format!("bad integer {f:?}: {e}")));
        let source = EmbeddingSource::parse(&rec[2])
            .ok_or_else(|| Error::format(off, format!("unknown source {:?}", &rec[2])))?;
        let values = rec
            .iter()
            .skip(3)
            .map(|f| f.parse::<f64>().map_err(|e| Error::format(off, format!("bad number {f:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(EmbeddingRow {
            sample_id: int(&rec[0])?,
            label: int(&rec[1])?,
            source,
            values,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthSpec};
    use crate::halluc::OracleHallucinator;
    use crate::rng;

    #[test]
    fn three_sources_give_three_rows_per_sample_and_round_trip() {
        let ds = generate_synthetic(&SynthSpec {
            class_count: 3,
            samples_per_class: 4,
            audio_dim: 3,
            visual_dim: 2,
            latent_dim: 2,
            ..SynthSpec::default()
        })
        .unwrap();
        let e = Embedder::new(5, &[4], 3, 0.2, &mut rng::stream(0, "e")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.csv");
        let sources = [EmbeddingSource::Audio, EmbeddingSource::Visual, EmbeddingSource::HallucinatedVisual];
        let n = export_embeddings(&e, Some(&OracleHallucinator), &ds, &[0, 2], &sources, &p).unwrap();
        assert_eq!(n, 3 * 8);
        let first = std::fs::read(&p).unwrap();
        export_embeddings(&e, Some(&OracleHallucinator), &ds, &[0, 2], &sources, &p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);

        let rows = read_embeddings_csv(&p).unwrap();
        assert_eq!(rows.len(), 24);
        // oracle hallucination of V equals the real visual embedding
        let vis: Vec<_> = rows.iter().filter(|r| r.source == EmbeddingSource::Visual).collect();
        let hal: Vec<_> = rows.iter().filter(|r| r.source == EmbeddingSource::HallucinatedVisual).collect();
        for (a, b) in vis.iter().zip(&hal) {
            assert_eq!((a.sample_id, &a.values), (b.sample_id, &b.values));
        }
        assert!(export_embeddings(&e, None, &ds, &[0], &sources, &p).is_err());
    }
}
