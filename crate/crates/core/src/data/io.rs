//! Feature files.
//!
//! Binary `HVNF` layout, little-endian:
//!
//! ```text
//! "HVNF"  u16 version=1  u32 sample_count  u32 d_a  u32 d_v  u32 class_count
//! class_count × { u32 byte_len  utf-8 name }
//! sample_count × { u32 label  f64[d_a] audio  f64[d_v] visual }
//! ```
//!
//! CSV files carry a header `label,a_0,…,a_{d_a-1},v_0,…,v_{d_v-1}`. Labels
//! may be arbitrary strings; they are remapped to dense ids (numeric order if
//! every label is an integer, lexicographic otherwise) and the original
//! strings become the class names.

use std::collections::BTreeSet;
use std::path::Path;

use super::{Dataset, PairedSample};
use crate::binio::{put_f64s, put_u16, put_u32, u32_len, Reader};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"HVNF";
pub const FEATURE_VERSION: u16 = 1;

pub fn encode_features(ds: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(26 + ds.len() * (4 + 8 * (ds.audio_dim() + ds.visual_dim())));
    out.extend_from_slice(FEATURE_MAGIC);
    put_u16(&mut out, FEATURE_VERSION);
    put_u32(&mut out, u32_len(ds.len(), "sample_count")?);
    put_u32(&mut out, u32_len(ds.audio_dim(), "audio_dim")?);
    put_u32(&mut out, u32_len(ds.visual_dim(), "visual_dim")?);
    put_u32(&mut out, u32_len(ds.class_count(), "class_count")?);
    for name in ds.class_names() {
        put_u32(&mut out, u32_len(name.len(), "class name")?);
        out.extend_from_slice(name.as_bytes());
    }
    for s in ds.samples() {
        put_u32(&mut out, s.label as u32);
        put_f64s(&mut out, &s.audio);
        put_f64s(&mut out, &s.visual);
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.magic(FEATURE_MAGIC)?;
    let at = r.offset();
    let version = r.u16("version")?;
    if version != FEATURE_VERSION {
        return Err(Error::format(at, format!("unsupported feature file version {version}")));
    }
    let count = r.u32("sample count")? as usize;
    let d_a = r.u32("audio dim")? as usize;
    let d_v = r.u32("visual dim")? as usize;
    let classes = r.u32("class count")? as usize;
    let mut names = Vec::with_capacity(classes.min(1 << 16));
    for _ in 0..classes {
        let len = r.u32("class name length")? as usize;
        let at = r.offset();
        let raw = r.take(len, "class name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|e| Error::format(at, format!("class name is not utf-8: {e}")))?;
        names.push(name.to_owned());
    }
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let at = r.offset();
        let label = r.u32("label")? as usize;
        if label >= classes {
            return Err(Error::format(
                at,
                format!("sample {i}: label {label} outside 0..{classes}"),
            ));
        }
        let audio = r.f64s(d_a, "audio features")?;
        let visual = r.f64s(d_v, "visual features")?;
        samples.push(PairedSample {
            audio,
            visual,
            label,
        });
    }
    if r.remaining() != 0 {
        return Err(Error::format(
            r.offset(),
            format!("{} bytes after the last of {count} samples", r.remaining()),
        ));
    }
    Dataset::new(d_a, d_v, names, samples)
}

pub fn write_features_csv<W: std::io::Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["label".to_string()];
    header.extend((0..ds.audio_dim()).map(|i| format!("a_{i}")));
    header.extend((0..ds.visual_dim()).map(|i| format!("v_{i}")));
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for s in ds.samples() {
        row.clear();
        row.push(ds.class_names()[s.label].clone());
        row.extend(s.audio.iter().chain(&s.visual).map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features_csv<R: std::io::Read>(input: R) -> Result<Dataset> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let header = rd.headers()?.clone();
    let (d_a, d_v) = parse_header(&header)?;
    let width = 1 + d_a + d_v;

    let mut raw: Vec<(String, Vec<f64>)> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let offset = rec.position().map_or(0, |p| p.byte());
        if rec.len() != width {
            return Err(Error::format(
                offset,
                format!("row has {} fields, header declares {width}", rec.len()),
            ));
        }
        let values = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::format(offset, format!("bad number {f:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        raw.push((rec[0].to_string(), values));
    }

    let labels: BTreeSet<&str> = raw.iter().map(|(l, _)| l.as_str()).collect();
    let mut names: Vec<String> = labels.into_iter().map(str::to_owned).collect();
    if names.iter().all(|n| n.parse::<i64>().is_ok()) {
        names.sort_by_key(|n| n.parse::<i64>().unwrap());
    }
    let samples = raw
        .into_iter()
        .map(|(label, mut values)| {
            let visual = values.split_off(d_a);
            PairedSample {
                audio: values,
                visual,
                label: names.iter().position(|n| *n == label).expect("label collected"),
            }
        })
        .collect();
    Dataset::new(d_a, d_v, names, samples)
}

fn parse_header(h: &csv::StringRecord) -> Result<(usize, usize)> {
    let off = h.position().map_or(0, |p| p.byte());
    if h.get(0).map(str::trim) != Some("label") {
        return Err(Error::format(off, "first CSV column must be `label`"));
    }
    let mut d_a = 0;
    let mut d_v = 0;
    for (i, col) in h.iter().enumerate().skip(1) {
        let col = col.trim();
        if col == format!("a_{d_a}") && d_v == 0 {
            d_a += 1;
        } else if col == format!("v_{d_v}") {
            d_v += 1;
        } else {
            return Err(Error::format(
                off,
                format!("unexpected header column {i} {col:?}; expected a_0..a_n then v_0..v_m"),
            ));
        }
    }
    Ok((d_a, d_v))
}

pub fn save_features(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        write_features_csv(ds, std::io::BufWriter::new(std::fs::File::create(path)?))
    } else {
        std::fs::write(path, encode_features(ds)?)?;
        Ok(())
    }
}

/// Loads a feature file; `.csv` files are read as CSV, anything else as `HVNF`.
pub fn load_features(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    if is_csv(path) {
        read_features_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    } else {
        decode_features(&std::fs::read(path)?)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthSpec};

    fn small() -> Dataset {
        generate_synthetic(&SynthSpec {
            class_count: 3,
            samples_per_class: 4,
            audio_dim: 3,
            visual_dim: 2,
            latent_dim: 2,
            seed: 5,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn binary_round_trip_is_bit_identical() {
        let ds = small();
        let bytes = encode_features(&ds).unwrap();
        let back = decode_features(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(encode_features(&back).unwrap(), bytes);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut bytes = encode_features(&small()).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_features(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn missing_sample_is_a_truncation_error() {
        let ds = small();
        let bytes = encode_features(&ds).unwrap();
        let per_sample = 4 + 8 * (3 + 2);
        let err = decode_features(&bytes[..bytes.len() - per_sample]).unwrap_err();
        match err {
            Error::Format { message, .. } => assert!(message.contains("truncated"), "{message}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = small();
        let mut buf = Vec::new();
        write_features_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("label,a_0,a_1,a_2,v_0,v_1\n"));
        assert_eq!(read_features_csv(&buf[..]).unwrap(), ds);
    }

    #[test]
    fn csv_labels_are_densely_remapped() {
        let text = "label,a_0,v_0\n10,1.0,2.0\n3,0.5,0.25\n10,0,0\n";
        let ds = read_features_csv(text.as_bytes()).unwrap();
        assert_eq!(ds.class_names(), &["3".to_string(), "10".to_string()]);
        let labels: Vec<usize> = ds.samples().iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![1, 0, 1]);
    }

    #[test]
    fn csv_width_mismatch_is_a_format_error() {
        let text = "label,a_0,v_0\nx,1.0\n";
        assert!(matches!(read_features_csv(text.as_bytes()), Err(Error::Format { .. })));
        let text = "label,a_0,b_0\nx,1.0,2.0\n";
        assert!(matches!(read_features_csv(text.as_bytes()), Err(Error::Format { .. })));
    }

    #[test]
    fn files_dispatch_on_extension() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small();
        for name in ["d.hvnf", "d.csv"] {
            let p = dir.path().join(name);
            save_features(&ds, &p).unwrap();
            assert_eq!(load_features(&p).unwrap(), ds);
        }
    }
}
