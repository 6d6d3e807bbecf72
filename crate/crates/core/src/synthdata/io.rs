//! Line-delimited JSON records for crops and predictions.
//!
//! Floats are written with 17 significant digits so reading returns the
//! exact bits that were written.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Deserialize;

use super::render::{Annotation, Crop, Sample};
use crate::error::{Error, Result};
use crate::geometry::{Mat3, Pose, SymmetrySpec, Vec3};

fn push_f64(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").unwrap();
}

fn push_list(out: &mut String, values: impl IntoIterator<Item = f64>) {
    out.push('[');
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_f64(out, v);
    }
    out.push(']');
}

fn push_str(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).unwrap());
}

fn push_symmetry(out: &mut String, s: &SymmetrySpec) {
    match s {
        SymmetrySpec::None => out.push_str("\"none\""),
        SymmetrySpec::Axial { axis } => {
            out.push_str("{\"axial\":");
            push_list(out, axis.iter().copied());
            out.push('}');
        }
    }
}

fn push_pose(out: &mut String, p: &Pose) {
    out.push_str("{\"R\":");
    push_list(out, (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| p.rotation[(i, j)]));
    out.push_str(",\"t\":");
    push_list(out, p.translation.iter().copied());
    out.push_str(",\"s\":");
    push_list(out, p.size.iter().copied());
    out.push('}');
}

fn push_header(out: &mut String, crop: &Crop, symmetry: &SymmetrySpec) {
    out.push_str("{\"id\":");
    push_str(out, &crop.id);
    out.push_str(",\"category\":");
    push_str(out, crop.category.name());
    write!(out, ",\"instance\":{}", crop.instance).unwrap();
    out.push_str(",\"symmetry\":");
    push_symmetry(out, symmetry);
}

/// One dataset line, without the trailing newline.
pub fn sample_to_line(s: &Sample) -> String {
    let mut out = String::with_capacity(64 + s.crop.points.len() * 150);
    push_header(&mut out, &s.crop, &s.annotation.symmetry);
    out.push_str(",\"camera\":");
    push_list(&mut out, s.annotation.camera.iter().copied());
    out.push_str(",\"pose\":");
    push_pose(&mut out, &s.annotation.pose);
    out.push_str(",\"points\":");
    push_list(&mut out, s.crop.points.iter().flat_map(|p| [p.x, p.y, p.z]));
    out.push_str(",\"colors\":");
    push_list(&mut out, s.crop.colors.iter().flatten().copied());
    out.push('}');
    out
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SymmetryJson {
    Name(String),
    Axial { axial: [f64; 3] },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseJson {
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    s: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleJson {
    id: String,
    category: String,
    instance: u64,
    symmetry: SymmetryJson,
    #[serde(default)]
    camera: [f64; 3],
    pose: PoseJson,
    points: Vec<f64>,
    colors: Vec<f64>,
}

fn symmetry_from(s: SymmetryJson) -> std::result::Result<SymmetrySpec, String> {
    match s {
        SymmetryJson::Name(n) if n == "none" => Ok(SymmetrySpec::None),
        SymmetryJson::Name(n) => Err(format!("unknown symmetry {n:?}")),
        SymmetryJson::Axial { axial } => {
            SymmetrySpec::axial(Vec3::from(axial)).map_err(|e| e.to_string())
        }
    }
}

fn pose_from(p: PoseJson) -> Pose {
    Pose::new(Mat3::from_row_slice(&p.r), Vec3::from(p.t), Vec3::from(p.s))
}

fn triples(values: &[f64], what: &str) -> std::result::Result<Vec<[f64; 3]>, String> {
    if !values.len().is_multiple_of(3) {
        return Err(format!("{what} length {} is not a multiple of 3", values.len()));
    }
    Ok(values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

fn parse_sample(line: &str) -> std::result::Result<Sample, String> {
    let j: SampleJson = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let category = j.category.parse().map_err(|e: Error| e.to_string())?;
    let points: Vec<Vec3> = triples(&j.points, "points")?.into_iter().map(Vec3::from).collect();
    let colors = triples(&j.colors, "colors")?;
    if points.len() != colors.len() {
        return Err(format!("{} points but {} colors", points.len(), colors.len()));
    }
    if colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
        return Err("color outside [0, 1]".into());
    }
    Ok(Sample {
        crop: Crop {
            id: j.id,
            category,
            instance: j.instance,
            points,
            colors,
        },
        annotation: Annotation {
            pose: pose_from(j.pose),
            symmetry: symmetry_from(j.symmetry)?,
            camera: Vec3::from(j.camera),
        },
    })
}

fn read_lines<T>(path: &Path, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse(&line).map_err(|message| Error::ParseError { line: i + 1, message })?);
    }
    Ok(out)
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for line in lines {
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    write_lines(path, samples.iter().map(sample_to_line))
}

/// Reads every record; any malformed line fails the whole read.
pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    read_lines(path, parse_sample)
}

/// Predicted pose for one crop.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub category: super::Category,
    pub instance: u64,
    pub symmetry: SymmetrySpec,
    pub pose: Pose,
    pub confidence: f64,
    pub refine_iters: Option<usize>,
    pub refine_loss: Option<f64>,
}

pub fn prediction_to_line(p: &Prediction) -> String {
    let crop = Crop {
        id: p.id.clone(),
        category: p.category,
        instance: p.instance,
        points: Vec::new(),
        colors: Vec::new(),
    };
    let mut out = String::with_capacity(512);
    push_header(&mut out, &crop, &p.symmetry);
    out.push_str(",\"pred_pose\":");
    push_pose(&mut out, &p.pose);
    out.push_str(",\"confidence\":");
    push_f64(&mut out, p.confidence);
    if let Some(n) = p.refine_iters {
        write!(out, ",\"refine_iters\":{n}").unwrap();
    }
    if let Some(l) = p.refine_loss {
        out.push_str(",\"refine_loss\":");
        push_f64(&mut out, l);
    }
    out.push('}');
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionJson {
    id: String,
    category: String,
    instance: u64,
    symmetry: SymmetryJson,
    pred_pose: PoseJson,
    confidence: f64,
    refine_iters: Option<usize>,
    refine_loss: Option<f64>,
}

fn parse_prediction(line: &str) -> std::result::Result<Prediction, String> {
    let j: PredictionJson = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if !(0.0..=1.0).contains(&j.confidence) {
        return Err(format!("confidence {} outside [0, 1]", j.confidence));
    }
    Ok(Prediction {
        id: j.id,
        category: j.category.parse().map_err(|e: Error| e.to_string())?,
        instance: j.instance,
        symmetry: symmetry_from(j.symmetry)?,
        pose: pose_from(j.pred_pose),
        confidence: j.confidence,
        refine_iters: j.refine_iters,
        refine_loss: j.refine_loss,
    })
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    write_lines(path, preds.iter().map(prediction_to_line))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    read_lines(path, parse_prediction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, GenConfig};

    fn bits(s: &Sample) -> Vec<u64> {
        let p = &s.annotation.pose;
        p.rotation
            .iter()
            .chain(p.translation.iter())
            .chain(p.size.iter())
            .chain(s.crop.points.iter().flat_map(|p| p.iter()))
            .chain(s.crop.colors.iter().flatten())
            .map(|v| v.to_bits())
            .collect()
    }

    #[test]
    fn dataset_roundtrip_is_bit_exact() {
        let samples = generate(&GenConfig {
            count: 100,
            ..GenConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&path, &samples).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.len(), 100);
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(bits(a), bits(b));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let samples = generate(&GenConfig {
            count: 3,
            ..GenConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&path, &samples).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() - 40]).unwrap();
        match read_dataset(&path) {
            Err(Error::ParseError { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(read_dataset(&path).unwrap().is_empty());
    }

    #[test]
    fn prediction_roundtrip() {
        let p = Prediction {
            id: "000007".into(),
            category: crate::synthdata::Category::Cylinder,
            instance: 1,
            symmetry: SymmetrySpec::Axial { axis: Vec3::z() },
            pose: Pose::new(Mat3::identity(), Vec3::new(0.1, 1.0 / 3.0, 1.5), Vec3::new(0.2, 0.2, 0.3)),
            confidence: 1.0,
            refine_iters: Some(12),
            refine_loss: Some(4.2e-5),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        write_predictions(&path, std::slice::from_ref(&p)).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), vec![p]);
    }
}
