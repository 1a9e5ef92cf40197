//! JSON Lines annotations: one `{"image": "...", "points": [[x, y], ...]}` per line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{clamp_coord, pnm, AnnotatedScene, Point};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub image: String,
    pub points: Vec<[f64; 2]>,
}

impl SceneRecord {
    pub fn new(image: impl Into<String>, points: &[Point]) -> Self {
        Self {
            image: image.into(),
            points: points.iter().map(|p| [p.x, p.y]).collect(),
        }
    }
}

pub fn load_annotations(path: &Path) -> Result<Vec<SceneRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: SceneRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_annotations(path: &Path, records: &[SceneRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Format(e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Scenes loaded from a directory holding `annotations.jsonl` and images.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub scenes: Vec<AnnotatedScene>,
    /// Points moved inside the image bounds while loading.
    pub clamped_points: usize,
}

/// Resolves one record against `root`, clamping out-of-bounds points.
/// Returns the scene and the number of clamped points.
pub fn load_scene(root: &Path, record: &SceneRecord) -> Result<(AnnotatedScene, usize)> {
    let image_path: PathBuf = root.join(&record.image);
    let image = pnm::read_rgb(&image_path)?;
    let (_, h, w) = image.chw()?;
    let mut clamped = 0;
    let points = record
        .points
        .iter()
        .map(|&[x, y]| {
            let mut p = Point::new(x, y);
            let moved = clamp_coord(&mut p.x, w) | clamp_coord(&mut p.y, h);
            clamped += moved as usize;
            p
        })
        .collect();
    Ok((AnnotatedScene::new(record.image.clone(), image, points)?, clamped))
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let records = load_annotations(&root.join("annotations.jsonl"))?;
    let mut scenes = Vec::with_capacity(records.len());
    let mut clamped_points = 0;
    for r in &records {
        let (scene, c) = load_scene(root, r)?;
        clamped_points += c;
        scenes.push(scene);
    }
    Ok(Dataset {
        scenes,
        clamped_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn round_trip_and_empty_points() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        let records = vec![
            SceneRecord::new("x.pgm", &[Point::new(1.25, 3.5), Point::new(0.123456789, 7.0)]),
            SceneRecord::new("y.pgm", &[]),
        ];
        write_annotations(&path, &records).unwrap();
        let back = load_annotations(&path).unwrap();
        assert_eq!(back[1].points.len(), 0);
        for (a, b) in back[0].points.iter().zip(&records[0].points) {
            assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn malformed_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        fs::write(&path, "{\"image\":\"a.pgm\",\"points\":[]}\n{\"image\": 3}\n").unwrap();
        match load_annotations(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn boundary_point_is_clamped_and_missing_image_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = Tensor::<f32>::zeros(vec![3, 6, 8]);
        pnm::write_pgm(&dir.path().join("a.pgm"), &img).unwrap();
        let rec = SceneRecord {
            image: "a.pgm".into(),
            points: vec![[8.0, 2.0], [1.0, 1.0]],
        };
        let (scene, clamped) = load_scene(dir.path(), &rec).unwrap();
        assert_eq!(clamped, 1);
        assert!(scene.points[0].x < 8.0 && scene.points[0].x > 7.99);
        let missing = SceneRecord {
            image: "nope.pgm".into(),
            points: vec![],
        };
        assert!(matches!(load_scene(dir.path(), &missing).unwrap_err(), Error::Io { .. }));
    }
}
