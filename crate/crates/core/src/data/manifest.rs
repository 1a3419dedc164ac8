//! Line-oriented CSV manifest format and eager validation.
//!
//! Header: `sample_id,subject_id,label,attack_type,image,landmarks,width,height`
//! with `label` in `{live, attack}`. Image and landmark paths are resolved
//! relative to the manifest file's directory.

use std::collections::BTreeSet;
use std::path::{Component, Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LandmarkSet;
use crate::imgproc;

pub const MANIFEST_HEADER: [&str; 8] = [
    "sample_id",
    "subject_id",
    "label",
    "attack_type",
    "image",
    "landmarks",
    "width",
    "height",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    BonaFide,
    Attack,
}

impl Label {
    pub fn as_manifest_str(self) -> &'static str {
        match self {
            Label::BonaFide => "live",
            Label::Attack => "attack",
        }
    }

    pub fn parse_manifest(s: &str) -> Option<Self> {
        match s {
            "live" => Some(Label::BonaFide),
            "attack" => Some(Label::Attack),
            _ => None,
        }
    }

    /// Class index used by the models: 0 = bona fide, 1 = attack.
    pub fn class_index(self) -> usize {
        match self {
            Label::BonaFide => 0,
            Label::Attack => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceSample {
    pub sample_id: String,
    pub subject_id: String,
    pub image_path: PathBuf,
    pub landmark_path: PathBuf,
    pub label: Label,
    pub attack_type: Option<String>,
    pub reference_size: (u32, u32),
}

impl FaceSample {
    pub fn load_image(&self) -> Result<Array3<f32>> {
        let img = imgproc::load_png(&self.image_path)?;
        let (_, h, w) = img.dim();
        if (w as u32, h as u32) != self.reference_size {
            return Err(Error::ImageSize {
                path: self.image_path.clone(),
                expected_w: self.reference_size.0,
                expected_h: self.reference_size.1,
                got_w: w as u32,
                got_h: h as u32,
            });
        }
        Ok(img)
    }

    pub fn load_landmarks(&self) -> Result<LandmarkSet> {
        LandmarkSet::load(&self.landmark_path, self.reference_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub samples: Vec<FaceSample>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_both_classes(&self) -> bool {
        let mut live = false;
        let mut attack = false;
        for s in &self.samples {
            match s.label {
                Label::BonaFide => live = true,
                Label::Attack => attack = true,
            }
        }
        live && attack
    }

    pub fn subjects(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for s in &self.samples {
            if seen.insert(s.subject_id.clone()) {
                out.push(s.subject_id.clone());
            }
        }
        out
    }
}

/// Load and eagerly validate a manifest: header shape, label vocabulary,
/// unique sample ids, image dimensions, and 98 in-bounds landmarks per
/// sample. Sample order equals file order.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);

    {
        let headers = reader
            .headers()
            .map_err(|e| schema_err(path, 1, format!("unreadable header: {e}")))?;
        let got: Vec<&str> = headers.iter().collect();
        if got != MANIFEST_HEADER {
            return Err(schema_err(
                path,
                1,
                format!("expected header `{}`, got `{}`", MANIFEST_HEADER.join(","), got.join(",")),
            ));
        }
    }

    let mut samples = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record.map_err(|e| schema_err(path, line, e.to_string()))?;
        let field = |idx: usize| record.get(idx).unwrap_or("").trim().to_string();

        let sample_id = field(0);
        if sample_id.is_empty() {
            return Err(schema_err(path, line, "empty sample_id".into()));
        }
        if !seen_ids.insert(sample_id.clone()) {
            return Err(Error::DuplicateSampleId(sample_id));
        }
        let subject_id = field(1);
        if subject_id.is_empty() {
            return Err(schema_err(path, line, "empty subject_id".into()));
        }
        let label = Label::parse_manifest(&field(2)).ok_or_else(|| {
            schema_err(path, line, format!("label must be `live` or `attack`, got `{}`", field(2)))
        })?;
        let attack_type = {
            let t = field(3);
            if t.is_empty() {
                None
            } else {
                Some(t)
            }
        };
        let width: u32 = field(6)
            .parse()
            .map_err(|_| schema_err(path, line, format!("bad width `{}`", field(6))))?;
        let height: u32 = field(7)
            .parse()
            .map_err(|_| schema_err(path, line, format!("bad height `{}`", field(7))))?;
        if width == 0 || height == 0 {
            return Err(schema_err(path, line, "zero image dimension".into()));
        }

        let image_path = base.join(field(4));
        let landmark_path = base.join(field(5));

        let (got_w, got_h) = imgproc::png_dimensions(&image_path)?;
        if (got_w, got_h) != (width, height) {
            return Err(Error::ImageSize {
                path: image_path,
                expected_w: width,
                expected_h: height,
                got_w,
                got_h,
            });
        }
        // validates point count and bounds
        LandmarkSet::load(&landmark_path, (width, height))?;

        samples.push(FaceSample {
            sample_id,
            subject_id,
            image_path,
            landmark_path,
            label,
            attack_type,
            reference_size: (width, height),
        });
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());
    Ok(DatasetManifest { name, samples })
}

/// Write a manifest, storing image/landmark paths relative to the target
/// location when possible.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(MANIFEST_HEADER)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    for s in &manifest.samples {
        w.write_record([
            s.sample_id.as_str(),
            s.subject_id.as_str(),
            s.label.as_manifest_str(),
            s.attack_type.as_deref().unwrap_or(""),
            &relative_path(base, &s.image_path).display().to_string(),
            &relative_path(base, &s.landmark_path).display().to_string(),
            &s.reference_size.0.to_string(),
            &s.reference_size.1.to_string(),
        ])
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Lexical relative path from `base` to `target`; falls back to `target`
/// when the two share no usable prefix.
pub fn relative_path(base: &Path, target: &Path) -> PathBuf {
    let base_comps: Vec<Component> = base.components().collect();
    let target_comps: Vec<Component> = target.components().collect();
    if base.is_absolute() != target.is_absolute() {
        return target.to_path_buf();
    }
    let common = base_comps
        .iter()
        .zip(target_comps.iter())
        .take_while(|(a, b)| a == b)
        .count();
    let mut out = PathBuf::new();
    for _ in common..base_comps.len() {
        out.push("..");
    }
    for c in &target_comps[common..] {
        out.push(c);
    }
    if out.as_os_str().is_empty() {
        out.push(".");
    }
    out
}

/// Sidecar listing which regions were planted for a synthetic attack image.
pub fn planted_regions_path(image_path: &Path) -> PathBuf {
    image_path.with_extension("planted.txt")
}

fn schema_err(path: &Path, line: usize, msg: String) -> Error {
    Error::ManifestSchema {
        path: path.to_path_buf(),
        line,
        msg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_path_basics() {
        assert_eq!(
            relative_path(Path::new("/a/b"), Path::new("/a/b/c/d.png")),
            PathBuf::from("c/d.png")
        );
        assert_eq!(
            relative_path(Path::new("/a/b/e"), Path::new("/a/c/d.png")),
            PathBuf::from("../../c/d.png")
        );
    }

    #[test]
    fn label_vocabulary() {
        assert_eq!(Label::parse_manifest("live"), Some(Label::BonaFide));
        assert_eq!(Label::parse_manifest("attack"), Some(Label::Attack));
        assert_eq!(Label::parse_manifest("bona_fide"), None);
        assert_eq!(Label::BonaFide.class_index(), 0);
        assert_eq!(Label::Attack.class_index(), 1);
    }
}
