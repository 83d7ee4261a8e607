//! Small synthetic annotation sets with real PNG images, for demos and
//! tests.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{AnnotationEntry, DatasetError};

pub const ANNOTATION_FILE: &str = "annotations.jsonl";
pub const IMAGE_DIR: &str = "images";

const SUBJECTS: &[&str] = &[
    "a dog", "two cats", "a red car", "an old man", "a child", "a bicycle", "a wooden table",
    "a group of people", "a small boat", "a city street",
];
const PLACES: &[&str] = &[
    "on the beach", "in a park", "near the river", "in the kitchen", "at night", "in the snow",
    "under a tree", "on a busy road",
];

/// Writes `n` 16×16 PNG images and an annotation file with short raw
/// captions under `dir`; returns the annotation path. Same `seed`, same
/// bytes.
pub fn write_fixture(dir: &Path, n: usize, seed: u64) -> Result<PathBuf, DatasetError> {
    let images = dir.join(IMAGE_DIR);
    fs::create_dir_all(&images).map_err(|e| DatasetError::io(&images, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ann_path = dir.join(ANNOTATION_FILE);
    let file = File::create(&ann_path).map_err(|e| DatasetError::io(&ann_path, e))?;
    let mut out = BufWriter::new(file);
    for i in 0..n {
        let name = format!("img_{i:04}.png");
        let path = images.join(&name);
        let pixels: Vec<u8> = (0..16 * 16 * 3).map(|_| rng.random()).collect();
        write_png(&path, 16, 16, &pixels)?;
        let caption = format!(
            "{} {}",
            SUBJECTS.choose(&mut rng).expect("non-empty"),
            PLACES.choose(&mut rng).expect("non-empty")
        );
        let entry = AnnotationEntry {
            id: format!("img-{i:04}"),
            image: format!("{IMAGE_DIR}/{name}"),
            caption,
        };
        let line = serde_json::to_string(&entry).expect("entry serializes");
        writeln!(out, "{line}").map_err(|e| DatasetError::io(&ann_path, e))?;
    }
    out.flush().map_err(|e| DatasetError::io(&ann_path, e))?;
    Ok(ann_path)
}

fn write_png(path: &Path, width: u32, height: u32, rgb: &[u8]) -> Result<(), DatasetError> {
    let io = |e: std::io::Error| DatasetError::io(path, e);
    let file = File::create(path).map_err(io)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width, height);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| io(std::io::Error::other(e)))?;
    writer
        .write_image_data(rgb)
        .map_err(|e| io(std::io::Error::other(e)))?;
    writer.finish().map_err(|e| io(std::io::Error::other(e)))
}
