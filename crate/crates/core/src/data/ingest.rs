//! Imports real-world images from `<src>/real/**` and `<src>/fake/**`.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use super::io::{from_rgb8, save_image};
use super::manifest::{DatasetManifest, Label, Record};
use super::split::{split_dataset, SplitRatio};
use crate::error::{Error, Result};

pub const SUPPORTED_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "tif"];

fn is_supported(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| SUPPORTED_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Sorted list of supported image files below `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in WalkDir::new(dir).follow_links(true) {
        let entry = entry.map_err(|e| {
            Error::io(
                dir,
                e.into_io_error()
                    .unwrap_or_else(|| std::io::Error::other("directory walk failed")),
            )
        })?;
        if entry.file_type().is_file() && is_supported(entry.path()) {
            files.push(entry.into_path());
        }
    }
    files.sort();
    Ok(files)
}

/// Resizes (bilinear) every image to `resolution²`, writes PNG copies under
/// `out` in the usual layout, and assigns stratified splits by `ratio`.
pub fn ingest_directories(
    src: &Path,
    out: &Path,
    resolution: usize,
    ratio: SplitRatio,
    seed: u64,
) -> Result<DatasetManifest> {
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let mut files = Vec::new();
    let mut labels = Vec::new();
    for label in Label::ALL {
        let dir = src.join(label.as_str());
        if !dir.is_dir() {
            return Err(Error::io(
                &dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "class directory missing"),
            ));
        }
        for f in list_images(&dir)? {
            files.push(f);
            labels.push(label);
        }
    }
    let splits = split_dataset(&labels, ratio, seed)?;

    let mut hasher = Sha256::new();
    hasher.update(resolution.to_le_bytes());
    hasher.update(seed.to_le_bytes());
    let mut counters = std::collections::HashMap::new();
    let mut records = Vec::with_capacity(files.len());
    for ((file, &label), &split) in files.iter().zip(&labels).zip(&splits) {
        let bytes = std::fs::read(file).map_err(|e| Error::io(file, e))?;
        hasher.update(&bytes);
        let decoded = image::load_from_memory(&bytes).map_err(|source| Error::Image {
            path: file.clone(),
            source,
        })?;
        let resized = decoded
            .resize_exact(resolution as u32, resolution as u32, FilterType::Triangle)
            .to_rgb8();
        let index = counters.entry((label, split)).or_insert(0usize);
        let rel = Path::new(label.as_str())
            .join(split.as_str())
            .join(format!("{index}.png"));
        *index += 1;
        save_image(&from_rgb8(&resized), &out.join(&rel))?;
        records.push(Record {
            path: rel,
            label,
            split,
        });
    }
    let digest = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let manifest = DatasetManifest::new(out, resolution, digest, None, records);
    manifest.save()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::Split;

    #[test]
    fn ingests_and_resizes() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        for label in ["real", "fake"] {
            let dir = src.path().join(label).join("nested");
            std::fs::create_dir_all(&dir).unwrap();
            for i in 0..8 {
                let img = image::RgbImage::from_pixel(20, 12, image::Rgb([i * 10, 50, 200]));
                img.save(dir.join(format!("{i}.png"))).unwrap();
            }
            std::fs::write(dir.join("notes.txt"), "skip me").unwrap();
        }
        let m = ingest_directories(src.path(), out.path(), 16, SplitRatio::default(), 0).unwrap();
        assert_eq!(m.records.len(), 16);
        m.validate().unwrap();
        let test = m.load_split(Split::Test).unwrap();
        assert_eq!(test.images[0].height(), 16);
        assert_eq!(test.count(Label::Fake), 1);
    }

    #[test]
    fn missing_class_directory_is_an_error() {
        let src = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(src.path().join("real")).unwrap();
        let out = tempfile::tempdir().unwrap();
        assert!(ingest_directories(src.path(), out.path(), 16, SplitRatio::default(), 0).is_err());
    }
}
