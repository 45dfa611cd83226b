//! Directory layout:
//!
//! ```text
//! <root>/scans/<id>.png|.pgm
//! <root>/masks_lumen/<id>.png|.pgm
//! <root>/masks_media/<id>.png|.pgm
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{GrayImage as Luma8, ImageFormat};

use super::{mask_from_raw, normalize, DatasetIndex, GrayImage, RawImage, Role, Sample};
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;

pub const SCANS: &str = "scans";
pub const LUMEN: &str = "masks_lumen";
pub const MEDIA: &str = "masks_media";
const EXTENSIONS: [&str; 2] = ["png", "pgm"];

/// 8-bit masks are foreground at or above this level.
pub const MASK_THRESHOLD: u8 = 128;

fn unreadable(path: &Path, reason: impl ToString) -> Error {
    Error::Unreadable {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Maps file stem to path for every supported image in `dir`.
pub fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| unreadable(dir, e))? {
        let path = entry.map_err(|e| unreadable(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) || !path.is_file() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
            return Err(Error::Config(format!(
                "ambiguous sample `{stem}`: both {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Indexes a dataset directory, checking that every scan has both masks with
/// matching dimensions. Ids are sorted lexicographically.
pub fn load_dataset(root: &Path) -> Result<DatasetIndex> {
    let scans = list_images(&root.join(SCANS))?;
    let lumen = list_images(&root.join(LUMEN))?;
    let media = list_images(&root.join(MEDIA))?;
    if scans.is_empty() {
        return Err(Error::EmptyDataset(root.join(SCANS).display().to_string()));
    }
    for (kind, dir, masks) in [("lumen", LUMEN, &lumen), ("media", MEDIA, &media)] {
        if let Some(orphan) = masks.keys().find(|id| !scans.contains_key(*id)) {
            return Err(Error::MissingCounterpart {
                id: orphan.clone(),
                kind: "scan",
                dir: root.join(SCANS),
            });
        }
        if let Some(id) = scans.keys().find(|id| !masks.contains_key(*id)) {
            return Err(Error::MissingCounterpart {
                id: id.clone(),
                kind,
                dir: root.join(dir),
            });
        }
    }
    for (id, scan_path) in &scans {
        let (sw, sh) = dims(scan_path)?;
        for (what, path) in [("lumen mask", &lumen[id]), ("media mask", &media[id])] {
            let (w, h) = dims(path)?;
            if (w, h) != (sw, sh) {
                return Err(Error::SampleDims {
                    id: id.clone(),
                    what,
                    found_h: h as usize,
                    found_w: w as usize,
                    scan_h: sh as usize,
                    scan_w: sw as usize,
                });
            }
        }
    }
    Ok(DatasetIndex::on_disk(
        root.to_path_buf(),
        scans.into_keys().collect(),
        Role::Train,
    ))
}

fn dims(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|e| unreadable(path, e))
}

fn find(dir: &Path, id: &str) -> Result<PathBuf> {
    EXTENSIONS
        .iter()
        .map(|e| dir.join(format!("{id}.{e}")))
        .find(|p| p.is_file())
        .ok_or_else(|| unreadable(&dir.join(id), "file not found"))
}

pub(super) fn load_sample(root: &Path, id: &str) -> Result<Sample> {
    let scan = normalize(&read_gray8(&find(&root.join(SCANS), id)?)?);
    let lumen = read_mask(&find(&root.join(LUMEN), id)?)?;
    let media = read_mask(&find(&root.join(MEDIA), id)?)?;
    Sample::new(id.to_string(), scan, lumen, media)
}

pub fn read_gray8(path: &Path) -> Result<RawImage> {
    let img = image::open(path).map_err(|e| unreadable(path, e))?.to_luma8();
    Ok(RawImage {
        height: img.height() as usize,
        width: img.width() as usize,
        data: img.into_raw(),
    })
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    Ok(mask_from_raw(&read_gray8(path)?, MASK_THRESHOLD))
}

fn save(path: &Path, raw: RawImage) -> Result<()> {
    let img = Luma8::from_raw(raw.width as u32, raw.height as u32, raw.data)
        .expect("buffer matches dims");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| unreadable(path, e))
}

/// Mask as an 8-bit PNG with levels 0 and 255.
pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    save(
        path,
        RawImage {
            height: mask.height(),
            width: mask.width(),
            data: mask.bits().iter().map(|&b| b * 255).collect(),
        },
    )
}

pub fn write_gray_png(path: &Path, img: &GrayImage) -> Result<()> {
    save(path, img.to_raw())
}

/// Writes samples in the layout [`load_dataset`] reads.
pub fn write_dataset(samples: &[Sample], root: &Path) -> Result<()> {
    for d in [SCANS, LUMEN, MEDIA] {
        std::fs::create_dir_all(root.join(d))?;
    }
    for s in samples {
        let name = format!("{}.png", s.id);
        write_gray_png(&root.join(SCANS).join(&name), &s.scan)?;
        write_mask_png(&root.join(LUMEN).join(&name), &s.lumen)?;
        write_mask_png(&root.join(MEDIA).join(&name), &s.media)?;
    }
    Ok(())
}
