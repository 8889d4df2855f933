//! File formats: 8-bit grayscale images, `row,col` center lists, shape directories.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};

use crate::detect_eval::Center;
use crate::error::{Error, Result};
use crate::numerics::Grid2D;
use crate::shapes::{Shape, ShapeKind, ShapeSet};

const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "bmp", "tif", "tiff", "jpg", "jpeg"];

/// Reads any supported image as luminance scaled to [0, 1].
pub fn read_gray(path: &Path) -> Result<Grid2D> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    let values = luma.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    Grid2D::new(h as usize, w as usize, values)
}

/// Writes a grid as an 8-bit grayscale image; values are clamped to [0, 1].
pub fn write_gray(path: &Path, grid: &Grid2D) -> Result<()> {
    let (h, w) = grid.dims();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = grid.get(y as usize, x as usize).clamp(0.0, 1.0);
        Luma([(v * 255.0).round() as u8])
    });
    ensure_parent(path)?;
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses `row,col` lines. Blank lines are skipped, as is a leading header
/// line that does not parse as numbers.
pub fn parse_centers(text: &str, path: &Path) -> Result<Vec<Center>> {
    let mut out = Vec::new();
    let mut first = true;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed = line.split_once(',').and_then(|(r, c)| {
            Some((r.trim().parse::<usize>().ok()?, c.trim().parse::<usize>().ok()?))
        });
        match parsed {
            Some(rc) => out.push(rc),
            None if first && !line.starts_with(|c: char| c.is_ascii_digit()) => {}
            None => {
                return Err(Error::parse(
                    path,
                    format!("line {}: expected `row,col`, got {line:?}", lineno + 1),
                ))
            }
        }
        first = false;
    }
    Ok(out)
}

pub fn read_centers(path: &Path) -> Result<Vec<Center>> {
    parse_centers(&read_text(path)?, path)
}

pub fn format_centers(centers: &[Center]) -> String {
    let mut s = String::from("row,col\n");
    for (r, c) in centers {
        s.push_str(&format!("{r},{c}\n"));
    }
    s
}

pub fn write_centers(path: &Path, centers: &[Center]) -> Result<()> {
    write_text(path, &format_centers(centers))
}

/// Image files in `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false);
        if path.is_file() && is_image {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Loads one shape per image file, in file-name order. Expert and reference
/// shapes are binarized at 0.5.
pub fn read_shape_dir(dir: &Path, kind: ShapeKind) -> Result<ShapeSet> {
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(Error::invalid(format!(
            "no shape images in {}",
            dir.display()
        )));
    }
    let shapes = files
        .iter()
        .map(|p| {
            let g = read_gray(p)?;
            let g = match kind {
                ShapeKind::Learnable => g,
                _ => g.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }),
            };
            Shape::new(g).map_err(|e| Error::parse(p, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    ShapeSet::new(kind, shapes)
}

/// Writes `shape_000.png`, `shape_001.png`, ...
pub fn write_shape_dir(dir: &Path, set: &ShapeSet) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    set.shapes()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = dir.join(format!("shape_{i:03}.png"));
            write_gray(&p, s)?;
            Ok(p)
        })
        .collect()
}
