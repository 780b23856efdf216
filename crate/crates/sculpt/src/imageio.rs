//! 8-bit PNG I/O for rendered images (H x W x 3 rasters in [0,1]).

use std::path::Path;

use crate::error::Result;
use crate::render::RenderOutput;

pub fn save_rgb(path: &Path, rgb: &[f64], width: usize, height: usize) -> Result<()> {
    let mut img = image::RgbImage::new(width as u32, height as u32);
    for row in 0..height {
        for col in 0..width {
            let base = (row * width + col) * 3;
            let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(
                col as u32,
                row as u32,
                image::Rgb([q(rgb[base]), q(rgb[base + 1]), q(rgb[base + 2])]),
            );
        }
    }
    img.save(path)?;
    Ok(())
}

pub fn load_rgb(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Vec::with_capacity(w * h * 3);
    for row in 0..h {
        for col in 0..w {
            let p = img.get_pixel(col as u32, row as u32).0;
            out.extend(p.iter().map(|&v| v as f64 / 255.0));
        }
    }
    Ok((out, w, h))
}

pub fn save_alpha(path: &Path, alpha: &[bool], width: usize, height: usize) -> Result<()> {
    let mut img = image::GrayImage::new(width as u32, height as u32);
    for row in 0..height {
        for col in 0..width {
            img.put_pixel(
                col as u32,
                row as u32,
                image::Luma([if alpha[row * width + col] { 255 } else { 0 }]),
            );
        }
    }
    img.save(path)?;
    Ok(())
}

pub fn load_alpha(path: &Path) -> Result<(Vec<bool>, usize, usize)> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            out.push(img.get_pixel(col as u32, row as u32).0[0] >= 128);
        }
    }
    Ok((out, w, h))
}

/// Saves a render as `<path>` plus a `<stem>_alpha.png` coverage sidecar.
pub fn save_render(path: &Path, out: &RenderOutput) -> Result<()> {
    save_rgb(path, &out.rgb, out.width, out.height)?;
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let alpha_path = path.with_file_name(format!("{stem}_alpha.png"));
    save_alpha(&alpha_path, &out.alpha, out.width, out.height)
}

pub fn alpha_sidecar_path(image_path: &Path) -> std::path::PathBuf {
    let stem = image_path.file_stem().unwrap_or_default().to_string_lossy();
    image_path.with_file_name(format!("{stem}_alpha.png"))
}
