use std::path::Path;

use image::{Rgb, RgbImage};

use crate::diffusion::LatentImage;
use crate::error::{Error, Result};

/// Maps the first three channels of a latent to 8-bit RGB, min-max scaled per
/// image. Latents with fewer channels repeat their last channel.
pub fn latent_to_rgb(latent: &LatentImage) -> RgbImage {
    let [c, h, w] = latent.shape();
    let data = latent.data();
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = if hi > lo { hi - lo } else { 1.0 };
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [0, 1, 2].map(|k| {
                let ch = k.min(c - 1);
                (((data[[ch, y, x]] - lo) / range) * 255.0).round() as u8
            });
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img
}

/// Writes latents as a PNG grid, each tile upscaled by `zoom`.
pub fn write_image_grid(
    path: &Path,
    latents: &[LatentImage],
    cols: usize,
    zoom: u32,
) -> Result<()> {
    if latents.is_empty() || cols == 0 || zoom == 0 {
        return Err(Error::config(
            "grid",
            "need at least one image, one column and zoom >= 1",
        ));
    }
    let (h, w) = latents[0].spatial();
    let (tw, th) = (w as u32 * zoom, h as u32 * zoom);
    let rows = latents.len().div_ceil(cols);
    let mut canvas = RgbImage::new(tw * cols as u32, th * rows as u32);
    for (i, latent) in latents.iter().enumerate() {
        if latent.spatial() != (h, w) {
            return Err(Error::shape(
                "grid tile",
                &[h, w],
                &[latent.spatial().0, latent.spatial().1],
            ));
        }
        let tile = latent_to_rgb(latent);
        let (ox, oy) = ((i % cols) as u32 * tw, (i / cols) as u32 * th);
        for y in 0..th {
            for x in 0..tw {
                canvas.put_pixel(ox + x, oy + y, *tile.get_pixel(x / zoom, y / zoom));
            }
        }
    }
    canvas
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let l = LatentImage::filled([4, 8, 8], 0.0);
        write_image_grid(&path, &[l.clone(), l.clone(), l], 2, 4).unwrap();
        let img = image::open(&path).unwrap();
        assert_eq!((img.width(), img.height()), (64, 64));
    }
}
