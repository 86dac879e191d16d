//! Bilinear resampling with half-pixel centres and edge clamping.

use std::path::Path;

use super::tiled::{RasterImage, RowReader, SampleFormat, TiledImage, TiledWriter};
use crate::error::{Error, Result};

/// Source taps `(i0, i1, frac)` for every output coordinate along one axis.
pub fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// One output row from two source rows.
fn blend_row(
    top: &[f32],
    bottom: &[f32],
    fy: f64,
    xtaps: &[(usize, usize, f64)],
    channels: usize,
    out: &mut [f32],
) {
    for (x, &(x0, x1, fx)) in xtaps.iter().enumerate() {
        for c in 0..channels {
            let t = lerp(
                top[x0 * channels + c] as f64,
                top[x1 * channels + c] as f64,
                fx,
            );
            let b = lerp(
                bottom[x0 * channels + c] as f64,
                bottom[x1 * channels + c] as f64,
                fx,
            );
            out[x * channels + c] = lerp(t, b, fy) as f32;
        }
    }
}

fn check_target(target_w: usize, target_h: usize, patch_size: usize) -> Result<()> {
    if target_w == 0 || target_h == 0 || patch_size == 0 {
        return Err(Error::config(
            "resize target and patch size must be positive",
        ));
    }
    if !target_w.is_multiple_of(patch_size) || !target_h.is_multiple_of(patch_size) {
        return Err(Error::config(format!(
            "target {target_w}×{target_h} is not a multiple of patch size {patch_size}"
        )));
    }
    Ok(())
}

/// Streams `img` through a bilinear resize into a new `LVTI` file at `out`.
/// Holds at most one source tile-row band and one output band in memory.
pub fn resize_bilinear(
    img: &TiledImage,
    target_w: usize,
    target_h: usize,
    patch_size: usize,
    out: &Path,
) -> Result<TiledImage> {
    check_target(target_w, target_h, patch_size)?;
    let c = img.channels();
    let xtaps = axis_taps(img.width(), target_w);
    let ytaps = axis_taps(img.height(), target_h);
    let mut writer = TiledWriter::create(
        out,
        target_w,
        target_h,
        c,
        img.tile_size(),
        SampleFormat::F32,
    )?;
    let mut reader = RowReader::new(img);
    let mut band = Vec::new();
    let mut y = 0;
    let stride = target_w * c;
    while y < target_h {
        let rows = writer.next_band_rows();
        band.clear();
        band.resize(rows * stride, 0.0);
        for (r, out_row) in band.chunks_mut(stride).enumerate() {
            let (y0, y1, fy) = ytaps[y + r];
            let (top, bottom) = reader.row_pair(y0, y1)?;
            blend_row(top, bottom, fy, &xtaps, c, out_row);
        }
        writer.write_band(&band)?;
        y += rows;
    }
    writer.finish()
}

/// In-memory counterpart of [`resize_bilinear`].
pub fn resize_raster(
    img: &RasterImage,
    target_w: usize,
    target_h: usize,
    patch_size: usize,
) -> Result<RasterImage> {
    check_target(target_w, target_h, patch_size)?;
    let c = img.channels;
    let xtaps = axis_taps(img.width, target_w);
    let ytaps = axis_taps(img.height, target_h);
    let stride_in = img.width * c;
    let stride = target_w * c;
    let mut data = vec![0f32; target_h * stride];
    for (y, out_row) in data.chunks_mut(stride).enumerate() {
        let (y0, y1, fy) = ytaps[y];
        blend_row(
            &img.data[y0 * stride_in..(y0 + 1) * stride_in],
            &img.data[y1 * stride_in..(y1 + 1) * stride_in],
            fy,
            &xtaps,
            c,
            out_row,
        );
    }
    Ok(RasterImage {
        width: target_w,
        height: target_h,
        channels: c,
        data,
    })
}
