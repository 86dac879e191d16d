use rand::Rng;

use super::tiled::{RasterImage, RowReader, TiledImage};
use crate::error::{Error, Result};
use crate::init::trunc_normal;
use crate::tensor::{kernels, Tensor};

/// Per-channel input normalization `(x/255 − MEAN) / STD`.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.5;

/// Patch lattice over an image whose sides are multiples of the patch size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub patch_size: usize,
}

impl PatchGrid {
    pub fn new(width: usize, height: usize, patch_size: usize) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::config("patch size must be positive"));
        }
        if width < patch_size
            || height < patch_size
            || !width.is_multiple_of(patch_size)
            || !height.is_multiple_of(patch_size)
        {
            return Err(Error::config(format!(
                "{width}×{height} image is not divisible into {patch_size}×{patch_size} patches"
            )));
        }
        Ok(PatchGrid {
            rows: height / patch_size,
            cols: width / patch_size,
            patch_size,
        })
    }

    pub fn tokens(&self) -> usize {
        self.rows * self.cols
    }

    /// Length of one flattened patch (three channels).
    pub fn patch_len(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }
}

#[inline]
fn normalize(v: f32) -> f64 {
    (v as f64 / 255.0 - PIXEL_MEAN) / PIXEL_STD
}

/// Flattens patch `col` of the band whose rows are supplied by `row`, laid out
/// channel-major `(c, y, x)`. Grayscale is replicated to three channels.
fn flatten_patch<'r>(
    rows: impl Fn(usize) -> &'r [f32],
    col: usize,
    p: usize,
    channels: usize,
    out: &mut [f64],
) {
    for y in 0..p {
        let row = rows(y);
        for x in 0..p {
            let px = (col * p + x) * channels;
            for c in 0..3 {
                let src = if channels == 1 { 0 } else { c };
                out[c * p * p + y * p + x] = normalize(row[px + src]);
            }
        }
    }
}

/// Row-major stream of normalized patches, each `3·P²` values. Reads one
/// tile-row band at a time.
pub struct Patches<'a> {
    reader: RowReader<'a>,
    grid: PatchGrid,
    channels: usize,
    band: Vec<Vec<f32>>,
    band_row: Option<usize>,
    next: usize,
}

/// Cuts `img` into `patch_size` patches in row-major scan order.
pub fn patchify(img: &TiledImage, patch_size: usize) -> Result<Patches<'_>> {
    let grid = PatchGrid::new(img.width(), img.height(), patch_size)?;
    Ok(Patches {
        reader: RowReader::new(img),
        grid,
        channels: img.channels(),
        band: Vec::new(),
        band_row: None,
        next: 0,
    })
}

impl Patches<'_> {
    pub fn grid(&self) -> PatchGrid {
        self.grid
    }

    fn fill_band(&mut self, pr: usize) -> Result<()> {
        if self.band_row == Some(pr) {
            return Ok(());
        }
        let p = self.grid.patch_size;
        self.band.clear();
        for y in pr * p..(pr + 1) * p {
            self.band.push(self.reader.row(y)?.to_vec());
        }
        self.band_row = Some(pr);
        Ok(())
    }
}

impl Iterator for Patches<'_> {
    type Item = Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.grid.tokens() {
            return None;
        }
        let (pr, pc) = (self.next / self.grid.cols, self.next % self.grid.cols);
        self.next += 1;
        if let Err(e) = self.fill_band(pr) {
            return Some(Err(e));
        }
        let mut out = vec![0.0; self.grid.patch_len()];
        let band = &self.band;
        flatten_patch(
            |y| &band[y],
            pc,
            self.grid.patch_size,
            self.channels,
            &mut out,
        );
        Some(Ok(out))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.grid.tokens() - self.next;
        (left, Some(left))
    }
}

/// All patches of `img` as an `N × 3P²` matrix.
pub fn patch_matrix(img: &TiledImage, patch_size: usize) -> Result<Tensor> {
    let patches = patchify(img, patch_size)?;
    let grid = patches.grid();
    let mut data = Vec::with_capacity(grid.tokens() * grid.patch_len());
    for p in patches {
        data.extend(p?);
    }
    Tensor::new(vec![grid.tokens(), grid.patch_len()], data)
}

/// In-memory counterpart of [`patch_matrix`].
pub fn raster_patch_matrix(img: &RasterImage, patch_size: usize) -> Result<Tensor> {
    let grid = PatchGrid::new(img.width, img.height, patch_size)?;
    let stride = img.width * img.channels;
    let len = grid.patch_len();
    let mut data = vec![0.0; grid.tokens() * len];
    for (i, out) in data.chunks_mut(len).enumerate() {
        let (pr, pc) = (i / grid.cols, i % grid.cols);
        let base = pr * patch_size;
        flatten_patch(
            |y| &img.data[(base + y) * stride..(base + y + 1) * stride],
            pc,
            patch_size,
            img.channels,
            out,
        );
    }
    Tensor::new(vec![grid.tokens(), len], data)
}

/// Linear patch projection `(3P²) → d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedder {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Embedder {
    pub fn zeros(patch_len: usize, d: usize) -> Self {
        Embedder {
            weight: Tensor::zeros(&[patch_len, d]),
            bias: Tensor::zeros(&[d]),
        }
    }

    pub fn random<R: Rng>(patch_len: usize, d: usize, std: f64, rng: &mut R) -> Self {
        Embedder {
            weight: trunc_normal(&[patch_len, d], std, rng),
            bias: Tensor::zeros(&[d]),
        }
    }

    pub fn patch_len(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.weight.cols()
    }

    /// `patch · W + b` for one flattened patch.
    pub fn embed_one(&self, patch: &[f64], out: &mut [f64]) -> Result<()> {
        if patch.len() != self.patch_len() || out.len() != self.hidden() {
            return Err(Error::dim(format!(
                "patch of {} values for an embedder expecting {}",
                patch.len(),
                self.patch_len()
            )));
        }
        out.fill(0.0);
        kernels::matvec_row(patch, self.weight.data(), self.hidden(), out);
        for (o, b) in out.iter_mut().zip(self.bias.data()) {
            *o += b;
        }
        Ok(())
    }
}

/// Row `i` of the result is `patches[i] · W + b`.
pub fn embed_patches(patches: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if weight.rank() != 2 || patches.cols() != weight.shape()[0] || bias.len() != weight.cols() {
        return Err(Error::dim(format!(
            "patches {:?}, weight {:?}, bias {:?}",
            patches.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let mut out = kernels::matmul(patches, weight)?;
    let d = weight.cols();
    for row in out.data_mut().chunks_mut(d) {
        for (o, b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts() {
        for (res, n) in [
            (1024, 1024),
            (4096, 16_384),
            (8192, 65_536),
            (16_384, 262_144),
            (32_768, 1_048_576),
        ] {
            assert_eq!(PatchGrid::new(res, res, 32).unwrap().tokens(), n);
        }
        assert!(PatchGrid::new(100, 64, 32).is_err());
        assert!(PatchGrid::new(16, 16, 32).is_err());
    }

    #[test]
    fn top_left_patch_is_first() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..64 * 64 * 3).map(|i| (i % 251) as f32).collect();
        let img = RasterImage {
            width: 64,
            height: 64,
            channels: 3,
            data,
        };
        img.write_pnm(dir.path().join("p.ppm")).unwrap();
        let t = TiledImage::open(dir.path().join("p.ppm")).unwrap();
        let patches: Vec<Vec<f64>> = patchify(&t, 32).unwrap().map(|p| p.unwrap()).collect();
        assert_eq!(patches.len(), 4);
        for y in 0..32 {
            for x in 0..32 {
                for c in 0..3 {
                    let v = img.pixel(x, y, c) as f64 / 255.0;
                    assert_eq!(patches[0][c * 1024 + y * 32 + x], (v - 0.5) / 0.5);
                    let v = img.pixel(32 + x, 32 + y, c) as f64 / 255.0;
                    assert_eq!(patches[3][c * 1024 + y * 32 + x], (v - 0.5) / 0.5);
                }
            }
        }
    }

    #[test]
    fn embed_cases() {
        let patches = Tensor::zeros(&[3, 12]);
        let z =
            embed_patches(&patches, &Tensor::full(&[12, 4], 0.3), &Tensor::zeros(&[4])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let mut w = Tensor::zeros(&[12, 4]);
        for i in 0..4 {
            w.data_mut()[i * 4 + i] = 1.0;
        }
        let p = Tensor::new(vec![1, 12], (0..12).map(f64::from).collect()).unwrap();
        let e = embed_patches(&p, &w, &Tensor::zeros(&[4])).unwrap();
        assert_eq!(e.data(), &[0.0, 1.0, 2.0, 3.0]);
        assert!(embed_patches(&p, &Tensor::zeros(&[11, 4]), &Tensor::zeros(&[4])).is_err());
    }
}
