//! Synthetic long-range task: the label says whether the marker patches in
//! the top-left and bottom-right corners carry the same colour. Either marker
//! alone is uninformative, so a model must relate the two ends of the
//! sequence.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::finetune::{Dataset, Sample};
use super::manifest::{write_manifest, Label, StudyRecord, TaskKind};
use crate::error::{Error, Result};
use crate::image::{raster_patch_matrix, PatchGrid, RasterImage};

const COLOURS: [[f32; 3]; 2] = [[230.0, 30.0, 30.0], [30.0, 30.0, 230.0]];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkerTask {
    pub resolution: usize,
    pub patch_size: usize,
    /// Side of each square marker, in patches.
    pub marker: usize,
    /// Background pixels are uniform in `128 ± noise`.
    pub noise: f32,
    /// Each marker channel is shifted by one uniform draw in `± jitter`.
    pub jitter: f32,
}

impl Default for MarkerTask {
    fn default() -> Self {
        MarkerTask {
            resolution: 512,
            patch_size: 32,
            marker: 4,
            noise: 4.0,
            jitter: 40.0,
        }
    }
}

impl MarkerTask {
    pub fn grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(self.resolution, self.resolution, self.patch_size)
    }

    /// One image with colour indices `a` (top-left) and `b` (bottom-right).
    pub fn image<R: Rng>(&self, a: usize, b: usize, rng: &mut R) -> RasterImage {
        let (s, p) = (self.resolution, self.patch_size);
        let mut data = Vec::with_capacity(s * s * 3);
        for _ in 0..s * s * 3 {
            let v: f32 = 128.0 + rng.gen_range(-self.noise..=self.noise);
            data.push(v.round());
        }
        let mut img = RasterImage {
            width: s,
            height: s,
            channels: 3,
            data,
        };
        let m = (self.marker * p).min(s);
        let a = self.shade(a, rng);
        let b = self.shade(b, rng);
        paint(&mut img, 0, 0, m, a);
        paint(&mut img, s - m, s - m, m, b);
        img
    }

    fn shade<R: Rng>(&self, colour: usize, rng: &mut R) -> [f32; 3] {
        COLOURS[colour].map(|c| {
            let v: f32 = c + rng.gen_range(-self.jitter..=self.jitter);
            v.round()
        })
    }

    /// `n` images with independent uniform marker colours and their labels
    /// (`1` when the colours match).
    pub fn generate(&self, n: usize, seed: u64) -> Vec<(RasterImage, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let a = rng.gen_range(0..2);
                let b = rng.gen_range(0..2);
                (self.image(a, b, &mut rng), usize::from(a == b))
            })
            .collect()
    }

    /// In-memory dataset, skipping the file round trip.
    pub fn dataset(&self, n: usize, seed: u64) -> Result<Dataset> {
        let grid = self.grid()?;
        let samples = self
            .generate(n, seed)
            .into_iter()
            .enumerate()
            .map(|(i, (img, label))| {
                Ok(Sample {
                    id: format!("marker-{i:04}"),
                    patches: raster_patch_matrix(&img, self.patch_size)?,
                    grid: (grid.rows, grid.cols),
                    label: Label::Class(label),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(TaskKind::Subtype, samples, None)
    }

    /// Writes `n` PPM images and a subtyping manifest into `dir`; returns the
    /// manifest path.
    pub fn write(&self, dir: &Path, n: usize, seed: u64) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut records = Vec::with_capacity(n);
        for (i, (img, label)) in self.generate(n, seed).into_iter().enumerate() {
            let name = format!("marker-{i:04}.ppm");
            img.write_pnm(dir.join(&name))?;
            records.push(StudyRecord {
                id: format!("marker-{i:04}"),
                path: PathBuf::from(name),
                label: Label::Class(label),
                fold: None,
            });
        }
        let manifest = dir.join("manifest.csv");
        let text = format!("# id,path,label\n{}", write_manifest(&records));
        std::fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
        Ok(manifest)
    }
}

fn paint(img: &mut RasterImage, x0: usize, y0: usize, p: usize, colour: [f32; 3]) {
    for y in y0..y0 + p {
        for x in x0..x0 + p {
            let i = (y * img.width + x) * 3;
            img.data[i..i + 3].copy_from_slice(&colour);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markers_sit_in_opposite_corners() {
        let t = MarkerTask {
            resolution: 64,
            patch_size: 16,
            marker: 1,
            noise: 10.0,
            jitter: 0.0,
        };
        let img = t.image(0, 1, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(img.pixel(3, 3, 0), 230.0);
        assert_eq!(img.pixel(60, 60, 2), 230.0);
        assert!((118.0..=138.0).contains(&img.pixel(30, 30, 1)));
    }

    #[test]
    fn labels_are_balanced_enough() {
        let t = MarkerTask {
            resolution: 64,
            patch_size: 32,
            marker: 1,
            noise: 10.0,
            jitter: 0.0,
        };
        let d = t.dataset(40, 1).unwrap();
        let pos = d.strata().iter().filter(|&&s| s == 1).count();
        assert!((10..=30).contains(&pos));
        assert_eq!(d.samples[0].patches.shape(), &[4, 3072]);
    }
}
