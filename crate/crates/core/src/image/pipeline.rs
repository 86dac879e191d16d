//! Image → embedded patch sequence: resize, patchify, project and add
//! interpolated positions.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use super::patch::{
    embed_patches, patch_matrix, patchify, raster_patch_matrix, Embedder, PatchGrid,
};
use super::posembed::{interpolate_pos_embed, PosEmbedTable};
use super::resize::{resize_bilinear, resize_raster};
use super::tiled::TiledImage;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Embedded patches plus the grid they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    pub embeddings: Tensor,
    pub grid: PatchGrid,
}

impl PatchSequence {
    pub fn len(&self) -> usize {
        self.grid.tokens()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineConfig {
    /// Side of the square image the encoder sees.
    pub resolution: usize,
    pub patch_size: usize,
    /// Directory for resized intermediates; the system temp dir when unset.
    pub scratch_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn new(resolution: usize, patch_size: usize) -> Result<Self> {
        let c = PipelineConfig {
            resolution,
            patch_size,
            scratch_dir: None,
        };
        c.grid()?;
        Ok(c)
    }

    pub fn grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(self.resolution, self.resolution, self.patch_size)
    }
}

/// What encoding an image would produce, from headers alone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodePlan {
    pub source: (usize, usize),
    pub grid: PatchGrid,
    pub needs_resize: bool,
}

impl EncodePlan {
    pub fn tokens(&self) -> usize {
        self.grid.tokens()
    }
}

pub fn plan(img: &TiledImage, config: &PipelineConfig) -> Result<EncodePlan> {
    Ok(EncodePlan {
        source: (img.width(), img.height()),
        grid: config.grid()?,
        needs_resize: img.width() != config.resolution || img.height() != config.resolution,
    })
}

/// A file removed on drop.
struct Scratch(PathBuf);

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

fn scratch_path(config: &PipelineConfig) -> PathBuf {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let dir = config
        .scratch_dir
        .clone()
        .unwrap_or_else(std::env::temp_dir);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    dir.join(format!("longvit-{}-{n}.lvti", std::process::id()))
}

/// Opens `path` and resizes it to the configured resolution if needed, then
/// hands the ready image to `f`.
pub fn with_prepared<T>(
    path: &Path,
    config: &PipelineConfig,
    f: impl FnOnce(&TiledImage) -> Result<T>,
) -> Result<T> {
    let img = TiledImage::open(path)?;
    let p = plan(&img, config)?;
    if !p.needs_resize {
        return f(&img);
    }
    let scratch = Scratch(scratch_path(config));
    let resized = resize_bilinear(
        &img,
        config.resolution,
        config.resolution,
        config.patch_size,
        &scratch.0,
    )?;
    f(&resized)
}

fn check_model(embedder: &Embedder, pos: &PosEmbedTable, grid: PatchGrid) -> Result<()> {
    if embedder.patch_len() != grid.patch_len() {
        return Err(Error::config(format!(
            "embedder expects {}-value patches, patch size {} gives {}",
            embedder.patch_len(),
            grid.patch_size,
            grid.patch_len()
        )));
    }
    if pos.hidden() != embedder.hidden() {
        return Err(Error::config(
            "position table and embedder disagree on hidden size",
        ));
    }
    Ok(())
}

/// Streaming encode: only one tile-row band of pixels and the `N × d` output
/// are resident.
pub fn encode_image(
    path: &Path,
    config: &PipelineConfig,
    embedder: &Embedder,
    pos: &PosEmbedTable,
) -> Result<PatchSequence> {
    with_prepared(path, config, |img| {
        let patches = patchify(img, config.patch_size)?;
        let grid = patches.grid();
        check_model(embedder, pos, grid)?;
        let d = embedder.hidden();
        let mut data = vec![0.0; grid.tokens() * d];
        for (row, patch) in data.chunks_mut(d).zip(patches) {
            embedder.embed_one(&patch?, row)?;
        }
        let positions = interpolate_pos_embed(pos, (grid.rows, grid.cols))?;
        for (v, p) in data.iter_mut().zip(positions.data()) {
            *v += p;
        }
        Ok(PatchSequence {
            embeddings: Tensor::new(vec![grid.tokens(), d], data)?,
            grid,
        })
    })
}

/// Non-streaming reference: loads the whole image, resizes in memory and
/// embeds all patches with one matrix product.
pub fn encode_image_in_memory(
    path: &Path,
    config: &PipelineConfig,
    embedder: &Embedder,
    pos: &PosEmbedTable,
) -> Result<PatchSequence> {
    let img = TiledImage::open(path)?;
    let mut raster = img.to_raster()?;
    if raster.width != config.resolution || raster.height != config.resolution {
        raster = resize_raster(
            &raster,
            config.resolution,
            config.resolution,
            config.patch_size,
        )?;
    }
    let grid = PatchGrid::new(raster.width, raster.height, config.patch_size)?;
    check_model(embedder, pos, grid)?;
    let patches = raster_patch_matrix(&raster, config.patch_size)?;
    let mut emb = embed_patches(&patches, &embedder.weight, &embedder.bias)?;
    let positions = interpolate_pos_embed(pos, (grid.rows, grid.cols))?;
    for (v, p) in emb.data_mut().iter_mut().zip(positions.data()) {
        *v += p;
    }
    Ok(PatchSequence {
        embeddings: emb,
        grid,
    })
}

/// Patches of the prepared image as an `N × 3P²` matrix, for training.
pub fn load_patches(path: &Path, config: &PipelineConfig) -> Result<Tensor> {
    with_prepared(path, config, |img| patch_matrix(img, config.patch_size))
}
