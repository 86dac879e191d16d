//! Reading very large images and turning them into embedded patch sequences.

mod patch;
mod pipeline;
mod posembed;
mod resize;
mod tiled;

pub use patch::{
    embed_patches, patch_matrix, patchify, raster_patch_matrix, Embedder, PatchGrid, Patches,
    PIXEL_MEAN, PIXEL_STD,
};
pub use pipeline::{
    encode_image, encode_image_in_memory, load_patches, plan, with_prepared, EncodePlan,
    PatchSequence, PipelineConfig,
};
pub use posembed::{interpolate_pos_embed, pos_stencil, PosEmbedTable, Stencil};
pub use resize::{axis_taps, resize_bilinear, resize_raster};
pub use tiled::{
    create_sparse_lvti, write_pnm, RasterImage, RowReader, SampleFormat, Tile, TiledImage,
    TiledWriter, DEFAULT_TILE_SIZE, LVTI_MAGIC,
};
