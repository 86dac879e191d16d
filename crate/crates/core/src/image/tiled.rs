//! Random-access tiled images backed by a file handle.
//!
//! Two on-disk layouts are read: binary PGM/PPM (`P5`/`P6`, maxval ≤ 255),
//! addressed as virtual tiles over raster rows, and `LVTI`:
//!
//! ```text
//! "LVTI" | width u64 | height u64 | channels u32 | tile_size u32 | sample u32
//! tiles in row-major tile order, each tile_size² pixels with interleaved
//! channels; edge tiles are zero-padded to full size.
//! ```
//!
//! `sample` is 1 for u8 and 4 for little-endian f32. Samples are exposed as
//! f32 on the 0–255 scale in both cases.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const LVTI_MAGIC: &[u8; 4] = b"LVTI";
const LVTI_HEADER: u64 = 32;
pub const DEFAULT_TILE_SIZE: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleFormat {
    U8,
    F32,
}

impl SampleFormat {
    fn bytes(self) -> usize {
        match self {
            SampleFormat::U8 => 1,
            SampleFormat::F32 => 4,
        }
    }

    fn code(self) -> u32 {
        self.bytes() as u32
    }

    fn decode(self, raw: &[u8], out: &mut Vec<f32>) {
        match self {
            SampleFormat::U8 => out.extend(raw.iter().map(|&b| b as f32)),
            SampleFormat::F32 => out.extend(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
            ),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Layout {
    Pnm { data_offset: u64 },
    Lvti { sample: SampleFormat },
}

/// An image whose pixels stay on disk until requested tile by tile.
#[derive(Debug)]
pub struct TiledImage {
    path: PathBuf,
    file: File,
    width: usize,
    height: usize,
    channels: usize,
    tile_size: usize,
    layout: Layout,
}

/// A rectangular block of pixels, channels interleaved, values 0–255.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

fn parse_pnm_header(head: &[u8], path: &Path) -> Result<(usize, usize, usize, u64)> {
    let bad = |m: &str| Error::format(path, m);
    let channels = match head.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(bad("not a binary PGM/PPM")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match head.get(pos) {
                Some(b'#') => {
                    while head.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while head.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&head[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header number"))?;
    }
    if !head.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing whitespace after maxval"));
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit samples are supported"));
    }
    if w == 0 || h == 0 {
        return Err(bad("empty image"));
    }
    Ok((w, h, channels, pos as u64 + 1))
}

impl TiledImage {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let mut head = vec![0u8; 512.min(len as usize)];
        file.read_exact_at(&mut head, 0)
            .map_err(|e| Error::io(&path, e))?;
        let img = if head.starts_with(LVTI_MAGIC) {
            if head.len() < LVTI_HEADER as usize {
                return Err(Error::format(&path, "truncated LVTI header"));
            }
            let u64_at = |o: usize| u64::from_le_bytes(head[o..o + 8].try_into().unwrap()) as usize;
            let u32_at = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().unwrap()) as usize;
            let sample = match u32_at(28) {
                1 => SampleFormat::U8,
                4 => SampleFormat::F32,
                s => return Err(Error::format(&path, format!("unknown sample code {s}"))),
            };
            TiledImage {
                width: u64_at(4),
                height: u64_at(12),
                channels: u32_at(20),
                tile_size: u32_at(24),
                layout: Layout::Lvti { sample },
                path,
                file,
            }
        } else {
            let (width, height, channels, data_offset) = parse_pnm_header(&head, &path)?;
            TiledImage {
                width,
                height,
                channels,
                tile_size: DEFAULT_TILE_SIZE,
                layout: Layout::Pnm { data_offset },
                path,
                file,
            }
        };
        if img.width == 0 || img.height == 0 || img.tile_size == 0 || !matches!(img.channels, 1 | 3)
        {
            return Err(Error::format(&img.path, "bad image geometry"));
        }
        if len < img.expected_len() {
            return Err(Error::format(
                &img.path,
                format!(
                    "file holds {len} bytes, geometry needs {}",
                    img.expected_len()
                ),
            ));
        }
        Ok(img)
    }

    fn expected_len(&self) -> u64 {
        match self.layout {
            Layout::Pnm { data_offset } => {
                data_offset + (self.width * self.height * self.channels) as u64
            }
            Layout::Lvti { sample } => {
                let tiles = (self.tiles_x() * self.tiles_y()) as u64;
                LVTI_HEADER
                    + tiles
                        * (self.tile_size * self.tile_size * self.channels * sample.bytes()) as u64
            }
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn tile_size(&self) -> usize {
        self.tile_size
    }

    pub fn tiles_x(&self) -> usize {
        self.width.div_ceil(self.tile_size)
    }

    pub fn tiles_y(&self) -> usize {
        self.height.div_ceil(self.tile_size)
    }

    fn read_at(&self, buf: &mut [u8], offset: u64) -> Result<()> {
        self.file
            .read_exact_at(buf, offset)
            .map_err(|e| Error::io(&self.path, e))
    }

    /// Reads tile `(tx, ty)`, clipped to the image bounds.
    pub fn read_tile(&self, tx: usize, ty: usize) -> Result<Tile> {
        if tx >= self.tiles_x() || ty >= self.tiles_y() {
            return Err(Error::contract(format!("tile ({tx}, {ty}) out of range")));
        }
        let ts = self.tile_size;
        let (x0, y0) = (tx * ts, ty * ts);
        let w = ts.min(self.width - x0);
        let h = ts.min(self.height - y0);
        let c = self.channels;
        let mut data = Vec::with_capacity(w * h * c);
        match self.layout {
            Layout::Pnm { data_offset } => {
                let mut raw = vec![0u8; w * c];
                for y in y0..y0 + h {
                    self.read_at(&mut raw, data_offset + ((y * self.width + x0) * c) as u64)?;
                    SampleFormat::U8.decode(&raw, &mut data);
                }
            }
            Layout::Lvti { sample } => {
                let sb = sample.bytes();
                let tile_bytes = ts * ts * c * sb;
                let base = LVTI_HEADER + ((ty * self.tiles_x() + tx) * tile_bytes) as u64;
                let mut raw = vec![0u8; tile_bytes];
                self.read_at(&mut raw, base)?;
                for row in raw.chunks_exact(ts * c * sb).take(h) {
                    sample.decode(&row[..w * c * sb], &mut data);
                }
            }
        }
        Ok(Tile {
            x0,
            y0,
            width: w,
            height: h,
            data,
        })
    }

    /// Full-width rows `[y0, y1)`, channels interleaved.
    pub fn read_rows(&self, y0: usize, y1: usize) -> Result<Vec<f32>> {
        if y0 >= y1 || y1 > self.height {
            return Err(Error::contract(format!(
                "row range {y0}..{y1} out of bounds"
            )));
        }
        let (w, c) = (self.width, self.channels);
        match self.layout {
            Layout::Pnm { data_offset } => {
                let mut raw = vec![0u8; (y1 - y0) * w * c];
                self.read_at(&mut raw, data_offset + (y0 * w * c) as u64)?;
                let mut out = Vec::with_capacity(raw.len());
                SampleFormat::U8.decode(&raw, &mut out);
                Ok(out)
            }
            Layout::Lvti { .. } => {
                let mut out = vec![0f32; (y1 - y0) * w * c];
                let ts = self.tile_size;
                for ty in y0 / ts..=(y1 - 1) / ts {
                    for tx in 0..self.tiles_x() {
                        let tile = self.read_tile(tx, ty)?;
                        let lo = y0.max(tile.y0);
                        let hi = y1.min(tile.y0 + tile.height);
                        for y in lo..hi {
                            let src = &tile.data[(y - tile.y0) * tile.width * c
                                ..(y - tile.y0 + 1) * tile.width * c];
                            let dst = ((y - y0) * w + tile.x0) * c;
                            out[dst..dst + src.len()].copy_from_slice(src);
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// Loads every pixel into memory.
    pub fn to_raster(&self) -> Result<RasterImage> {
        Ok(RasterImage {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.read_rows(0, self.height)?,
        })
    }
}

/// Access to full-width rows that keeps the two most recent tile-row bands.
pub struct RowReader<'a> {
    img: &'a TiledImage,
    bands: Vec<(usize, Vec<f32>)>,
}

impl<'a> RowReader<'a> {
    pub fn new(img: &'a TiledImage) -> Self {
        RowReader {
            img,
            bands: Vec::with_capacity(2),
        }
    }

    /// Makes the band holding `y` the most recently used one.
    fn load(&mut self, y: usize) -> Result<()> {
        let ts = self.img.tile_size;
        let start = y / ts * ts;
        if let Some(i) = self.bands.iter().position(|(a, _)| *a == start) {
            let b = self.bands.remove(i);
            self.bands.push(b);
            return Ok(());
        }
        let end = (start + ts).min(self.img.height);
        let data = self.img.read_rows(start, end)?;
        if self.bands.len() == 2 {
            self.bands.remove(0);
        }
        self.bands.push((start, data));
        Ok(())
    }

    fn cached(&self, y: usize) -> &[f32] {
        let stride = self.img.width * self.img.channels;
        let (a, data) = self
            .bands
            .iter()
            .find(|(a, d)| (*a..*a + d.len() / stride).contains(&y))
            .expect("band loaded");
        &data[(y - a) * stride..(y - a + 1) * stride]
    }

    /// Row `y`, channels interleaved.
    pub fn row(&mut self, y: usize) -> Result<&[f32]> {
        self.load(y)?;
        Ok(self.cached(y))
    }

    /// Rows `y0` and `y1` at once.
    pub fn row_pair(&mut self, y0: usize, y1: usize) -> Result<(&[f32], &[f32])> {
        self.load(y0)?;
        self.load(y1)?;
        Ok((self.cached(y0), self.cached(y1)))
    }
}

/// Streams an `LVTI` file one tile-row band at a time.
pub struct TiledWriter {
    path: PathBuf,
    out: BufWriter<File>,
    width: usize,
    height: usize,
    channels: usize,
    tile_size: usize,
    sample: SampleFormat,
    rows_written: usize,
}

impl TiledWriter {
    pub fn create(
        path: impl AsRef<Path>,
        width: usize,
        height: usize,
        channels: usize,
        tile_size: usize,
        sample: SampleFormat,
    ) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if width == 0 || height == 0 || tile_size == 0 || !matches!(channels, 1 | 3) {
            return Err(Error::config("bad tiled image geometry"));
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        let mut head = Vec::with_capacity(LVTI_HEADER as usize);
        head.extend_from_slice(LVTI_MAGIC);
        head.extend_from_slice(&(width as u64).to_le_bytes());
        head.extend_from_slice(&(height as u64).to_le_bytes());
        head.extend_from_slice(&(channels as u32).to_le_bytes());
        head.extend_from_slice(&(tile_size as u32).to_le_bytes());
        head.extend_from_slice(&sample.code().to_le_bytes());
        out.write_all(&head).map_err(|e| Error::io(&path, e))?;
        Ok(TiledWriter {
            path,
            out,
            width,
            height,
            channels,
            tile_size,
            sample,
            rows_written: 0,
        })
    }

    /// Rows the next band must hold.
    pub fn next_band_rows(&self) -> usize {
        self.tile_size.min(self.height - self.rows_written)
    }

    /// Writes the next tile-row band (full width, channels interleaved).
    pub fn write_band(&mut self, band: &[f32]) -> Result<()> {
        let rows = self.next_band_rows();
        let (w, c, ts) = (self.width, self.channels, self.tile_size);
        if rows == 0 || band.len() != rows * w * c {
            return Err(Error::contract("band does not match the next tile row"));
        }
        let sb = self.sample.bytes();
        let mut tile = vec![0u8; ts * ts * c * sb];
        for tx in 0..w.div_ceil(ts) {
            tile.fill(0);
            let x0 = tx * ts;
            let tw = ts.min(w - x0);
            for y in 0..rows {
                let src = &band[(y * w + x0) * c..(y * w + x0 + tw) * c];
                let dst = &mut tile[y * ts * c * sb..];
                match self.sample {
                    SampleFormat::U8 => {
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = s.round().clamp(0.0, 255.0) as u8;
                        }
                    }
                    SampleFormat::F32 => {
                        for (d, s) in dst.chunks_exact_mut(4).zip(src) {
                            d.copy_from_slice(&s.to_le_bytes());
                        }
                    }
                }
            }
            self.out
                .write_all(&tile)
                .map_err(|e| Error::io(&self.path, e))?;
        }
        self.rows_written += rows;
        Ok(())
    }

    pub fn finish(mut self) -> Result<TiledImage> {
        if self.rows_written != self.height {
            return Err(Error::contract(format!(
                "wrote {} of {} rows",
                self.rows_written, self.height
            )));
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        drop(self.out);
        TiledImage::open(&self.path)
    }
}

/// Whole image in memory, channels interleaved, values 0–255.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl RasterImage {
    pub fn pixel(&self, x: usize, y: usize, ch: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + ch]
    }

    /// Writes an 8-bit PGM/PPM, rounding samples.
    pub fn write_pnm(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        write_pnm(path, self.width, self.height, self.channels, &bytes)
    }

    /// Writes an `LVTI` file.
    pub fn write_lvti(
        &self,
        path: impl AsRef<Path>,
        tile_size: usize,
        sample: SampleFormat,
    ) -> Result<TiledImage> {
        let mut w = TiledWriter::create(
            path,
            self.width,
            self.height,
            self.channels,
            tile_size,
            sample,
        )?;
        let stride = self.width * self.channels;
        let mut y = 0;
        while y < self.height {
            let rows = w.next_band_rows();
            w.write_band(&self.data[y * stride..(y + rows) * stride])?;
            y += rows;
        }
        w.finish()
    }
}

/// Writes 8-bit binary PGM (1 channel) or PPM (3 channels).
pub fn write_pnm(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    channels: usize,
    pixels: &[u8],
) -> Result<()> {
    let path = path.as_ref();
    let magic = match channels {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::config("PNM supports 1 or 3 channels")),
    };
    if pixels.len() != width * height * channels {
        return Err(Error::dim("pixel buffer does not match geometry"));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "{magic}\n{width} {height}\n255\n")
        .and_then(|_| out.write_all(pixels))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes only the `LVTI` header and sizes the file sparsely; reading such an
/// image yields zeros. Used for metadata-only runs at gigapixel geometry.
pub fn create_sparse_lvti(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    channels: usize,
    tile_size: usize,
) -> Result<TiledImage> {
    let path = path.as_ref();
    let w = TiledWriter::create(path, width, height, channels, tile_size, SampleFormat::U8)?;
    let TiledWriter { mut out, .. } = w;
    out.flush().map_err(|e| Error::io(path, e))?;
    let file = out
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    let tiles = (width.div_ceil(tile_size) * height.div_ceil(tile_size)) as u64;
    file.set_len(LVTI_HEADER + tiles * (tile_size * tile_size * channels) as u64)
        .map_err(|e| Error::io(path, e))?;
    TiledImage::open(path)
}
