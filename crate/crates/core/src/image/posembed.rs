use rand::Rng;

use super::resize::axis_taps;
use crate::error::{Error, Result};
use crate::init::trunc_normal;
use crate::tensor::Tensor;

/// Learnable 1D position table laid out over a native patch grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PosEmbedTable {
    pub table: Tensor,
    pub native_grid: (usize, usize),
}

impl PosEmbedTable {
    pub fn new(table: Tensor, native_grid: (usize, usize)) -> Result<Self> {
        let (r, c) = native_grid;
        if r == 0 || c == 0 || table.rank() != 2 || table.rows() != r * c {
            return Err(Error::dim(format!(
                "table {:?} does not cover a {r}×{c} grid",
                table.shape()
            )));
        }
        Ok(PosEmbedTable { table, native_grid })
    }

    pub fn random<R: Rng>(native_grid: (usize, usize), d: usize, std: f64, rng: &mut R) -> Self {
        let n = native_grid.0 * native_grid.1;
        PosEmbedTable {
            table: trunc_normal(&[n, d], std, rng),
            native_grid,
        }
    }

    pub fn hidden(&self) -> usize {
        self.table.cols()
    }
}

/// Per target position, the `(native index, weight)` taps.
pub type Stencil = Vec<Vec<(usize, f64)>>;

/// Bilinear taps mapping the native grid onto `target` rows × cols, row-major.
/// Returns `None` when the target is the native grid.
pub fn pos_stencil(native: (usize, usize), target: (usize, usize)) -> Result<Option<Stencil>> {
    if target.0 == 0 || target.1 == 0 || native.0 == 0 || native.1 == 0 {
        return Err(Error::config("position grids must be non-empty"));
    }
    if native == target {
        return Ok(None);
    }
    let ys = axis_taps(native.0, target.0);
    let xs = axis_taps(native.1, target.1);
    let mut stencil = Vec::with_capacity(target.0 * target.1);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let taps = [
                (y0 * native.1 + x0, (1.0 - fy) * (1.0 - fx)),
                (y0 * native.1 + x1, (1.0 - fy) * fx),
                (y1 * native.1 + x0, fy * (1.0 - fx)),
                (y1 * native.1 + x1, fy * fx),
            ];
            stencil.push(taps.into_iter().filter(|&(_, w)| w != 0.0).collect());
        }
    }
    Ok(Some(stencil))
}

pub(crate) fn apply_stencil(table: &Tensor, stencil: &[Vec<(usize, f64)>]) -> Result<Tensor> {
    let d = table.cols();
    let mut data = vec![0.0; stencil.len() * d];
    for (o, taps) in stencil.iter().enumerate() {
        let row = &mut data[o * d..(o + 1) * d];
        for &(s, w) in taps {
            for (r, v) in row.iter_mut().zip(table.row(s)) {
                *r += w * v;
            }
        }
    }
    Tensor::new(vec![stencil.len(), d], data)
}

/// Resamples the table to `target` (rows, cols) with bilinear interpolation per
/// channel. The native grid comes back unchanged.
pub fn interpolate_pos_embed(table: &PosEmbedTable, target: (usize, usize)) -> Result<Tensor> {
    match pos_stencil(table.native_grid, target)? {
        None => Ok(table.table.clone()),
        Some(s) => apply_stencil(&table.table, &s),
    }
}
