//! Dense and packed tensor representations plus the scalar reference
//! oracles the rest of the crate is validated against.
//!
//! A [`PackedTensor`] materializes a rank-2 matrix as rank-4 tile storage:
//! two outer tile-index dimensions and two inner element dimensions. Slots
//! that fall outside the logical matrix hold an explicit pad value, so
//! kernels consuming packed data never need edge masking.

use crate::error::{Error, Result};

/// Row-major rank-2 FP32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl DenseTensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "tensor dims must be >= 1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Bitwise equality; distinguishes -0.0 from 0.0 and compares NaN bits.
    pub fn bit_eq(&self, other: &DenseTensor) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Memory order of the two outer tile-index dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterPerm {
    /// Outer dims stored as `[D0_o, D1_o]` (row-of-tiles major).
    Identity,
    /// Outer dims stored as `[D1_o, D0_o]` (column-of-tiles major).
    Swapped,
}

impl OuterPerm {
    pub fn name(self) -> &'static str {
        match self {
            OuterPerm::Identity => "identity",
            OuterPerm::Swapped => "swapped",
        }
    }
}

/// Rank-4 materialized tile layout of a rank-2 matrix.
///
/// Outer counts are `D0_o = ceil(logical_rows / tile_rows)` and
/// `D1_o = ceil(logical_cols / tile_cols)`; every slot not covered by the
/// logical matrix holds `pad_value`.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedTensor {
    logical_rows: usize,
    logical_cols: usize,
    tile_rows: usize,
    tile_cols: usize,
    outer_perm: OuterPerm,
    pad_value: f32,
    data: Vec<f32>,
}

impl PackedTensor {
    /// Packed tensor with every slot holding `pad_value`, the staging
    /// buffer shape kernels accumulate into.
    pub fn new_filled(
        logical_rows: usize,
        logical_cols: usize,
        tile_rows: usize,
        tile_cols: usize,
        outer_perm: OuterPerm,
        pad_value: f32,
    ) -> Result<Self> {
        if logical_rows == 0 || logical_cols == 0 || tile_rows == 0 || tile_cols == 0 {
            return Err(Error::InvalidArgument(
                "packed dims and tiles must be >= 1".into(),
            ));
        }
        let d0_o = logical_rows.div_ceil(tile_rows);
        let d1_o = logical_cols.div_ceil(tile_cols);
        Ok(Self {
            logical_rows,
            logical_cols,
            tile_rows,
            tile_cols,
            outer_perm,
            pad_value,
            data: vec![pad_value; d0_o * d1_o * tile_rows * tile_cols],
        })
    }

    pub fn logical_rows(&self) -> usize {
        self.logical_rows
    }

    pub fn logical_cols(&self) -> usize {
        self.logical_cols
    }

    pub fn tile_rows(&self) -> usize {
        self.tile_rows
    }

    pub fn tile_cols(&self) -> usize {
        self.tile_cols
    }

    pub fn outer_perm(&self) -> OuterPerm {
        self.outer_perm
    }

    pub fn pad_value(&self) -> f32 {
        self.pad_value
    }

    /// Tile count along the logical row dimension.
    pub fn outer_rows(&self) -> usize {
        self.logical_rows.div_ceil(self.tile_rows)
    }

    /// Tile count along the logical column dimension.
    pub fn outer_cols(&self) -> usize {
        self.logical_cols.div_ceil(self.tile_cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Flat offset of the tuple `(o0, o1, i0, i1)`, honoring the outer
    /// permutation. Indices are in logical order regardless of the perm.
    pub fn offset_of(&self, o0: usize, o1: usize, i0: usize, i1: usize) -> usize {
        debug_assert!(o0 < self.outer_rows() && o1 < self.outer_cols());
        debug_assert!(i0 < self.tile_rows && i1 < self.tile_cols);
        let outer = match self.outer_perm {
            OuterPerm::Identity => o0 * self.outer_cols() + o1,
            OuterPerm::Swapped => o1 * self.outer_rows() + o0,
        };
        (outer * self.tile_rows + i0) * self.tile_cols + i1
    }

    pub fn get(&self, o0: usize, o1: usize, i0: usize, i1: usize) -> f32 {
        self.data[self.offset_of(o0, o1, i0, i1)]
    }

    pub fn set(&mut self, o0: usize, o1: usize, i0: usize, i1: usize, v: f32) {
        let off = self.offset_of(o0, o1, i0, i1);
        self.data[off] = v;
    }

    /// Rebuild a packed tensor around an externally produced buffer with the
    /// same geometry as `self` (used when a VM program wrote the data).
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        if data.len() != self.data.len() {
            return Err(Error::InvalidArgument(format!(
                "packed buffer length {} does not match geometry ({})",
                data.len(),
                self.data.len()
            )));
        }
        Ok(Self {
            data,
            ..self.clone()
        })
    }
}

/// Materialize `src` as `tile_rows x tile_cols` tiles.
///
/// For in-bounds slots the result satisfies
/// `packed[o0, o1, i0, i1] == src[o0*tile_rows + i0, o1*tile_cols + i1]`;
/// all other slots hold `pad_value`.
pub fn pack(
    src: &DenseTensor,
    tile_rows: usize,
    tile_cols: usize,
    outer_perm: OuterPerm,
    pad_value: f32,
) -> Result<PackedTensor> {
    if tile_rows == 0 || tile_cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "tile sizes must be >= 1, got {tile_rows}x{tile_cols}"
        )));
    }
    let d0_o = src.rows().div_ceil(tile_rows);
    let d1_o = src.cols().div_ceil(tile_cols);
    let mut out = PackedTensor {
        logical_rows: src.rows(),
        logical_cols: src.cols(),
        tile_rows,
        tile_cols,
        outer_perm,
        pad_value,
        data: vec![pad_value; d0_o * d1_o * tile_rows * tile_cols],
    };
    for o0 in 0..d0_o {
        for o1 in 0..d1_o {
            for i0 in 0..tile_rows {
                let r = o0 * tile_rows + i0;
                if r >= src.rows() {
                    continue;
                }
                for i1 in 0..tile_cols {
                    let c = o1 * tile_cols + i1;
                    if c >= src.cols() {
                        continue;
                    }
                    out.set(o0, o1, i0, i1, src.get(r, c));
                }
            }
        }
    }
    Ok(out)
}

/// Invert the packing relation, discarding padding slots.
pub fn unpack(src: &PackedTensor) -> DenseTensor {
    let mut out = DenseTensor::zeros(src.logical_rows(), src.logical_cols())
        .expect("packed tensors always have dims >= 1");
    for r in 0..src.logical_rows() {
        for c in 0..src.logical_cols() {
            let v = src.get(
                r / src.tile_rows(),
                c / src.tile_cols(),
                r % src.tile_rows(),
                c % src.tile_cols(),
            );
            out.set(r, c, v);
        }
    }
    out
}

/// Scalar reference matmul: `C[i,j] = sum_k fma(A[i,k], B[k,j], c)` with k
/// ascending from a zero accumulator.
///
/// The fixed accumulation order and fused rounding define the bit-exact
/// reference every other compute path in the crate is compared against.
pub fn matmul_oracle(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if a.cols() != b.rows() {
        return Err(Error::InvalidArgument(format!(
            "inner dims disagree: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut c = DenseTensor::zeros(a.rows(), b.cols())?;
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = 0.0f32;
            for k in 0..a.cols() {
                acc = a.get(i, k).mul_add(b.get(k, j), acc);
            }
            c.set(i, j, acc);
        }
    }
    Ok(c)
}

/// Scalar realization of the packed matmul: accumulates per-tile products
/// over all k tiles into `c`, with the same per-element k-ascending FMA
/// order as [`matmul_oracle`].
///
/// Tile shapes must be consistent: A tiles `(m_r, k_r)`, B tiles
/// `(k_r, n_r)`, C tiles `(m_r, n_r)`. Outer permutations are honored via
/// the accessor, so any combination is accepted.
pub fn packed_matmul_reference(
    a: &PackedTensor,
    b: &PackedTensor,
    c: &mut PackedTensor,
) -> Result<()> {
    if a.tile_cols() != b.tile_rows() {
        return Err(Error::InvalidArgument(format!(
            "A k_r {} != B k_r {}",
            a.tile_cols(),
            b.tile_rows()
        )));
    }
    if c.tile_rows() != a.tile_rows() || c.tile_cols() != b.tile_cols() {
        return Err(Error::InvalidArgument(format!(
            "C tiles {}x{} do not match A m_r {} / B n_r {}",
            c.tile_rows(),
            c.tile_cols(),
            a.tile_rows(),
            b.tile_cols()
        )));
    }
    if a.logical_cols() != b.logical_rows()
        || c.logical_rows() != a.logical_rows()
        || c.logical_cols() != b.logical_cols()
    {
        return Err(Error::InvalidArgument(format!(
            "logical dims disagree: A {}x{}, B {}x{}, C {}x{}",
            a.logical_rows(),
            a.logical_cols(),
            b.logical_rows(),
            b.logical_cols(),
            c.logical_rows(),
            c.logical_cols()
        )));
    }
    let (m_o, n_o, k_o) = (a.outer_rows(), b.outer_cols(), a.outer_cols());
    let (m_r, n_r, k_r) = (a.tile_rows(), b.tile_cols(), a.tile_cols());
    for io in 0..m_o {
        for jo in 0..n_o {
            // k tiles ascending, k elements ascending inside: per-element
            // reduction order is plain ascending k.
            for ko in 0..k_o {
                for ii in 0..m_r {
                    for ji in 0..n_r {
                        let mut acc = c.get(io, jo, ii, ji);
                        for ki in 0..k_r {
                            acc = a.get(io, ko, ii, ki).mul_add(b.get(ko, jo, ki, ji), acc);
                        }
                        c.set(io, jo, ii, ji, acc);
                    }
                }
            }
        }
    }
    Ok(())
}
