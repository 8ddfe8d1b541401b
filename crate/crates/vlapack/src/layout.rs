//! Vector-length-parametric tile sizes and the registry of layout
//! configurations coupling packed layouts to microkernels.

use crate::error::{Error, Result};
use std::fmt;

/// Hardware vector length in FP32 lanes. Admissible values are powers of
/// two in [4, 64], i.e. 128 to 2048 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VectorLength {
    lanes: usize,
}

impl VectorLength {
    pub fn lanes(self) -> usize {
        self.lanes
    }

    pub fn bits(self) -> usize {
        self.lanes * 32
    }
}

impl fmt::Display for VectorLength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} lanes ({}-bit)", self.lanes, self.bits())
    }
}

/// Check a lane count against the admissible range.
pub fn validate_vl(lanes: usize) -> Result<VectorLength> {
    if (4..=64).contains(&lanes) && lanes.is_power_of_two() {
        Ok(VectorLength { lanes })
    } else {
        Err(Error::InvalidVectorLength(lanes))
    }
}

/// Tile size as an affine function of the vector length: `vl_coeff*VL + constant`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileSizeExpr {
    vl_coeff: u32,
    constant: u32,
}

impl TileSizeExpr {
    pub fn new(vl_coeff: u32, constant: u32) -> Result<Self> {
        if vl_coeff == 0 && constant == 0 {
            return Err(Error::InvalidArgument(
                "tile size expression must not be identically zero".into(),
            ));
        }
        Ok(Self { vl_coeff, constant })
    }

    pub fn constant(value: u32) -> Result<Self> {
        Self::new(0, value)
    }

    pub fn vl_coeff(self) -> u32 {
        self.vl_coeff
    }

    pub fn constant_term(self) -> u32 {
        self.constant
    }

    pub fn eval(self, vl: VectorLength) -> usize {
        self.vl_coeff as usize * vl.lanes() + self.constant as usize
    }
}

impl fmt::Display for TileSizeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}*VL+{}", self.vl_coeff, self.constant)
    }
}

/// Microkernel family a layout feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelId {
    /// Outer-product FMA kernel updating an 8 x 2VL output tile per k step.
    OuterProduct8x2Vl,
    /// Whilelt-governed fallback on unpacked operands; correct for any size.
    GenericPredicated,
}

/// Operand element type requested from the layout registry. Only FP32 has
/// a production configuration; the other tags exist so callers get a
/// proper unsupported-configuration error instead of a silent default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    Bf16,
    I8,
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::F32 => write!(f, "f32"),
            DType::Bf16 => write!(f, "bf16"),
            DType::I8 => write!(f, "i8"),
        }
    }
}

/// Tile-size functions (f_m, f_n, f_k) plus the kernel they were derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutConfig {
    pub f_m: TileSizeExpr,
    pub f_n: TileSizeExpr,
    pub f_k: TileSizeExpr,
    pub kernel_id: KernelId,
    pub dtype: DType,
}

impl LayoutConfig {
    pub fn new(
        f_m: TileSizeExpr,
        f_n: TileSizeExpr,
        f_k: TileSizeExpr,
        kernel_id: KernelId,
        dtype: DType,
    ) -> Result<Self> {
        if kernel_id == KernelId::OuterProduct8x2Vl {
            let want = (
                TileSizeExpr::new(0, 8)?,
                TileSizeExpr::new(2, 0)?,
                TileSizeExpr::new(0, 1)?,
            );
            if (f_m, f_n, f_k) != want {
                return Err(Error::InvalidArgument(format!(
                    "OuterProduct8x2Vl requires tiles (0*VL+8, 2*VL+0, 0*VL+1), got ({f_m}, {f_n}, {f_k})"
                )));
            }
        }
        Ok(Self {
            f_m,
            f_n,
            f_k,
            kernel_id,
            dtype,
        })
    }

    /// The production FP32 configuration: m_r = 8, n_r = 2VL, k_r = 1.
    pub fn outer_product_8x2vl() -> Self {
        Self {
            f_m: TileSizeExpr {
                vl_coeff: 0,
                constant: 8,
            },
            f_n: TileSizeExpr {
                vl_coeff: 2,
                constant: 0,
            },
            f_k: TileSizeExpr {
                vl_coeff: 0,
                constant: 1,
            },
            kernel_id: KernelId::OuterProduct8x2Vl,
            dtype: DType::F32,
        }
    }

    /// Bind the tile-size functions to a concrete vector length.
    pub fn eval_tiles(&self, vl: VectorLength) -> (usize, usize, usize) {
        (self.f_m.eval(vl), self.f_n.eval(vl), self.f_k.eval(vl))
    }
}

/// Deterministic table lookup from dtype to layout configuration. The
/// choice is symbolic: the same config is returned for every admissible
/// vector length, and only [`LayoutConfig::eval_tiles`] binds VL.
pub fn select_layout(dtype: DType, _vl: VectorLength) -> Result<LayoutConfig> {
    match dtype {
        DType::F32 => Ok(LayoutConfig::outer_product_8x2vl()),
        other => Err(Error::UnsupportedConfig(format!(
            "no layout configuration registered for dtype {other}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_vl_accepts_sve_range() {
        assert_eq!(validate_vl(4).unwrap().bits(), 128);
        assert_eq!(validate_vl(16).unwrap().bits(), 512);
        assert_eq!(validate_vl(64).unwrap().bits(), 2048);
        for bad in [0, 1, 2, 3, 6, 12, 128] {
            assert!(matches!(
                validate_vl(bad),
                Err(Error::InvalidVectorLength(_))
            ));
        }
    }

    #[test]
    fn eval_tiles_production_config() {
        let cfg = LayoutConfig::outer_product_8x2vl();
        assert_eq!(cfg.eval_tiles(validate_vl(4).unwrap()), (8, 8, 1));
        assert_eq!(cfg.eval_tiles(validate_vl(16).unwrap()), (8, 32, 1));
    }

    #[test]
    fn eval_tiles_custom_config() {
        let cfg = LayoutConfig::new(
            TileSizeExpr::new(2, 0).unwrap(),
            TileSizeExpr::new(2, 0).unwrap(),
            TileSizeExpr::new(0, 4).unwrap(),
            KernelId::GenericPredicated,
            DType::F32,
        )
        .unwrap();
        assert_eq!(cfg.eval_tiles(validate_vl(8).unwrap()), (16, 16, 4));
    }

    #[test]
    fn select_layout_is_vl_independent() {
        let first = select_layout(DType::F32, validate_vl(4).unwrap()).unwrap();
        for lanes in [4, 8, 16, 32, 64] {
            let cfg = select_layout(DType::F32, validate_vl(lanes).unwrap()).unwrap();
            assert_eq!(cfg, first);
            assert_eq!(cfg.kernel_id, KernelId::OuterProduct8x2Vl);
        }
    }

    #[test]
    fn select_layout_rejects_other_dtypes() {
        let vl = validate_vl(4).unwrap();
        assert!(matches!(
            select_layout(DType::Bf16, vl),
            Err(Error::UnsupportedConfig(_))
        ));
        assert!(matches!(
            select_layout(DType::I8, vl),
            Err(Error::UnsupportedConfig(_))
        ));
    }

    #[test]
    fn tile_expr_rejects_zero() {
        assert!(TileSizeExpr::new(0, 0).is_err());
    }

    #[test]
    fn tile_expr_display() {
        assert_eq!(TileSizeExpr::new(2, 0).unwrap().to_string(), "2*VL+0");
        assert_eq!(TileSizeExpr::new(0, 8).unwrap().to_string(), "0*VL+8");
    }

    #[test]
    fn monotonicity() {
        let growing = TileSizeExpr::new(1, 3).unwrap();
        let flat = TileSizeExpr::new(0, 5).unwrap();
        let mut prev = 0;
        for lanes in [4, 8, 16, 32, 64] {
            let vl = validate_vl(lanes).unwrap();
            assert!(growing.eval(vl) > prev);
            prev = growing.eval(vl);
            assert_eq!(flat.eval(vl), 5);
        }
    }

    #[test]
    fn n_r_is_twice_vl() {
        let cfg = LayoutConfig::outer_product_8x2vl();
        for lanes in [4, 8, 16, 32, 64] {
            let vl = validate_vl(lanes).unwrap();
            assert_eq!(cfg.eval_tiles(vl).1 / vl.lanes(), 2);
            assert_eq!(cfg.eval_tiles(vl).1 % vl.lanes(), 0);
        }
    }
}
