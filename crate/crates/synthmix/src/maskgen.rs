//! Binary mix-up mask generation.
//!
//! A mask starts as a k×k binary grid whose cells are one with probability
//! `lambda_ratio`, then is upsampled to pixel resolution by block
//! replication. Nearest-neighbor upsampling keeps the mask binary and keeps
//! block boundaries aligned with the inspector's patch grid, which is what
//! makes per-patch domain labels well-defined.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Parameters of one mask distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixMaskSpec {
    /// Grid side; must divide `image_side`.
    pub k: usize,
    /// Probability that a grid cell is one.
    pub lambda_ratio: f64,
    /// Pixel side of the upsampled mask.
    pub image_side: usize,
    /// Base seed; combined with a caller-supplied draw index.
    pub seed: u64,
}

impl Default for MixMaskSpec {
    fn default() -> Self {
        MixMaskSpec {
            k: 8,
            lambda_ratio: 0.5,
            image_side: 256,
            seed: 0,
        }
    }
}

impl MixMaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("mask grid side k must be positive"));
        }
        if !(0.0..=1.0).contains(&self.lambda_ratio) || !self.lambda_ratio.is_finite() {
            return Err(Error::config(format!(
                "lambda_ratio must lie in [0, 1], got {}",
                self.lambda_ratio
            )));
        }
        if self.image_side == 0 || self.image_side % self.k != 0 {
            return Err(Error::config(format!(
                "image_side {} must be a positive multiple of k {}",
                self.image_side, self.k
            )));
        }
        Ok(())
    }

    /// Generator for the given draw index, per the `(seed, stream, draw)`
    /// reproducibility contract.
    pub fn rng_for_draw(&self, draw: u64) -> StreamRng {
        StreamRng::at(self.seed, crate::rng::streams::MASK, draw)
    }
}

/// The initial k×k binary grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    cells: Array2<u8>,
}

impl MaskGrid {
    /// Wrap an explicit grid. Entries must be 0 or 1.
    pub fn from_cells(cells: Array2<u8>) -> Result<Self> {
        if cells.iter().any(|&c| c > 1) {
            return Err(Error::validation("mask grid entries must be binary"));
        }
        if cells.nrows() != cells.ncols() {
            return Err(Error::dimension(format!(
                "mask grid must be square, got {}x{}",
                cells.nrows(),
                cells.ncols()
            )));
        }
        Ok(MaskGrid { cells })
    }

    pub fn k(&self) -> usize {
        self.cells.nrows()
    }

    pub fn cells(&self) -> &Array2<u8> {
        &self.cells
    }

    /// Fraction of ones.
    pub fn mean(&self) -> f64 {
        let n = self.cells.len();
        self.cells.iter().map(|&c| c as usize).sum::<usize>() as f64 / n as f64
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().map(|&c| c as usize).sum()
    }
}

/// Per-pixel mask: block-constant upsampling of a [`MaskGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask {
    values: Array2<u8>,
    source_grid: MaskGrid,
}

impl PixelMask {
    pub fn values(&self) -> &Array2<u8> {
        &self.values
    }

    pub fn source_grid(&self) -> &MaskGrid {
        &self.source_grid
    }

    pub fn side(&self) -> usize {
        self.values.nrows()
    }

    /// Block side, `image_side / k`.
    pub fn block(&self) -> usize {
        self.values.nrows() / self.source_grid.k()
    }
}

/// Draw a k×k grid with i.i.d. Bernoulli(`lambda_ratio`) cells.
pub fn generate_grid(spec: &MixMaskSpec, rng: &mut StreamRng) -> Result<MaskGrid> {
    spec.validate()?;
    let cells = Array2::from_shape_simple_fn((spec.k, spec.k), || {
        u8::from(rng.bernoulli(spec.lambda_ratio))
    });
    Ok(MaskGrid { cells })
}

/// Nearest-neighbor (block replication) upsampling of a grid to
/// `image_side`×`image_side`. Each grid cell governs one square block, so
/// the result stays binary and `mean` is preserved exactly.
pub fn upsample(grid: &MaskGrid, image_side: usize) -> Result<PixelMask> {
    let k = grid.k();
    if image_side == 0 || image_side % k != 0 {
        return Err(Error::config(format!(
            "image_side {image_side} is not divisible by grid side {k}"
        )));
    }
    let block = image_side / k;
    let values = Array2::from_shape_fn((image_side, image_side), |(y, x)| {
        grid.cells[(y / block, x / block)]
    });
    Ok(PixelMask {
        values,
        source_grid: grid.clone(),
    })
}

/// Arithmetic mean of the pixel mask entries.
pub fn mask_mean(mask: &PixelMask) -> f64 {
    let n = mask.values.len();
    mask.values.iter().map(|&v| v as usize).sum::<usize>() as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn spec(k: usize, lambda: f64) -> MixMaskSpec {
        MixMaskSpec {
            k,
            lambda_ratio: lambda,
            image_side: 256,
            seed: 7,
        }
    }

    #[test]
    fn probability_zero_gives_all_zeros() {
        let s = spec(8, 0.0);
        let g = generate_grid(&s, &mut s.rng_for_draw(0)).unwrap();
        assert!(g.cells().iter().all(|&c| c == 0));
    }

    #[test]
    fn probability_one_gives_all_ones() {
        let s = spec(8, 1.0);
        let g = generate_grid(&s, &mut s.rng_for_draw(0)).unwrap();
        assert!(g.cells().iter().all(|&c| c == 1));
    }

    #[test]
    fn half_ratio_monte_carlo_mean() {
        // Empirical mean over 10,000 draws against the binomial expectation.
        let s = spec(8, 0.5);
        let mut total_ones = 0usize;
        let draws = 10_000u64;
        for d in 0..draws {
            let g = generate_grid(&s, &mut s.rng_for_draw(d)).unwrap();
            total_ones += g.count_ones();
        }
        let mean = total_ones as f64 / (draws as f64 * 64.0);
        assert!((0.48..=0.52).contains(&mean), "mean {mean}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_grid(&spec(0, 0.5), &mut StreamRng::new(0, 0)).is_err());
        assert!(generate_grid(&spec(8, 1.5), &mut StreamRng::new(0, 0)).is_err());
        assert!(generate_grid(&spec(8, -0.1), &mut StreamRng::new(0, 0)).is_err());
        let bad_side = MixMaskSpec {
            k: 7,
            lambda_ratio: 0.5,
            image_side: 256,
            seed: 0,
        };
        assert!(generate_grid(&bad_side, &mut StreamRng::new(0, 0)).is_err());
    }

    #[test]
    fn determinism_bit_identical() {
        let s = spec(8, 0.37);
        let a = generate_grid(&s, &mut s.rng_for_draw(11)).unwrap();
        let b = generate_grid(&s, &mut s.rng_for_draw(11)).unwrap();
        assert_eq!(a, b);
        let c = generate_grid(&s, &mut s.rng_for_draw(12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn upsample_constant_grid() {
        let g = MaskGrid::from_cells(array![[1u8]]).unwrap();
        let m = upsample(&g, 4).unwrap();
        assert!(m.values().iter().all(|&v| v == 1));
        assert_eq!(m.side(), 4);
    }

    #[test]
    fn upsample_diagonal_blocks() {
        // Hand-computed block replication of a 2x2 identity pattern.
        let g = MaskGrid::from_cells(array![[1u8, 0], [0, 1]]).unwrap();
        let m = upsample(&g, 4).unwrap();
        let expected = array![
            [1u8, 1, 0, 0],
            [1, 1, 0, 0],
            [0, 0, 1, 1],
            [0, 0, 1, 1]
        ];
        assert_eq!(m.values(), &expected);
    }

    #[test]
    fn upsample_rejects_non_divisible_side() {
        let g = MaskGrid::from_cells(array![[1u8, 0], [0, 1]]).unwrap();
        assert!(upsample(&g, 5).is_err());
    }

    #[test]
    fn upsample_preserves_mean_and_binarity() {
        let s = spec(8, 0.41);
        for d in 0..50 {
            let g = generate_grid(&s, &mut s.rng_for_draw(d)).unwrap();
            let m = upsample(&g, 256).unwrap();
            assert!(m.values().iter().all(|&v| v <= 1));
            assert!((mask_mean(&m) - g.mean()).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_mean_examples() {
        let zeros = upsample(&MaskGrid::from_cells(Array2::zeros((8, 8))).unwrap(), 256).unwrap();
        assert_eq!(mask_mean(&zeros), 0.0);
        let ones = upsample(&MaskGrid::from_cells(Array2::ones((8, 8))).unwrap(), 256).unwrap();
        assert_eq!(mask_mean(&ones), 1.0);

        // 16 ones out of 64 cells stays exactly 0.25 after block replication.
        let mut cells = Array2::zeros((8, 8));
        for i in 0..16 {
            cells[(i / 8, i % 8)] = 1u8;
        }
        let m = upsample(&MaskGrid::from_cells(cells).unwrap(), 256).unwrap();
        assert_eq!(mask_mean(&m), 0.25);
    }

    #[test]
    fn non_binary_grid_rejected() {
        assert!(MaskGrid::from_cells(array![[2u8]]).is_err());
    }
}
