//! Person boxes to pixel masks, and pixel masks to latent resolution.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DType, Tensor};

/// Pixel box, inclusive of `(x0, y0)` and exclusive of `(x1, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl From<[u32; 4]> for BBox {
    fn from([x0, y0, x1, y1]: [u32; 4]) -> Self {
        Self { x0, y0, x1, y1 }
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn check_within(&self, height: usize, width: usize) -> Result<()> {
        let ok = self.x0 < self.x1
            && self.y0 < self.y1
            && self.x1 as usize <= width
            && self.y1 as usize <= height;
        if ok {
            Ok(())
        } else {
            Err(Error::Bounds(format!(
                "box {:?} is empty or outside a {height}x{width} canvas",
                <[u32; 4]>::from(*self)
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![false; height * width],
        }
    }

    pub fn from_cells(height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} mask needs {} cells, got {}",
                height * width,
                cells.len()
            )));
        }
        Ok(Self { height, width, cells })
    }

    /// Reads a 2-D tensor whose entries are exactly 0 or 1.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let &[height, width] = t.shape() else {
            return Err(Error::Shape(format!("mask tensor must be 2-D, got {:?}", t.shape())));
        };
        let cells = t
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| match v {
                0.0 => Ok(false),
                1.0 => Ok(true),
                _ => Err(Error::Mask(format!("entry {v} at flat index {i} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { height, width, cells })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// `(H, W)` tensor of 0.0 / 1.0.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width],
            self.cells.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask dimensions are positive")
    }

    /// Replicates every cell into a `factor x factor` block.
    pub fn upsample(&self, factor: usize) -> Self {
        let (h, w) = (self.height * factor, self.width * factor);
        let cells = (0..h * w)
            .map(|i| self.get(i / w / factor, (i % w) / factor))
            .collect();
        Self {
            height: h,
            width: w,
            cells,
        }
    }
}

/// Union of all boxes on an empty canvas.
pub fn rasterize_union(boxes: &[BBox], height: usize, width: usize) -> Result<BinaryMask> {
    let mut mask = BinaryMask::zeros(height, width);
    for b in boxes {
        b.check_within(height, width)?;
        for row in b.y0 as usize..b.y1 as usize {
            let start = row * width;
            mask.cells[start + b.x0 as usize..start + b.x1 as usize].fill(true);
        }
    }
    Ok(mask)
}

/// Any-coverage pooling: a latent cell is set if any pixel under it is set.
pub fn to_latent(mask: &BinaryMask, factor: usize) -> Result<BinaryMask> {
    if factor == 0 {
        return Err(Error::Shape("downsampling factor must be positive".into()));
    }
    if !mask.height.is_multiple_of(factor) || !mask.width.is_multiple_of(factor) {
        return Err(Error::Shape(format!(
            "{}x{} mask is not divisible by factor {factor}",
            mask.height, mask.width
        )));
    }
    let (h, w) = (mask.height / factor, mask.width / factor);
    let mut out = BinaryMask::zeros(h, w);
    for row in 0..mask.height {
        for col in 0..mask.width {
            if mask.get(row, col) {
                out.cells[(row / factor) * w + col / factor] = true;
            }
        }
    }
    Ok(out)
}

pub const DEFAULT_LATENT_FACTOR: usize = 8;

/// Box file: `{"height":H,"width":W,"boxes":[[x0,y0,x1,y1],...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxesFile {
    pub height: usize,
    pub width: usize,
    pub boxes: Vec<BBox>,
}

impl BoxesFile {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Rasterizes and pools to latent resolution, as an `f32` tensor.
    pub fn latent_mask(&self, factor: usize) -> Result<Tensor> {
        let pixel = rasterize_union(&self.boxes, self.height, self.width)?;
        Ok(to_latent(&pixel, factor)?.to_tensor().with_dtype(DType::F32))
    }
}
