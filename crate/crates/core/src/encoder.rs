//! Mask-context encoder: average-pools the upsampled destination (or source)
//! feature map over a mask and over its extended bounding box.
//!
//! Pooling happens on the upsampled grid. Masks live on the feature grid and
//! are nearest-neighbour resampled, so each mask pixel becomes a
//! `factor x factor` block. Means are accumulated in row-major order of the
//! upsampled grid as offsets from the first pooled pixel, which makes the
//! result deterministic and exact for constant regions.

use crate::error::{Error, Result};
use crate::pack::{FeatureMap, FeaturePack, MaskBitmap};
use crate::tensor::{self, Tensor};

/// Inclusive pixel bounds on the upsampled grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    /// Grows the box by `round(margin * max(width, height))` on every side,
    /// clamped to a `grid_w x grid_h` image.
    pub fn extend(&self, margin: f64, grid_w: usize, grid_h: usize) -> BBox {
        let pad = (margin * self.width().max(self.height()) as f64).round() as usize;
        BBox {
            x0: self.x0.saturating_sub(pad),
            y0: self.y0.saturating_sub(pad),
            x1: (self.x1 + pad).min(grid_w - 1),
            y1: (self.y1 + pad).min(grid_h - 1),
        }
    }
}

/// A feature map upsampled once and shared by every mask pooled from it.
#[derive(Clone, Debug)]
pub struct UpsampledMap {
    tensor: Tensor,
    factor: usize,
}

impl UpsampledMap {
    pub fn new(map: &FeatureMap, factor: usize) -> Result<Self> {
        let tensor = tensor::bilinear_upsample(&map.to_tensor(), factor)?;
        Ok(Self { tensor, factor })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let d = self.dim();
        &self.tensor.data()[(y * self.width() + x) * d..][..d]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    fn check_mask(&self, mask: &MaskBitmap) -> Result<()> {
        if mask.width() * self.factor != self.width() || mask.height() * self.factor != self.height() {
            return Err(Error::Dimension(format!(
                "{}x{} mask on a {}x{} map upsampled x{}",
                mask.width(),
                mask.height(),
                self.width() / self.factor,
                self.height() / self.factor,
                self.factor
            )));
        }
        Ok(())
    }
}

/// Running mean over pixels, anchored at the first value.
struct Pool {
    anchor: Option<Vec<f64>>,
    offsets: Vec<f64>,
    count: usize,
}

impl Pool {
    fn new(dim: usize) -> Self {
        Self {
            anchor: None,
            offsets: vec![0.0; dim],
            count: 0,
        }
    }

    fn add(&mut self, values: &[f64]) {
        let anchor = self.anchor.get_or_insert_with(|| values.to_vec());
        for ((o, v), a) in self.offsets.iter_mut().zip(values).zip(anchor.iter()) {
            *o += v - a;
        }
        self.count += 1;
    }

    fn finish(self) -> Result<Vec<f64>> {
        let anchor = self.anchor.ok_or(Error::EmptyMask)?;
        let n = self.count as f64;
        Ok(anchor
            .iter()
            .zip(&self.offsets)
            .map(|(a, o)| a + o / n)
            .collect())
    }
}

/// Nearest-neighbour resampling of a mask to `factor` times its resolution.
pub fn upsample_mask(mask: &MaskBitmap, factor: usize) -> Result<Vec<bool>> {
    let grid = mask.decode()?;
    let (w, h) = (mask.width(), mask.height());
    let uw = w * factor;
    let mut out = vec![false; uw * h * factor];
    for y in 0..h * factor {
        for x in 0..uw {
            out[y * uw + x] = grid[(y / factor) * w + x / factor];
        }
    }
    Ok(out)
}

/// Tight bounding box of the mask after resampling to the upsampled grid.
pub fn mask_bbox(mask: &MaskBitmap, factor: usize) -> Option<BBox> {
    let mut bounds: Option<BBox> = None;
    for (row, x, len) in mask.foreground_runs() {
        let b = BBox {
            x0: x * factor,
            y0: row * factor,
            x1: (x + len) * factor - 1,
            y1: (row + 1) * factor - 1,
        };
        bounds = Some(match bounds {
            None => b,
            Some(a) => BBox {
                x0: a.x0.min(b.x0),
                y0: a.y0.min(b.y0),
                x1: a.x1.max(b.x1),
                y1: a.y1.max(b.y1),
            },
        });
    }
    bounds
}

/// Mean upsampled feature over the mask's foreground (`o_n`).
pub fn object_descriptor(mask: &MaskBitmap, map: &UpsampledMap) -> Result<Vec<f64>> {
    map.check_mask(mask)?;
    let f = map.factor;
    let grid = mask.decode()?;
    let w = mask.width();
    let mut pool = Pool::new(map.dim());
    for y in 0..map.height() {
        let row = &grid[(y / f) * w..(y / f + 1) * w];
        for x in 0..map.width() {
            if row[x / f] {
                pool.add(map.pixel(y, x));
            }
        }
    }
    pool.finish()
}

/// Box over which the context descriptor pools.
pub fn context_box(mask: &MaskBitmap, map: &UpsampledMap, margin: f64) -> Result<BBox> {
    map.check_mask(mask)?;
    if margin < 0.0 || !margin.is_finite() {
        return Err(Error::Parameter(format!("context margin {margin} must be >= 0")));
    }
    let bbox = mask_bbox(mask, map.factor).ok_or(Error::EmptyMask)?;
    Ok(bbox.extend(margin, map.width(), map.height()))
}

/// Mean upsampled feature over the extended bounding box (`c_n`).
pub fn context_descriptor(mask: &MaskBitmap, map: &UpsampledMap, margin: f64) -> Result<Vec<f64>> {
    let b = context_box(mask, map, margin)?;
    let mut pool = Pool::new(map.dim());
    for y in b.y0..=b.y1 {
        for x in b.x0..=b.x1 {
            pool.add(map.pixel(y, x));
        }
    }
    pool.finish()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskDescriptor {
    pub object: Vec<f64>,
    pub context: Vec<f64>,
    /// Filled by the cross-view attention.
    pub cross_view: Option<Vec<f64>>,
}

impl MaskDescriptor {
    pub fn encode(mask: &MaskBitmap, map: &UpsampledMap, margin: f64) -> Result<Self> {
        Ok(Self {
            object: object_descriptor(mask, map)?,
            context: context_descriptor(mask, map, margin)?,
            cross_view: None,
        })
    }
}

#[derive(Clone, Debug)]
pub struct EncodedSample {
    pub source: MaskDescriptor,
    pub candidates: Vec<MaskDescriptor>,
    /// Original candidate index of each entry in `candidates`.
    pub kept: Vec<usize>,
}

impl EncodedSample {
    /// Position in `candidates` of the original candidate index `index`.
    pub fn position_of(&self, index: usize) -> Option<usize> {
        self.kept.iter().position(|&k| k == index)
    }
}

/// Encodes the source mask and every non-empty candidate of a pack.
pub fn encode_all(pack: &FeaturePack, margin: f64, factor: usize) -> Result<EncodedSample> {
    let src = UpsampledMap::new(&pack.source_features, factor)?;
    let dst = UpsampledMap::new(&pack.dest_features, factor)?;
    let source = MaskDescriptor::encode(&pack.source_mask, &src, margin)?;
    let mut candidates = Vec::with_capacity(pack.candidates.len());
    let mut kept = Vec::with_capacity(pack.candidates.len());
    for (i, mask) in pack.candidates.iter().enumerate() {
        match MaskDescriptor::encode(mask, &dst, margin) {
            Ok(desc) => {
                candidates.push(desc);
                kept.push(i);
            }
            Err(Error::EmptyMask) => log::debug!("dropping empty candidate {i}"),
            Err(e) => return Err(e),
        }
    }
    Ok(EncodedSample {
        source,
        candidates,
        kept,
    })
}
