//! `.ommp` feature packs: one source/destination sample per file.
//!
//! ```text
//! "OMMP" | version u16 | direction u8 | d u16 | Hs Ws Hd Wd u16 | N u16 | flags u8
//! source features  f32[Hs*Ws*d]   row-major
//! dest features    f32[Hd*Wd*d]
//! source mask      RLE
//! N candidate masks RLE
//! [gt_index u16]   when flags bit1
//! [gt mask RLE]    when flags bit1
//! ```
//!
//! All integers and floats are little-endian. flags bit0 is `visible`, bit1
//! marks the ground-truth fields. An RLE mask is a `u32` run count followed
//! by that many `u32` runs; each row alternates background/foreground runs,
//! starts with background and sums exactly to the mask width.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::Cursor;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PACK_MAGIC: &[u8; 4] = b"OMMP";
pub const PACK_VERSION: u16 = 1;
pub const PACK_EXTENSION: &str = "ommp";

const HEADER_LEN: usize = 20;
const FLAG_VISIBLE: u8 = 0b01;
const FLAG_GT: u8 = 0b10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Ego2Exo,
    Exo2Ego,
}

impl Direction {
    fn code(self) -> u8 {
        match self {
            Direction::Ego2Exo => 0,
            Direction::Exo2Ego => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Direction::Ego2Exo),
            1 => Ok(Direction::Exo2Ego),
            other => Err(Error::Format(format!("unknown direction code {other}"))),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Direction::Ego2Exo => write!(f, "ego2exo"),
            Direction::Exo2Ego => write!(f, "exo2ego"),
        }
    }
}

/// Dense `height x width x dim` descriptor grid stored as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if height * width * dim != data.len() {
            return Err(Error::Dimension(format!(
                "feature map {height}x{width}x{dim} needs {} values, got {}",
                height * width * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map".into()));
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let start = (y * self.width + x) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Widens to an `f64` tensor of shape `[height, width, dim]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(
            vec![self.height, self.width, self.dim],
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )
    }

    /// Flattened tokens as a `(height * width) x dim` matrix.
    pub fn to_tokens(&self) -> Tensor {
        Tensor::from_parts(
            vec![self.height * self.width, self.dim],
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )
    }
}

/// Binary mask stored as per-row run lengths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskBitmap {
    width: usize,
    height: usize,
    runs: Vec<u32>,
}

impl MaskBitmap {
    /// Wraps raw runs after checking that they decode on the given grid.
    pub fn from_runs(width: usize, height: usize, runs: Vec<u32>) -> Result<Self> {
        let mask = Self {
            width,
            height,
            runs,
        };
        mask.decode()?;
        Ok(mask)
    }

    /// Canonical (maximal-run) encoding of a row-major boolean grid.
    pub fn from_grid(width: usize, height: usize, grid: &[bool]) -> Result<Self> {
        if grid.len() != width * height {
            return Err(Error::Dimension(format!(
                "{}x{} mask from {} cells",
                width,
                height,
                grid.len()
            )));
        }
        let mut runs = Vec::new();
        for row in grid.chunks(width.max(1)).take(height) {
            let mut current = false;
            let mut len = 0u32;
            for &cell in row {
                if cell == current {
                    len += 1;
                } else {
                    runs.push(len);
                    current = cell;
                    len = 1;
                }
            }
            runs.push(len);
        }
        Ok(Self {
            width,
            height,
            runs,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let grid: Vec<bool> = (0..height)
            .flat_map(|y| (0..width).map(move |x| (y, x)))
            .map(|(y, x)| f(y, x))
            .collect();
        Self::from_grid(width, height, &grid).expect("grid size matches")
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |_, _| false)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    /// Decodes to a row-major boolean grid.
    pub fn decode(&self) -> Result<Vec<bool>> {
        let mut grid = Vec::with_capacity(self.width * self.height);
        let mut runs = self.runs.iter();
        for row in 0..self.height {
            let mut filled = 0usize;
            let mut foreground = false;
            while filled < self.width {
                let Some(&run) = runs.next() else {
                    return Err(Error::Corruption(format!(
                        "runs exhausted in row {row} after {filled} of {} pixels",
                        self.width
                    )));
                };
                filled += run as usize;
                if filled > self.width {
                    return Err(Error::Corruption(format!(
                        "row {row} runs sum past width {}",
                        self.width
                    )));
                }
                grid.extend(std::iter::repeat_n(foreground, run as usize));
                foreground = !foreground;
            }
        }
        if runs.next().is_some() {
            return Err(Error::Corruption(format!(
                "extra runs after {} rows",
                self.height
            )));
        }
        Ok(grid)
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.foreground_runs().map(|(_, _, len)| len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Iterates `(row, start_x, len)` over non-empty foreground runs. Assumes
    /// a valid encoding.
    pub fn foreground_runs(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let width = self.width;
        let mut row = 0usize;
        let mut x = 0usize;
        let mut foreground = false;
        self.runs.iter().filter_map(move |&run| {
            let run = run as usize;
            let item = (foreground && run > 0).then_some((row, x, run));
            x += run;
            foreground = !foreground;
            if x >= width {
                row += 1;
                x = 0;
                foreground = false;
            }
            item
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePack {
    pub version: u16,
    pub direction: Direction,
    pub source_features: FeatureMap,
    pub dest_features: FeatureMap,
    pub source_mask: MaskBitmap,
    pub candidates: Vec<MaskBitmap>,
    pub gt_index: Option<usize>,
    pub gt_mask: Option<MaskBitmap>,
    pub visible: bool,
}

impl FeaturePack {
    pub fn validate(&self) -> Result<()> {
        let (s, d) = (&self.source_features, &self.dest_features);
        if s.dim != d.dim {
            return Err(Error::Validation(format!(
                "source dim {} differs from destination dim {}",
                s.dim, d.dim
            )));
        }
        if s.dim == 0 || s.height == 0 || s.width == 0 || d.height == 0 || d.width == 0 {
            return Err(Error::Validation("feature maps must be non-empty".into()));
        }
        for v in [s.dim, s.height, s.width, d.height, d.width, self.candidates.len()] {
            if v > u16::MAX as usize {
                return Err(Error::Validation(format!("{v} exceeds the u16 header field")));
            }
        }
        check_grid("source mask", &self.source_mask, s)?;
        for (i, c) in self.candidates.iter().enumerate() {
            check_grid(&format!("candidate {i}"), c, d)?;
        }
        match (self.gt_index, &self.gt_mask) {
            (Some(i), Some(m)) => {
                if !self.visible {
                    return Err(Error::Validation(
                        "ground truth present on an invisible sample".into(),
                    ));
                }
                if i >= self.candidates.len() {
                    return Err(Error::Validation(format!(
                        "gt_index {} out of range for {} candidates",
                        i,
                        self.candidates.len()
                    )));
                }
                check_grid("gt mask", m, d)?;
            }
            (None, None) => {}
            _ => {
                return Err(Error::Validation(
                    "gt_index and gt_mask must be both present or both absent".into(),
                ))
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.source_features.dim
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        read_pack(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<usize> {
        self.validate()?;
        let mut out = BufWriter::new(File::create(path.as_ref())?);
        let n = write_pack(self, &mut out)?;
        out.flush()?;
        Ok(n)
    }
}

fn check_grid(what: &str, mask: &MaskBitmap, map: &FeatureMap) -> Result<()> {
    if mask.width != map.width || mask.height != map.height {
        return Err(Error::Validation(format!(
            "{what} is {}x{} but its image grid is {}x{}",
            mask.width, mask.height, map.width, map.height
        )));
    }
    mask.decode().map(|_| ())
}

/// Serializes a pack. Nothing is written when validation fails.
pub fn write_pack(pack: &FeaturePack, sink: &mut impl Write) -> Result<usize> {
    pack.validate()?;
    let bytes = encode(pack)?;
    sink.write_all(&bytes)?;
    Ok(bytes.len())
}

fn encode(pack: &FeaturePack) -> Result<Vec<u8>> {
    let (s, d) = (&pack.source_features, &pack.dest_features);
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * (s.data.len() + d.data.len()));
    buf.extend_from_slice(PACK_MAGIC);
    buf.extend_from_slice(&pack.version.to_le_bytes());
    buf.push(pack.direction.code());
    for v in [s.dim, s.height, s.width, d.height, d.width, pack.candidates.len()] {
        buf.extend_from_slice(&(v as u16).to_le_bytes());
    }
    let mut flags = 0u8;
    if pack.visible {
        flags |= FLAG_VISIBLE;
    }
    if pack.gt_index.is_some() {
        flags |= FLAG_GT;
    }
    buf.push(flags);
    for v in s.data.iter().chain(&d.data) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for mask in std::iter::once(&pack.source_mask).chain(&pack.candidates) {
        encode_mask(mask, &mut buf)?;
    }
    if let (Some(i), Some(m)) = (pack.gt_index, &pack.gt_mask) {
        buf.extend_from_slice(&(i as u16).to_le_bytes());
        encode_mask(m, &mut buf)?;
    }
    Ok(buf)
}

fn encode_mask(mask: &MaskBitmap, buf: &mut Vec<u8>) -> Result<()> {
    let count = u32::try_from(mask.runs.len())
        .map_err(|_| Error::Validation("mask run count exceeds u32".into()))?;
    buf.extend_from_slice(&count.to_le_bytes());
    for r in &mask.runs {
        buf.extend_from_slice(&r.to_le_bytes());
    }
    Ok(())
}

fn read_mask(cur: &mut Cursor<'_>, width: usize, height: usize, what: &str) -> Result<MaskBitmap> {
    let count = cur.u32(what)? as usize;
    let raw = cur.take(count * 4, what)?;
    let runs = raw
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    MaskBitmap::from_runs(width, height, runs).map_err(|e| Error::Corruption(format!("{what}: {e}")))
}

/// Parses and validates a pack.
pub fn read_pack(mut source: impl Read) -> Result<FeaturePack> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse(&bytes)
}

pub fn parse(bytes: &[u8]) -> Result<FeaturePack> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(4, "magic")?;
    if magic != PACK_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"OMMP\"",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = cur.u16("header")?;
    if version != PACK_VERSION {
        return Err(Error::Format(format!("unsupported pack version {version}")));
    }
    let direction = Direction::from_code(cur.u8("header")?)?;
    let dim = cur.u16("header")? as usize;
    let hs = cur.u16("header")? as usize;
    let ws = cur.u16("header")? as usize;
    let hd = cur.u16("header")? as usize;
    let wd = cur.u16("header")? as usize;
    let n = cur.u16("header")? as usize;
    let flags = cur.u8("header")?;
    if flags & !(FLAG_VISIBLE | FLAG_GT) != 0 {
        return Err(Error::Format(format!("unknown flag bits {flags:#04x}")));
    }
    let source_features = FeatureMap::new(hs, ws, dim, cur.f32s(hs * ws * dim, "source features")?)?;
    let dest_features = FeatureMap::new(hd, wd, dim, cur.f32s(hd * wd * dim, "destination features")?)?;
    let source_mask = read_mask(&mut cur, ws, hs, "source mask")?;
    let candidates = (0..n)
        .map(|i| read_mask(&mut cur, wd, hd, &format!("candidate {i}")))
        .collect::<Result<Vec<_>>>()?;
    let (gt_index, gt_mask) = if flags & FLAG_GT != 0 {
        let idx = cur.u16("gt index")? as usize;
        (Some(idx), Some(read_mask(&mut cur, wd, hd, "gt mask")?))
    } else {
        (None, None)
    };
    if !cur.is_done() {
        return Err(Error::Format(format!(
            "{} trailing bytes after pack body",
            cur.remaining()
        )));
    }
    let pack = FeaturePack {
        version,
        direction,
        source_features,
        dest_features,
        source_mask,
        candidates,
        gt_index,
        gt_mask,
        visible: flags & FLAG_VISIBLE != 0,
    };
    pack.validate()?;
    Ok(pack)
}
