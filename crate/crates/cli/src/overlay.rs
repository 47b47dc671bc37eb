//! Binary PGM overlay: source grid on the left, destination grid on the
//! right, separated by a grey column.
//!
//! Source mask pixels are white. On the destination side every candidate is
//! dark grey and the chosen one white.

use std::path::Path;

use omama::pack::{FeaturePack, MaskBitmap};
use omama::Result;

const SCALE: usize = 4;
const CANDIDATE: u8 = 64;
const SEPARATOR: u8 = 128;
const SELECTED: u8 = 255;

fn paint(img: &mut [u8], stride: usize, x_off: usize, mask: &MaskBitmap, value: u8) -> Result<()> {
    let grid = mask.decode()?;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if !grid[y * mask.width() + x] {
                continue;
            }
            for dy in 0..SCALE {
                for dx in 0..SCALE {
                    let px = x_off + x * SCALE + dx;
                    let py = y * SCALE + dy;
                    img[py * stride + px] = img[py * stride + px].max(value);
                }
            }
        }
    }
    Ok(())
}

pub fn render(pack: &FeaturePack, chosen: Option<usize>) -> Result<(usize, usize, Vec<u8>)> {
    let (ws, hs) = (pack.source_mask.width(), pack.source_mask.height());
    let (wd, hd) = (pack.dest_features.width(), pack.dest_features.height());
    let width = (ws + wd) * SCALE + 1;
    let height = hs.max(hd) * SCALE;
    let mut img = vec![0u8; width * height];
    for y in 0..height {
        img[y * width + ws * SCALE] = SEPARATOR;
    }
    paint(&mut img, width, 0, &pack.source_mask, SELECTED)?;
    let x_off = ws * SCALE + 1;
    for (i, m) in pack.candidates.iter().enumerate() {
        let value = if Some(i) == chosen { SELECTED } else { CANDIDATE };
        paint(&mut img, width, x_off, m, value)?;
    }
    Ok((width, height, img))
}

pub fn write_overlay(path: &Path, pack: &FeaturePack, chosen: Option<usize>) -> Result<()> {
    let (w, h, pixels) = render(pack, chosen)?;
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(&pixels);
    std::fs::write(path, bytes)?;
    Ok(())
}
