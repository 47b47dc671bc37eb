//! Random inputs for round-trip and oracle tests.

use omama::pack::{Direction, FeatureMap, FeaturePack, MaskBitmap, PACK_VERSION};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> Vec<bool> {
    (0..w * h).map(|_| rng.random_bool(density)).collect()
}

/// A grid with at least one foreground pixel.
pub fn nonempty_grid(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<bool> {
    let density = rng.random_range(0.05..0.9);
    let mut grid = random_grid(rng, w, h, density);
    let i = rng.random_range(0..w * h);
    grid[i] = true;
    grid
}

pub fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> FeatureMap {
    let data = (0..h * w * d).map(|_| rng.random_range(-4.0f32..4.0)).collect();
    FeatureMap::new(h, w, d, data).unwrap()
}

pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> MaskBitmap {
    let density = rng.random_range(0.0..1.0);
    MaskBitmap::from_grid(w, h, &random_grid(rng, w, h, density)).unwrap()
}

/// A valid pack with random sizes, features, masks and ground truth.
pub fn random_pack(rng: &mut ChaCha8Rng) -> FeaturePack {
    let d = rng.random_range(1..6);
    let (hs, ws) = (rng.random_range(1..9), rng.random_range(1..9));
    let (hd, wd) = (rng.random_range(1..9), rng.random_range(1..9));
    let n = rng.random_range(0..6);
    let candidates: Vec<MaskBitmap> = (0..n).map(|_| random_mask(rng, wd, hd)).collect();
    let visible = rng.random_bool(0.7);
    let (gt_index, gt_mask) = if visible && n > 0 && rng.random_bool(0.8) {
        let i = rng.random_range(0..n);
        (Some(i), Some(candidates[i].clone()))
    } else {
        (None, None)
    };
    FeaturePack {
        version: PACK_VERSION,
        direction: if rng.random_bool(0.5) {
            Direction::Ego2Exo
        } else {
            Direction::Exo2Ego
        },
        source_features: random_map(rng, hs, ws, d),
        dest_features: random_map(rng, hd, wd, d),
        source_mask: random_mask(rng, ws, hs),
        candidates,
        gt_index,
        gt_mask,
        visible,
    }
}

/// One-dim 2x3 maps, one 2-candidate pack with ground truth.
pub fn small_pack() -> FeaturePack {
    let map = FeatureMap::new(2, 3, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let a = MaskBitmap::from_fn(3, 2, |y, x| y == 0 && x < 2);
    let b = MaskBitmap::from_fn(3, 2, |y, _| y == 1);
    FeaturePack {
        version: PACK_VERSION,
        direction: Direction::Ego2Exo,
        source_features: map.clone(),
        dest_features: map,
        source_mask: a.clone(),
        candidates: vec![a, b.clone()],
        gt_index: Some(1),
        gt_mask: Some(b),
        visible: true,
    }
}

/// 3 to 20 points in a 32x32 square, safely in general position.
pub fn general_position_points(rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    loop {
        let n = rng.random_range(3..=20);
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random_range(0.0..32.0), rng.random_range(0.0..32.0)))
            .collect();
        if super::oracles::general_position_margin(&pts) > 1e-3 {
            return pts;
        }
    }
}

/// Inputs that need the triangulation fallbacks.
pub fn degenerate_point_sets() -> Vec<(&'static str, Vec<(f64, f64)>)> {
    vec![
        ("one point", vec![(1.0, 1.0)]),
        ("two points", vec![(0.0, 0.0), (3.0, 4.0)]),
        ("collinear", (0..6).map(|i| (i as f64, 2.0 * i as f64)).collect()),
        ("coincident pair", vec![(2.0, 2.0), (2.0, 2.0)]),
        ("all coincident", vec![(5.0, 5.0); 4]),
        (
            "coincident in a triangle",
            vec![(0.0, 0.0), (4.0, 0.0), (0.0, 4.0), (4.0, 0.0)],
        ),
        (
            "cocircular square",
            vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)],
        ),
    ]
}

pub type ErrorCheck = fn(&omama::Error) -> bool;

/// Damaged encodings of [`small_pack`] and the error class each must raise.
pub fn corruption_cases() -> Vec<(&'static str, Vec<u8>, ErrorCheck)> {
    use omama::Error;
    let mut good = Vec::new();
    omama::pack::write_pack(&small_pack(), &mut good).unwrap();
    let edit = |f: &dyn Fn(&mut Vec<u8>)| {
        let mut b = good.clone();
        f(&mut b);
        b
    };
    // Header is 20 bytes, then 2 maps of 6 f32 values, then the source mask
    // run count at 68 and its first run at 72.
    vec![
        ("bad magic", edit(&|b| b[..4].copy_from_slice(b"XXXX")), |e| {
            matches!(e, Error::Format(_))
        }),
        ("unknown version", edit(&|b| b[4] = 9), |e| matches!(e, Error::Format(_))),
        ("unknown direction", edit(&|b| b[6] = 7), |e| matches!(e, Error::Format(_))),
        ("unknown flag bits", edit(&|b| b[19] |= 0x80), |e| {
            matches!(e, Error::Format(_))
        }),
        ("truncated header", good[..10].to_vec(), |e| {
            matches!(e, Error::Length { .. })
        }),
        ("truncated body", good[..good.len() / 2].to_vec(), |e| {
            matches!(e, Error::Length { expected, actual, .. } if expected > actual)
        }),
        ("missing last byte", good[..good.len() - 1].to_vec(), |e| {
            matches!(e, Error::Length { .. })
        }),
        ("trailing bytes", edit(&|b| b.push(0)), |e| matches!(e, Error::Format(_))),
        ("row sum mismatch", edit(&|b| b[72] = 1), |e| {
            matches!(e, Error::Corruption(_))
        }),
        ("ground truth on invisible sample", edit(&|b| b[19] &= !1), |e| {
            matches!(e, Error::Validation(_))
        }),
    ]
}
