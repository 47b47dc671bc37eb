//! Synthetic cross-view scenes with known correspondences.
//!
//! A [`SceneSpec`] fixes `K` latent identities `z_k` and one affine map per
//! view. Every pack places all `K` shapes at random in both views; a pixel
//! of object `k` in view `v` carries `A_v z_k + b_v` plus Gaussian noise,
//! background pixels carry noise only. Destination candidates are the true
//! shapes plus random sub-rectangle parts of them.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::write_manifest;
use crate::error::{Error, Result};
use crate::pack::{Direction, FeatureMap, FeaturePack, MaskBitmap, PACK_VERSION};

/// Pack `i` of an evaluation split uses generator stream `EVAL_STREAM_OFFSET + i`.
pub const EVAL_STREAM_OFFSET: u64 = 1 << 32;
/// Generator stream used to draw identities and view transforms.
const SPEC_STREAM: u64 = u64::MAX;
const PLACEMENT_TRIES: usize = 1000;
const PART_TRIES: usize = 100;

/// Knobs of a synthetic scene family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    pub objects: usize,
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    pub noise: f64,
    /// Part masks added per visible destination object.
    pub distractor_parts: usize,
    pub min_size: usize,
    pub max_size: usize,
    /// Probability that an object is absent from the destination view.
    pub invisible_prob: f64,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            objects: 8,
            dim: 16,
            height: 32,
            width: 32,
            noise: 0.5,
            distractor_parts: 2,
            min_size: 3,
            max_size: 6,
            invisible_prob: 0.0,
            seed: 0,
        }
    }
}

/// `x -> matrix * x + bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewTransform {
    /// Row-major `d x d`.
    pub matrix: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl ViewTransform {
    pub fn identity(d: usize) -> Self {
        Self {
            matrix: (0..d)
                .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
            bias: vec![0.0; d],
        }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(z).map(|(a, x)| a * x).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub params: SceneParams,
    /// `K x d`.
    pub identities: Vec<Vec<f64>>,
    /// Index 0 is the egocentric view, 1 the exocentric one.
    pub transforms: [ViewTransform; 2],
}

impl SceneSpec {
    /// Draws identities from `N(0, I)` and transform entries from
    /// `N(0, 1/d)`, biases from `N(0, 1)`.
    pub fn generate(params: SceneParams) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(SPEC_STREAM);
        let d = params.dim;
        let mut normal = |scale: f64| -> f64 {
            let n: f64 = StandardNormal.sample(&mut rng);
            n * scale
        };
        let identities = (0..params.objects)
            .map(|_| (0..d).map(|_| normal(1.0)).collect())
            .collect();
        let entry_scale = 1.0 / (d.max(1) as f64).sqrt();
        let mut transform = || ViewTransform {
            matrix: (0..d)
                .map(|_| (0..d).map(|_| normal(entry_scale)).collect())
                .collect(),
            bias: (0..d).map(|_| normal(1.0)).collect(),
        };
        let transforms = [transform(), transform()];
        let spec = Self {
            params,
            identities,
            transforms,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let bad = |m: String| Err(Error::Parameter(m));
        if p.objects < 2 {
            return bad(format!("need at least 2 objects, got {}", p.objects));
        }
        if p.dim == 0 {
            return bad("feature dimension must be > 0".into());
        }
        if p.min_size < 2 || p.max_size < p.min_size {
            return bad(format!(
                "object sizes {}..={} must satisfy 2 <= min <= max",
                p.min_size, p.max_size
            ));
        }
        if p.max_size + 2 > p.width || p.max_size + 2 > p.height {
            return bad(format!(
                "objects up to {} px do not fit a {}x{} grid with a border",
                p.max_size, p.width, p.height
            ));
        }
        if p.width > u16::MAX as usize || p.height > u16::MAX as usize || p.dim > u16::MAX as usize
        {
            return bad("grid or dimension exceeds the pack format".into());
        }
        if !(p.noise >= 0.0 && p.noise.is_finite()) {
            return bad(format!("noise {} must be finite and >= 0", p.noise));
        }
        if !(0.0..=1.0).contains(&p.invisible_prob) {
            return bad("invisible_prob must lie in [0, 1]".into());
        }
        let n_cand = p.objects * (1 + p.distractor_parts);
        if n_cand > u16::MAX as usize {
            return bad("too many candidates for the pack format".into());
        }
        if self.identities.len() != p.objects || self.identities.iter().any(|z| z.len() != p.dim) {
            return Err(Error::Dimension("identities must be K x d".into()));
        }
        for t in &self.transforms {
            if t.matrix.len() != p.dim
                || t.matrix.iter().any(|r| r.len() != p.dim)
                || t.bias.len() != p.dim
            {
                return Err(Error::Dimension("view transforms must be d x d".into()));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let spec: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    Rect,
    Ellipse,
}

/// A shape placed on a grid; `(x0, y0)` is the top-left of its box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub kind: ShapeKind,
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Placement {
    /// Whether box-relative pixel `(dy, dx)` belongs to the shape.
    fn covers_local(&self, dy: usize, dx: usize) -> bool {
        match self.kind {
            ShapeKind::Rect => dy < self.h && dx < self.w,
            ShapeKind::Ellipse => {
                if dy >= self.h || dx >= self.w {
                    return false;
                }
                let cx = (self.w as f64 - 1.0) / 2.0;
                let cy = (self.h as f64 - 1.0) / 2.0;
                let rx = self.w as f64 / 2.0;
                let ry = self.h as f64 / 2.0;
                let u = (dx as f64 - cx) / rx;
                let v = (dy as f64 - cy) / ry;
                u * u + v * v <= 1.0
            }
        }
    }

    pub fn covers(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && x >= self.x0 && self.covers_local(y - self.y0, x - self.x0)
    }

    pub fn mask(&self, width: usize, height: usize) -> MaskBitmap {
        MaskBitmap::from_fn(width, height, |y, x| self.covers(y, x))
    }

    /// Boxes grown by a one-pixel gap intersect.
    fn conflicts(&self, other: &Placement) -> bool {
        let sep_x = self.x0 + self.w + 1 <= other.x0 || other.x0 + other.w + 1 <= self.x0;
        let sep_y = self.y0 + self.h + 1 <= other.y0 || other.y0 + other.h + 1 <= self.y0;
        !(sep_x || sep_y)
    }
}

/// Bookkeeping for one generated pack.
#[derive(Clone, Debug, PartialEq)]
pub struct PackTruth {
    pub source_object: usize,
    /// For each candidate: the object it belongs to and whether it is the
    /// whole shape.
    pub candidate_objects: Vec<(usize, bool)>,
    pub visible_in_dest: Vec<bool>,
}

fn place_all<R: Rng + ?Sized>(
    sizes: &[(ShapeKind, usize, usize)],
    width: usize,
    height: usize,
    rng: &mut R,
) -> Result<Vec<Placement>> {
    let mut placed: Vec<Placement> = Vec::with_capacity(sizes.len());
    for (k, &(kind, w, h)) in sizes.iter().enumerate() {
        let mut ok = false;
        for _ in 0..PLACEMENT_TRIES {
            let cand = Placement {
                kind,
                x0: rng.random_range(1..=width - 1 - w),
                y0: rng.random_range(1..=height - 1 - h),
                w,
                h,
            };
            if placed.iter().all(|p| !p.conflicts(&cand)) {
                placed.push(cand);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::Generation(format!(
                "could not place object {k} of {} without overlap after {PLACEMENT_TRIES} tries; \
                 use fewer objects or a larger grid",
                sizes.len()
            )));
        }
    }
    Ok(placed)
}

fn render<R: Rng + ?Sized>(
    spec: &SceneSpec,
    view: usize,
    placements: &[Option<Placement>],
    rng: &mut R,
) -> Result<FeatureMap> {
    let p = &spec.params;
    let (w, h, d) = (p.width, p.height, p.dim);
    let noise = Normal::new(0.0, p.noise).map_err(|e| Error::Parameter(e.to_string()))?;
    let signals: Vec<Vec<f64>> = spec
        .identities
        .iter()
        .map(|z| spec.transforms[view].apply(z))
        .collect();
    let mut data = Vec::with_capacity(w * h * d);
    for y in 0..h {
        for x in 0..w {
            let owner = placements
                .iter()
                .position(|pl| pl.is_some_and(|pl| pl.covers(y, x)));
            for c in 0..d {
                let base = owner.map_or(0.0, |k| signals[k][c]);
                let n: f64 = noise.sample(rng);
                data.push((base + n) as f32);
            }
        }
    }
    FeatureMap::new(h, w, d, data)
}

fn random_part<R: Rng + ?Sized>(
    shape: &Placement,
    width: usize,
    height: usize,
    rng: &mut R,
) -> Option<MaskBitmap> {
    let full = shape.mask(width, height);
    for _ in 0..PART_TRIES {
        let pw = rng.random_range(2..=shape.w.div_ceil(2).max(2));
        let ph = rng.random_range(2..=shape.h.div_ceil(2).max(2));
        let ox = shape.x0 + rng.random_range(0..=shape.w - pw);
        let oy = shape.y0 + rng.random_range(0..=shape.h - ph);
        let part = MaskBitmap::from_fn(width, height, |y, x| {
            x >= ox && x < ox + pw && y >= oy && y < oy + ph && shape.covers(y, x)
        });
        if part.count() >= 2 && part != full {
            return Some(part);
        }
    }
    None
}

/// Generator for pack `index` of a split starting at stream `offset`.
pub fn pack_rng(spec: &SceneSpec, offset: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.params.seed);
    rng.set_stream(offset.wrapping_add(index));
    rng
}

pub fn generate_pack<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<FeaturePack> {
    generate_pack_with_truth(spec, rng).map(|(p, _)| p)
}

pub fn generate_pack_with_truth<R: Rng + ?Sized>(
    spec: &SceneSpec,
    rng: &mut R,
) -> Result<(FeaturePack, PackTruth)> {
    spec.validate()?;
    let p = &spec.params;
    let k = p.objects;
    let sizes: Vec<(ShapeKind, usize, usize)> = (0..k)
        .map(|_| {
            let kind = if rng.random_bool(0.5) {
                ShapeKind::Rect
            } else {
                ShapeKind::Ellipse
            };
            (
                kind,
                rng.random_range(p.min_size..=p.max_size),
                rng.random_range(p.min_size..=p.max_size),
            )
        })
        .collect();
    let direction = if rng.random_bool(0.5) {
        Direction::Ego2Exo
    } else {
        Direction::Exo2Ego
    };
    let (src_view, dst_view) = match direction {
        Direction::Ego2Exo => (0, 1),
        Direction::Exo2Ego => (1, 0),
    };
    let src_layout = place_all(&sizes, p.width, p.height, rng)?;
    let dst_layout = place_all(&sizes, p.width, p.height, rng)?;
    let source_object = rng.random_range(0..k);
    let visible_in_dest: Vec<bool> = (0..k)
        .map(|_| !(p.invisible_prob > 0.0 && rng.random_bool(p.invisible_prob)))
        .collect();

    let src_all: Vec<Option<Placement>> = src_layout.iter().copied().map(Some).collect();
    let dst_visible: Vec<Option<Placement>> = dst_layout
        .iter()
        .zip(&visible_in_dest)
        .map(|(pl, &v)| v.then_some(*pl))
        .collect();
    let source_features = render(spec, src_view, &src_all, rng)?;
    let dest_features = render(spec, dst_view, &dst_visible, rng)?;

    let mut candidates: Vec<(MaskBitmap, usize, bool)> = Vec::new();
    for (obj, pl) in dst_visible.iter().enumerate() {
        let Some(pl) = pl else { continue };
        candidates.push((pl.mask(p.width, p.height), obj, true));
        for _ in 0..p.distractor_parts {
            match random_part(pl, p.width, p.height, rng) {
                Some(m) => candidates.push((m, obj, false)),
                None => log::debug!("object {obj} too small for a part mask"),
            }
        }
    }
    candidates.shuffle(rng);

    let visible = visible_in_dest[source_object];
    let gt_index = candidates
        .iter()
        .position(|&(_, obj, whole)| visible && whole && obj == source_object);
    let gt_mask = gt_index.map(|i| candidates[i].0.clone());
    let truth = PackTruth {
        source_object,
        candidate_objects: candidates.iter().map(|&(_, o, w)| (o, w)).collect(),
        visible_in_dest,
    };
    let pack = FeaturePack {
        version: PACK_VERSION,
        direction,
        source_features,
        dest_features,
        source_mask: src_layout[source_object].mask(p.width, p.height),
        candidates: candidates.into_iter().map(|(m, _, _)| m).collect(),
        gt_index,
        gt_mask,
        visible,
    };
    pack.validate()?;
    Ok((pack, truth))
}

/// `count` packs from streams `offset..offset + count`, generated in
/// parallel.
pub fn generate_split(spec: &SceneSpec, count: usize, offset: u64) -> Result<Vec<FeaturePack>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| generate_pack(spec, &mut pack_rng(spec, offset, i)))
        .collect()
}

/// Writes `packs/pack_NNNNN.ommp` and `manifest.txt` under `dir`.
pub fn write_split(spec: &SceneSpec, dir: &Path, count: usize, offset: u64) -> Result<PathBuf> {
    let pack_dir = dir.join("packs");
    std::fs::create_dir_all(&pack_dir)?;
    let paths: Vec<PathBuf> = (0..count)
        .into_par_iter()
        .map(|i| {
            let pack = generate_pack(spec, &mut pack_rng(spec, offset, i as u64))?;
            let path = pack_dir.join(format!("pack_{i:05}.ommp"));
            pack.save(&path)?;
            Ok(path)
        })
        .collect::<Result<_>>()?;
    let manifest = dir.join("manifest.txt");
    write_manifest(&manifest, &paths)?;
    Ok(manifest)
}

/// The candidate equal to the constructed ground-truth shape, or `None`
/// when the source object is absent from the destination view.
pub fn oracle_match(pack: &FeaturePack, spec: &SceneSpec) -> Result<Option<usize>> {
    let p = &spec.params;
    if pack.dim() != p.dim
        || pack.dest_features.width() != p.width
        || pack.dest_features.height() != p.height
    {
        return Err(Error::Dimension("pack does not come from this scene spec".into()));
    }
    if !pack.visible {
        return Ok(None);
    }
    let gt = pack
        .gt_mask
        .as_ref()
        .ok_or_else(|| Error::Validation("visible pack without a ground-truth mask".into()))?;
    Ok(pack.candidates.iter().position(|c| c == gt))
}

/// Reorders candidates so that new position `i` holds old candidate
/// `perm[i]`, remapping the ground-truth index.
pub fn permute_candidates(pack: &FeaturePack, perm: &[usize]) -> Result<FeaturePack> {
    let n = pack.candidates.len();
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
        return Err(Error::Parameter("not a permutation of the candidates".into()));
    }
    let mut out = pack.clone();
    out.candidates = perm.iter().map(|&i| pack.candidates[i].clone()).collect();
    out.gt_index = pack
        .gt_index
        .map(|g| perm.iter().position(|&i| i == g).expect("permutation"));
    Ok(out)
}
