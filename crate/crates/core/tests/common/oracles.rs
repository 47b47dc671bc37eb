//! Brute-force reference implementations, written without the engine's
//! helpers.

use std::collections::BTreeSet;

use omama::pack::FeatureMap;

/// Per-pixel bilinear sample of `map` at upsampled pixel `(y, x)`, from the
/// half-pixel sampling formula with border clamping.
pub fn bilinear_pixel(map: &FeatureMap, factor: usize, y: usize, x: usize) -> Vec<f64> {
    let coord = |i: usize, len: usize| {
        let s = ((i as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = s.floor() as usize;
        (lo, (lo + 1).min(len - 1), s - lo as f64)
    };
    let (y0, y1, ty) = coord(y, map.height());
    let (x0, x1, tx) = coord(x, map.width());
    let at = |yy: usize, xx: usize, c: usize| f64::from(map.pixel(yy, xx)[c]);
    (0..map.dim())
        .map(|c| {
            let top = at(y0, x0, c) + tx * (at(y0, x1, c) - at(y0, x0, c));
            let bottom = at(y1, x0, c) + tx * (at(y1, x1, c) - at(y1, x0, c));
            top + ty * (bottom - top)
        })
        .collect()
}

/// Anchored running mean in visiting order: `a + sum(v - a) / n` with `a`
/// the first vector visited.
fn anchored_mean(vectors: impl Iterator<Item = Vec<f64>>) -> Option<Vec<f64>> {
    let mut anchor: Option<Vec<f64>> = None;
    let mut acc: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for v in vectors {
        let a = anchor.get_or_insert_with(|| {
            acc = vec![0.0; v.len()];
            v.clone()
        });
        for c in 0..v.len() {
            acc[c] += v[c] - a[c];
        }
        n += 1;
    }
    let a = anchor?;
    Some((0..a.len()).map(|c| a[c] + acc[c] / n as f64).collect())
}

/// Object descriptor by a double loop over the upsampled grid.
pub fn object_descriptor(map: &FeatureMap, grid: &[bool], factor: usize) -> Option<Vec<f64>> {
    let (w, h) = (map.width(), map.height());
    let pixels = (0..h * factor)
        .flat_map(|y| (0..w * factor).map(move |x| (y, x)))
        .filter(|&(y, x)| grid[(y / factor) * w + x / factor]);
    anchored_mean(pixels.map(|(y, x)| bilinear_pixel(map, factor, y, x)))
}

/// Expanded bounding box `(x0, y0, x1, y1)` on the upsampled grid.
pub fn context_box(
    grid: &[bool],
    w: usize,
    h: usize,
    factor: usize,
    margin: f64,
) -> Option<(usize, usize, usize, usize)> {
    let (uw, uh) = (w * factor, h * factor);
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for y in 0..uh {
        for x in 0..uw {
            if grid[(y / factor) * w + x / factor] {
                bounds = Some(match bounds {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    let (x0, y0, x1, y1) = bounds?;
    let side = (x1 - x0 + 1).max(y1 - y0 + 1) as f64;
    let pad = (margin * side).round() as i64;
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    Some((
        clamp(x0 as i64 - pad, uw),
        clamp(y0 as i64 - pad, uh),
        clamp(x1 as i64 + pad, uw),
        clamp(y1 as i64 + pad, uh),
    ))
}

pub fn context_descriptor(
    map: &FeatureMap,
    grid: &[bool],
    factor: usize,
    margin: f64,
) -> Option<Vec<f64>> {
    let (x0, y0, x1, y1) = context_box(grid, map.width(), map.height(), factor, margin)?;
    let pixels = (y0..=y1).flat_map(|y| (x0..=x1).map(move |x| (y, x)));
    anchored_mean(pixels.map(|(y, x)| bilinear_pixel(map, factor, y, x)))
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

/// Positive when `d` lies strictly inside the circle through the
/// counter-clockwise triangle `a, b, c`.
fn in_circle(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> f64 {
    let (adx, ady) = (a.0 - d.0, a.1 - d.1);
    let (bdx, bdy) = (b.0 - d.0, b.1 - d.1);
    let (cdx, cdy) = (c.0 - d.0, c.1 - d.1);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

/// Smallest |orientation| over triples and |in-circle| over quadruples.
/// Large values mean the set is safely in general position.
pub fn general_position_margin(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    let mut margin = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let o = orient(points[i], points[j], points[k]);
                margin = margin.min(o.abs());
                let (a, b, c) = if o > 0.0 {
                    (points[i], points[j], points[k])
                } else {
                    (points[i], points[k], points[j])
                };
                for (l, &p) in points.iter().enumerate() {
                    if l != i && l != j && l != k {
                        margin = margin.min(in_circle(a, b, c, p).abs());
                    }
                }
            }
        }
    }
    margin
}

/// Delaunay edges by the empty-circumcircle test on every triangle.
pub fn delaunay_edges(points: &[(f64, f64)]) -> BTreeSet<(usize, usize)> {
    let n = points.len();
    let mut edges = BTreeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let o = orient(points[i], points[j], points[k]);
                if o == 0.0 {
                    continue;
                }
                let (a, b, c) = if o > 0.0 {
                    (points[i], points[j], points[k])
                } else {
                    (points[i], points[k], points[j])
                };
                let empty = (0..n)
                    .filter(|&l| l != i && l != j && l != k)
                    .all(|l| in_circle(a, b, c, points[l]) <= 0.0);
                if empty {
                    edges.extend([(i, j), (i, k), (j, k)]);
                }
            }
        }
    }
    edges
}

/// Nodes at graph distance 1 or 2 from `node` by breadth-first search.
pub fn two_hop(adjacent: &dyn Fn(usize, usize) -> bool, n: usize, node: usize) -> BTreeSet<usize> {
    let mut dist = vec![usize::MAX; n];
    dist[node] = 0;
    let mut queue = std::collections::VecDeque::from([node]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if adjacent(u, v) && dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    (0..n).filter(|&v| dist[v] == 1 || dist[v] == 2).collect()
}

/// Mean foreground pixel coordinate `(x, y)`.
pub fn centroid(grid: &[bool], w: usize) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (i, &on) in grid.iter().enumerate() {
        if on {
            sx += (i % w) as f64;
            sy += (i / w) as f64;
            n += 1;
        }
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}
