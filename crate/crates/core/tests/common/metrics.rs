//! Hand-checkable metric cases as `(name, computed, expected)`.

use omama::eval::{aggregate, contour_accuracy, decide, iou, location_error, score_sample, grid_diagonal};
use omama::pack::MaskBitmap;
use omama::synthetic::{generate_split, SceneParams, SceneSpec};

fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> MaskBitmap {
    MaskBitmap::from_fn(w, h, |y, x| (x0..=x1).contains(&x) && (y0..=y1).contains(&y))
}

pub fn metric_fixtures() -> Vec<(&'static str, f64, f64)> {
    let (w, h) = (16, 16);
    let sq = rect(w, h, 5, 5, 10, 10);
    let far = rect(w, h, 0, 0, 2, 2);
    // 4-neighbour dilation of `sq` by one pixel: corners stay out.
    let dilated = MaskBitmap::from_fn(w, h, |y, x| {
        let inside = |yy: i64, xx: i64| (5..=10).contains(&yy) && (5..=10).contains(&xx);
        let (y, x) = (y as i64, x as i64);
        inside(y, x) || inside(y - 1, x) || inside(y + 1, x) || inside(y, x - 1) || inside(y, x + 1)
    });
    let left = rect(w, h, 2, 4, 5, 7);
    let shifted = rect(w, h, 4, 4, 7, 7);
    let empty = MaskBitmap::empty(w, h);
    let corner_a = rect(w, h, 0, 0, 0, 0);
    let corner_b = rect(w, h, 15, 15, 15, 15);
    let one_px = 1.0 / grid_diagonal(w, h);

    vec![
        ("iou identical", iou(&sq, &sq).unwrap(), 1.0),
        ("iou disjoint", iou(&sq, &far).unwrap(), 0.0),
        ("iou half overlap", iou(&left, &shifted).unwrap(), 1.0 / 3.0),
        ("iou both empty", iou(&empty, &empty).unwrap(), 1.0),
        ("loc.e identical", location_error(&sq, &sq).unwrap().unwrap(), 0.0),
        (
            "loc.e opposite corners",
            location_error(&corner_a, &corner_b).unwrap().unwrap(),
            1.0,
        ),
        ("cont.a identical", contour_accuracy(&sq, &sq, 0.0075).unwrap(), 1.0),
        ("cont.a far apart", contour_accuracy(&sq, &far, 0.0075).unwrap(), 0.0),
        (
            "cont.a dilated square at 1px",
            contour_accuracy(&dilated, &sq, one_px * 1.000001).unwrap(),
            1.0,
        ),
        (
            "cont.a dilated square at 1.5px",
            contour_accuracy(&dilated, &sq, one_px * 1.5).unwrap(),
            1.0,
        ),
    ]
}

/// Decisions for the selection examples: `(name, holds)`.
pub fn selection_fixtures() -> Vec<(&'static str, bool)> {
    let single = decide(vec![(0, 0.9)], 0.5);
    let low = decide(vec![(0, 0.3), (1, 0.1)], 0.5);
    let tie = decide(omama::eval::rank(&[0, 1, 2], &[0.7, 0.7, 0.2]), 0.5);
    let none = decide(Vec::new(), 0.5);
    vec![
        (
            "singleton argmax",
            single.chosen_index == Some(0) && single.visible_pred,
        ),
        (
            "below threshold",
            !low.visible_pred && low.chosen_index.is_none(),
        ),
        ("tie keeps lower index", tie.chosen_index == Some(0)),
        (
            "no candidates",
            !none.visible_pred && none.similarity == -1.0 && none.diagnostic.is_some(),
        ),
    ]
}

/// Aggregates of an oracle predictor and an always-invisible predictor on a
/// small all-visible synthetic set: `(name, computed, expected)`.
pub fn predictor_bounds() -> Vec<(&'static str, f64, f64)> {
    let spec = SceneSpec::generate(SceneParams {
        objects: 4,
        ..Default::default()
    })
    .unwrap();
    let packs = generate_split(&spec, 20, 0).unwrap();
    let mut perfect = Vec::new();
    let mut blind = Vec::new();
    for (i, pack) in packs.iter().enumerate() {
        let gt = pack.gt_index.unwrap();
        let ranked: Vec<(usize, f64)> = std::iter::once((gt, 1.0))
            .chain((0..pack.candidates.len()).filter(|&c| c != gt).map(|c| (c, 0.0)))
            .collect();
        let name = format!("pack {i}");
        perfect.push(score_sample(name.clone(), pack, &decide(ranked.clone(), 0.5), 0.0075).unwrap());
        blind.push(score_sample(name, pack, &decide(ranked, 2.0), 0.0075).unwrap());
    }
    let p = aggregate(&perfect, 0);
    let b = aggregate(&blind, 0);
    vec![
        ("perfect IoU", p.iou, 1.0),
        ("perfect Vis.A", p.vis_acc, 1.0),
        ("perfect Loc.E", p.loc_error.unwrap(), 0.0),
        ("perfect Cont.A", p.contour.unwrap(), 1.0),
        ("always-invisible Vis.A", b.vis_acc, 0.0),
    ]
}
