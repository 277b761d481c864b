mod common;

use common::{random_ap_instance, random_annotation, rng, K};
use kapao::codec::PoseAnnotation;
use kapao::geometry::BBox;
use kapao::metrics::{delta_oks, evaluate_ap, oks, EvalSummary, OksParams, PoseResult};
use proptest::prelude::*;
use rand::Rng;

fn shifted(a: &PoseAnnotation, dx: f64, dy: f64) -> PoseAnnotation {
    PoseAnnotation {
        bbox: BBox::new(a.bbox.cx + dx, a.bbox.cy + dy, a.bbox.w, a.bbox.h),
        keypoints: a.keypoints.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
        visibility: a.visibility.clone(),
    }
}

fn check_unit(s: &EvalSummary) -> Result<(), TestCaseError> {
    let unit = |v: f64| (0.0..=1.0).contains(&v);
    prop_assert!(unit(s.ap) && unit(s.ap50) && unit(s.ap75) && unit(s.ar), "{} {} {} {}", s.ap, s.ap50, s.ap75, s.ar);
    for c in &s.curves {
        prop_assert!(unit(c.ap) && unit(c.recall));
        prop_assert!(c.precision.iter().all(|&p| unit(p)));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn oks_lies_in_the_unit_interval(seed in 0u64..100_000) {
        let mut r = rng(seed);
        let gt = random_annotation(&mut r);
        prop_assume!(gt.labeled_count() > 0);
        let pred: Vec<[f64; 2]> = (0..K).map(|_| [r.random_range(-200.0..800.0), r.random_range(-200.0..800.0)]).collect();
        let o = oks(&pred, &gt, &OksParams::coco()).unwrap();
        prop_assert!((0.0..=1.0).contains(&o), "{}", o);
        prop_assert_eq!(oks(&gt.keypoints, &gt, &OksParams::coco()).unwrap(), 1.0);
    }

    #[test]
    fn oks_is_translation_invariant(seed in 0u64..100_000, dx in -1000.0f64..1000.0, dy in -1000.0f64..1000.0) {
        let mut r = rng(seed);
        let gt = random_annotation(&mut r);
        prop_assume!(gt.labeled_count() > 0);
        let pred: Vec<[f64; 2]> = gt.keypoints.iter().map(|p| [p[0] + r.random_range(-30.0..30.0), p[1] + r.random_range(-30.0..30.0)]).collect();
        let moved: Vec<[f64; 2]> = pred.iter().map(|p| [p[0] + dx, p[1] + dy]).collect();
        let params = OksParams::coco();
        let a = oks(&pred, &gt, &params).unwrap();
        let b = oks(&moved, &shifted(&gt, dx, dy), &params).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn oks_falls_as_one_keypoint_moves_away(seed in 0u64..100_000, u in 0.0f64..0.99, gap in 0.01f64..1.0, angle in 0.0f64..std::f64::consts::TAU) {
        let mut r = rng(seed);
        let gt = random_annotation(&mut r);
        let labeled: Vec<usize> = (0..K).filter(|&k| gt.is_labeled(k)).collect();
        prop_assume!(!labeled.is_empty());
        let k = labeled[r.random_range(0..labeled.len())];
        let params = OksParams::coco();
        // beyond a few spreads the term underflows relative to the rest
        let reach = 4.0 * gt.bbox.area().sqrt() * params.k[k];
        let d1 = u * reach;
        let d2 = (d1 + gap * reach).min(reach);
        prop_assume!(d2 > d1);
        let mut pred: Vec<[f64; 2]> = gt.keypoints.iter().map(|p| [p[0] + r.random_range(-10.0..10.0), p[1] + r.random_range(-10.0..10.0)]).collect();
        let at = |d: f64, pred: &mut Vec<[f64; 2]>| {
            pred[k] = [gt.keypoints[k][0] + d * angle.cos(), gt.keypoints[k][1] + d * angle.sin()];
            oks(pred, &gt, &params).unwrap()
        };
        let near = at(d1, &mut pred);
        let far = at(d2, &mut pred);
        prop_assert!(far < near, "{} at {} vs {} at {}", far, d2, near, d1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn summaries_lie_in_the_unit_interval(seed in 0u64..100_000) {
        let (results, gts) = random_ap_instance(&mut rng(seed));
        let params = OksParams::coco();
        check_unit(&evaluate_ap(&results, &gts, &params, None).unwrap())?;
        check_unit(&evaluate_ap(&results, &gts, &params, Some(3)).unwrap())?;
        let mut other = results.clone();
        other.reverse();
        for d in delta_oks(&results, &other, &gts, &params, 20).unwrap() {
            prop_assert!((-1.0..=1.0).contains(&d.delta));
        }
    }

    #[test]
    fn ap_depends_only_on_score_order(seed in 0u64..100_000, power in 0.2f64..5.0, scale in 0.1f64..1.0) {
        let (results, gts) = random_ap_instance(&mut rng(seed));
        let params = OksParams::coco();
        let squashed: Vec<PoseResult> = results.iter().map(|p| PoseResult { score: scale * p.score.powf(power), ..p.clone() }).collect();
        for max_dets in [None, Some(4)] {
            let a = evaluate_ap(&results, &gts, &params, max_dets).unwrap();
            let b = evaluate_ap(&squashed, &gts, &params, max_dets).unwrap();
            prop_assert_eq!(a.ap, b.ap);
            prop_assert_eq!(a.ar, b.ar);
        }
    }

    #[test]
    fn a_top_ranked_exact_hit_never_lowers_ap(seed in 0u64..100_000) {
        let (results, gts) = random_ap_instance(&mut rng(seed));
        let params = OksParams::coco();
        let unmatched = gts.iter().find(|g| {
            g.annotation.labeled_count() > 0
                && results
                    .iter()
                    .filter(|p| p.image_id == g.image_id)
                    .all(|p| oks(&p.points(), &g.annotation, &params).unwrap() < 0.5)
        });
        prop_assume!(unmatched.is_some());
        let g = unmatched.unwrap();
        let mut more: Vec<PoseResult> = results.iter().map(|p| PoseResult { score: 0.9 * p.score, ..p.clone() }).collect();
        more.push(PoseResult {
            image_id: g.image_id,
            keypoints: g.annotation.keypoints.iter().map(|p| [p[0], p[1], 1.0]).collect(),
            score: 1.0,
        });
        let before = evaluate_ap(&results, &gts, &params, None).unwrap();
        let after = evaluate_ap(&more, &gts, &params, None).unwrap();
        prop_assert!(after.ap >= before.ap, "{} < {}", after.ap, before.ap);
        prop_assert!(after.ar >= before.ar);
    }
}
