//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! for each and exits non-zero if any failed.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{oracle_loss, random_ap_instance, random_fuse_instance, random_logits, random_nms_instance, random_objects, rng, K};
use kapao::codec::{
    assign_objects, assign_targets, encode_inverse, objects_from_annotations, AnchorSet, AssignConfig, InverseConfig, PoseAnnotation,
};
use kapao::geometry::{ciou, ciou_grad, BBox};
use kapao::io::{decode_grid_file, encode_grid_file};
use kapao::loss::{loss_components, LossWeights};
use kapao::metrics::{delta_oks, evaluate_ap, fusion_rates, oks, GroundTruth, OksParams, PoseResult};
use kapao::pipeline::{fuse, nms_indices, run_pipeline, FusedPose, InferenceConfig, Overlap};
use kapao::synth::oracle::{oracle_ap, oracle_assign, oracle_fuse, oracle_nms};
use kapao::synth::{generate_scene, simulate_network, NoiseModel, SceneConfig};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scene(seed: u64) -> Vec<PoseAnnotation> {
    generate_scene(&SceneConfig { seed, ..SceneConfig::default() }).expect("default scenes are feasible")
}

fn small_scene(seed: u64, side: u32) -> Vec<PoseAnnotation> {
    let cfg = SceneConfig {
        height: side,
        width: side,
        min_persons: 1,
        max_persons: 6,
        min_scale: f64::from(side) * 0.15,
        max_scale: f64::from(side) * 0.375,
        seed,
        ..SceneConfig::default()
    };
    generate_scene(&cfg).expect("small scenes are feasible")
}

fn small_config(side: u32) -> AssignConfig {
    AssignConfig {
        height: side,
        width: side,
        ..AssignConfig::default()
    }
}

/// Largest keypoint error of `pose` over the labeled keypoints of `ann`.
fn keypoint_error(pose: &FusedPose, ann: &PoseAnnotation) -> f64 {
    (0..K)
        .filter(|&k| ann.is_labeled(k))
        .map(|k| (pose.keypoints[k].x - ann.keypoints[k][0]).hypot(pose.keypoints[k].y - ann.keypoints[k][1]))
        .fold(0.0, f64::max)
}

fn round_trip_fidelity() -> Outcome {
    let start = Instant::now();
    let anchors = AnchorSet::default();
    let ac = AssignConfig::default();
    let cfg = InferenceConfig::default();
    let params = OksParams::coco();
    let (mut poses, mut representable, mut failures) = (0usize, 0usize, 0usize);
    let (mut worst_err, mut worst_oks) = (0.0f64, 1.0f64);
    for seed in 0..1000 {
        let anns = scene(seed);
        let objects = objects_from_annotations(&anns, &ac).unwrap();
        let record = assign_objects(objects, &anchors, &ac).unwrap();
        let (grids, report) = encode_inverse(&record, &anchors, &InverseConfig::default()).unwrap();
        let out = run_pipeline(&grids, &anchors, &cfg).unwrap();
        for r in &report.objects {
            if !record.objects[r.object].is_pose() {
                continue;
            }
            poses += 1;
            if !r.representable() {
                continue;
            }
            representable += 1;
            let ann = &anns[record.objects[r.object].annotation];
            let best = out
                .poses
                .iter()
                .min_by(|a, b| keypoint_error(a, ann).total_cmp(&keypoint_error(b, ann)));
            let Some(best) = best else {
                failures += 1;
                continue;
            };
            let err = keypoint_error(best, ann);
            let o = oks(&best.points(), ann, &params).unwrap();
            worst_err = worst_err.max(err);
            worst_oks = worst_oks.min(o);
            if !(err < 1e-2 && o > 0.999) {
                failures += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && elapsed < Duration::from_secs(120),
        format!(
            "{representable}/{poses} poses representable, {failures} not recovered, worst error {worst_err:.2e} px, worst OKS {worst_oks:.6}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2024);
    let mut mismatches = [0usize; 4];

    for _ in 0..1000 {
        let dets = random_nms_instance(&mut r, 500);
        let threshold = match r.random_range(0..10) {
            0 => 0.0,
            1 => 1.0,
            _ => r.random_range(0.0..1.0),
        };
        let per_class = r.random_bool(0.5);
        let overlap = if r.random_bool(0.5) { Overlap::Ciou } else { Overlap::Iou };
        if nms_indices(&dets, threshold, per_class, overlap).unwrap() != oracle_nms(&dets, threshold, per_class, overlap).unwrap() {
            mismatches[0] += 1;
        }
    }

    for _ in 0..1000 {
        let (poses, kps) = random_fuse_instance(&mut r, 500);
        let max_distance = r.random_range(0.0..80.0);
        let min_conf = r.random_range(0.0..1.0);
        if fuse(&poses, &kps, max_distance, min_conf).unwrap() != oracle_fuse(&poses, &kps, max_distance, min_conf).unwrap() {
            mismatches[1] += 1;
        }
    }

    let anchors = AnchorSet::default();
    let ac = small_config(256);
    for _ in 0..1000 {
        let objects = random_objects(&mut r, 256.0, 50);
        let expected = oracle_assign(&objects, &anchors, &ac).unwrap();
        let record = assign_objects(objects, &anchors, &ac).unwrap();
        let got: Vec<_> = record.assigned.iter().map(|c| (c.slot, c.object)).collect();
        if got != expected {
            mismatches[2] += 1;
        }
    }

    let params = OksParams::coco();
    for _ in 0..1000 {
        let (results, gts) = random_ap_instance(&mut r);
        let max_dets = if r.random_bool(0.3) { None } else { Some(r.random_range(1..=25)) };
        let s = evaluate_ap(&results, &gts, &params, max_dets).unwrap();
        if (s.ap, s.ar) != oracle_ap(&results, &gts, &params, max_dets).unwrap() {
            mismatches[3] += 1;
        }
    }

    let elapsed = start.elapsed();
    outcome(
        mismatches == [0; 4] && elapsed < Duration::from_secs(300),
        format!(
            "mismatches nms {} / fuse {} / assign {} / ap {} over 1000 instances each, {:.1}s",
            mismatches[0],
            mismatches[1],
            mismatches[2],
            mismatches[3],
            elapsed.as_secs_f64()
        ),
    )
}

fn relative(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn loss_correctness() -> Outcome {
    let anchors = AnchorSet::default();
    let ac = small_config(256);
    let weights = LossWeights::defaults(K, 256, 4, 1);
    let mut r = rng(7);

    let mut worst_rel = 0.0f64;
    for seed in 0..100 {
        let (targets, _) = assign_targets(&small_scene(seed, 256), &anchors, &ac).unwrap();
        let pred = random_logits(&targets.grids, 6.0, &mut r);
        let c = loss_components(&pred, &targets, &anchors, &weights).unwrap();
        let o = oracle_loss(&pred, &targets, &anchors, &weights.omega);
        for (x, y) in [c.obj, c.bbox, c.cls, c.kps].into_iter().zip(o) {
            worst_rel = worst_rel.max(relative(x, y));
        }
    }

    let (mut perfect_scenes, mut worst_box, mut worst_kps) = (0usize, 0.0f64, 0.0f64);
    for seed in 1000..1400 {
        let anns = small_scene(seed, 256);
        let (targets, record) = assign_targets(&anns, &anchors, &ac).unwrap();
        let (pred, report) = encode_inverse(&record, &anchors, &InverseConfig::default()).unwrap();
        if report.objects.iter().any(|o| !o.unrepresentable.is_empty()) {
            continue;
        }
        let c = loss_components(&pred, &targets, &anchors, &weights).unwrap();
        worst_box = worst_box.max(c.bbox);
        worst_kps = worst_kps.max(c.kps);
        perfect_scenes += 1;
        if perfect_scenes == 100 {
            break;
        }
    }

    let mut worst_grad = 0.0f64;
    let mut pairs = 0;
    while pairs < 100 {
        let a = BBox::new(r.random_range(0.0..100.0), r.random_range(0.0..100.0), r.random_range(5.0..60.0), r.random_range(5.0..60.0));
        let b = BBox::new(r.random_range(0.0..100.0), r.random_range(0.0..100.0), r.random_range(5.0..60.0), r.random_range(5.0..60.0));
        let Ok(g) = ciou_grad(&a, &b) else { continue };
        let h = 1e-5;
        let mut fd = [0.0; 4];
        for (c, d) in fd.iter_mut().enumerate() {
            let mut p = a.as_array();
            let mut m = a.as_array();
            p[c] += h;
            m[c] -= h;
            *d = (ciou(&BBox::from_array(p), &b).unwrap() - ciou(&BBox::from_array(m), &b).unwrap()) / (2.0 * h);
        }
        let scale = g.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        let err = g.iter().zip(&fd).fold(0.0f64, |s, (x, y)| s.max((x - y).abs()));
        worst_grad = worst_grad.max(err / scale);
        pairs += 1;
    }

    outcome(
        worst_rel <= 1e-9 && perfect_scenes >= 20 && worst_box < 1e-6 && worst_kps < 1e-4 && worst_grad <= 1e-5,
        format!(
            "oracle rel. error {worst_rel:.1e}; perfect limit over {perfect_scenes} scenes L_box {worst_box:.1e}, L_kps {worst_kps:.1e}; CIoU gradient rel. error {worst_grad:.1e}"
        ),
    )
}

struct FusionExperiment {
    wins: usize,
    losses: usize,
    mean_delta: f64,
    ap_on: f64,
    ap_off: f64,
    rates: Vec<Option<f64>>,
}

fn fusion_experiment() -> FusionExperiment {
    let anchors = AnchorSet::default();
    let ac = AssignConfig::default();
    let on = InferenceConfig::default();
    let off = InferenceConfig { tau_ck: 1.0, ..on };
    let params = OksParams::coco();
    let (mut gts, mut with, mut without) = (Vec::new(), Vec::new(), Vec::new());
    let (mut fused_all, mut anns_all) = (Vec::new(), Vec::new());
    for seed in 0..200u64 {
        let anns = scene(seed);
        let noise = NoiseModel::asymmetric(8.0, 1.0, seed + 10_000);
        let sim = simulate_network(&anns, &anchors, &ac, &noise).unwrap();
        let a = run_pipeline(&sim.grids, &anchors, &on).unwrap();
        let b = run_pipeline(&sim.grids, &anchors, &off).unwrap();
        with.extend(a.poses.iter().map(|p| PoseResult::from_fused(seed, p)));
        without.extend(b.poses.iter().map(|p| PoseResult::from_fused(seed, p)));
        gts.extend(anns.iter().map(|x| GroundTruth { image_id: seed, annotation: x.clone() }));
        fused_all.extend(a.poses);
        anns_all.extend(anns);
    }
    let deltas = delta_oks(&with, &without, &gts, &params, 20).unwrap();
    FusionExperiment {
        wins: deltas.iter().filter(|d| d.delta > 0.0).count(),
        losses: deltas.iter().filter(|d| d.delta < 0.0).count(),
        mean_delta: deltas.iter().map(|d| d.delta).sum::<f64>() / deltas.len() as f64,
        ap_on: evaluate_ap(&with, &gts, &params, Some(20)).unwrap().ap,
        ap_off: evaluate_ap(&without, &gts, &params, Some(20)).unwrap().ap,
        rates: fusion_rates(&fused_all, &anns_all, K),
    }
}

/// One-sided sign test: P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    let mut log_choose = vec![0.0f64; n + 1];
    for i in 1..=n {
        log_choose[i] = log_choose[i - 1] + ((n - i + 1) as f64).ln() - (i as f64).ln();
    }
    (wins..=n).map(|i| (log_choose[i] - n as f64 * 2f64.ln()).exp()).sum()
}

fn fusion_benefit(e: &FusionExperiment) -> Outcome {
    let p = sign_test(e.wins, e.losses);
    outcome(
        e.mean_delta > 0.0 && p < 0.01 && e.ap_on > e.ap_off,
        format!(
            "fusion better on {} images, worse on {}, sign test p = {p:.1e}, mean ΔOKS {:.3}; AP {:.4} vs {:.4}",
            e.wins, e.losses, e.mean_delta, e.ap_on, e.ap_off
        ),
    )
}

fn fusion_rate_ordering(e: &FusionExperiment) -> Outcome {
    let mean = |ks: &[usize]| ks.iter().map(|&k| e.rates[k].unwrap_or(0.0)).sum::<f64>() / ks.len() as f64;
    let face = mean(&[0, 1, 2, 3, 4]);
    let hips = mean(&[11, 12]);
    outcome(face > hips, format!("face fusion rate {face:.3}, hip fusion rate {hips:.3}"))
}

fn postprocessing_latency() -> Outcome {
    let anchors = AnchorSet::default();
    let ac = AssignConfig::default();
    let cfg = InferenceConfig::default();
    let mut totals = Vec::new();
    let mut max_surviving = 0usize;
    for seed in 0..100u64 {
        let anns = generate_scene(&SceneConfig {
            seed: 50_000 + seed,
            max_persons: 5,
            ..SceneConfig::default()
        })
        .unwrap();
        let sim = simulate_network(&anns, &anchors, &ac, &NoiseModel::asymmetric(8.0, 1.0, seed)).unwrap();
        let bytes = encode_grid_file(&sim.grids, None).unwrap();
        let file = decode_grid_file(&bytes).unwrap();
        assert_eq!(file.grids.total_cell_anchors(), 102_000);
        let warm = run_pipeline(&file.grids, &anchors, &cfg).unwrap();
        max_surviving = max_surviving.max(warm.counts.poses_after_nms + warm.counts.keypoints_after_nms);
        totals.push(run_pipeline(&file.grids, &anchors, &cfg).unwrap().timings.total.as_secs_f64() * 1e3);
    }
    totals.sort_by(f64::total_cmp);
    let median = 0.5 * (totals[49] + totals[50]);
    outcome(
        median <= 20.0 && max_surviving <= 100,
        format!("median {median:.2} ms over 100 full-size grid sets (max {:.2} ms), at most {max_surviving} surviving detections", totals[99]),
    )
}

fn mutate(base: &[u8], r: &mut rand_chacha::ChaCha8Rng) -> Vec<u8> {
    let mut b = base.to_vec();
    let header = 17 + 12 * 4;
    match r.random_range(0..8) {
        0 => {
            let i = r.random_range(0..header);
            b[i] ^= 1 << r.random_range(0..8);
        }
        1 => {
            let i = r.random_range(0..header);
            b[i] = r.random();
        }
        2 => {
            let i = r.random_range(0..b.len());
            b[i] ^= 1 << r.random_range(0..8);
        }
        3 => b.truncate(r.random_range(0..b.len())),
        4 => b.extend((0..r.random_range(1..64)).map(|_| r.random::<u8>())),
        5 => {
            // a field of the header set to an extreme value
            let i = r.random_range(4..header - 3);
            let v: [u8; 4] = if r.random_bool(0.5) { [0xff; 4] } else { [0; 4] };
            b[i..i + 4].copy_from_slice(&v);
        }
        6 => {
            let i = header + 4 * r.random_range(0..(b.len() - header) / 4);
            let v = [f32::NAN, f32::INFINITY, f32::NEG_INFINITY, -0.0, f32::MAX][r.random_range(0..5)];
            b[i..i + 4].copy_from_slice(&v.to_le_bytes());
        }
        _ => {
            let n = r.random_range(0..4 * header);
            b = (0..n).map(|_| r.random()).collect();
            if r.random_bool(0.5) && b.len() >= 4 {
                b[..4].copy_from_slice(b"KAPG");
            }
        }
    }
    b
}

fn format_robustness() -> Outcome {
    let anchors = AnchorSet::default();
    let ac = small_config(128);
    let anns = generate_scene(&SceneConfig {
        height: 128,
        width: 128,
        min_persons: 2,
        max_persons: 3,
        min_scale: 30.0,
        max_scale: 45.0,
        seed: 3,
        ..SceneConfig::default()
    })
    .unwrap();
    let (targets, _) = assign_targets(&anns, &anchors, &ac).unwrap();
    let with_mask = encode_grid_file(&targets.grids, Some(&targets.mask)).unwrap();
    let logits = random_logits(&targets.grids, 4.0, &mut rng(5));
    let plain = encode_grid_file(&logits, None).unwrap();

    let mut r = rng(99);
    let (mut rejected, mut accepted, mut panics, mut misreads) = (0usize, 0usize, 0usize, 0usize);
    let mut codes = std::collections::BTreeMap::new();
    let quiet = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    for n in 0..1000 {
        let base = if n % 2 == 0 { &with_mask } else { &plain };
        let bytes = mutate(base, &mut r);
        match panic::catch_unwind(AssertUnwindSafe(|| decode_grid_file(&bytes))) {
            Err(_) => panics += 1,
            Ok(Err(e)) => {
                rejected += 1;
                *codes.entry(e.code()).or_insert(0usize) += 1;
            }
            Ok(Ok(file)) => {
                accepted += 1;
                // an accepted file must be exactly what its bytes say
                if encode_grid_file(&file.grids, file.mask.as_ref()).ok().as_deref() != Some(&bytes[..]) {
                    misreads += 1;
                }
            }
        }
    }
    panic::set_hook(quiet);
    let classes: Vec<String> = codes.iter().map(|(c, n)| format!("{c} {n}")).collect();
    outcome(
        panics == 0 && misreads == 0,
        format!(
            "{rejected} rejected ({}), {accepted} read back byte-exact, {misreads} misreads, {panics} panics",
            classes.join(", ")
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let guarded = |f: &dyn Fn() -> Outcome| match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        }
    };
    results.push(("round-trip fidelity", guarded(&round_trip_fidelity)));
    results.push(("oracle equivalence", guarded(&oracle_equivalence)));
    results.push(("loss correctness", guarded(&loss_correctness)));
    match panic::catch_unwind(fusion_experiment) {
        Ok(e) => {
            results.push(("fusion benefit", fusion_benefit(&e)));
            results.push(("fusion-rate ordering", fusion_rate_ordering(&e)));
        }
        Err(_) => {
            results.push(("fusion benefit", outcome(false, "experiment panicked".into())));
            results.push(("fusion-rate ordering", outcome(false, "experiment panicked".into())));
        }
    }
    results.push(("post-processing latency", guarded(&postprocessing_latency)));
    results.push(("format robustness", guarded(&format_robustness)));

    let mut failed = 0;
    for (n, (name, o)) in results.iter().enumerate() {
        println!("criterion {} {name}: {} ({})", n + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
