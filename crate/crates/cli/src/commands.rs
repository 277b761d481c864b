use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use kapao::codec::{assign_objects, assign_targets, encode_inverse, objects_from_annotations, AnchorSet, InverseConfig, PoseAnnotation};
use kapao::io::json::{annotations_json, read_annotations, read_results, results_json, write_text};
use kapao::io::{read_grid_file, write_grid_file, Config};
use kapao::metrics::{evaluate_ap, GroundTruth, OksParams, PoseResult};
use kapao::pipeline::{run_pipeline, InferenceConfig, Overlap, PipelineOutput};
use kapao::synth::{generate_scene, simulate_network, NoiseModel, SceneConfig};
use serde_json::{json, Value};

use crate::error::{invalid, CliError};
use crate::{NoiseKind, OverlapArg};

/// Mixed into a scene seed to derive its noise seed.
const NOISE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub struct SynthArgs {
    pub count: usize,
    pub seed: u64,
    pub min_persons: usize,
    pub max_persons: usize,
    pub min_scale: Option<f64>,
    pub max_scale: Option<f64>,
    pub occlusion: f64,
    pub out: Option<PathBuf>,
    pub grids_dir: Option<PathBuf>,
    pub noise: NoiseKind,
    pub pose_sigma: f64,
    pub local_sigma: f64,
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => Ok(write_text(p, text)?),
        None => print_line(text),
    }
}

/// Prints to stdout; a closed pipe is not an error.
pub fn print_line(text: &str) -> Result<(), CliError> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io("io", format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json values serialize")
}

fn anchors(cfg: &Config) -> Result<AnchorSet, CliError> {
    Ok(cfg.anchor_set()?)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn scene_config(cfg: &Config, a: &SynthArgs, seed: u64) -> SceneConfig {
    let base = SceneConfig::default();
    // Persons are kept to at most 3/8 of the shorter side unless asked otherwise.
    let short = f64::from(cfg.height.min(cfg.width));
    let max_scale = a.max_scale.unwrap_or(base.max_scale.min(0.375 * short));
    let min_scale = a.min_scale.unwrap_or(base.min_scale.min(max_scale));
    SceneConfig {
        height: cfg.height,
        width: cfg.width,
        min_persons: a.min_persons,
        max_persons: a.max_persons,
        min_scale,
        max_scale,
        occlusion_prob: a.occlusion,
        seed,
        ..base
    }
}

pub fn synth(cfg: &Config, a: &SynthArgs) -> Result<(), CliError> {
    let set = anchors(cfg)?;
    if let Some(dir) = &a.grids_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io("io", format!("{}: {e}", dir.display())))?;
    }
    let mut gts = Vec::new();
    for n in 0..a.count {
        let seed = a.seed.wrapping_add(n as u64);
        let scene = generate_scene(&scene_config(cfg, a, seed)).map_err(invalid("synth"))?;
        if let Some(dir) = &a.grids_dir {
            let noise = match a.noise {
                NoiseKind::None => NoiseModel::exact(cfg.num_keypoints),
                NoiseKind::Asymmetric => NoiseModel::asymmetric(a.pose_sigma, a.local_sigma, seed ^ NOISE_SALT),
            };
            let sim = simulate_network(&scene, &set, &cfg.assign_config(), &noise).map_err(invalid("synth"))?;
            write_grid_file(&dir.join(format!("scene_{n:05}.kapg")), &sim.grids, None)?;
        }
        gts.extend(scene.into_iter().map(|annotation| GroundTruth {
            image_id: n as u64,
            annotation,
        }));
    }
    emit(a.out.as_deref(), &annotations_json(&gts))
}

fn image_annotations(gts: Vec<GroundTruth>, image_id: Option<u64>) -> Result<Vec<PoseAnnotation>, CliError> {
    let id = match image_id {
        Some(id) => id,
        None => {
            let mut ids: Vec<u64> = gts.iter().map(|g| g.image_id).collect();
            ids.dedup();
            match ids.as_slice() {
                [] => return Ok(Vec::new()),
                [id] => *id,
                _ => return Err(CliError::validation("image_id", "annotations cover several images; pass --image-id")),
            }
        }
    };
    Ok(gts.into_iter().filter(|g| g.image_id == id).map(|g| g.annotation).collect())
}

pub fn encode(cfg: &Config, annotations: &Path, image_id: Option<u64>, out: &Path, targets: bool) -> Result<(), CliError> {
    let set = anchors(cfg)?;
    let anns = image_annotations(read_annotations(annotations, cfg.num_keypoints)?, image_id)?;
    let ac = cfg.assign_config();
    let summary = if targets {
        let (tg, record) = assign_targets(&anns, &set, &ac).map_err(invalid("codec"))?;
        write_grid_file(out, &tg.grids, Some(&tg.mask))?;
        json!({
            "objects": record.objects.len(),
            "assigned_cells": record.assigned.len(),
            "collisions": record.collisions.len(),
        })
    } else {
        let objects = objects_from_annotations(&anns, &ac).map_err(invalid("codec"))?;
        let record = assign_objects(objects, &set, &ac).map_err(invalid("codec"))?;
        let (grids, report) = encode_inverse(&record, &set, &InverseConfig::default()).map_err(invalid("codec"))?;
        write_grid_file(out, &grids, None)?;
        json!({
            "objects": record.objects.len(),
            "assigned_cells": record.assigned.len(),
            "collisions": record.collisions.len(),
            "unrepresentable_objects": report.unrepresentable_objects().collect::<Vec<_>>(),
        })
    };
    print_line(&summary.to_string())
}

pub fn decode(cfg: &Config, grid: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let set = anchors(cfg)?;
    let file = read_grid_file(grid)?;
    let i = &cfg.inference;
    let dets = kapao::codec::decode_grids(&file.grids, &set, i.tau_cp, i.tau_ck).map_err(invalid("codec"))?;
    emit(out, &pretty(&json!({ "poses": dets.poses, "keypoints": dets.keypoints })))
}

fn inference(cfg: &Config, overlap: OverlapArg) -> InferenceConfig {
    InferenceConfig {
        overlap: match overlap {
            OverlapArg::Ciou => Overlap::Ciou,
            OverlapArg::Iou => Overlap::Iou,
        },
        ..cfg.inference
    }
}

fn timing_json(out: &PipelineOutput) -> Value {
    let t = &out.timings;
    json!({
        "decode_ms": ms(t.decode),
        "nms_ms": ms(t.nms),
        "fuse_ms": ms(t.fuse),
        "total_ms": ms(t.total),
        "counts": out.counts,
    })
}

pub fn fuse(cfg: &Config, grid: &Path, image_id: u64, out: Option<&Path>, timing: Option<&Path>, overlap: OverlapArg) -> Result<(), CliError> {
    let set = anchors(cfg)?;
    let file = read_grid_file(grid)?;
    let result = run_pipeline(&file.grids, &set, &inference(cfg, overlap)).map_err(invalid("pipeline"))?;
    let results: Vec<PoseResult> = result.poses.iter().map(|p| PoseResult::from_fused(image_id, p)).collect();
    if let Some(t) = timing {
        write_text(t, &pretty(&timing_json(&result)))?;
    }
    emit(out, &results_json(&results))
}

pub fn eval(cfg: &Config, results: &Path, annotations: &Path, max_dets: usize, csv: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let k = cfg.num_keypoints;
    let gts = read_annotations(annotations, k)?;
    let res = read_results(results, k)?;
    let params = if k == 17 {
        OksParams::coco()
    } else {
        return Err(CliError::validation("oks", format!("no default OKS constants for K = {k}")));
    };
    let summary = evaluate_ap(&res, &gts, &params, (max_dets > 0).then_some(max_dets)).map_err(invalid("metrics"))?;
    if let Some(p) = csv {
        write_text(p, &summary.to_csv())?;
    }
    emit(out, &pretty(&serde_json::to_value(&summary).expect("summary serializes")))
}

fn grid_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let entries = std::fs::read_dir(input).map_err(|e| CliError::io("io", format!("{}: {e}", input.display())))?;
            let mut found: Vec<PathBuf> = entries
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "kapg"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        return Err(CliError::validation("bench", "no grid files found"));
    }
    Ok(files)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn stage_stats(mut v: Vec<f64>) -> Value {
    v.sort_by(f64::total_cmp);
    json!({
        "p50": percentile(&v, 50.0),
        "p90": percentile(&v, 90.0),
        "p99": percentile(&v, 99.0),
        "mean": v.iter().sum::<f64>() / v.len() as f64,
        "max": v[v.len() - 1],
    })
}

pub fn bench(cfg: &Config, inputs: &[PathBuf], repeat: usize, out: Option<&Path>) -> Result<(), CliError> {
    if repeat == 0 {
        return Err(CliError::validation("bench", "--repeat must be positive"));
    }
    let set = anchors(cfg)?;
    let files = grid_files(inputs)?;
    let mut stages: [Vec<f64>; 4] = Default::default();
    let mut max_detections = 0;
    for path in &files {
        let file = read_grid_file(path)?;
        let warm = run_pipeline(&file.grids, &set, &cfg.inference).map_err(invalid("pipeline"))?;
        max_detections = max_detections.max(warm.counts.poses_after_nms + warm.counts.keypoints_after_nms);
        let mut runs: [Vec<f64>; 4] = Default::default();
        for _ in 0..repeat {
            let t = run_pipeline(&file.grids, &set, &cfg.inference).map_err(invalid("pipeline"))?.timings;
            for (r, d) in runs.iter_mut().zip([t.decode, t.nms, t.fuse, t.total]) {
                r.push(ms(d));
            }
        }
        for (s, r) in stages.iter_mut().zip(runs.iter_mut()) {
            s.push(median(r));
        }
    }
    let medians: Vec<f64> = stages.iter().map(|s| median(&mut s.clone())).collect();
    let [decode, nms, fuse, total] = stages;
    let report = json!({
        "files": files.len(),
        "repeat": repeat,
        "unit": "ms",
        "decode": stage_stats(decode),
        "nms": stage_stats(nms),
        "fuse": stage_stats(fuse),
        "total": stage_stats(total),
        "stage_median_sum": medians[0] + medians[1] + medians[2],
        "total_median": medians[3],
        "max_surviving_detections": max_detections,
    });
    emit(out, &pretty(&report))
}

/// Keypoint box sizes tried, as fractions of the longer image side.
pub const SWEEP_FRACTIONS: [f64; 5] = [0.01, 0.025, 0.05, 0.075, 0.1];

pub fn sweep_bs(cfg: &Config, annotations: Option<&Path>, scenes: usize, seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    let set = anchors(cfg)?;
    let images: BTreeMap<u64, Vec<PoseAnnotation>> = match annotations {
        Some(p) => {
            let mut m: BTreeMap<u64, Vec<PoseAnnotation>> = BTreeMap::new();
            for g in read_annotations(p, cfg.num_keypoints)? {
                m.entry(g.image_id).or_default().push(g.annotation);
            }
            m
        }
        None => {
            let args = SynthArgs {
                count: scenes,
                seed,
                min_persons: 1,
                max_persons: 10,
                min_scale: None,
                max_scale: None,
                occlusion: 0.1,
                out: None,
                grids_dir: None,
                noise: NoiseKind::None,
                pose_sigma: 0.0,
                local_sigma: 0.0,
            };
            (0..scenes)
                .map(|n| {
                    let s = seed.wrapping_add(n as u64);
                    generate_scene(&scene_config(cfg, &args, s)).map(|a| (n as u64, a))
                })
                .collect::<Result<_, _>>()
                .map_err(invalid("synth"))?
        }
    };
    let gts: Vec<GroundTruth> = images
        .iter()
        .flat_map(|(&image_id, anns)| anns.iter().map(move |a| GroundTruth { image_id, annotation: a.clone() }))
        .collect();
    let side = f64::from(cfg.height.max(cfg.width));
    let mut rows = Vec::new();
    for f in SWEEP_FRACTIONS {
        let mut c = cfg.clone();
        c.b_s = f * side;
        let ac = c.assign_config();
        let (mut poses, mut poses_ok, mut kps, mut kps_ok, mut collisions) = (0usize, 0usize, 0usize, 0usize, 0usize);
        let (mut fused, mut labeled) = (0usize, 0usize);
        let mut results = Vec::new();
        for (&image_id, anns) in &images {
            let objects = objects_from_annotations(anns, &ac).map_err(invalid("codec"))?;
            let record = assign_objects(objects, &set, &ac).map_err(invalid("codec"))?;
            let (grids, report) = encode_inverse(&record, &set, &InverseConfig::default()).map_err(invalid("codec"))?;
            collisions += record.collisions.len();
            for r in &report.objects {
                if record.objects[r.object].is_pose() {
                    poses += 1;
                    poses_ok += usize::from(r.representable());
                } else {
                    kps += 1;
                    kps_ok += usize::from(r.representable());
                }
            }
            let run = run_pipeline(&grids, &set, &c.inference).map_err(invalid("pipeline"))?;
            fused += run.poses.iter().map(|p| p.fused_count()).sum::<usize>();
            labeled += anns.iter().map(PoseAnnotation::labeled_count).sum::<usize>();
            results.extend(run.poses.iter().map(|p| PoseResult::from_fused(image_id, p)));
        }
        let ap = if cfg.num_keypoints == 17 && !gts.is_empty() {
            evaluate_ap(&results, &gts, &OksParams::coco(), Some(20)).ok().map(|s| s.ap)
        } else {
            None
        };
        let frac = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
        rows.push(json!({
            "fraction": f,
            "b_s": c.b_s,
            "pose_objects": poses,
            "pose_representable": frac(poses_ok, poses),
            "keypoint_objects": kps,
            "keypoint_representable": frac(kps_ok, kps),
            "collisions": collisions,
            "fused_keypoint_rate": frac(fused, labeled),
            "roundtrip_ap": ap,
        }));
    }
    emit(out, &pretty(&json!({ "images": images.len(), "sweep": rows })))
}
