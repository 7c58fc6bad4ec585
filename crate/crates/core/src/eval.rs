//! Benchmark harness: runs the pipeline over a generated scene manifest
//! and reports recall, ablations, and per-stage timing.

use std::path::Path;
use std::time::Instant;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::geometry::{adi_error, Point3, RigidTransform};
use crate::hand::HandModel;
use crate::mesh::TriangleMesh;
use crate::parallel::par_map;
use crate::pipeline::{run_pipeline, StageTimings, Variant};
use crate::render::load_depth_raw;
use crate::rng::stream_rng;
use crate::scenes::SceneRecord;

/// Threshold below which an estimate counts as correct, meters.
pub const DEFAULT_EPSILON: f64 = 0.005;

/// Thresholds of the recall curve: 1 mm to 20 mm in 1 mm steps.
pub fn recall_curve_grid() -> Vec<f64> {
    (1..=20).map(|k| k as f64 * 0.001).collect()
}

/// Point count of the fixed model sampling that ADI is computed over.
const ADI_SAMPLES: usize = 500;
/// Seed of that sampling; fixed so every run and variant scores against
/// the same point set.
const ADI_SEED: u64 = 71;

/// One scene's outcome. A failed scene keeps its error message and an
/// infinite ADI, so it counts as a miss at every threshold.
#[derive(Clone, Debug)]
pub struct SceneEval {
    pub scene_id: String,
    pub object_id: String,
    pub hand_id: String,
    pub estimated_pose: Option<RigidTransform>,
    pub ground_truth: RigidTransform,
    /// Average-distance error against ground truth, meters.
    pub adi: f64,
    pub error: Option<String>,
    pub timings: StageTimings,
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub variant: Variant,
    pub epsilon: f64,
    pub scenes: Vec<SceneEval>,
    /// Fraction of scenes with ADI below `epsilon`.
    pub recall: f64,
    /// (threshold in meters, recall) samples.
    pub recall_curve: Vec<(f64, f64)>,
}

/// Fraction of scenes whose ADI is strictly below `epsilon`.
pub fn recall_at(scenes: &[SceneEval], epsilon: f64) -> f64 {
    if scenes.is_empty() {
        return 0.0;
    }
    scenes.iter().filter(|s| s.adi < epsilon).count() as f64 / scenes.len() as f64
}

/// Recall over the standard threshold grid.
pub fn recall_curve(scenes: &[SceneEval]) -> Vec<(f64, f64)> {
    recall_curve_grid()
        .into_iter()
        .map(|eps| (eps, recall_at(scenes, eps)))
        .collect()
}

fn resolve<'a, T>(kind: &str, id: &str, table: &'a [(String, T)]) -> Result<&'a T> {
    table
        .iter()
        .find(|(name, _)| name == id)
        .map(|(_, v)| v)
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "manifest references unknown {kind} {id:?}; known: {}",
                table
                    .iter()
                    .map(|(n, _)| n.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })
}

/// Runs one pipeline variant over every manifest scene and scores it
/// against ground truth. Scene-level failures (unreadable files, pipeline
/// errors) are recorded as misses; manifest-level problems are errors.
/// Scenes run in parallel with results collected in manifest order.
pub fn evaluate_variant(
    records: &[SceneRecord],
    data_dir: &Path,
    objects: &[(String, TriangleMesh)],
    hands: &[(String, HandModel)],
    config: &PipelineConfig,
    variant: Variant,
    epsilon: f64,
) -> Result<EvalResult> {
    if records.is_empty() {
        return Err(Error::InvalidInput("empty manifest".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    config.validate()?;

    // Resolve every id up front so a typo aborts before hours of work.
    let resolved: Vec<(&TriangleMesh, &HandModel)> = records
        .iter()
        .map(|r| {
            Ok((
                resolve("object", &r.object_id, objects)?,
                resolve("hand", &r.hand_id, hands)?,
            ))
        })
        .collect::<Result<_>>()?;
    // One fixed ADI sampling per distinct object, shared by all variants.
    let adi_points: Vec<(String, Vec<Point3>)> = objects
        .iter()
        .enumerate()
        .map(|(i, (id, mesh))| {
            let cloud = mesh.sample_surface(ADI_SAMPLES, &mut stream_rng(ADI_SEED, i as u64))?;
            Ok((id.clone(), cloud.position_vec()))
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, &SceneRecord)> = records.iter().enumerate().collect();
    let scenes: Vec<SceneEval> = par_map(&jobs, |&(idx, record)| {
        let (object_mesh, hand_model) = resolved[idx];
        let points = &adi_points
            .iter()
            .find(|(id, _)| *id == record.object_id)
            .expect("resolved above")
            .1;
        let ground_truth = RigidTransform::from_row_major(&record.object_pose)
            .unwrap_or_else(|_| RigidTransform::identity());
        let started = Instant::now();
        let outcome = RigidTransform::from_row_major(&record.object_pose)
            .and_then(|_| RigidTransform::from_row_major(&record.wrist_pose))
            .and_then(|wrist_prior| {
                let (depth, intrinsics) = load_depth_raw(&data_dir.join(&record.depth_path))?;
                run_pipeline(
                    &depth,
                    &intrinsics,
                    hand_model,
                    &wrist_prior,
                    object_mesh,
                    config,
                    variant,
                    false,
                )
            });
        match outcome {
            Ok(est) => SceneEval {
                scene_id: record.scene_id.clone(),
                object_id: record.object_id.clone(),
                hand_id: record.hand_id.clone(),
                adi: adi_error(&est.pose, &ground_truth, points),
                estimated_pose: Some(est.pose),
                ground_truth,
                error: None,
                timings: est.timings,
            },
            Err(e) => {
                log::warn!("scene {} failed: {e}", record.scene_id);
                let mut timings = StageTimings::default();
                timings.total = started.elapsed().as_secs_f64();
                timings.misc = timings.total;
                SceneEval {
                    scene_id: record.scene_id.clone(),
                    object_id: record.object_id.clone(),
                    hand_id: record.hand_id.clone(),
                    estimated_pose: None,
                    ground_truth,
                    adi: f64::INFINITY,
                    error: Some(e.to_string()),
                    timings,
                }
            }
        }
    });

    Ok(EvalResult {
        variant,
        epsilon,
        recall: recall_at(&scenes, epsilon),
        recall_curve: recall_curve(&scenes),
        scenes,
    })
}

/// Full pipeline evaluation at the standard threshold semantics.
pub fn evaluate(
    records: &[SceneRecord],
    data_dir: &Path,
    objects: &[(String, TriangleMesh)],
    hands: &[(String, HandModel)],
    config: &PipelineConfig,
    epsilon: f64,
) -> Result<EvalResult> {
    evaluate_variant(
        records,
        data_dir,
        objects,
        hands,
        config,
        Variant::Full,
        epsilon,
    )
}

/// Runs the requested variants over the same scenes and seeds; one recall
/// row per variant, in the given order.
#[allow(clippy::too_many_arguments)]
pub fn ablation_run(
    records: &[SceneRecord],
    data_dir: &Path,
    objects: &[(String, TriangleMesh)],
    hands: &[(String, HandModel)],
    config: &PipelineConfig,
    variants: &[Variant],
    epsilon: f64,
) -> Result<Vec<EvalResult>> {
    variants
        .iter()
        .map(|&v| evaluate_variant(records, data_dir, objects, hands, config, v, epsilon))
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct StageStat {
    pub stage: &'static str,
    pub mean: f64,
    pub median: f64,
}

#[derive(Clone, Debug)]
pub struct TimingReport {
    pub stages: Vec<StageStat>,
    pub mean_total: f64,
    pub median_total: f64,
    pub n_scenes: usize,
}

fn median(sorted: &[f64]) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per-stage mean/median wall times over all scenes of a result.
pub fn timing_report(result: &EvalResult) -> TimingReport {
    let mut stages = Vec::with_capacity(StageTimings::STAGE_NAMES.len());
    for (i, stage) in StageTimings::STAGE_NAMES.iter().enumerate() {
        let mut values: Vec<f64> = result
            .scenes
            .iter()
            .map(|s| s.timings.stages()[i])
            .collect();
        values.sort_by(f64::total_cmp);
        stages.push(StageStat {
            stage,
            mean: mean(&values),
            median: median(&values),
        });
    }
    let mut totals: Vec<f64> = result.scenes.iter().map(|s| s.timings.total).collect();
    totals.sort_by(f64::total_cmp);
    TimingReport {
        stages,
        mean_total: mean(&totals),
        median_total: median(&totals),
        n_scenes: result.scenes.len(),
    }
}

// --- reports ------------------------------------------------------------

fn fmt_pose(t: &RigidTransform) -> String {
    t.to_row_major()
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Writes one row per scene: outcome, error class, stage times, and both
/// poses as semicolon-joined row-major matrices.
pub fn write_scene_csv(result: &EvalResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, into_io(e)))?;
    let mut header = vec![
        "scene_id",
        "object_id",
        "hand_id",
        "adi_m",
        "success",
        "error",
    ];
    header.extend(StageTimings::STAGE_NAMES);
    header.extend(["total_s", "estimated_pose", "ground_truth_pose"]);
    w.write_record(&header)
        .map_err(|e| Error::io(path, into_io(e)))?;
    for s in &result.scenes {
        let mut row: Vec<String> = vec![
            s.scene_id.clone(),
            s.object_id.clone(),
            s.hand_id.clone(),
            if s.adi.is_finite() {
                s.adi.to_string()
            } else {
                "inf".into()
            },
            ((s.adi < result.epsilon) as u8).to_string(),
            s.error.clone().unwrap_or_default(),
        ];
        row.extend(s.timings.stages().iter().map(|v| v.to_string()));
        row.push(s.timings.total.to_string());
        row.push(s.estimated_pose.as_ref().map(fmt_pose).unwrap_or_default());
        row.push(fmt_pose(&s.ground_truth));
        w.write_record(&row)
            .map_err(|e| Error::io(path, into_io(e)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the recall curve with columns `epsilon_m, recall`.
pub fn write_recall_curve_csv(result: &EvalResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, into_io(e)))?;
    w.write_record(["epsilon_m", "recall"])
        .map_err(|e| Error::io(path, into_io(e)))?;
    for (eps, recall) in &result.recall_curve {
        w.write_record([eps.to_string(), recall.to_string()])
            .map_err(|e| Error::io(path, into_io(e)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes one `variant, recall` row per ablation result.
pub fn write_ablation_csv(results: &[EvalResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, into_io(e)))?;
    w.write_record(["variant", "recall", "epsilon_m", "n_scenes"])
        .map_err(|e| Error::io(path, into_io(e)))?;
    for r in results {
        w.write_record([
            r.variant.label().to_string(),
            r.recall.to_string(),
            r.epsilon.to_string(),
            r.scenes.len().to_string(),
        ])
        .map_err(|e| Error::io(path, into_io(e)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn into_io(e: csv::Error) -> std::io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => std::io::Error::other(format!("{other:?}")),
    }
}

/// Human-readable run summary.
pub fn summary_text(result: &EvalResult) -> String {
    let report = timing_report(result);
    let failures = result.scenes.iter().filter(|s| s.error.is_some()).count();
    let mut out = String::new();
    out.push_str(&format!(
        "variant: {}\nscenes: {}\nfailures: {}\nrecall @ {:.1} mm: {:.4}\n",
        result.variant,
        result.scenes.len(),
        failures,
        result.epsilon * 1e3,
        result.recall
    ));
    out.push_str("stage times (mean / median, seconds):\n");
    for s in &report.stages {
        out.push_str(&format!(
            "  {:<22} {:>9.4} / {:>9.4}\n",
            s.stage, s.mean, s.median
        ));
    }
    out.push_str(&format!(
        "  {:<22} {:>9.4} / {:>9.4}\n",
        "total", report.mean_total, report.median_total
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::t42::t42_hand_model;
    use crate::mesh::cylinder_mesh;
    use crate::scenes::{generate_dataset, DatasetParams, NoiseModel};
    use proptest::prelude::*;

    fn fake_scene(id: &str, adi: f64) -> SceneEval {
        SceneEval {
            scene_id: id.into(),
            object_id: "obj".into(),
            hand_id: "hand".into(),
            estimated_pose: adi.is_finite().then(RigidTransform::identity),
            ground_truth: RigidTransform::identity(),
            adi,
            error: (!adi.is_finite()).then(|| "no object points".into()),
            timings: StageTimings::default(),
        }
    }

    #[test]
    fn recall_counts_scenes_below_the_threshold() {
        let scenes: Vec<SceneEval> = [0.0, 0.0049, 0.005, 0.0051, 1.0, f64::INFINITY]
            .iter()
            .enumerate()
            .map(|(i, &adi)| fake_scene(&format!("s{i}"), adi))
            .collect();
        // Strictly below: 0.005 itself is a miss.
        assert_eq!(recall_at(&scenes, 0.005), 2.0 / 6.0);
        assert_eq!(recall_at(&scenes, 1e9), 5.0 / 6.0);
        assert_eq!(recall_at(&scenes, 1e-9), 1.0 / 6.0);
    }

    #[test]
    fn perfect_and_gross_estimates_bound_recall() {
        let perfect: Vec<SceneEval> = (0..10).map(|i| fake_scene(&format!("p{i}"), 0.0)).collect();
        assert_eq!(recall_at(&perfect, DEFAULT_EPSILON), 1.0);
        let displaced: Vec<SceneEval> =
            (0..10).map(|i| fake_scene(&format!("d{i}"), 1.0)).collect();
        assert_eq!(recall_at(&displaced, DEFAULT_EPSILON), 0.0);
    }

    proptest! {
        #[test]
        fn recall_curve_is_monotone_and_bounded(
            adis in proptest::collection::vec(0.0f64..0.03, 1..60)
        ) {
            let scenes: Vec<SceneEval> = adis
                .iter()
                .enumerate()
                .map(|(i, &a)| fake_scene(&format!("s{i}"), a))
                .collect();
            let curve = recall_curve(&scenes);
            prop_assert_eq!(curve.len(), recall_curve_grid().len());
            for pair in curve.windows(2) {
                prop_assert!(pair[0].1 <= pair[1].1);
            }
            for (_, r) in curve {
                prop_assert!((0.0..=1.0).contains(&r));
            }
        }
    }

    #[test]
    fn timing_report_uses_the_fixed_stage_schema() {
        let mut scenes = Vec::new();
        for i in 0..5 {
            let mut s = fake_scene(&format!("s{i}"), 0.001);
            s.timings.hand_estimation = i as f64;
            s.timings.total = i as f64 + 1.0;
            scenes.push(s);
        }
        let result = EvalResult {
            variant: Variant::Full,
            epsilon: DEFAULT_EPSILON,
            recall: recall_at(&scenes, DEFAULT_EPSILON),
            recall_curve: recall_curve(&scenes),
            scenes,
        };
        let report = timing_report(&result);
        let names: Vec<&str> = report.stages.iter().map(|s| s.stage).collect();
        assert_eq!(names, StageTimings::STAGE_NAMES);
        let hand = &report.stages[0];
        assert_eq!(hand.mean, 2.0);
        assert_eq!(hand.median, 2.0);
        assert_eq!(report.median_total, 3.0);
    }

    /// End-to-end: generate a two-scene dataset, evaluate it, and check
    /// the result plus every exported report.
    #[test]
    fn evaluate_scores_a_generated_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let objects = vec![("cylinder".to_string(), cylinder_mesh(0.035, 0.064, 24))];
        let hands = vec![("t42".to_string(), t42_hand_model())];
        let dataset = DatasetParams {
            n_per_combination: 2,
            noise: NoiseModel {
                depth_sigma: 0.0,
                dropout_rate: 0.0,
            },
            ..DatasetParams::default()
        };
        let records = generate_dataset(&objects, &hands, &dataset, 5, dir.path()).unwrap();
        assert_eq!(records.len(), 2);

        let mut config = PipelineConfig {
            model_samples: 150,
            ..PipelineConfig::default()
        };
        config.registration.n_bases = 6;
        config.registration.rejection_budget_factor = 2000;
        config.registration.base.congruence_distance_tol = 0.0015;
        config.registration.base.congruence_ratio_tol = 0.02;

        let result = evaluate(
            &records,
            dir.path(),
            &objects,
            &hands,
            &config,
            DEFAULT_EPSILON,
        )
        .unwrap();
        assert_eq!(result.scenes.len(), 2);
        for s in &result.scenes {
            assert!(s.error.is_none(), "{}: {:?}", s.scene_id, s.error);
            assert!(s.adi < DEFAULT_EPSILON, "{} adi {}", s.scene_id, s.adi);
            assert!(s.timings.total > 0.0);
        }
        assert_eq!(result.recall, 1.0);
        let at_5mm = result
            .recall_curve
            .iter()
            .find(|(eps, _)| (eps - 0.005).abs() < 1e-12)
            .unwrap();
        assert_eq!(at_5mm.1, result.recall);

        let table = ablation_run(
            &records,
            dir.path(),
            &objects,
            &hands,
            &config,
            &[Variant::Full],
            DEFAULT_EPSILON,
        )
        .unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table[0].variant, Variant::Full);
        assert_eq!(table[0].recall, result.recall);

        let scene_csv = dir.path().join("scenes.csv");
        let curve_csv = dir.path().join("curve.csv");
        let ablation_csv = dir.path().join("ablation.csv");
        write_scene_csv(&result, &scene_csv).unwrap();
        write_recall_curve_csv(&result, &curve_csv).unwrap();
        write_ablation_csv(&table, &ablation_csv).unwrap();
        let lines = |p: &Path| std::fs::read_to_string(p).unwrap().lines().count();
        assert_eq!(lines(&scene_csv), 3);
        assert_eq!(lines(&curve_csv), recall_curve_grid().len() + 1);
        assert_eq!(lines(&ablation_csv), 2);
        let summary = summary_text(&result);
        assert!(summary.contains("recall"), "{summary}");
        assert!(summary.contains("hand_estimation"), "{summary}");
    }

    #[test]
    fn unreadable_scenes_become_misses() {
        let dir = tempfile::tempdir().unwrap();
        let record = SceneRecord {
            scene_id: "ghost".into(),
            object_id: "cylinder".into(),
            hand_id: "t42".into(),
            depth_path: "missing_depth.raw".into(),
            label_path: "missing_labels.pgm".into(),
            object_pose: RigidTransform::identity().to_row_major(),
            wrist_pose: RigidTransform::identity().to_row_major(),
            joint_angles: vec![vec![0.0, 0.0]; 2],
            intrinsics: DatasetParams::default().intrinsics,
            seed: 0,
        };
        let objects = vec![("cylinder".to_string(), cylinder_mesh(0.035, 0.064, 24))];
        let hands = vec![("t42".to_string(), t42_hand_model())];
        let result = evaluate(
            &[record],
            dir.path(),
            &objects,
            &hands,
            &PipelineConfig::default(),
            DEFAULT_EPSILON,
        )
        .unwrap();
        assert_eq!(result.scenes.len(), 1);
        assert!(result.scenes[0].error.is_some());
        assert!(result.scenes[0].adi.is_infinite());
        assert_eq!(result.recall, 0.0);
    }

    #[test]
    fn unknown_manifest_ids_abort() {
        let record = SceneRecord {
            scene_id: "s".into(),
            object_id: "wedge".into(),
            hand_id: "t42".into(),
            depth_path: "d.raw".into(),
            label_path: "l.pgm".into(),
            object_pose: RigidTransform::identity().to_row_major(),
            wrist_pose: RigidTransform::identity().to_row_major(),
            joint_angles: vec![],
            intrinsics: DatasetParams::default().intrinsics,
            seed: 0,
        };
        let objects = vec![("cylinder".to_string(), cylinder_mesh(0.035, 0.064, 24))];
        let hands = vec![("t42".to_string(), t42_hand_model())];
        let err = evaluate(
            &[record],
            Path::new("."),
            &objects,
            &hands,
            &PipelineConfig::default(),
            DEFAULT_EPSILON,
        )
        .unwrap_err();
        assert!(err.to_string().contains("wedge"), "{err}");
    }
}
