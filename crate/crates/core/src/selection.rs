//! Hypothesis selection: pose clustering, ICP refinement with top-k
//! truncation, physical plausibility pruning against the hand's signed
//! distance field, and render-based final selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    geodesic_rotation_distance, lcp_score, point_to_plane_icp, IcpParams, KdTree, LcpParams,
    OrientedPointCloud, RigidTransform,
};
use crate::hand::{posed_meshes, HandModel, HandSdf, HandState};
use crate::mesh::TriangleMesh;
use crate::parallel::par_map;
use crate::registration::PoseHypothesis;
use crate::render::{render_depth, CameraIntrinsics, DepthImage};

/// Radii of the two-stage pose clustering and of post-refinement merging.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    /// Single-linkage edge threshold on translations, meters.
    pub translation_radius: f64,
    /// Geodesic split radius within a translation component, radians.
    pub rotation_radius: f64,
    /// Refined poses closer than these collapse into one.
    pub merge_translation: f64,
    pub merge_rotation: f64,
    /// Survivors kept after refinement.
    pub top_k: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            translation_radius: 0.01,
            rotation_radius: 20f64.to_radians(),
            merge_translation: 0.003,
            merge_rotation: 5f64.to_radians(),
            top_k: 100,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.translation_radius > 0.0)
            || !(self.rotation_radius > 0.0)
            || !(self.merge_translation > 0.0)
            || !(self.merge_rotation > 0.0)
        {
            return Err(Error::InvalidInput("cluster radii must be positive".into()));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidInput("cluster.top_k must be > 0".into()));
        }
        Ok(())
    }
}

/// Plausibility thresholds of the hand-contact check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsParams {
    /// Deepest allowed penetration into the hand, meters.
    pub max_penetration: f64,
    /// Largest allowed gap to the hand surface, meters.
    pub max_separation: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            max_penetration: 0.005,
            max_separation: 0.01,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_penetration > 0.0) || !(self.max_separation > 0.0) {
            return Err(Error::InvalidInput(
                "physics thresholds must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything the selection stage needs beyond the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionParams {
    pub cluster: ClusterParams,
    pub icp: IcpParams,
    pub lcp: LcpParams,
    pub physics: PhysicsParams,
    /// Per-pixel cap of the depth discrepancy, meters; keeps single
    /// outlier pixels from dominating the render score.
    pub render_cap: f64,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            cluster: ClusterParams::default(),
            icp: IcpParams::default(),
            lcp: LcpParams::default(),
            physics: PhysicsParams::default(),
            render_cap: 0.02,
        }
    }
}

impl SelectionParams {
    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        self.icp.validate()?;
        self.lcp.validate()?;
        self.physics.validate()?;
        if !(self.render_cap > 0.0) {
            return Err(Error::InvalidInput("render_cap must be positive".into()));
        }
        Ok(())
    }
}

/// Groups hypotheses into pose clusters: connected components under
/// single-linkage on translations, each split by greedy leader clustering
/// on rotation geodesic distance with leaders taken in descending LCP
/// order. Every input index lands in exactly one cluster. Cluster order is
/// deterministic: components by their smallest member index, leaders in
/// creation order.
pub fn cluster_hypotheses(hyps: &[PoseHypothesis], params: &ClusterParams) -> Vec<Vec<usize>> {
    let n = hyps.len();
    if n == 0 {
        return Vec::new();
    }
    // Union-find over translation proximity.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let tree = KdTree::new(
        hyps.iter()
            .map(|h| crate::geometry::Point3::origin() + h.transform.translation)
            .collect(),
    );
    for (i, h) in hyps.iter().enumerate() {
        let q = crate::geometry::Point3::origin() + h.transform.translation;
        for (j, _) in tree.within_radius(&q, params.translation_radius) {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    // Members per component, in index order; components by smallest member.
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut component_of = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if component_of[r] == usize::MAX {
            component_of[r] = components.len();
            components.push(Vec::new());
        }
        components[component_of[r]].push(i);
    }
    // Rotation split per component.
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for members in &components {
        let mut order = members.clone();
        order.sort_by(|&a, &b| hyps[b].lcp.total_cmp(&hyps[a].lcp).then(a.cmp(&b)));
        let mut leaders: Vec<usize> = Vec::new();
        let first_cluster = clusters.len();
        for &i in &order {
            let ri = hyps[i].transform.rotation_matrix();
            let mut joined = false;
            for (c, &leader) in leaders.iter().enumerate() {
                let rl = hyps[leader].transform.rotation_matrix();
                if geodesic_rotation_distance(&ri, &rl) <= params.rotation_radius {
                    clusters[first_cluster + c].push(i);
                    joined = true;
                    break;
                }
            }
            if !joined {
                leaders.push(i);
                clusters.push(vec![i]);
            }
        }
    }
    clusters
}

/// Whether two poses agree within the merge radii.
fn poses_agree(a: &RigidTransform, b: &RigidTransform, d_tol: f64, r_tol: f64) -> bool {
    (a.translation - b.translation).norm() <= d_tol
        && geodesic_rotation_distance(&a.rotation_matrix(), &b.rotation_matrix()) <= r_tol
}

/// Deterministic hypothesis ordering: descending LCP, then smaller
/// translation norm, then original index.
fn hypothesis_order(
    a: &(usize, PoseHypothesis),
    b: &(usize, PoseHypothesis),
) -> std::cmp::Ordering {
    b.1.lcp
        .total_cmp(&a.1.lcp)
        .then_with(|| {
            a.1.transform
                .translation
                .norm()
                .total_cmp(&b.1.transform.translation.norm())
        })
        .then(a.0.cmp(&b.0))
}

/// Best hypothesis under the deterministic ranking used everywhere in
/// this module: LCP descending, then translation norm, then input order.
pub fn best_hypothesis(hyps: &[PoseHypothesis]) -> Option<&PoseHypothesis> {
    hyps.iter()
        .enumerate()
        .min_by(|a, b| hypothesis_order(&(a.0, *a.1), &(b.0, *b.1)))
        .map(|(_, h)| h)
}

/// Refines the best hypothesis of each cluster by ICP against the object
/// cloud, keeps the better of the pre- and post-refinement pose by LCP,
/// merges representatives that converged to the same pose (higher LCP
/// wins), and returns at most `top_k` ordered by descending LCP with ties
/// broken by lower translation norm then input index.
pub fn refine_and_truncate(
    hyps: &[PoseHypothesis],
    clusters: &[Vec<usize>],
    model_samples: &OrientedPointCloud,
    p_o: &OrientedPointCloud,
    params: &SelectionParams,
) -> Result<Vec<PoseHypothesis>> {
    params.validate()?;
    if clusters.is_empty() {
        return Err(Error::InvalidInput("no clusters to refine".into()));
    }
    // Max-LCP representative per cluster; ties take the lower index.
    let reps: Vec<usize> = clusters
        .iter()
        .map(|members| {
            *members
                .iter()
                .min_by(|&&a, &&b| hyps[b].lcp.total_cmp(&hyps[a].lcp).then(a.cmp(&b)))
                .expect("empty cluster")
        })
        .collect();
    let scene_index = KdTree::from_cloud(p_o);
    let refined: Vec<Result<(usize, PoseHypothesis)>> = par_map(&reps, |&idx| {
        let pre = hyps[idx];
        let post = match point_to_plane_icp(
            model_samples,
            p_o,
            &scene_index,
            &pre.transform,
            &params.icp,
        ) {
            Ok(icp) => {
                let lcp = lcp_score(model_samples, &scene_index, &icp.transform, &params.lcp)?;
                Some(PoseHypothesis {
                    transform: icp.transform,
                    lcp,
                    render_score: None,
                })
            }
            Err(e) => {
                log::debug!("refinement failed for hypothesis {idx}: {e}");
                None
            }
        };
        let chosen = match post {
            Some(p) if p.lcp >= pre.lcp => p,
            _ => pre,
        };
        Ok((idx, chosen))
    });
    let mut ordered: Vec<(usize, PoseHypothesis)> = Vec::with_capacity(refined.len());
    for r in refined {
        ordered.push(r?);
    }
    ordered.sort_by(hypothesis_order);
    // Greedy merge: processed in quality order, so a dropped pose always
    // loses to an equal-or-better survivor.
    let mut survivors: Vec<(usize, PoseHypothesis)> = Vec::new();
    for (idx, h) in ordered {
        let duplicate = survivors.iter().any(|(_, s)| {
            poses_agree(
                &s.transform,
                &h.transform,
                params.cluster.merge_translation,
                params.cluster.merge_rotation,
            )
        });
        if !duplicate {
            survivors.push((idx, h));
        }
    }
    survivors.truncate(params.cluster.top_k);
    Ok(survivors.into_iter().map(|(_, h)| h).collect())
}

/// Drops hypotheses that are physically implausible against the estimated
/// hand: the posed object either penetrates the hand deeper than
/// `max_penetration` or floats farther than `max_separation` from it.
/// Returns the survivors in input order; when everything is rejected the
/// empty result is accompanied by a warning with rejection counts and the
/// caller is expected to fall back to the unpruned set.
pub fn physics_prune(
    hyps: &[PoseHypothesis],
    object_samples: &OrientedPointCloud,
    hand_sdf: &HandSdf,
    params: &PhysicsParams,
) -> Vec<PoseHypothesis> {
    #[derive(Clone, Copy, PartialEq)]
    enum Verdict {
        Keep,
        Penetration,
        Separation,
    }
    let verdicts: Vec<Verdict> = par_map(hyps, |h| {
        let mut min_sdf = f64::INFINITY;
        for p in &object_samples.points {
            let d = hand_sdf.query(&h.transform.apply(&p.position));
            if d < min_sdf {
                min_sdf = d;
                if min_sdf < -params.max_penetration {
                    return Verdict::Penetration;
                }
            }
        }
        if min_sdf > params.max_separation {
            Verdict::Separation
        } else {
            Verdict::Keep
        }
    });
    let kept: Vec<PoseHypothesis> = hyps
        .iter()
        .zip(&verdicts)
        .filter(|(_, v)| **v == Verdict::Keep)
        .map(|(h, _)| *h)
        .collect();
    if kept.is_empty() && !hyps.is_empty() {
        let pen = verdicts
            .iter()
            .filter(|v| **v == Verdict::Penetration)
            .count();
        let sep = verdicts
            .iter()
            .filter(|v| **v == Verdict::Separation)
            .count();
        log::warn!(
            "physics pruning rejected all {} hypotheses ({pen} penetrating, {sep} separated)",
            hyps.len()
        );
    }
    kept
}

/// Pixel rectangle covering the hand's region of interest, clamped to the
/// image. Falls back to the full image when the box projects entirely
/// behind the camera.
fn roi_pixel_rect(
    model: &HandModel,
    state: &HandState,
    cam: &CameraIntrinsics,
) -> (usize, usize, usize, usize) {
    let (center, half) = model.roi_box();
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for corner in 0..8 {
        let offset = crate::Vector3::new(
            if corner & 1 == 0 { -half.x } else { half.x },
            if corner & 2 == 0 { -half.y } else { half.y },
            if corner & 4 == 0 { -half.z } else { half.z },
        );
        let p_wrist = crate::geometry::Point3::origin() + center + offset;
        let p_cam = state.wrist_pose.apply(&p_wrist);
        if let Some((u, v)) = cam.project(&p_cam) {
            lo.0 = lo.0.min(u);
            lo.1 = lo.1.min(v);
            hi.0 = hi.0.max(u);
            hi.1 = hi.1.max(v);
        }
    }
    if !lo.0.is_finite() {
        return (0, 0, cam.width as usize - 1, cam.height as usize - 1);
    }
    let clamp_u = |u: f64| (u.round().max(0.0) as usize).min(cam.width as usize - 1);
    let clamp_v = |v: f64| (v.round().max(0.0) as usize).min(cam.height as usize - 1);
    (clamp_u(lo.0), clamp_v(lo.1), clamp_u(hi.0), clamp_v(hi.1))
}

/// Accumulated capped depth discrepancy between the observation and a
/// rendering, over the given pixel rectangle. Pixels invalid in both
/// images are skipped; a pixel invalid in exactly one counts as a capped
/// disagreement, which penalizes poses that occupy observed free space.
fn render_score(
    observed: &DepthImage,
    rendered: &DepthImage,
    rect: (usize, usize, usize, usize),
    cap: f64,
) -> f64 {
    let (u0, v0, u1, v1) = rect;
    let mut sum = 0.0;
    for v in v0..=v1 {
        for u in u0..=u1 {
            let d_obs = observed.at(v, u);
            let d_rend = rendered.at(v, u);
            if d_obs == 0.0 && d_rend == 0.0 {
                continue;
            }
            sum += (d_obs - d_rend).abs().min(cap);
        }
    }
    sum
}

/// Scores every hypothesis by rendering the estimated hand plus the posed
/// object and accumulating depth discrepancy against the observation over
/// the hand's ROI pixels, keeps the best-scoring third (⌈n/3⌉), and
/// returns the highest-LCP member of that set with its render score
/// attached.
pub fn select_final(
    hyps: &[PoseHypothesis],
    observed: &DepthImage,
    hand_model: &HandModel,
    hand_state: &HandState,
    object_mesh: &TriangleMesh,
    cam: &CameraIntrinsics,
    params: &SelectionParams,
) -> Result<PoseHypothesis> {
    if hyps.is_empty() {
        return Err(Error::NoHypotheses);
    }
    params.validate()?;
    let hand = posed_meshes(hand_model, hand_state)?;
    let rect = roi_pixel_rect(hand_model, hand_state, cam);
    let scored: Vec<Result<PoseHypothesis>> = par_map(hyps, |h| {
        let mut meshes: Vec<(&TriangleMesh, &RigidTransform)> =
            hand.iter().map(|(m, t)| (*m, t)).collect();
        meshes.push((object_mesh, &h.transform));
        let rendered = render_depth(&meshes, cam)?;
        Ok(PoseHypothesis {
            render_score: Some(render_score(observed, &rendered, rect, params.render_cap)),
            ..*h
        })
    });
    let mut indexed: Vec<(usize, PoseHypothesis)> = Vec::with_capacity(scored.len());
    for (i, r) in scored.into_iter().enumerate() {
        indexed.push((i, r?));
    }
    // Best-scoring third; ties keep the earlier hypothesis.
    indexed.sort_by(|a, b| {
        a.1.render_score
            .unwrap()
            .total_cmp(&b.1.render_score.unwrap())
            .then(a.0.cmp(&b.0))
    });
    let keep = hyps.len().div_ceil(3);
    indexed.truncate(keep);
    indexed.sort_by(hypothesis_order);
    Ok(indexed[0].1)
}
