//! Object pose hypothesis generation: point-pair-feature filtering,
//! distance-guided coplanar 4-point base sampling, congruent set retrieval
//! on the model, and least-squares alignment.
//!
//! The object model is summarized twice: a hash map counting its
//! discretized point pair features (used to reject scene bases that cannot
//! lie on the model), and a uniform surface sample cloud (used to retrieve
//! congruent 4-point sets and to score alignments by their LCP).

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    lcp_score, KdTree, LcpParams, OrientedPoint, OrientedPointCloud, Point3, RigidTransform,
    Vector3,
};
use crate::parallel::par_map;
use crate::rng::stream_rng;

/// A point pair feature: distance plus the three angles among the two
/// normals and the connecting direction. All angles are in [0, π].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ppf {
    pub distance: f64,
    pub angle_n1_d: f64,
    pub angle_n2_d: f64,
    pub angle_n1_n2: f64,
}

/// Angle between two vectors via a clamped arccos; assumes both nonzero.
fn vector_angle(a: &Vector3, b: &Vector3) -> f64 {
    let cos = a.dot(b) / (a.norm() * b.norm());
    cos.clamp(-1.0, 1.0).acos()
}

/// The feature of the ordered pair (a, b), with the direction running from
/// a to b.
pub fn compute_ppf(a: &OrientedPoint, b: &OrientedPoint) -> Result<Ppf> {
    let d = b.position - a.position;
    let distance = d.norm();
    if distance < 1e-9 {
        return Err(Error::DegeneratePair);
    }
    Ok(Ppf {
        distance,
        angle_n1_d: vector_angle(&a.normal, &d),
        angle_n2_d: vector_angle(&b.normal, &d),
        angle_n1_n2: vector_angle(&a.normal, &b.normal),
    })
}

/// Discretization steps for hashing features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpfSteps {
    /// Meters per distance bin.
    pub distance_step: f64,
    /// Radians per angle bin.
    pub angle_step: f64,
}

impl Default for PpfSteps {
    fn default() -> Self {
        Self {
            distance_step: 0.005,
            angle_step: 12f64.to_radians(),
        }
    }
}

impl PpfSteps {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance_step > 0.0) || !(self.angle_step > 0.0) {
            return Err(Error::InvalidInput("ppf steps must be positive".into()));
        }
        Ok(())
    }
}

/// Occurrence counts of discretized features over all ordered model pairs.
#[derive(Clone, Debug)]
pub struct PpfHashMap {
    pub steps: PpfSteps,
    map: HashMap<(u32, u32, u32, u32), u32>,
}

impl PpfHashMap {
    pub fn key(&self, ppf: &Ppf) -> (u32, u32, u32, u32) {
        (
            (ppf.distance / self.steps.distance_step) as u32,
            (ppf.angle_n1_d / self.steps.angle_step) as u32,
            (ppf.angle_n2_d / self.steps.angle_step) as u32,
            (ppf.angle_n1_n2 / self.steps.angle_step) as u32,
        )
    }

    pub fn count(&self, ppf: &Ppf) -> u32 {
        self.map.get(&self.key(ppf)).copied().unwrap_or(0)
    }

    pub fn contains(&self, ppf: &Ppf) -> bool {
        self.count(ppf) > 0
    }

    pub fn total_count(&self) -> u64 {
        self.map.values().map(|&c| u64::from(c)).sum()
    }

    pub fn distinct_keys(&self) -> usize {
        self.map.len()
    }
}

/// Hashes every ordered pair (i ≠ j) of the model samples. Coincident
/// sample pairs (degenerate features) are skipped.
pub fn build_ppf_hashmap(
    model_samples: &OrientedPointCloud,
    steps: PpfSteps,
) -> Result<PpfHashMap> {
    steps.validate()?;
    if model_samples.len() < 2 {
        return Err(Error::InvalidInput(
            "ppf hash map needs at least 2 model samples".into(),
        ));
    }
    let mut out = PpfHashMap {
        steps,
        map: HashMap::new(),
    };
    for (i, a) in model_samples.points.iter().enumerate() {
        for (j, b) in model_samples.points.iter().enumerate() {
            if i == j {
                continue;
            }
            match compute_ppf(a, b) {
                Ok(ppf) => *out.map.entry(out.key(&ppf)).or_insert(0) += 1,
                Err(_) => continue,
            }
        }
    }
    Ok(out)
}

/// A categorical distribution over the scene cloud that prefers points far
/// from the hand, with a decay that disperses repeated draws.
#[derive(Clone, Debug)]
pub struct SamplingHeuristic {
    /// Normalized to sum 1.
    pub weights: Vec<f64>,
    /// Rate of the distance saturation, 1/meters.
    pub lambda: f64,
    /// Multiplied onto a point's weight each time it is drawn.
    pub gamma: f64,
}

impl SamplingHeuristic {
    /// Equal weight on every point; used when no hand distance field is
    /// available and by the uniform-sampling ablation.
    pub fn uniform(n: usize, gamma: f64) -> Self {
        assert!(n > 0, "empty cloud");
        Self {
            weights: vec![1.0 / n as f64; n],
            lambda: 0.0,
            gamma,
        }
    }

    /// Draws an index from the categorical distribution.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut last_positive = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > 0.0 {
                last_positive = i;
            }
            cum += w;
            if u < cum {
                return i;
            }
        }
        // Floating-point shortfall of the cumulative sum.
        last_positive
    }

    /// Decays the drawn point's weight and renormalizes.
    pub fn decay(&mut self, index: usize) {
        self.weights[index] *= self.gamma;
        let sum: f64 = self.weights.iter().sum();
        for w in &mut self.weights {
            *w /= sum;
        }
    }
}

/// Builds the heuristic over a scene cloud from any signed-distance query
/// (typically the posed hand's field): `w_i ∝ max(0, 1 − exp(−λ·sdf_i))`,
/// so points at or inside the hand surface get zero weight. Falls back to
/// uniform weights with a warning when every weight vanishes.
pub fn init_heuristic<F: Fn(&Point3) -> f64>(
    p_o: &OrientedPointCloud,
    sdf_query: F,
    lambda: f64,
    gamma: f64,
) -> SamplingHeuristic {
    assert!(!p_o.is_empty(), "empty cloud");
    let mut weights: Vec<f64> = p_o
        .points
        .iter()
        .map(|p| (1.0 - (-lambda * sdf_query(&p.position)).exp()).max(0.0))
        .collect();
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        log::warn!("all heuristic weights are zero; falling back to uniform sampling");
        return SamplingHeuristic::uniform(p_o.len(), gamma);
    }
    for w in &mut weights {
        *w /= sum;
    }
    SamplingHeuristic {
        weights,
        lambda,
        gamma,
    }
}

/// Four scene point indices forming an accepted coplanar base.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Base {
    pub indices: [usize; 4],
}

/// One candidate object pose with its registration score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseHypothesis {
    pub transform: RigidTransform,
    /// Fraction of model samples explained by the scene, in [0, 1].
    pub lcp: f64,
    /// Depth discrepancy, filled by the selection stage (lower is better).
    pub render_score: Option<f64>,
}

/// Tolerances of base sampling and congruent set retrieval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseParams {
    /// Maximum distance of the 4th point from the plane of the first 3.
    pub coplanarity_tol: f64,
    /// Minimum base spread (largest pairwise distance among the 4 points)
    /// as a fraction of the model's bounding-box diagonal. Scaled to the
    /// model rather than the scene so segmentation leftovers cannot
    /// inflate the requirement.
    pub min_spread_fraction: f64,
    /// Reject bases whose first three points subtend less than this sine.
    pub min_collinearity_sin: f64,
    /// Congruence: pairwise distances must match within this (meters).
    pub congruence_distance_tol: f64,
    /// Congruence: diagonal intersection ratios must match within this.
    pub congruence_ratio_tol: f64,
}

impl Default for BaseParams {
    fn default() -> Self {
        Self {
            coplanarity_tol: 0.003,
            min_spread_fraction: 0.25,
            min_collinearity_sin: 0.05,
            congruence_distance_tol: 0.004,
            congruence_ratio_tol: 0.05,
        }
    }
}

impl BaseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.coplanarity_tol > 0.0)
            || !(self.congruence_distance_tol > 0.0)
            || !(self.congruence_ratio_tol > 0.0)
        {
            return Err(Error::InvalidInput(
                "base tolerances must be positive".into(),
            ));
        }
        if !(self.min_spread_fraction >= 0.0 && self.min_spread_fraction < 1.0) {
            return Err(Error::InvalidInput(
                "base.min_spread_fraction must be in [0, 1)".into(),
            ));
        }
        if !(self.min_collinearity_sin >= 0.0 && self.min_collinearity_sin < 1.0) {
            return Err(Error::InvalidInput(
                "base.min_collinearity_sin must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Diagonal of the positions' axis-aligned bounding box.
pub fn cloud_bbox_diagonal(cloud: &OrientedPointCloud) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in &cloud.points {
        lo = lo.inf(&p.position.coords);
        hi = hi.sup(&p.position.coords);
    }
    (hi - lo).norm()
}

/// Signed distance of `p` from the plane through `a` with normal `n`
/// (unit), absolute value.
fn plane_distance(p: &Point3, a: &Point3, n: &Vector3) -> f64 {
    (p - a).dot(n).abs()
}

/// Draws one candidate base. Every drawn point's weight is decayed whether
/// or not the base is accepted, so repeated attempts spread out. Returns
/// `None` on rejection: duplicate draws, insufficient spread, collinear
/// first three points, a far-from-plane 4th point, or any pairwise feature
/// absent from the model's hash map.
pub fn sample_base<R: Rng>(
    p_o: &OrientedPointCloud,
    heuristic: &mut SamplingHeuristic,
    ppf: &PpfHashMap,
    params: &BaseParams,
    min_spread: f64,
    rng: &mut R,
) -> Option<Base> {
    let mut idx = [0usize; 4];
    for slot in &mut idx {
        let i = heuristic.sample(rng);
        heuristic.decay(i);
        *slot = i;
    }
    // Distinct points.
    for i in 0..4 {
        for j in (i + 1)..4 {
            if idx[i] == idx[j] {
                return None;
            }
        }
    }
    let pts: Vec<Point3> = idx.iter().map(|&i| p_o.points[i].position).collect();
    // Spread: wide bases stabilize the alignment.
    let mut spread: f64 = 0.0;
    for i in 0..4 {
        for j in (i + 1)..4 {
            spread = spread.max((pts[i] - pts[j]).norm());
        }
    }
    if spread < min_spread {
        return None;
    }
    // Non-collinear first three.
    let v1 = pts[1] - pts[0];
    let v2 = pts[2] - pts[0];
    let cross = v1.cross(&v2);
    let sin = cross.norm() / (v1.norm() * v2.norm());
    if sin < params.min_collinearity_sin {
        return None;
    }
    // Coplanar 4th.
    let n = cross.normalize();
    if plane_distance(&pts[3], &pts[0], &n) > params.coplanarity_tol {
        return None;
    }
    // All pairwise features must occur on the model.
    for i in 0..4 {
        for j in (i + 1)..4 {
            match compute_ppf(&p_o.points[idx[i]], &p_o.points[idx[j]]) {
                Ok(f) if ppf.contains(&f) => {}
                _ => return None,
            }
        }
    }
    Some(Base { indices: idx })
}

/// The three ways to split four points into two segment pairs. Values are
/// index pairs into the quad.
const PAIRINGS: [([usize; 2], [usize; 2]); 3] =
    [([0, 1], [2, 3]), ([0, 2], [1, 3]), ([0, 3], [1, 2])];

/// Line-line closest-point parameters and gap for one pairing. Returns
/// `(r1, r2, gap)` where the closest points are `a + r1·(b−a)` and
/// `c + r2·(d−c)`, or `None` for near-parallel lines.
fn pairing_ratios(pts: &[Point3; 4], pairing: usize) -> Option<(f64, f64, f64)> {
    let (pa, pb) = (PAIRINGS[pairing].0, PAIRINGS[pairing].1);
    let a = pts[pa[0]];
    let u = pts[pa[1]] - a;
    let c = pts[pb[0]];
    let v = pts[pb[1]] - c;
    let w = a - c;
    let uu = u.dot(&u);
    let vv = v.dot(&v);
    let uv = u.dot(&v);
    let denom = uu * vv - uv * uv;
    if denom < 1e-9 * uu * vv {
        return None;
    }
    let uw = u.dot(&w);
    let vw = v.dot(&w);
    let r1 = (uv * vw - vv * uw) / denom;
    let r2 = (uu * vw - uv * uw) / denom;
    let gap = ((a + u * r1) - (c + v * r2)).norm();
    Some((r1, r2, gap))
}

/// Invariant description of a coplanar quad: the segment pairing whose
/// lines intersect most cleanly and the intersection ratios on each.
#[derive(Clone, Copy, Debug)]
struct QuadInvariants {
    pairing: usize,
    r1: f64,
    r2: f64,
}

fn quad_invariants(pts: &[Point3; 4]) -> Option<QuadInvariants> {
    let mut best: Option<(f64, QuadInvariants)> = None;
    for pairing in 0..3 {
        if let Some((r1, r2, gap)) = pairing_ratios(pts, pairing) {
            if best.is_none() || gap < best.unwrap().0 {
                best = Some((gap, QuadInvariants { pairing, r1, r2 }));
            }
        }
    }
    best.map(|(_, q)| q)
}

/// Final congruence stage: the candidate quad (in pairing order, segments
/// (0,1) and (2,3)) must have near-intersecting diagonals whose
/// intersection ratios match the base's.
fn ratio_gap_check(candidate: &[Point3; 4], base_inv: (f64, f64), params: &BaseParams) -> bool {
    match pairing_ratios(candidate, 0) {
        Some((r1, r2, gap)) => {
            gap <= params.congruence_distance_tol
                && (r1 - base_inv.0).abs() <= params.congruence_ratio_tol
                && (r2 - base_inv.1).abs() <= params.congruence_ratio_tol
        }
        None => false,
    }
}

/// Unordered model point pairs sorted by segment length, so every pair
/// matching a diagonal length within tolerance is one binary search away.
/// Building is O(n²) and is shared across all bases of a scene.
#[derive(Clone, Debug)]
pub struct PairIndex {
    lengths: Vec<f64>,
    pairs: Vec<(u32, u32)>,
}

impl PairIndex {
    pub fn build(model: &OrientedPointCloud) -> Self {
        let n = model.len();
        let mut entries: Vec<(f64, (u32, u32))> = Vec::with_capacity(n.saturating_mul(n) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (model.points[i].position - model.points[j].position).norm();
                entries.push((d, (i as u32, j as u32)));
            }
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            lengths: entries.iter().map(|e| e.0).collect(),
            pairs: entries.iter().map(|e| e.1).collect(),
        }
    }

    /// All unordered pairs with |length − len| ≤ tol.
    pub fn window(&self, len: f64, tol: f64) -> &[(u32, u32)] {
        let lo = self.lengths.partition_point(|&d| d < len - tol);
        let hi = self.lengths.partition_point(|&d| d <= len + tol);
        &self.pairs[lo..hi]
    }
}

/// Finds all model 4-tuples approximately congruent to the scene base:
/// every pairwise distance within the distance tolerance, diagonals nearly
/// intersecting, and intersection ratios within the ratio tolerance.
/// Output tuples correspond index-to-index with `base_points`.
pub fn find_congruent_sets(
    base_points: &[Point3; 4],
    model: &OrientedPointCloud,
    params: &BaseParams,
) -> Vec<[usize; 4]> {
    congruent_sets_indexed(base_points, model, &PairIndex::build(model), params)
}

/// Retrieval core. Enumerates model segments matching the base's two
/// diagonal lengths, predicts each segment's diagonal-intersection point
/// from the base's ratios, and joins the two segment sets by intersection
/// proximity before the exact distance and ratio checks. The join radius
/// is conservative: any tuple passing the exact checks has predicted
/// intersections within it, so nothing reachable is skipped.
fn congruent_sets_indexed(
    base_points: &[Point3; 4],
    model: &OrientedPointCloud,
    index: &PairIndex,
    params: &BaseParams,
) -> Vec<[usize; 4]> {
    let Some(inv) = quad_invariants(base_points) else {
        return Vec::new();
    };
    let (pa, pb) = (PAIRINGS[inv.pairing].0, PAIRINGS[inv.pairing].1);
    // Base points in pairing order: segments (0,1) and (2,3).
    let paired_base = [
        base_points[pa[0]],
        base_points[pa[1]],
        base_points[pb[0]],
        base_points[pb[1]],
    ];
    let d12 = (paired_base[0] - paired_base[1]).norm();
    let d34 = (paired_base[2] - paired_base[3]).norm();
    let tol = params.congruence_distance_tol;
    let pos: Vec<Point3> = model.position_vec();

    // Both orientations of every segment matching the first diagonal,
    // with the intersection point each predicts.
    let w12 = index.window(d12, tol);
    let mut ori12: Vec<(u32, u32)> = Vec::with_capacity(w12.len() * 2);
    let mut e1s: Vec<Point3> = Vec::with_capacity(w12.len() * 2);
    for &(i, j) in w12 {
        let (pi, pj) = (pos[i as usize], pos[j as usize]);
        ori12.push((i, j));
        e1s.push(pi + (pj - pi) * inv.r1);
        ori12.push((j, i));
        e1s.push(pj + (pi - pj) * inv.r1);
    }
    if ori12.is_empty() {
        return Vec::new();
    }
    let tree = KdTree::new(e1s);

    // Squared acceptance ranges for the four cross distances; the two
    // segment lengths are already within tolerance by construction.
    let range = |d: f64| {
        let lo = (d - tol).max(0.0);
        (lo * lo, (d + tol) * (d + tol))
    };
    let g02 = range((paired_base[0] - paired_base[2]).norm());
    let g03 = range((paired_base[0] - paired_base[3]).norm());
    let g12 = range((paired_base[1] - paired_base[2]).norm());
    let g13 = range((paired_base[1] - paired_base[3]).norm());

    // Ratio slack stretches each predicted intersection along its own
    // segment and the candidate's diagonals may miss by up to the
    // distance tolerance.
    let h = params.congruence_ratio_tol * (d12 + d34 + 2.0 * tol) + tol + 1e-9;
    let mut out: Vec<[usize; 4]> = Vec::new();
    for &(k0, l0) in index.window(d34, tol) {
        for (k, l) in [(k0, l0), (l0, k0)] {
            let (pk, pl) = (pos[k as usize], pos[l as usize]);
            let e2 = pk + (pl - pk) * inv.r2;
            tree.for_each_within(&e2, h, |m, _| {
                let (i, j) = ori12[m];
                if i == k || i == l || j == k || j == l {
                    return;
                }
                let (pi, pj) = (pos[i as usize], pos[j as usize]);
                let d2 = (pi - pk).norm_squared();
                if d2 < g02.0 || d2 > g02.1 {
                    return;
                }
                let d2 = (pi - pl).norm_squared();
                if d2 < g03.0 || d2 > g03.1 {
                    return;
                }
                let d2 = (pj - pk).norm_squared();
                if d2 < g12.0 || d2 > g12.1 {
                    return;
                }
                let d2 = (pj - pl).norm_squared();
                if d2 < g13.0 || d2 > g13.1 {
                    return;
                }
                let candidate = [pi, pj, pk, pl];
                if !ratio_gap_check(&candidate, (inv.r1, inv.r2), params) {
                    return;
                }
                // Undo the pairing permutation so the tuple corresponds
                // to the base as given.
                let mut tuple = [0usize; 4];
                tuple[pa[0]] = i as usize;
                tuple[pa[1]] = j as usize;
                tuple[pb[0]] = k as usize;
                tuple[pb[1]] = l as usize;
                out.push(tuple);
            });
        }
    }
    out
}

/// Least-squares rigid alignment mapping `congruent_points` (model) onto
/// `base_points` (scene): minimizes Σ‖T·m_i − s_i‖² in closed form via the
/// cross-covariance decomposition, with the determinant constrained to +1.
pub fn align_base(
    base_points: &[Point3; 4],
    congruent_points: &[Point3; 4],
) -> Result<RigidTransform> {
    let s_mean = {
        let sum = base_points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        sum / 4.0
    };
    let m_mean = {
        let sum = congruent_points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        sum / 4.0
    };
    let mut h = nalgebra::Matrix3::<f64>::zeros();
    for (s, m) in base_points.iter().zip(congruent_points) {
        h += (m.coords - m_mean) * (s.coords - s_mean).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    // Collinear point sets leave the rotation underdetermined about the
    // common axis; coplanar sets (rank 2) are fine.
    if svd.singular_values[1] <= 1e-12 * svd.singular_values[0].max(1e-300) {
        return Err(Error::RankDeficientAlignment);
    }
    let v = v_t.transpose();
    let det = (v * u.transpose()).determinant();
    let d = nalgebra::Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
    let r = v * d * u.transpose();
    let rotation = nalgebra::Rotation3::from_matrix(&r);
    let translation = s_mean - rotation * m_mean;
    Ok(RigidTransform::new(rotation, translation))
}

/// Everything hypothesis generation needs beyond the clouds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationParams {
    /// Number of accepted bases to sample.
    pub n_bases: usize,
    /// Rejections allowed per requested base before giving up.
    pub rejection_budget_factor: usize,
    pub steps: PpfSteps,
    pub base: BaseParams,
    /// Heuristic saturation rate, 1/meters.
    pub lambda: f64,
    /// Heuristic decay per draw.
    pub gamma: f64,
    pub lcp: LcpParams,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            n_bases: 20,
            rejection_budget_factor: 50,
            steps: PpfSteps::default(),
            base: BaseParams::default(),
            lambda: 50.0,
            gamma: 0.5,
            lcp: LcpParams::default(),
        }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<()> {
        self.steps.validate()?;
        self.base.validate()?;
        self.lcp.validate()?;
        if self.rejection_budget_factor == 0 {
            return Err(Error::InvalidInput(
                "registration.rejection_budget_factor must be > 0".into(),
            ));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidInput(
                "registration.lambda must be > 0".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidInput(
                "registration.gamma must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Samples bases until `n_bases` are accepted (or the rejection budget
/// runs out), retrieves each base's congruent sets on the model, aligns
/// every match, and scores each aligned pose by LCP against the scene.
///
/// Base sampling is sequential because the heuristic decays in place;
/// congruent retrieval, alignment, and scoring run in parallel per base
/// with results collected in base order, so output is independent of the
/// worker count.
pub fn generate_hypotheses(
    p_o: &OrientedPointCloud,
    model_samples: &OrientedPointCloud,
    ppf: &PpfHashMap,
    heuristic: &mut SamplingHeuristic,
    params: &RegistrationParams,
    rng_seed: u64,
) -> Result<Vec<PoseHypothesis>> {
    params.validate()?;
    if p_o.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "hypothesis generation needs at least 4 scene points, got {}",
            p_o.len()
        )));
    }
    if heuristic.weights.len() != p_o.len() {
        return Err(Error::InvalidInput(format!(
            "heuristic covers {} points but the scene has {}",
            heuristic.weights.len(),
            p_o.len()
        )));
    }
    if params.n_bases == 0 {
        return Ok(Vec::new());
    }

    let min_spread = params.base.min_spread_fraction * cloud_bbox_diagonal(model_samples);
    let mut rng = stream_rng(rng_seed, 0);
    let budget = params.rejection_budget_factor * params.n_bases;
    let mut rejections = 0usize;
    let mut bases: Vec<Base> = Vec::with_capacity(params.n_bases);
    while bases.len() < params.n_bases && rejections < budget {
        match sample_base(p_o, heuristic, ppf, &params.base, min_spread, &mut rng) {
            Some(b) => bases.push(b),
            None => rejections += 1,
        }
    }
    if bases.is_empty() {
        return Err(Error::NoValidBases(format!(
            "0 accepted after {rejections} rejections (budget {budget})"
        )));
    }
    if bases.len() < params.n_bases {
        log::warn!(
            "accepted only {} of {} bases within {} rejections",
            bases.len(),
            params.n_bases,
            rejections
        );
    }

    let scene_index = KdTree::new(p_o.position_vec());
    let pair_index = PairIndex::build(model_samples);
    let per_base: Vec<Result<Vec<PoseHypothesis>>> = par_map(&bases, |base| {
        let base_points = [
            p_o.points[base.indices[0]].position,
            p_o.points[base.indices[1]].position,
            p_o.points[base.indices[2]].position,
            p_o.points[base.indices[3]].position,
        ];
        let mut hyps = Vec::new();
        for tuple in congruent_sets_indexed(&base_points, model_samples, &pair_index, &params.base)
        {
            let congruent_points = [
                model_samples.points[tuple[0]].position,
                model_samples.points[tuple[1]].position,
                model_samples.points[tuple[2]].position,
                model_samples.points[tuple[3]].position,
            ];
            let t = match align_base(&base_points, &congruent_points) {
                Ok(t) => t,
                // A degenerate congruent tuple cannot produce a pose.
                Err(Error::RankDeficientAlignment) => continue,
                Err(e) => return Err(e),
            };
            let lcp = lcp_score(model_samples, &scene_index, &t, &params.lcp)?;
            hyps.push(PoseHypothesis {
                transform: t,
                lcp,
                render_score: None,
            });
        }
        Ok(hyps)
    });
    let mut out = Vec::new();
    for r in per_base {
        out.extend(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::adi_error;
    use crate::mesh::{cylinder_mesh, ellipsoid_mesh, sphere_mesh};
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn op(p: [f64; 3], n: [f64; 3]) -> OrientedPoint {
        OrientedPoint::new(
            Point3::new(p[0], p[1], p[2]),
            Vector3::new(n[0], n[1], n[2]),
        )
    }

    #[test]
    fn ppf_of_orthogonal_normals() {
        let a = op([0.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        let b = op([0.05, 0.0, 0.0], [0.0, 0.0, 1.0]);
        let f = compute_ppf(&a, &b).unwrap();
        assert_relative_eq!(f.distance, 0.05, epsilon = 1e-12);
        assert_relative_eq!(f.angle_n1_d, FRAC_PI_2, epsilon = 1e-12);
        assert_relative_eq!(f.angle_n2_d, FRAC_PI_2, epsilon = 1e-12);
        assert_relative_eq!(f.angle_n1_n2, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ppf_of_opposed_normals() {
        let a = op([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        let b = op([0.02, 0.0, 0.0], [-1.0, 0.0, 0.0]);
        let f = compute_ppf(&a, &b).unwrap();
        assert_relative_eq!(f.distance, 0.02, epsilon = 1e-12);
        assert_relative_eq!(f.angle_n1_d, 0.0, epsilon = 1e-12);
        assert_relative_eq!(f.angle_n2_d, PI, epsilon = 1e-12);
        assert_relative_eq!(f.angle_n1_n2, PI, epsilon = 1e-12);
    }

    #[test]
    fn ppf_swap_relations_hold_for_random_pairs() {
        let mut rng = stream_rng(21, 0);
        use rand::Rng;
        for _ in 0..200 {
            let rv = |rng: &mut rand_chacha::ChaCha12Rng| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            };
            let a = OrientedPoint::new(Point3::origin() + rv(&mut rng), rv(&mut rng).normalize());
            let b = OrientedPoint::new(Point3::origin() + rv(&mut rng), rv(&mut rng).normalize());
            if (a.position - b.position).norm() < 1e-6 {
                continue;
            }
            let f = compute_ppf(&a, &b).unwrap();
            let g = compute_ppf(&b, &a).unwrap();
            assert_relative_eq!(f.distance, g.distance, epsilon = 1e-12);
            assert_relative_eq!(f.angle_n1_n2, g.angle_n1_n2, epsilon = 1e-12);
            // Swapping flips the direction, so each normal's angle to it
            // becomes the complement of its angle in the other order.
            assert_relative_eq!(g.angle_n1_d, PI - f.angle_n2_d, epsilon = 1e-9);
            assert_relative_eq!(g.angle_n2_d, PI - f.angle_n1_d, epsilon = 1e-9);
        }
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let a = op([0.1, 0.2, 0.3], [0.0, 0.0, 1.0]);
        let err = compute_ppf(&a, &a).unwrap_err();
        assert_eq!(err.to_string(), "degenerate pair");
    }

    #[test]
    fn hashmap_counts_all_ordered_pairs() {
        let cloud = OrientedPointCloud::new(vec![
            op([0.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
            op([0.05, 0.0, 0.0], [0.0, 0.0, 1.0]),
        ]);
        let map = build_ppf_hashmap(&cloud, PpfSteps::default()).unwrap();
        assert_eq!(map.total_count(), 2);
        // Both orders of this symmetric pair discretize to the same key.
        let f = compute_ppf(&cloud.points[0], &cloud.points[1]).unwrap();
        assert_eq!(map.key(&f), (10, 7, 7, 0));
        assert_eq!(map.count(&f), 2);
    }

    #[test]
    fn hashmap_total_is_n_times_n_minus_one() {
        let mesh = sphere_mesh(0.03, 12, 8);
        let cloud = mesh.sample_surface(60, &mut stream_rng(3, 0)).unwrap();
        let map = build_ppf_hashmap(&cloud, PpfSteps::default()).unwrap();
        assert_eq!(map.total_count(), 60 * 59);
    }

    #[test]
    fn model_features_are_found_and_impossible_ones_are_not() {
        let mesh = cylinder_mesh(0.035, 0.064, 24);
        let cloud = mesh.sample_surface(150, &mut stream_rng(4, 0)).unwrap();
        let map = build_ppf_hashmap(&cloud, PpfSteps::default()).unwrap();
        let f = compute_ppf(&cloud.points[3], &cloud.points[77]).unwrap();
        assert!(map.contains(&f));
        // A feature longer than the model diameter cannot occur.
        let far = Ppf {
            distance: 1.0,
            angle_n1_d: 0.5,
            angle_n2_d: 0.5,
            angle_n1_n2: 0.5,
        };
        assert!(!map.contains(&far));
    }

    #[test]
    fn heuristic_matches_the_closed_form() {
        let cloud = OrientedPointCloud::new(vec![
            op([0.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
            op([0.1, 0.0, 0.0], [0.0, 0.0, 1.0]),
        ]);
        let sdfs = [0.001, 0.1];
        let h = init_heuristic(
            &cloud,
            |p| if p.x < 0.05 { sdfs[0] } else { sdfs[1] },
            50.0,
            0.5,
        );
        assert_relative_eq!(h.weights[0], 0.04680330938339384, epsilon = 1e-15);
        assert_relative_eq!(h.weights[1], 0.9531966906166061, epsilon = 1e-15);
        assert_relative_eq!(h.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn heuristic_zeroes_points_inside_the_hand() {
        let cloud = OrientedPointCloud::new(vec![
            op([0.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
            op([0.1, 0.0, 0.0], [0.0, 0.0, 1.0]),
        ]);
        let h = init_heuristic(
            &cloud,
            |p| if p.x < 0.05 { -0.002 } else { 0.05 },
            50.0,
            0.5,
        );
        assert_eq!(h.weights[0], 0.0);
        assert_relative_eq!(h.weights[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn all_zero_weights_fall_back_to_uniform() {
        let cloud = OrientedPointCloud::new(vec![
            op([0.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
            op([0.1, 0.0, 0.0], [0.0, 0.0, 1.0]),
            op([0.2, 0.0, 0.0], [0.0, 0.0, 1.0]),
        ]);
        let h = init_heuristic(&cloud, |_| -0.01, 50.0, 0.5);
        for w in &h.weights {
            assert_relative_eq!(*w, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn equidistant_points_get_uniform_weights() {
        let cloud = OrientedPointCloud::new(
            (0..5)
                .map(|i| op([i as f64 * 0.01, 0.0, 0.0], [0.0, 0.0, 1.0]))
                .collect(),
        );
        let h = init_heuristic(&cloud, |_| 0.03, 50.0, 0.5);
        for w in &h.weights {
            assert_relative_eq!(*w, 0.2, epsilon = 1e-12);
        }
    }

    #[test]
    fn weights_stay_normalized_through_decays() {
        let mut rng = stream_rng(5, 0);
        use rand::Rng;
        let cloud = OrientedPointCloud::new(
            (0..40)
                .map(|i| op([i as f64 * 0.003, 0.0, 0.0], [0.0, 0.0, 1.0]))
                .collect(),
        );
        let mut h = init_heuristic(&cloud, |p| p.x + 0.001, 50.0, 0.5);
        for _ in 0..500 {
            let i = rng.random_range(0..40);
            h.decay(i);
            let sum: f64 = h.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
            assert!(h.weights.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn first_draws_prefer_the_far_cluster() {
        // Two 50-point clusters: one 1 mm from the hand, one 100 mm away.
        let mut points = Vec::new();
        for i in 0..50 {
            points.push(op([i as f64 * 1e-4, 0.0, 0.0], [0.0, 0.0, 1.0]));
        }
        for i in 0..50 {
            points.push(op([1.0 + i as f64 * 1e-4, 0.0, 0.0], [0.0, 0.0, 1.0]));
        }
        let cloud = OrientedPointCloud::new(points);
        let h = init_heuristic(&cloud, |p| if p.x < 0.5 { 0.001 } else { 0.1 }, 50.0, 0.5);
        // Closed form: the far cluster holds this fraction of the mass.
        let far_mass: f64 = h.weights[50..].iter().sum();
        assert_relative_eq!(far_mass, 0.9531966906166062, epsilon = 1e-9);
        let mut rng = stream_rng(6, 0);
        let mut far = 0usize;
        for _ in 0..10_000 {
            if h.sample(&mut rng) >= 50 {
                far += 1;
            }
        }
        assert!(far > 9_000, "far draws {far}");
    }

    /// A scene cloud that is the model cloud at a known pose.
    fn posed_model(mesh_samples: &OrientedPointCloud, t: &RigidTransform) -> OrientedPointCloud {
        OrientedPointCloud::new(
            mesh_samples
                .points
                .iter()
                .map(|p| OrientedPoint::new(t.apply(&p.position), t.rotate(&p.normal)))
                .collect(),
        )
    }

    #[test]
    fn accepted_bases_satisfy_their_contract() {
        let mesh = cylinder_mesh(0.035, 0.064, 24);
        let model = mesh.sample_surface(300, &mut stream_rng(8, 0)).unwrap();
        let map = build_ppf_hashmap(&model, PpfSteps::default()).unwrap();
        let pose = RigidTransform::new(
            RigidTransform::from_axis_angle(Vector3::new(0.2, 1.0, -0.3), 0.9).rotation,
            Vector3::new(0.05, -0.02, 0.4),
        );
        let scene = posed_model(&model, &pose);
        let params = BaseParams::default();
        let min_spread = params.min_spread_fraction * cloud_bbox_diagonal(&model);
        let mut heuristic = SamplingHeuristic::uniform(scene.len(), 0.5);
        let mut rng = stream_rng(9, 0);
        let mut accepted = 0;
        let mut attempts = 0;
        while accepted < 10 && attempts < 2000 {
            attempts += 1;
            let Some(base) =
                sample_base(&scene, &mut heuristic, &map, &params, min_spread, &mut rng)
            else {
                continue;
            };
            accepted += 1;
            let idx = base.indices;
            // Distinctness, spread, and feature presence.
            let mut spread: f64 = 0.0;
            for i in 0..4 {
                for j in (i + 1)..4 {
                    assert_ne!(idx[i], idx[j]);
                    let d = (scene.points[idx[i]].position - scene.points[idx[j]].position).norm();
                    spread = spread.max(d);
                    let f = compute_ppf(&scene.points[idx[i]], &scene.points[idx[j]]).unwrap();
                    assert!(map.contains(&f));
                }
            }
            assert!(spread >= min_spread);
            // Re-check coplanarity.
            let p: Vec<Point3> = idx.iter().map(|&i| scene.points[i].position).collect();
            let n = (p[1] - p[0]).cross(&(p[2] - p[0])).normalize();
            assert!((p[3] - p[0]).dot(&n).abs() <= params.coplanarity_tol + 1e-12);
        }
        assert!(accepted >= 10, "only {accepted} accepted in {attempts}");
    }

    #[test]
    fn no_base_spans_scene_and_far_outliers() {
        let mesh = cylinder_mesh(0.035, 0.064, 24);
        let model = mesh.sample_surface(200, &mut stream_rng(10, 0)).unwrap();
        let map = build_ppf_hashmap(&model, PpfSteps::default()).unwrap();
        // Scene: the model at identity plus an outlier cluster 0.5 m away,
        // far beyond the model diameter.
        let mut points = model.points.clone();
        let outlier_start = points.len();
        for i in 0..40 {
            points.push(op(
                [0.5 + (i % 5) as f64 * 0.01, (i / 5) as f64 * 0.01, 0.0],
                [0.0, 0.0, 1.0],
            ));
        }
        let scene = OrientedPointCloud::new(points);
        let params = BaseParams::default();
        let min_spread = 0.015;
        let mut heuristic = SamplingHeuristic::uniform(scene.len(), 0.5);
        let mut rng = stream_rng(11, 0);
        let mut accepted = 0;
        for _ in 0..4000 {
            if let Some(base) =
                sample_base(&scene, &mut heuristic, &map, &params, min_spread, &mut rng)
            {
                accepted += 1;
                let spans_both = base.indices.iter().any(|&i| i >= outlier_start)
                    && base.indices.iter().any(|&i| i < outlier_start);
                assert!(!spans_both, "base {:?} spans clusters", base.indices);
            }
        }
        assert!(accepted > 0, "sampler accepted nothing");
    }

    #[test]
    fn base_sampling_is_deterministic() {
        let mesh = ellipsoid_mesh(Vector3::new(0.015, 0.015, 0.032), 16, 12);
        let model = mesh.sample_surface(200, &mut stream_rng(12, 0)).unwrap();
        let map = build_ppf_hashmap(&model, PpfSteps::default()).unwrap();
        let params = BaseParams::default();
        let min_spread = params.min_spread_fraction * cloud_bbox_diagonal(&model);
        let run = || {
            let mut heuristic = SamplingHeuristic::uniform(model.len(), 0.5);
            let mut rng = stream_rng(13, 0);
            let mut seq = Vec::new();
            for _ in 0..300 {
                if let Some(b) =
                    sample_base(&model, &mut heuristic, &map, &params, min_spread, &mut rng)
                {
                    seq.push(b.indices);
                }
            }
            seq
        };
        let a = run();
        assert!(!a.is_empty());
        assert_eq!(a, run());
    }

    /// Brute-force congruent set search: the same acceptance predicate
    /// (all six pairwise distances within tolerance, then the diagonal
    /// ratio and gap check), enumerated over the naive ordered pair cross
    /// product with no indexing.
    fn congruent_sets_brute(
        base_points: &[Point3; 4],
        model: &OrientedPointCloud,
        params: &BaseParams,
    ) -> Vec<[usize; 4]> {
        let Some(inv) = quad_invariants(base_points) else {
            return Vec::new();
        };
        let (pa, pb) = (PAIRINGS[inv.pairing].0, PAIRINGS[inv.pairing].1);
        let paired_base = [
            base_points[pa[0]],
            base_points[pa[1]],
            base_points[pb[0]],
            base_points[pb[1]],
        ];
        let tol = params.congruence_distance_tol;
        let n = model.len();
        let all_distances_match = |candidate: &[Point3; 4]| {
            for a in 0..4 {
                for b in (a + 1)..4 {
                    let db = (paired_base[a] - paired_base[b]).norm();
                    let dc = (candidate[a] - candidate[b]).norm();
                    if (db - dc).abs() > tol {
                        return false;
                    }
                }
            }
            true
        };
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                for k in 0..n {
                    for l in 0..n {
                        if k == l || k == i || k == j || l == i || l == j {
                            continue;
                        }
                        let candidate = [
                            model.points[i].position,
                            model.points[j].position,
                            model.points[k].position,
                            model.points[l].position,
                        ];
                        if all_distances_match(&candidate)
                            && ratio_gap_check(&candidate, (inv.r1, inv.r2), params)
                        {
                            let mut tuple = [0usize; 4];
                            tuple[pa[0]] = i;
                            tuple[pa[1]] = j;
                            tuple[pb[0]] = k;
                            tuple[pb[1]] = l;
                            out.push(tuple);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn congruent_sets_match_the_brute_force_oracle() {
        let mesh = sphere_mesh(0.03, 14, 10);
        let model = mesh.sample_surface(100, &mut stream_rng(14, 0)).unwrap();
        // A base on a great circle: four spread points near the equator.
        let r = 0.03;
        let base = [
            Point3::new(r, 0.0, 0.0),
            Point3::new(-r, 0.0, 0.0),
            Point3::new(0.0, r, 0.0),
            Point3::new(0.0, -r, 0.0),
        ];
        let params = BaseParams::default();
        let mut fast = find_congruent_sets(&base, &model, &params);
        let mut brute = congruent_sets_brute(&base, &model, &params);
        assert!(!brute.is_empty(), "oracle found nothing to compare");
        fast.sort();
        brute.sort();
        assert_eq!(fast, brute);
    }

    #[test]
    fn base_from_the_model_is_self_congruent() {
        let mesh = cylinder_mesh(0.035, 0.064, 24);
        let model = mesh.sample_surface(150, &mut stream_rng(15, 0)).unwrap();
        // A wide, non-degenerate quad from actual model points.
        let idx = pick_spread_quad(&model);
        let base = [
            model.points[idx[0]].position,
            model.points[idx[1]].position,
            model.points[idx[2]].position,
            model.points[idx[3]].position,
        ];
        let found = find_congruent_sets(&base, &model, &BaseParams::default());
        assert!(
            found.contains(&idx),
            "self tuple missing among {} results",
            found.len()
        );
    }

    /// First spread, non-collinear, coplanar-ish quad of model indices.
    fn pick_spread_quad(model: &OrientedPointCloud) -> [usize; 4] {
        let diag = cloud_bbox_diagonal(model);
        let n = model.len();
        for a in 0..n {
            for b in (a + 1)..n {
                if (model.points[a].position - model.points[b].position).norm() < 0.4 * diag {
                    continue;
                }
                for c in (b + 1)..n {
                    let v1 = model.points[b].position - model.points[a].position;
                    let v2 = model.points[c].position - model.points[a].position;
                    if v2.norm() < 0.3 * diag {
                        continue;
                    }
                    let cr = v1.cross(&v2);
                    if cr.norm() / (v1.norm() * v2.norm()) < 0.3 {
                        continue;
                    }
                    let nrm = cr.normalize();
                    for d in 0..n {
                        if d == a || d == b || d == c {
                            continue;
                        }
                        let p = model.points[d].position;
                        if (p - model.points[a].position).dot(&nrm).abs() < 0.002
                            && (p - model.points[a].position).norm() > 0.3 * diag
                            && (p - model.points[b].position).norm() > 0.1 * diag
                            && (p - model.points[c].position).norm() > 0.1 * diag
                        {
                            return [a, b, c, d];
                        }
                    }
                }
            }
        }
        panic!("no spread quad in model");
    }

    #[test]
    fn scaled_base_has_no_congruent_sets() {
        let mesh = cylinder_mesh(0.035, 0.064, 24);
        let model = mesh.sample_surface(150, &mut stream_rng(16, 0)).unwrap();
        let idx = pick_spread_quad(&model);
        let base = [
            Point3::origin() + model.points[idx[0]].position.coords * 2.0,
            Point3::origin() + model.points[idx[1]].position.coords * 2.0,
            Point3::origin() + model.points[idx[2]].position.coords * 2.0,
            Point3::origin() + model.points[idx[3]].position.coords * 2.0,
        ];
        let found = find_congruent_sets(&base, &model, &BaseParams::default());
        assert!(found.is_empty(), "{} sets for a 2x base", found.len());
    }

    #[test]
    fn alignment_recovers_identity_and_known_transforms() {
        let quad = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.05, 0.0, 0.0),
            Point3::new(0.0, 0.04, 0.0),
            Point3::new(0.05, 0.04, 0.0),
        ];
        let t = align_base(&quad, &quad).unwrap();
        assert!(t.translation.norm() < 1e-12);
        assert!(
            crate::geometry::geodesic_rotation_distance(
                &t.rotation_matrix(),
                &nalgebra::Matrix3::identity()
            ) < 1e-9
        );

        let star = RigidTransform::new(
            RigidTransform::from_axis_angle(Vector3::new(0.3, -0.5, 1.0), 1.2).rotation,
            Vector3::new(0.1, -0.2, 0.35),
        );
        let scene = [
            star.apply(&quad[0]),
            star.apply(&quad[1]),
            star.apply(&quad[2]),
            star.apply(&quad[3]),
        ];
        let rec = align_base(&scene, &quad).unwrap();
        let pts: Vec<Point3> = quad.to_vec();
        assert!(adi_error(&rec, &star, &pts) < 1e-9);
    }

    #[test]
    fn alignment_tolerates_small_noise() {
        let quad = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.06, 0.0, 0.0),
            Point3::new(0.0, 0.05, 0.0),
            Point3::new(0.06, 0.05, 0.001),
        ];
        let star = RigidTransform::new(
            RigidTransform::from_axis_angle(Vector3::new(-0.2, 0.8, 0.1), 0.7).rotation,
            Vector3::new(-0.05, 0.12, 0.3),
        );
        let mut rng = stream_rng(17, 0);
        use rand::Rng;
        let mut noisy = [Point3::origin(); 4];
        for (o, q) in noisy.iter_mut().zip(&quad) {
            let noise = Vector3::new(
                rng.random_range(-1e-3..1e-3),
                rng.random_range(-1e-3..1e-3),
                rng.random_range(-1e-3..1e-3),
            );
            *o = star.apply(q) + noise;
        }
        let rec = align_base(&noisy, &quad).unwrap();
        assert!(adi_error(&rec, &star, quad.as_ref()) < 5e-3);
    }

    #[test]
    fn collinear_points_are_rank_deficient() {
        let line = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.01, 0.0, 0.0),
            Point3::new(0.02, 0.0, 0.0),
            Point3::new(0.03, 0.0, 0.0),
        ];
        let err = align_base(&line, &line).unwrap_err();
        assert_eq!(err.to_string(), "rank-deficient alignment");
    }

    #[test]
    fn alignment_beats_random_transforms() {
        let quad = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.05, 0.01, 0.0),
            Point3::new(0.01, 0.05, 0.0),
            Point3::new(0.04, 0.04, 0.002),
        ];
        let star = RigidTransform::new(
            RigidTransform::from_axis_angle(Vector3::new(1.0, 1.0, -0.5), 0.4).rotation,
            Vector3::new(0.02, 0.0, 0.2),
        );
        let scene = [
            star.apply(&quad[0]) + Vector3::new(5e-4, -5e-4, 0.0),
            star.apply(&quad[1]) + Vector3::new(-5e-4, 0.0, 5e-4),
            star.apply(&quad[2]) + Vector3::new(0.0, 5e-4, -5e-4),
            star.apply(&quad[3]),
        ];
        let rec = align_base(&scene, &quad).unwrap();
        let residual = |t: &RigidTransform| -> f64 {
            quad.iter()
                .zip(&scene)
                .map(|(m, s)| (t.apply(m) - s).norm_squared())
                .sum()
        };
        let best = residual(&rec);
        let mut rng = stream_rng(18, 0);
        use rand::Rng;
        for _ in 0..1000 {
            let axis = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let t = RigidTransform::new(
                RigidTransform::from_axis_angle(axis, rng.random_range(0.0..PI)).rotation,
                Vector3::new(
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                ),
            );
            assert!(residual(&t) >= best);
        }
    }

    #[test]
    fn exact_overlap_recovery() {
        let mesh = cylinder_mesh(0.035, 0.064, 24);
        let model = mesh.sample_surface(150, &mut stream_rng(19, 0)).unwrap();
        let map = build_ppf_hashmap(&model, PpfSteps::default()).unwrap();
        let probe: Vec<Point3> = model.points.iter().map(|p| p.position).collect();
        for trial in 0..3u64 {
            let mut trng = stream_rng(20, trial);
            use rand::Rng;
            let axis = Vector3::new(
                trng.random_range(-1.0..1.0),
                trng.random_range(-1.0..1.0),
                trng.random_range(-1.0..1.0),
            );
            let pose = RigidTransform::new(
                RigidTransform::from_axis_angle(axis, trng.random_range(0.0..PI)).rotation,
                Vector3::new(
                    trng.random_range(-0.1..0.1),
                    trng.random_range(-0.1..0.1),
                    trng.random_range(0.3..0.5),
                ),
            );
            let scene = posed_model(&model, &pose);
            let mut heuristic = SamplingHeuristic::uniform(scene.len(), 0.5);
            let hyps = generate_hypotheses(
                &scene,
                &model,
                &map,
                &mut heuristic,
                &RegistrationParams::default(),
                100 + trial,
            )
            .unwrap();
            assert!(!hyps.is_empty());
            let best = hyps.iter().max_by(|a, b| a.lcp.total_cmp(&b.lcp)).unwrap();
            let adi = adi_error(&best.transform, &pose, &probe);
            // Raw hypotheses carry the congruence tolerance as alignment
            // error; the selection stage's ICP refinement removes it.
            assert!(adi < 5e-3, "trial {trial}: adi {adi}, lcp {}", best.lcp);
        }
    }

    #[test]
    fn zero_bases_yield_no_hypotheses() {
        let mesh = cylinder_mesh(0.035, 0.064, 24);
        let model = mesh.sample_surface(100, &mut stream_rng(22, 0)).unwrap();
        let map = build_ppf_hashmap(&model, PpfSteps::default()).unwrap();
        let mut heuristic = SamplingHeuristic::uniform(model.len(), 0.5);
        let params = RegistrationParams {
            n_bases: 0,
            ..RegistrationParams::default()
        };
        let hyps = generate_hypotheses(&model, &model, &map, &mut heuristic, &params, 1).unwrap();
        assert!(hyps.is_empty());
    }

    #[test]
    fn hypothesis_generation_is_deterministic() {
        let mesh = ellipsoid_mesh(Vector3::new(0.015, 0.015, 0.032), 16, 12);
        let model = mesh.sample_surface(150, &mut stream_rng(23, 0)).unwrap();
        let map = build_ppf_hashmap(&model, PpfSteps::default()).unwrap();
        let pose = RigidTransform::from_translation(Vector3::new(0.02, 0.01, 0.4));
        let scene = posed_model(&model, &pose);
        let params = RegistrationParams {
            n_bases: 3,
            ..RegistrationParams::default()
        };
        let run = || {
            let mut heuristic = SamplingHeuristic::uniform(scene.len(), 0.5);
            generate_hypotheses(&scene, &model, &map, &mut heuristic, &params, 77).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.transform.translation, y.transform.translation);
            assert_eq!(x.lcp, y.lcp);
        }
    }

    #[test]
    fn degenerate_scene_reports_no_valid_bases() {
        // All scene points on one line: every base draw fails the
        // collinearity or spread check.
        let scene = OrientedPointCloud::new(
            (0..30)
                .map(|i| op([i as f64 * 0.003, 0.0, 0.0], [0.0, 0.0, 1.0]))
                .collect(),
        );
        let mesh = cylinder_mesh(0.035, 0.064, 24);
        let model = mesh.sample_surface(100, &mut stream_rng(24, 0)).unwrap();
        let map = build_ppf_hashmap(&model, PpfSteps::default()).unwrap();
        let mut heuristic = SamplingHeuristic::uniform(scene.len(), 0.5);
        let err = generate_hypotheses(
            &scene,
            &model,
            &map,
            &mut heuristic,
            &RegistrationParams::default(),
            3,
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("no valid bases"), "{err}");
    }
}
