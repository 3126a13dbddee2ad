//! Planar geometry: vectors, rigid transforms, convex polygons, point clouds,
//! voxel downsampling and the goal-flow statistics used for reward and success.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// A 2-vector in environment length units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        Vec2::new(self.x / n, self.y / n)
    }

    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Outward normal of an edge traversed counter-clockwise.
    pub fn perp_cw(self) -> Vec2 {
        Vec2::new(self.y, -self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a - 2.0 * PI
    } else {
        a
    }
}

/// SE(2) pose: rotate by `angle` then translate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform2D {
    pub angle: f64,
    pub translation: Vec2,
}

impl Default for RigidTransform2D {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform2D {
    pub fn new(angle: f64, translation: Vec2) -> Self {
        Self {
            angle: normalize_angle(angle),
            translation,
        }
    }

    pub const fn identity() -> Self {
        Self {
            angle: 0.0,
            translation: Vec2::ZERO,
        }
    }

    pub fn translation(t: Vec2) -> Self {
        Self::new(0.0, t)
    }

    pub fn rotation(angle: f64) -> Self {
        Self::new(angle, Vec2::ZERO)
    }

    pub fn apply(&self, p: Vec2) -> Vec2 {
        p.rotated(self.angle) + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform2D) -> RigidTransform2D {
        RigidTransform2D::new(
            self.angle + other.angle,
            other.translation.rotated(self.angle) + self.translation,
        )
    }

    pub fn invert(&self) -> RigidTransform2D {
        RigidTransform2D {
            angle: normalize_angle(-self.angle),
            translation: (-self.translation).rotated(-self.angle),
        }
    }
}

/// Free-function form of [`RigidTransform2D::apply`].
pub fn apply_transform(t: &RigidTransform2D, p: Vec2) -> Vec2 {
    t.apply(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Seg {
    Object,
    Background,
}

/// Scene observation: positions with per-point goal flow and segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    positions: Vec<Vec2>,
    flow: Vec<Vec2>,
    seg: Vec<Seg>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vec2>, flow: Vec<Vec2>, seg: Vec<Seg>) -> Result<Self, GeometryError> {
        if positions.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        if positions.len() != flow.len() || positions.len() != seg.len() {
            return Err(GeometryError::LengthMismatch {
                positions: positions.len(),
                flow: flow.len(),
                seg: seg.len(),
            });
        }
        if let Some(i) = seg
            .iter()
            .zip(&flow)
            .position(|(s, f)| *s == Seg::Background && *f != Vec2::ZERO)
        {
            return Err(GeometryError::BackgroundFlow(i));
        }
        Ok(Self { positions, flow, seg })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec2] {
        &self.positions
    }

    pub fn flow(&self) -> &[Vec2] {
        &self.flow
    }

    pub fn seg(&self) -> &[Seg] {
        &self.seg
    }

    pub fn object_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.seg
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == Seg::Object)
            .map(|(i, _)| i)
    }

    pub fn n_object(&self) -> usize {
        self.seg.iter().filter(|s| **s == Seg::Object).count()
    }

    pub fn object_flows(&self) -> Vec<Vec2> {
        self.object_indices().map(|i| self.flow[i]).collect()
    }

    /// Reorders every channel by `perm` (new point `k` is old point `perm[k]`).
    pub fn permuted(&self, perm: &[usize]) -> PointCloud {
        PointCloud {
            positions: perm.iter().map(|&i| self.positions[i]).collect(),
            flow: perm.iter().map(|&i| self.flow[i]).collect(),
            seg: perm.iter().map(|&i| self.seg[i]).collect(),
        }
    }
}

/// Convex polygon in its object-local frame, counter-clockwise, centroid at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    vertices: Vec<Vec2>,
}

/// Closest boundary point query result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryHit {
    pub point: Vec2,
    pub normal: Vec2,
    /// Positive outside the polygon, negative inside.
    pub signed_distance: f64,
}

impl Polygon {
    /// Validates convexity and orientation, then re-centres on the area centroid.
    pub fn new(vertices: Vec<Vec2>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::DegeneratePolygon);
        }
        let area = signed_area(&vertices);
        if area <= 1e-12 {
            return Err(GeometryError::DegeneratePolygon);
        }
        let n = vertices.len();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            if (b - a).cross(c - b) <= 0.0 {
                return Err(GeometryError::NotConvex);
            }
        }
        let c = area_centroid(&vertices, area);
        Ok(Self {
            vertices: vertices.into_iter().map(|v| v - c).collect(),
        })
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn scaled(&self, s: f64) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|&v| v * s).collect(),
        }
    }

    /// Axis-aligned (min, max) corners of the posed polygon.
    pub fn bbox(&self, pose: &RigidTransform2D) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in self.vertices.iter().map(|&v| pose.apply(v)) {
            lo = Vec2::new(lo.x.min(v.x), lo.y.min(v.y));
            hi = Vec2::new(hi.x.max(v.x), hi.y.max(v.y));
        }
        (lo, hi)
    }

    pub fn bbox_max_side(&self, pose: &RigidTransform2D) -> f64 {
        let (lo, hi) = self.bbox(pose);
        (hi.x - lo.x).max(hi.y - lo.y)
    }

    pub fn mean_vertex_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).sum::<f64>() / self.vertices.len() as f64
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| (b - a).norm()).sum()
    }

    fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    fn edge_normal(&self, i: usize) -> Vec2 {
        let n = self.vertices.len();
        (self.vertices[(i + 1) % n] - self.vertices[i]).perp_cw().normalized()
    }

    /// Points spaced evenly by arc length starting at vertex 0, in the local frame.
    pub fn sample_perimeter(&self, spacing: f64) -> Vec<Vec2> {
        let total = self.perimeter();
        let count = ((total / spacing).round() as usize).max(1);
        let step = total / count as f64;
        let mut out = Vec::with_capacity(count);
        let mut edge_start = 0.0;
        let mut edges = self.edges().peekable();
        let (mut a, mut b) = edges.next().expect("polygon has edges");
        for k in 0..count {
            let s = k as f64 * step;
            while s > edge_start + (b - a).norm() {
                edge_start += (b - a).norm();
                match edges.next() {
                    Some(e) => (a, b) = e,
                    None => break,
                }
            }
            let len = (b - a).norm();
            let t = ((s - edge_start) / len).clamp(0.0, 1.0);
            out.push(a + (b - a) * t);
        }
        out
    }

    pub fn contains_local(&self, p: Vec2) -> bool {
        self.edges().all(|(a, b)| (b - a).cross(p - a) >= 0.0)
    }

    /// Closest boundary point to `q` (world frame) for the polygon at `pose`.
    pub fn closest_boundary(&self, pose: &RigidTransform2D, q: Vec2) -> BoundaryHit {
        let local = pose.invert().apply(q);
        let mut best: Option<(f64, Vec2, usize, f64)> = None;
        for (i, (a, b)) in self.edges().enumerate() {
            let ab = b - a;
            let t = ((local - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
            let p = a + ab * t;
            let d = (local - p).norm();
            if best.is_none_or(|(bd, ..)| d < bd) {
                best = Some((d, p, i, t));
            }
        }
        let (d, p, i, t) = best.expect("polygon has edges");
        let n = self.vertices.len();
        let local_normal = if t <= 0.0 {
            (self.edge_normal(i) + self.edge_normal((i + n - 1) % n)).normalized()
        } else if t >= 1.0 {
            (self.edge_normal(i) + self.edge_normal((i + 1) % n)).normalized()
        } else {
            self.edge_normal(i)
        };
        let sign = if self.contains_local(local) { -1.0 } else { 1.0 };
        BoundaryHit {
            point: pose.apply(p),
            normal: local_normal.rotated(pose.angle),
            signed_distance: sign * d,
        }
    }

    /// First parameter `t ∈ [0, 1]` at which segment `from → to` enters the posed polygon.
    pub fn segment_entry(&self, pose: &RigidTransform2D, from: Vec2, to: Vec2) -> Option<f64> {
        // Cyrus-Beck clipping against the convex polygon's half-planes.
        let inv = pose.invert();
        let p0 = inv.apply(from);
        let d = inv.apply(to) - p0;
        let (mut t_in, mut t_out) = (0.0f64, 1.0f64);
        for (i, (a, _)) in self.edges().enumerate() {
            let n = self.edge_normal(i);
            let num = n.dot(p0 - a);
            let den = n.dot(d);
            if den.abs() < 1e-15 {
                if num > 0.0 {
                    return None;
                }
                continue;
            }
            let t = -num / den;
            if den < 0.0 {
                t_in = t_in.max(t);
            } else {
                t_out = t_out.min(t);
            }
            if t_in > t_out {
                return None;
            }
        }
        Some(t_in)
    }
}

fn signed_area(v: &[Vec2]) -> f64 {
    let n = v.len();
    0.5 * (0..n).map(|i| v[i].cross(v[(i + 1) % n])).sum::<f64>()
}

fn area_centroid(v: &[Vec2], area: f64) -> Vec2 {
    let n = v.len();
    let mut c = Vec2::ZERO;
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        c += (a + b) * a.cross(b);
    }
    c * (1.0 / (6.0 * area))
}

/// Unit outward normal at boundary point `p` of the posed polygon.
///
/// At a vertex the two adjacent edge normals are summed and renormalised.
pub fn outward_normal(poly: &Polygon, pose: &RigidTransform2D, p: Vec2) -> Result<Vec2, GeometryError> {
    const TOL: f64 = 1e-9;
    let local = pose.invert().apply(p);
    let n = poly.vertices.len();
    if let Some(i) = poly.vertices.iter().position(|v| (*v - local).norm() <= TOL) {
        let normal = (poly.edge_normal(i) + poly.edge_normal((i + n - 1) % n)).normalized();
        return Ok(normal.rotated(pose.angle));
    }
    for (i, (a, b)) in poly.edges().enumerate() {
        let ab = b - a;
        let t = (local - a).dot(ab) / ab.dot(ab);
        if (0.0..=1.0).contains(&t) && (local - (a + ab * t)).norm() <= TOL {
            return Ok(poly.edge_normal(i).rotated(pose.angle));
        }
    }
    Err(GeometryError::NotOnBoundary { x: p.x, y: p.y })
}

/// One centroid per occupied voxel cell, in ascending `(cell_x, cell_y)` order.
pub fn voxel_downsample(points: &[Vec2], voxel: f64) -> Result<Vec<Vec2>, GeometryError> {
    if !(voxel > 0.0) {
        return Err(GeometryError::InvalidVoxel(voxel));
    }
    let mut cells: BTreeMap<(i64, i64), (Vec2, usize)> = BTreeMap::new();
    for &p in points {
        let key = ((p.x / voxel).floor() as i64, (p.y / voxel).floor() as i64);
        let e = cells.entry(key).or_insert((Vec2::ZERO, 0));
        e.0 += p;
        e.1 += 1;
    }
    Ok(cells.into_values().map(|(s, n)| s * (1.0 / n as f64)).collect())
}

/// `T_goal·X_i − T_cur·X_i` for each local point.
pub fn compute_flow(local_points: &[Vec2], current: &RigidTransform2D, goal: &RigidTransform2D) -> Vec<Vec2> {
    local_points
        .iter()
        .map(|&p| goal.apply(p) - current.apply(p))
        .collect()
}

pub fn mean_flow_norm(flows: &[Vec2]) -> Result<f64, GeometryError> {
    if flows.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    Ok(flows.iter().map(|f| f.norm()).sum::<f64>() / flows.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn square() -> Polygon {
        Polygon::new(vec![
            Vec2::new(-0.05, -0.05),
            Vec2::new(0.05, -0.05),
            Vec2::new(0.05, 0.05),
            Vec2::new(-0.05, 0.05),
        ])
        .unwrap()
    }

    fn close(a: Vec2, b: Vec2, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn apply_transform_examples() {
        let p = Vec2::new(0.3, -0.2);
        assert_eq!(apply_transform(&RigidTransform2D::identity(), p), p);
        let quarter = RigidTransform2D::rotation(PI / 2.0);
        assert!(close(quarter.apply(Vec2::new(1.0, 0.0)), Vec2::new(0.0, 1.0), 1e-15));
        let t = RigidTransform2D::new(PI / 2.0, Vec2::new(0.1, 0.0));
        assert!(close(t.apply(Vec2::new(1.0, 0.0)), Vec2::new(0.1, 1.0), 1e-15));
    }

    #[test]
    fn angle_normalization_half_open() {
        assert_abs_diff_eq!(normalize_angle(PI), PI);
        assert_abs_diff_eq!(normalize_angle(-PI), PI);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        let t = RigidTransform2D::rotation(3.0).compose(&RigidTransform2D::rotation(3.0));
        assert!(t.angle > -PI && t.angle <= PI);
    }

    #[test]
    fn voxel_examples() {
        assert!(voxel_downsample(&[], 0.005).unwrap().is_empty());
        let merged = voxel_downsample(&[Vec2::new(0.001, 0.001), Vec2::new(0.003, 0.004)], 0.005).unwrap();
        assert_eq!(merged.len(), 1);
        assert!(close(merged[0], Vec2::new(0.002, 0.0025), 1e-15));
        let pts = [Vec2::new(0.001, 0.001), Vec2::new(0.007, 0.001)];
        assert_eq!(voxel_downsample(&pts, 0.005).unwrap(), pts.to_vec());
        assert!(matches!(voxel_downsample(&pts, 0.0), Err(GeometryError::InvalidVoxel(_))));
    }

    #[test]
    fn voxel_output_is_lexicographic() {
        let pts = [Vec2::new(0.011, -0.002), Vec2::new(-0.004, 0.009), Vec2::new(-0.004, -0.009)];
        let out = voxel_downsample(&pts, 0.005).unwrap();
        assert_eq!(out, vec![pts[2], pts[1], pts[0]]);
    }

    #[test]
    fn normals_of_square() {
        let sq = square();
        let id = RigidTransform2D::identity();
        assert!(close(outward_normal(&sq, &id, Vec2::new(0.05, 0.0)).unwrap(), Vec2::new(1.0, 0.0), 1e-12));
        let rot = RigidTransform2D::rotation(PI / 2.0);
        let p = rot.apply(Vec2::new(0.05, 0.0));
        assert!(close(outward_normal(&sq, &rot, p).unwrap(), Vec2::new(0.0, 1.0), 1e-12));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(outward_normal(&sq, &id, Vec2::new(0.05, 0.05)).unwrap(), Vec2::new(h, h), 1e-12));
        assert!(matches!(
            outward_normal(&sq, &id, Vec2::new(0.0, 0.0)),
            Err(GeometryError::NotOnBoundary { .. })
        ));
    }

    #[test]
    fn flow_examples() {
        let local = [Vec2::new(0.01, 0.02), Vec2::new(-0.03, 0.0)];
        let id = RigidTransform2D::identity();
        assert!(compute_flow(&local, &id, &id).iter().all(|f| *f == Vec2::ZERO));
        let shift = RigidTransform2D::translation(Vec2::new(0.1, 0.0));
        for f in compute_flow(&local, &id, &shift) {
            assert!(close(f, Vec2::new(0.1, 0.0), 1e-15));
        }
        let f = compute_flow(&[Vec2::new(1.0, 0.0)], &id, &RigidTransform2D::rotation(PI / 2.0));
        assert!(close(f[0], Vec2::new(-1.0, 1.0), 1e-15));
    }

    #[test]
    fn mean_flow_examples() {
        assert_eq!(mean_flow_norm(&[Vec2::ZERO; 3]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            mean_flow_norm(&[Vec2::new(0.03, 0.04), Vec2::ZERO]).unwrap(),
            0.025,
            epsilon = 1e-15
        );
        assert_eq!(mean_flow_norm(&[Vec2::new(3.0, 4.0)]).unwrap(), 5.0);
        assert!(matches!(mean_flow_norm(&[]), Err(GeometryError::EmptyCloud)));
    }

    #[test]
    fn cloud_rejects_background_flow_and_mismatch() {
        let bad = PointCloud::new(vec![Vec2::ZERO], vec![Vec2::new(0.1, 0.0)], vec![Seg::Background]);
        assert!(matches!(bad, Err(GeometryError::BackgroundFlow(0))));
        let bad = PointCloud::new(vec![Vec2::ZERO], vec![], vec![Seg::Object]);
        assert!(matches!(bad, Err(GeometryError::LengthMismatch { .. })));
        assert!(matches!(PointCloud::new(vec![], vec![], vec![]), Err(GeometryError::EmptyCloud)));
    }

    #[test]
    fn polygon_rejects_clockwise_and_reflex() {
        let cw = vec![Vec2::new(0.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(1.0, 0.0)];
        assert!(Polygon::new(cw).is_err());
        let reflex = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(1.0, 0.2),
            Vec2::new(2.0, 2.0),
            Vec2::new(0.0, 2.0),
        ];
        assert!(matches!(Polygon::new(reflex), Err(GeometryError::NotConvex)));
    }

    #[test]
    fn closest_boundary_and_entry() {
        let sq = square();
        let id = RigidTransform2D::identity();
        let hit = sq.closest_boundary(&id, Vec2::new(0.08, 0.01));
        assert!(close(hit.point, Vec2::new(0.05, 0.01), 1e-15));
        assert_abs_diff_eq!(hit.signed_distance, 0.03, epsilon = 1e-15);
        let inside = sq.closest_boundary(&id, Vec2::new(0.04, 0.0));
        assert!(inside.signed_distance < 0.0);
        let t = sq.segment_entry(&id, Vec2::new(0.1, 0.0), Vec2::new(0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(t, 0.5, epsilon = 1e-12);
        assert!(sq.segment_entry(&id, Vec2::new(0.1, 0.0), Vec2::new(0.2, 0.0)).is_none());
    }

    #[test]
    fn perimeter_samples_lie_on_boundary() {
        let sq = square();
        let pts = sq.sample_perimeter(0.005);
        assert_eq!(pts.len(), 80);
        for p in pts {
            assert!(outward_normal(&sq, &RigidTransform2D::identity(), p).is_ok());
        }
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform2D> {
        (-10.0..10.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, x, y)| RigidTransform2D::new(a, Vec2::new(x, y)))
    }

    fn arb_vec() -> impl Strategy<Value = Vec2> {
        (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y)| Vec2::new(x, y))
    }

    proptest! {
        #[test]
        fn transform_round_trip(t in arb_transform(), p in arb_vec()) {
            let back = t.invert().apply(t.apply(p));
            prop_assert!((back - p).norm() <= 1e-12);
            let composed = t.compose(&t.invert()).apply(p);
            prop_assert!((composed - p).norm() <= 1e-12);
        }

        #[test]
        fn flow_translation_equivariance(a in arb_transform(), b in arb_transform(), s in arb_vec(),
                                         pts in prop::collection::vec(arb_vec(), 1..20)) {
            let shift = RigidTransform2D::translation(s);
            let f0 = compute_flow(&pts, &a, &b);
            let f1 = compute_flow(&pts, &shift.compose(&a), &shift.compose(&b));
            for (x, y) in f0.iter().zip(&f1) {
                prop_assert!((*x - *y).norm() <= 1e-12);
            }
        }

        #[test]
        fn voxel_size_and_cell_uniqueness(pts in prop::collection::vec(arb_vec(), 0..200), voxel in 0.01..0.5f64) {
            let out = voxel_downsample(&pts, voxel).unwrap();
            prop_assert!(out.len() <= pts.len());
            let mut cells: Vec<_> = out.iter()
                .map(|p| ((p.x / voxel).floor() as i64, (p.y / voxel).floor() as i64))
                .collect();
            let before = cells.len();
            cells.dedup();
            prop_assert_eq!(before, cells.len());
        }

        #[test]
        fn mean_flow_permutation_and_scaling(flows in prop::collection::vec(arb_vec(), 1..30), c in -5.0..5.0f64) {
            let base = mean_flow_norm(&flows).unwrap();
            let mut rev = flows.clone();
            rev.reverse();
            prop_assert!((mean_flow_norm(&rev).unwrap() - base).abs() <= 1e-12);
            let scaled: Vec<_> = flows.iter().map(|&f| f * c).collect();
            prop_assert!((mean_flow_norm(&scaled).unwrap() - c.abs() * base).abs() <= 1e-12);
        }
    }
}
