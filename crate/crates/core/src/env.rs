//! Planar pose-alignment environment.
//!
//! A convex polygon sits in a square bin centred at the origin. Each action
//! picks an observed object point, places the gripper at a pre-contact offset
//! along the outward normal, and then pushes with the commanded delta motion.
//! Object response follows a quasi-static point-push model: the centroid
//! translates with the push and the body turns in proportion to the torque
//! arm of the contact.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{EnvError, GeometryError};
use crate::pointcloud::{compute_flow, mean_flow_norm, voxel_downsample, PointCloud, Polygon, RigidTransform2D, Seg, Vec2};

/// Gripper-to-surface distance at or below which the gripper counts as touching.
const CONTACT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub bin_half_extent: f64,
    pub action_scale: f64,
    pub action_repeat: usize,
    pub precontact_offset: f64,
    pub max_episode_steps: usize,
    pub success_threshold: f64,
    pub n_object_points: usize,
    pub n_background_points: usize,
    pub push_translation_gain: f64,
    /// `None` resolves to `1 / ρ²` with ρ the mean vertex distance to the centroid.
    pub push_rotation_gain: Option<f64>,
    pub object_scale_min: f64,
    pub object_scale_max: f64,
    pub object_voxel: f64,
    pub background_voxel: f64,
    pub object_spacing: f64,
    pub background_spacing: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            bin_half_extent: 0.25,
            action_scale: 0.02,
            action_repeat: 3,
            precontact_offset: 0.02,
            max_episode_steps: 10,
            success_threshold: 0.03,
            n_object_points: 64,
            n_background_points: 64,
            push_translation_gain: 1.0,
            push_rotation_gain: None,
            object_scale_min: 0.8,
            object_scale_max: 1.2,
            object_voxel: 0.005,
            background_voxel: 0.02,
            object_spacing: 0.005,
            background_spacing: 0.02,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let lengths = [
            ("bin_half_extent", self.bin_half_extent),
            ("action_scale", self.action_scale),
            ("precontact_offset", self.precontact_offset),
            ("success_threshold", self.success_threshold),
            ("push_translation_gain", self.push_translation_gain),
            ("object_scale_min", self.object_scale_min),
            ("object_voxel", self.object_voxel),
            ("background_voxel", self.background_voxel),
            ("object_spacing", self.object_spacing),
            ("background_spacing", self.background_spacing),
        ];
        for (name, v) in lengths {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EnvError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.success_threshold >= self.bin_half_extent {
            return Err(EnvError::InvalidConfig("success_threshold must be below bin_half_extent".into()));
        }
        if self.action_repeat < 1 || self.max_episode_steps < 1 {
            return Err(EnvError::InvalidConfig("action_repeat and max_episode_steps must be >= 1".into()));
        }
        if self.n_object_points < 1 || self.n_background_points < 1 {
            return Err(EnvError::InvalidConfig("point counts must be >= 1".into()));
        }
        if self.object_scale_max < self.object_scale_min {
            return Err(EnvError::InvalidConfig("object scale interval is empty".into()));
        }
        if let Some(g) = self.push_rotation_gain {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(EnvError::InvalidConfig(format!("push_rotation_gain must be >= 0, got {g}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectSet {
    SingleSquare,
    CylindricalAnalog,
    AllShapes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InitMode {
    FixedCenter,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GoalMode {
    TranslationOnly,
    FullPose,
}

macro_rules! named_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(format!(
                        "unknown value `{other}` (expected one of: {})",
                        [$($name),+].join(", ")
                    )),
                }
            }
        }
    };
}

named_enum!(ObjectSet { SingleSquare => "single_square", CylindricalAnalog => "cylindrical_analog", AllShapes => "all_shapes" });
named_enum!(InitMode { FixedCenter => "fixed_center", Random => "random" });
named_enum!(GoalMode { TranslationOnly => "translation_only", FullPose => "full_pose" });

/// Difficulty grid entry: object set × initial pose mode × goal mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskVariant {
    pub object_set: ObjectSet,
    pub init_mode: InitMode,
    pub goal_mode: GoalMode,
}

impl TaskVariant {
    /// Single square, centred start, translation goals.
    pub const EASY: TaskVariant = TaskVariant {
        object_set: ObjectSet::SingleSquare,
        init_mode: InitMode::FixedCenter,
        goal_mode: GoalMode::TranslationOnly,
    };

    /// Random convex polygons, random start, full-pose goals.
    pub const HARD: TaskVariant = TaskVariant {
        object_set: ObjectSet::AllShapes,
        init_mode: InitMode::Random,
        goal_mode: GoalMode::FullPose,
    };
}

impl fmt::Display for TaskVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.object_set, self.init_mode, self.goal_mode)
    }
}

impl FromStr for TaskVariant {
    type Err = String;

    /// Accepts `easy`, `hard`, or `object_set/init_mode/goal_mode`.
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "easy" => return Ok(TaskVariant::EASY),
            "hard" => return Ok(TaskVariant::HARD),
            _ => {}
        }
        let parts: Vec<&str> = s.split('/').collect();
        if parts.len() != 3 {
            return Err(format!("variant `{s}` must be `easy`, `hard` or `object_set/init_mode/goal_mode`"));
        }
        Ok(TaskVariant {
            object_set: parts[0].parse()?,
            init_mode: parts[1].parse()?,
            goal_mode: parts[2].parse()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub shape: Polygon,
    pub pose: RigidTransform2D,
    pub goal: RigidTransform2D,
    pub step_count: usize,
    pub gripper_at_reset: bool,
    /// Last commanded gripper position; meaningful only when not at reset.
    pub gripper: Vec2,
}

/// Discrete contact location plus continuous motion parameters in `[-1, 1]²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    pub contact_index: usize,
    pub motion_params: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionResult {
    pub observation: PointCloud,
    pub reward: f64,
    pub terminal: bool,
    pub success: bool,
    pub action_failed: bool,
    pub mean_flow: f64,
}

/// Square of side 0.1 centred at the origin.
pub fn unit_square() -> Polygon {
    let h = 0.05;
    Polygon::new(vec![Vec2::new(-h, -h), Vec2::new(h, -h), Vec2::new(h, h), Vec2::new(-h, h)])
        .expect("square is valid")
}

/// Regular k-gon with a vertex on +x, scaled so its bounding box max side is `side`.
pub fn regular_polygon(k: usize, side: f64) -> Polygon {
    let raw: Vec<Vec2> = (0..k)
        .map(|i| Vec2::new(1.0, 0.0).rotated(2.0 * PI * i as f64 / k as f64))
        .collect();
    let poly = Polygon::new(raw).expect("regular polygon is valid");
    let s = poly.bbox_max_side(&RigidTransform2D::identity());
    poly.scaled(side / s)
}

fn normalize_bbox(poly: Polygon) -> Polygon {
    let s = poly.bbox_max_side(&RigidTransform2D::identity());
    poly.scaled(0.1 / s)
}

fn random_convex(rng: &mut impl Rng) -> Polygon {
    loop {
        let k = rng.random_range(3..=8);
        let aspect = rng.random_range(0.4..1.0);
        let mut angles: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        angles.sort_by(f64::total_cmp);
        // Points on an ellipse are in convex position; reject slivers.
        let verts: Vec<Vec2> = angles.iter().map(|&a| Vec2::new(a.cos(), aspect * a.sin())).collect();
        let Ok(poly) = Polygon::new(verts) else { continue };
        let poly = normalize_bbox(poly);
        let (lo, hi) = poly.bbox(&RigidTransform2D::identity());
        let min_side = (hi.x - lo.x).min(hi.y - lo.y);
        if poly.area() >= 0.002 && min_side >= 0.03 {
            return poly;
        }
    }
}

pub fn generate_shape(config: &EnvConfig, variant: &TaskVariant, rng: &mut impl Rng) -> Polygon {
    match variant.object_set {
        ObjectSet::SingleSquare => unit_square(),
        ObjectSet::CylindricalAnalog => {
            let k = rng.random_range(8..=16);
            let scale = sample_scale(config, rng);
            regular_polygon(k, 0.1 * scale)
        }
        ObjectSet::AllShapes => {
            let poly = random_convex(rng);
            let scale = sample_scale(config, rng);
            poly.scaled(scale)
        }
    }
}

fn sample_scale(config: &EnvConfig, rng: &mut impl Rng) -> f64 {
    if config.object_scale_max > config.object_scale_min {
        rng.random_range(config.object_scale_min..=config.object_scale_max)
    } else {
        config.object_scale_min
    }
}

/// Translation range keeping the polygon rotated by `angle` inside the bin.
fn translation_bounds(shape: &Polygon, angle: f64, half_extent: f64) -> (Vec2, Vec2) {
    let (lo, hi) = shape.bbox(&RigidTransform2D::rotation(angle));
    (
        Vec2::new(-half_extent - lo.x, -half_extent - lo.y),
        Vec2::new(half_extent - hi.x, half_extent - hi.y),
    )
}

fn sample_in_bin(shape: &Polygon, angle: f64, half_extent: f64, rng: &mut impl Rng) -> RigidTransform2D {
    let (lo, hi) = translation_bounds(shape, angle, half_extent);
    let x = if hi.x > lo.x { rng.random_range(lo.x..=hi.x) } else { 0.5 * (lo.x + hi.x) };
    let y = if hi.y > lo.y { rng.random_range(lo.y..=hi.y) } else { 0.5 * (lo.y + hi.y) };
    RigidTransform2D::new(angle, Vec2::new(x, y))
}

fn uniform_angle(rng: &mut impl Rng) -> f64 {
    // (-pi, pi]
    PI - rng.random_range(0.0..2.0 * PI)
}

pub fn sample_goal(
    config: &EnvConfig,
    variant: &TaskVariant,
    shape: &Polygon,
    init: &RigidTransform2D,
    rng: &mut impl Rng,
) -> RigidTransform2D {
    let angle = match variant.goal_mode {
        GoalMode::TranslationOnly => init.angle,
        GoalMode::FullPose => uniform_angle(rng),
    };
    sample_in_bin(shape, angle, config.bin_half_extent, rng)
}

fn sample_init(config: &EnvConfig, variant: &TaskVariant, shape: &Polygon, rng: &mut impl Rng) -> RigidTransform2D {
    match variant.init_mode {
        InitMode::FixedCenter => RigidTransform2D::identity(),
        InitMode::Random => {
            let angle = uniform_angle(rng);
            sample_in_bin(shape, angle, config.bin_half_extent, rng)
        }
    }
}

pub fn reset(config: &EnvConfig, variant: &TaskVariant, rng: &mut impl Rng) -> (EnvState, PointCloud) {
    let shape = generate_shape(config, variant, rng);
    let pose = sample_init(config, variant, &shape, rng);
    let goal = sample_goal(config, variant, &shape, &pose, rng);
    let state = EnvState {
        shape,
        pose,
        goal,
        step_count: 0,
        gripper_at_reset: true,
        gripper: Vec2::ZERO,
    };
    let obs = observe(config, &state, rng);
    (state, obs)
}

fn bin_polygon(half_extent: f64) -> Polygon {
    let h = half_extent;
    Polygon::new(vec![Vec2::new(-h, -h), Vec2::new(h, -h), Vec2::new(h, h), Vec2::new(-h, h)])
        .expect("bin is valid")
}

fn resample<T: Copy>(items: &[T], n: usize, rng: &mut impl Rng) -> Vec<T> {
    (0..n).map(|_| items[rng.random_range(0..items.len())]).collect()
}

/// Builds the segmented point cloud with ground-truth goal flow on the object points.
pub fn observe(config: &EnvConfig, state: &EnvState, rng: &mut impl Rng) -> PointCloud {
    let perimeter = state.shape.sample_perimeter(config.object_spacing);
    let world: Vec<Vec2> = perimeter.iter().map(|&p| state.pose.apply(p)).collect();
    let kept = voxel_downsample(&world, config.object_voxel).expect("voxel validated");
    let to_local = state.pose.invert();
    let kept_local: Vec<Vec2> = kept.iter().map(|&p| to_local.apply(p)).collect();
    let local = resample(&kept_local, config.n_object_points, rng);
    let object_flow = compute_flow(&local, &state.pose, &state.goal);

    let walls = bin_polygon(config.bin_half_extent).sample_perimeter(config.background_spacing);
    let walls = voxel_downsample(&walls, config.background_voxel).expect("voxel validated");
    let background = resample(&walls, config.n_background_points, rng);

    let n = local.len() + background.len();
    let mut positions = Vec::with_capacity(n);
    let mut flow = Vec::with_capacity(n);
    let mut seg = Vec::with_capacity(n);
    for (p, f) in local.iter().zip(object_flow) {
        positions.push(state.pose.apply(*p));
        flow.push(f);
        seg.push(Seg::Object);
    }
    for p in background {
        positions.push(p);
        flow.push(Vec2::ZERO);
        seg.push(Seg::Background);
    }
    PointCloud::new(positions, flow, seg).expect("observation satisfies cloud invariants")
}

pub fn rotation_gain(config: &EnvConfig, shape: &Polygon) -> f64 {
    config.push_rotation_gain.unwrap_or_else(|| {
        let rho = shape.mean_vertex_radius();
        1.0 / (rho * rho)
    })
}

fn clamp_into_bin(config: &EnvConfig, shape: &Polygon, pose: RigidTransform2D) -> RigidTransform2D {
    let (lo, hi) = translation_bounds(shape, pose.angle, config.bin_half_extent);
    let t = pose.translation;
    RigidTransform2D {
        angle: pose.angle,
        translation: Vec2::new(t.x.clamp(lo.x, hi.x), t.y.clamp(lo.y, hi.y)),
    }
}

/// One quasi-static push sub-step. Returns the new state and gripper position.
///
/// The gripper moves from `gripper` to `gripper + u`. If it is touching (or
/// inside) the object it pushes for the whole sub-step; if it starts outside
/// and the segment enters the object, only the part after entry pushes.
pub fn push_step(config: &EnvConfig, state: &EnvState, gripper: Vec2, u: Vec2) -> (EnvState, Vec2) {
    let next_gripper = gripper + u;
    let mut next = state.clone();
    next.gripper = next_gripper;
    if u == Vec2::ZERO {
        return (next, next_gripper);
    }
    let hit = state.shape.closest_boundary(&state.pose, gripper);
    let (contact, normal, fraction) = if hit.signed_distance <= CONTACT_TOL {
        (hit.point, hit.normal, 1.0)
    } else {
        match state.shape.segment_entry(&state.pose, gripper, next_gripper) {
            Some(t) => {
                let p = gripper + u * t;
                (p, state.shape.closest_boundary(&state.pose, p).normal, 1.0 - t)
            }
            None => return (next, next_gripper),
        }
    };
    if u.dot(normal) >= 0.0 || fraction <= 0.0 {
        return (next, next_gripper);
    }
    let push = u * fraction;
    let c = state.pose.translation;
    let dtheta = rotation_gain(config, &state.shape) * (contact - c).cross(push);
    let moved = RigidTransform2D::new(state.pose.angle + dtheta, c + push * config.push_translation_gain);
    next.pose = clamp_into_bin(config, &state.shape, moved);
    (next, next_gripper)
}

fn inside_bin_interior(config: &EnvConfig, p: Vec2) -> bool {
    let h = config.bin_half_extent;
    p.x.abs() < h && p.y.abs() < h
}

fn clip_unit(v: Vec2) -> Vec2 {
    Vec2::new(v.x.clamp(-1.0, 1.0), v.y.clamp(-1.0, 1.0))
}

fn push_sequence(config: &EnvConfig, mut state: EnvState, start: Vec2, motion: Vec2) -> (EnvState, Vec2) {
    let u = clip_unit(motion) * config.action_scale;
    let mut gripper = start;
    for _ in 0..config.action_repeat {
        let (s, g) = push_step(config, &state, gripper, u);
        state = s;
        gripper = g;
    }
    (state, gripper)
}

fn finish_step(
    config: &EnvConfig,
    mut state: EnvState,
    action_failed: bool,
    reset_gripper: bool,
    rng: &mut impl Rng,
) -> (EnvState, TransitionResult) {
    state.step_count += 1;
    state.gripper_at_reset = reset_gripper;
    let observation = observe(config, &state, rng);
    let mean_flow = mean_flow_norm(&observation.object_flows()).expect("observation has object points");
    let success = mean_flow < config.success_threshold;
    let terminal = success || state.step_count >= config.max_episode_steps;
    let result = TransitionResult {
        observation,
        reward: -mean_flow,
        terminal,
        success,
        action_failed,
        mean_flow,
    };
    (state, result)
}

/// Executes a contact-location action: pre-contact, approach, push, reset.
pub fn step(
    config: &EnvConfig,
    state: &EnvState,
    action: &ActionCommand,
    obs: &PointCloud,
    rng: &mut impl Rng,
) -> Result<(EnvState, TransitionResult), EnvError> {
    let i = action.contact_index;
    if i >= obs.len() {
        return Err(EnvError::BadIndex { index: i, len: obs.len() });
    }
    if obs.seg()[i] != Seg::Object {
        return Err(EnvError::BackgroundContact(i));
    }
    // Downsampled points near corners sit slightly inside; project to the surface.
    let hit = state.shape.closest_boundary(&state.pose, obs.positions()[i]);
    let precontact = hit.point + hit.normal * config.precontact_offset;
    if !inside_bin_interior(config, precontact) {
        return Ok(finish_step(config, state.clone(), true, true, rng));
    }
    let (next, _) = push_sequence(config, state.clone(), hit.point, action.motion_params);
    Ok(finish_step(config, next, false, true, rng))
}

/// Regressed-location execution: `raw_location ∈ [-1, 1]²` maps into the object bounding box.
pub fn step_regressed(
    config: &EnvConfig,
    state: &EnvState,
    raw_location: Vec2,
    motion: Vec2,
    rng: &mut impl Rng,
) -> (EnvState, TransitionResult) {
    let target = regressed_location(state, raw_location);
    let side = state.shape.bbox_max_side(&state.pose);
    let hit = state.shape.closest_boundary(&state.pose, target);
    if (target - hit.point).norm() > side {
        return finish_step(config, state.clone(), true, true, rng);
    }
    let approach = hit.point + hit.normal * side;
    if !inside_bin_interior(config, approach) {
        return finish_step(config, state.clone(), true, true, rng);
    }
    let (next, _) = push_sequence(config, state.clone(), hit.point, motion);
    finish_step(config, next, false, true, rng)
}

pub fn regressed_location(state: &EnvState, raw: Vec2) -> Vec2 {
    let (lo, hi) = state.shape.bbox(&state.pose);
    let raw = clip_unit(raw);
    Vec2::new(
        lo.x + 0.5 * (raw.x + 1.0) * (hi.x - lo.x),
        lo.y + 0.5 * (raw.y + 1.0) * (hi.y - lo.y),
    )
}

/// Episode start for the persistent-gripper baseline: one bounding-box side
/// outside the object boundary, on the side facing the bin centre.
pub fn delta_gripper_start(config: &EnvConfig, state: &EnvState) -> Vec2 {
    let c = state.pose.translation;
    let dir = if c.norm() > 1e-9 { (-c).normalized() } else { Vec2::new(-1.0, 0.0) };
    let far = c + dir * (4.0 * config.bin_half_extent);
    let t = state.shape.segment_entry(&state.pose, far, c).unwrap_or(1.0);
    let boundary = far + (c - far) * t;
    let side = state.shape.bbox_max_side(&state.pose);
    clamp_gripper(config, boundary + dir * side)
}

fn clamp_gripper(config: &EnvConfig, g: Vec2) -> Vec2 {
    let h = config.bin_half_extent;
    Vec2::new(g.x.clamp(-h, h), g.y.clamp(-h, h))
}

/// Persistent-gripper execution: move by the delta command from the previous position.
pub fn step_delta(
    config: &EnvConfig,
    state: &EnvState,
    motion: Vec2,
    rng: &mut impl Rng,
) -> (EnvState, TransitionResult) {
    let u = clip_unit(motion) * config.action_scale;
    let mut s = state.clone();
    let mut gripper = state.gripper;
    for _ in 0..config.action_repeat {
        let (next, g) = push_step(config, &s, gripper, u);
        s = next;
        gripper = clamp_gripper(config, g);
        s.gripper = gripper;
    }
    finish_step(config, s, false, false, rng)
}

/// Stateful wrapper bundling config, variant, RNG and the current state.
#[derive(Debug, Clone)]
pub struct PlanarPushEnv {
    config: EnvConfig,
    variant: TaskVariant,
    rng: ChaCha8Rng,
    state: EnvState,
    obs: PointCloud,
}

impl PlanarPushEnv {
    pub fn new(config: EnvConfig, variant: TaskVariant, seed: u64) -> Result<Self, EnvError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (state, obs) = reset(&config, &variant, &mut rng);
        Ok(Self {
            config,
            variant,
            rng,
            state,
            obs,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn variant(&self) -> &TaskVariant {
        &self.variant
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn observation(&self) -> &PointCloud {
        &self.obs
    }

    pub fn reset(&mut self) -> &PointCloud {
        let (state, obs) = reset(&self.config, &self.variant, &mut self.rng);
        self.state = state;
        self.obs = obs;
        &self.obs
    }

    /// Replaces the episode with an explicit shape, pose and goal.
    pub fn reset_to(&mut self, shape: Polygon, pose: RigidTransform2D, goal: RigidTransform2D) -> &PointCloud {
        self.state = EnvState {
            shape,
            pose,
            goal,
            step_count: 0,
            gripper_at_reset: true,
            gripper: Vec2::ZERO,
        };
        self.obs = observe(&self.config, &self.state, &mut self.rng);
        &self.obs
    }

    /// Places the persistent gripper at its episode start position.
    pub fn place_delta_gripper(&mut self) {
        self.state.gripper = delta_gripper_start(&self.config, &self.state);
        self.state.gripper_at_reset = false;
    }

    pub fn step(&mut self, action: &ActionCommand) -> Result<TransitionResult, EnvError> {
        let (state, result) = step(&self.config, &self.state, action, &self.obs, &mut self.rng)?;
        self.commit(state, &result);
        Ok(result)
    }

    pub fn step_regressed(&mut self, raw_location: Vec2, motion: Vec2) -> TransitionResult {
        let (state, result) = step_regressed(&self.config, &self.state, raw_location, motion, &mut self.rng);
        self.commit(state, &result);
        result
    }

    pub fn step_delta(&mut self, motion: Vec2) -> TransitionResult {
        let (state, result) = step_delta(&self.config, &self.state, motion, &mut self.rng);
        self.commit(state, &result);
        result
    }

    fn commit(&mut self, state: EnvState, result: &TransitionResult) {
        self.state = state;
        self.obs = result.observation.clone();
    }

    pub fn mean_flow(&self) -> Result<f64, GeometryError> {
        mean_flow_norm(&self.obs.object_flows())
    }
}
