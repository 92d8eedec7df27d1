//! Deterministic synthetic worlds and traverses.
//!
//! A world is a smooth random route sampled every 0.5 m with one latent
//! appearance vector per sample; latents are white noise smoothed along arc
//! length, so nearby places look alike. Traverses re-sample the route (with
//! optional detours that leave and rejoin it), perturb appearance and
//! odometry, and report a Gaussian odometry belief.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{Covariance3, Pose2, WorldPose};
use crate::seeds::{stream, Purpose};
use crate::traverse::{DescriptorMatrix, FrameMeta, OdometryStep, Traverse};

pub const WORLD_RESOLUTION: f64 = 0.5;
pub const DEFAULT_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub seed: u64,
    pub length_m: f64,
    pub dim: usize,
    pub resolution: f64,
    /// Stationary standard deviation of path curvature (1/m).
    pub curvature_sigma: f64,
    pub curvature_max: f64,
    /// Correlation length of the curvature process (m).
    pub curvature_corr_m: f64,
    /// Standard deviation of the Gaussian smoothing applied to latents (m).
    pub appearance_scale_m: f64,
}

impl WorldSpec {
    pub fn new(seed: u64, length_m: f64, dim: usize) -> Self {
        Self {
            seed,
            length_m,
            dim,
            resolution: WORLD_RESOLUTION,
            curvature_sigma: 1.0 / 100.0,
            curvature_max: 1.0 / 30.0,
            curvature_corr_m: 30.0,
            appearance_scale_m: 3.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.length_m.is_finite() && self.length_m > 0.0) {
            return Err(invalid(format!("world length must be > 0, got {}", self.length_m)));
        }
        if self.dim < 2 {
            return Err(invalid(format!("descriptor dimension must be >= 2, got {}", self.dim)));
        }
        if !(self.resolution > 0.0 && self.resolution <= self.length_m) {
            return Err(invalid(format!("bad world resolution {}", self.resolution)));
        }
        if self.curvature_sigma < 0.0 || self.curvature_max < 0.0 || self.curvature_corr_m <= 0.0 {
            return Err(invalid("curvature parameters must be nonnegative"));
        }
        if self.appearance_scale_m < 0.0 {
            return Err(invalid("appearance scale must be nonnegative"));
        }
        Ok(())
    }
}

/// Ground-truth route and per-sample latent appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub spec: WorldSpec,
    poses: Vec<WorldPose>,
    latents: Vec<f32>,
}

/// Smooth random world of `length_m` meters with `d`-dimensional appearance.
pub fn generate_world(seed: u64, length_m: f64, d: usize) -> Result<World> {
    World::generate(&WorldSpec::new(seed, length_m, d))
}

impl World {
    pub fn generate(spec: &WorldSpec) -> Result<World> {
        spec.validate()?;
        let res = spec.resolution;
        let samples = (spec.length_m / res).round() as usize + 1;
        let mut rng = stream(spec.seed, Purpose::WorldPath, 0);
        let decay = (-res / spec.curvature_corr_m).exp();
        let drive = (1.0 - decay * decay).sqrt() * spec.curvature_sigma;
        let mut kappa = spec.curvature_sigma * normal(&mut rng);
        let mut poses = Vec::with_capacity(samples);
        let mut pose = WorldPose::new(0.0, 0.0, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
        poses.push(pose);
        for _ in 1..samples {
            kappa = (decay * kappa + drive * normal(&mut rng)).clamp(-spec.curvature_max, spec.curvature_max);
            let dth = kappa * res;
            let mid = pose.theta + dth / 2.0;
            pose = WorldPose::new(pose.x + res * mid.cos(), pose.y + res * mid.sin(), pose.theta + dth);
            poses.push(pose);
        }
        let latents = smooth_latents(spec, samples);
        Ok(World {
            spec: spec.clone(),
            poses,
            latents,
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn poses(&self) -> &[WorldPose] {
        &self.poses
    }

    /// Arc length covered by the sampled route.
    pub fn length(&self) -> f64 {
        (self.len() - 1) as f64 * self.spec.resolution
    }

    pub fn latent(&self, k: usize) -> &[f32] {
        &self.latents[k * self.spec.dim..(k + 1) * self.spec.dim]
    }

    /// Index of the sample closest to arc length `s`.
    pub fn nearest_sample(&self, s: f64) -> usize {
        ((s / self.spec.resolution).round().max(0.0) as usize).min(self.len() - 1)
    }

    /// Pose at arc length `s`, interpolated between samples.
    pub fn pose_at(&self, s: f64) -> WorldPose {
        let u = (s / self.spec.resolution).clamp(0.0, (self.len() - 1) as f64);
        let k = (u.floor() as usize).min(self.len() - 2);
        let f = u - k as f64;
        let a = self.poses[k];
        let b = self.poses[k + 1];
        let dth = crate::geometry::wrap(b.theta - a.theta);
        WorldPose::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y), a.theta + f * dth)
    }

    /// Smallest planar distance from (x, y) to any route sample.
    pub fn clearance(&self, x: f64, y: f64) -> f64 {
        self.poses
            .iter()
            .map(|p| (p.x - x).hypot(p.y - y))
            .fold(f64::INFINITY, f64::min)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn smooth_latents(spec: &WorldSpec, samples: usize) -> Vec<f32> {
    smoothed_field(spec, samples).into_iter().map(|v| v as f32).collect()
}

/// Unit-norm rows of white noise smoothed along arc length.
fn smoothed_field(spec: &WorldSpec, samples: usize) -> Vec<f64> {
    let d = spec.dim;
    let mut rng = stream(spec.seed, Purpose::WorldLatents, 0);
    let white: Vec<f64> = (0..samples * d).map(|_| normal(&mut rng)).collect();
    let sigma = spec.appearance_scale_m / spec.resolution;
    let half = (4.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|o| if sigma > 0.0 { (-0.5 * (o as f64 / sigma).powi(2)).exp() } else { 1.0 })
        .collect();
    let n = samples as isize;
    let mut out = vec![0.0f64; samples * d];
    for k in 0..samples {
        let acc = &mut out[k * d..(k + 1) * d];
        for (o, w) in (-half..=half).zip(&kernel) {
            let idx = k as isize + o;
            if idx < 0 || idx >= n {
                continue;
            }
            let row = &white[idx as usize * d..(idx as usize + 1) * d];
            for (a, v) in acc.iter_mut().zip(row) {
                *a += w * v;
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        acc.iter_mut().for_each(|a| *a /= norm);
    }
    out
}

/// Alternate geometry replacing the route between two arc lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detour {
    pub start_s: f64,
    pub end_s: f64,
    /// Polyline from the route at `start_s` to the route at `end_s`.
    pub geometry: Vec<[f64; 2]>,
}

impl Detour {
    pub fn length(&self) -> f64 {
        self.geometry
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DetourAppearance {
    /// Fresh random descriptors: places never seen in the map.
    #[default]
    Fresh,
    /// Latents borrowed from a distant part of the world (perceptual aliasing).
    Aliased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    pub spacing: f64,
    /// Arc length of the first frame.
    pub start_offset: f64,
    /// The traverse stops this far before the end of the route.
    pub end_margin: f64,
    pub detours: Vec<Detour>,
    /// Appearance perturbation scale (norm of the added noise before renormalizing).
    pub sigma_app: f64,
    /// Odometry noise standard deviation per meter traveled, translation.
    pub odom_sigma_xy_per_m: f64,
    /// Odometry noise standard deviation per meter traveled, heading (rad/m).
    pub odom_sigma_theta_per_m: f64,
    /// Reported covariance = inflation × true covariance + floor².
    pub cov_inflation: f64,
    pub cov_floor_xy: f64,
    pub cov_floor_theta: f64,
    pub detour_appearance: DetourAppearance,
}

impl RouteSpec {
    pub fn new(spacing: f64) -> Self {
        Self {
            spacing,
            start_offset: 0.0,
            end_margin: 0.0,
            detours: Vec::new(),
            sigma_app: 0.0,
            odom_sigma_xy_per_m: 0.0,
            odom_sigma_theta_per_m: 0.0,
            cov_inflation: 1.0,
            cov_floor_xy: 0.3,
            cov_floor_theta: 0.03,
            detour_appearance: DetourAppearance::Fresh,
        }
    }

    pub fn validate(&self, world: &World) -> Result<()> {
        let len = world.length() - self.end_margin;
        if !(self.spacing > 0.0) {
            return Err(invalid(format!("route spacing must be > 0, got {}", self.spacing)));
        }
        if !(self.end_margin >= 0.0 && (0.0..len).contains(&self.start_offset)) {
            return Err(invalid(format!(
                "start offset {} and end margin {} leave no route",
                self.start_offset, self.end_margin
            )));
        }
        let sigmas = [
            self.sigma_app,
            self.odom_sigma_xy_per_m,
            self.odom_sigma_theta_per_m,
            self.cov_floor_xy,
            self.cov_floor_theta,
        ];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(invalid("noise scales must be finite and nonnegative"));
        }
        if !(self.cov_inflation > 0.0) {
            return Err(invalid("covariance inflation must be > 0"));
        }
        if (self.odom_sigma_xy_per_m == 0.0 && self.cov_floor_xy == 0.0)
            || (self.odom_sigma_theta_per_m == 0.0 && self.cov_floor_theta == 0.0)
        {
            return Err(invalid("reported odometry covariance would be singular; set a floor"));
        }
        let mut prev_end = self.start_offset;
        for (k, d) in self.detours.iter().enumerate() {
            if !(d.start_s >= prev_end && d.end_s > d.start_s && d.end_s <= len) {
                return Err(invalid(format!(
                    "detour {k} [{}, {}] is not disjoint, ordered and inside [{}, {len}]",
                    d.start_s, d.end_s, self.start_offset
                )));
            }
            if d.geometry.len() < 2 {
                return Err(invalid(format!("detour {k} needs at least two vertices")));
            }
            let a = world.pose_at(d.start_s);
            let b = world.pose_at(d.end_s);
            let first = d.geometry[0];
            let last = d.geometry[d.geometry.len() - 1];
            if (first[0] - a.x).hypot(first[1] - a.y) > 1e-6 || (last[0] - b.x).hypot(last[1] - b.y) > 1e-6 {
                return Err(invalid(format!("detour {k} does not leave and rejoin the route")));
            }
            prev_end = d.end_s;
        }
        Ok(())
    }
}

/// Where a rendered frame lies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrameSource {
    OnRoute { s: f64 },
    Detour { index: usize, along: f64 },
}

enum Piece<'a> {
    Route { from: f64, to: f64 },
    Detour { index: usize, detour: &'a Detour },
}

impl Piece<'_> {
    fn length(&self) -> f64 {
        match self {
            Piece::Route { from, to } => to - from,
            Piece::Detour { detour, .. } => detour.length(),
        }
    }
}

fn polyline_pose(points: &[[f64; 2]], along: f64) -> WorldPose {
    let mut rem = along;
    for w in points.windows(2) {
        let seg = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        if seg == 0.0 {
            continue;
        }
        let heading = (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]);
        if rem <= seg {
            let f = rem / seg;
            return WorldPose::new(w[0][0] + f * (w[1][0] - w[0][0]), w[0][1] + f * (w[1][1] - w[0][1]), heading);
        }
        rem -= seg;
    }
    let n = points.len();
    let heading = (points[n - 1][1] - points[n - 2][1]).atan2(points[n - 1][0] - points[n - 2][0]);
    WorldPose::new(points[n - 1][0], points[n - 1][1], heading)
}

/// Samples poses every `spacing` meters along the (possibly detoured) route.
pub fn route_samples(world: &World, route: &RouteSpec) -> Result<Vec<(WorldPose, FrameSource)>> {
    route.validate(world)?;
    let mut pieces = Vec::new();
    let mut s = route.start_offset;
    for (index, d) in route.detours.iter().enumerate() {
        pieces.push(Piece::Route { from: s, to: d.start_s });
        pieces.push(Piece::Detour { index, detour: d });
        s = d.end_s;
    }
    pieces.push(Piece::Route { from: s, to: world.length() - route.end_margin });

    let mut out = Vec::new();
    let mut base = 0.0;
    let mut k = 0usize;
    for piece in &pieces {
        let len = piece.length();
        loop {
            let u = k as f64 * route.spacing;
            if u > base + len + 1e-9 {
                break;
            }
            let local = (u - base).clamp(0.0, len);
            out.push(match piece {
                Piece::Route { from, .. } => {
                    let s = from + local;
                    (world.pose_at(s), FrameSource::OnRoute { s })
                }
                Piece::Detour { index, detour } => (
                    polyline_pose(&detour.geometry, local),
                    FrameSource::Detour { index: *index, along: local },
                ),
            });
            k += 1;
        }
        base += len;
    }
    Ok(out)
}

fn noisy_unit(base: Option<&[f32]>, dim: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let per = sigma / (dim as f64).sqrt();
    let mut v: Vec<f64> = match base {
        Some(b) => b.iter().map(|x| f64::from(*x) + per * normal(rng)).collect(),
        None => (0..dim).map(|_| normal(rng)).collect(),
    };
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v.into_iter().map(|x| x as f32).collect()
}

/// Renders a traverse of `world` along `route`.
pub fn render_traverse(world: &World, route: &RouteSpec, seed: u64) -> Result<Traverse> {
    let samples = route_samples(world, route)?;
    if samples.len() < 2 {
        return Err(invalid("route yields fewer than two frames"));
    }
    let dim = world.dim();
    let mut rng = stream(seed, Purpose::Render, 0);
    let mut desc = DescriptorMatrix::with_cols(dim);
    let mut frames = Vec::with_capacity(samples.len());
    let mut prev: Option<WorldPose> = None;
    for (pose, source) in &samples {
        let z = match source {
            FrameSource::OnRoute { s } => noisy_unit(Some(world.latent(world.nearest_sample(*s))), dim, route.sigma_app, &mut rng),
            FrameSource::Detour { index, along } => match route.detour_appearance {
                DetourAppearance::Fresh => noisy_unit(None, dim, 0.0, &mut rng),
                DetourAppearance::Aliased => {
                    let d = &route.detours[*index];
                    let far = (world.nearest_sample(d.start_s + along) + world.len() / 2) % world.len();
                    noisy_unit(Some(world.latent(far)), dim, route.sigma_app, &mut rng)
                }
            },
        };
        desc.push(&z)?;
        let odom = match prev {
            None => None,
            Some(p) => Some(noisy_odometry(&p.relative_to(pose), route, &mut rng)?),
        };
        frames.push(FrameMeta { odom, gt_pose: Some(*pose) });
        prev = Some(*pose);
    }
    Traverse::new(desc, frames)
}

fn noisy_odometry(truth: &Pose2, route: &RouteSpec, rng: &mut ChaCha8Rng) -> Result<OdometryStep> {
    let dist = truth.translation_norm();
    let sxy = route.odom_sigma_xy_per_m * dist;
    let sth = route.odom_sigma_theta_per_m * dist;
    let noise = Pose2::new(sxy * normal(rng), sxy * normal(rng), sth * normal(rng));
    let mean = truth.compose(&noise);
    let var_xy = route.cov_inflation * sxy * sxy + route.cov_floor_xy * route.cov_floor_xy;
    let var_th = route.cov_inflation * sth * sth + route.cov_floor_theta * route.cov_floor_theta;
    Ok(OdometryStep::new(mean, Covariance3::diagonal(var_xy, var_xy, var_th)?))
}

/// Full description of a synthetic experiment; serializable as a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub description: String,
    pub seed: u64,
    pub world: WorldSpec,
    pub reference: RouteSpec,
    pub query: RouteSpec,
}

/// A rendered scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub world: World,
    pub reference: Traverse,
    pub query: Traverse,
}

impl ScenarioSpec {
    pub fn render(&self) -> Result<Scenario> {
        let world = World::generate(&self.world)?;
        let reference = render_traverse(&world, &self.reference, self.seed ^ 0x5245_4600)?;
        let query = render_traverse(&world, &self.query, self.seed ^ 0x5155_4552)?;
        Ok(Scenario {
            spec: self.clone(),
            world,
            reference,
            query,
        })
    }
}

pub const SCENARIO_NAMES: [&str; 3] = ["S1", "S2", "S3"];

const LOOP_LENGTH_M: f64 = 2000.0;
const QUERY_SPACING_M: f64 = 3.0;
const BASE_SIGMA_APP: f64 = 3.0;
/// Query appearance noise for the harder S1 variant used to compare smoothing
/// against forward-only filtering.
pub const ELEVATED_SIGMA_APP: f64 = 3.5;
const BASE_ODOM_XY: f64 = 0.02;
const BASE_ODOM_THETA: f64 = 0.002;
const DETOUR_FRACTION: f64 = 0.20;
const DETOUR_COUNT: usize = 3;
const DETOUR_OFFSET_M: f64 = 30.0;

fn base_spec(name: &str, description: &str, seed: u64, world: WorldSpec) -> ScenarioSpec {
    let mut reference = RouteSpec::new(WORLD_RESOLUTION);
    reference.odom_sigma_xy_per_m = BASE_ODOM_XY;
    reference.odom_sigma_theta_per_m = BASE_ODOM_THETA;
    let mut query = reference.clone();
    query.spacing = QUERY_SPACING_M;
    // the query covers the interior of the mapped route
    query.start_offset = 20.0;
    query.end_margin = 20.0;
    query.sigma_app = BASE_SIGMA_APP;
    query.cov_inflation = 2.0;
    ScenarioSpec {
        name: name.to_string(),
        description: description.to_string(),
        seed,
        world,
        reference,
        query,
    }
}

/// Names and one-line descriptions of the built-in scenarios.
pub fn builtin_scenarios() -> Vec<(&'static str, &'static str)> {
    vec![
        ("S1", "clean-loop: 2 km route, moderate appearance change, no detours"),
        ("S2", "detour: S1 with 20% of the query arc length on detours off the map"),
        ("S3", "degraded-odometry: S1 with 5x query odometry noise"),
    ]
}

/// Concrete specification of a built-in scenario for `seed`.
pub fn scenario_spec(name: &str, seed: u64) -> Result<ScenarioSpec> {
    scenario_spec_on(name, seed, WorldSpec::new(seed, LOOP_LENGTH_M, DEFAULT_DIM))
}

/// A built-in scenario laid over a custom world (e.g. a longer route).
pub fn scenario_spec_on(name: &str, seed: u64, world: WorldSpec) -> Result<ScenarioSpec> {
    let desc = builtin_scenarios()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, d)| d)
        .ok_or_else(|| {
            invalid(format!("unknown scenario {name:?}; valid names: {}", SCENARIO_NAMES.join(", ")))
        })?;
    let mut spec = base_spec(name, desc, seed, world);
    match name {
        "S1" => {}
        "S2" => {
            let world = World::generate(&spec.world)?;
            spec.query.detours = place_detours(&world, &spec.query, DETOUR_COUNT, DETOUR_FRACTION, DETOUR_OFFSET_M, seed)?;
        }
        "S3" => {
            spec.query.odom_sigma_xy_per_m *= 5.0;
            spec.query.odom_sigma_theta_per_m *= 5.0;
        }
        _ => unreachable!(),
    }
    Ok(spec)
}

/// Renders a built-in scenario.
pub fn builtin_scenario(name: &str, seed: u64) -> Result<Scenario> {
    scenario_spec(name, seed)?.render()
}

fn detour_polyline(world: &World, start_s: f64, end_s: f64, offset: f64, side: f64) -> Vec<[f64; 2]> {
    let a = world.pose_at(start_s);
    let b = world.pose_at(end_s);
    let na = [-a.theta.sin() * side, a.theta.cos() * side];
    let nb = [-b.theta.sin() * side, b.theta.cos() * side];
    vec![
        [a.x, a.y],
        [a.x + offset * na[0], a.y + offset * na[1]],
        [b.x + offset * nb[0], b.y + offset * nb[1]],
        [b.x, b.y],
    ]
}

/// Smallest route clearance along a detour, ignoring the stretches within
/// `skip` meters of where it leaves and rejoins.
fn detour_clearance(world: &World, geometry: &[[f64; 2]], skip: f64) -> f64 {
    let d = Detour { start_s: 0.0, end_s: 0.0, geometry: geometry.to_vec() };
    let len = d.length();
    let mut worst = f64::INFINITY;
    let mut u = skip;
    while u <= len - skip {
        let p = polyline_pose(geometry, u);
        worst = worst.min(world.clearance(p.x, p.y));
        u += 2.0;
    }
    worst
}

/// Places `count` detours of lateral offset `offset` so that detour frames make
/// up `fraction` of the query arc length; every detour keeps clear of the route.
pub fn place_detours(
    world: &World,
    query: &RouteSpec,
    count: usize,
    fraction: f64,
    offset: f64,
    seed: u64,
) -> Result<Vec<Detour>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut rng = stream(seed, Purpose::DetourPlacement, 0);
    let total = world.length() - query.end_margin - query.start_offset;
    let slot = total / count as f64;
    'attempt: for _ in 0..500 {
        // random placement inside each slot, shared skipped length `a`
        let jitter: Vec<f64> = (0..count).map(|_| rng.random_range(0.0..1.0)).collect();
        let sides: Vec<f64> = (0..count).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let build = |a: f64| -> Vec<Detour> {
            (0..count)
                .map(|k| {
                    let room = (slot - a - 40.0).max(0.0);
                    let s0 = query.start_offset + slot * k as f64 + 20.0 + jitter[k] * room;
                    let side = sides[k];
                    let s1 = s0 + a;
                    Detour { start_s: s0, end_s: s1, geometry: detour_polyline(world, s0, s1, offset, side) }
                })
                .collect()
        };
        let frac = |ds: &[Detour]| -> f64 {
            let skipped: f64 = ds.iter().map(|d| d.end_s - d.start_s).sum();
            let added: f64 = ds.iter().map(Detour::length).sum();
            added / (total - skipped + added)
        };
        let (mut lo, mut hi) = (10.0, slot - 60.0);
        if hi <= lo {
            return Err(invalid("route too short for the requested detours"));
        }
        if frac(&build(lo)) > fraction || frac(&build(hi)) < fraction {
            continue;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if frac(&build(mid)) < fraction {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let detours = build(0.5 * (lo + hi));
        for d in &detours {
            if detour_clearance(world, &d.geometry, 10.0) < 7.0 {
                continue 'attempt;
            }
        }
        return Ok(detours);
    }
    Err(invalid("could not place detours clear of the route"))
}
