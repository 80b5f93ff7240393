//! Closed-loop grasp controller and one-shot baselines.
//!
//! A trial starts with the camera at a fixed height over the scene. The
//! closed-loop controller repeats: render a depth image, score a set of
//! sampled candidate actions with a distance source (the CNN or the exact
//! oracle field), move a fraction `r` toward the best one, descend in z.
//! The one-shot baseline instead scores a dense global grid on the first
//! image only and moves the full offset blind, split into equal sub-steps.
//! Either kind of displacement can be corrupted by a kinematic noise model
//! that perturbs every commanded step.
//!
//! Actions are planar offsets in the camera frame; true distances are
//! always measured with the weighted (x, y, θ) metric against the scene's
//! exact grasp set, regardless of which source drove the motion.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{normalize_angle, PlanarPose, Scene};
use crate::model::Network;
use crate::oracle::{OracleField, PoseMetric};
use crate::render::{
    fill_invalid_to_fixpoint, render_depth, CameraIntrinsics, CameraPose, DepthImage,
};
use crate::rng::{self, tags};

#[cfg(not(feature = "std"))]
use crate::math::Libm as _;

#[derive(Clone, Copy, Debug)]
pub struct ControllerConfig {
    pub z_start: f64,
    pub z_end: f64,
    pub iterations: usize,
    /// Fraction of the selected action executed per step.
    pub step_ratio: f64,
    pub n_candidates: usize,
    /// Planar radius of the candidate disc, meters.
    pub sample_radius: f64,
    /// Candidate yaw range: uniform in ±this, radians.
    pub sample_theta_range: f64,
    /// Append the stay-put action so the controller can hold position.
    pub include_zero_action: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            z_start: 0.30,
            z_end: 0.15,
            iterations: 75,
            step_ratio: 0.2,
            n_candidates: 64,
            sample_radius: 0.05,
            sample_theta_range: 30f64.to_radians(),
            include_zero_action: true,
        }
    }
}

impl ControllerConfig {
    fn valid(&self) -> bool {
        self.z_start > self.z_end
            && self.z_end > 0.0
            && self.step_ratio > 0.0
            && self.step_ratio <= 1.0
            && self.n_candidates > 0
            && self.sample_radius > 0.0
            && self.sample_theta_range >= 0.0
    }
}

/// Per-step kinematic noise: each displacement component is perturbed by
/// `scale · w · ‖Δ‖` with independent standard normal `w`, where `‖Δ‖` is
/// the weighted norm of the commanded step.
#[derive(Clone, Copy, Debug)]
pub struct NoiseModel {
    pub scale: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControllerError {
    InvalidConfig,
}

impl core::fmt::Display for ControllerError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ControllerError::InvalidConfig => write!(
                f,
                "controller config must satisfy z_start > z_end > 0, step ratio in (0, 1], \
                 candidates > 0, detect steps <= iterations"
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ControllerError {}

/// What a distance source sees at one step: the current depth image and
/// the camera's planar pose. The CNN only reads the image; the oracle
/// field only reads the pose.
#[derive(Clone, Copy, Debug)]
pub struct View<'a> {
    pub image: &'a DepthImage,
    pub camera: PlanarPose,
}

/// Anything that can score camera-frame candidate actions by (predicted or
/// exact) distance from the nearest grasp.
pub trait DistanceSource {
    fn eval_many(&self, view: &View<'_>, actions: &[PlanarPose]) -> Vec<f64>;

    fn eval(&self, view: &View<'_>, action: PlanarPose) -> f64 {
        self.eval_many(view, core::slice::from_ref(&action))[0]
    }
}

impl DistanceSource for OracleField {
    fn eval_many(&self, view: &View<'_>, actions: &[PlanarPose]) -> Vec<f64> {
        actions.iter().map(|a| self.distance_in_frame(&view.camera, a)).collect()
    }
}

impl DistanceSource for Network<f32> {
    fn eval_many(&self, view: &View<'_>, actions: &[PlanarPose]) -> Vec<f64> {
        self.forward_batch(view.image, actions)
            .expect("rendered images always have the network's input size")
            .into_iter()
            .map(|v| v as f64)
            .collect()
    }
}

/// Candidate actions for one control step: `n_candidates` poses uniform
/// over the disc × yaw range, plus the zero action (appended last) when
/// configured. Deterministic in `(seed, step_index)`.
pub fn sample_candidates(cfg: &ControllerConfig, seed: u64, step_index: usize) -> Vec<PlanarPose> {
    let mut rng = rng::stream(seed, &[tags::CANDIDATES, step_index as u64]);
    let mut out = Vec::with_capacity(cfg.n_candidates + 1);
    for _ in 0..cfg.n_candidates {
        let r = cfg.sample_radius * rng.gen::<f64>().sqrt();
        let phi = rng.gen_range(0.0..core::f64::consts::TAU);
        let theta = if cfg.sample_theta_range > 0.0 {
            rng.gen_range(-cfg.sample_theta_range..cfg.sample_theta_range)
        } else {
            0.0
        };
        out.push(PlanarPose::new(r * phi.cos(), r * phi.sin(), theta));
    }
    if cfg.include_zero_action {
        out.push(PlanarPose::ZERO);
    }
    out
}

/// Argmin of the distance source over `candidates`; ties go to the
/// smallest index. Returns the chosen action and its score.
pub fn select_action<D: DistanceSource + ?Sized>(
    d: &D,
    view: &View<'_>,
    candidates: &[PlanarPose],
) -> (PlanarPose, f64) {
    assert!(!candidates.is_empty());
    let values = d.eval_many(view, candidates);
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    (candidates[best], values[best])
}

/// The noise law with the normal draws made explicit: each component of
/// the displacement gains `scale · w_i · ‖Δ‖`, where the norm weighs θ by
/// `angular_weight` and the θ perturbation is converted back to radians by
/// the same weight.
pub fn apply_noise_components(
    delta: PlanarPose,
    scale: f64,
    w: [f64; 3],
    m: &PoseMetric,
) -> PlanarPose {
    let wt = m.angular_weight * delta.theta;
    let norm = (delta.x * delta.x + delta.y * delta.y + wt * wt).sqrt();
    PlanarPose::new(
        delta.x + scale * w[0] * norm,
        delta.y + scale * w[1] * norm,
        delta.theta + scale * w[2] * norm / m.angular_weight,
    )
}

/// Draws (w_x, w_y, w_θ) from the stream and applies the noise law.
pub fn apply_noise<R: Rng>(
    delta: PlanarPose,
    scale: f64,
    rng: &mut R,
    m: &PoseMetric,
) -> PlanarPose {
    let w = [
        rng::standard_normal(rng),
        rng::standard_normal(rng),
        rng::standard_normal(rng),
    ];
    apply_noise_components(delta, scale, w, m)
}

/// One row of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Camera pose the step sensed (or would sense) from, before moving.
    pub camera: CameraPose,
    /// Action chosen this step, camera frame.
    pub commanded: PlanarPose,
    /// Action actually executed (equals `commanded` without noise).
    pub executed: PlanarPose,
    /// The distance source's score for the commanded action.
    pub predicted: f64,
    /// Exact weighted distance from the post-move pose to the nearest
    /// grasp.
    pub true_distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub steps: Vec<StepRecord>,
    pub initial_camera: CameraPose,
    pub final_camera: CameraPose,
    pub initial_distance: f64,
    pub final_distance: f64,
}

/// Initial trial pose: planar position uniform over a 0.1 m disc around a
/// random object, yaw uniform, height pinned to `cfg.z_start`.
pub fn initial_pose(scene: &Scene, cfg: &ControllerConfig, seed: u64) -> CameraPose {
    debug_assert!(!scene.objects.is_empty());
    let mut rng = rng::stream(seed, &[tags::INIT_POSE]);
    let obj = &scene.objects[rng.gen_range(0..scene.objects.len())];
    let r = 0.1 * rng.gen::<f64>().sqrt();
    let phi = rng.gen_range(0.0..core::f64::consts::TAU);
    let theta = rng.gen_range(-core::f64::consts::PI..core::f64::consts::PI);
    CameraPose::new(obj.x + r * phi.cos(), obj.y + r * phi.sin(), cfg.z_start, theta)
}

/// Dense global candidate grid for the one-shot baselines: x, y on a
/// square lattice covering the camera footprint, yaw sweeping [−π/2, π/2).
#[derive(Clone, Copy, Debug)]
pub struct OneShotGrid {
    pub dx: f64,
    pub dtheta: f64,
}

impl Default for OneShotGrid {
    fn default() -> Self {
        OneShotGrid { dx: 0.02, dtheta: 15f64.to_radians() }
    }
}

impl OneShotGrid {
    /// All grid actions for a footprint half-width, x-major then y then θ.
    pub fn candidates(&self, half: f64) -> Vec<PlanarPose> {
        let n = (half / self.dx + 1e-9) as i64;
        let n_theta = (core::f64::consts::PI / self.dtheta - 1e-9) as i64 + 1;
        let mut out = Vec::new();
        for ix in -n..=n {
            for iy in -n..=n {
                for it in 0..n_theta {
                    let theta = -core::f64::consts::FRAC_PI_2 + it as f64 * self.dtheta;
                    out.push(PlanarPose::new(
                        ix as f64 * self.dx,
                        iy as f64 * self.dx,
                        theta,
                    ));
                }
            }
        }
        out
    }
}

/// Running trial state shared by the closed-loop and one-shot phases.
struct TrialState<'a> {
    planar: PlanarPose,
    z: f64,
    z_step: f64,
    truth: &'a OracleField,
    noise: Option<(f64, ChaCha8Rng)>,
    steps: Vec<StepRecord>,
    intr: CameraIntrinsics,
}

impl<'a> TrialState<'a> {
    fn new(
        scene: &Scene,
        truth: &'a OracleField,
        cfg: &ControllerConfig,
        nm: Option<&NoiseModel>,
        seed: u64,
    ) -> (Self, CameraPose) {
        let start = initial_pose(scene, cfg, seed);
        let z_step = if cfg.iterations == 0 {
            0.0
        } else {
            (cfg.z_start - cfg.z_end) / cfg.iterations as f64
        };
        let state = TrialState {
            planar: PlanarPose::new(start.x, start.y, start.theta),
            z: start.z,
            z_step,
            truth,
            noise: nm.map(|n| (n.scale, rng::stream(n.seed, &[tags::MOTION_NOISE]))),
            steps: Vec::with_capacity(cfg.iterations),
            intr: CameraIntrinsics::default(),
        };
        (state, start)
    }

    fn camera(&self) -> CameraPose {
        CameraPose::new(self.planar.x, self.planar.y, self.z, self.planar.theta)
    }

    /// Executes a camera-frame displacement (with noise if armed), descends
    /// one z step, and records the row.
    fn advance(&mut self, step: usize, commanded: PlanarPose, predicted: f64) {
        let sensed = self.camera();
        let executed = match &mut self.noise {
            Some((scale, rng)) => {
                apply_noise(commanded, *scale, rng, &self.truth.metric)
            }
            None => commanded,
        };
        self.planar = self.planar.compose(executed);
        self.z -= self.z_step;
        let true_distance = self.truth.distance(&self.planar);
        self.steps.push(StepRecord {
            step,
            camera: sensed,
            commanded,
            executed,
            predicted,
            true_distance,
        });
    }

    fn finish(self, initial_camera: CameraPose) -> TrialResult {
        let initial_planar =
            PlanarPose::new(initial_camera.x, initial_camera.y, initial_camera.theta);
        TrialResult {
            initial_distance: self.truth.distance(&initial_planar),
            final_distance: self.truth.distance(&self.planar),
            final_camera: self.camera(),
            initial_camera,
            steps: self.steps,
        }
    }
}

/// Closed-loop trial: sense, score sampled candidates, move a fraction of
/// the best one, descend; repeat for `cfg.iterations` steps.
pub fn run_trial<D: DistanceSource + ?Sized>(
    scene: &Scene,
    truth: &OracleField,
    d: &D,
    cfg: &ControllerConfig,
    nm: Option<&NoiseModel>,
    seed: u64,
) -> Result<TrialResult, ControllerError> {
    if !cfg.valid() {
        return Err(ControllerError::InvalidConfig);
    }
    let (mut st, start) = TrialState::new(scene, truth, cfg, nm, seed);
    for step in 0..cfg.iterations {
        let image = fill_invalid_to_fixpoint(&render_depth(scene, &st.camera(), &st.intr));
        let view = View { image: &image, camera: st.planar };
        let candidates = sample_candidates(cfg, seed, step);
        let (best, value) = select_action(d, &view, &candidates);
        let commanded = PlanarPose::new(
            cfg.step_ratio * best.x,
            cfg.step_ratio * best.y,
            cfg.step_ratio * best.theta,
        );
        st.advance(step, commanded, value);
    }
    Ok(st.finish(start))
}

/// Scores the one-shot grid on the image at `state`'s current pose and
/// returns the argmin action (ties to the earlier candidate).
fn global_argmin<D: DistanceSource + ?Sized>(
    scene: &Scene,
    st: &TrialState<'_>,
    d: &D,
    grid: &OneShotGrid,
) -> (PlanarPose, f64) {
    let image = fill_invalid_to_fixpoint(&render_depth(scene, &st.camera(), &st.intr));
    let view = View { image: &image, camera: st.planar };
    let candidates = grid.candidates(st.intr.footprint_half(st.z));
    select_action(d, &view, &candidates)
}

/// Moves toward the planar pose `target` (world frame) in `n` equal
/// sub-steps with no sensing in between; each sub-step is expressed in the
/// current camera frame so noise and records stay step-shaped.
fn blind_approach(st: &mut TrialState<'_>, target: PlanarPose, n: usize, predicted: f64, step0: usize) {
    if n == 0 {
        return;
    }
    let dx = (target.x - st.planar.x) / n as f64;
    let dy = (target.y - st.planar.y) / n as f64;
    let dtheta = normalize_angle(target.theta - st.planar.theta) / n as f64;
    for i in 0..n {
        // World delta rotated into the current camera frame; composing it
        // back reproduces the world-frame straight line exactly.
        let (s, c) = (st.planar.theta.sin(), st.planar.theta.cos());
        let local = PlanarPose::new(c * dx + s * dy, -s * dx + c * dy, dtheta);
        st.advance(step0 + i, local, predicted);
    }
}

/// One-shot baseline: score the global grid once on the first image, then
/// move the full offset blind, decomposed into `cfg.iterations` equal
/// noise-perturbed sub-steps.
pub fn run_one_shot<D: DistanceSource + ?Sized>(
    scene: &Scene,
    truth: &OracleField,
    d: &D,
    cfg: &ControllerConfig,
    nm: Option<&NoiseModel>,
    seed: u64,
    grid: &OneShotGrid,
) -> Result<TrialResult, ControllerError> {
    if !cfg.valid() {
        return Err(ControllerError::InvalidConfig);
    }
    let (mut st, start) = TrialState::new(scene, truth, cfg, nm, seed);
    let (best, value) = global_argmin(scene, &st, d, grid);
    let target = st.planar.compose(best);
    blind_approach(&mut st, target, cfg.iterations, value, 0);
    Ok(st.finish(start))
}

/// Detect-then-track: blind one-shot move for `detect_steps` sub-steps,
/// then the closed-loop controller for the remaining iterations. With
/// `detect_steps == cfg.iterations` this is exactly the one-shot baseline.
pub fn run_detect_then_control<D: DistanceSource + ?Sized>(
    scene: &Scene,
    truth: &OracleField,
    d: &D,
    cfg: &ControllerConfig,
    nm: Option<&NoiseModel>,
    seed: u64,
    grid: &OneShotGrid,
    detect_steps: usize,
) -> Result<TrialResult, ControllerError> {
    if !cfg.valid() || detect_steps > cfg.iterations {
        return Err(ControllerError::InvalidConfig);
    }
    let (mut st, start) = TrialState::new(scene, truth, cfg, nm, seed);
    let (best, value) = global_argmin(scene, &st, d, grid);
    let target = st.planar.compose(best);
    blind_approach(&mut st, target, detect_steps, value, 0);
    for step in detect_steps..cfg.iterations {
        let image = fill_invalid_to_fixpoint(&render_depth(scene, &st.camera(), &st.intr));
        let view = View { image: &image, camera: st.planar };
        let candidates = sample_candidates(cfg, seed, step);
        let (best, value) = select_action(d, &view, &candidates);
        let commanded = PlanarPose::new(
            cfg.step_ratio * best.x,
            cfg.step_ratio * best.y,
            cfg.step_ratio * best.theta,
        );
        st.advance(step, commanded, value);
    }
    Ok(st.finish(start))
}
