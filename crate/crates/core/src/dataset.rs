//! Training-corpus generation: depth views of procedural scenes paired with
//! planar action offsets and the distance from each offset pose to the
//! scene's nearest grasp.
//!
//! Images are stored once and shared by their offsets. Train and test
//! samples come from scenes built over disjoint object-template sets, so no
//! object instance leaks across the split. Every quantity that ends up in
//! the on-disk record (camera pose, action, label) is produced from the
//! 32-bit values as stored: relabeling a sample from its provenance
//! reproduces the label bit for bit.

use alloc::vec::Vec;

use rand::Rng;

use crate::geometry::{generate_scene, GeometryError, ObjectInstance, PlanarPose, Scene};
use crate::oracle::{
    distance_to_nearest, enumerate_grasps, GraspSet, GridSpec, GripperModel, OracleError,
    PoseMetric,
};
use crate::render::{
    fill_invalid_to_fixpoint, render_depth, sample_camera_pose, CameraIntrinsics, CameraPose,
    CameraSampleConfig, DepthImage,
};
use crate::rng::{self, tags};

/// Scene redraws allowed before an ungraspable run of scenes is an error.
const MAX_SCENE_ATTEMPTS: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Split {
    Train = 0,
    Test = 1,
}

impl Split {
    pub fn from_byte(b: u8) -> Option<Split> {
        match b {
            0 => Some(Split::Train),
            1 => Some(Split::Test),
            _ => None,
        }
    }

    fn tag(self) -> u64 {
        self as u64
    }
}

/// One training example: a shared depth image, a planar offset in that
/// image's camera frame, and the distance from the offset pose to the
/// scene's nearest grasp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub image_id: u32,
    /// Offset in the camera frame: x, y in meters, theta in radians.
    pub action: [f32; 3],
    /// Meters.
    pub label: f32,
    pub split: Split,
}

/// Enough to rebuild a sample's labeling context: the scene generator seed
/// and the camera pose exactly as used (already rounded to storage width).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageProvenance {
    pub scene_seed: u64,
    /// x, y, z, theta.
    pub camera: [f32; 4],
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub images: Vec<DepthImage>,
    pub samples: Vec<Sample>,
    /// Parallel to `images`.
    pub provenance: Vec<ImageProvenance>,
}

#[derive(Clone, Copy, Debug)]
pub struct DatasetConfig {
    pub n_train_scenes: usize,
    pub n_test_scenes: usize,
    pub views_per_scene: usize,
    pub offsets_per_image: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_train_scenes: 500,
            n_test_scenes: 50,
            views_per_scene: 40,
            offsets_per_image: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetError {
    /// An object template appears in both library splits.
    OverlappingSplit { instance_id: u32 },
    Geometry(GeometryError),
    /// Every redraw of this scene slot came out without a single grasp.
    NoGraspableScene { split: Split, index: usize },
}

impl core::fmt::Display for DatasetError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            DatasetError::OverlappingSplit { instance_id } => {
                write!(f, "object instance {instance_id} appears in both splits")
            }
            DatasetError::Geometry(e) => write!(f, "scene generation failed: {e}"),
            DatasetError::NoGraspableScene { split, index } => {
                write!(f, "no graspable scene for {split:?} slot {index} after redraws")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for DatasetError {}

/// Planar frame of a camera pose as stored in provenance.
pub fn camera_frame(camera: &[f32; 4]) -> PlanarPose {
    PlanarPose::new(camera[0] as f64, camera[1] as f64, camera[3] as f64)
}

/// Distance label for an action expressed in a stored camera frame: the
/// action is lifted to the world frame and measured against the grasp set.
/// Generation and any later relabeling share this path, so they agree
/// exactly.
pub fn action_label(
    camera: &[f32; 4],
    action: &[f32; 3],
    gs: &GraspSet,
    m: &PoseMetric,
) -> Result<f64, OracleError> {
    let offset = PlanarPose::new(action[0] as f64, action[1] as f64, action[2] as f64);
    let world = camera_frame(camera).compose(offset);
    distance_to_nearest(&world, gs, m)
}

/// Redraw the scene for one dataset slot until it has at least one grasp.
pub fn graspable_scene(
    master: u64,
    split: Split,
    index: usize,
    library: &[ObjectInstance],
    gripper: &GripperModel,
    grid: &GridSpec,
) -> Result<(Scene, GraspSet), DatasetError> {
    for attempt in 0..MAX_SCENE_ATTEMPTS {
        let seed = rng::derive(master, &[tags::SCENE, split.tag(), index as u64, attempt]);
        let scene = generate_scene(seed, library).map_err(DatasetError::Geometry)?;
        let gs = enumerate_grasps(&scene, gripper, grid);
        if !gs.is_empty() {
            return Ok((scene, gs));
        }
    }
    Err(DatasetError::NoGraspableScene { split, index })
}

pub fn generate_dataset(
    cfg: &DatasetConfig,
    train_lib: &[ObjectInstance],
    test_lib: &[ObjectInstance],
) -> Result<Dataset, DatasetError> {
    for t in train_lib {
        if test_lib.iter().any(|u| u.instance_id == t.instance_id) {
            return Err(DatasetError::OverlappingSplit { instance_id: t.instance_id });
        }
    }
    let intr = CameraIntrinsics::default();
    let cam_cfg = CameraSampleConfig::default();
    let metric = PoseMetric::default();
    let gripper = GripperModel::default();
    let grid = GridSpec::default();
    let mut ds = Dataset::default();
    let blocks =
        [(Split::Train, train_lib, cfg.n_train_scenes), (Split::Test, test_lib, cfg.n_test_scenes)];
    for (split, lib, n_scenes) in blocks {
        for index in 0..n_scenes {
            let (scene, gs) = graspable_scene(cfg.seed, split, index, lib, &gripper, &grid)?;
            for view in 0..cfg.views_per_scene {
                let path = [tags::CAMERA, split.tag(), index as u64, view as u64];
                let sampled = sample_camera_pose(rng::derive(cfg.seed, &path), &scene, &cam_cfg);
                let camera = [
                    sampled.x as f32,
                    sampled.y as f32,
                    sampled.z as f32,
                    sampled.theta as f32,
                ];
                // Render from the rounded pose so the image matches the
                // provenance record exactly.
                let cam = CameraPose::new(
                    camera[0] as f64,
                    camera[1] as f64,
                    camera[2] as f64,
                    camera[3] as f64,
                );
                let image = fill_invalid_to_fixpoint(&render_depth(&scene, &cam, &intr));
                let image_id = ds.images.len() as u32;
                ds.images.push(image);
                ds.provenance.push(ImageProvenance { scene_seed: scene.seed, camera });
                let half = intr.footprint_half(cam.z);
                let mut offs = rng::stream(
                    cfg.seed,
                    &[tags::OFFSETS, split.tag(), index as u64, view as u64],
                );
                for _ in 0..cfg.offsets_per_image {
                    let action = [
                        offs.gen_range(-half..half) as f32,
                        offs.gen_range(-half..half) as f32,
                        offs.gen_range(-core::f64::consts::FRAC_PI_2..core::f64::consts::FRAC_PI_2)
                            as f32,
                    ];
                    // The grasp set is never empty here.
                    let label = action_label(&camera, &action, &gs, &metric).unwrap() as f32;
                    ds.samples.push(Sample { image_id, action, label, split });
                }
            }
        }
    }
    Ok(ds)
}

/// Width of the label histogram bins in [`DatasetSummary`], meters.
pub const SUMMARY_BIN_WIDTH: f64 = 0.03;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSummary {
    pub n_train: usize,
    pub n_test: usize,
    pub n_images: usize,
    /// Mean fraction of valid pixels per image.
    pub valid_pixel_fraction: f64,
    pub label_min: f64,
    pub label_mean: f64,
    pub label_median: f64,
    pub label_max: f64,
    /// Label counts in [`SUMMARY_BIN_WIDTH`] bins starting at zero.
    pub label_bins: Vec<usize>,
}

pub fn summarize(ds: &Dataset) -> DatasetSummary {
    let mut labels: Vec<f64> = ds.samples.iter().map(|s| s.label as f64).collect();
    labels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = labels.len();
    let (label_min, label_max) = match labels.as_slice() {
        [] => (0.0, 0.0),
        [first, .., last] => (*first, *last),
        [only] => (*only, *only),
    };
    let label_mean = if n == 0 { 0.0 } else { labels.iter().sum::<f64>() / n as f64 };
    let label_median = match n {
        0 => 0.0,
        _ if n % 2 == 1 => labels[n / 2],
        _ => 0.5 * (labels[n / 2 - 1] + labels[n / 2]),
    };
    let mut label_bins = Vec::new();
    if n > 0 {
        label_bins.resize((label_max / SUMMARY_BIN_WIDTH) as usize + 1, 0usize);
        for l in &labels {
            let b = ((l / SUMMARY_BIN_WIDTH) as usize).min(label_bins.len() - 1);
            label_bins[b] += 1;
        }
    }
    let n_images = ds.images.len();
    let valid_pixel_fraction = if n_images == 0 {
        0.0
    } else {
        ds.images
            .iter()
            .map(|im| im.valid_count() as f64 / crate::render::PIXEL_COUNT as f64)
            .sum::<f64>()
            / n_images as f64
    };
    DatasetSummary {
        n_train: ds.samples.iter().filter(|s| s.split == Split::Train).count(),
        n_test: ds.samples.iter().filter(|s| s.split == Split::Test).count(),
        n_images,
        valid_pixel_fraction,
        label_min,
        label_mean,
        label_median,
        label_max,
        label_bins,
    }
}
