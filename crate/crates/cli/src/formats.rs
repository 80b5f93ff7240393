//! On-disk formats: the object-library / scene / grasp-set text files, the
//! dataset and weight binaries, 16-bit debug PGM images, and both CSV
//! layouts (per-step trajectories and per-trial distances).
//!
//! Text floats are printed with Rust's shortest round-trip formatting and
//! parsed back with `str::parse`, so write→read is bit-exact. The binaries
//! are little-endian throughout.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use graspsim_core::controller::TrialResult;
use graspsim_core::dataset::{Dataset, ImageProvenance, Sample, Split};
use graspsim_core::geometry::{ObjectInstance, PlanarPose, Primitive, Scene, Vec3};
use graspsim_core::model::{architecture_hash, NetConfig, Network, Params};
use graspsim_core::oracle::{Grasp, GraspSet};
use graspsim_core::render::{DepthImage, IMAGE_SIZE, PIXEL_COUNT};

pub const DATASET_MAGIC: &[u8; 9] = b"GRSPDATA1";
pub const NETWORK_MAGIC: &[u8; 8] = b"GRSPNET1";
pub const LIBRARY_HEADER: &str = "GRASPLIB";
pub const SCENE_HEADER: &str = "GRASPSCENE";
pub const GRASPSET_HEADER: &str = "GRASPSET";

#[derive(Debug)]
pub enum FormatError {
    Io(io::Error),
    /// The bytes were readable but not the declared format.
    Malformed(String),
}

impl From<io::Error> for FormatError {
    fn from(e: io::Error) -> Self {
        FormatError::Io(e)
    }
}

impl std::fmt::Display for FormatError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FormatError::Io(e) => write!(f, "{e}"),
            FormatError::Malformed(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for FormatError {}

fn malformed(msg: impl Into<String>) -> FormatError {
    FormatError::Malformed(msg.into())
}

// ---------------------------------------------------------------------------
// Shared text helpers.

fn parse_f64(tok: &str, what: &str) -> Result<f64, FormatError> {
    tok.parse::<f64>().map_err(|_| malformed(format!("bad {what}: {tok:?}")))
}

fn parse_usize(tok: &str, what: &str) -> Result<usize, FormatError> {
    tok.parse::<usize>().map_err(|_| malformed(format!("bad {what}: {tok:?}")))
}

/// Whitespace token cursor for the object-line grammar.
struct Tokens<'a> {
    toks: Vec<&'a str>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(line: &'a str) -> Self {
        Tokens { toks: line.split_whitespace().collect(), pos: 0 }
    }

    fn next(&mut self, what: &str) -> Result<&'a str, FormatError> {
        let tok = self.toks.get(self.pos).ok_or_else(|| malformed(format!("missing {what}")))?;
        self.pos += 1;
        Ok(tok)
    }

    fn f64(&mut self, what: &str) -> Result<f64, FormatError> {
        parse_f64(self.next(what)?, what)
    }

    fn end(&self) -> Result<(), FormatError> {
        if self.pos == self.toks.len() {
            Ok(())
        } else {
            Err(malformed(format!("trailing tokens after object: {:?}", &self.toks[self.pos..])))
        }
    }
}

fn push_shape(out: &mut String, shape: &Primitive) {
    match shape {
        Primitive::Box { half_extents } => {
            let _ = write!(out, "box {} {} {}", half_extents.x, half_extents.y, half_extents.z);
        }
        Primitive::Cylinder { radius, height } => {
            let _ = write!(out, "cylinder {radius} {height}");
        }
        Primitive::Sphere { radius } => {
            let _ = write!(out, "sphere {radius}");
        }
        Primitive::Composite { children } => {
            let _ = write!(out, "composite {}", children.len());
            for child in children {
                out.push(' ');
                push_shape(out, &child.shape);
                let _ = write!(
                    out,
                    " {} {} {} {}",
                    child.pose.x, child.pose.y, child.pose.theta, child.z_offset
                );
            }
        }
    }
}

fn parse_shape(t: &mut Tokens<'_>, nested: bool) -> Result<Primitive, FormatError> {
    match t.next("shape kind")? {
        "box" => Ok(Primitive::Box {
            half_extents: Vec3::new(
                t.f64("half extent")?,
                t.f64("half extent")?,
                t.f64("half extent")?,
            ),
        }),
        "cylinder" => {
            Ok(Primitive::Cylinder { radius: t.f64("radius")?, height: t.f64("height")? })
        }
        "sphere" => Ok(Primitive::Sphere { radius: t.f64("radius")? }),
        "composite" if !nested => {
            let n = parse_usize(t.next("child count")?, "child count")?;
            if n == 0 || n > 16 {
                return Err(malformed(format!("bad composite child count: {n}")));
            }
            let mut children = Vec::with_capacity(n);
            for _ in 0..n {
                let shape = parse_shape(t, true)?;
                let pose = PlanarPose {
                    x: t.f64("child x")?,
                    y: t.f64("child y")?,
                    theta: t.f64("child theta")?,
                };
                let z_offset = t.f64("child z offset")?;
                children.push(graspsim_core::geometry::CompositeChild { shape, pose, z_offset });
            }
            Ok(Primitive::Composite { children })
        }
        "composite" => Err(malformed("composite children must be simple shapes")),
        other => Err(malformed(format!("unknown shape kind: {other:?}"))),
    }
}

/// `instance_id shape params... x y z yaw`, the line layout shared by the
/// library and scene files. Composites inline their children as
/// `composite <n> (<child shape> <x> <y> <theta> <z_offset>)*`.
fn push_object_line(out: &mut String, obj: &ObjectInstance) {
    let _ = write!(out, "{} ", obj.instance_id);
    push_shape(out, &obj.shape);
    let _ = writeln!(out, " {} {} {} {}", obj.x, obj.y, obj.z, obj.yaw);
}

fn parse_object_line(line: &str) -> Result<ObjectInstance, FormatError> {
    let mut t = Tokens::new(line);
    let id_tok = t.next("instance id")?;
    let instance_id =
        id_tok.parse::<u32>().map_err(|_| malformed(format!("bad instance id: {id_tok:?}")))?;
    let shape = parse_shape(&mut t, false)?;
    let obj = ObjectInstance {
        instance_id,
        shape,
        x: t.f64("x")?,
        y: t.f64("y")?,
        z: t.f64("z")?,
        yaw: t.f64("yaw")?,
    };
    t.end()?;
    Ok(obj)
}

fn read_text(path: &Path) -> Result<String, FormatError> {
    Ok(std::fs::read_to_string(path)?)
}

fn object_block<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    count: usize,
) -> Result<Vec<ObjectInstance>, FormatError> {
    let mut objects = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| malformed("object list shorter than header"))?;
        objects.push(parse_object_line(line)?);
    }
    if lines.next().is_some() {
        return Err(malformed("object list longer than header"));
    }
    Ok(objects)
}

// ---------------------------------------------------------------------------
// Object library: `GRASPLIB 1 <count>` then one object per line.

pub fn library_to_string(lib: &[ObjectInstance]) -> String {
    let mut out = format!("{LIBRARY_HEADER} 1 {}\n", lib.len());
    for obj in lib {
        push_object_line(&mut out, obj);
    }
    out
}

pub fn library_from_str(text: &str) -> Result<Vec<ObjectInstance>, FormatError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| malformed("empty library file"))?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() != 3 || tok[0] != LIBRARY_HEADER || tok[1] != "1" {
        return Err(malformed(format!("bad library header: {header:?}")));
    }
    object_block(&mut lines, parse_usize(tok[2], "object count")?)
}

pub fn write_library(path: &Path, lib: &[ObjectInstance]) -> Result<(), FormatError> {
    Ok(std::fs::write(path, library_to_string(lib))?)
}

pub fn read_library(path: &Path) -> Result<Vec<ObjectInstance>, FormatError> {
    library_from_str(&read_text(path)?)
}

// ---------------------------------------------------------------------------
// Scene: `GRASPSCENE 1 <seed> <n_objects>` then one object per line.

pub fn scene_to_string(scene: &Scene) -> String {
    let mut out = format!("{SCENE_HEADER} 1 {} {}\n", scene.seed, scene.objects.len());
    for obj in &scene.objects {
        push_object_line(&mut out, obj);
    }
    out
}

pub fn scene_from_str(text: &str) -> Result<Scene, FormatError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| malformed("empty scene file"))?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() != 4 || tok[0] != SCENE_HEADER || tok[1] != "1" {
        return Err(malformed(format!("bad scene header: {header:?}")));
    }
    let seed = tok[2].parse::<u64>().map_err(|_| malformed(format!("bad seed: {:?}", tok[2])))?;
    let objects = object_block(&mut lines, parse_usize(tok[3], "object count")?)?;
    Ok(Scene { seed, objects })
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<(), FormatError> {
    Ok(std::fs::write(path, scene_to_string(scene))?)
}

pub fn read_scene(path: &Path) -> Result<Scene, FormatError> {
    scene_from_str(&read_text(path)?)
}

// ---------------------------------------------------------------------------
// Grasp set: `GRASPSET 1 <count> <dx> <dtheta>` then `x y theta height`.

pub fn graspset_to_string(gs: &GraspSet) -> String {
    let mut out = format!(
        "{GRASPSET_HEADER} 1 {} {} {}\n",
        gs.grasps.len(),
        gs.grid_resolution.0,
        gs.grid_resolution.1
    );
    for g in &gs.grasps {
        let _ = writeln!(out, "{} {} {} {}", g.pose.x, g.pose.y, g.pose.theta, g.grasp_height);
    }
    out
}

pub fn graspset_from_str(text: &str) -> Result<GraspSet, FormatError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| malformed("empty grasp set file"))?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() != 5 || tok[0] != GRASPSET_HEADER || tok[1] != "1" {
        return Err(malformed(format!("bad grasp set header: {header:?}")));
    }
    let count = parse_usize(tok[2], "grasp count")?;
    let grid_resolution = (parse_f64(tok[3], "dx")?, parse_f64(tok[4], "dtheta")?);
    let mut grasps = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| malformed("grasp list shorter than header"))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 4 {
            return Err(malformed(format!("bad grasp line: {line:?}")));
        }
        // Struct literal, not PlanarPose::new: the stored theta is already
        // normalized and re-normalizing can move the last bit.
        grasps.push(Grasp {
            pose: PlanarPose {
                x: parse_f64(tok[0], "x")?,
                y: parse_f64(tok[1], "y")?,
                theta: parse_f64(tok[2], "theta")?,
            },
            grasp_height: parse_f64(tok[3], "height")?,
        });
    }
    if lines.next().is_some() {
        return Err(malformed("grasp list longer than header"));
    }
    Ok(GraspSet { grasps, grid_resolution })
}

pub fn write_graspset(path: &Path, gs: &GraspSet) -> Result<(), FormatError> {
    Ok(std::fs::write(path, graspset_to_string(gs))?)
}

pub fn read_graspset(path: &Path) -> Result<GraspSet, FormatError> {
    graspset_from_str(&read_text(path)?)
}

// ---------------------------------------------------------------------------
// Dataset binary.
//
// Little-endian: magic "GRSPDATA1", u32 version=1, u32 n_images,
// u32 n_samples, u32 width=64, u32 height=64; n_images × 4096 f32 images
// (row-major meters); n_samples × {u32 image_id, f32 x, f32 y, f32 theta,
// f32 label, u8 split}; n_images × {u64 scene_seed, 4 × f32 camera pose}.

struct ByteReader<R> {
    inner: R,
}

impl<R: Read> ByteReader<R> {
    fn u8(&mut self) -> Result<u8, FormatError> {
        let mut b = [0u8; 1];
        self.inner.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32, FormatError> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64, FormatError> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f32(&mut self) -> Result<f32, FormatError> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }
    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let mut bytes = vec![0u8; n * 4];
        self.inner.read_exact(&mut bytes)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
    fn expect_end(&mut self, what: &str) -> Result<(), FormatError> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(()),
            _ => Err(malformed(format!("trailing bytes after {what}"))),
        }
    }
}

pub fn encode_dataset(ds: &Dataset, out: &mut impl Write) -> Result<(), FormatError> {
    if ds.provenance.len() != ds.images.len() {
        return Err(malformed("provenance table must parallel the image table"));
    }
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&1u32.to_le_bytes())?;
    out.write_all(&(ds.images.len() as u32).to_le_bytes())?;
    out.write_all(&(ds.samples.len() as u32).to_le_bytes())?;
    out.write_all(&(IMAGE_SIZE as u32).to_le_bytes())?;
    out.write_all(&(IMAGE_SIZE as u32).to_le_bytes())?;
    for image in &ds.images {
        for px in &image.pixels {
            out.write_all(&px.to_le_bytes())?;
        }
    }
    for s in &ds.samples {
        out.write_all(&s.image_id.to_le_bytes())?;
        for v in s.action {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&s.label.to_le_bytes())?;
        out.write_all(&[s.split as u8])?;
    }
    for p in &ds.provenance {
        out.write_all(&p.scene_seed.to_le_bytes())?;
        for v in p.camera {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn decode_dataset(input: impl Read) -> Result<Dataset, FormatError> {
    let mut r = ByteReader { inner: input };
    let mut magic = [0u8; 9];
    r.inner.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(malformed("not a GRSPDATA1 file"));
    }
    let version = r.u32()?;
    if version != 1 {
        return Err(malformed(format!("unsupported dataset version {version}")));
    }
    let n_images = r.u32()? as usize;
    let n_samples = r.u32()? as usize;
    let (w, h) = (r.u32()? as usize, r.u32()? as usize);
    if w != IMAGE_SIZE || h != IMAGE_SIZE {
        return Err(malformed(format!("unsupported image size {w}x{h}")));
    }
    let mut images = Vec::with_capacity(n_images);
    for _ in 0..n_images {
        images.push(DepthImage { pixels: r.f32_vec(PIXEL_COUNT)? });
    }
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let image_id = r.u32()?;
        if image_id as usize >= n_images {
            return Err(malformed(format!("sample references image {image_id} of {n_images}")));
        }
        let action = [r.f32()?, r.f32()?, r.f32()?];
        let label = r.f32()?;
        let split = r.u8()?;
        let split = Split::from_byte(split)
            .ok_or_else(|| malformed(format!("bad split byte {split}")))?;
        samples.push(Sample { image_id, action, label, split });
    }
    let mut provenance = Vec::with_capacity(n_images);
    for _ in 0..n_images {
        let scene_seed = r.u64()?;
        let camera = [r.f32()?, r.f32()?, r.f32()?, r.f32()?];
        provenance.push(ImageProvenance { scene_seed, camera });
    }
    r.expect_end("the provenance table")?;
    Ok(Dataset { images, samples, provenance })
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<(), FormatError> {
    let mut out = BufWriter::new(File::create(path)?);
    encode_dataset(ds, &mut out)?;
    Ok(out.flush()?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset, FormatError> {
    decode_dataset(BufReader::new(File::open(path)?))
}

// ---------------------------------------------------------------------------
// Weight binary: magic "GRSPNET1", u32 version=1, u64 architecture hash,
// then each parameter tensor's f32 data in declaration order.

pub fn encode_network(net: &Network<f32>, out: &mut impl Write) -> Result<(), FormatError> {
    out.write_all(NETWORK_MAGIC)?;
    out.write_all(&1u32.to_le_bytes())?;
    out.write_all(&architecture_hash().to_le_bytes())?;
    for (_, tensor) in net.params.tensors() {
        for v in &tensor.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn decode_network(input: impl Read) -> Result<Network<f32>, FormatError> {
    let mut r = ByteReader { inner: input };
    let mut magic = [0u8; 8];
    r.inner.read_exact(&mut magic)?;
    if &magic != NETWORK_MAGIC {
        return Err(malformed("not a GRSPNET1 file"));
    }
    let version = r.u32()?;
    if version != 1 {
        return Err(malformed(format!("unsupported weight version {version}")));
    }
    let hash = r.u64()?;
    if hash != architecture_hash() {
        return Err(malformed(format!(
            "architecture hash mismatch: file {hash:#018x}, expected {:#018x}",
            architecture_hash()
        )));
    }
    let mut params: Params<f32> = Params::zeros();
    for (_, tensor) in params.tensors_mut() {
        let n = tensor.data.len();
        tensor.data = r.f32_vec(n)?;
    }
    r.expect_end("the weight blobs")?;
    Ok(Network { config: NetConfig::default(), params })
}

pub fn write_network(path: &Path, net: &Network<f32>) -> Result<(), FormatError> {
    let mut out = BufWriter::new(File::create(path)?);
    encode_network(net, &mut out)?;
    Ok(out.flush()?)
}

pub fn read_network(path: &Path) -> Result<Network<f32>, FormatError> {
    decode_network(BufReader::new(File::open(path)?))
}

// ---------------------------------------------------------------------------
// Debug image dump: P5 PGM, 16 bits per pixel (big-endian per the format),
// values in millimeters. Invalid pixels keep their 0 sentinel.

pub fn depth_to_pgm(image: &DepthImage) -> Vec<u8> {
    let mut out = format!("P5\n{IMAGE_SIZE} {IMAGE_SIZE}\n65535\n").into_bytes();
    for &px in &image.pixels {
        let mm = (px as f64 * 1000.0).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&mm.to_be_bytes());
    }
    out
}

pub fn write_pgm(path: &Path, image: &DepthImage) -> Result<(), FormatError> {
    Ok(std::fs::write(path, depth_to_pgm(image))?)
}

// ---------------------------------------------------------------------------
// Trajectory CSV: one row per controller step.

pub const TRAJECTORY_HEADER: &str =
    "step,z,cmd_x,cmd_y,cmd_theta,exec_x,exec_y,exec_theta,predicted_d,true_d";

pub fn trajectory_to_string(result: &TrialResult) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for s in &result.steps {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            s.step,
            s.camera.z,
            s.commanded.x,
            s.commanded.y,
            s.commanded.theta,
            s.executed.x,
            s.executed.y,
            s.executed.theta,
            s.predicted,
            s.true_distance
        );
    }
    out
}

pub fn write_trajectory(path: &Path, result: &TrialResult) -> Result<(), FormatError> {
    Ok(std::fs::write(path, trajectory_to_string(result))?)
}

// ---------------------------------------------------------------------------
// Per-trial distance CSV, the experiment output that `compare` consumes.

pub const DISTANCES_HEADER: &str = "trial,final_distance";

pub fn distances_to_string(distances: &[f64]) -> String {
    let mut out = String::from(DISTANCES_HEADER);
    out.push('\n');
    for (i, d) in distances.iter().enumerate() {
        let _ = writeln!(out, "{i},{d}");
    }
    out
}

pub fn distances_from_str(text: &str) -> Result<Vec<f64>, FormatError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(DISTANCES_HEADER) => {}
        other => return Err(malformed(format!("bad distance CSV header: {other:?}"))),
    }
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (_, value) =
            line.split_once(',').ok_or_else(|| malformed(format!("bad CSV row: {line:?}")))?;
        out.push(parse_f64(value, "distance")?);
    }
    Ok(out)
}

pub fn write_distances(path: &Path, distances: &[f64]) -> Result<(), FormatError> {
    Ok(std::fs::write(path, distances_to_string(distances))?)
}

pub fn read_distances(path: &Path) -> Result<Vec<f64>, FormatError> {
    distances_from_str(&read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use graspsim_core::controller::StepRecord;
    use graspsim_core::geometry::{build_object_library, CompositeChild, Scene};
    use graspsim_core::render::CameraPose;
    use graspsim_core::model::init_weights;

    fn sample_objects() -> Vec<ObjectInstance> {
        vec![
            ObjectInstance {
                instance_id: 0,
                shape: Primitive::Box { half_extents: Vec3::new(0.01, 0.025, 0.03) },
                x: -0.12,
                y: 0.037,
                z: 0.03,
                yaw: -1.25,
            },
            ObjectInstance {
                instance_id: 7,
                shape: Primitive::Cylinder { radius: 0.015, height: 0.05 },
                x: 0.0,
                y: -0.19,
                z: 0.025,
                yaw: 3.0,
            },
            ObjectInstance {
                instance_id: 2,
                shape: Primitive::Sphere { radius: 0.02 },
                x: 0.05,
                y: 0.05,
                z: 0.02,
                yaw: 0.0,
            },
            ObjectInstance {
                instance_id: 3,
                shape: Primitive::Composite {
                    children: vec![
                        CompositeChild {
                            shape: Primitive::Box {
                                half_extents: Vec3::new(0.02, 0.02, 0.01),
                            },
                            pose: PlanarPose { x: 0.0, y: 0.0, theta: 0.0 },
                            z_offset: 0.0,
                        },
                        CompositeChild {
                            shape: Primitive::Sphere { radius: 0.012 },
                            pose: PlanarPose { x: 0.005, y: -0.003, theta: 0.4 },
                            z_offset: 0.03,
                        },
                    ],
                },
                x: 0.1,
                y: 0.1,
                z: 0.01,
                yaw: 0.5,
            },
        ]
    }

    #[test]
    fn library_text_round_trips_every_shape_kind() {
        let lib = sample_objects();
        let text = library_to_string(&lib);
        assert_eq!(library_from_str(&text).unwrap(), lib);
    }

    #[test]
    fn generated_libraries_round_trip_bit_exactly() {
        // Seeds chosen so composites appear among the templates.
        for seed in 0..4 {
            let lib = build_object_library(seed, 24).unwrap();
            let text = library_to_string(&lib);
            assert_eq!(library_from_str(&text).unwrap(), lib, "seed {seed}");
        }
    }

    #[test]
    fn scene_text_round_trips() {
        let scene = Scene { seed: 42, objects: sample_objects() };
        let text = scene_to_string(&scene);
        assert_eq!(scene_from_str(&text).unwrap(), scene);
    }

    #[test]
    fn library_rejects_wrong_header_count_and_shape() {
        assert!(library_from_str("").is_err());
        assert!(library_from_str("NOTALIB 1 0\n").is_err());
        assert!(library_from_str("GRASPLIB 2 0\n").is_err());
        // Count says one object, none follow.
        assert!(library_from_str("GRASPLIB 1 1\n").is_err());
        // Count says none, one follows.
        assert!(library_from_str("GRASPLIB 1 0\n0 sphere 0.02 0 0 0.02 0\n").is_err());
        // Unknown shape kind.
        assert!(library_from_str("GRASPLIB 1 1\n0 cone 0.02 0 0 0.02 0\n").is_err());
        // Trailing tokens.
        assert!(library_from_str("GRASPLIB 1 1\n0 sphere 0.02 0 0 0.02 0 9\n").is_err());
        // Non-numeric dimension.
        assert!(library_from_str("GRASPLIB 1 1\n0 sphere wide 0 0 0.02 0\n").is_err());
    }

    #[test]
    fn composite_children_must_be_simple_shapes() {
        let line = "GRASPLIB 1 1\n0 composite 1 composite 1 sphere 0.01 0 0 0 0 0 0 0 0 0 0 0 0\n";
        let err = library_from_str(line).unwrap_err();
        assert!(err.to_string().contains("simple"), "{err}");
    }

    #[test]
    fn graspset_text_round_trips() {
        let gs = GraspSet {
            grasps: vec![
                Grasp {
                    pose: PlanarPose { x: 0.015, y: -0.08, theta: 1.23456789 },
                    grasp_height: 0.021,
                },
                Grasp {
                    pose: PlanarPose { x: -1e-17, y: 0.0, theta: -3.14 },
                    grasp_height: 0.0305,
                },
            ],
            grid_resolution: (0.005, 0.08726646259971647),
        };
        let text = graspset_to_string(&gs);
        assert_eq!(graspset_from_str(&text).unwrap(), gs);
        assert!(text.starts_with("GRASPSET 1 2 0.005 "));
    }

    #[test]
    fn graspset_rejects_malformed_input() {
        assert!(graspset_from_str("GRASPSET 1 1 0.005\n").is_err()); // missing dtheta
        assert!(graspset_from_str("GRASPSET 1 1 0.005 0.08\n").is_err()); // short list
        assert!(graspset_from_str("GRASPSET 1 0 0.005 0.08\n0 0 0 0.02\n").is_err());
        assert!(graspset_from_str("GRASPSET 1 1 0.005 0.08\n0 0 0\n").is_err());
    }

    fn tiny_dataset() -> Dataset {
        let mut img_a = DepthImage { pixels: vec![0.25; PIXEL_COUNT] };
        img_a.pixels[0] = 0.0;
        img_a.pixels[5] = 0.312_5;
        let img_b = DepthImage { pixels: vec![0.3; PIXEL_COUNT] };
        Dataset {
            images: vec![img_a, img_b],
            samples: vec![
                Sample {
                    image_id: 0,
                    action: [0.01, -0.02, 0.3],
                    label: 0.05,
                    split: Split::Train,
                },
                Sample { image_id: 1, action: [0.0, 0.0, 0.0], label: 0.19, split: Split::Test },
            ],
            provenance: vec![
                ImageProvenance { scene_seed: 11, camera: [0.01, 0.02, 0.3, 0.1] },
                ImageProvenance { scene_seed: 12, camera: [-0.03, 0.0, 0.28, -0.6] },
            ],
        }
    }

    #[test]
    fn dataset_binary_round_trips_bit_exactly() {
        let ds = tiny_dataset();
        let mut bytes = Vec::new();
        encode_dataset(&ds, &mut bytes).unwrap();
        assert_eq!(&bytes[..9], DATASET_MAGIC);
        assert_eq!(decode_dataset(bytes.as_slice()).unwrap(), ds);
    }

    #[test]
    fn dataset_rejects_corruption() {
        let ds = tiny_dataset();
        let mut bytes = Vec::new();
        encode_dataset(&ds, &mut bytes).unwrap();

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(decode_dataset(wrong_magic.as_slice()).is_err());

        let truncated = &bytes[..bytes.len() - 1];
        assert!(decode_dataset(truncated).is_err());

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(decode_dataset(trailing.as_slice()).is_err());

        // Split byte lives at the end of a sample record: u32 + 4 f32 + u8.
        let sample_bytes = 4 + 16 + 1;
        let prov_bytes = ds.provenance.len() * (8 + 16);
        let split_at = bytes.len() - prov_bytes - 1;
        let mut bad_split = bytes.clone();
        assert!(bad_split[split_at] <= 1, "offset arithmetic drifted");
        bad_split[split_at] = 9;
        assert!(decode_dataset(bad_split.as_slice()).is_err());

        // image_id beyond the image table.
        let first_sample_at = bytes.len() - prov_bytes - 2 * sample_bytes;
        let mut bad_id = bytes;
        bad_id[first_sample_at] = 0xff;
        assert!(decode_dataset(bad_id.as_slice()).is_err());
    }

    #[test]
    fn network_binary_round_trips_bit_exactly() {
        let net = init_weights::<f32>(9, NetConfig::default());
        let mut bytes = Vec::new();
        encode_network(&net, &mut bytes).unwrap();
        assert_eq!(&bytes[..8], NETWORK_MAGIC);
        let back = decode_network(bytes.as_slice()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn network_rejects_wrong_magic_version_and_hash() {
        let net = init_weights::<f32>(9, NetConfig::default());
        let mut bytes = Vec::new();
        encode_network(&net, &mut bytes).unwrap();

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(decode_network(wrong_magic.as_slice()).is_err());

        let mut wrong_version = bytes.clone();
        wrong_version[8] = 2;
        assert!(decode_network(wrong_version.as_slice()).is_err());

        // The architecture hash sits after magic + version.
        let mut wrong_hash = bytes.clone();
        wrong_hash[13] ^= 0xff;
        assert!(decode_network(wrong_hash.as_slice()).is_err());

        assert!(decode_network(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn pgm_encodes_big_endian_millimeters_with_clamping() {
        let mut image = DepthImage { pixels: vec![0.0; PIXEL_COUNT] };
        image.pixels[0] = 0.2996; // 299.6 mm -> rounds to 300
        image.pixels[1] = 100.0; // 100 m -> clamps to 65535
        image.pixels[2] = -0.5; // negative -> clamps to 0
        let bytes = depth_to_pgm(&image);
        let header = b"P5\n64 64\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 2 * PIXEL_COUNT);
        let px = &bytes[header.len()..];
        assert_eq!([px[0], px[1]], 300u16.to_be_bytes());
        assert_eq!([px[2], px[3]], 65535u16.to_be_bytes());
        assert_eq!([px[4], px[5]], [0, 0]);
    }

    #[test]
    fn trajectory_csv_matches_the_documented_layout() {
        let step = StepRecord {
            step: 0,
            camera: CameraPose { x: 0.01, y: -0.02, z: 0.3, theta: 0.1 },
            commanded: PlanarPose { x: 0.004, y: 0.005, theta: -0.25 },
            executed: PlanarPose { x: 0.0041, y: 0.0052, theta: -0.26 },
            predicted: 0.071,
            true_distance: 0.0725,
        };
        let result = TrialResult {
            steps: vec![step],
            initial_camera: CameraPose { x: 0.01, y: -0.02, z: 0.3, theta: 0.1 },
            final_camera: CameraPose { x: 0.014, y: -0.015, z: 0.298, theta: -0.15 },
            initial_distance: 0.0831,
            final_distance: 0.0725,
        };
        let text = trajectory_to_string(&result);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(TRAJECTORY_HEADER));
        assert_eq!(
            lines.next(),
            Some("0,0.3,0.004,0.005,-0.25,0.0041,0.0052,-0.26,0.071,0.0725")
        );
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn distances_csv_round_trips_and_rejects_bad_headers() {
        let ds = vec![0.01, 0.25, 3e-4, 0.0];
        let text = distances_to_string(&ds);
        assert!(text.starts_with("trial,final_distance\n0,0.01\n"));
        assert_eq!(distances_from_str(&text).unwrap(), ds);

        assert!(distances_from_str("final_distance\n0,0.01\n").is_err());
        assert!(distances_from_str("trial,final_distance\n0;0.01\n").is_err());
        assert!(distances_from_str("trial,final_distance\n0,abc\n").is_err());
    }

    #[test]
    fn file_io_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let lib = sample_objects();
        let lib_path = dir.path().join("lib.txt");
        write_library(&lib_path, &lib).unwrap();
        assert_eq!(read_library(&lib_path).unwrap(), lib);

        let ds = tiny_dataset();
        let ds_path = dir.path().join("d.grspdata");
        write_dataset(&ds_path, &ds).unwrap();
        assert_eq!(read_dataset(&ds_path).unwrap(), ds);

        let missing = dir.path().join("nope.grspdata");
        assert!(matches!(read_dataset(&missing), Err(FormatError::Io(_))));
    }
}
