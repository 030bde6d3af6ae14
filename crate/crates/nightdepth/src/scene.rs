//! Deterministic synthetic scenes: planar geometry with closed-form depth,
//! band-limited procedural textures, controlled low-light degradations, and
//! dataset generation with exact ground truth.
//!
//! Every geometric quantity here is exact (plane intersections in closed
//! form), which is the point: the renderer has to be more trustworthy than
//! the code it tests. Textures are smooth multi-octave value noise so that
//! bilinear resampling error stays second-order small.

use crate::array::Array;
use crate::error::{Error, Result};
use crate::geometry::{matrix_to_pose, pose_to_matrix, Intrinsics, Mat4, Pose6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// Infinite textured plane `dot(normal, X) = offset` in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
    pub texture_seed: u64,
    pub texture_scale: f64,
}

/// A renderable scene: planes, camera intrinsics, resolution and a far
/// background plane that closes every ray.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub planes: Vec<Plane>,
    pub intr: Intrinsics,
    pub width: usize,
    pub height: usize,
    pub background_depth: f64,
    pub background_seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.intr.check_resolution(self.width, self.height)?;
        if self.background_depth <= 0.5 {
            return Err(Error::InvalidInput("background too close".into()));
        }
        for p in &self.planes {
            let n2: f64 = p.normal.iter().map(|v| v * v).sum();
            if (n2 - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "plane normal {:?} is not unit length",
                    p.normal
                )));
            }
            if p.texture_scale <= 0.0 {
                return Err(Error::InvalidInput("texture scale must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Low-light degradation: gamma darkening, per-frame gain jitter, additive
/// noise, optional saturated disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradeParams {
    pub gamma: f64,
    pub gain_lo: f64,
    pub gain_hi: f64,
    pub noise_sigma: f64,
    pub spot: Option<Spot>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spot {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub intensity: f64,
}

impl Default for DegradeParams {
    fn default() -> Self {
        DegradeParams {
            gamma: 4.0,
            gain_lo: 0.68,
            gain_hi: 0.8,
            noise_sigma: 0.002,
            spot: None,
        }
    }
}

// ---- procedural texture ----

/// Integer coordinate hash to a unit-interval value; plain avalanche mixing,
/// no RNG state.
fn lattice_value(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut h = seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add((ix as u64).wrapping_mul(0xd1b54a32d192ed03))
        .wrapping_add((iy as u64).wrapping_mul(0x94d049bb133111eb));
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58476d1ce4e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d049bb133111eb);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn noise_octave(u: f64, v: f64, seed: u64) -> f64 {
    let iu = u.floor();
    let iv = v.floor();
    let fu = smoothstep(u - iu);
    let fv = smoothstep(v - iv);
    let (x0, y0) = (iu as i64, iv as i64);
    let a = lattice_value(x0, y0, seed);
    let b = lattice_value(x0 + 1, y0, seed);
    let c = lattice_value(x0, y0 + 1, seed);
    let d = lattice_value(x0 + 1, y0 + 1, seed);
    (1.0 - fv) * ((1.0 - fu) * a + fu * b) + fv * ((1.0 - fu) * c + fu * d)
}

/// Two-octave value noise in [0, 1]; band-limited by construction.
pub fn value_noise(u: f64, v: f64, seed: u64) -> f64 {
    0.75 * noise_octave(u, v, seed)
        + 0.25 * noise_octave(u * 2.0 + 17.3, v * 2.0 - 9.1, seed ^ 0xabcdef)
}

/// Orthonormal tangent basis for a plane normal.
fn tangents(n: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let pick = if n[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let mut t1 = [
        n[1] * pick[2] - n[2] * pick[1],
        n[2] * pick[0] - n[0] * pick[2],
        n[0] * pick[1] - n[1] * pick[0],
    ];
    let len = (t1.iter().map(|v| v * v).sum::<f64>()).sqrt();
    for v in &mut t1 {
        *v /= len;
    }
    let t2 = [
        n[1] * t1[2] - n[2] * t1[1],
        n[2] * t1[0] - n[0] * t1[2],
        n[0] * t1[1] - n[1] * t1[0],
    ];
    (t1, t2)
}

fn plane_color(hit: [f64; 3], normal: [f64; 3], seed: u64, scale: f64) -> [f64; 3] {
    let (t1, t2) = tangents(normal);
    let u = (hit[0] * t1[0] + hit[1] * t1[1] + hit[2] * t1[2]) / scale;
    let v = (hit[0] * t2[0] + hit[1] * t2[1] + hit[2] * t2[2]) / scale;
    let mut out = [0.0; 3];
    for (ch, slot) in out.iter_mut().enumerate() {
        let raw = value_noise(u, v, seed.wrapping_add(ch as u64 * 0x1234567));
        *slot = 0.15 + 0.7 * raw;
    }
    out
}

// ---- rendering ----

/// Render the scene from a camera-to-world pose. Returns the image
/// `[3, H, W]` and exact depth `[1, H, W]`. Deterministic per (scene, pose).
pub fn render(scene: &SceneSpec, pose: &Pose6) -> Result<(Array<f32>, Array<f32>)> {
    scene.validate()?;
    let cam = pose_to_matrix(pose)?;
    render_with_matrix(scene, &cam)
}

fn render_with_matrix(scene: &SceneSpec, cam: &Mat4) -> Result<(Array<f32>, Array<f32>)> {
    let (h, w) = (scene.height, scene.width);
    let n = h * w;
    let mut image = Array::zeros(&[3, h, w]);
    let mut depth = Array::zeros(&[1, h, w]);
    let origin = cam.transform_point([0.0, 0.0, 0.0]);
    // world-fixed far plane: identical geometry from every camera in a clip
    let background = Plane {
        normal: [0.0, 0.0, 1.0],
        offset: scene.background_depth,
        texture_seed: scene.background_seed,
        texture_scale: 4.0,
    };
    for y in 0..h {
        for x in 0..w {
            let dir_cam = [
                (x as f64 - scene.intr.cx) / scene.intr.fx,
                (y as f64 - scene.intr.cy) / scene.intr.fy,
                1.0,
            ];
            let dir = cam.rotate_vector(dir_cam);
            let mut best_t = f64::INFINITY;
            let mut best_plane: Option<&Plane> = None;
            for p in scene.planes.iter().chain(std::iter::once(&background)) {
                let denom = p.normal[0] * dir[0] + p.normal[1] * dir[1] + p.normal[2] * dir[2];
                if denom.abs() < 1e-12 {
                    continue;
                }
                let num = p.offset
                    - (p.normal[0] * origin[0] + p.normal[1] * origin[1] + p.normal[2] * origin[2]);
                let t = num / denom;
                if t > 0.05 && t < best_t {
                    best_t = t;
                    best_plane = Some(p);
                }
            }
            let Some(plane) = best_plane else {
                return Err(Error::InvalidInput(format!(
                    "ray at ({x}, {y}) escapes the scene"
                )));
            };
            // camera-frame z equals t because dir_cam.z = 1
            depth.data_mut()[y * w + x] = best_t as f32;
            let hit = [
                origin[0] + best_t * dir[0],
                origin[1] + best_t * dir[1],
                origin[2] + best_t * dir[2],
            ];
            let rgb = plane_color(hit, plane.normal, plane.texture_seed, plane.texture_scale);
            for ch in 0..3 {
                image.data_mut()[ch * n + y * w + x] = rgb[ch] as f32;
            }
        }
    }
    Ok((image, depth))
}

/// Three consecutive frames around a center pose, with exact relative
/// transforms from the target to each source.
pub struct Triplet {
    /// `[previous, target, next]`
    pub frames: [Array<f32>; 3],
    pub depths: [Array<f32>; 3],
    /// camera-to-world pose per frame
    pub poses: [Pose6; 3],
    /// target-to-source transforms: `[T_{t->t-1}, T_{t->t+1}]`
    pub to_source: [Mat4; 2],
    pub intr: Intrinsics,
}

impl Triplet {
    pub fn target(&self) -> &Array<f32> {
        &self.frames[1]
    }

    pub fn sources(&self) -> [&Array<f32>; 2] {
        [&self.frames[0], &self.frames[2]]
    }

    pub fn target_depth(&self) -> &Array<f32> {
        &self.depths[1]
    }
}

/// Render `(I_{t-1}, I_t, I_{t+1})` with per-step camera `motion` applied in
/// the camera frame.
pub fn render_triplet(scene: &SceneSpec, center: &Pose6, motion: &Pose6) -> Result<Triplet> {
    let c_t = pose_to_matrix(center)?;
    let m = pose_to_matrix(motion)?;
    let m_inv = m.inverse_rigid();
    let c_prev = c_t.mul(&m_inv);
    let c_next = c_t.mul(&m);
    let poses = [
        matrix_to_pose(&c_prev)?,
        *center,
        matrix_to_pose(&c_next)?,
    ];
    let (f0, d0) = render_with_matrix(scene, &c_prev)?;
    let (f1, d1) = render_with_matrix(scene, &c_t)?;
    let (f2, d2) = render_with_matrix(scene, &c_next)?;
    Ok(Triplet {
        frames: [f0, f1, f2],
        depths: [d0, d1, d2],
        poses,
        // C_prev = C_t m^-1 so C_prev^-1 C_t = m; likewise next gets m^-1
        to_source: [m, m_inv],
        intr: scene.intr,
    })
}

/// Apply low-light degradation; the gain is drawn once per frame so adjacent
/// frames end up with inconsistent brightness. Depth ground truth is
/// untouched by construction.
pub fn degrade(frame: &Array<f32>, params: &DegradeParams, frame_seed: u64) -> Array<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed);
    let gain = if params.gain_hi > params.gain_lo {
        rng.random_range(params.gain_lo..params.gain_hi)
    } else {
        params.gain_lo
    };
    let [_, h, w] = *frame.shape() else { unreachable!() };
    let n = h * w;
    let mut out = frame.clone();
    for v in out.data_mut() {
        let base = gain * (*v as f64).max(0.0).powf(params.gamma);
        let noise = if params.noise_sigma > 0.0 {
            // Box-Muller from two uniforms
            let u1: f64 = rng.random_range(1e-12..1.0);
            let u2: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            params.noise_sigma * (-2.0 * u1.ln()).sqrt() * u2.cos()
        } else {
            0.0
        };
        *v = (base + noise).clamp(0.0, 1.0) as f32;
    }
    if let Some(spot) = params.spot {
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - spot.cx;
                let dy = y as f64 - spot.cy;
                if dx * dx + dy * dy <= spot.radius * spot.radius {
                    for ch in 0..3 {
                        out.data_mut()[ch * n + y * w + x] = spot.intensity as f32;
                    }
                }
            }
        }
    }
    out
}

// ---- randomized scene layouts ----

/// Intrinsics used for generated datasets at a given resolution.
pub fn default_intrinsics(width: usize, height: usize) -> Intrinsics {
    Intrinsics::new(
        0.9 * width as f64,
        0.9 * width as f64,
        (width as f64 - 1.0) / 2.0,
        (height as f64 - 1.0) / 2.0,
    )
    .expect("static intrinsics are valid")
}

/// A randomized driving-flavored layout: ground plane, far wall, one or two
/// side walls, all textured.
pub fn random_scene(rng: &mut ChaCha8Rng, width: usize, height: usize) -> SceneSpec {
    let intr = default_intrinsics(width, height);
    let cam_height = rng.random_range(1.2..1.8);
    let background_depth = rng.random_range(12.0..18.0);
    // texture cells stay several pixels wide even at the far planes, keeping
    // bilinear resampling error second-order small
    let mut planes = vec![Plane {
        normal: [0.0, -1.0, 0.0],
        offset: -cam_height,
        texture_seed: rng.random(),
        texture_scale: rng.random_range(2.0..3.5),
    }];
    // left and/or right receding walls
    for side in [-1.0f64, 1.0] {
        if rng.random_range(0.0..1.0) < 0.75 {
            let lean = rng.random_range(-0.25..0.25);
            let mut n = [side, 0.0, lean];
            let len = (n[0] * n[0] + n[2] * n[2]).sqrt();
            n[0] /= len;
            n[2] /= len;
            let distance = rng.random_range(3.0..6.0);
            planes.push(Plane {
                normal: n,
                offset: -distance,
                texture_seed: rng.random(),
                texture_scale: rng.random_range(1.5..2.5),
            });
        }
    }
    SceneSpec {
        planes,
        intr,
        width,
        height,
        background_depth,
        background_seed: rng.random(),
    }
}

/// Forward-dominated camera motion with small rotational jitter. Strides are
/// sized so inter-frame flow spans a few pixels at the default resolution;
/// subpixel motion carries too little signal for pose learning.
pub fn random_motion(rng: &mut ChaCha8Rng) -> Pose6 {
    Pose6::new(
        [
            rng.random_range(-0.02..0.02),
            rng.random_range(-0.02..0.02),
            rng.random_range(-0.01..0.01),
        ],
        [
            rng.random_range(-0.08..0.08),
            rng.random_range(-0.04..0.04),
            rng.random_range(0.25..0.5),
        ],
    )
}

// ---- dataset generation ----

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub out_dir: PathBuf,
    pub night_train: usize,
    pub night_val: usize,
    pub day: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub degrade: DegradeParams,
    /// probability a night triplet carries a saturated spot
    pub spot_prob: f64,
}

impl DatasetConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        DatasetConfig {
            out_dir: out_dir.into(),
            night_train: 50,
            night_val: 10,
            day: 20,
            width: 64,
            height: 64,
            seed: 0,
            degrade: DegradeParams::default(),
            spot_prob: 0.7,
        }
    }
}

pub const SPLITS: [&str; 3] = ["night_train", "night_val", "day"];

fn split_seed(seed: u64, split: &str, index: usize) -> u64 {
    let tag: u64 = match split {
        "night_train" => 1,
        "night_val" => 2,
        _ => 3,
    };
    seed.wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(tag << 32)
        .wrapping_add(index as u64)
}

/// One generated sequence: everything needed to re-render it exactly.
pub struct GeneratedTriplet {
    pub scene: SceneSpec,
    pub center: Pose6,
    pub motion: Pose6,
    pub degrade: Option<DegradeParams>,
    pub frame_seeds: [u64; 3],
}

/// Build the deterministic description of one sequence.
pub fn plan_triplet(cfg: &DatasetConfig, split: &str, index: usize) -> GeneratedTriplet {
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, split, index));
    let scene = random_scene(&mut rng, cfg.width, cfg.height);
    let motion = random_motion(&mut rng);
    let night = split.starts_with("night");
    let degrade = if night {
        let mut d = cfg.degrade;
        if rng.random_range(0.0..1.0) < cfg.spot_prob {
            let margin = cfg.width.min(cfg.height) as f64;
            d.spot = Some(Spot {
                cx: rng.random_range(0.15 * margin..0.85 * margin),
                cy: rng.random_range(0.1 * margin..0.6 * margin),
                radius: rng.random_range(0.06 * margin..0.14 * margin),
                intensity: rng.random_range(0.93..1.0),
            });
        } else {
            d.spot = None;
        }
        Some(d)
    } else {
        None
    };
    let frame_seeds = [rng.random(), rng.random(), rng.random()];
    GeneratedTriplet {
        scene,
        center: Pose6::IDENTITY,
        motion,
        degrade,
        frame_seeds,
    }
}

/// Render one planned sequence to its final (possibly degraded) frames.
pub fn realize_triplet(plan: &GeneratedTriplet) -> Result<Triplet> {
    let mut triplet = render_triplet(&plan.scene, &plan.center, &plan.motion)?;
    if let Some(d) = &plan.degrade {
        for (i, frame) in triplet.frames.iter_mut().enumerate() {
            *frame = degrade(frame, d, plan.frame_seeds[i]);
        }
    }
    Ok(triplet)
}

/// Generate and persist the whole dataset: PNG frames, PFM depths, pose
/// manifests and scene descriptions, split into night train/val and clean
/// day sequences.
pub fn make_dataset(cfg: &DatasetConfig) -> Result<()> {
    use rayon::prelude::*;
    let jobs: Vec<(String, usize)> = SPLITS
        .iter()
        .flat_map(|split| {
            let count = match *split {
                "night_train" => cfg.night_train,
                "night_val" => cfg.night_val,
                _ => cfg.day,
            };
            (0..count).map(move |i| (split.to_string(), i))
        })
        .collect();
    jobs.par_iter().try_for_each(|(split, index)| {
        let plan = plan_triplet(cfg, split, *index);
        let triplet = realize_triplet(&plan)?;
        let dir = cfg.out_dir.join(split).join(format!("seq_{index:05}"));
        std::fs::create_dir_all(&dir)?;
        write_sequence(&dir, &plan, &triplet)
    })
}

fn write_sequence(dir: &Path, plan: &GeneratedTriplet, triplet: &Triplet) -> Result<()> {
    let mut manifest = String::new();
    for i in 0..3 {
        let png = format!("frame_{i}.png");
        let pfm = format!("depth_{i}.pfm");
        crate::io::write_png(&dir.join(&png), &triplet.frames[i])?;
        crate::io::write_pfm(&dir.join(&pfm), &triplet.depths[i])?;
        let intr = triplet.intr;
        let p = triplet.poses[i].to_vec6();
        manifest.push_str(&format!(
            "{i} {} {} {} {} {} {} {} {} {} {} {png} {pfm}\n",
            intr.fx, intr.fy, intr.cx, intr.cy, p[0], p[1], p[2], p[3], p[4], p[5]
        ));
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    std::fs::write(dir.join("scene.txt"), describe(plan))?;
    Ok(())
}

fn describe(plan: &GeneratedTriplet) -> String {
    let s = &plan.scene;
    let mut out = String::new();
    out.push_str(&format!("width {}\nheight {}\n", s.width, s.height));
    out.push_str(&format!(
        "intrinsics {} {} {} {}\n",
        s.intr.fx, s.intr.fy, s.intr.cx, s.intr.cy
    ));
    out.push_str(&format!(
        "background {} {}\n",
        s.background_depth, s.background_seed
    ));
    for p in &s.planes {
        out.push_str(&format!(
            "plane {} {} {} {} {} {}\n",
            p.normal[0], p.normal[1], p.normal[2], p.offset, p.texture_seed, p.texture_scale
        ));
    }
    let c = plan.center.to_vec6();
    let m = plan.motion.to_vec6();
    out.push_str(&format!(
        "center {} {} {} {} {} {}\n",
        c[0], c[1], c[2], c[3], c[4], c[5]
    ));
    out.push_str(&format!(
        "motion {} {} {} {} {} {}\n",
        m[0], m[1], m[2], m[3], m[4], m[5]
    ));
    if let Some(d) = &plan.degrade {
        out.push_str(&format!(
            "degrade {} {} {} {}\n",
            d.gamma, d.gain_lo, d.gain_hi, d.noise_sigma
        ));
        if let Some(spot) = d.spot {
            out.push_str(&format!(
                "spot {} {} {} {}\n",
                spot.cx, spot.cy, spot.radius, spot.intensity
            ));
        }
    }
    out.push_str(&format!(
        "frame_seeds {} {} {}\n",
        plan.frame_seeds[0], plan.frame_seeds[1], plan.frame_seeds[2]
    ));
    out
}

/// Parse a `scene.txt` back into a renderable plan.
pub fn parse_scene_description(text: &str, path_for_errors: &Path) -> Result<GeneratedTriplet> {
    let malformed = |reason: String| Error::MalformedFile {
        path: path_for_errors.display().to_string(),
        reason,
    };
    let mut width = None;
    let mut height = None;
    let mut intr = None;
    let mut background = None;
    let mut planes = Vec::new();
    let mut center = None;
    let mut motion = None;
    let mut degrade: Option<DegradeParams> = None;
    let mut spot = None;
    let mut frame_seeds = None;
    for line in text.lines() {
        let mut it = line.split_whitespace();
        let Some(key) = it.next() else { continue };
        let rest: Vec<&str> = it.collect();
        let check_len = |n: usize| -> Result<()> {
            if rest.len() != n {
                return Err(malformed(format!("'{key}' expects {n} fields")));
            }
            Ok(())
        };
        let num = |i: usize| -> Result<f64> {
            rest[i]
                .parse()
                .map_err(|_| malformed(format!("bad number in '{key}'")))
        };
        // seeds are u64 and must not round-trip through f64
        let int = |i: usize| -> Result<u64> {
            rest[i]
                .parse()
                .map_err(|_| malformed(format!("bad integer in '{key}'")))
        };
        let vec6 = || -> Result<Pose6> {
            check_len(6)?;
            let mut v = [0.0; 6];
            for (i, slot) in v.iter_mut().enumerate() {
                *slot = num(i)?;
            }
            Ok(Pose6::from_vec6(&v))
        };
        match key {
            "width" => {
                check_len(1)?;
                width = Some(int(0)? as usize);
            }
            "height" => {
                check_len(1)?;
                height = Some(int(0)? as usize);
            }
            "intrinsics" => {
                check_len(4)?;
                intr = Some(Intrinsics::new(num(0)?, num(1)?, num(2)?, num(3)?)?);
            }
            "background" => {
                check_len(2)?;
                background = Some((num(0)?, int(1)?));
            }
            "plane" => {
                check_len(6)?;
                planes.push(Plane {
                    normal: [num(0)?, num(1)?, num(2)?],
                    offset: num(3)?,
                    texture_seed: int(4)?,
                    texture_scale: num(5)?,
                });
            }
            "center" => center = Some(vec6()?),
            "motion" => motion = Some(vec6()?),
            "degrade" => {
                check_len(4)?;
                degrade = Some(DegradeParams {
                    gamma: num(0)?,
                    gain_lo: num(1)?,
                    gain_hi: num(2)?,
                    noise_sigma: num(3)?,
                    spot: None,
                });
            }
            "spot" => {
                check_len(4)?;
                spot = Some(Spot {
                    cx: num(0)?,
                    cy: num(1)?,
                    radius: num(2)?,
                    intensity: num(3)?,
                });
            }
            "frame_seeds" => {
                check_len(3)?;
                frame_seeds = Some([int(0)?, int(1)?, int(2)?]);
            }
            _ => return Err(malformed(format!("unknown key '{key}'"))),
        }
    }
    let (background_depth, background_seed) =
        background.ok_or_else(|| malformed("missing background".into()))?;
    let scene = SceneSpec {
        planes,
        intr: intr.ok_or_else(|| malformed("missing intrinsics".into()))?,
        width: width.ok_or_else(|| malformed("missing width".into()))?,
        height: height.ok_or_else(|| malformed("missing height".into()))?,
        background_depth,
        background_seed,
    };
    if let (Some(d), Some(s)) = (&mut degrade, spot) {
        d.spot = Some(s);
    }
    Ok(GeneratedTriplet {
        scene,
        center: center.ok_or_else(|| malformed("missing center".into()))?,
        motion: motion.ok_or_else(|| malformed("missing motion".into()))?,
        degrade,
        frame_seeds: frame_seeds.ok_or_else(|| malformed("missing frame_seeds".into()))?,
    })
}

// ---- dataset loading ----

/// One stored sequence, loaded.
pub struct StoredTriplet {
    pub frames: [Array<f32>; 3],
    pub target_depth: Array<f32>,
    pub intr: Intrinsics,
    pub poses: [Pose6; 3],
}

/// Sorted sequence directories of one split.
pub fn split_sequences(root: &Path, split: &str) -> Result<Vec<PathBuf>> {
    let dir = root.join(split);
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            out.push(entry.path());
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::EmptyValidSet(format!("no sequences under {}", dir.display())));
    }
    Ok(out)
}

/// Load frames, target depth and poses of one sequence directory.
pub fn load_triplet(dir: &Path) -> Result<StoredTriplet> {
    let manifest_path = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&manifest_path)?;
    let malformed = |reason: String| Error::MalformedFile {
        path: manifest_path.display().to_string(),
        reason,
    };
    let mut frames: Vec<Array<f32>> = Vec::new();
    let mut poses: Vec<Pose6> = Vec::new();
    let mut intr = None;
    let mut depth_paths: Vec<PathBuf> = Vec::new();
    for line in text.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() != 13 {
            return Err(malformed(format!("expected 13 fields, got {}", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse().map_err(|_| malformed(format!("bad number '{}'", f[i])))
        };
        intr = Some(Intrinsics::new(num(1)?, num(2)?, num(3)?, num(4)?)?);
        let pose = Pose6::from_vec6(&[num(5)?, num(6)?, num(7)?, num(8)?, num(9)?, num(10)?]);
        poses.push(pose);
        frames.push(crate::io::read_png(&dir.join(f[11]))?);
        depth_paths.push(dir.join(f[12]));
    }
    if frames.len() != 3 {
        return Err(malformed(format!("expected 3 frames, got {}", frames.len())));
    }
    let target_depth = crate::io::read_pfm(&depth_paths[1])?;
    let mut it = frames.into_iter();
    Ok(StoredTriplet {
        frames: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
        target_depth,
        intr: intr.unwrap(),
        poses: [poses[0], poses[1], poses[2]],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_scene(planes: Vec<Plane>, bg: f64) -> SceneSpec {
        SceneSpec {
            planes,
            intr: default_intrinsics(32, 32),
            width: 32,
            height: 32,
            background_depth: bg,
            background_seed: 5,
        }
    }

    #[test]
    fn frontoparallel_plane_gives_constant_depth() {
        let scene = simple_scene(
            vec![Plane {
                normal: [0.0, 0.0, 1.0],
                offset: 5.0,
                texture_seed: 1,
                texture_scale: 1.0,
            }],
            30.0,
        );
        let (_, depth) = render(&scene, &Pose6::IDENTITY).unwrap();
        for &d in depth.iter() {
            assert!((d - 5.0).abs() < 1e-6);
        }
    }

    #[test]
    fn ground_plane_matches_flat_ground_closed_form() {
        let h_cam = 1.5;
        let scene = simple_scene(
            vec![Plane {
                normal: [0.0, -1.0, 0.0],
                offset: -h_cam,
                texture_seed: 2,
                texture_scale: 1.0,
            }],
            25.0,
        );
        let (_, depth) = render(&scene, &Pose6::IDENTITY).unwrap();
        let intr = scene.intr;
        for y in 0..32 {
            for x in 0..32 {
                let expect = h_cam * intr.fy / (y as f64 - intr.cy);
                if y as f64 > intr.cy && expect < 25.0 {
                    let got = depth.data()[y * 32 + x] as f64;
                    assert!(
                        (got - expect).abs() < 1e-5,
                        "row {y}: {got} vs {expect}"
                    );
                }
            }
        }
    }

    #[test]
    fn rendering_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scene = random_scene(&mut rng, 32, 32);
        let pose = Pose6::new([0.01, -0.02, 0.0], [0.1, 0.0, 0.3]);
        let (f1, d1) = render(&scene, &pose).unwrap();
        let (f2, d2) = render(&scene, &pose).unwrap();
        assert_eq!(f1.data(), f2.data());
        assert_eq!(d1.data(), d2.data());
    }

    #[test]
    fn zero_motion_triplet_is_three_identical_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scene = random_scene(&mut rng, 32, 32);
        let t = render_triplet(&scene, &Pose6::IDENTITY, &Pose6::IDENTITY).unwrap();
        assert_eq!(t.frames[0].data(), t.frames[1].data());
        assert_eq!(t.frames[1].data(), t.frames[2].data());
    }

    #[test]
    fn z_translation_shifts_depth_on_optical_axis() {
        let scene = simple_scene(
            vec![Plane {
                normal: [0.0, 0.0, 1.0],
                offset: 5.0,
                texture_seed: 6,
                texture_scale: 1.0,
            }],
            30.0,
        );
        let motion = Pose6::new([0.0; 3], [0.0, 0.0, 0.1]);
        let t = render_triplet(&scene, &Pose6::IDENTITY, &motion).unwrap();
        let center = |d: &Array<f32>| d.data()[16 * 32 + 16];
        assert!((center(&t.depths[1]) - 5.0).abs() < 1e-6);
        assert!((center(&t.depths[0]) - 5.1).abs() < 1e-6);
        assert!((center(&t.depths[2]) - 4.9).abs() < 1e-6);
    }

    #[test]
    fn true_depth_and_pose_reconstruct_the_target() {
        // cross-module oracle: view synthesis against rendered ground truth
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scene = random_scene(&mut rng, 64, 64);
            let motion = random_motion(&mut rng);
            let t = render_triplet(&scene, &Pose6::IDENTITY, &motion).unwrap();
            for (s, source) in t.sources().iter().enumerate() {
                let (recon, valid) = crate::geometry::synthesize_view(
                    source,
                    t.target_depth(),
                    &t.intr,
                    &t.to_source[s],
                )
                .unwrap();
                let n = 64 * 64;
                let mut err = 0.0;
                let mut count = 0.0;
                for i in 0..n {
                    if valid.data()[i] == 0.0 {
                        continue;
                    }
                    for ch in 0..3 {
                        err += (recon.data()[ch * n + i] - t.target().data()[ch * n + i]).abs()
                            as f64;
                    }
                    count += 3.0;
                }
                let mean = err / count;
                assert!(mean <= 0.01, "seed {seed} source {s}: mean l1 {mean}");
            }
        }
    }

    #[test]
    fn degrade_identity_when_parameters_are_neutral() {
        let frame = Array::<f32>::from_fn(&[3, 8, 8], |i| (i % 10) as f32 / 10.0);
        let p = DegradeParams {
            gamma: 1.0,
            gain_lo: 1.0,
            gain_hi: 1.0,
            noise_sigma: 0.0,
            spot: None,
        };
        let out = degrade(&frame, &p, 9);
        assert_eq!(out.data(), frame.data());
    }

    #[test]
    fn gamma_squares_midtone() {
        let frame = Array::<f32>::full(&[3, 4, 4], 0.5);
        let p = DegradeParams {
            gamma: 2.0,
            gain_lo: 1.0,
            gain_hi: 1.0,
            noise_sigma: 0.0,
            spot: None,
        };
        let out = degrade(&frame, &p, 10);
        for &v in out.iter() {
            assert!((v - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn spot_saturates_its_disk() {
        let frame = Array::<f32>::zeros(&[3, 16, 16]);
        let p = DegradeParams {
            gamma: 1.0,
            gain_lo: 1.0,
            gain_hi: 1.0,
            noise_sigma: 0.0,
            spot: Some(Spot {
                cx: 8.0,
                cy: 8.0,
                radius: 3.0,
                intensity: 0.97,
            }),
        };
        let out = degrade(&frame, &p, 11);
        assert!((out.data()[8 * 16 + 8] - 0.97).abs() < 1e-6);
        assert_eq!(out.data()[0], 0.0);
    }

    #[test]
    fn gain_jitter_shrinks_after_shared_enhancement() {
        // Brightness gap between two frames of a static scene, measured
        // relative to the frames' own brightness level, narrows once a
        // single shared mapping is applied to both. (The absolute gap cannot
        // shrink under any shared monotone remap of gain-jittered frames:
        // the density-weighted slope of an equalizing map is at least one.)
        let rel_gap = |a: &Array<f32>, b: &Array<f32>| {
            let (ma, mb) = (a.mean() as f64, b.mean() as f64);
            (ma - mb).abs() / (0.5 * (ma + mb)).max(1e-9)
        };
        let mut improved = 0;
        let total = 100;
        for seed in 0..total {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scene = random_scene(&mut rng, 32, 32);
            let (frame, _) = render(&scene, &Pose6::IDENTITY).unwrap();
            let p = DegradeParams {
                gamma: 3.0,
                gain_lo: 0.8,
                gain_hi: 1.2,
                noise_sigma: 0.0,
                spot: None,
            };
            let a = degrade(&frame, &p, seed * 2 + 1);
            let b = degrade(&frame, &p, seed * 2 + 2);
            let gap = rel_gap(&a, &b);
            let enhanced = crate::enhance::enhance_snippet(&[&a, &b], 0.008).unwrap();
            let gap_after = rel_gap(&enhanced[0], &enhanced[1]);
            if gap_after < gap {
                improved += 1;
            }
        }
        assert!(improved >= 90, "improved on {improved}/{total} seeds");
    }

    #[test]
    fn dataset_writes_expected_files_and_roundtrips() {
        let dir = std::env::temp_dir().join(format!("nightdepth_ds_{}", std::process::id()));
        std::fs::remove_dir_all(&dir).ok();
        let mut cfg = DatasetConfig::new(&dir);
        cfg.night_train = 2;
        cfg.night_val = 1;
        cfg.day = 1;
        cfg.width = 32;
        cfg.height = 32;
        make_dataset(&cfg).unwrap();
        let seqs = split_sequences(&dir, "night_train").unwrap();
        assert_eq!(seqs.len(), 2);
        for seq in &seqs {
            for i in 0..3 {
                assert!(seq.join(format!("frame_{i}.png")).exists());
                assert!(seq.join(format!("depth_{i}.pfm")).exists());
            }
            assert!(seq.join("manifest.txt").exists());
            assert!(seq.join("scene.txt").exists());
        }
        // reload and re-render: frames must reproduce bit-exactly
        let seq = &seqs[0];
        let text = std::fs::read_to_string(seq.join("scene.txt")).unwrap();
        let plan = parse_scene_description(&text, &seq.join("scene.txt")).unwrap();
        let re = realize_triplet(&plan).unwrap();
        let stored = load_triplet(seq).unwrap();
        for i in 0..3 {
            // compare through the same 8-bit quantization the files carry
            let quant = |a: &Array<f32>| -> Vec<u8> {
                a.iter()
                    .map(|&v| ((v.clamp(0.0, 1.0) * 255.0) + 0.5) as u8)
                    .collect()
            };
            assert_eq!(quant(&re.frames[i]), quant(&stored.frames[i]), "frame {i}");
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn same_seed_gives_bit_identical_datasets() {
        let base = std::env::temp_dir().join(format!("nightdepth_det_{}", std::process::id()));
        let mk = |sub: &str| {
            let mut cfg = DatasetConfig::new(base.join(sub));
            cfg.night_train = 1;
            cfg.night_val = 0;
            cfg.day = 1;
            cfg.width = 32;
            cfg.height = 32;
            cfg.seed = 9;
            make_dataset(&cfg).unwrap();
            cfg.out_dir
        };
        let a = mk("a");
        let b = mk("b");
        for split in ["night_train", "day"] {
            let fa = a.join(split).join("seq_00000").join("frame_1.png");
            let fb = b.join(split).join("seq_00000").join("frame_1.png");
            assert_eq!(std::fs::read(fa).unwrap(), std::fs::read(fb).unwrap());
        }
        std::fs::remove_dir_all(&base).ok();
    }

    #[test]
    fn depths_stay_within_declared_bounds() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scene = random_scene(&mut rng, 32, 32);
            let (_, depth) = render(&scene, &Pose6::IDENTITY).unwrap();
            for &d in depth.iter() {
                assert!(d as f64 >= 0.5, "depth {d} below floor");
                assert!(d as f64 <= scene.background_depth + 1e-3);
            }
        }
    }
}
