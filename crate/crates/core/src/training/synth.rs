use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classes::{label_table, BACKGROUND, CARTILAGE, EFFUSION, FEMUR};
use crate::error::{Error, Result};
use crate::kv;
use crate::mask::BinaryMask;
use crate::roialign::RoiBox;
use crate::tensor::Tensor;
use crate::volume_io::Volume;

/// Geometry and appearance of the synthetic knee-like scenes, in pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub image_size: usize,
    /// Crescent inner radius; also the bone's semi-major axis.
    pub crescent_inner: f64,
    pub crescent_outer: f64,
    pub crescent_half_angle_deg: f64,
    /// Bone minor/major axis ratio is drawn from `[bone_aspect_min, 1]`.
    pub bone_aspect_min: f64,
    /// Bone center offset from the image center, per axis, at most this.
    pub center_jitter: f64,
    pub max_effusions: usize,
    pub effusion_radius_min: f64,
    pub effusion_radius_max: f64,
    pub noise_sd: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            crescent_inner: 20.0,
            crescent_outer: 24.0,
            crescent_half_angle_deg: 50.0,
            bone_aspect_min: 0.85,
            center_jitter: 8.0,
            max_effusions: 3,
            effusion_radius_min: 3.0,
            effusion_radius_max: 6.0,
            noise_sd: 0.05,
        }
    }
}

/// Mean intensity per label: background, bone, (unused), cartilage, effusion.
pub const INTENSITY: [f64; 5] = [0.1, 0.5, 0.0, 0.8, 1.0];

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let (inner, outer) = (self.crescent_inner, self.crescent_outer);
        if !(inner > 0.0 && outer > inner) {
            return bad(format!("crescent radii must satisfy 0 < inner < outer, got {inner}, {outer}"));
        }
        if outer - inner > inner {
            return bad(format!(
                "crescent thickness {} exceeds the bone radius {inner}",
                outer - inner
            ));
        }
        let room = self.image_size as f64 / 2.0 - self.center_jitter - outer;
        if self.center_jitter < 0.0 || room < 1.0 {
            return bad(format!(
                "crescent of radius {outer} with jitter {} does not fit a {} px image",
                self.center_jitter, self.image_size
            ));
        }
        if !(self.crescent_half_angle_deg > 0.0 && self.crescent_half_angle_deg < 180.0) {
            return bad("crescent half angle must lie in (0, 180) degrees".into());
        }
        if !(self.bone_aspect_min > 0.0 && self.bone_aspect_min <= 1.0) {
            return bad("bone_aspect_min must lie in (0, 1]".into());
        }
        if !(self.effusion_radius_min >= 1.0 && self.effusion_radius_max >= self.effusion_radius_min) {
            return bad("effusion radii must satisfy 1 <= min <= max".into());
        }
        if 2.0 * self.effusion_radius_max + 2.0 >= self.image_size as f64 {
            return bad("effusion radius too large for the image".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be non-negative".into());
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("image_size", self.image_size.to_string()),
            ("crescent_inner", self.crescent_inner.to_string()),
            ("crescent_outer", self.crescent_outer.to_string()),
            ("crescent_half_angle_deg", self.crescent_half_angle_deg.to_string()),
            ("bone_aspect_min", self.bone_aspect_min.to_string()),
            ("center_jitter", self.center_jitter.to_string()),
            ("max_effusions", self.max_effusions.to_string()),
            ("effusion_radius_min", self.effusion_radius_min.to_string()),
            ("effusion_radius_max", self.effusion_radius_max.to_string()),
            ("noise_sd", self.noise_sd.to_string()),
        ] {
            writeln!(s, "{k}={v}").unwrap();
        }
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut m = kv::parse(text)?;
        let mut c = Self::default();
        kv::take(&mut m, "image_size", &mut c.image_size)?;
        kv::take(&mut m, "crescent_inner", &mut c.crescent_inner)?;
        kv::take(&mut m, "crescent_outer", &mut c.crescent_outer)?;
        kv::take(&mut m, "crescent_half_angle_deg", &mut c.crescent_half_angle_deg)?;
        kv::take(&mut m, "bone_aspect_min", &mut c.bone_aspect_min)?;
        kv::take(&mut m, "center_jitter", &mut c.center_jitter)?;
        kv::take(&mut m, "max_effusions", &mut c.max_effusions)?;
        kv::take(&mut m, "effusion_radius_min", &mut c.effusion_radius_min)?;
        kv::take(&mut m, "effusion_radius_max", &mut c.effusion_radius_max)?;
        kv::take(&mut m, "noise_sd", &mut c.noise_sd)?;
        kv::finish(m)?;
        c.validate()?;
        Ok(c)
    }
}

/// One annotated object.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub class_id: u16,
    /// Image-sized mask, dims `[W, H, 1]`.
    pub mask: BinaryMask,
    /// Tight box around the mask's pixels.
    pub bbox: RoiBox,
}

impl Instance {
    /// Derives the tight box; fails on an empty mask.
    pub fn from_mask(class_id: u16, mask: BinaryMask) -> Result<Self> {
        let [w, h, _] = mask.dims();
        let (mut y0, mut x0, mut y1, mut x1) = (usize::MAX, usize::MAX, 0, 0);
        for i in 0..mask.len() {
            if mask.data()[i] {
                let [x, y, _] = mask.coords(i);
                y0 = y0.min(y);
                x0 = x0.min(x);
                y1 = y1.max(y);
                x1 = x1.max(x);
            }
        }
        if y0 == usize::MAX {
            return Err(Error::Empty(format!("instance of class {class_id} has an empty mask")));
        }
        let bbox = RoiBox::new(
            y0 as f64 / h as f64,
            x0 as f64 / w as f64,
            (y1 + 1) as f64 / h as f64,
            (x1 + 1) as f64 / w as f64,
        )?;
        Ok(Self { class_id, mask, bbox })
    }
}

/// A grayscale image with its instances.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// `[1, S, S]`.
    pub image: Tensor,
    pub instances: Vec<Instance>,
}

impl Scene {
    pub fn image_size(&self) -> usize {
        self.image.shape()[1]
    }

    /// All instances painted into one label image (spacing 1 mm).
    pub fn label_volume(&self) -> Result<Volume> {
        let s = self.image_size();
        let mut ids = vec![BACKGROUND; s * s];
        for inst in &self.instances {
            for (id, &on) in ids.iter_mut().zip(inst.mask.data()) {
                if on {
                    *id = inst.class_id;
                }
            }
        }
        Volume::labels([s, s, 1], [1.0; 3], ids, label_table())
    }
}

/// Generator parameters of one scene, in pixel coordinates (y, x).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub center: [f64; 2],
    /// Direction of the crescent from the bone center, radians.
    pub direction: f64,
    /// Bone semi-axes along and across `direction`.
    pub bone_axes: [f64; 2],
    pub crescent_radii: [f64; 2],
    /// `(y, x, radius)` of each effusion disc.
    pub effusions: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub scene: Scene,
    pub params: SceneParams,
    pub seed: u64,
    pub index: usize,
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Draws `n` scenes: a bone ellipse, a cartilage crescent hugging it, and up to
/// `max_effusions` fluid discs. Scene `i` uses ChaCha stream `i` of `seed`.
pub fn synth_generate(n: usize, seed: u64, cfg: &SceneConfig) -> Result<Vec<SynthScene>> {
    if n == 0 {
        return Err(Error::arg("scene count must be at least 1"));
    }
    cfg.validate()?;
    (0..n).map(|i| generate_one(i, seed, cfg)).collect()
}

fn generate_one(index: usize, seed: u64, cfg: &SceneConfig) -> Result<SynthScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let s = cfg.image_size;
    let half = s as f64 / 2.0;
    let j = cfg.center_jitter;
    let center = [half + rng.random_range(-j..=j), half + rng.random_range(-j..=j)];
    let direction = rng.random_range(-PI..PI);
    let inner = cfg.crescent_inner;
    let outer = cfg.crescent_outer;
    let bone_axes = [inner, inner * rng.random_range(cfg.bone_aspect_min..=1.0)];
    let half_angle = cfg.crescent_half_angle_deg.to_radians();

    let mut effusions: Vec<[f64; 3]> = Vec::new();
    let count = rng.random_range(0..=cfg.max_effusions);
    for _ in 0..count {
        for _attempt in 0..200 {
            let r = rng.random_range(cfg.effusion_radius_min..=cfg.effusion_radius_max);
            let y = rng.random_range(r + 1.0..=s as f64 - r - 1.0);
            let x = rng.random_range(r + 1.0..=s as f64 - r - 1.0);
            let clear_of_bone = (y - center[0]).hypot(x - center[1]) >= outer + r + 2.0;
            let clear_of_blobs = effusions
                .iter()
                .all(|e| (y - e[0]).hypot(x - e[1]) >= r + e[2] + 2.0);
            if clear_of_bone && clear_of_blobs {
                effusions.push([y, x, r]);
                break;
            }
        }
    }

    let (cos, sin) = (direction.cos(), direction.sin());
    let mut bone = BinaryMask::image(s, s);
    let mut crescent = BinaryMask::image(s, s);
    let mut blobs: Vec<BinaryMask> = effusions.iter().map(|_| BinaryMask::image(s, s)).collect();
    let mut labels = vec![BACKGROUND; s * s];
    for py in 0..s {
        for px in 0..s {
            let dy = py as f64 + 0.5 - center[0];
            let dx = px as f64 + 0.5 - center[1];
            let along = dx * cos + dy * sin;
            let across = -dx * sin + dy * cos;
            let r = dy.hypot(dx);
            let i = py * s + px;
            if (along / bone_axes[0]).powi(2) + (across / bone_axes[1]).powi(2) < 1.0 {
                bone.set(px, py, 0, true);
                labels[i] = FEMUR;
            } else if r >= inner && r < outer && wrap_angle(dy.atan2(dx) - direction).abs() <= half_angle {
                crescent.set(px, py, 0, true);
                labels[i] = CARTILAGE;
            } else {
                for (k, e) in effusions.iter().enumerate() {
                    if (py as f64 + 0.5 - e[0]).hypot(px as f64 + 0.5 - e[1]) < e[2] {
                        blobs[k].set(px, py, 0, true);
                        labels[i] = EFFUSION;
                    }
                }
            }
        }
    }

    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let pixels: Vec<f64> = labels
        .iter()
        .map(|&l| {
            let v = INTENSITY[l as usize] + noise.sample(&mut rng);
            // Stored at f32 precision so the on-disk dataset reproduces it exactly.
            v as f32 as f64
        })
        .collect();
    let image = Tensor::new([1, s, s], pixels)?;

    let mut instances = vec![Instance::from_mask(FEMUR, bone)?, Instance::from_mask(CARTILAGE, crescent)?];
    for b in blobs {
        instances.push(Instance::from_mask(EFFUSION, b)?);
    }
    Ok(SynthScene {
        scene: Scene { image, instances },
        params: SceneParams {
            center,
            direction,
            bone_axes,
            crescent_radii: [inner, outer],
            effusions,
        },
        seed,
        index,
    })
}
