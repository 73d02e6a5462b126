//! Procedural paired data: a clean CT slice with analytic body/bone masks,
//! a degraded CBCT-like copy, and affine perturbation of priors.
//!
//! Everything here is a pure function of its spec and a 64-bit seed.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BinaryMask, ImageGrid, Shape, Units};
use crate::segmentation::SegmentationPrior;

pub const AIR_HU: f32 = -1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhantomError {
    #[error("phantom spec infeasible: {0}")]
    SpecInfeasible(String),
    #[error("perturbation level must be in 0..=4, got {0}")]
    BadLevel(u8),
}

pub(crate) fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-slice seed `seed XOR hash(patient_id, slice_index)`; independent of
/// generation order.
pub fn slice_seed(seed: u64, patient_id: &str, slice_index: u32) -> u64 {
    // FNV-1a over the id bytes, then the slice index
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in patient_id.bytes().chain(slice_index.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seed ^ mix64(h)
}

/// Derives an independent stream seed from a base seed and a stream tag.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    /// Body ellipse semi-axes as fractions of the half width / half height.
    pub body_axes: (f64, f64),
    pub n_bone_rings: usize,
    pub bone_hu_range: (f32, f32),
    pub soft_hu_range: (f32, f32),
    pub n_air_pockets: usize,
    /// Amplitude of the low-frequency soft-tissue texture, HU.
    pub texture_scale: f32,
    pub n_organs: usize,
    /// Width of the subcutaneous fat layer in pixels; 0 disables it. Fat sits
    /// at the low end of `soft_hu_range`.
    pub fat_thickness_px: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            height: 128,
            width: 128,
            body_axes: (0.85, 0.65),
            n_bone_rings: 3,
            bone_hu_range: (300.0, 1200.0),
            soft_hu_range: (-80.0, 80.0),
            n_air_pockets: 2,
            texture_scale: 30.0,
            n_organs: 3,
            fat_thickness_px: 6.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::SpecInfeasible(m));
        if self.height < 64 || self.width < 64 {
            return bad(format!("dimensions must be >= 64, got {}x{}", self.height, self.width));
        }
        let (ax, ay) = self.body_axes;
        if !(ax > 0.0 && ax < 1.0 && ay > 0.0 && ay < 1.0) {
            return bad(format!("body axes must lie in (0, 1), got ({ax}, {ay})"));
        }
        if !(self.bone_hu_range.0 < self.bone_hu_range.1) || !(self.soft_hu_range.0 < self.soft_hu_range.1) {
            return bad("intensity ranges must be ordered".into());
        }
        if self.texture_scale < 0.0 || !(self.fat_thickness_px >= 0.0) {
            return bad("texture_scale and fat_thickness_px must be >= 0".into());
        }
        Ok(())
    }
}

/// One generated slice with its analytic masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub ct: ImageGrid,
    pub body_truth: BinaryMask,
    pub bone_truth: BinaryMask,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ay: f64,
    ax: f64,
}

impl Ellipse {
    /// Normalized radius: `<= 1` inside.
    fn rho(&self, y: f64, x: f64) -> f64 {
        (((y - self.cy) / self.ay).powi(2) + ((x - self.cx) / self.ax).powi(2)).sqrt()
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        self.rho(y, x) <= 1.0
    }

    /// Whether the ellipse, grown by `margin`, fits inside `outer`, checked on
    /// a dense boundary sampling.
    fn fits_inside(&self, outer: &Ellipse, margin: f64) -> bool {
        (0..72).all(|i| {
            let t = i as f64 * PI / 36.0;
            let y = self.cy + (self.ay + margin) * t.sin();
            let x = self.cx + (self.ax + margin) * t.cos();
            outer.rho(y, x) < 1.0
        })
    }

    fn bounding_radius(&self) -> f64 {
        self.ay.max(self.ax)
    }

    fn apart_from(&self, other: &Ellipse, gap: f64) -> bool {
        let d = ((self.cy - other.cy).powi(2) + (self.cx - other.cx).powi(2)).sqrt();
        d > self.bounding_radius() + other.bounding_radius() + gap
    }
}

#[derive(Debug, Clone, Copy)]
struct BoneRing {
    outer: Ellipse,
    thickness: f64,
    peak_hu: f32,
}

impl BoneRing {
    fn inner(&self) -> Ellipse {
        Ellipse {
            ay: self.outer.ay - self.thickness,
            ax: self.outer.ax - self.thickness,
            ..self.outer
        }
    }

    /// Position across the shell: 0 on the mid line, 1 on either edge;
    /// `None` outside the shell.
    fn depth(&self, y: f64, x: f64) -> Option<f64> {
        if !self.outer.contains(y, x) || self.inner().contains(y, x) {
            return None;
        }
        let half = self.thickness / 2.0;
        let mid = Ellipse {
            ay: self.outer.ay - half,
            ax: self.outer.ax - half,
            ..self.outer
        };
        let scale = mid.ay.min(mid.ax);
        Some(((mid.rho(y, x) - 1.0).abs() * scale / half).min(1.0))
    }
}

struct Sinusoid {
    ky: f64,
    kx: f64,
    phase: f64,
    amp: f64,
}

fn place<F>(rng: &mut ChaCha8Rng, attempts: usize, mut candidate: F) -> Option<Ellipse>
where
    F: FnMut(&mut ChaCha8Rng) -> Option<Ellipse>,
{
    (0..attempts).find_map(|_| candidate(rng))
}

/// Draws one phantom slice. Deterministic in `(spec, seed)`.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<Phantom, PhantomError> {
    spec.validate()?;
    let mut rng = rng_from(seed);
    let (h, w) = (spec.height, spec.width);
    let shape = Shape::new(h, w);
    let min_dim = h.min(w) as f64;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);

    let jitter = |rng: &mut ChaCha8Rng| rng.random_range(0.95..1.05);
    let body = Ellipse {
        cy,
        cx,
        ay: (spec.body_axes.1 * jitter(&mut rng)).min(0.98) * h as f64 / 2.0,
        ax: (spec.body_axes.0 * jitter(&mut rng)).min(0.98) * w as f64 / 2.0,
    };

    let mut rings: Vec<BoneRing> = Vec::with_capacity(spec.n_bone_rings);
    for i in 0..spec.n_bone_rings {
        let thickness = (0.035 * min_dim).max(3.0) * rng.random_range(0.9..1.3);
        let outer = place(&mut rng, 500, |rng| {
            let r = rng.random_range(0.07..0.13) * min_dim;
            let e = Ellipse {
                cy: cy + rng.random_range(-0.7..0.7) * body.ay,
                cx: cx + rng.random_range(-0.7..0.7) * body.ax,
                ay: (r * rng.random_range(0.8..1.2)).max(thickness + 2.0),
                ax: (r * rng.random_range(0.8..1.2)).max(thickness + 2.0),
            };
            let ok = e.fits_inside(&body, 3.0) && rings.iter().all(|o| e.apart_from(&o.outer, 3.0));
            ok.then_some(e)
        })
        .ok_or_else(|| PhantomError::SpecInfeasible(format!("bone ring {i} does not fit inside the body")))?;
        let (lo, hi) = spec.bone_hu_range;
        let peak_hu = rng.random_range((lo + 0.45 * (hi - lo))..=hi);
        rings.push(BoneRing {
            outer,
            thickness,
            peak_hu,
        });
    }

    let (soft_lo, soft_hi) = spec.soft_hu_range;
    let base_soft = rng.random_range(soft_lo..soft_hi);
    let mut organs = Vec::new();
    for _ in 0..spec.n_organs {
        let e = place(&mut rng, 100, |rng| {
            let e = Ellipse {
                cy: cy + rng.random_range(-0.6..0.6) * body.ay,
                cx: cx + rng.random_range(-0.6..0.6) * body.ax,
                ay: rng.random_range(0.08..0.2) * min_dim,
                ax: rng.random_range(0.08..0.2) * min_dim,
            };
            e.fits_inside(&body, 2.0).then_some(e)
        });
        if let Some(e) = e {
            organs.push((e, rng.random_range(soft_lo..soft_hi)));
        }
    }

    let mut pockets = Vec::new();
    for i in 0..spec.n_air_pockets {
        let e = place(&mut rng, 500, |rng| {
            let r = rng.random_range(0.025..0.05) * min_dim;
            let e = Ellipse {
                cy: cy + rng.random_range(-0.6..0.6) * body.ay,
                cx: cx + rng.random_range(-0.6..0.6) * body.ax,
                ay: r.max(1.5),
                ax: (r * rng.random_range(0.7..1.3)).max(1.5),
            };
            let ok = e.fits_inside(&body, 3.0)
                && rings.iter().all(|o| e.apart_from(&o.outer, 2.0))
                && pockets.iter().all(|p: &Ellipse| e.apart_from(p, 2.0));
            ok.then_some(e)
        })
        .ok_or_else(|| PhantomError::SpecInfeasible(format!("air pocket {i} does not fit")))?;
        pockets.push(e);
    }

    let waves: Vec<Sinusoid> = (0..4)
        .map(|_| {
            let wavelength = rng.random_range(0.15..0.5) * min_dim;
            let angle = rng.random_range(0.0..PI);
            let k = 2.0 * PI / wavelength;
            Sinusoid {
                ky: k * angle.sin(),
                kx: k * angle.cos(),
                phase: rng.random_range(0.0..2.0 * PI),
                amp: spec.texture_scale as f64 / 4.0,
            }
        })
        .collect();

    let mut ct = vec![AIR_HU; shape.len()];
    let mut body_bits = vec![false; shape.len()];
    let mut bone_bits = vec![false; shape.len()];
    for r in 0..h {
        for c in 0..w {
            let (y, x) = (r as f64, c as f64);
            if !body.contains(y, x) {
                continue;
            }
            let p = r * w + c;
            body_bits[p] = true;
            if let Some((ring, d)) = rings.iter().find_map(|ring| ring.depth(y, x).map(|d| (ring, d))) {
                let lo = spec.bone_hu_range.0 as f64;
                ct[p] = (ring.peak_hu as f64 - (ring.peak_hu as f64 - lo) * d) as f32;
                bone_bits[p] = true;
                continue;
            }
            if pockets.iter().any(|e| e.contains(y, x)) {
                ct[p] = AIR_HU;
                continue;
            }
            let rho = body.rho(y, x);
            let dist = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
            let depth = if rho > 0.0 {
                dist * (1.0 / rho - 1.0)
            } else {
                f64::INFINITY
            };
            let soft = if depth < spec.fat_thickness_px {
                soft_lo
            } else {
                organs
                    .iter()
                    .rev()
                    .find(|(e, _)| e.contains(y, x))
                    .map_or(base_soft, |&(_, v)| v)
            };
            let texture: f64 = waves
                .iter()
                .map(|s| s.amp * (s.ky * y + s.kx * x + s.phase).sin())
                .sum();
            ct[p] = (soft as f64 + texture) as f32;
        }
    }

    Ok(Phantom {
        ct: ImageGrid::from_parts(shape, ct, Units::Hu),
        body_truth: BinaryMask::from_parts(shape, body_bits),
        bone_truth: BinaryMask::from_parts(shape, bone_bits),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationSpec {
    pub noise_sigma_hu: f32,
    pub cupping_amp_hu: f32,
    pub n_streaks: usize,
    pub streak_amp_hu: f32,
    /// Field-of-view radius as a fraction of the half diagonal; 1.0 disables.
    pub fov_radius_frac: f64,
    pub misreg_max_px: u32,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        DegradationSpec {
            noise_sigma_hu: 25.0,
            cupping_amp_hu: 80.0,
            n_streaks: 4,
            streak_amp_hu: 60.0,
            fov_radius_frac: 0.95,
            misreg_max_px: 2,
        }
    }
}

impl DegradationSpec {
    /// A configuration that leaves the input untouched.
    pub fn identity() -> Self {
        DegradationSpec {
            noise_sigma_hu: 0.0,
            cupping_amp_hu: 0.0,
            n_streaks: 0,
            streak_amp_hu: 0.0,
            fov_radius_frac: 1.0,
            misreg_max_px: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let amps = [self.noise_sigma_hu, self.cupping_amp_hu, self.streak_amp_hu];
        if amps.iter().any(|a| !(*a >= 0.0)) || !(self.fov_radius_frac > 0.0) {
            return Err(PhantomError::SpecInfeasible(
                "degradation amplitudes must be >= 0 and the FOV radius > 0".into(),
            ));
        }
        Ok(())
    }
}

/// CBCT-like degradation: rigid misregistration, radial cupping, streaks,
/// Gaussian noise and circular FOV truncation, applied in that order.
pub fn degrade_to_cbct(ct: &ImageGrid, spec: &DegradationSpec, seed: u64) -> Result<ImageGrid, PhantomError> {
    spec.validate()?;
    let mut rng = rng_from(seed);
    let shape = ct.shape();
    let (h, w) = (shape.height, shape.width);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let half_diag = ((h * h + w * w) as f64).sqrt() / 2.0;
    let fill = match ct.units() {
        Units::Hu => AIR_HU,
        Units::Normalized => -1.0,
    };

    let m = spec.misreg_max_px as i64;
    let (dy, dx) = if m > 0 {
        (rng.random_range(-m..=m), rng.random_range(-m..=m))
    } else {
        (0, 0)
    };
    let src = ct.values();
    let mut out: Vec<f64> = (0..shape.len())
        .map(|p| {
            let (r, c) = ((p / w) as i64 - dy, (p % w) as i64 - dx);
            if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
                fill as f64
            } else {
                src[r as usize * w + c as usize] as f64
            }
        })
        .collect();

    if spec.cupping_amp_hu > 0.0 {
        let amp = spec.cupping_amp_hu as f64;
        for (p, v) in out.iter_mut().enumerate() {
            let (y, x) = ((p / w) as f64 - cy, (p % w) as f64 - cx);
            let rho2 = (y * y + x * x) / (half_diag * half_diag);
            *v -= amp * (1.0 - rho2.min(1.0));
        }
    }

    for _ in 0..spec.n_streaks {
        let angle = rng.random_range(0.0..PI);
        let py = cy + rng.random_range(-0.3..0.3) * h as f64;
        let px = cx + rng.random_range(-0.3..0.3) * w as f64;
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let amp = sign * spec.streak_amp_hu as f64;
        let (ny, nx) = (angle.cos(), -angle.sin());
        if amp == 0.0 {
            continue;
        }
        for (p, v) in out.iter_mut().enumerate() {
            let (y, x) = ((p / w) as f64 - py, (p % w) as f64 - px);
            let d = y * ny + x * nx;
            *v += amp * (-d * d / 2.0).exp();
        }
    }

    if spec.noise_sigma_hu > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma_hu as f64).expect("sigma checked");
        for v in out.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }

    if spec.fov_radius_frac < 1.0 {
        let radius = spec.fov_radius_frac * half_diag;
        for (p, v) in out.iter_mut().enumerate() {
            let (y, x) = ((p / w) as f64 - cy, (p % w) as f64 - cx);
            if (y * y + x * x).sqrt() > radius {
                *v = fill as f64;
            }
        }
    }

    let values: Vec<f32> = match ct.units() {
        Units::Hu => out.into_iter().map(|v| v as f32).collect(),
        Units::Normalized => out.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect(),
    };
    Ok(ImageGrid::from_parts(shape, values, ct.units()))
}

/// Severity of prior perturbation, 0 (none) to 4 (severe).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PerturbationLevel(u8);

impl PerturbationLevel {
    pub const MAX: u8 = 4;
    pub const MAX_ROTATION_DEG: f64 = 15.0;
    pub const MAX_TRANSLATION_FRAC: f64 = 0.15;
    pub const MAX_SCALE_DEV: f64 = 0.15;

    pub fn new(level: u8) -> Result<Self, PhantomError> {
        if level > Self::MAX {
            return Err(PhantomError::BadLevel(level));
        }
        Ok(PerturbationLevel(level))
    }

    pub fn all() -> impl Iterator<Item = PerturbationLevel> {
        (0..=Self::MAX).map(PerturbationLevel)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// `(max rotation in degrees, max translation fraction, max scale
    /// deviation)`, linear in the level.
    pub fn magnitudes(self) -> (f64, f64, f64) {
        let f = self.0 as f64 / Self::MAX as f64;
        (
            f * Self::MAX_ROTATION_DEG,
            f * Self::MAX_TRANSLATION_FRAC,
            f * Self::MAX_SCALE_DEV,
        )
    }
}

impl TryFrom<u8> for PerturbationLevel {
    type Error = PhantomError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        PerturbationLevel::new(v)
    }
}

impl From<PerturbationLevel> for u8 {
    fn from(l: PerturbationLevel) -> u8 {
        l.0
    }
}

/// A sampled similarity transform about the image center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub rotation_deg: f64,
    /// Translation as fractions of (height, width).
    pub translation: (f64, f64),
    pub scale: f64,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        rotation_deg: 0.0,
        translation: (0.0, 0.0),
        scale: 1.0,
    };

    pub fn sample(level: PerturbationLevel, seed: u64) -> AffineParams {
        if level.get() == 0 {
            return Self::IDENTITY;
        }
        let (mr, mt, ms) = level.magnitudes();
        let mut rng = rng_from(seed);
        AffineParams {
            rotation_deg: rng.random_range(-mr..=mr),
            translation: (rng.random_range(-mt..=mt), rng.random_range(-mt..=mt)),
            scale: rng.random_range((1.0 - ms)..=(1.0 + ms)),
        }
    }

    /// Maps an output pixel back to its source coordinate (row, col).
    fn source(&self, shape: Shape, r: usize, c: usize) -> (f64, f64) {
        let (cy, cx) = ((shape.height as f64 - 1.0) / 2.0, (shape.width as f64 - 1.0) / 2.0);
        let y = r as f64 - cy - self.translation.0 * shape.height as f64;
        let x = c as f64 - cx - self.translation.1 * shape.width as f64;
        let (s, co) = self.rotation_deg.to_radians().sin_cos();
        // inverse rotation, then inverse scale
        let sy = (co * y - s * x) / self.scale;
        let sx = (s * y + co * x) / self.scale;
        (sy + cy, sx + cx)
    }

    pub fn apply_mask(&self, mask: &BinaryMask) -> BinaryMask {
        if *self == Self::IDENTITY {
            return mask.clone();
        }
        let shape = mask.shape();
        let mut bits = vec![false; shape.len()];
        for r in 0..shape.height {
            for c in 0..shape.width {
                let (sy, sx) = self.source(shape, r, c);
                let (ry, rx) = (sy.round(), sx.round());
                if ry >= 0.0 && rx >= 0.0 && (ry as usize) < shape.height && (rx as usize) < shape.width {
                    bits[r * shape.width + c] = mask.get(ry as usize, rx as usize);
                }
            }
        }
        BinaryMask::from_parts(shape, bits)
    }

    pub fn apply_grid(&self, grid: &ImageGrid) -> ImageGrid {
        if *self == Self::IDENTITY {
            return grid.clone();
        }
        let shape = grid.shape();
        let fill = match grid.units() {
            Units::Hu => AIR_HU,
            Units::Normalized => -1.0,
        };
        let at = |r: i64, c: i64| -> f64 {
            if r < 0 || c < 0 || r >= shape.height as i64 || c >= shape.width as i64 {
                fill as f64
            } else {
                grid.get(r as usize, c as usize) as f64
            }
        };
        let mut values = vec![fill; shape.len()];
        for r in 0..shape.height {
            for c in 0..shape.width {
                let (sy, sx) = self.source(shape, r, c);
                let (y0, x0) = (sy.floor(), sx.floor());
                let (fy, fx) = (sy - y0, sx - x0);
                let (y0, x0) = (y0 as i64, x0 as i64);
                let v = at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + at(y0, x0 + 1) * (1.0 - fy) * fx
                    + at(y0 + 1, x0) * fy * (1.0 - fx)
                    + at(y0 + 1, x0 + 1) * fy * fx;
                values[r * shape.width + c] = v as f32;
            }
        }
        ImageGrid::from_parts(shape, values, grid.units())
    }
}

/// Either kind of slice input accepted by [`apply_affine_perturbation`].
#[derive(Debug, Clone, PartialEq)]
pub enum Perturbable {
    Mask(BinaryMask),
    Grid(ImageGrid),
}

/// Random similarity transform of a mask (nearest neighbour) or grid
/// (bilinear). Level 0 returns the input unchanged.
pub fn apply_affine_perturbation(input: &Perturbable, level: PerturbationLevel, seed: u64) -> Perturbable {
    let params = AffineParams::sample(level, seed);
    match input {
        Perturbable::Mask(m) => Perturbable::Mask(params.apply_mask(m)),
        Perturbable::Grid(g) => Perturbable::Grid(params.apply_grid(g)),
    }
}

/// Perturbs both prior channels with one shared transform; bone is clipped
/// to the perturbed body so the prior stays consistent.
pub fn perturb_prior(prior: &SegmentationPrior, level: PerturbationLevel, seed: u64) -> SegmentationPrior {
    let params = AffineParams::sample(level, seed);
    let body = params.apply_mask(&prior.body);
    let bone = params.apply_mask(&prior.bone).and(&body).expect("same shape");
    SegmentationPrior { bone, body }
}
