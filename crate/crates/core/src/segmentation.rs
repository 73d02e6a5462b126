//! Body and bone segmentation priors extracted from a planning CT.
//!
//! The body mask comes from a single intensity threshold followed by
//! component filtering, hole filling and a morphological closing. The bone
//! mask classifies body pixels into high, medium and low intensity bands and
//! keeps medium pixels only where they sit next to (dilated) high-intensity
//! bone, which bridges thin trabecular gaps between cortical fragments.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BinaryMask, GridError, ImageGrid, NormalizationSpec, Shape, Units};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentationError {
    #[error("no body component survived the size filter")]
    EmptyBody,
    #[error("HU thresholds on a normalized grid need a normalization spec")]
    UnitMismatch,
    #[error("invalid segmentation config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Structuring element for dilation and erosion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum MorphKernel {
    /// 3x3 plus sign.
    Cross3,
    /// Full 3x3 square.
    Square3,
    /// Euclidean disk `dr^2 + dc^2 <= r^2`.
    Disk { radius: u32 },
}

impl MorphKernel {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        match self {
            MorphKernel::Disk { radius: 0 } => Err(SegmentationError::BadConfig("disk radius must be >= 1".into())),
            _ => Ok(()),
        }
    }

    /// Row/column offsets covered by the kernel, centered on the origin.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        match *self {
            MorphKernel::Cross3 => vec![(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)],
            MorphKernel::Square3 => (-1..=1).flat_map(|dr| (-1..=1).map(move |dc| (dr, dc))).collect(),
            MorphKernel::Disk { radius } => {
                let r = radius as isize;
                (-r..=r)
                    .flat_map(|dr| (-r..=r).map(move |dc| (dr, dc)))
                    .filter(|(dr, dc)| dr * dr + dc * dc <= r * r)
                    .collect()
            }
        }
    }
}

/// Foreground connectivity used for component labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodySegConfig {
    pub threshold_hu: f32,
    pub min_component_frac: f64,
    pub closing_kernel: MorphKernel,
}

impl Default for BodySegConfig {
    fn default() -> Self {
        BodySegConfig {
            threshold_hu: -300.0,
            min_component_frac: 0.01,
            closing_kernel: MorphKernel::Disk { radius: 3 },
        }
    }
}

impl BodySegConfig {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        if !(self.min_component_frac > 0.0 && self.min_component_frac < 1.0) {
            return Err(SegmentationError::BadConfig(format!(
                "min_component_frac must lie in (0, 1), got {}",
                self.min_component_frac
            )));
        }
        self.closing_kernel.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoneSegConfig {
    pub high_hu: f32,
    pub medium_hu: f32,
    pub low_hu: f32,
    pub bridge_kernel: MorphKernel,
    pub include_low_connected: bool,
    pub min_component_px: usize,
}

impl Default for BoneSegConfig {
    fn default() -> Self {
        BoneSegConfig {
            high_hu: 350.0,
            medium_hu: 150.0,
            low_hu: 100.0,
            bridge_kernel: MorphKernel::Disk { radius: 2 },
            include_low_connected: true,
            min_component_px: 20,
        }
    }
}

impl BoneSegConfig {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        if !(self.low_hu < self.medium_hu && self.medium_hu < self.high_hu) {
            return Err(SegmentationError::BadConfig(format!(
                "bone thresholds must satisfy low < medium < high, got {} / {} / {}",
                self.low_hu, self.medium_hu, self.high_hu
            )));
        }
        self.bridge_kernel.validate()
    }
}

/// Bone and body masks extracted from the same slice; bone is a subset of
/// body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationPrior {
    pub bone: BinaryMask,
    pub body: BinaryMask,
}

impl SegmentationPrior {
    pub fn new(bone: BinaryMask, body: BinaryMask) -> Result<Self, SegmentationError> {
        bone.shape().ensure_same(body.shape())?;
        if !bone.is_subset_of(&body) {
            return Err(SegmentationError::BadConfig(
                "bone mask must be contained in the body mask".into(),
            ));
        }
        Ok(SegmentationPrior { bone, body })
    }

    pub fn shape(&self) -> Shape {
        self.body.shape()
    }
}

/// `bit = 1` iff `lo <= value <= hi`, in the grid's own units. Infinite
/// bounds act as open-ended sentinels.
pub fn threshold(grid: &ImageGrid, lo: f32, hi: f32) -> BinaryMask {
    let bits = grid.values().iter().map(|&v| lo <= v && v <= hi).collect();
    BinaryMask::from_parts(grid.shape(), bits)
}

/// Thresholds with bounds given in HU. Normalized grids are mapped back to
/// HU through `spec`, which is then mandatory.
pub fn threshold_hu(
    grid: &ImageGrid,
    lo_hu: f32,
    hi_hu: f32,
    spec: Option<&NormalizationSpec>,
) -> Result<BinaryMask, SegmentationError> {
    let hu = hu_view(grid, spec)?;
    Ok(threshold(&hu, lo_hu, hi_hu))
}

fn hu_view(grid: &ImageGrid, spec: Option<&NormalizationSpec>) -> Result<ImageGrid, SegmentationError> {
    match (grid.units(), spec) {
        (Units::Hu, _) => Ok(grid.clone()),
        (Units::Normalized, Some(spec)) => Ok(grid.to_hu(spec)),
        (Units::Normalized, None) => Err(SegmentationError::UnitMismatch),
    }
}

fn morph(mask: &BinaryMask, kernel: MorphKernel, dilation: bool) -> BinaryMask {
    let Shape { height, width } = mask.shape();
    let offsets = kernel.offsets();
    let src = mask.bits();
    let mut out = vec![false; height * width];
    out.par_chunks_mut(width).enumerate().for_each(|(r, row)| {
        for (c, px) in row.iter_mut().enumerate() {
            let mut hit = !dilation;
            for &(dr, dc) in &offsets {
                let rr = r as isize + dr;
                let cc = c as isize + dc;
                // out-of-image neighbours count as background
                let v = rr >= 0
                    && cc >= 0
                    && (rr as usize) < height
                    && (cc as usize) < width
                    && src[rr as usize * width + cc as usize];
                if dilation && v {
                    hit = true;
                    break;
                }
                if !dilation && !v {
                    hit = false;
                    break;
                }
            }
            *px = hit;
        }
    });
    BinaryMask::from_parts(mask.shape(), out)
}

pub fn dilate(mask: &BinaryMask, kernel: MorphKernel) -> BinaryMask {
    morph(mask, kernel, true)
}

pub fn erode(mask: &BinaryMask, kernel: MorphKernel) -> BinaryMask {
    morph(mask, kernel, false)
}

/// Dilation followed by erosion.
pub fn closing(mask: &BinaryMask, kernel: MorphKernel) -> BinaryMask {
    erode(&dilate(mask, kernel), kernel)
}

/// Component labels in raster order; label 0 is background and component
/// `l` has size `sizes[l - 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub shape: Shape,
    pub labels: Vec<u32>,
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Label of the largest component; ties go to the one found first.
    pub fn largest(&self) -> Option<u32> {
        let mut best: Option<(usize, u32)> = None;
        for (i, &size) in self.sizes.iter().enumerate() {
            if best.is_none_or(|(s, _)| size > s) {
                best = Some((size, i as u32 + 1));
            }
        }
        best.map(|(_, l)| l)
    }

    pub fn mask_where(&self, keep: impl Fn(u32) -> bool) -> BinaryMask {
        let bits = self.labels.iter().map(|&l| l != 0 && keep(l)).collect();
        BinaryMask::from_parts(self.shape, bits)
    }
}

/// Flood-fill labeling. Components are numbered by their first pixel in
/// raster order.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Components {
    let Shape { height, width } = mask.shape();
    let bits = mask.bits();
    let mut labels = vec![0u32; bits.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..bits.len() {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (r, c) = ((p / width) as isize, (p % width) as isize);
            for &(dr, dc) in connectivity.offsets() {
                let (rr, cc) = (r + dr, c + dc);
                if rr < 0 || cc < 0 || rr as usize >= height || cc as usize >= width {
                    continue;
                }
                let q = rr as usize * width + cc as usize;
                if bits[q] && labels[q] == 0 {
                    labels[q] = label;
                    queue.push_back(q);
                }
            }
        }
        sizes.push(size);
    }
    Components {
        shape: mask.shape(),
        labels,
        sizes,
    }
}

/// Sets every background region (4-connected) that does not touch the image
/// border to foreground.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let Shape { height, width } = mask.shape();
    let bits = mask.bits();
    let mut outside = vec![false; bits.len()];
    let mut queue = VecDeque::new();
    let seed = |p: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        if !bits[p] && !outside[p] {
            outside[p] = true;
            queue.push_back(p);
        }
    };
    for c in 0..width {
        seed(c, &mut outside, &mut queue);
        seed((height - 1) * width + c, &mut outside, &mut queue);
    }
    for r in 0..height {
        seed(r * width, &mut outside, &mut queue);
        seed(r * width + width - 1, &mut outside, &mut queue);
    }
    while let Some(p) = queue.pop_front() {
        let (r, c) = ((p / width) as isize, (p % width) as isize);
        for &(dr, dc) in Connectivity::Four.offsets() {
            let (rr, cc) = (r + dr, c + dc);
            if rr < 0 || cc < 0 || rr as usize >= height || cc as usize >= width {
                continue;
            }
            let q = rr as usize * width + cc as usize;
            if !bits[q] && !outside[q] {
                outside[q] = true;
                queue.push_back(q);
            }
        }
    }
    BinaryMask::from_parts(mask.shape(), outside.into_iter().map(|o| !o).collect())
}

/// Removes 8-connected components with fewer than `min_size` pixels.
pub fn remove_small_components(mask: &BinaryMask, min_size: usize) -> BinaryMask {
    let comps = connected_components(mask, Connectivity::Eight);
    comps.mask_where(|l| comps.sizes[l as usize - 1] >= min_size)
}

fn keep_largest(mask: &BinaryMask) -> Option<BinaryMask> {
    let comps = connected_components(mask, Connectivity::Eight);
    let largest = comps.largest()?;
    Some(comps.mask_where(|l| l == largest))
}

/// Body mask: threshold, drop small components, keep the largest, fill
/// holes, then close.
///
/// The closing result is united with its input and reduced to one hole-free
/// component again: with background padding an erosion can eat into a body
/// that reaches the image border, and a closing may enclose new background.
pub fn extract_body_mask(
    pct: &ImageGrid,
    cfg: &BodySegConfig,
    spec: Option<&NormalizationSpec>,
) -> Result<BinaryMask, SegmentationError> {
    cfg.validate()?;
    let fg = threshold_hu(pct, cfg.threshold_hu, f32::INFINITY, spec)?;
    let min_size = cfg.min_component_frac * pct.shape().len() as f64;
    let comps = connected_components(&fg, Connectivity::Eight);
    let mut best: Option<(usize, u32)> = None;
    for (i, &size) in comps.sizes.iter().enumerate() {
        if (size as f64) < min_size {
            continue;
        }
        if best.is_none_or(|(s, _)| size > s) {
            best = Some((size, i as u32 + 1));
        }
    }
    let (_, label) = best.ok_or(SegmentationError::EmptyBody)?;
    let body = fill_holes(&comps.mask_where(|l| l == label));
    let closed = closing(&body, cfg.closing_kernel).or(&body)?;
    let body = keep_largest(&closed).ok_or(SegmentationError::EmptyBody)?;
    Ok(fill_holes(&body))
}

/// Multi-threshold bone mask restricted to `body`.
pub fn extract_bone_mask(
    pct: &ImageGrid,
    body: &BinaryMask,
    cfg: &BoneSegConfig,
    spec: Option<&NormalizationSpec>,
) -> Result<BinaryMask, SegmentationError> {
    cfg.validate()?;
    pct.shape().ensure_same(body.shape())?;
    let hu = hu_view(pct, spec)?;
    let high = threshold(&hu, cfg.high_hu, f32::INFINITY).and(body)?;
    let medium = band(&hu, cfg.medium_hu, cfg.high_hu).and(body)?;
    let low = band(&hu, cfg.low_hu, cfg.medium_hu).and(body)?;

    let bridged = medium.and(&dilate(&high, cfg.bridge_kernel))?;
    let mut bone = high.or(&bridged)?;
    if cfg.include_low_connected {
        bone = grow_into(&bone, &low);
    }
    Ok(remove_small_components(&bone, cfg.min_component_px))
}

/// Half-open band `lo <= v < hi`.
fn band(grid: &ImageGrid, lo: f32, hi: f32) -> BinaryMask {
    let bits = grid.values().iter().map(|&v| lo <= v && v < hi).collect();
    BinaryMask::from_parts(grid.shape(), bits)
}

/// Adds every `candidate` pixel reachable from `seed` through 8-connected
/// candidate pixels.
fn grow_into(seed: &BinaryMask, candidate: &BinaryMask) -> BinaryMask {
    let Shape { height, width } = seed.shape();
    let mut out = seed.bits().to_vec();
    let cand = candidate.bits();
    let mut queue: VecDeque<usize> = (0..out.len()).filter(|&p| out[p]).collect();
    while let Some(p) = queue.pop_front() {
        let (r, c) = ((p / width) as isize, (p % width) as isize);
        for &(dr, dc) in Connectivity::Eight.offsets() {
            let (rr, cc) = (r + dr, c + dc);
            if rr < 0 || cc < 0 || rr as usize >= height || cc as usize >= width {
                continue;
            }
            let q = rr as usize * width + cc as usize;
            if cand[q] && !out[q] {
                out[q] = true;
                queue.push_back(q);
            }
        }
    }
    BinaryMask::from_parts(seed.shape(), out)
}

/// Extracts the `(bone, body)` prior from one planning CT slice.
pub fn build_prior(
    pct: &ImageGrid,
    body_cfg: &BodySegConfig,
    bone_cfg: &BoneSegConfig,
    spec: Option<&NormalizationSpec>,
) -> Result<SegmentationPrior, SegmentationError> {
    let body = extract_body_mask(pct, body_cfg, spec)?;
    let bone = extract_bone_mask(pct, &body, bone_cfg, spec)?;
    SegmentationPrior::new(bone, body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_from_rows(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        let bits = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
        BinaryMask::new(h, w, bits).unwrap()
    }

    fn hu_grid(h: usize, w: usize, fill: f32, patches: &[(usize, usize, f32)]) -> ImageGrid {
        let mut v = vec![fill; h * w];
        for &(r, c, x) in patches {
            v[r * w + c] = x;
        }
        ImageGrid::new(h, w, v, Units::Hu).unwrap()
    }

    fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> BinaryMask {
        BinaryMask::new(h, w, (0..h * w).map(|_| rng.random_bool(p)).collect()).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let g = ImageGrid::new(2, 2, vec![-1000.0, 0.0, 400.0, 1200.0], Units::Hu).unwrap();
        assert_eq!(threshold(&g, -300.0, f32::INFINITY).bits(), &[false, true, true, true]);
        assert!(threshold(&g, 5000.0, 6000.0).is_empty());
        assert_eq!(threshold(&g, f32::NEG_INFINITY, f32::INFINITY).count(), 4);
    }

    #[test]
    fn threshold_hu_on_normalized_grid() {
        let spec = NormalizationSpec::default();
        let g = ImageGrid::new(1, 3, vec![-1.0, 0.0, 1.0], Units::Normalized).unwrap();
        assert_eq!(
            threshold_hu(&g, -300.0, f32::INFINITY, None),
            Err(SegmentationError::UnitMismatch)
        );
        let m = threshold_hu(&g, 400.0, f32::INFINITY, Some(&spec)).unwrap();
        assert_eq!(m.bits(), &[false, true, true]);
    }

    #[test]
    fn dilate_single_pixel_cross() {
        let m = mask_from_rows(&[".....", ".....", "..#..", ".....", "....."]);
        let d = dilate(&m, MorphKernel::Cross3);
        assert_eq!(d, mask_from_rows(&[".....", "..#..", ".###.", "..#..", "....."]));
        assert!(dilate(&BinaryMask::empty(4, 4).unwrap(), MorphKernel::Square3).is_empty());
    }

    #[test]
    fn erode_uses_background_padding() {
        let full = BinaryMask::full(4, 4).unwrap();
        let e = erode(&full, MorphKernel::Square3);
        assert_eq!(e, mask_from_rows(&["....", ".##.", ".##.", "...."]));
    }

    #[test]
    fn disk_offsets() {
        assert_eq!(MorphKernel::Disk { radius: 1 }.offsets().len(), 5);
        assert_eq!(MorphKernel::Disk { radius: 2 }.offsets().len(), 13);
        assert_eq!(MorphKernel::Disk { radius: 3 }.offsets().len(), 29);
        assert!(MorphKernel::Disk { radius: 0 }.validate().is_err());
    }

    #[test]
    fn closing_preserves_interior_pixels() {
        // brute-force check: pixels at least one step from the border stay set
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let m = random_mask(&mut rng, 16, 16, 0.4);
            let c = closing(&m, MorphKernel::Cross3);
            for r in 1..15 {
                for col in 1..15 {
                    if m.get(r, col) {
                        assert!(c.get(r, col));
                    }
                }
            }
        }
    }

    #[test]
    fn fill_holes_ring() {
        let ring = mask_from_rows(&[".......", ".#####.", ".#...#.", ".#...#.", ".#####.", "......."]);
        let filled = fill_holes(&ring);
        assert_eq!(
            filled,
            mask_from_rows(&[".......", ".#####.", ".#####.", ".#####.", ".#####.", "......."])
        );
        assert_eq!(fill_holes(&filled), filled);
        // background touching the border is not a hole
        let open = mask_from_rows(&["#.#", "#.#", "###"]);
        assert_eq!(fill_holes(&open), open);
    }

    #[test]
    fn fill_holes_uses_four_connectivity_for_background() {
        // the centre pixel touches the outside only diagonally
        let m = mask_from_rows(&[".#.", "#.#", ".#."]);
        assert!(fill_holes(&m).get(1, 1));
    }

    #[test]
    fn components_connectivity() {
        let m = mask_from_rows(&["#.", ".#"]);
        assert_eq!(connected_components(&m, Connectivity::Eight).count(), 1);
        let c4 = connected_components(&m, Connectivity::Four);
        assert_eq!(c4.count(), 2);
        assert_eq!(c4.labels, vec![1, 0, 0, 2]);
    }

    #[test]
    fn largest_component_tie_goes_to_first() {
        let m = mask_from_rows(&["##..##", "......", "###..."]);
        let c = connected_components(&m, Connectivity::Eight);
        assert_eq!(c.sizes, vec![2, 2, 3]);
        assert_eq!(c.largest(), Some(3));
        let m = mask_from_rows(&["##..##"]);
        assert_eq!(connected_components(&m, Connectivity::Eight).largest(), Some(1));
    }

    #[test]
    fn body_is_center_block() {
        let mut patches = Vec::new();
        for r in 2..7 {
            for c in 2..7 {
                patches.push((r, c, 0.0));
            }
        }
        let g = hu_grid(9, 9, -1000.0, &patches);
        let body = extract_body_mask(&g, &BodySegConfig::default(), None).unwrap();
        let expect: Vec<bool> = (0..81)
            .map(|p| (2..7).contains(&(p / 9)) && (2..7).contains(&(p % 9)))
            .collect();
        assert_eq!(body.bits(), expect.as_slice());

        // a single air pixel inside the block is filled
        patches.push((4, 4, -1000.0));
        let g = hu_grid(9, 9, -1000.0, &patches);
        let body2 = extract_body_mask(&g, &BodySegConfig::default(), None).unwrap();
        assert_eq!(body2, body);
    }

    #[test]
    fn air_only_slice_has_no_body() {
        let g = hu_grid(16, 16, -1000.0, &[]);
        assert_eq!(
            extract_body_mask(&g, &BodySegConfig::default(), None),
            Err(SegmentationError::EmptyBody)
        );
        assert_eq!(
            build_prior(&g, &BodySegConfig::default(), &BoneSegConfig::default(), None),
            Err(SegmentationError::EmptyBody)
        );
    }

    #[test]
    fn soft_tissue_only_slice_has_empty_bone() {
        let patches: Vec<_> = (4..12).flat_map(|r| (4..12).map(move |c| (r, c, 40.0))).collect();
        let g = hu_grid(16, 16, -1000.0, &patches);
        let prior = build_prior(&g, &BodySegConfig::default(), &BoneSegConfig::default(), None).unwrap();
        assert!(prior.bone.is_empty());
        assert_eq!(prior.body.count(), 64);
    }

    fn bone_fixture(gap_hu: f32) -> (ImageGrid, BinaryMask) {
        let g = hu_grid(7, 9, 0.0, &[(3, 3, 400.0), (3, 4, gap_hu), (3, 5, 400.0)]);
        (g, BinaryMask::full(7, 9).unwrap())
    }

    #[test]
    fn high_block_is_bone() {
        let patches: Vec<_> = (3..6).flat_map(|r| (3..6).map(move |c| (r, c, 800.0))).collect();
        let g = hu_grid(9, 9, 0.0, &patches);
        let body = BinaryMask::full(9, 9).unwrap();
        let cfg = BoneSegConfig {
            min_component_px: 9,
            ..Default::default()
        };
        let bone = extract_bone_mask(&g, &body, &cfg, None).unwrap();
        assert_eq!(bone, threshold(&g, 800.0, 800.0));
    }

    #[test]
    fn medium_gap_is_bridged() {
        let (g, body) = bone_fixture(200.0);
        let cfg = BoneSegConfig {
            min_component_px: 3,
            ..Default::default()
        };
        let bone = extract_bone_mask(&g, &body, &cfg, None).unwrap();
        assert_eq!(bone.count(), 3);
        assert!(bone.get(3, 3) && bone.get(3, 4) && bone.get(3, 5));
    }

    #[test]
    fn sub_low_gap_is_not_bridged() {
        // the 50 HU gap is below every band: two isolated single-pixel
        // components that live or die by the size filter
        let (g, body) = bone_fixture(50.0);
        for (min_px, expect) in [(1, 2), (2, 0)] {
            let cfg = BoneSegConfig {
                min_component_px: min_px,
                ..Default::default()
            };
            let bone = extract_bone_mask(&g, &body, &cfg, None).unwrap();
            assert_eq!(bone.count(), expect, "min_component_px = {min_px}");
            assert!(!bone.get(3, 4));
        }
    }

    #[test]
    fn low_pixels_join_only_when_connected() {
        let g = hu_grid(5, 9, 0.0, &[(2, 1, 500.0), (2, 2, 120.0), (2, 3, 120.0), (2, 7, 120.0)]);
        let body = BinaryMask::full(5, 9).unwrap();
        let mut cfg = BoneSegConfig {
            min_component_px: 1,
            ..Default::default()
        };
        let bone = extract_bone_mask(&g, &body, &cfg, None).unwrap();
        assert_eq!(bone.count(), 3);
        assert!(!bone.get(2, 7));
        cfg.include_low_connected = false;
        assert_eq!(extract_bone_mask(&g, &body, &cfg, None).unwrap().count(), 1);
    }

    #[test]
    fn bone_respects_body() {
        let g = hu_grid(5, 5, 900.0, &[]);
        let body = mask_from_rows(&[".....", ".###.", ".###.", ".###.", "....."]);
        let cfg = BoneSegConfig {
            min_component_px: 1,
            ..Default::default()
        };
        let bone = extract_bone_mask(&g, &body, &cfg, None).unwrap();
        assert_eq!(bone, body);
    }

    #[test]
    fn config_validation() {
        let bad = BoneSegConfig {
            low_hu: 200.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = BodySegConfig {
            min_component_frac: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn morphology_independent_of_thread_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_mask(&mut rng, 64, 48, 0.3);
        let k = MorphKernel::Disk { radius: 3 };
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(6).build().unwrap();
        let a = single.install(|| closing(&m, k));
        let b = many.install(|| closing(&m, k));
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn morphology_monotone(bits in proptest::collection::vec(any::<bool>(), 12 * 10)) {
            let m = BinaryMask::new(12, 10, bits).unwrap();
            for k in [MorphKernel::Cross3, MorphKernel::Square3, MorphKernel::Disk { radius: 2 }] {
                prop_assert!(m.is_subset_of(&dilate(&m, k)));
                prop_assert!(erode(&m, k).is_subset_of(&m));
            }
            let f = fill_holes(&m);
            prop_assert!(m.is_subset_of(&f));
            prop_assert_eq!(fill_holes(&f), f);
        }

        #[test]
        fn component_sizes_partition(bits in proptest::collection::vec(any::<bool>(), 9 * 11)) {
            let m = BinaryMask::new(9, 11, bits).unwrap();
            for conn in [Connectivity::Four, Connectivity::Eight] {
                let c = connected_components(&m, conn);
                prop_assert_eq!(c.sizes.iter().sum::<usize>(), m.count());
            }
        }

        #[test]
        fn body_mask_single_component_without_holes(
            bits in proptest::collection::vec(proptest::bool::weighted(0.6), 20 * 20)
        ) {
            let vals: Vec<f32> = bits.iter().map(|&b| if b { 20.0 } else { -1000.0 }).collect();
            let g = ImageGrid::new(20, 20, vals, Units::Hu).unwrap();
            if let Ok(body) = extract_body_mask(&g, &BodySegConfig::default(), None) {
                prop_assert_eq!(connected_components(&body, Connectivity::Eight).count(), 1);
                prop_assert_eq!(fill_holes(&body), body.clone());
                let bone = extract_bone_mask(&g, &body, &BoneSegConfig::default(), None).unwrap();
                prop_assert!(bone.is_subset_of(&body));
            }
        }
    }
}
