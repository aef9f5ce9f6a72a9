//! Lung-area-driven slice selection.
//!
//! Every slice of a volume gets a lung-area estimate; the top fraction by
//! area is kept, put back into anatomical order, and `k` slices are taken
//! at equal spacing along the kept list.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Volume};

pub const DEFAULT_KEEP_FRACTION: f64 = 0.5;
pub const DEFAULT_K_TRAIN: usize = 12;
pub const DEFAULT_K_TEST: usize = 40;

const MIN_AREA_DIM: usize = 8;
const HISTOGRAM_BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub keep_fraction: f64,
    pub k_train: usize,
    pub k_test: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            keep_fraction: DEFAULT_KEEP_FRACTION,
            k_train: DEFAULT_K_TRAIN,
            k_test: DEFAULT_K_TEST,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "keep_fraction must be in (0, 1], got {}",
                self.keep_fraction
            )));
        }
        if self.k_train == 0 || self.k_test == 0 {
            return Err(Error::InvalidArgument("k_train and k_test must be positive".into()));
        }
        Ok(())
    }

    pub fn k_for(&self, mode: Mode) -> usize {
        match mode {
            Mode::Train => self.k_train,
            Mode::Test => self.k_test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceRecord {
    pub index: usize,
    pub area: usize,
}

fn histogram_bin(p: f32) -> usize {
    ((p.clamp(0.0, 1.0) * HISTOGRAM_BINS as f32) as usize).min(HISTOGRAM_BINS - 1)
}

/// Otsu's method over a 256-bin histogram. Returns the last bin of the dark
/// class, or `None` when no split separates two non-empty classes.
pub fn otsu_dark_bin(image: &Image) -> Option<usize> {
    let mut hist = [0u64; HISTOGRAM_BINS];
    for &p in image.pixels() {
        hist[histogram_bin(p)] += 1;
    }
    let total = image.pixels().len() as f64;
    let total_sum: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();

    let mut best: Option<(usize, f64)> = None;
    let (mut w_dark, mut sum_dark) = (0.0, 0.0);
    for (bin, &count) in hist.iter().enumerate() {
        w_dark += count as f64;
        sum_dark += bin as f64 * count as f64;
        let w_bright = total - w_dark;
        if w_dark == 0.0 {
            continue;
        }
        if w_bright == 0.0 {
            break;
        }
        let mean_dark = sum_dark / w_dark;
        let mean_bright = (total_sum - sum_dark) / w_bright;
        let between = w_dark * w_bright * (mean_dark - mean_bright).powi(2);
        if between > 0.0 && best.is_none_or(|(_, v)| between > v) {
            best = Some((bin, between));
        }
    }
    best.map(|(bin, _)| bin)
}

/// Pixel count of the two largest dark, 4-connected components that do not
/// touch the image border. "Dark" means below the image's Otsu threshold.
pub fn estimate_lung_area(image: &Image) -> Result<usize> {
    let (h, w) = (image.height(), image.width());
    if h < MIN_AREA_DIM || w < MIN_AREA_DIM {
        return Err(Error::InvalidArgument(format!(
            "lung-area estimation needs at least {MIN_AREA_DIM}x{MIN_AREA_DIM} pixels, got {h}x{w}"
        )));
    }
    let Some(dark_bin) = otsu_dark_bin(image) else {
        return Ok(0);
    };
    let dark: Vec<bool> = image.pixels().iter().map(|&p| histogram_bin(p) <= dark_bin).collect();

    let mut seen = vec![false; h * w];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !dark[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut size, mut touches_border) = (0usize, false);
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (y, x) = (p / w, p % w);
            if y == 0 || x == 0 || y == h - 1 || x == w - 1 {
                touches_border = true;
            }
            let neighbours = [
                (y > 0).then(|| p - w),
                (y + 1 < h).then(|| p + w),
                (x > 0).then(|| p - 1),
                (x + 1 < w).then(|| p + 1),
            ];
            for q in neighbours.into_iter().flatten() {
                if dark[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
        if !touches_border {
            sizes.push(size);
        }
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    Ok(sizes.iter().take(2).sum())
}

fn ceil_fraction(n: usize, fraction: f64) -> usize {
    // Guard against products like 30 * 0.1 = 3.0000000000000004.
    let raw = n as f64 * fraction;
    let rounded = raw.round();
    let count = if (raw - rounded).abs() < 1e-9 { rounded } else { raw.ceil() };
    (count as usize).clamp(1, n)
}

/// Keeps the `ceil(n * keep_fraction)` largest-area records (ties go to the
/// smaller index), returned in ascending index order.
pub fn keep_top_fraction(records: &[SliceRecord], keep_fraction: f64) -> Result<Vec<SliceRecord>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no slice records to rank".into()));
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep_fraction must be in (0, 1], got {keep_fraction}"
        )));
    }
    let keep = ceil_fraction(records.len(), keep_fraction);
    let mut ranked = records.to_vec();
    ranked.sort_by(|a, b| b.area.cmp(&a.area).then(a.index.cmp(&b.index)));
    ranked.truncate(keep);
    ranked.sort_by_key(|r| r.index);
    Ok(ranked)
}

/// `k` positions spread evenly over a kept list of length `m`.
pub fn equally_spaced_indices(m: usize, k: usize) -> Result<Vec<usize>> {
    if m == 0 || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "equal spacing needs m >= 1 and k >= 1, got m={m}, k={k}"
        )));
    }
    if m <= k {
        return Ok((0..m).collect());
    }
    if k == 1 {
        return Ok(vec![(m - 1) / 2]);
    }
    Ok((0..k).map(|j| j * (m - 1) / (k - 1)).collect())
}

/// Lung-area record for every slice of `volume`.
pub fn slice_records(volume: &Volume) -> Result<Vec<SliceRecord>> {
    volume
        .slices()
        .iter()
        .enumerate()
        .map(|(index, img)| Ok(SliceRecord { index, area: estimate_lung_area(img)? }))
        .collect()
}

/// Original slice indices chosen for `mode`, ascending.
pub fn select_indices(volume: &Volume, config: &SelectionConfig, mode: Mode) -> Result<Vec<usize>> {
    config.validate()?;
    let records = slice_records(volume)?;
    let kept = keep_top_fraction(&records, config.keep_fraction)?;
    let positions = equally_spaced_indices(kept.len(), config.k_for(mode))?;
    Ok(positions.into_iter().map(|p| kept[p].index).collect())
}

/// The selected `(original index, slice)` pairs in anatomical order.
pub fn select_slices<'a>(
    volume: &'a Volume,
    config: &SelectionConfig,
    mode: Mode,
) -> Result<Vec<(usize, &'a Image)>> {
    let indices = select_indices(volume, config, mode)?;
    Ok(indices.into_iter().map(|i| (i, &volume.slices()[i])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn white_with_square(size: usize, top: usize, left: usize, side: usize) -> Image {
        let mut img = Image::filled(size, size, 1.0).unwrap();
        for y in top..top + side {
            for x in left..left + side {
                img.set(y, x, 0.0);
            }
        }
        img
    }

    fn records(areas: &[usize]) -> Vec<SliceRecord> {
        areas
            .iter()
            .enumerate()
            .map(|(index, &area)| SliceRecord { index, area })
            .collect()
    }

    #[test]
    fn all_white_has_no_lung() {
        assert_eq!(estimate_lung_area(&Image::filled(64, 64, 1.0).unwrap()).unwrap(), 0);
        assert_eq!(estimate_lung_area(&Image::filled(16, 16, 0.3).unwrap()).unwrap(), 0);
    }

    #[test]
    fn centred_square_is_counted() {
        let img = white_with_square(64, 27, 27, 10);
        let direct = img.pixels().iter().filter(|&&p| p < 0.5).count();
        assert_eq!(direct, 100);
        assert_eq!(estimate_lung_area(&img).unwrap(), 100);
    }

    #[test]
    fn border_region_is_excluded() {
        let img = white_with_square(64, 0, 20, 10);
        assert_eq!(estimate_lung_area(&img).unwrap(), 0);
    }

    #[test]
    fn only_two_largest_components_count() {
        let mut img = white_with_square(64, 5, 5, 10);
        for (top, left, side) in [(30, 30, 6), (50, 10, 3)] {
            for y in top..top + side {
                for x in left..left + side {
                    img.set(y, x, 0.0);
                }
            }
        }
        assert_eq!(estimate_lung_area(&img).unwrap(), 100 + 36);
    }

    #[test]
    fn tiny_images_are_rejected() {
        assert!(estimate_lung_area(&Image::filled(7, 64, 1.0).unwrap()).is_err());
    }

    #[test]
    fn keep_fraction_counts() {
        assert_eq!(keep_top_fraction(&records(&[1; 100]), 0.5).unwrap().len(), 50);
        assert_eq!(keep_top_fraction(&records(&[1]), 0.5).unwrap().len(), 1);
        assert_eq!(keep_top_fraction(&records(&[1; 7]), 0.5).unwrap().len(), 4);
        assert_eq!(keep_top_fraction(&records(&[1; 30]), 0.1).unwrap().len(), 3);
        assert!(keep_top_fraction(&[], 0.5).is_err());
        assert!(keep_top_fraction(&records(&[1]), 0.0).is_err());
    }

    #[test]
    fn keep_ties_go_to_smaller_index() {
        let kept = keep_top_fraction(&records(&[5, 9, 9, 1]), 0.5).unwrap();
        let idx: Vec<usize> = kept.iter().map(|r| r.index).collect();
        assert_eq!(idx, vec![1, 2]);

        let kept = keep_top_fraction(&records(&[9, 5, 9, 9]), 0.5).unwrap();
        let idx: Vec<usize> = kept.iter().map(|r| r.index).collect();
        assert_eq!(idx, vec![0, 2]);
    }

    #[test]
    fn spacing_examples() {
        assert_eq!(
            equally_spaced_indices(50, 12).unwrap(),
            vec![0, 4, 8, 13, 17, 22, 26, 31, 35, 40, 44, 49]
        );
        assert_eq!(equally_spaced_indices(12, 12).unwrap(), (0..12).collect::<Vec<_>>());
        assert_eq!(equally_spaced_indices(5, 40).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(equally_spaced_indices(9, 1).unwrap(), vec![4]);
        assert!(equally_spaced_indices(0, 3).is_err());
    }

    #[test]
    fn six_slice_volume_trace() {
        // Square sides 4,8,6,2,10,3 give areas 16,64,36,4,100,9.
        let sides = [4, 8, 6, 2, 10, 3];
        let slices = sides.iter().map(|&s| white_with_square(32, 10, 10, s)).collect();
        let vol = Volume::new("p6", slices).unwrap();
        let recs = slice_records(&vol).unwrap();
        let areas: Vec<usize> = recs.iter().map(|r| r.area).collect();
        assert_eq!(areas, vec![16, 64, 36, 4, 100, 9]);
        // Top ceil(6/2)=3 by area: indices 4, 1, 2 -> sorted [1, 2, 4]; 3 <= 12 so all kept.
        let picked = select_slices(&vol, &SelectionConfig::default(), Mode::Train).unwrap();
        let idx: Vec<usize> = picked.iter().map(|(i, _)| *i).collect();
        assert_eq!(idx, vec![1, 2, 4]);
    }
}
