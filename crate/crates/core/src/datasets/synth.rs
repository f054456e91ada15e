use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::tensor::Tensor;

/// Radius of the blob centers at `overlap = 0`, in units of the cluster
/// standard deviation.
pub const BLOB_RADIUS: f64 = 4.5;

/// Balanced labels `0, 1, .., C-1, 0, ..` in seeded random order.
fn balanced_labels(n: usize, classes: usize, r: &mut impl Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(r);
    labels
}

/// `n` points from `classes` unit-variance Gaussian clusters in `dim`
/// dimensions.
///
/// Centers sit evenly on a circle in the first two coordinates with radius
/// `BLOB_RADIUS * (1 - overlap)`; the remaining coordinates are pure noise.
/// `overlap = 0` gives nearly separable classes, `overlap = 1` coincident
/// centers (labels independent of inputs).
pub fn synth_blobs(n: usize, classes: usize, overlap: f64, dim: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 || n < classes {
        return Err(Error::invalid(format!("need n >= classes >= 2, got n={n}, classes={classes}")));
    }
    if dim < 2 {
        return Err(Error::invalid(format!("dim must be at least 2, got {dim}")));
    }
    if !(0.0..=1.0).contains(&overlap) {
        return Err(Error::invalid(format!("overlap must be in [0, 1], got {overlap}")));
    }
    let radius = BLOB_RADIUS * (1.0 - overlap);
    let mut r = rng::stream(seed, Domain::Data, 0, 0);
    let labels = balanced_labels(n, classes, &mut r);
    let mut data = Vec::with_capacity(n * dim);
    for &l in &labels {
        let angle = 2.0 * PI * l as f64 / classes as f64;
        for d in 0..dim {
            let center = match d {
                0 => radius * angle.cos(),
                1 => radius * angle.sin(),
                _ => 0.0,
            };
            data.push(center + r.sample::<f64, _>(StandardNormal));
        }
    }
    let names = (0..classes).map(|k| format!("blob{k}")).collect();
    Dataset::new(Tensor::new(vec![n, dim], data)?, labels, names, Provenance::SyntheticBlobs)
}

pub fn texture_class_names() -> Vec<String> {
    ["h-stripes", "v-stripes", "radial-blob", "checkerboard"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Noise-free pattern for one texture class, values in `[0, 1]`.
fn texture(class: usize, size: usize, r: &mut impl Rng) -> Vec<f64> {
    let period = r.random_range(2..=4usize);
    let phase_r = r.random_range(0..2 * period);
    let phase_c = r.random_range(0..2 * period);
    let band = |i: usize, phase: usize| ((i + phase) / period) % 2;
    let mut img = vec![0.0; size * size];
    match class {
        0 => {
            for (i, v) in img.iter_mut().enumerate() {
                *v = band(i / size, phase_r) as f64;
            }
        }
        1 => {
            for (i, v) in img.iter_mut().enumerate() {
                *v = band(i % size, phase_c) as f64;
            }
        }
        2 => {
            let s = size as f64;
            let cy = r.random_range(0.3 * s..0.7 * s);
            let cx = r.random_range(0.3 * s..0.7 * s);
            let width = r.random_range(s / 6.0..s / 3.0);
            for (i, v) in img.iter_mut().enumerate() {
                let dy = (i / size) as f64 + 0.5 - cy;
                let dx = (i % size) as f64 + 0.5 - cx;
                *v = (-(dy * dy + dx * dx) / (2.0 * width * width)).exp();
            }
        }
        _ => {
            for (i, v) in img.iter_mut().enumerate() {
                *v = (band(i / size, phase_r) ^ band(i % size, phase_c)) as f64;
            }
        }
    }
    img
}

/// `n` single-channel `size x size` images from four procedural texture
/// families: horizontal stripes, vertical stripes, a radial blob and a
/// checkerboard, each with random period/phase or position, plus Gaussian
/// pixel noise with standard deviation `noise`.
pub fn synth_textures(n: usize, size: usize, noise: f64, seed: u64) -> Result<Dataset> {
    const CLASSES: usize = 4;
    if size < 8 {
        return Err(Error::invalid(format!("image size must be at least 8, got {size}")));
    }
    if n < CLASSES {
        return Err(Error::invalid(format!("need at least {CLASSES} images, got {n}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid(format!("noise must be a nonnegative number, got {noise}")));
    }
    let mut r = rng::stream(seed, Domain::Data, 1, 0);
    let labels = balanced_labels(n, CLASSES, &mut r);
    let mut data = Vec::with_capacity(n * size * size);
    for &l in &labels {
        let img = texture(l, size, &mut r);
        data.extend(img.into_iter().map(|v| v + noise * r.sample::<f64, _>(StandardNormal)));
    }
    Dataset::new(
        Tensor::new(vec![n, 1, size, size], data)?,
        labels,
        texture_class_names(),
        Provenance::SyntheticTextures,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let a = synth_blobs(400, 4, 0.3, 3, 9).unwrap();
        let b = synth_blobs(400, 4, 0.3, 3, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![100; 4]);
        assert_eq!(a.example_shape(), &[3]);
        assert_ne!(a, synth_blobs(400, 4, 0.3, 3, 10).unwrap());
    }

    #[test]
    fn blobs_validate_arguments() {
        assert!(synth_blobs(3, 4, 0.0, 2, 0).is_err());
        assert!(synth_blobs(10, 4, 1.5, 2, 0).is_err());
        assert!(synth_blobs(10, 4, 0.5, 1, 0).is_err());
    }

    #[test]
    fn coincident_centers_have_equal_class_means() {
        let ds = synth_blobs(8000, 4, 1.0, 2, 1).unwrap();
        for k in 0..4 {
            let rows: Vec<&[f64]> = (0..ds.len()).filter(|&i| ds.labels()[i] == k).map(|i| ds.inputs().row(i)).collect();
            let mx = rows.iter().map(|r| r[0]).sum::<f64>() / rows.len() as f64;
            assert!(mx.abs() < 0.1, "{mx}");
        }
    }

    #[test]
    fn noise_free_horizontal_stripes() {
        let ds = synth_textures(40, 16, 0.0, 3).unwrap();
        let i = ds.labels().iter().position(|&l| l == 0).unwrap();
        let img = ds.inputs().row(i);
        for r in 0..16 {
            let row = &img[r * 16..(r + 1) * 16];
            assert!(row.iter().all(|&v| v == row[0]), "row {r} not constant");
        }
        let col: Vec<f64> = (0..16).map(|r| img[r * 16]).collect();
        assert!(col.iter().all(|&v| v == 0.0 || v == 1.0));
        // Runs of equal values have the stripe period (except at the edges).
        let mut runs = Vec::new();
        let mut len = 1;
        for w in col.windows(2) {
            if w[0] == w[1] {
                len += 1;
            } else {
                runs.push(len);
                len = 1;
            }
        }
        assert!(runs.len() >= 3);
        let inner = &runs[1..];
        assert!(inner.iter().all(|&l| l == inner[0]) && (2..=4).contains(&inner[0]));
    }

    #[test]
    fn textures_are_deterministic() {
        let a = synth_textures(12, 8, 0.5, 4).unwrap();
        let b = synth_textures(12, 8, 0.5, 4).unwrap();
        assert!(a.inputs().data().iter().zip(b.inputs().data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.example_shape(), &[1, 8, 8]);
        assert!(synth_textures(12, 7, 0.0, 0).is_err());
    }
}
