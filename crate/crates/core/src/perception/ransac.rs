//! RANSAC line fit for needle points.

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PerceptionError;
use crate::phantom::Vec3;

/// A 3D line through the needle points, oriented into the tissue (+z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeedleLine {
    pub point: Vec3,
    pub direction: Vec3,
    pub inlier_count: usize,
    pub inlier_threshold: f64,
}

impl NeedleLine {
    pub fn distance(&self, p: &Vec3) -> f64 {
        line_distance(&self.point, &self.direction, p)
    }

    /// Signed coordinate of `p` along the line direction.
    pub fn project(&self, p: &Vec3) -> f64 {
        (p - self.point).dot(&self.direction)
    }
}

fn line_distance(origin: &Vec3, dir: &Vec3, p: &Vec3) -> f64 {
    (p - origin).cross(dir).norm()
}

fn orient(dir: Vec3) -> Vec3 {
    if dir.z < 0.0 || (dir.z == 0.0 && dir.x < 0.0) {
        -dir
    } else {
        dir
    }
}

fn count_inliers(points: &[Vec3], origin: &Vec3, dir: &Vec3, threshold: f64) -> usize {
    let t2 = threshold * threshold;
    points.iter().filter(|p| (*p - origin).cross(dir).norm_squared() <= t2).count()
}

/// Inlier count if it exceeds `floor`; gives up as soon as `floor` is out
/// of reach.
fn count_inliers_above(points: &[Vec3], origin: &Vec3, dir: &Vec3, threshold: f64, floor: usize) -> Option<usize> {
    let t2 = threshold * threshold;
    let mut count = 0;
    for (k, p) in points.iter().enumerate() {
        if count + (points.len() - k) <= floor {
            return None;
        }
        if (p - origin).cross(dir).norm_squared() <= t2 {
            count += 1;
        }
    }
    (count > floor).then_some(count)
}

/// Least-squares line (centroid + principal axis) through `points`.
pub fn fit_line_lsq(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let (k, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(lambda > 0.0) {
        return None;
    }
    let dir = eig.eigenvectors.column(k).into_owned().normalize();
    Some((centroid, orient(dir)))
}

/// Fits a line to needle points with RANSAC over two-point hypotheses.
///
/// The hypothesis with the most inliers (earliest on ties) is refined by a
/// least-squares fit over its inliers; `inlier_count` is reported for the
/// refined line.
pub fn fit_needle_line(
    points: &[Vec3],
    threshold: f64,
    iterations: usize,
    seed: u64,
) -> Result<NeedleLine, PerceptionError> {
    if points.len() < 2 {
        return Err(PerceptionError::NoNeedle { found: points.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, Vec3, Vec3)> = None;
    for _ in 0..iterations.max(1) {
        let i = rng.random_range(0..points.len());
        let mut j = rng.random_range(0..points.len() - 1);
        if j >= i {
            j += 1;
        }
        let d = points[j] - points[i];
        let len = d.norm();
        if !(len > 1e-9) {
            continue;
        }
        let dir = d / len;
        let to_beat = best.as_ref().map_or(0, |b| b.0);
        if let Some(count) = count_inliers_above(points, &points[i], &dir, threshold, to_beat) {
            best = Some((count, points[i], dir));
        }
    }
    let Some((_, origin, dir)) = best else {
        return Err(PerceptionError::DegenerateNeedle);
    };
    let inliers: Vec<Vec3> = points
        .iter()
        .filter(|p| line_distance(&origin, &dir, p) <= threshold)
        .copied()
        .collect();
    let (point, direction) = fit_line_lsq(&inliers).unwrap_or((origin, orient(dir)));
    let inlier_count = count_inliers(points, &point, &direction, threshold);
    Ok(NeedleLine { point, direction, inlier_count, inlier_threshold: threshold })
}
