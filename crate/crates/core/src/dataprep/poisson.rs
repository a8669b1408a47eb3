use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mesh::{HouseMesh, Point};
use super::DataError;

#[derive(Clone, Debug, PartialEq)]
pub struct PoissonSample {
    pub points: Vec<Point>,
    /// Final acceptance radius; no two points are closer than this.
    pub radius: f64,
}

/// Consecutive rejections tolerated before the radius shrinks.
const MAX_MISSES: usize = 64;
const RADIUS_DECAY: f64 = 0.9;

/// Dart throwing on the surface with a geometrically shrinking radius until
/// exactly `n` points are accepted.
pub fn poisson_sample_surface(mesh: &HouseMesh, n: usize, seed: u64) -> Result<PoissonSample, DataError> {
    let areas: Vec<f64> = mesh.triangles.iter().map(|t| t.area()).collect();
    let total: f64 = areas.iter().sum();
    if mesh.is_empty() || total <= 0.0 {
        return Err(DataError::EmptyMesh);
    }
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cumulative.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Point {
        let u = rng.random::<f64>() * total;
        let i = cumulative.partition_point(|&c| c <= u).min(areas.len() - 1);
        let [a, b, c] = mesh.triangles[i].vertices;
        let (mut s, mut t) = (rng.random::<f64>(), rng.random::<f64>());
        if s + t > 1.0 {
            s = 1.0 - s;
            t = 1.0 - t;
        }
        [0, 1, 2].map(|k| a[k] + s * (b[k] - a[k]) + t * (c[k] - a[k]))
    };

    // Start from the spacing of a hexagonal packing with n disks.
    let mut radius = (2.0 * total / (n.max(1) as f64 * 3f64.sqrt())).sqrt();
    let mut points: Vec<Point> = Vec::with_capacity(n);
    let mut misses = 0;
    while points.len() < n {
        let p = draw(&mut rng);
        let ok = points.iter().all(|q| {
            let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() >= radius
        });
        if ok {
            points.push(p);
            misses = 0;
        } else {
            misses += 1;
            if misses >= MAX_MISSES {
                radius *= RADIUS_DECAY;
                misses = 0;
            }
        }
    }
    Ok(PoissonSample { points, radius })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::PartLabel;

    fn cube(edge: f64) -> HouseMesh {
        let mut m = HouseMesh::default();
        m.add_box("wall", PartLabel::Wall, [0.0; 3], [edge; 3]);
        m
    }

    #[test]
    fn exact_count_and_spacing() {
        let s = poisson_sample_surface(&cube(10.0), 100, 7).unwrap();
        assert_eq!(s.points.len(), 100);
        assert!(s.radius > 0.0);
        for (i, p) in s.points.iter().enumerate() {
            assert!(p.iter().all(|&c| (-1e-9..=10.0 + 1e-9).contains(&c)));
            assert!(p.iter().any(|&c| c.abs() < 1e-9 || (c - 10.0).abs() < 1e-9), "point off surface");
            for q in &s.points[..i] {
                let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                assert!(d >= s.radius && d > 0.0);
            }
        }
    }

    #[test]
    fn single_point_and_determinism() {
        assert_eq!(poisson_sample_surface(&cube(1.0), 1, 3).unwrap().points.len(), 1);
        assert_eq!(poisson_sample_surface(&cube(4.0), 30, 11).unwrap(), poisson_sample_surface(&cube(4.0), 30, 11).unwrap());
        assert!(matches!(poisson_sample_surface(&HouseMesh::default(), 3, 0), Err(DataError::EmptyMesh)));
    }
}
