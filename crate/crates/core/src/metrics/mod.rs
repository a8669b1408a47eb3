//! Chamfer-based shape-set metrics (COV, MMD, 1-NNA), completion metrics
//! (UHD, TMD) and novelty histograms.

mod points;
mod report;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use thiserror::Error;

pub use points::{grid_to_points, PointSet, DEFAULT_MAX_POINTS};
pub use report::{novelty_histogram, MetricReport, NoveltyReport, NoveltyRow};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("need at least {needed} shapes, got {got}")]
    TooFew { needed: usize, got: usize },
}

/// Point set with a nearest-neighbour index.
pub struct Indexed<'a> {
    pub points: &'a [[f64; 3]],
    tree: ImmutableKdTree<f64, 3>,
}

impl<'a> Indexed<'a> {
    pub fn new(set: &'a PointSet) -> Result<Self, MetricError> {
        if set.is_empty() {
            return Err(MetricError::Empty("point set"));
        }
        let tree = ImmutableKdTree::new_from_slice(&set.points).map_err(|_| MetricError::Empty("point set"))?;
        Ok(Indexed { points: &set.points, tree })
    }

    /// Squared distance from `q` to its nearest point.
    pub fn nearest_sq(&self, q: &[f64; 3]) -> f64 {
        self.tree.query(q).nearest_one::<SquaredEuclidean<f64>>().execute().distance
    }

    /// Mean squared nearest distance from every point of `other` into `self`.
    fn mean_sq_from(&self, other: &Indexed) -> f64 {
        other.points.iter().map(|p| self.nearest_sq(p)).sum::<f64>() / other.points.len() as f64
    }
}

/// Squared-distance Chamfer between two prepared sets.
pub fn chamfer_indexed(p: &Indexed, q: &Indexed) -> f64 {
    q.mean_sq_from(p) + p.mean_sq_from(q)
}

pub fn chamfer(p: &PointSet, q: &PointSet) -> Result<f64, MetricError> {
    Ok(chamfer_indexed(&Indexed::new(p)?, &Indexed::new(q)?))
}

fn index_all<'a>(sets: &'a [PointSet], what: &'static str) -> Result<Vec<Indexed<'a>>, MetricError> {
    if sets.is_empty() {
        return Err(MetricError::Empty(what));
    }
    sets.iter().map(Indexed::new).collect()
}

/// `a.len() × b.len()` Chamfer distances.
pub fn chamfer_matrix(a: &[PointSet], b: &[PointSet]) -> Result<Vec<Vec<f64>>, MetricError> {
    let ia = index_all(a, "first list")?;
    let ib = index_all(b, "second list")?;
    Ok(ia.iter().map(|x| ib.iter().map(|y| chamfer_indexed(x, y)).collect()).collect())
}

/// First index of the minimum; NaN never occurs for finite points.
fn argmin(values: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    values.enumerate().fold(None, |best, (i, v)| match best {
        Some((_, bv)) if bv <= v => best,
        _ => Some((i, v)),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SetMetrics {
    pub cov: f64,
    pub mmd: f64,
    pub one_nna: f64,
}

/// COV, MMD and leave-one-out 1-NN accuracy between generated and reference shapes.
///
/// Nearest-neighbour ties resolve to the lowest index; for 1-NNA the union is
/// ordered generated first, then reference.
pub fn cov_mmd_1nna(generated: &[PointSet], reference: &[PointSet]) -> Result<SetMetrics, MetricError> {
    let ig = index_all(generated, "generated")?;
    let ir = index_all(reference, "reference")?;
    let (ng, nr) = (ig.len(), ir.len());
    if ng + nr < 2 {
        return Err(MetricError::TooFew { needed: 2, got: ng + nr });
    }
    let union: Vec<&Indexed> = ig.iter().chain(ir.iter()).collect();
    let n = union.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..i {
            let v = chamfer_indexed(union[i], union[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    let gr = |g: usize, r: usize| d[g][ng + r];

    let mut covered = vec![false; nr];
    for g in 0..ng {
        let (r, _) = argmin((0..nr).map(|r| gr(g, r))).expect("non-empty reference");
        covered[r] = true;
    }
    let cov = covered.iter().filter(|&&c| c).count() as f64 / nr as f64;
    let mmd = (0..nr).map(|r| argmin((0..ng).map(|g| gr(g, r))).unwrap().1).sum::<f64>() / nr as f64;

    let mut correct = 0usize;
    for i in 0..n {
        let (j, _) = argmin((0..n).filter(|&j| j != i).map(|j| d[i][j]))
            .map(|(k, v)| (if k >= i { k + 1 } else { k }, v))
            .expect("union has another member");
        correct += ((i < ng) == (j < ng)) as usize;
    }
    Ok(SetMetrics { cov, mmd, one_nna: correct as f64 / n as f64 })
}

/// Mean over completions of the largest distance from a partial-input point to
/// the completion.
pub fn uhd(partial: &PointSet, completions: &[PointSet]) -> Result<f64, MetricError> {
    if partial.is_empty() {
        return Err(MetricError::Empty("partial"));
    }
    let ic = index_all(completions, "completions")?;
    let total: f64 = ic
        .iter()
        .map(|c| partial.points.iter().map(|p| c.nearest_sq(p)).fold(0.0, f64::max).sqrt())
        .sum();
    Ok(total / ic.len() as f64)
}

/// Sum over completions of their mean Chamfer distance to the others.
pub fn tmd(completions: &[PointSet]) -> Result<f64, MetricError> {
    let k = completions.len();
    if k < 2 {
        return Err(MetricError::TooFew { needed: 2, got: k });
    }
    let d = chamfer_matrix(completions, completions)?;
    Ok((0..k).map(|i| (0..k).filter(|&j| j != i).map(|j| d[i][j]).sum::<f64>() / (k - 1) as f64).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(points: &[[f64; 3]]) -> PointSet {
        PointSet::new(points.to_vec())
    }

    #[test]
    fn chamfer_hand_cases() {
        let p = set(&[[0.0, 0.0, 0.0]]);
        let q = set(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&p, &q).unwrap(), 2.0);
        assert_eq!(chamfer(&p, &p).unwrap(), 0.0);
        assert!(chamfer(&p, &PointSet::new(vec![])).is_err());
    }

    #[test]
    fn uhd_and_tmd_hand_cases() {
        let partial = set(&[[0.0; 3], [0.1, 0.0, 0.0]]);
        let superset = set(&[[0.0; 3], [0.1, 0.0, 0.0], [0.3, 0.3, 0.3]]);
        assert_eq!(uhd(&partial, &[superset.clone()]).unwrap(), 0.0);
        let missing = set(&[[0.0; 3]]);
        assert!((uhd(&partial, &[missing.clone()]).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(tmd(&[superset.clone(), superset.clone(), superset.clone()]).unwrap(), 0.0);
        let cd = chamfer(&superset, &missing).unwrap();
        assert!((tmd(&[superset, missing]).unwrap() - 2.0 * cd).abs() < 1e-15);
        assert!(tmd(&[partial]).is_err());
    }

    #[test]
    fn identical_lists() {
        let shapes: Vec<PointSet> = (0..4).map(|i| set(&[[i as f64, 0.0, 0.0], [i as f64, 1.0, 0.5]])).collect();
        let m = cov_mmd_1nna(&shapes, &shapes).unwrap();
        assert_eq!(m, SetMetrics { cov: 1.0, mmd: 0.0, one_nna: 0.0 });
        assert!(cov_mmd_1nna(&shapes[..1], &[]).is_err());
    }
}
