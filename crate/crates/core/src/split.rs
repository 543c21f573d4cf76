//! Sample partitioning on mean spectra: PCA scores, Mahalanobis distance and
//! a k-way DUPLEX split.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// PCA projection of a sample set.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    /// `n x d` scores.
    pub scores: DMatrix<f64>,
    /// Fraction of total variance for each retained component, non-increasing.
    pub explained_variance_ratio: Vec<f64>,
    pub mean: DVector<f64>,
    /// `p x d` orthonormal loadings.
    pub basis: DMatrix<f64>,
}

impl ScoreSet {
    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn d(&self) -> usize {
        self.scores.ncols()
    }

    /// Projects new rows onto the retained basis.
    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        centered * &self.basis
    }

    /// Maps scores back to the original space.
    pub fn reconstruct(&self, scores: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = scores * self.basis.transpose();
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        x
    }

    /// Sample covariance (`n - 1` denominator) of the scores.
    pub fn covariance(&self) -> DMatrix<f64> {
        sample_covariance(&self.scores)
    }
}

pub fn sample_covariance(points: &DMatrix<f64>) -> DMatrix<f64> {
    let n = points.nrows();
    let mean = points.row_mean();
    let mut centered = points.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    centered.transpose() * &centered / (n.max(2) - 1) as f64
}

/// Principal components retaining at least `var_threshold` of the variance.
pub fn pca_reduce(spectra: &DMatrix<f64>, var_threshold: f64) -> Result<ScoreSet> {
    let (n, p) = spectra.shape();
    if n < 2 {
        return Err(Error::invalid("PCA needs at least two samples"));
    }
    if p == 0 {
        return Err(Error::invalid("PCA needs at least one variable"));
    }
    if let Some(i) = spectra.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let mean = spectra.row_mean().transpose();
    let mut centered = spectra.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let svd = centered.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let variances: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    let total: f64 = variances.iter().sum();
    let scale = centered.iter().fold(0f64, |m, v| m.max(v.abs()));
    if total <= (f64::EPSILON * scale).powi(2) * (n * p) as f64 || total == 0.0 {
        return Err(Error::Degenerate("data has zero variance".into()));
    }
    let ratios: Vec<f64> = variances.iter().map(|v| v / total).collect();
    let mut d = 0;
    let mut cumulative = 0.0;
    while d < ratios.len() {
        cumulative += ratios[d];
        d += 1;
        if cumulative >= var_threshold - 1e-12 {
            break;
        }
    }
    let d = d.max(1);
    let mut basis = DMatrix::zeros(p, d);
    for (j, &i) in order.iter().take(d).enumerate() {
        basis.set_column(j, &v_t.row(i).transpose());
    }
    let scores = &centered * &basis;
    Ok(ScoreSet { scores, explained_variance_ratio: ratios[..d].to_vec(), mean, basis })
}

/// Mahalanobis metric with a pre-factored covariance.
#[derive(Debug, Clone)]
pub struct Mahalanobis {
    chol: Cholesky<f64, Dyn>,
}

impl Mahalanobis {
    pub fn new(covariance: &DMatrix<f64>) -> Result<Self> {
        if !covariance.is_square() {
            return Err(Error::shape("covariance must be square"));
        }
        let chol = Cholesky::new(covariance.clone())
            .ok_or_else(|| Error::Singular("covariance is not positive definite".into()))?;
        let diag = chol.l_dirty().diagonal();
        let max = diag.iter().fold(0f64, |m, v| m.max(v.abs()));
        if diag.iter().any(|v| v.abs() <= max * 1e-10) {
            return Err(Error::Singular("covariance is numerically singular".into()));
        }
        Ok(Self { chol })
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let diff = DVector::from_iterator(a.len(), a.iter().zip(b).map(|(x, y)| x - y));
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("factor has a non-zero diagonal");
        z.norm()
    }
}

/// `sqrt((a-b)^T cov^-1 (a-b))`.
pub fn mahalanobis(a: &[f64], b: &[f64], covariance: &DMatrix<f64>) -> Result<f64> {
    if a.len() != b.len() || a.len() != covariance.nrows() {
        return Err(Error::shape("vector and covariance dimensions differ"));
    }
    Ok(Mahalanobis::new(covariance)?.distance(a, b))
}

/// Even sizes for `k` subsets of `n`, the first `n % k` one larger.
pub fn even_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|j| n / k + usize::from(j < n % k)).collect()
}

/// k-way DUPLEX on the rows of `points` under the Mahalanobis metric of
/// their own sample covariance. Returns the subset index of each row.
///
/// Subsets are seeded in turn with the farthest remaining pair, then grown
/// round-robin: each subset takes the unassigned point whose minimum
/// distance to its members is largest. Ties go to the lowest index.
pub fn duplex_split(points: &DMatrix<f64>, k: usize, sizes: Option<&[usize]>) -> Result<Vec<usize>> {
    let n = points.nrows();
    if k == 0 {
        return Err(Error::invalid("need at least one subset"));
    }
    if k == 1 {
        if let Some(s) = sizes {
            if s != [n] {
                return Err(Error::invalid(format!("sizes {s:?} inconsistent with {n} samples")));
            }
        }
        return Ok(vec![0; n]);
    }
    if n < 2 * k {
        return Err(Error::invalid(format!("{n} samples cannot seed {k} subsets")));
    }
    let sizes = match sizes {
        Some(s) => {
            if s.len() != k || s.iter().sum::<usize>() != n || s.iter().any(|&m| m < 2) {
                return Err(Error::invalid(format!("sizes {s:?} inconsistent with {n} samples in {k} subsets")));
            }
            s.to_vec()
        }
        None => even_sizes(n, k),
    };
    let metric = Mahalanobis::new(&sample_covariance(points))?;
    let rows: Vec<Vec<f64>> = points.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = metric.distance(&rows[i], &rows[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    const UNASSIGNED: usize = usize::MAX;
    let mut assignment = vec![UNASSIGNED; n];
    let mut counts = vec![0usize; k];
    for (j, count) in counts.iter_mut().enumerate() {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..n {
            if assignment[a] != UNASSIGNED {
                continue;
            }
            for b in a + 1..n {
                if assignment[b] != UNASSIGNED {
                    continue;
                }
                let d = dist[a * n + b];
                if best.is_none_or(|(_, _, bd)| d > bd) {
                    best = Some((a, b, d));
                }
            }
        }
        let (a, b, _) = best.expect("n >= 2k leaves a pair");
        assignment[a] = j;
        assignment[b] = j;
        *count = 2;
    }

    // Minimum distance from each point to each subset.
    let mut min_dist = vec![f64::INFINITY; n * k];
    for p in 0..n {
        for q in 0..n {
            if assignment[q] != UNASSIGNED {
                let slot = &mut min_dist[p * k + assignment[q]];
                *slot = slot.min(dist[p * n + q]);
            }
        }
    }
    let mut remaining = n - 2 * k;
    while remaining > 0 {
        for j in 0..k {
            if remaining == 0 {
                break;
            }
            if counts[j] >= sizes[j] {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for p in 0..n {
                if assignment[p] == UNASSIGNED {
                    let d = min_dist[p * k + j];
                    if best.is_none_or(|(_, bd)| d > bd) {
                        best = Some((p, d));
                    }
                }
            }
            let (p, _) = best.expect("remaining > 0");
            assignment[p] = j;
            counts[j] += 1;
            remaining -= 1;
            for q in 0..n {
                let slot = &mut min_dist[q * k + j];
                *slot = slot.min(dist[q * n + p]);
            }
        }
    }
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng, n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn collinear_points_need_one_component() {
        let x = DMatrix::from_row_slice(5, 2, &[0.0, 0.0, 1.0, 2.0, 2.0, 4.0, -1.0, -2.0, 3.0, 6.0]);
        let s = pca_reduce(&x, 0.99).unwrap();
        assert_eq!(s.d(), 1);
        let err = (s.reconstruct(&s.scores) - &x).abs().max();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn threshold_zero_keeps_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 10, 4);
        assert_eq!(pca_reduce(&x, 0.0).unwrap().d(), 1);
    }

    #[test]
    fn full_rank_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 10, 4);
        let s = pca_reduce(&x, 1.0).unwrap();
        assert_eq!(s.d(), 4);
        assert!((s.reconstruct(&s.scores) - &x).abs().max() < 1e-10);
        let gram = s.basis.transpose() * &s.basis;
        assert!((gram - DMatrix::identity(4, 4)).abs().max() < 1e-12);
        assert!(s.explained_variance_ratio.windows(2).all(|w| w[0] >= w[1]));
        assert!((s.explained_variance_ratio.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_is_error() {
        let x = DMatrix::from_element(4, 3, 2.5);
        assert!(matches!(pca_reduce(&x, 0.99), Err(Error::Degenerate(_))));
    }

    #[test]
    fn mahalanobis_cases() {
        let id = DMatrix::identity(2, 2);
        assert!((mahalanobis(&[3.0, 4.0], &[0.0, 0.0], &id).unwrap() - 5.0).abs() < 1e-15);
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        assert!((mahalanobis(&[2.0, 0.0], &[0.0, 0.0], &diag).unwrap() - 1.0).abs() < 1e-15);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(mahalanobis(&[1.0, 0.0], &[0.0, 0.0], &singular), Err(Error::Singular(_))));
    }

    #[test]
    fn duplex_one_dimensional_trace() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 10.0, 11.0]);
        assert_eq!(duplex_split(&x, 2, None).unwrap(), vec![0, 1, 1, 0]);
        assert_eq!(duplex_split(&x, 1, None).unwrap(), vec![0; 4]);
        assert!(duplex_split(&x, 3, None).is_err());
        assert!(duplex_split(&x, 2, Some(&[3, 2])).is_err());
    }

    #[test]
    fn duplex_tie_break_by_index() {
        // unit square: both diagonals tie, the lower pair (0, 3) wins
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(duplex_split(&x, 2, None).unwrap(), vec![0, 1, 1, 0]);
    }

    proptest! {
        #[test]
        fn duplex_is_a_deterministic_partition(seed in 0u64..500, k in 2usize..5, extra in 0usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 2 * k + extra;
            let x = random_matrix(&mut rng, n, 2);
            let a = duplex_split(&x, k, None).unwrap();
            prop_assert_eq!(&a, &duplex_split(&x, k, None).unwrap());
            let mut counts = vec![0; k];
            for &s in &a {
                counts[s] += 1;
            }
            prop_assert_eq!(counts, even_sizes(n, k));
        }

        #[test]
        fn mahalanobis_is_a_metric(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, 3, 3);
            let cov = &a * a.transpose() + DMatrix::identity(3, 3) * 0.1;
            let m = Mahalanobis::new(&cov).unwrap();
            let p: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            prop_assert_eq!(m.distance(&p[0], &p[0]), 0.0);
            prop_assert!((m.distance(&p[0], &p[1]) - m.distance(&p[1], &p[0])).abs() < 1e-12);
            prop_assert!(m.distance(&p[0], &p[2]) <= m.distance(&p[0], &p[1]) + m.distance(&p[1], &p[2]) + 1e-12);
        }
    }
}
