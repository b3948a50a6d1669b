//! SPD sensor-graph geometry: edge matrices from windows, trace
//! regularization, Cholesky factors, the closed-form Log-Cholesky Fréchet
//! mean, and the fixed eigenbasis used to approximately diagonalize frames.

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, CompensatedSum, Matrix};

pub const DEFAULT_ETA: f64 = 0.1;

/// Symmetric adjacency (inner-product) matrix of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMatrix {
    pub entries: Matrix,
    pub regularized: bool,
}

impl EdgeMatrix {
    pub fn dim(&self) -> usize {
        self.entries.rows()
    }
}

/// `E = X Xᵀ` for a `channels × samples` window: raw inner products of the
/// channel signals, with no centering and no 1/T scaling.
pub fn edge_matrix(window: &Matrix) -> Result<EdgeMatrix> {
    if window.cols() == 0 {
        return Err(Error::Parameter("window has no samples".into()));
    }
    if !window.all_finite() {
        return Err(Error::Data("non-finite value in window".into()));
    }
    let n = window.rows();
    let mut e = Matrix::zeros(n, n);
    for i in 0..n {
        let xi = window.row(i);
        for j in 0..=i {
            let v = dot(xi, window.row(j));
            e[(i, j)] = v;
            e[(j, i)] = v;
        }
    }
    Ok(EdgeMatrix {
        entries: e,
        regularized: false,
    })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `(1 − η)E + η·trace(E)·I`.
pub fn regularize(e: &EdgeMatrix, eta: f64) -> Result<EdgeMatrix> {
    if !(0.0..=1.0).contains(&eta) || eta == 0.0 {
        return Err(Error::Parameter(format!("eta must lie in (0, 1], got {eta}")));
    }
    let tr = e.entries.trace();
    if !(tr > 0.0) {
        return Err(Error::Degenerate(format!(
            "edge matrix trace {tr} is not positive (all-zero window?)"
        )));
    }
    let n = e.dim();
    let mut out = e.entries.scale(1.0 - eta);
    for i in 0..n {
        out[(i, i)] += eta * tr;
    }
    Ok(EdgeMatrix {
        entries: out,
        regularized: true,
    })
}

/// Lower-triangular `L` with positive diagonal, `L Lᵀ = E`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    pub lower: Matrix,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn reconstruct(&self) -> Matrix {
        self.lower.matmul(&self.lower.transpose())
    }
}

pub fn cholesky(e: &Matrix) -> Result<CholeskyFactor> {
    if !e.is_square() {
        return Err(Error::Parameter("cholesky needs a square matrix".into()));
    }
    let n = e.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = e[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Definiteness { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = e[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(CholeskyFactor { lower: l })
}

/// Streaming accumulator for the Log-Cholesky Fréchet mean.
///
/// Holds the running sums of strictly-lower Cholesky entries and of the log
/// Cholesky diagonals. Partial accumulators merge in any grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct FrechetAccumulator {
    dim: usize,
    count: u64,
    lower: Vec<CompensatedSum>,
    log_diag: Vec<CompensatedSum>,
}

impl FrechetAccumulator {
    pub fn new(dim: usize) -> Self {
        FrechetAccumulator {
            dim,
            count: 0,
            lower: vec![CompensatedSum::default(); dim * dim.saturating_sub(1) / 2],
            log_diag: vec![CompensatedSum::default(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn add(&mut self, factor: &CholeskyFactor) -> Result<()> {
        if factor.dim() != self.dim {
            return Err(Error::Parameter(format!(
                "factor dim {} does not match accumulator dim {}",
                factor.dim(),
                self.dim
            )));
        }
        for i in 0..self.dim {
            let d = factor.lower[(i, i)];
            if !(d > 0.0) {
                return Err(Error::Definiteness { pivot: i, value: d });
            }
        }
        let mut k = 0;
        for i in 1..self.dim {
            for j in 0..i {
                self.lower[k].add(factor.lower[(i, j)]);
                k += 1;
            }
        }
        for i in 0..self.dim {
            self.log_diag[i].add(factor.lower[(i, i)].ln());
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &FrechetAccumulator) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::Parameter("cannot merge accumulators of different dims".into()));
        }
        for (a, b) in self.lower.iter_mut().zip(&other.lower) {
            a.merge(b);
        }
        for (a, b) in self.log_diag.iter_mut().zip(&other.log_diag) {
            a.merge(b);
        }
        self.count += other.count;
        Ok(())
    }

    /// Mean Cholesky factor: arithmetic mean below the diagonal, geometric mean on it.
    pub fn mean_factor(&self) -> Result<CholeskyFactor> {
        if self.count == 0 {
            return Err(Error::Parameter("Fréchet mean of an empty set".into()));
        }
        let n = self.count as f64;
        let mut l = Matrix::zeros(self.dim, self.dim);
        let mut k = 0;
        for i in 1..self.dim {
            for j in 0..i {
                l[(i, j)] = self.lower[k].value() / n;
                k += 1;
            }
        }
        for i in 0..self.dim {
            l[(i, i)] = (self.log_diag[i].value() / n).exp();
        }
        Ok(CholeskyFactor { lower: l })
    }

    /// The SPD Fréchet mean `F = L̄ L̄ᵀ`.
    pub fn mean(&self) -> Result<Matrix> {
        Ok(self.mean_factor()?.reconstruct())
    }
}

pub fn frechet_mean(factors: &[CholeskyFactor]) -> Result<Matrix> {
    let first = factors
        .first()
        .ok_or_else(|| Error::Parameter("Fréchet mean of an empty set".into()))?;
    let mut acc = FrechetAccumulator::new(first.dim());
    for f in factors {
        acc.add(f)?;
    }
    acc.mean()
}

/// Orthonormal eigenvectors (columns of `q`) and descending eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigenbasis {
    pub q: Matrix,
    pub lambda: Vec<f64>,
}

impl Eigenbasis {
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn identity(dim: usize) -> Self {
        Eigenbasis {
            q: Matrix::identity(dim),
            lambda: vec![1.0; dim],
        }
    }

    pub fn reconstruct(&self) -> Matrix {
        self.q
            .matmul(&Matrix::from_diag(&self.lambda))
            .matmul(&self.q.transpose())
    }
}

/// Eigen-decomposes the Fréchet mean; descending order, largest entry of each vector positive.
pub fn eigenbasis(f: &Matrix) -> Result<Eigenbasis> {
    if !f.is_square() {
        return Err(Error::Parameter("eigenbasis needs a square matrix".into()));
    }
    let eig = symmetric_eigen(f)?;
    Ok(Eigenbasis {
        q: eig.vectors,
        lambda: eig.values,
    })
}

/// `σ = Qᵀ E Q`, kept as a full symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrame {
    pub entries: Matrix,
}

pub fn diagonalize(e: &EdgeMatrix, basis: &Eigenbasis) -> Result<SpectralFrame> {
    if e.dim() != basis.dim() || basis.q.rows() != basis.dim() {
        return Err(Error::Parameter(format!(
            "edge matrix dim {} does not match basis dim {}",
            e.dim(),
            basis.dim()
        )));
    }
    let mut s = basis.q.transpose().matmul(&e.entries).matmul(&basis.q);
    let n = s.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = avg;
            s[(j, i)] = avg;
        }
    }
    Ok(SpectralFrame { entries: s })
}

/// Log-Cholesky distance between two SPD matrices.
pub fn log_cholesky_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows() != b.rows() {
        return Err(Error::Parameter("distance between matrices of different dims".into()));
    }
    let la = cholesky(a)?.lower;
    let lb = cholesky(b)?.lower;
    let n = a.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..i {
            let d = la[(i, j)] - lb[(i, j)];
            acc += d * d;
        }
        let d = la[(i, i)].ln() - lb[(i, i)].ln();
        acc += d * d;
    }
    Ok(acc.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut impl Rng, n: usize) -> Matrix {
        let a = Matrix::from_vec(n, n + 2, (0..n * (n + 2)).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let mut m = a.matmul(&a.transpose());
        for i in 0..n {
            m[(i, i)] += 0.1;
        }
        m
    }

    #[test]
    fn edge_matrix_closed_forms() {
        let e = edge_matrix(&Matrix::identity(2)).unwrap();
        assert_eq!(e.entries, Matrix::identity(2));
        let ones = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let e = edge_matrix(&ones).unwrap();
        assert_eq!(e.entries, Matrix::from_rows(&[&[2.0, 2.0], &[2.0, 2.0]]));
        let mut bad = Matrix::identity(2);
        bad[(0, 1)] = f64::NAN;
        assert!(matches!(edge_matrix(&bad), Err(Error::Data(_))));
    }

    #[test]
    fn edge_matrix_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::from_vec(31, 250, (0..31 * 250).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .unwrap();
        let e = edge_matrix(&x).unwrap();
        for i in 0..31 {
            for j in 0..31 {
                let mut s = 0.0;
                for t in 0..250 {
                    s += x[(i, t)] * x[(j, t)];
                }
                assert!((e.entries[(i, j)] - s).abs() <= 1e-10 * s.abs().max(1.0));
            }
        }
    }

    #[test]
    fn regularize_examples() {
        let r = regularize(
            &EdgeMatrix {
                entries: Matrix::identity(2),
                regularized: false,
            },
            0.1,
        )
        .unwrap();
        assert_eq!(r.entries, Matrix::identity(2).scale(1.1));
        let r = regularize(
            &EdgeMatrix {
                entries: Matrix::identity(31),
                regularized: false,
            },
            0.1,
        )
        .unwrap();
        assert_eq!(r.entries, Matrix::identity(31).scale(4.0));
        let rank1 = edge_matrix(&Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]])).unwrap();
        let r = regularize(&rank1, 0.1).unwrap();
        let want = Matrix::from_rows(&[&[2.2, 1.8], &[1.8, 2.2]]);
        assert!(r.entries.sub(&want).max_abs() < 1e-15);
        // hand eigen-decomposition of [[a,b],[b,a]]: a ± b
        let eig = symmetric_eigen(&r.entries).unwrap();
        assert!((eig.values[0] - 4.0).abs() < 1e-12);
        assert!((eig.values[1] - 0.4).abs() < 1e-12);
        let zero = EdgeMatrix {
            entries: Matrix::zeros(3, 3),
            regularized: false,
        };
        assert!(matches!(regularize(&zero, 0.1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn regularized_min_eigen_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x = Matrix::from_vec(6, 3, (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let raw = edge_matrix(&x).unwrap();
            let tr = raw.entries.trace();
            let r = regularize(&raw, 0.1).unwrap();
            let eig = symmetric_eigen(&r.entries).unwrap();
            assert!(*eig.values.last().unwrap() >= 0.1 * tr - 1e-9);
            assert!(r.entries.asymmetry() < 1e-12);
        }
    }

    #[test]
    fn cholesky_examples() {
        let l = cholesky(&Matrix::from_rows(&[&[4.0, 2.0], &[2.0, 5.0]])).unwrap();
        assert_eq!(l.lower, Matrix::from_rows(&[&[2.0, 0.0], &[1.0, 2.0]]));
        assert_eq!(cholesky(&Matrix::identity(5)).unwrap().lower, Matrix::identity(5));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_spd(&mut rng, 31);
        let l = cholesky(&a).unwrap();
        assert!(Matrix::rel_frobenius_diff(&l.reconstruct(), &a) < 1e-10);
        match cholesky(&Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]])) {
            Err(Error::Definiteness { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn frechet_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = random_spd(&mut rng, 4);
        let f = cholesky(&e).unwrap();
        let mean = frechet_mean(&[f.clone(), f.clone(), f]).unwrap();
        assert!(Matrix::rel_frobenius_diff(&mean, &e) < 1e-10);

        let a = cholesky(&Matrix::from_diag(&[1.0, 4.0])).unwrap();
        let b = cholesky(&Matrix::from_diag(&[4.0, 1.0])).unwrap();
        let mean = frechet_mean(&[a, b]).unwrap();
        assert!(mean.sub(&Matrix::from_diag(&[2.0, 2.0])).max_abs() < 1e-12);

        assert!(matches!(frechet_mean(&[]), Err(Error::Parameter(_))));
        let bad = CholeskyFactor {
            lower: Matrix::from_diag(&[1.0, -1.0]),
        };
        assert!(matches!(frechet_mean(&[bad]), Err(Error::Definiteness { .. })));
    }

    #[test]
    fn frechet_merge_any_grouping() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let factors: Vec<_> = (0..9).map(|_| cholesky(&random_spd(&mut rng, 5)).unwrap()).collect();
        let whole = frechet_mean(&factors).unwrap();
        let mut left = FrechetAccumulator::new(5);
        let mut right = FrechetAccumulator::new(5);
        for f in &factors[..4] {
            left.add(f).unwrap();
        }
        for f in &factors[4..] {
            right.add(f).unwrap();
        }
        right.merge(&left).unwrap();
        assert!(Matrix::rel_frobenius_diff(&right.mean().unwrap(), &whole) < 1e-13);
    }

    #[test]
    fn eigenbasis_examples() {
        let b = eigenbasis(&Matrix::from_diag(&[3.0, 1.0])).unwrap();
        assert_eq!(b.q, Matrix::identity(2));
        assert_eq!(b.lambda, vec![3.0, 1.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_spd(&mut rng, 31);
        let basis = eigenbasis(&a).unwrap();
        let qtq = basis.q.transpose().matmul(&basis.q);
        assert!(qtq.sub(&Matrix::identity(31)).max_abs() < 1e-10);
        assert!(Matrix::rel_frobenius_diff(&basis.reconstruct(), &a) < 1e-8);
        assert!(basis.lambda.windows(2).all(|w| w[0] >= w[1]));
        for c in 0..31 {
            let col: Vec<f64> = (0..31).map(|r| basis.q[(r, c)]).collect();
            let big = col.iter().fold(0.0f64, |m, v| if v.abs() > m.abs() { *v } else { m });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn repeated_eigenvalues_reconstruct() {
        let a = Matrix::from_diag(&[2.0, 2.0, 2.0, 1.0]);
        let rot = {
            let (c, s) = (0.6, 0.8);
            Matrix::from_rows(&[&[c, -s, 0.0, 0.0], &[s, c, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 0.0, 1.0]])
        };
        let f = rot.matmul(&a).matmul(&rot.transpose());
        let b = eigenbasis(&f).unwrap();
        assert!(Matrix::rel_frobenius_diff(&b.reconstruct(), &f) < 1e-8);
    }

    #[test]
    fn diagonalize_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = random_spd(&mut rng, 31);
        let basis = eigenbasis(&f).unwrap();
        let e = EdgeMatrix {
            entries: f.clone(),
            regularized: true,
        };
        let s = diagonalize(&e, &basis).unwrap();
        assert!(s.entries.max_off_diag() < 1e-8 * f.max_abs());
        for (i, l) in basis.lambda.iter().enumerate() {
            assert!((s.entries[(i, i)] - l).abs() < 1e-8 * f.max_abs());
        }
        let eye = EdgeMatrix {
            entries: Matrix::identity(31),
            regularized: true,
        };
        let s = diagonalize(&eye, &basis).unwrap();
        assert!(s.entries.sub(&Matrix::identity(31)).max_abs() < 1e-12);

        let wrong = EdgeMatrix {
            entries: Matrix::identity(3),
            regularized: true,
        };
        assert!(matches!(diagonalize(&wrong, &basis), Err(Error::Parameter(_))));
    }

    #[test]
    fn distance_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random_spd(&mut rng, 4);
        assert_eq!(log_cholesky_distance(&a, &a).unwrap(), 0.0);
        let e2 = std::f64::consts::E * std::f64::consts::E;
        let d = log_cholesky_distance(&Matrix::identity(2), &Matrix::from_diag(&[e2, 1.0])).unwrap();
        assert!((d - 1.0).abs() < 1e-14);
        for _ in 0..20 {
            let x = random_spd(&mut rng, 4);
            let y = random_spd(&mut rng, 4);
            assert_eq!(
                log_cholesky_distance(&x, &y).unwrap(),
                log_cholesky_distance(&y, &x).unwrap()
            );
        }
    }
}
