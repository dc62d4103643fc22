use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use faer::Mat;

use super::dofmap::DofMap;
use super::sparse::{norm2, CsrMatrix};
use crate::error::{Error, Result};

/// Relative residual every direct solve must reach.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// One unknown per raw dof.
    Raw,
    /// Periodic slaves folded into their masters.
    Periodic,
    /// Dirichlet dofs eliminated as well.
    Free,
}

/// Assembled linear system, optionally bordered by dense mean-value constraint rows
/// (one Lagrange multiplier each).
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    constraints: Vec<Vec<f64>>,
    stage: Stage,
}

impl SparseSystem {
    pub fn new(matrix: CsrMatrix, rhs: Vec<f64>) -> Result<Self> {
        if matrix.n_rows() != matrix.n_cols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.n_rows(),
                actual: matrix.n_cols(),
            });
        }
        if rhs.len() != matrix.n_rows() {
            return Err(Error::DimensionMismatch {
                expected: matrix.n_rows(),
                actual: rhs.len(),
            });
        }
        Ok(SparseSystem {
            matrix,
            rhs,
            constraints: Vec::new(),
            stage: Stage::Raw,
        })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    /// Unknowns excluding multipliers.
    pub fn n_unknowns(&self) -> usize {
        self.matrix.n_rows()
    }

    /// Total size including multipliers.
    pub fn dim(&self) -> usize {
        self.matrix.n_rows() + self.constraints.len()
    }

    pub fn constraints(&self) -> &[Vec<f64>] {
        &self.constraints
    }

    /// Bordered matrix `[[A, C^T], [C, 0]]`.
    pub fn augmented_matrix(&self) -> CsrMatrix {
        let n = self.n_unknowns();
        let mut trips: Vec<(usize, usize, f64)> = self.matrix.triplets().collect();
        for (k, row) in self.constraints.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    trips.push((n + k, j, w));
                    trips.push((j, n + k, w));
                }
            }
        }
        CsrMatrix::from_triplets(self.dim(), self.dim(), trips)
    }

    pub fn augmented_rhs(&self) -> Vec<f64> {
        let mut b = self.rhs.clone();
        b.resize(self.dim(), 0.0);
        b
    }

    /// Splits a solution vector into unknowns and multipliers.
    pub fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        x.split_at(self.n_unknowns())
    }

    pub fn factorize(&self) -> Result<Factorization> {
        Factorization::bordered(self)
    }
}

/// Folds periodic slave rows and columns into their masters.
///
/// A system without identified dofs, or one that is already folded, is returned as is.
pub fn apply_periodic(system: &SparseSystem, dofmap: &DofMap) -> Result<SparseSystem> {
    if system.stage != Stage::Raw || !dofmap.is_identified() {
        return Ok(system.clone());
    }
    if system.n_unknowns() != dofmap.n_raw() {
        return Err(Error::DimensionMismatch {
            expected: dofmap.n_raw(),
            actual: system.n_unknowns(),
        });
    }
    if !system.constraints.is_empty() {
        return Err(Error::Precondition(
            "fold periodic dofs before attaching constraints".into(),
        ));
    }
    let map = dofmap.raw_to_class_map();
    let n = dofmap.n_classes();
    let mut rhs = vec![0.0; n];
    for (i, v) in system.rhs.iter().enumerate() {
        rhs[map[i].unwrap()] += v;
    }
    Ok(SparseSystem {
        matrix: system.matrix.fold(&map, n),
        rhs,
        constraints: Vec::new(),
        stage: Stage::Periodic,
    })
}

/// Removes Dirichlet rows and columns (homogeneous data), folding periodic dofs first
/// if that has not happened yet.
pub fn eliminate_dirichlet(system: &SparseSystem, dofmap: &DofMap) -> Result<SparseSystem> {
    let folded = match system.stage {
        Stage::Free => return Ok(system.clone()),
        Stage::Raw if dofmap.is_identified() => apply_periodic(system, dofmap)?,
        Stage::Raw => {
            if system.n_unknowns() != dofmap.n_raw() {
                return Err(Error::DimensionMismatch {
                    expected: dofmap.n_raw(),
                    actual: system.n_unknowns(),
                });
            }
            system.clone()
        }
        Stage::Periodic => system.clone(),
    };
    let map: Vec<Option<usize>> = if folded.stage == Stage::Raw {
        (0..dofmap.n_raw()).map(|d| dofmap.free_of_raw(d)).collect()
    } else {
        dofmap.class_to_free_map().to_vec()
    };
    let n = dofmap.free_dof_count();
    let mut rhs = vec![0.0; n];
    for (i, v) in folded.rhs.iter().enumerate() {
        if let Some(f) = map[i] {
            rhs[f] += v;
        }
    }
    Ok(SparseSystem {
        matrix: folded.matrix.fold(&map, n),
        rhs,
        constraints: folded.constraints,
        stage: Stage::Free,
    })
}

/// Appends one Lagrange-multiplier row per weight vector (`sum_j w_j x_j = 0`).
pub fn attach_mean_constraints(system: &SparseSystem, rows: Vec<Vec<f64>>) -> Result<SparseSystem> {
    if !system.constraints.is_empty() {
        return Err(Error::DoubleConstraint);
    }
    for r in &rows {
        if r.len() != system.n_unknowns() {
            return Err(Error::DimensionMismatch {
                expected: system.n_unknowns(),
                actual: r.len(),
            });
        }
    }
    let mut out = system.clone();
    out.constraints = rows;
    Ok(out)
}

/// Appends the zero-mean constraint whose row holds `int phi_j` for each basis function.
pub fn attach_zero_mean(system: &SparseSystem, basis_integrals: Vec<f64>) -> Result<SparseSystem> {
    attach_mean_constraints(system, vec![basis_integrals])
}

/// Sparse LU factorization of a (possibly bordered) system.
///
/// A dense border makes every column of `AᵀA` adjacent, which ruins the fill-reducing
/// ordering of a direct LU. Bordered systems are therefore solved by block elimination:
/// `A` is made regular by a diagonal update `A + Σ s_k e_k e_kᵀ` at one index per
/// constraint row, that sparse matrix is factored, and the update and the multipliers
/// are recovered from a small dense system. The result is algebraically the solution
/// of the full bordered matrix, and its residual is checked against that matrix.
pub struct Factorization {
    matrix: CsrMatrix,
    inner: Inner,
}

enum Inner {
    Direct(Lu<usize, f64>),
    Bordered(Bordered),
}

struct Bordered {
    lu: Lu<usize, f64>,
    n: usize,
    pivots: Vec<usize>,
    constraints: Vec<Vec<f64>>,
    /// Columns `A_k⁻¹ e_k s_k` followed by `A_k⁻¹ c_r`.
    z: Mat<f64>,
    schur: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization")
            .field("dim", &self.matrix.n_rows())
            .field("nnz", &self.matrix.nnz())
            .field("bordered", &matches!(self.inner, Inner::Bordered(_)))
            .finish()
    }
}

fn sparse_lu(matrix: &CsrMatrix) -> Result<Lu<usize, f64>> {
    matrix
        .to_faer()?
        .sp_lu()
        .map_err(|e| Error::SingularMatrix(format!("LU factorization failed: {e:?}")))
}

fn lu_solve(lu: &Lu<usize, f64>, b: &[f64]) -> Vec<f64> {
    let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = lu.solve(&rhs);
    (0..b.len()).map(|i| x[(i, 0)]).collect()
}

impl Bordered {
    fn new(matrix: &CsrMatrix, constraints: &[Vec<f64>]) -> Result<Self> {
        let n = matrix.n_rows();
        let m = constraints.len();
        let scale = matrix.max_abs().max(f64::MIN_POSITIVE);
        let mut pivots: Vec<usize> = Vec::with_capacity(m);
        for row in constraints {
            let k = (0..n)
                .filter(|k| !pivots.contains(k))
                .max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()))
                .ok_or_else(|| Error::Precondition("more constraints than unknowns".into()))?;
            pivots.push(k);
        }
        let shifts: Vec<f64> = pivots
            .iter()
            .map(|&k| {
                let d = matrix.get(k, k).abs();
                if d > 0.0 { d } else { scale }
            })
            .collect();
        let regular = CsrMatrix::from_triplets(
            n,
            n,
            matrix
                .triplets()
                .chain(pivots.iter().zip(&shifts).map(|(&k, &s)| (k, k, s))),
        );
        let lu = sparse_lu(&regular)?;
        let cols = Mat::from_fn(n, 2 * m, |i, j| {
            if j < m {
                if i == pivots[j] { shifts[j] } else { 0.0 }
            } else {
                constraints[j - m][i]
            }
        });
        let z = lu.solve(&cols);
        if (0..2 * m).any(|j| (0..n).any(|i| !z[(i, j)].is_finite())) {
            return Err(Error::SingularMatrix("regularized block is singular".into()));
        }
        // [[I - Eᵀ Z_E, Eᵀ Z_C], [C Z_E, -C Z_C]]
        let schur = nalgebra::DMatrix::from_fn(2 * m, 2 * m, |r, c| {
            let col = |i: usize| z[(i, c)];
            if r < m {
                let v = col(pivots[r]);
                match (c < m, r == c) {
                    (true, true) => 1.0 - v,
                    (true, false) => -v,
                    (false, _) => v,
                }
            } else {
                let dot: f64 = (0..n).map(|i| constraints[r - m][i] * col(i)).sum();
                if c < m { dot } else { -dot }
            }
        });
        let schur = schur.lu();
        if !schur.is_invertible() {
            return Err(Error::SingularMatrix("bordered Schur block is singular".into()));
        }
        Ok(Bordered {
            lu,
            n,
            pivots,
            constraints: constraints.to_vec(),
            z,
            schur,
        })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n, self.pivots.len());
        let wb = lu_solve(&self.lu, &b[..n]);
        let mut rhs = nalgebra::DVector::zeros(2 * m);
        for r in 0..m {
            rhs[r] = wb[self.pivots[r]];
            let cw: f64 = self.constraints[r].iter().zip(&wb).map(|(c, w)| c * w).sum();
            rhs[m + r] = b[n + r] - cw;
        }
        let ml = self.schur.solve(&rhs).unwrap_or_else(|| nalgebra::DVector::from_element(2 * m, f64::NAN));
        let mut x = wb;
        for (i, xi) in x.iter_mut().enumerate() {
            for j in 0..m {
                *xi += ml[j] * self.z[(i, j)] - ml[m + j] * self.z[(i, m + j)];
            }
        }
        x.extend((0..m).map(|j| ml[m + j]));
        x
    }
}

impl Factorization {
    /// Direct sparse LU of a square matrix.
    pub fn new(matrix: CsrMatrix) -> Result<Self> {
        if matrix.n_rows() != matrix.n_cols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.n_rows(),
                actual: matrix.n_cols(),
            });
        }
        let lu = sparse_lu(&matrix)?;
        Ok(Factorization {
            matrix,
            inner: Inner::Direct(lu),
        })
    }

    /// Factorization of `[[A, Cᵀ], [C, 0]]`.
    pub fn bordered(system: &SparseSystem) -> Result<Self> {
        if system.constraints.is_empty() {
            return Factorization::new(system.matrix.clone());
        }
        match Bordered::new(&system.matrix, &system.constraints) {
            Ok(b) => Ok(Factorization {
                matrix: system.augmented_matrix(),
                inner: Inner::Bordered(b),
            }),
            Err(e) => {
                log::debug!("block elimination unavailable ({e}); factoring the bordered matrix");
                Factorization::new(system.augmented_matrix())
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.n_rows()
    }

    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        match &self.inner {
            Inner::Direct(lu) => lu_solve(lu, b),
            Inner::Bordered(bd) => bd.solve(b),
        }
    }

    /// Solves `A x = b` with up to three steps of iterative refinement, then checks the
    /// relative residual against [`SOLVE_TOLERANCE`].
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: b.len(),
            });
        }
        let bnorm = norm2(b);
        if bnorm == 0.0 {
            return Ok(vec![0.0; b.len()]);
        }
        let mut x = self.raw_solve(b);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularMatrix("non-finite solution".into()));
        }
        let residual = |x: &[f64]| {
            let ax = self.matrix.mul_vec(x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let rel = norm2(&r) / bnorm;
            (r, rel)
        };
        let (mut r, mut rel) = residual(&x);
        for _ in 0..3 {
            if rel <= 1e-13 {
                break;
            }
            let dx = self.raw_solve(&r);
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(x, d)| x + d).collect();
            let (tr, trel) = residual(&trial);
            if !(trel < rel) {
                break;
            }
            (x, r, rel) = (trial, tr, trel);
        }
        if !(rel <= SOLVE_TOLERANCE) {
            return Err(Error::ResidualTooLarge {
                residual: rel,
                tolerance: SOLVE_TOLERANCE,
            });
        }
        Ok(x)
    }
}

/// Direct solution of a bordered system; the result includes the multipliers.
pub fn solve(system: &SparseSystem) -> Result<Vec<f64>> {
    system.factorize()?.solve(&system.augmented_rhs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_solve() {
        let b = vec![1.0, -2.0, 3.5];
        let sys = SparseSystem::new(CsrMatrix::identity(3), b.clone()).unwrap();
        assert_eq!(solve(&sys).unwrap(), b);
    }

    #[test]
    fn saddle_two_by_two() {
        let a = CsrMatrix::from_triplets(2, 2, [(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0)]);
        let sys = SparseSystem::new(a, vec![3.0, 1.0]).unwrap();
        let x = solve(&sys).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn bordered_equals_explicit_saddle() {
        // [[2]] bordered by constraint row [1] with rhs 3 -> same as the 2x2 above
        let sys = SparseSystem::new(CsrMatrix::from_triplets(1, 1, [(0, 0, 2.0)]), vec![3.0]).unwrap();
        let sys = attach_zero_mean(&sys, vec![1.0]).unwrap();
        let x = solve(&sys).unwrap();
        // constraint forces x0 = 0 and the multiplier absorbs the load
        assert!(x[0].abs() < 1e-14);
        assert!((x[1] - 3.0).abs() < 1e-14);
        assert!(matches!(
            attach_zero_mean(&sys, vec![1.0]),
            Err(Error::DoubleConstraint)
        ));
    }

    #[test]
    fn block_elimination_matches_direct_bordered_solve() {
        // singular periodic 1D Laplacian on 5 nodes with a zero-mean border
        let n = 5;
        let mut trips = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            trips.extend([(i, i, 1.0), (j, j, 1.0), (i, j, -1.0), (j, i, -1.0)]);
        }
        let a = CsrMatrix::from_triplets(n, n, trips);
        let b = vec![1.0, -2.0, 0.5, 0.0, 0.5];
        let sys = SparseSystem::new(a, b).unwrap();
        let sys = attach_zero_mean(&sys, vec![1.0; n]).unwrap();
        let fast = Factorization::bordered(&sys).unwrap();
        assert!(matches!(fast.inner, Inner::Bordered(_)));
        let direct = Factorization::new(sys.augmented_matrix()).unwrap();
        let rhs = sys.augmented_rhs();
        let (x, y) = (fast.solve(&rhs).unwrap(), direct.solve(&rhs).unwrap());
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(x[..n].iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn singular_detected() {
        let a = CsrMatrix::from_triplets(2, 2, [(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let sys = SparseSystem::new(a, vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            solve(&sys),
            Err(Error::SingularMatrix(_)) | Err(Error::ResidualTooLarge { .. })
        ));
    }
}
