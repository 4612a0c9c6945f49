//! Exact prime-field arithmetic, product-space indexing, cosets, and the
//! small linear-algebra toolkit (Gaussian elimination, system solving on a
//! coset) everything else is built on.
//!
//! Residues are stored as small unsigned integers and all field arithmetic
//! is exact; floating point enters only through [`PrimeModulus::character`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{check_budget, Error, Result, DEFAULT_BUDGET};

/// A prime p with 2 <= p <= 251, together with the character x -> omega^x
/// where omega = e^{2 pi i / p}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrimeModulus {
    p: u64,
}

impl PrimeModulus {
    pub fn new(p: u64) -> Result<Self> {
        if !(2..=251).contains(&p) || !is_prime(p) {
            return Err(Error::NotPrime(p));
        }
        Ok(PrimeModulus { p })
    }

    #[inline]
    pub fn p(&self) -> u64 {
        self.p
    }

    /// omega^a = e^{2 pi i a / p}.
    pub fn character(&self, a: u64) -> Complex64 {
        debug_assert!(a < self.p);
        Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * a as f64 / self.p as f64)
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        (a + b) % self.p
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        (a + self.p - b % self.p) % self.p
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        (a * b) % self.p
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        (self.p - a % self.p) % self.p
    }

    pub fn pow(&self, a: u64, mut e: u64) -> u64 {
        let mut base = a % self.p;
        let mut acc = 1;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            e >>= 1;
        }
        acc
    }

    /// Multiplicative inverse by Fermat's little theorem.
    pub fn inv(&self, a: u64) -> Result<u64> {
        if a % self.p == 0 {
            return Err(Error::Invalid("inverse of zero".into()));
        }
        Ok(self.pow(a, self.p - 2))
    }
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// A vector with coordinates in `[0, p)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FpVector {
    modulus: PrimeModulus,
    coords: Vec<u64>,
}

impl FpVector {
    pub fn new(modulus: PrimeModulus, coords: Vec<u64>) -> Result<Self> {
        if coords.iter().any(|&c| c >= modulus.p()) {
            return Err(Error::Invalid("coordinate out of range".into()));
        }
        Ok(FpVector { modulus, coords })
    }

    pub fn zero(modulus: PrimeModulus, dim: usize) -> Self {
        FpVector {
            modulus,
            coords: vec![0; dim],
        }
    }

    /// Standard basis vector e_i.
    pub fn unit(modulus: PrimeModulus, dim: usize, i: usize) -> Self {
        let mut v = Self::zero(modulus, dim);
        v.coords[i] = 1;
        v
    }

    #[inline]
    pub fn modulus(&self) -> PrimeModulus {
        self.modulus
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    #[inline]
    pub fn coords(&self) -> &[u64] {
        &self.coords
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|&c| c == 0)
    }

    fn check_compatible(&self, other: &FpVector) -> Result<()> {
        if self.modulus != other.modulus || self.dim() != other.dim() {
            return Err(Error::dims(format!(
                "vectors of dim {}/{} over p={}/{}",
                self.dim(),
                other.dim(),
                self.modulus.p(),
                other.modulus.p()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &FpVector) -> Result<FpVector> {
        self.check_compatible(other)?;
        let m = self.modulus;
        let coords = self
            .coords
            .iter()
            .zip(&other.coords)
            .map(|(&a, &b)| m.add(a, b))
            .collect();
        Ok(FpVector { modulus: m, coords })
    }

    pub fn sub(&self, other: &FpVector) -> Result<FpVector> {
        self.check_compatible(other)?;
        let m = self.modulus;
        let coords = self
            .coords
            .iter()
            .zip(&other.coords)
            .map(|(&a, &b)| m.sub(a, b))
            .collect();
        Ok(FpVector { modulus: m, coords })
    }

    pub fn scale(&self, lambda: u64) -> FpVector {
        let m = self.modulus;
        FpVector {
            modulus: m,
            coords: self.coords.iter().map(|&a| m.mul(a, lambda % m.p())).collect(),
        }
    }
}

/// Sum u_i v_i mod p.
pub fn dot(u: &FpVector, v: &FpVector) -> Result<u64> {
    u.check_compatible(v)?;
    let m = u.modulus;
    Ok(u.coords
        .iter()
        .zip(&v.coords)
        .fold(0, |acc, (&a, &b)| m.add(acc, m.mul(a, b))))
}

/// Row rank of a matrix over F_p (rows as equal-dimension vectors).
pub fn rank_fp(rows: &[FpVector]) -> Result<usize> {
    if rows.is_empty() {
        return Ok(0);
    }
    let m = rows[0].modulus;
    for r in rows {
        rows[0].check_compatible(r)?;
    }
    let mut mat: Vec<Vec<u64>> = rows.iter().map(|r| r.coords.clone()).collect();
    Ok(eliminate(&mut mat, m))
}

/// In-place Gaussian elimination to row echelon form; returns the rank.
pub(crate) fn eliminate(mat: &mut [Vec<u64>], m: PrimeModulus) -> usize {
    let rows = mat.len();
    if rows == 0 {
        return 0;
    }
    let cols = mat[0].len();
    let mut rank = 0;
    for col in 0..cols {
        let Some(pivot) = (rank..rows).find(|&r| mat[r][col] != 0) else {
            continue;
        };
        mat.swap(rank, pivot);
        let inv = m.inv(mat[rank][col]).expect("nonzero pivot");
        for c in col..cols {
            mat[rank][c] = m.mul(mat[rank][c], inv);
        }
        for r in 0..rows {
            if r != rank && mat[r][col] != 0 {
                let factor = mat[r][col];
                for c in col..cols {
                    let t = m.mul(factor, mat[rank][c]);
                    mat[r][c] = m.sub(mat[r][c], t);
                }
            }
        }
        rank += 1;
        if rank == rows {
            break;
        }
    }
    rank
}

/// Solves `A x = b` over F_p. Returns one solution (free variables set to 0)
/// or `None` when the system is inconsistent.
pub(crate) fn solve_linear(a: &[Vec<u64>], b: &[u64], m: PrimeModulus) -> Option<Vec<u64>> {
    let rows = a.len();
    assert_eq!(rows, b.len());
    let cols = if rows == 0 { 0 } else { a[0].len() };
    let mut aug: Vec<Vec<u64>> = a
        .iter()
        .zip(b)
        .map(|(row, &rhs)| {
            let mut r = row.clone();
            r.push(rhs % m.p());
            r
        })
        .collect();
    let mut pivot_col = vec![usize::MAX; rows];
    let mut rank = 0;
    for col in 0..cols {
        let Some(p_row) = (rank..rows).find(|&r| aug[r][col] != 0) else {
            continue;
        };
        aug.swap(rank, p_row);
        let inv = m.inv(aug[rank][col]).expect("nonzero pivot");
        for c in col..=cols {
            aug[rank][c] = m.mul(aug[rank][c], inv);
        }
        for r in 0..rows {
            if r != rank && aug[r][col] != 0 {
                let factor = aug[r][col];
                for c in col..=cols {
                    let t = m.mul(factor, aug[rank][c]);
                    aug[r][c] = m.sub(aug[r][c], t);
                }
            }
        }
        pivot_col[rank] = col;
        rank += 1;
        if rank == rows {
            break;
        }
    }
    // Inconsistent iff a zero row has nonzero rhs.
    for r in rank..rows {
        if aug[r][cols] != 0 {
            return None;
        }
    }
    let mut x = vec![0; cols];
    for r in 0..rank {
        x[pivot_col[r]] = aug[r][cols];
    }
    Some(x)
}

/// The product space G_{[k]} = F_p^{n_1} x ... x F_p^{n_k}, with the
/// canonical bijection between points and indices in `[0, total_size)`.
///
/// Canonical (mixed-radix) order: factor 1 varies slowest, and within a
/// factor coordinate 1 is the most significant p-ary digit. Points are flat
/// coordinate slices of length `sum(dims)` with factor blocks in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductSpace {
    modulus: PrimeModulus,
    dims: Vec<usize>,
    offsets: Vec<usize>,
    factor_sizes: Vec<u64>,
    total_size: u64,
    budget: u64,
}

/// Flat coordinates of a point of a [`ProductSpace`].
pub type Point = Vec<u64>;

impl ProductSpace {
    pub fn new(p: u64, dims: &[usize]) -> Result<Self> {
        Self::with_budget(p, dims, DEFAULT_BUDGET)
    }

    pub fn with_budget(p: u64, dims: &[usize], budget: u64) -> Result<Self> {
        let modulus = PrimeModulus::new(p)?;
        if dims.is_empty() {
            return Err(Error::Invalid("need at least one factor".into()));
        }
        let mut offsets = vec![0];
        let mut factor_sizes = Vec::with_capacity(dims.len());
        let mut total: u64 = 1;
        for &n in dims {
            offsets.push(offsets.last().unwrap() + n);
            let fs = crate::checked_pow(p, n as u32, budget)?;
            factor_sizes.push(fs);
            total = total
                .checked_mul(fs)
                .ok_or(Error::BudgetExceeded {
                    needed: u64::MAX,
                    budget,
                })?;
            check_budget(total, budget)?;
        }
        Ok(ProductSpace {
            modulus,
            dims: dims.to_vec(),
            offsets,
            factor_sizes,
            total_size: total,
            budget,
        })
    }

    #[inline]
    pub fn modulus(&self) -> PrimeModulus {
        self.modulus
    }

    #[inline]
    pub fn p(&self) -> u64 {
        self.modulus.p()
    }

    /// Number of factors k.
    #[inline]
    pub fn k(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn dim(&self, factor: usize) -> usize {
        self.dims[factor]
    }

    /// Total coordinate count sum(n_i).
    #[inline]
    pub fn total_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    #[inline]
    pub fn total_size(&self) -> u64 {
        self.total_size
    }

    #[inline]
    pub fn factor_size(&self, factor: usize) -> u64 {
        self.factor_sizes[factor]
    }

    #[inline]
    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn check_direction(&self, d: usize) -> Result<()> {
        if d >= self.k() {
            return Err(Error::BadDirection {
                dir: d,
                k: self.k(),
            });
        }
        Ok(())
    }

    /// Coordinate range of `factor` within a flat point.
    #[inline]
    pub fn factor_range(&self, factor: usize) -> std::ops::Range<usize> {
        self.offsets[factor]..self.offsets[factor + 1]
    }

    pub fn index_of(&self, point: &[u64]) -> u64 {
        debug_assert_eq!(point.len(), self.total_dim());
        let p = self.p();
        point.iter().fold(0, |acc, &c| {
            debug_assert!(c < p);
            acc * p + c
        })
    }

    pub fn point_of(&self, index: u64) -> Point {
        let mut out = vec![0; self.total_dim()];
        self.write_point_of(index, &mut out);
        out
    }

    pub fn write_point_of(&self, mut index: u64, out: &mut [u64]) {
        debug_assert!(index < self.total_size);
        let p = self.p();
        for c in out.iter_mut().rev() {
            *c = index % p;
            index /= p;
        }
    }

    /// Index of a single factor's coordinate block in `[0, p^{n_i})`.
    pub fn factor_index_of(&self, factor: usize, coords: &[u64]) -> u64 {
        debug_assert_eq!(coords.len(), self.dim(factor));
        let p = self.p();
        coords.iter().fold(0, |acc, &c| acc * p + c)
    }

    pub fn factor_coords_of(&self, factor: usize, mut index: u64) -> Vec<u64> {
        let p = self.p();
        let mut out = vec![0; self.dim(factor)];
        for c in out.iter_mut().rev() {
            *c = index % p;
            index /= p;
        }
        out
    }

    /// View of factor `i` of a flat point as an [`FpVector`].
    pub fn factor_vector(&self, point: &[u64], factor: usize) -> FpVector {
        FpVector {
            modulus: self.modulus,
            coords: point[self.factor_range(factor)].to_vec(),
        }
    }

    pub fn add_points(&self, a: &[u64], b: &[u64]) -> Point {
        let m = self.modulus;
        a.iter().zip(b).map(|(&x, &y)| m.add(x, y)).collect()
    }

    pub fn sub_points(&self, a: &[u64], b: &[u64]) -> Point {
        let m = self.modulus;
        a.iter().zip(b).map(|(&x, &y)| m.sub(x, y)).collect()
    }

    /// Full product dot sum_i x_i . y_i over all coordinates: the dot product
    /// of the flattened single-group view.
    pub fn dot(&self, a: &[u64], b: &[u64]) -> u64 {
        let m = self.modulus;
        a.iter()
            .zip(b)
            .fold(0, |acc, (&x, &y)| m.add(acc, m.mul(x, y)))
    }

    /// Index-level group addition: index_of(point_of(a) + point_of(b)).
    pub fn index_add(&self, a: u64, b: u64) -> u64 {
        let pa = self.point_of(a);
        let pb = self.point_of(b);
        self.index_of(&self.add_points(&pa, &pb))
    }

    /// Index-level group subtraction.
    pub fn index_sub(&self, a: u64, b: u64) -> u64 {
        let pa = self.point_of(a);
        let pb = self.point_of(b);
        self.index_of(&self.sub_points(&pa, &pb))
    }

    /// Iterates all points in canonical index order.
    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.total_size).map(|i| self.point_of(i))
    }

    /// The single-group view of factor `i`.
    pub fn factor_space(&self, factor: usize) -> ProductSpace {
        ProductSpace::with_budget(self.p(), &[self.dims[factor]], self.budget)
            .expect("factor of a valid space")
    }

    /// The flattened single-group view F_p^{sum n_i} of the whole space.
    pub fn flattened(&self) -> ProductSpace {
        ProductSpace::with_budget(self.p(), &[self.total_dim()], self.budget)
            .expect("flattening of a valid space")
    }
}

/// Wire format {"p": int, "dims": [int, ...]} with an optional budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceJson {
    pub p: u64,
    pub dims: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
}

impl SpaceJson {
    pub fn to_space(&self) -> Result<ProductSpace> {
        ProductSpace::with_budget(self.p, &self.dims, self.budget.unwrap_or(DEFAULT_BUDGET))
    }

    pub fn of(space: &ProductSpace) -> Self {
        SpaceJson {
            p: space.p(),
            dims: space.dims().to_vec(),
            budget: if space.budget() == DEFAULT_BUDGET {
                None
            } else {
                Some(space.budget())
            },
        }
    }
}

/// A coset u_0 + U inside a single factor F_p^n, with U given by an
/// independent basis.
#[derive(Debug, Clone)]
pub struct Coset {
    base: FpVector,
    basis: Vec<FpVector>,
}

impl Coset {
    pub fn new(base: FpVector, basis: Vec<FpVector>) -> Result<Self> {
        for b in &basis {
            base.check_compatible(b)?;
        }
        let rank = rank_fp(&basis)?;
        if rank != basis.len() {
            return Err(Error::Invalid("coset basis is not independent".into()));
        }
        Ok(Coset { base, basis })
    }

    /// The whole space F_p^n as a coset.
    pub fn full(modulus: PrimeModulus, n: usize) -> Self {
        Coset {
            base: FpVector::zero(modulus, n),
            basis: (0..n).map(|i| FpVector::unit(modulus, n, i)).collect(),
        }
    }

    pub fn base(&self) -> &FpVector {
        &self.base
    }

    pub fn basis(&self) -> &[FpVector] {
        &self.basis
    }

    pub fn ambient_dim(&self) -> usize {
        self.base.dim()
    }

    pub fn subspace_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn size(&self) -> u64 {
        self.base
            .modulus()
            .p()
            .pow(self.basis.len() as u32)
    }

    /// Point for a parameter vector lambda (mixed-radix index, lambda_1 most
    /// significant): u_0 + sum lambda_i b_i.
    pub fn point_at(&self, mut index: u64) -> FpVector {
        let p = self.base.modulus().p();
        let mut lambdas = vec![0; self.basis.len()];
        for l in lambdas.iter_mut().rev() {
            *l = index % p;
            index /= p;
        }
        let mut out = self.base.clone();
        for (l, b) in lambdas.iter().zip(&self.basis) {
            out = out.add(&b.scale(*l)).expect("same space");
        }
        out
    }

    /// All p^{dim U} points, in canonical parameter order.
    pub fn enumerate(&self) -> Vec<FpVector> {
        (0..self.size()).map(|i| self.point_at(i)).collect()
    }

    pub fn contains(&self, v: &FpVector) -> Result<bool> {
        self.base.check_compatible(v)?;
        let m = self.base.modulus();
        let diff = v.sub(&self.base)?;
        // Solve B^T lambda = diff (columns are basis vectors).
        let n = self.ambient_dim();
        let a: Vec<Vec<u64>> = (0..n)
            .map(|row| self.basis.iter().map(|b| b.coords()[row]).collect())
            .collect();
        Ok(solve_linear(&a, diff.coords(), m).is_some())
    }
}

/// A linear map F_p^n -> F_p^h given by an h x n matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearMapFp {
    modulus: PrimeModulus,
    rows: usize,
    cols: usize,
    entries: Vec<u64>,
}

impl LinearMapFp {
    pub fn new(modulus: PrimeModulus, rows: usize, cols: usize, entries: Vec<u64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::dims("matrix entry count"));
        }
        if entries.iter().any(|&e| e >= modulus.p()) {
            return Err(Error::Invalid("matrix entry out of range".into()));
        }
        Ok(LinearMapFp {
            modulus,
            rows,
            cols,
            entries,
        })
    }

    pub fn zero(modulus: PrimeModulus, rows: usize, cols: usize) -> Self {
        LinearMapFp {
            modulus,
            rows,
            cols,
            entries: vec![0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, r: usize, c: usize) -> u64 {
        self.entries[r * self.cols + c]
    }

    pub fn entries(&self) -> &[u64] {
        &self.entries
    }

    pub fn apply(&self, v: &FpVector) -> Result<FpVector> {
        if v.dim() != self.cols || v.modulus() != self.modulus {
            return Err(Error::dims("linear map applied to wrong dimension"));
        }
        let m = self.modulus;
        let coords = (0..self.rows)
            .map(|r| {
                (0..self.cols).fold(0, |acc, c| m.add(acc, m.mul(self.entry(r, c), v.coords()[c])))
            })
            .collect();
        Ok(FpVector {
            modulus: m,
            coords,
        })
    }
}

/// An affine map psi(x) = A x + c; psi(x) - psi(0) is linear by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffineMapFp {
    pub linear: LinearMapFp,
    pub offset: FpVector,
}

impl AffineMapFp {
    pub fn new(linear: LinearMapFp, offset: FpVector) -> Result<Self> {
        if offset.dim() != linear.rows {
            return Err(Error::dims("affine offset dimension"));
        }
        Ok(AffineMapFp { linear, offset })
    }

    pub fn apply(&self, v: &FpVector) -> Result<FpVector> {
        self.linear.apply(v)?.add(&self.offset)
    }
}

/// Finds some y in u_0 + U with x_i . y = lambda_i for all i, or `None`
/// exactly when no such y exists (the solubility criterion of the underlying
/// lemma). Solves by row reduction over the coset parametrization
/// y = u_0 + B mu.
pub fn solve_on_coset(constraints: &[(FpVector, u64)], coset: &Coset) -> Result<Option<FpVector>> {
    let m = coset.base().modulus();
    for (x, _) in constraints {
        coset.base().check_compatible(x)?;
    }
    // x_i . (u0 + B mu) = lambda_i  <=>  (x_i . b_j)_j mu = lambda_i - x_i . u0
    let a: Vec<Vec<u64>> = constraints
        .iter()
        .map(|(x, _)| {
            coset
                .basis()
                .iter()
                .map(|b| dot(x, b).expect("checked dims"))
                .collect()
        })
        .collect();
    let b: Vec<u64> = constraints
        .iter()
        .map(|(x, lambda)| m.sub(*lambda, dot(x, coset.base()).expect("checked dims")))
        .collect();
    match solve_linear(&a, &b, m) {
        None => Ok(None),
        Some(mu) => {
            let mut y = coset.base().clone();
            for (l, basis_vec) in mu.iter().zip(coset.basis()) {
                y = y.add(&basis_vec.scale(*l))?;
            }
            Ok(Some(y))
        }
    }
}
