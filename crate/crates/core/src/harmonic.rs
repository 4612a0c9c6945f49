//! Dense complex function tables on product spaces: Fourier transforms,
//! directional and mixed convolutions, uniformity and box norms, large
//! spectra, and spectral convolution approximation.
//!
//! The Fourier transform treats the whole product space as a single group
//! through the canonical index bijection, with the product dot product; this
//! is the flattened view used whenever a single-group operation is applied
//! to a k-fold product. Accumulation order is fixed (canonical index order)
//! so results are bit-stable run to run.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;
use crate::space::{ProductSpace, SpaceJson};
use crate::{check_budget, Error, Result, TOLERANCE};

/// Dense complex-valued function on a [`ProductSpace`], values in canonical
/// index order. The `bounded` flag asserts sup |f| <= 1.
#[derive(Debug, Clone)]
pub struct FunctionTable {
    space: ProductSpace,
    values: Vec<Complex64>,
    bounded: bool,
}

impl FunctionTable {
    pub fn new(space: ProductSpace, values: Vec<Complex64>, bounded: bool) -> Result<Self> {
        if values.len() as u64 != space.total_size() {
            return Err(Error::dims("table length != total_size"));
        }
        let t = FunctionTable {
            space,
            values,
            bounded,
        };
        if bounded {
            let sup = t.linf_norm();
            if sup > 1.0 + 1e-12 {
                return Err(Error::Unbounded(sup));
            }
        }
        Ok(t)
    }

    pub fn constant(space: ProductSpace, c: Complex64) -> Self {
        let n = space.total_size() as usize;
        FunctionTable {
            space,
            values: vec![c; n],
            bounded: c.norm() <= 1.0 + 1e-12,
        }
    }

    pub fn from_fn(space: ProductSpace, mut f: impl FnMut(&[u64]) -> Complex64) -> Self {
        let values: Vec<Complex64> = space.points().map(|p| f(&p)).collect();
        FunctionTable {
            space,
            values,
            bounded: false,
        }
    }

    /// Unimodular phase table x -> omega^{e(x)} from a residue-valued rule.
    pub fn phase(space: ProductSpace, mut e: impl FnMut(&[u64]) -> u64) -> Self {
        let m = space.modulus();
        let values: Vec<Complex64> = space.points().map(|p| m.character(e(&p) % m.p())).collect();
        FunctionTable {
            space,
            values,
            bounded: true,
        }
    }

    /// Seeded random table with values uniform in the closed unit disc.
    pub fn random_disc(space: ProductSpace, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let n = space.total_size() as usize;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            loop {
                let re = 2.0 * rng.unit() - 1.0;
                let im = 2.0 * rng.unit() - 1.0;
                if re * re + im * im <= 1.0 {
                    values.push(Complex64::new(re, im));
                    break;
                }
            }
        }
        FunctionTable {
            space,
            values,
            bounded: true,
        }
    }

    /// Seeded random +-1-valued table.
    pub fn random_pm1(space: ProductSpace, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let n = space.total_size() as usize;
        let values = (0..n)
            .map(|_| {
                if rng.next_u64() & 1 == 0 {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(-1.0, 0.0)
                }
            })
            .collect();
        FunctionTable {
            space,
            values,
            bounded: true,
        }
    }

    #[inline]
    pub fn space(&self) -> &ProductSpace {
        &self.space
    }

    #[inline]
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    #[inline]
    pub fn value_at(&self, index: u64) -> Complex64 {
        self.values[index as usize]
    }

    pub fn is_bounded_by_one(&self) -> bool {
        self.linf_norm() <= 1.0 + 1e-12
    }

    fn check_same_space(&self, other: &FunctionTable) -> Result<()> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch);
        }
        Ok(())
    }

    pub fn mean(&self) -> Complex64 {
        self.values.iter().sum::<Complex64>() / self.values.len() as f64
    }

    /// Normalized L^q norm (E |f|^q)^{1/q}, q >= 1.
    pub fn lq_norm(&self, q: f64) -> Result<f64> {
        if q < 1.0 {
            return Err(Error::Invalid("lq_norm needs q >= 1".into()));
        }
        let mean: f64 =
            self.values.iter().map(|v| v.norm().powf(q)).sum::<f64>() / self.values.len() as f64;
        Ok(mean.powf(1.0 / q))
    }

    pub fn linf_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn l1_distance(&self, other: &FunctionTable) -> Result<f64> {
        self.check_same_space(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .sum::<f64>()
            / self.values.len() as f64)
    }

    pub fn l2_distance(&self, other: &FunctionTable) -> Result<f64> {
        self.check_same_space(other)?;
        Ok((self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            / self.values.len() as f64)
            .sqrt())
    }

    pub fn lq_distance(&self, other: &FunctionTable, q: f64) -> Result<f64> {
        self.check_same_space(other)?;
        if q < 1.0 {
            return Err(Error::Invalid("lq_distance needs q >= 1".into()));
        }
        Ok((self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm().powf(q))
            .sum::<f64>()
            / self.values.len() as f64)
            .powf(1.0 / q))
    }

    pub fn linf_distance(&self, other: &FunctionTable) -> Result<f64> {
        self.check_same_space(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }
}

/// Fourier coefficients indexed by frequencies r over the same space.
#[derive(Debug, Clone)]
pub struct Spectrum {
    space: ProductSpace,
    coefficients: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(space: ProductSpace, coefficients: Vec<Complex64>) -> Result<Self> {
        if coefficients.len() as u64 != space.total_size() {
            return Err(Error::dims("spectrum length != total_size"));
        }
        Ok(Spectrum {
            space,
            coefficients,
        })
    }

    pub fn space(&self) -> &ProductSpace {
        &self.space
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn coefficient(&self, r: u64) -> Complex64 {
        self.coefficients[r as usize]
    }

    /// sum_r |f_hat(r)|^2, which Parseval equates with E |f|^2.
    pub fn energy(&self) -> f64 {
        self.coefficients.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Per-axis character transform: `sign` -1 gives the forward kernel
/// chi(-t s), +1 the inverse kernel chi(t s). Works digit by digit on the
/// canonical big-endian index.
fn axis_transform(space: &ProductSpace, values: &mut [Complex64], sign: i64) {
    let p = space.p() as usize;
    let m = space.modulus();
    let total_dim = space.total_dim();
    let n = values.len();
    let mut omega = vec![Complex64::new(0.0, 0.0); p];
    for (e, w) in omega.iter_mut().enumerate() {
        let e = e as u64;
        let exp = if sign < 0 { m.neg(e) } else { e };
        *w = m.character(exp);
    }
    let mut scratch = vec![Complex64::new(0.0, 0.0); p];
    // Digit j has stride p^{total_dim-1-j}.
    let mut stride = n / p;
    for _digit in 0..total_dim {
        let block = stride * p;
        for base in (0..n).step_by(block) {
            for off in 0..stride {
                let start = base + off;
                for (t, slot) in scratch.iter_mut().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for s in 0..p {
                        acc += values[start + s * stride] * omega[(t * s) % p];
                    }
                    *slot = acc;
                }
                for (t, slot) in scratch.iter().enumerate() {
                    values[start + t * stride] = *slot;
                }
            }
        }
        stride /= p;
    }
}

/// f_hat(r) = E_x f(x) chi(-r.x) in the flattened single-group view.
pub fn fourier(f: &FunctionTable) -> Spectrum {
    let mut values = f.values.clone();
    axis_transform(&f.space, &mut values, -1);
    let n = values.len() as f64;
    for v in &mut values {
        *v /= n;
    }
    Spectrum {
        space: f.space.clone(),
        coefficients: values,
    }
}

/// f(x) = sum_r f_hat(r) chi(r.x).
pub fn inverse_fourier(s: &Spectrum) -> FunctionTable {
    let mut values = s.coefficients.clone();
    axis_transform(&s.space, &mut values, 1);
    FunctionTable {
        space: s.space.clone(),
        values,
        bounded: false,
    }
}

/// f (*) g (x) = E_y f(x + y) conj(g(y)), computed from the defining formula.
pub fn conv(f: &FunctionTable, g: &FunctionTable) -> Result<FunctionTable> {
    f.check_same_space(g)?;
    let space = &f.space;
    let n = space.total_size();
    check_budget(n.saturating_mul(n), space.budget())?;
    let mut values = vec![Complex64::new(0.0, 0.0); n as usize];
    let mut x = vec![0u64; space.total_dim()];
    let mut y = vec![0u64; space.total_dim()];
    for (xi, out) in values.iter_mut().enumerate() {
        space.write_point_of(xi as u64, &mut x);
        let mut acc = Complex64::new(0.0, 0.0);
        for yi in 0..n {
            space.write_point_of(yi, &mut y);
            let xy = space.index_of(&space.add_points(&x, &y));
            acc += f.values[xy as usize] * g.values[yi as usize].conj();
        }
        *out = acc / n as f64;
    }
    Ok(FunctionTable {
        space: space.clone(),
        values,
        bounded: false,
    })
}

/// Digit-wise sum of two indices of factor `d` (vector addition of the
/// underlying coordinate blocks).
fn factor_index_add(space: &ProductSpace, d: usize, a: u64, b: u64) -> u64 {
    let p = space.p();
    let m = space.modulus();
    let nd = space.dim(d);
    let mut digits = vec![0u64; nd];
    let (mut a, mut b) = (a, b);
    for slot in digits.iter_mut().rev() {
        *slot = m.add(a % p, b % p);
        a /= p;
        b /= p;
    }
    digits.iter().fold(0, |acc, &dg| acc * p + dg)
}

/// Convolution in direction d:
/// (conv_d f)(x_{[k] \ d}, y_d) = E_{z_d} f(.., y_d + z_d, ..) conj f(.., z_d, ..).
pub fn dir_conv(f: &FunctionTable, d: usize) -> Result<FunctionTable> {
    let space = &f.space;
    space.check_direction(d)?;
    let q = space.factor_size(d) as usize;
    let lo: usize = (d + 1..space.k())
        .map(|i| space.factor_size(i) as usize)
        .product();
    let hi = f.values.len() / (q * lo);
    let mut values = vec![Complex64::new(0.0, 0.0); f.values.len()];
    let mut fiber = vec![Complex64::new(0.0, 0.0); q];
    for h in 0..hi {
        for l in 0..lo {
            for (mid, slot) in fiber.iter_mut().enumerate() {
                *slot = f.values[(h * q + mid) * lo + l];
            }
            for yd in 0..q {
                let mut acc = Complex64::new(0.0, 0.0);
                for (zd, zval) in fiber.iter().enumerate() {
                    let sum = factor_index_add(space, d, yd as u64, zd as u64) as usize;
                    acc += fiber[sum] * zval.conj();
                }
                values[(h * q + yd) * lo + l] = acc / q as f64;
            }
        }
    }
    Ok(FunctionTable {
        space: space.clone(),
        values,
        bounded: f.bounded,
    })
}

/// Iterated directional convolution: `dirs[0]` is applied first, so the
/// result is conv_{d_r} ... conv_{d_1} f for dirs = (d_1, ..., d_r).
pub fn mixed_conv(f: &FunctionTable, dirs: &[usize]) -> Result<FunctionTable> {
    if dirs.is_empty() {
        return Err(Error::Invalid(
            "mixed_conv needs at least one direction".into(),
        ));
    }
    let mut g = dir_conv(f, dirs[0])?;
    for &d in &dirs[1..] {
        g = dir_conv(&g, d)?;
    }
    Ok(g)
}

/// Number of parameter assignments in the expanded configuration average for
/// a direction word of length r (outermost first): prod_j |G_{e_j}|^{2^{j-1}}.
fn expansion_size(space: &ProductSpace, outer_first: &[usize]) -> Option<u64> {
    let mut total: u64 = 1;
    for (j, &d) in outer_first.iter().enumerate() {
        let copies = 1u64.checked_shl(j as u32)?;
        for _ in 0..copies {
            total = total.checked_mul(space.factor_size(d))?;
        }
    }
    Some(total)
}

/// The explicit configuration average for the mixed convolution: evaluates
/// conv_{d_r} ... conv_{d_1} f at `x` by averaging
/// prod_{eps in {0,1}^r} Conj^{r-|eps|} f(p^{a,eps}) over all parameter
/// assignments, with the points p^{a,eps} built coordinate by coordinate.
/// Must agree with `mixed_conv(f, dirs)` at every point.
pub fn mixed_conv_expanded(f: &FunctionTable, dirs: &[usize], x: &[u64]) -> Result<Complex64> {
    if dirs.is_empty() {
        return Err(Error::Invalid("empty direction word".into()));
    }
    let space = &f.space;
    for &d in dirs {
        space.check_direction(d)?;
    }
    if x.len() != space.total_dim() {
        return Err(Error::dims("point length"));
    }
    let r = dirs.len();
    // The expansion is stated for the operator word with the outermost
    // convolution first; `dirs` lists the innermost first.
    let outer_first: Vec<usize> = dirs.iter().rev().copied().collect();
    let assignments = expansion_size(space, &outer_first).ok_or(Error::BudgetExceeded {
        needed: u64::MAX,
        budget: space.budget(),
    })?;
    check_budget(assignments.saturating_mul(1 << r), space.budget())?;

    // Slot layout: the j-th convolution (0-based, outermost first) carries
    // 2^j parameters in G_{outer_first[j]}; the entry for a given eps packs
    // bits eps_0 .. eps_{j-1} little-endian.
    let slot_offsets: Vec<usize> = (0..=r).map(|j| (1usize << j) - 1).collect();
    let n_slots = slot_offsets[r];
    let slot_factor: Vec<usize> = (0..n_slots)
        .map(|s| {
            let j = (s + 1).ilog2() as usize;
            outer_first[j]
        })
        .collect();
    let mut positions: Vec<Vec<usize>> = vec![Vec::new(); space.k()];
    for (j, &d) in outer_first.iter().enumerate() {
        positions[d].push(j);
    }

    let mut params = vec![0u64; n_slots];
    let mut acc = Complex64::new(0.0, 0.0);
    let mut point = vec![0u64; space.total_dim()];
    let m = space.modulus();
    loop {
        let mut prod = Complex64::new(1.0, 0.0);
        for eps in 0..(1u32 << r) {
            let eps_bit = |j: usize| (eps >> j) & 1 == 1;
            point.iter_mut().for_each(|c| *c = 0);
            for d in 0..space.k() {
                let range = space.factor_range(d);
                let pos = &positions[d];
                // x_d survives iff eps is 1 at every position of d (an
                // empty product of epsilons for directions not in the word).
                if pos.iter().all(|&j| eps_bit(j)) {
                    point[range.clone()].copy_from_slice(&x[range.clone()]);
                }
                // Parameter a^{pos[t]} survives iff eps is 1 at all later
                // positions of d.
                for (t, &j) in pos.iter().enumerate() {
                    if pos[t + 1..].iter().all(|&s| eps_bit(s)) {
                        let entry =
                            (0..j).fold(0usize, |a, b| a | (((eps >> b) & 1) as usize) << b);
                        let slot = slot_offsets[j] + entry;
                        let coords = space.factor_coords_of(d, params[slot]);
                        for (c, add) in range.clone().zip(&coords) {
                            point[c] = m.add(point[c], *add);
                        }
                    }
                }
            }
            let v = f.values[space.index_of(&point) as usize];
            let conjugations = r as u32 - eps.count_ones();
            prod *= if conjugations % 2 == 1 { v.conj() } else { v };
        }
        acc += prod;

        let mut s = 0;
        loop {
            if s == n_slots {
                return Ok(acc / assignments as f64);
            }
            params[s] += 1;
            if params[s] < space.factor_size(slot_factor[s]) {
                break;
            }
            params[s] = 0;
            s += 1;
        }
    }
}

/// Multiplicative derivative (del_a f)(x) = f(x) conj f(x - a) in the
/// flattened single-group view; `a` is a point index.
pub fn mult_derivative_index(f: &FunctionTable, a: u64) -> FunctionTable {
    let space = &f.space;
    let a_pt = space.point_of(a);
    let mut values = vec![Complex64::new(0.0, 0.0); f.values.len()];
    let mut x = vec![0u64; space.total_dim()];
    for (xi, out) in values.iter_mut().enumerate() {
        space.write_point_of(xi as u64, &mut x);
        let shifted = space.index_of(&space.sub_points(&x, &a_pt));
        *out = f.values[xi] * f.values[shifted as usize].conj();
    }
    FunctionTable {
        space: space.clone(),
        values,
        bounded: f.bounded,
    }
}

fn uk_pow(f: &FunctionTable, k: u32) -> f64 {
    if k == 1 {
        return f.mean().norm_sqr();
    }
    let n = f.space.total_size();
    let mut acc = 0.0;
    for a in 0..n {
        let df = mult_derivative_index(f, a);
        acc += uk_pow(&df, k - 1);
    }
    acc / n as f64
}

/// Gowers uniformity norm ||f||_{U^k}, computed through the recursion
/// ||f||_{U^k}^{2^k} = E_a ||del_a f||_{U^{k-1}}^{2^{k-1}}.
pub fn uk_norm(f: &FunctionTable, k: u32) -> Result<f64> {
    if k == 0 {
        return Err(Error::Invalid("uk_norm needs k >= 1".into()));
    }
    let n = f.space.total_size();
    crate::checked_pow(n, k, f.space.budget())?;
    let pow = uk_pow(f, k);
    if pow < -TOLERANCE {
        return Err(Error::Invalid(format!("U^{k} power negative: {pow}")));
    }
    Ok(pow.max(0.0).powf(1.0 / (1u64 << k) as f64))
}

/// Direct evaluation of the defining (k+1)-fold average, for tiny sizes
/// only; the independent oracle for `uk_norm`.
pub fn uk_norm_direct(f: &FunctionTable, k: u32) -> Result<f64> {
    let space = &f.space;
    let n = space.total_size();
    let total = crate::checked_pow(n, k + 1, space.budget())?;
    let dim = space.total_dim();
    let mut acc = Complex64::new(0.0, 0.0);
    let mut tuple = vec![0u64; (k as usize + 1) * dim];
    for t in 0..total {
        let mut idx = t;
        for j in 0..=k as usize {
            space.write_point_of(idx % n, &mut tuple[j * dim..(j + 1) * dim]);
            idx /= n;
        }
        let (x, avec) = tuple.split_at(dim);
        let mut prod = Complex64::new(1.0, 0.0);
        for eps in 0..(1u32 << k) {
            let mut pt = x.to_vec();
            for i in 0..k as usize {
                if (eps >> i) & 1 == 1 {
                    pt = space.sub_points(&pt, &avec[i * dim..(i + 1) * dim]);
                }
            }
            let v = f.values[space.index_of(&pt) as usize];
            prod *= if eps.count_ones() % 2 == 1 { v.conj() } else { v };
        }
        acc += prod;
    }
    let pow = acc.re / total as f64;
    Ok(pow.max(0.0).powf(1.0 / (1u64 << k) as f64))
}

/// Box norm over the k-fold product:
/// ||f||_box^{2^k} = E_{x_i, y_i} prod_{I subset [k]} Conj^{|I|} f(x_I, y_{[k]\I}).
pub fn box_norm(f: &FunctionTable) -> Result<f64> {
    let space = &f.space;
    let k = space.k();
    let mut pairs: u64 = 1;
    for i in 0..k {
        pairs = pairs
            .checked_mul(space.factor_size(i) * space.factor_size(i))
            .ok_or(Error::BudgetExceeded {
                needed: u64::MAX,
                budget: space.budget(),
            })?;
    }
    check_budget(pairs.saturating_mul(1 << k), space.budget())?;

    let mut acc = Complex64::new(0.0, 0.0);
    let mut xy = vec![0u64; 2 * k]; // factor indices: x_1..x_k, y_1..y_k
    let mut point = vec![0u64; space.total_dim()];
    loop {
        let mut prod = Complex64::new(1.0, 0.0);
        for mask in 0..(1u32 << k) {
            for i in 0..k {
                let fi = if (mask >> i) & 1 == 1 { xy[i] } else { xy[k + i] };
                let coords = space.factor_coords_of(i, fi);
                point[space.factor_range(i)].copy_from_slice(&coords);
            }
            let v = f.values[space.index_of(&point) as usize];
            prod *= if mask.count_ones() % 2 == 1 { v.conj() } else { v };
        }
        acc += prod;

        let mut s = 0;
        loop {
            if s == 2 * k {
                let pow = acc.re / pairs as f64;
                if pow < -TOLERANCE {
                    return Err(Error::Invalid(format!("box power negative: {pow}")));
                }
                return Ok(pow.max(0.0).powf(1.0 / (1u64 << k) as f64));
            }
            xy[s] += 1;
            if xy[s] < space.factor_size(s % k) {
                break;
            }
            xy[s] = 0;
            s += 1;
        }
    }
}

/// Frequencies r with |f_hat(r)| >= eps. Requires sup |f| <= 1; the returned
/// set then has at most eps^{-2} elements, which is asserted.
pub fn large_spectrum(f: &FunctionTable, eps: f64) -> Result<Vec<u64>> {
    if eps <= 0.0 {
        return Err(Error::Invalid("eps must be positive".into()));
    }
    if !f.is_bounded_by_one() {
        return Err(Error::Unbounded(f.linf_norm()));
    }
    let spec = fourier(f);
    let out: Vec<u64> = spec
        .coefficients
        .iter()
        .enumerate()
        .filter(|(_, c)| c.norm() >= eps)
        .map(|(r, _)| r as u64)
        .collect();
    assert!(
        (out.len() as f64) <= eps.powi(-2) + TOLERANCE,
        "large spectrum bound violated: {} frequencies at eps {}",
        out.len(),
        eps
    );
    Ok(out)
}

/// Spectral approximation of f (*) g over the joint large spectrum at
/// threshold eps/2 (frequencies where both transforms are large, following
/// the L^2 approximation lemma's hypothesis).
#[derive(Debug)]
pub struct SpectralApprox {
    pub approximant: FunctionTable,
    pub exact: FunctionTable,
    pub spectrum_used: Vec<u64>,
    pub l2_error: f64,
    eps: f64,
}

impl SpectralApprox {
    /// ||f (*) g - approximant||_{L^q}, asserted <= 8 eps^{1/q}.
    pub fn lq_error(&self, q: f64) -> Result<f64> {
        let e = self.exact.lq_distance(&self.approximant, q)?;
        assert!(
            e <= 8.0 * self.eps.powf(1.0 / q) + TOLERANCE,
            "L^{q} approximation bound violated: {e} > 8 eps^(1/q)"
        );
        Ok(e)
    }
}

pub fn spectral_conv_approx(
    f: &FunctionTable,
    g: &FunctionTable,
    eps: f64,
) -> Result<SpectralApprox> {
    f.check_same_space(g)?;
    if eps <= 0.0 {
        return Err(Error::Invalid("eps must be positive".into()));
    }
    for t in [f, g] {
        if !t.is_bounded_by_one() {
            return Err(Error::Unbounded(t.linf_norm()));
        }
    }
    let fs = fourier(f);
    let gs = fourier(g);
    let thresh = eps / 2.0;
    let spectrum_used: Vec<u64> = (0..f.space.total_size())
        .filter(|&r| fs.coefficient(r).norm() >= thresh && gs.coefficient(r).norm() >= thresh)
        .collect();
    // approximant(x) = sum_{r in S} f_hat(r) conj(g_hat(r)) chi(x.r)
    let mut kept = vec![Complex64::new(0.0, 0.0); f.values.len()];
    for &r in &spectrum_used {
        kept[r as usize] = fs.coefficient(r) * gs.coefficient(r).conj();
    }
    let approximant = inverse_fourier(&Spectrum {
        space: f.space.clone(),
        coefficients: kept,
    });
    let exact = conv(f, g)?;
    let l2_error = exact.l2_distance(&approximant)?;
    assert!(
        l2_error <= eps + TOLERANCE,
        "L^2 approximation bound violated: {l2_error} > {eps}"
    );
    Ok(SpectralApprox {
        approximant,
        exact,
        spectrum_used,
        l2_error,
        eps,
    })
}

/// Wire format {"space": ..., "values": [[re, im], ...]}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableJson {
    pub space: SpaceJson,
    pub values: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub bounded: bool,
}

impl TableJson {
    pub fn of(t: &FunctionTable) -> Self {
        TableJson {
            space: SpaceJson::of(&t.space),
            values: t.values.iter().map(|v| [v.re, v.im]).collect(),
            bounded: t.bounded,
        }
    }

    pub fn of_spectrum(s: &Spectrum) -> Self {
        TableJson {
            space: SpaceJson::of(&s.space),
            values: s.coefficients.iter().map(|v| [v.re, v.im]).collect(),
            bounded: false,
        }
    }

    pub fn to_table(&self) -> Result<FunctionTable> {
        let space = self.space.to_space()?;
        FunctionTable::new(
            space,
            self.values
                .iter()
                .map(|[re, im]| Complex64::new(*re, *im))
                .collect(),
            self.bounded,
        )
    }

    pub fn to_spectrum(&self) -> Result<Spectrum> {
        let space = self.space.to_space()?;
        Spectrum::new(
            space,
            self.values
                .iter()
                .map(|[re, im]| Complex64::new(*re, *im))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::ProductSpace;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Direct double-loop transform, the oracle for the axis-wise path.
    fn fourier_direct(f: &FunctionTable) -> Vec<Complex64> {
        let space = f.space();
        let n = space.total_size();
        (0..n)
            .map(|r| {
                let rp = space.point_of(r);
                let mut acc = c(0.0, 0.0);
                for x in 0..n {
                    let xp = space.point_of(x);
                    let e = space.modulus().neg(space.dot(&rp, &xp));
                    acc += f.value_at(x) * space.modulus().character(e);
                }
                acc / n as f64
            })
            .collect()
    }

    #[test]
    fn fourier_of_constant_and_characters() {
        let s = ProductSpace::new(2, &[3]).unwrap();
        let one = FunctionTable::constant(s.clone(), c(1.0, 0.0));
        let spec = fourier(&one);
        assert!((spec.coefficient(0) - c(1.0, 0.0)).norm() < 1e-12);
        for r in 1..8 {
            assert!(spec.coefficient(r).norm() < 1e-12);
        }

        // f(x) = chi(s.x) has spectrum = indicator of s.
        let sfreq = s.point_of(5);
        let f = FunctionTable::phase(s.clone(), |x| s.dot(&sfreq, x));
        let spec = fourier(&f);
        for r in 0..8 {
            let expected = if r == 5 { 1.0 } else { 0.0 };
            assert!((spec.coefficient(r).norm() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn fourier_matches_direct_summation() {
        let s = ProductSpace::new(3, &[2]).unwrap();
        let f = FunctionTable::random_disc(s, 17);
        let spec = fourier(&f);
        let direct = fourier_direct(&f);
        for (a, b) in spec.coefficients().iter().zip(&direct) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn inversion_and_parseval() {
        let s = ProductSpace::new(5, &[2]).unwrap();
        let f = FunctionTable::random_disc(s, 3);
        let spec = fourier(&f);
        let back = inverse_fourier(&spec);
        assert!(f.linf_distance(&back).unwrap() < 1e-9);
        let lhs = spec.energy();
        let rhs = f.lq_norm(2.0).unwrap().powi(2);
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn conv_fourier_identity() {
        let s = ProductSpace::new(2, &[4]).unwrap();
        let f = FunctionTable::random_disc(s.clone(), 5);
        let g = FunctionTable::random_disc(s.clone(), 6);
        let direct = conv(&f, &g).unwrap();
        let fs = fourier(&f);
        let gs = fourier(&g);
        let prod = Spectrum::new(
            s,
            fs.coefficients()
                .iter()
                .zip(gs.coefficients())
                .map(|(a, b)| a * b.conj())
                .collect(),
        )
        .unwrap();
        let via_fourier = inverse_fourier(&prod);
        assert!(direct.linf_distance(&via_fourier).unwrap() < 1e-9);
    }

    #[test]
    fn conv_trivial_cases() {
        let s = ProductSpace::new(2, &[3]).unwrap();
        let one = FunctionTable::constant(s.clone(), c(1.0, 0.0));
        let conv1 = conv(&one, &one).unwrap();
        assert!(conv1.linf_distance(&one).unwrap() < 1e-12);

        let f = FunctionTable::random_disc(s.clone(), 9);
        let zero = FunctionTable::constant(s.clone(), c(0.0, 0.0));
        let conv0 = conv(&f, &zero).unwrap();
        assert!(conv0.linf_norm() < 1e-12);
    }

    #[test]
    fn dir_conv_phase_example() {
        // f(x1, x2) = chi(x1 x2) on F_2 x F_2: conv in direction 2 gives
        // chi(x1 y2) again.
        let s = ProductSpace::new(2, &[1, 1]).unwrap();
        let f = FunctionTable::phase(s.clone(), |x| x[0] * x[1]);
        let g = dir_conv(&f, 1).unwrap();
        assert!(g.linf_distance(&f).unwrap() < 1e-12);
        let one = FunctionTable::constant(s, c(1.0, 0.0));
        for d in 0..2 {
            assert!(dir_conv(&one, d).unwrap().linf_distance(&one).unwrap() < 1e-12);
        }
    }

    #[test]
    fn dir_conv_at_zero_shift_is_nonnegative() {
        let s = ProductSpace::new(3, &[1, 1]).unwrap();
        let f = FunctionTable::random_disc(s.clone(), 11);
        for d in 0..2 {
            let g = dir_conv(&f, d).unwrap();
            for i in 0..s.total_size() {
                let pt = s.point_of(i);
                if pt[s.factor_range(d)].iter().all(|&v| v == 0) {
                    let v = g.value_at(i);
                    assert!(v.im.abs() < 1e-12);
                    assert!(v.re >= -1e-12);
                }
            }
        }
        assert!(dir_conv(&f, 2).is_err());
    }

    #[test]
    fn mixed_conv_equals_expansion_small_words() {
        let s = ProductSpace::new(2, &[1, 1]).unwrap();
        let f = FunctionTable::random_disc(s.clone(), 23);
        let words: Vec<Vec<usize>> = vec![
            vec![0],
            vec![1],
            vec![0, 1],
            vec![1, 0],
            vec![0, 0],
            vec![0, 1, 0],
            vec![1, 0, 1],
            vec![1, 1, 0],
        ];
        for w in words {
            let rec = mixed_conv(&f, &w).unwrap();
            for x in 0..s.total_size() {
                let pt = s.point_of(x);
                let exp = mixed_conv_expanded(&f, &w, &pt).unwrap();
                assert!(
                    (rec.value_at(x) - exp).norm() < 1e-9,
                    "word {w:?} point {x}"
                );
            }
        }
    }

    #[test]
    fn expanded_constant_input() {
        let s = ProductSpace::new(3, &[1, 1]).unwrap();
        let cval = c(0.3, -0.4);
        let f = FunctionTable::constant(s.clone(), cval);
        for w in [vec![0usize], vec![0, 1], vec![1, 0, 1]] {
            let exp = mixed_conv_expanded(&f, &w, &s.point_of(4)).unwrap();
            let want = cval.norm().powi(2i32.pow(w.len() as u32));
            assert!((exp - c(want, 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn uk_norm_basics() {
        let s = ProductSpace::new(2, &[4]).unwrap();
        let one = FunctionTable::constant(s.clone(), c(1.0, 0.0));
        for k in 1..=3 {
            assert!((uk_norm(&one, k).unwrap() - 1.0).abs() < 1e-9);
        }
        let sfreq = s.point_of(9);
        let ch = FunctionTable::phase(s.clone(), |x| s.dot(&sfreq, x));
        assert!((uk_norm(&ch, 2).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn u2_identity_and_direct_oracle() {
        let s = ProductSpace::new(2, &[4]).unwrap();
        let f = FunctionTable::random_disc(s, 31);
        let spec = fourier(&f);
        let sum4: f64 = spec
            .coefficients()
            .iter()
            .map(|v| v.norm_sqr().powi(2))
            .sum();
        let u2 = uk_norm(&f, 2).unwrap();
        assert!((u2.powi(4) - sum4).abs() < 1e-9);
        let direct = uk_norm_direct(&f, 2).unwrap();
        assert!((u2 - direct).abs() < 1e-9);
    }

    #[test]
    fn uk_matches_direct_for_k3_tiny() {
        let s = ProductSpace::new(2, &[3]).unwrap();
        let f = FunctionTable::random_disc(s, 41);
        let rec = uk_norm(&f, 3).unwrap();
        let dir = uk_norm_direct(&f, 3).unwrap();
        assert!((rec - dir).abs() < 1e-9);
    }

    #[test]
    fn box_norm_examples() {
        let s = ProductSpace::new(2, &[1, 1]).unwrap();
        let one = FunctionTable::constant(s.clone(), c(1.0, 0.0));
        assert!((box_norm(&one).unwrap() - 1.0).abs() < 1e-12);

        // product of unimodular single-variable functions has box norm 1
        let f = FunctionTable::phase(s.clone(), |x| x[0] + x[1]);
        assert!((box_norm(&f).unwrap() - 1.0).abs() < 1e-9);

        // f = chi(xy): box_norm^4 = bias(xy) = 1/2
        let g = FunctionTable::phase(s, |x| x[0] * x[1]);
        let b = box_norm(&g).unwrap();
        assert!((b.powi(4) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn large_spectrum_examples() {
        let s = ProductSpace::new(2, &[3]).unwrap();
        let one = FunctionTable::constant(s.clone(), c(1.0, 0.0));
        assert_eq!(large_spectrum(&one, 0.5).unwrap(), vec![0]);

        let sfreq = s.point_of(6);
        let ch = FunctionTable::phase(s.clone(), |x| s.dot(&sfreq, x));
        assert_eq!(large_spectrum(&ch, 0.5).unwrap(), vec![6]);

        let f = FunctionTable::random_pm1(ProductSpace::new(2, &[6]).unwrap(), 77);
        for eps in [0.1, 0.2, 0.5] {
            let ls = large_spectrum(&f, eps).unwrap();
            assert!((ls.len() as f64) <= eps.powi(-2));
        }

        let big = FunctionTable::constant(s, c(2.0, 0.0));
        assert!(matches!(large_spectrum(&big, 0.5), Err(Error::Unbounded(_))));
    }

    #[test]
    fn spectral_approx_exact_for_characters_and_zero() {
        let s = ProductSpace::new(2, &[4]).unwrap();
        let sfreq = s.point_of(3);
        let ch = FunctionTable::phase(s.clone(), |x| s.dot(&sfreq, x));
        let a = spectral_conv_approx(&ch, &ch, 0.3).unwrap();
        assert!(a.l2_error < 1e-9);
        assert!(a.exact.linf_distance(&a.approximant).unwrap() < 1e-9);

        let zero = FunctionTable::constant(s, c(0.0, 0.0));
        let a0 = spectral_conv_approx(&zero, &zero, 0.3).unwrap();
        assert!(a0.l2_error < 1e-12);
    }

    #[test]
    fn spectral_approx_random_bounded() {
        let s = ProductSpace::new(2, &[6]).unwrap();
        for seed in 0..5 {
            let f = FunctionTable::random_disc(s.clone(), 1000 + seed);
            let g = FunctionTable::random_disc(s.clone(), 2000 + seed);
            let a = spectral_conv_approx(&f, &g, 0.2).unwrap();
            assert!(a.l2_error <= 0.2 + 1e-9);
            assert!(a.lq_error(4.0).unwrap() <= 8.0 * 0.2f64.powf(0.25) + 1e-9);
        }
    }

    #[test]
    fn norms_trivial() {
        let s = ProductSpace::new(2, &[3]).unwrap();
        let one = FunctionTable::constant(s.clone(), c(1.0, 0.0));
        assert!((one.lq_norm(3.0).unwrap() - 1.0).abs() < 1e-12);
        let zero = FunctionTable::constant(s.clone(), c(0.0, 0.0));
        assert!(zero.linf_norm() < 1e-12);
        let f = FunctionTable::random_disc(s, 2);
        assert!(f.l1_distance(&f).unwrap() < 1e-12);
    }

    #[test]
    fn l4bound_and_linfty_stability() {
        // l4bound: (E_d |E_x conj f(x) g(x+d)|^2)^2 <= min(sum |f^|^4, sum |g^|^4)
        let s = ProductSpace::new(2, &[4]).unwrap();
        for seed in 0..8 {
            let f = FunctionTable::random_disc(s.clone(), 300 + seed);
            let g = FunctionTable::random_disc(s.clone(), 400 + seed);
            // E_x conj f(x) g(x+d) = (g (*) f)(d)
            let cv = conv(&g, &f).unwrap();
            let lhs = cv.values().iter().map(|v| v.norm_sqr()).sum::<f64>()
                / cv.values().len() as f64;
            let sum4 = |t: &FunctionTable| {
                fourier(t)
                    .coefficients()
                    .iter()
                    .map(|v| v.norm_sqr().powi(2))
                    .sum::<f64>()
            };
            assert!(lhs * lhs <= sum4(&f).min(sum4(&g)) + 1e-9);
        }

        // L-infinity stability of mixed convolutions covering all directions
        let s2 = ProductSpace::new(2, &[1, 1]).unwrap();
        for seed in 0..6 {
            let f = FunctionTable::random_disc(s2.clone(), 500 + seed);
            let g = FunctionTable::random_disc(s2.clone(), 600 + seed);
            let dirs = [0usize, 1, 0];
            let lhs = mixed_conv(&f, &dirs)
                .unwrap()
                .linf_distance(&mixed_conv(&g, &dirs).unwrap())
                .unwrap();
            let rhs = 2f64.powi(dirs.len() as i32) * f.l1_distance(&g).unwrap();
            assert!(lhs <= rhs + 1e-9);
        }
    }

    #[test]
    fn box_cauchy_schwarz_random() {
        let s = ProductSpace::new(2, &[2, 1]).unwrap();
        let tabs: Vec<FunctionTable> = (0..4)
            .map(|i| FunctionTable::random_disc(s.clone(), 700 + i))
            .collect();
        // LHS: E f11(x1,y1) conj f12(x1,y2) conj f21(x2,y1) f22(x2,y2)
        let q0 = s.factor_size(0);
        let q1 = s.factor_size(1);
        let at = |t: &FunctionTable, a: u64, b: u64| t.value_at(a * q1 + b);
        let mut acc = c(0.0, 0.0);
        for x1 in 0..q0 {
            for x2 in 0..q0 {
                for y1 in 0..q1 {
                    for y2 in 0..q1 {
                        acc += at(&tabs[0], x1, y1)
                            * at(&tabs[1], x1, y2).conj()
                            * at(&tabs[2], x2, y1).conj()
                            * at(&tabs[3], x2, y2);
                    }
                }
            }
        }
        let lhs = (acc / ((q0 * q0 * q1 * q1) as f64)).norm();
        let rhs: f64 = tabs.iter().map(|t| box_norm(t).unwrap()).product();
        assert!(lhs <= rhs + 1e-9);
    }

    #[test]
    fn unif_bound2_random() {
        // |E f(x) prod_i f_i(x_{[k] \ i})| <= ||f||_box for k=2
        let s = ProductSpace::new(2, &[2, 2]).unwrap();
        let f = FunctionTable::random_disc(s.clone(), 900);
        let f1 = FunctionTable::random_disc(s.clone(), 901);
        let f2 = FunctionTable::random_disc(s.clone(), 902);
        let q = s.factor_size(0);
        let mut acc = c(0.0, 0.0);
        for a in 0..q {
            for b in 0..q {
                let idx = a * q + b;
                // f1 depends only on the second block, f2 only on the first
                acc += f.value_at(idx) * f1.value_at(b) * f2.value_at(a * q);
            }
        }
        let lhs = (acc / (q * q) as f64).norm();
        assert!(lhs <= box_norm(&f).unwrap() + 1e-9);
    }

    #[test]
    fn table_json_roundtrip() {
        let s = ProductSpace::new(3, &[1, 1]).unwrap();
        let f = FunctionTable::random_disc(s, 55);
        let j = TableJson::of(&f);
        let text = serde_json::to_string(&j).unwrap();
        let back: TableJson = serde_json::from_str(&text).unwrap();
        let g = back.to_table().unwrap();
        assert_eq!(f.values(), g.values());
    }
}
