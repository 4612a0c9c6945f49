//! Discrete and multiplicative derivatives, polynomial-degree testing,
//! approximate-polynomial statistics, polarization, and polynomial-phase
//! correlation with exhaustive fit oracles.
//!
//! The discrete derivative is fixed to Delta_a f(x) = f(x+a) - f(x) and the
//! multiplicative derivative to del_a f(x) = f(x) conj f(x-a); degree
//! statements are unaffected by the shift convention.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::harmonic::{self, FunctionTable};
use crate::multiaffine::MultilinearForm;
use crate::rng::SplitMix64;
use crate::space::{FpVector, ProductSpace};
use crate::{check_budget, checked_pow, Error, Result};

/// A total function G = F_p^n -> F_p^h as a dense table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupFunctionH {
    space: ProductSpace,
    h: usize,
    values: Vec<FpVector>,
}

impl GroupFunctionH {
    pub fn new(space: ProductSpace, h: usize, values: Vec<FpVector>) -> Result<Self> {
        if space.k() != 1 {
            return Err(Error::pre("group functions live on a single group"));
        }
        if h == 0 {
            return Err(Error::Invalid("h must be >= 1".into()));
        }
        if values.len() as u64 != space.total_size() {
            return Err(Error::dims("table length != total_size"));
        }
        for v in &values {
            if v.dim() != h || v.modulus() != space.modulus() {
                return Err(Error::dims("value dimension"));
            }
        }
        Ok(GroupFunctionH { space, h, values })
    }

    pub fn from_fn(
        space: ProductSpace,
        h: usize,
        mut f: impl FnMut(&[u64]) -> FpVector,
    ) -> Result<Self> {
        let values: Vec<FpVector> = space.points().map(|p| f(&p)).collect();
        GroupFunctionH::new(space, h, values)
    }

    pub fn random(space: ProductSpace, h: usize, seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let p = space.p();
        let m = space.modulus();
        let values = (0..space.total_size())
            .map(|_| FpVector::new(m, (0..h).map(|_| rng.residue(p)).collect()).unwrap())
            .collect();
        GroupFunctionH::new(space, h, values)
    }

    pub fn space(&self) -> &ProductSpace {
        &self.space
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn value(&self, index: u64) -> &FpVector {
        &self.values[index as usize]
    }

    pub fn values(&self) -> &[FpVector] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.is_zero())
    }

    pub fn constant(space: ProductSpace, value: FpVector) -> Result<Self> {
        let n = space.total_size() as usize;
        GroupFunctionH::new(space, value.dim(), vec![value; n])
    }
}

/// Delta_a f(x) = f(x + a) - f(x), exact in F_p^h.
pub fn delta(f: &GroupFunctionH, a: &FpVector) -> Result<GroupFunctionH> {
    let space = &f.space;
    if a.dim() != space.dim(0) || a.modulus() != space.modulus() {
        return Err(Error::dims("shift dimension"));
    }
    let a_idx = space.index_of(a.coords());
    delta_index(f, a_idx)
}

fn delta_index(f: &GroupFunctionH, a: u64) -> Result<GroupFunctionH> {
    let space = &f.space;
    let values = (0..space.total_size())
        .map(|x| {
            let shifted = space.index_add(x, a);
            f.values[shifted as usize].sub(&f.values[x as usize]).unwrap()
        })
        .collect();
    GroupFunctionH::new(space.clone(), f.h, values)
}

/// Multiplicative derivative del_a f(x) = f(x) conj f(x - a) for a complex
/// table, `a` given as a flat point.
pub fn mult_derivative(f: &FunctionTable, a: &[u64]) -> FunctionTable {
    harmonic::mult_derivative_index(f, f.space().index_of(a))
}

/// A witness that some iterated derivative fails to vanish.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DegreeWitness {
    pub shifts: Vec<u64>,
    pub x: u64,
}

/// True (i.e. `None`) iff Delta_{a_1} .. Delta_{a_{d+1}} f = 0 for all
/// shifts, which characterizes degree <= d when d < p. Exhaustive over
/// N^{d+2} steps.
pub fn degree_test(f: &GroupFunctionH, d: usize) -> Result<Option<DegreeWitness>> {
    let space = &f.space;
    if d as u64 >= space.p() {
        return Err(Error::pre(format!(
            "derivative characterization needs d < p (d={d}, p={})",
            space.p()
        )));
    }
    checked_pow(space.total_size(), d as u32 + 2, space.budget())?;
    let mut shifts = Vec::with_capacity(d + 1);
    Ok(degree_scan(f, d + 1, &mut shifts))
}

fn degree_scan(f: &GroupFunctionH, depth: usize, shifts: &mut Vec<u64>) -> Option<DegreeWitness> {
    if depth == 0 {
        return f
            .values
            .iter()
            .position(|v| !v.is_zero())
            .map(|x| DegreeWitness {
                shifts: shifts.clone(),
                x: x as u64,
            });
    }
    let n = f.space.total_size();
    for a in 0..n {
        let g = delta_index(f, a).expect("same space");
        shifts.push(a);
        if let Some(w) = degree_scan(&g, depth - 1, shifts) {
            return Some(w);
        }
        shifts.pop();
    }
    None
}

/// Exact fraction of (x, a_1, .., a_{d+1}) with vanishing iterated
/// derivative.
pub fn approx_poly_fraction(f: &GroupFunctionH, d: usize) -> Result<f64> {
    let space = &f.space;
    let total = checked_pow(space.total_size(), d as u32 + 2, space.budget())?;
    let zeros = fraction_scan(f, d + 1);
    Ok(zeros as f64 / total as f64)
}

fn fraction_scan(f: &GroupFunctionH, depth: usize) -> u64 {
    if depth == 0 {
        return f.values.iter().filter(|v| v.is_zero()).count() as u64;
    }
    let n = f.space.total_size();
    (0..n)
        .map(|a| fraction_scan(&delta_index(f, a).expect("same space"), depth - 1))
        .sum()
}

/// Seeded Monte Carlo estimate of the vanishing-derivative fraction, using
/// the inclusion-exclusion expansion per sample.
pub fn approx_poly_fraction_sampled(
    f: &GroupFunctionH,
    d: usize,
    samples: usize,
    seed: u64,
) -> f64 {
    let space = &f.space;
    let n = space.total_size();
    let mut rng = SplitMix64::new(seed);
    let m = space.modulus();
    let mut hits = 0u64;
    for _ in 0..samples {
        let x = rng.index(n);
        let shifts: Vec<u64> = (0..=d).map(|_| rng.index(n)).collect();
        // Delta_{a_1}..Delta_{a_m} f(x) = sum_S (-1)^{m-|S|} f(x + sum_S a_i)
        let mut acc = FpVector::zero(m, f.h);
        for mask in 0..(1u32 << (d + 1)) {
            let mut pt = x;
            for (i, &a) in shifts.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    pt = space.index_add(pt, a);
                }
            }
            let sign_neg = (d + 1 - mask.count_ones() as usize) % 2 == 1;
            acc = if sign_neg {
                acc.sub(&f.values[pt as usize]).unwrap()
            } else {
                acc.add(&f.values[pt as usize]).unwrap()
            };
        }
        if acc.is_zero() {
            hits += 1;
        }
    }
    hits as f64 / samples as f64
}

/// A polynomial F_p^n -> F_p in Frobenius-reduced monomial form: exponents
/// lie in [0, p-1] after x^p = x, the degree is the maximum reduced total
/// degree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonomialPoly {
    p: u64,
    n: usize,
    terms: BTreeMap<Vec<u64>, u64>,
}

fn reduce_exponent(e: u64, p: u64) -> u64 {
    if e == 0 {
        0
    } else {
        (e - 1) % (p - 1) + 1
    }
}

impl MonomialPoly {
    pub fn new(p: u64, n: usize, terms: impl IntoIterator<Item = (Vec<u64>, u64)>) -> Result<Self> {
        let modulus = crate::space::PrimeModulus::new(p)?;
        let mut reduced: BTreeMap<Vec<u64>, u64> = BTreeMap::new();
        for (exps, c) in terms {
            if exps.len() != n {
                return Err(Error::dims("exponent vector length"));
            }
            let key: Vec<u64> = exps.iter().map(|&e| reduce_exponent(e, p)).collect();
            let entry = reduced.entry(key).or_insert(0);
            *entry = modulus.add(*entry, c % p);
        }
        reduced.retain(|_, &mut c| c != 0);
        Ok(MonomialPoly {
            p,
            n,
            terms: reduced,
        })
    }

    pub fn zero(p: u64, n: usize) -> Self {
        MonomialPoly {
            p,
            n,
            terms: BTreeMap::new(),
        }
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &BTreeMap<Vec<u64>, u64> {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Maximum reduced total degree of a nonzero term (0 for the zero
    /// polynomial).
    pub fn degree(&self) -> u64 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u64>())
            .max()
            .unwrap_or(0)
    }

    pub fn is_homogeneous_of_degree(&self, d: u64) -> bool {
        self.terms.keys().all(|e| e.iter().sum::<u64>() == d)
    }

    pub fn eval(&self, x: &[u64]) -> u64 {
        let m = crate::space::PrimeModulus::new(self.p).expect("validated");
        let mut acc = 0u64;
        for (exps, &c) in &self.terms {
            let mut term = c;
            for (xi, &e) in x.iter().zip(exps) {
                if e > 0 {
                    term = m.mul(term, m.pow(*xi, e));
                    if term == 0 {
                        break;
                    }
                }
            }
            acc = m.add(acc, term);
        }
        acc
    }

    /// The induced dense table as a scalar group function.
    pub fn table(&self) -> Result<GroupFunctionH> {
        let space = ProductSpace::new(self.p, &[self.n])?;
        let m = space.modulus();
        GroupFunctionH::from_fn(space, 1, |pt| {
            FpVector::new(m, vec![self.eval(pt)]).unwrap()
        })
    }

    /// The phase table x -> omega^{g(x)}.
    pub fn phase_table(&self) -> Result<FunctionTable> {
        let space = ProductSpace::new(self.p, &[self.n])?;
        Ok(FunctionTable::phase(space, |pt| self.eval(pt)))
    }

    /// The phase table x -> omega^{-g(x)}.
    pub fn conj_phase_table(&self) -> Result<FunctionTable> {
        let space = ProductSpace::new(self.p, &[self.n])?;
        let m = space.modulus();
        Ok(FunctionTable::phase(space, |pt| m.neg(self.eval(pt))))
    }
}

/// All reduced exponent vectors with total degree at most d, in lexicographic
/// order; the coefficient basis for degree-d fits.
pub fn monomials_up_to(p: u64, n: usize, d: u64) -> Vec<Vec<u64>> {
    let mut out = Vec::new();
    let mut cur = vec![0u64; n];
    loop {
        if cur.iter().sum::<u64>() <= d {
            out.push(cur.clone());
        }
        let mut i = n;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            cur[i] += 1;
            if cur[i] <= (p - 1).min(d) {
                break;
            }
            cur[i] = 0;
        }
    }
}

/// Polarization: sigma(a_1, .., a_k) = Delta_{a_1} .. Delta_{a_k} g at any
/// basepoint, for homogeneous degree-k g with p > k; the result is a
/// symmetric multilinear form on G^k. Basepoint independence and symmetry
/// are asserted.
pub fn polarize(g: &MonomialPoly, k: usize) -> Result<MultilinearForm> {
    let p = g.p;
    if p as usize <= k {
        return Err(Error::pre(format!("polarization needs p > k (p={p}, k={k})")));
    }
    if !g.is_homogeneous_of_degree(k as u64) {
        return Err(Error::pre("polarize needs a homogeneous degree-k input"));
    }
    let n = g.n;
    let space = ProductSpace::new(p, &[n].repeat(k))?;
    let m = space.modulus();
    let table = g.table()?;
    let gspace = table.space().clone();

    // sigma on basis tuples via inclusion-exclusion at two basepoints
    let value_at = |basis_tuple: &[usize], base: u64| -> u64 {
        let mut acc = 0u64;
        for mask in 0..(1u32 << k) {
            let mut pt = gspace.point_of(base);
            for (i, &j) in basis_tuple.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    pt[j] = m.add(pt[j], 1);
                }
            }
            let v = table.value(gspace.index_of(&pt)).coords()[0];
            if (k as u32 - mask.count_ones()) % 2 == 1 {
                acc = m.sub(acc, v);
            } else {
                acc = m.add(acc, v);
            }
        }
        acc
    };

    let full = (1u32 << k) - 1;
    let mut coeffs = vec![0u64; n.pow(k as u32)];
    let alt_base = gspace.total_size() - 1; // the all-(p-1) point
    let mut tuple = vec![0usize; k];
    for slot in coeffs.iter_mut() {
        let at0 = value_at(&tuple, 0);
        let at1 = value_at(&tuple, alt_base);
        assert_eq!(at0, at1, "polarization depends on the basepoint");
        *slot = at0;
        for s in (0..k).rev() {
            tuple[s] += 1;
            if tuple[s] < n {
                break;
            }
            tuple[s] = 0;
        }
    }
    let sigma = MultilinearForm::new(space, full, coeffs)?;
    // symmetry check
    for i in 0..k {
        for j in i + 1..k {
            let mut tr: Vec<usize> = (0..k).collect();
            tr.swap(i, j);
            assert_eq!(
                crate::multiaffine::permute_form(&sigma, &tr)?.coeffs(),
                sigma.coeffs(),
                "polarization is not symmetric"
            );
        }
    }
    Ok(sigma)
}

/// g(x) = (1/k!) sigma(x, .., x) for a symmetric k-linear form with p > k.
pub fn poly_from_symmetric(sigma: &MultilinearForm, k: usize) -> Result<MonomialPoly> {
    let space = sigma.space();
    let p = space.p();
    if p as usize <= k {
        return Err(Error::pre(format!("needs p > k (p={p}, k={k})")));
    }
    if space.k() != k || sigma.support() != (1 << k) - 1 {
        return Err(Error::dims("sigma must be a fully supported k-linear form"));
    }
    let n = space.dim(0);
    if space.dims().iter().any(|&d| d != n) {
        return Err(Error::dims("all factors must share one dimension"));
    }
    for i in 0..k {
        for j in i + 1..k {
            let mut tr: Vec<usize> = (0..k).collect();
            tr.swap(i, j);
            if crate::multiaffine::permute_form(sigma, &tr)?.coeffs() != sigma.coeffs() {
                return Err(Error::pre("sigma is not symmetric"));
            }
        }
    }
    let m = space.modulus();
    let mut kfact = 1u64;
    for i in 2..=k as u64 {
        kfact = m.mul(kfact, i % p);
    }
    let inv = m.inv(kfact)?;
    let mut terms: Vec<(Vec<u64>, u64)> = Vec::new();
    let mut tuple = vec![0usize; k];
    for &c in sigma.coeffs() {
        if c != 0 {
            let mut exps = vec![0u64; n];
            for &j in &tuple {
                exps[j] += 1;
            }
            terms.push((exps, m.mul(c, inv)));
        }
        for s in (0..k).rev() {
            tuple[s] += 1;
            if tuple[s] < n {
                break;
            }
            tuple[s] = 0;
        }
    }
    MonomialPoly::new(p, n, terms)
}

/// |E_x f(x) omega^{g(x)}|.
pub fn phase_correlation(f: &FunctionTable, g: &MonomialPoly) -> Result<f64> {
    let space = f.space();
    if space.p() != g.p || space.total_dim() != g.n {
        return Err(Error::SpaceMismatch);
    }
    let m = space.modulus();
    let mut acc = num_complex::Complex64::new(0.0, 0.0);
    for (i, pt) in space.points().enumerate() {
        acc += f.values()[i] * m.character(g.eval(&pt));
    }
    Ok((acc / space.total_size() as f64).norm())
}

/// Exhaustive maximizer of |E f omega^g| over all polynomials g of degree
/// at most d; ties break toward the first candidate in lexicographic
/// coefficient order over the monomial basis.
pub fn best_poly_correlation(f: &FunctionTable, d: u64) -> Result<(MonomialPoly, f64)> {
    let space = f.space();
    let p = space.p();
    let n = space.total_dim();
    let monos = monomials_up_to(p, n, d);
    let candidates = checked_pow(p, monos.len() as u32, space.budget())?;
    check_budget(
        candidates.saturating_mul(space.total_size()),
        space.budget(),
    )?;
    let m = space.modulus();
    // value table: monomial values at every point
    let npts = space.total_size() as usize;
    let mut mono_vals = vec![0u64; monos.len() * npts];
    for (mi, exps) in monos.iter().enumerate() {
        for (xi, pt) in space.points().enumerate() {
            let mut v = 1u64;
            for (x, &e) in pt.iter().zip(exps) {
                if e > 0 {
                    v = m.mul(v, m.pow(*x, e));
                }
            }
            mono_vals[mi * npts + xi] = v;
        }
    }
    let chars: Vec<num_complex::Complex64> = (0..p).map(|e| m.character(e)).collect();

    let mut best: Option<(Vec<u64>, f64)> = None;
    let mut digits = vec![0u64; monos.len()];
    for code in 0..candidates {
        let mut rem = code;
        for slot in digits.iter_mut().rev() {
            *slot = rem % p;
            rem /= p;
        }
        let mut acc = num_complex::Complex64::new(0.0, 0.0);
        for xi in 0..npts {
            let mut gval = 0u64;
            for (mi, &c) in digits.iter().enumerate() {
                if c != 0 {
                    gval = m.add(gval, m.mul(c, mono_vals[mi * npts + xi]));
                }
            }
            acc += f.values()[xi] * chars[gval as usize];
        }
        let corr = (acc / npts as f64).norm();
        if best.as_ref().map(|(_, b)| corr > *b + 1e-15).unwrap_or(true) {
            best = Some((digits.clone(), corr));
        }
    }
    let (digits, corr) = best.expect("at least one candidate");
    let poly = MonomialPoly::new(
        p,
        n,
        monos.into_iter().zip(digits).filter(|(_, c)| *c != 0),
    )?;
    Ok((poly, corr))
}

/// Exhaustive maximizer of |{x : psi(x) = f(x)}| over degree-<= d polynomial
/// maps psi : G -> F_p^h (one polynomial per component); ties break toward
/// the first candidate in lexicographic coefficient order.
pub fn best_poly_agreement(f: &GroupFunctionH, d: u64) -> Result<(Vec<MonomialPoly>, u64)> {
    let space = &f.space;
    let p = space.p();
    let n = space.total_dim();
    let h = f.h;
    let monos = monomials_up_to(p, n, d);
    let digits_total = h * monos.len();
    let candidates = checked_pow(p, digits_total as u32, space.budget())?;
    check_budget(
        candidates.saturating_mul(space.total_size()),
        space.budget(),
    )?;
    let m = space.modulus();
    let npts = space.total_size() as usize;
    let mut mono_vals = vec![0u64; monos.len() * npts];
    for (mi, exps) in monos.iter().enumerate() {
        for (xi, pt) in space.points().enumerate() {
            let mut v = 1u64;
            for (x, &e) in pt.iter().zip(exps) {
                if e > 0 {
                    v = m.mul(v, m.pow(*x, e));
                }
            }
            mono_vals[mi * npts + xi] = v;
        }
    }

    let mut best: Option<(Vec<u64>, u64)> = None;
    let mut digits = vec![0u64; digits_total];
    for code in 0..candidates {
        let mut rem = code;
        for slot in digits.iter_mut().rev() {
            *slot = rem % p;
            rem /= p;
        }
        let mut agree = 0u64;
        for xi in 0..npts {
            let mut ok = true;
            for j in 0..h {
                let mut val = 0u64;
                for (mi, &c) in digits[j * monos.len()..(j + 1) * monos.len()]
                    .iter()
                    .enumerate()
                {
                    if c != 0 {
                        val = m.add(val, m.mul(c, mono_vals[mi * npts + xi]));
                    }
                }
                if val != f.values[xi].coords()[j] {
                    ok = false;
                    break;
                }
            }
            if ok {
                agree += 1;
            }
        }
        if best.as_ref().map(|(_, b)| agree > *b).unwrap_or(true) {
            best = Some((digits.clone(), agree));
        }
    }
    let (digits, agree) = best.expect("at least one candidate");
    let polys: Result<Vec<MonomialPoly>> = (0..h)
        .map(|j| {
            MonomialPoly::new(
                p,
                n,
                monos
                    .iter()
                    .cloned()
                    .zip(digits[j * monos.len()..(j + 1) * monos.len()].iter().copied())
                    .filter(|(_, c)| *c != 0),
            )
        })
        .collect();
    Ok((polys?, agree))
}

/// MonomialPoly wire format:
/// {"p": int, "n": int, "terms": [{"exps": [ints], "c": residue}]}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyJson {
    pub p: u64,
    pub n: usize,
    pub terms: Vec<TermJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermJson {
    pub exps: Vec<u64>,
    pub c: u64,
}

impl PolyJson {
    pub fn of(poly: &MonomialPoly) -> Self {
        PolyJson {
            p: poly.p,
            n: poly.n,
            terms: poly
                .terms
                .iter()
                .map(|(exps, &c)| TermJson {
                    exps: exps.clone(),
                    c,
                })
                .collect(),
        }
    }

    pub fn to_poly(&self) -> Result<MonomialPoly> {
        MonomialPoly::new(
            self.p,
            self.n,
            self.terms.iter().map(|t| (t.exps.clone(), t.c)),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic::uk_norm;

    fn square_poly() -> MonomialPoly {
        // x^2 over F_5
        MonomialPoly::new(5, 1, [(vec![2u64], 1u64)]).unwrap()
    }

    #[test]
    fn delta_of_square_is_linear() {
        // Delta_1 (x^2) = 2x + 1 over F_5, checked pointwise
        let f = square_poly().table().unwrap();
        let m = f.space().modulus();
        let a = FpVector::new(m, vec![1]).unwrap();
        let df = delta(&f, &a).unwrap();
        let expect = MonomialPoly::new(5, 1, [(vec![1u64], 2u64), (vec![0u64], 1u64)])
            .unwrap()
            .table()
            .unwrap();
        assert_eq!(df, expect);

        // Delta_0 f = 0 and constants have zero derivative
        let zero_shift = delta(&f, &FpVector::zero(m, 1)).unwrap();
        assert!(zero_shift.is_zero());
        let c = GroupFunctionH::constant(
            f.space().clone(),
            FpVector::new(m, vec![3]).unwrap(),
        )
        .unwrap();
        assert!(delta(&c, &a).unwrap().is_zero());
    }

    #[test]
    fn derivative_operators_commute() {
        let space = ProductSpace::new(3, &[2]).unwrap();
        let f = GroupFunctionH::random(space.clone(), 1, 8).unwrap();
        let m = space.modulus();
        let a = FpVector::new(m, vec![1, 2]).unwrap();
        let b = FpVector::new(m, vec![2, 0]).unwrap();
        let ab = delta(&delta(&f, &a).unwrap(), &b).unwrap();
        let ba = delta(&delta(&f, &b).unwrap(), &a).unwrap();
        assert_eq!(ab, ba);

        // multiplicative derivatives commute too
        let t = FunctionTable::random_disc(space.clone(), 4);
        let da = mult_derivative(&t, &[1, 2]);
        let dab = mult_derivative(&da, &[2, 0]);
        let db = mult_derivative(&t, &[2, 0]);
        let dba = mult_derivative(&db, &[1, 2]);
        assert!(dab.linf_distance(&dba).unwrap() < 1e-12);
    }

    #[test]
    fn mult_derivative_of_quadratic_phase() {
        // del_a (chi . g) = chi . (g(x) - g(x - a)) pointwise
        let g = square_poly();
        let f = g.phase_table().unwrap();
        let space = f.space().clone();
        let m = space.modulus();
        for a in 0..5u64 {
            let df = mult_derivative(&f, &[a]);
            for x in 0..5u64 {
                let expect = m.character(m.sub(g.eval(&[x]), g.eval(&[m.sub(x, a)])));
                assert!((df.value_at(x) - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn degree_test_examples() {
        // constants pass d = 0
        let space = ProductSpace::new(5, &[1]).unwrap();
        let m = space.modulus();
        let c = GroupFunctionH::constant(space.clone(), FpVector::new(m, vec![2]).unwrap())
            .unwrap();
        assert!(degree_test(&c, 0).unwrap().is_none());

        // x^2 passes d = 2, fails d = 1 with a genuine witness
        let f = square_poly().table().unwrap();
        assert!(degree_test(&f, 2).unwrap().is_none());
        let witness = degree_test(&f, 1).unwrap().unwrap();
        let mut g = f.clone();
        for &a in &witness.shifts {
            g = delta_index(&g, a).unwrap();
        }
        assert!(!g.value(witness.x).is_zero());

        // d >= p refused
        assert!(degree_test(&f, 5).is_err());
    }

    #[test]
    fn degree_test_matches_syntactic_degree() {
        // exhaustive over p=5, n<=2, degrees <= 3 on random polynomials
        let mut rng = SplitMix64::new(0xDE6);
        for n in 1..=2usize {
            for target_deg in 0..=3u64 {
                for _ in 0..3 {
                    let monos = monomials_up_to(5, n, target_deg);
                    let terms: Vec<(Vec<u64>, u64)> = monos
                        .iter()
                        .map(|e| (e.clone(), rng.residue(5)))
                        .collect();
                    let poly = MonomialPoly::new(5, n, terms).unwrap();
                    let e = poly.degree();
                    let table = poly.table().unwrap();
                    for d in 0..5usize {
                        if n == 2 && d >= 4 {
                            continue; // 25^6 exceeds the budget
                        }
                        let pass = degree_test(&table, d).unwrap().is_none();
                        assert_eq!(pass, e <= d as u64, "n={n} deg={e} d={d}");
                    }
                }
            }
        }
    }

    #[test]
    fn fraction_examples() {
        // degree <= d polynomials have fraction 1
        let f = square_poly().table().unwrap();
        assert!((approx_poly_fraction(&f, 2).unwrap() - 1.0).abs() < 1e-12);
        let frac1 = approx_poly_fraction(&f, 1).unwrap();
        assert!(frac1 < 1.0);

        // fraction = 1 iff degree test passes (exhaustive mode)
        let space = ProductSpace::new(2, &[2]).unwrap();
        for seed in 0..6 {
            let g = GroupFunctionH::random(space.clone(), 1, seed).unwrap();
            for d in 0..2usize {
                let frac = approx_poly_fraction(&g, d).unwrap();
                let pass = degree_test(&g, d).unwrap().is_none();
                assert_eq!(frac == 1.0, pass);
            }
        }

        // d = 0 on F_2: fraction of (x, a) with f(x + a) = f(x), exact
        let s2 = ProductSpace::new(2, &[1]).unwrap();
        let m2 = s2.modulus();
        let g = GroupFunctionH::new(
            s2,
            1,
            vec![
                FpVector::new(m2, vec![0]).unwrap(),
                FpVector::new(m2, vec![1]).unwrap(),
            ],
        )
        .unwrap();
        // pairs: (x, a=0) vanish (2), (x, a=1) differ (0) -> 2/4
        assert!((approx_poly_fraction(&g, 0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sampled_fraction_close_to_exact() {
        let space = ProductSpace::new(3, &[1]).unwrap();
        let f = GroupFunctionH::random(space, 1, 77).unwrap();
        let exact = approx_poly_fraction(&f, 1).unwrap();
        let sampled = approx_poly_fraction_sampled(&f, 1, 20000, 5);
        assert!((exact - sampled).abs() < 0.05);
    }

    #[test]
    fn polarization_roundtrips() {
        // g(x) = x^2 over F_5, k = 2: sigma(a, b) = 2ab
        let g = square_poly();
        let sigma = polarize(&g, 2).unwrap();
        assert_eq!(sigma.coeffs(), &[2]);
        let back = poly_from_symmetric(&sigma, 2).unwrap();
        assert_eq!(back, g);

        // zero form gives the zero polynomial
        let s = ProductSpace::new(5, &[1, 1]).unwrap();
        let z = MultilinearForm::zero(s, 0b11);
        assert!(poly_from_symmetric(&z, 2).unwrap().is_zero());

        // g(x) = x1 x2, n = 2: sigma(a, b) = a1 b2 + a2 b1
        let g2 = MonomialPoly::new(5, 2, [(vec![1u64, 1], 1u64)]).unwrap();
        let sigma2 = polarize(&g2, 2).unwrap();
        assert_eq!(sigma2.coeffs(), &[0, 1, 1, 0]);
        assert_eq!(poly_from_symmetric(&sigma2, 2).unwrap(), g2);

        // sigma -> poly -> sigma for a symmetric input
        let round = polarize(&poly_from_symmetric(&sigma2, 2).unwrap(), 2).unwrap();
        assert_eq!(round.coeffs(), sigma2.coeffs());

        // p <= k refused
        let g3 = MonomialPoly::new(2, 1, [(vec![1u64], 1u64)]).unwrap();
        assert!(polarize(&g3, 2).is_err());
    }

    #[test]
    fn polarization_cubic() {
        // k = 3 over F_5: g(x) = x^3, sigma(a,b,c) = 6abc = abc mod 5
        let g = MonomialPoly::new(5, 1, [(vec![3u64], 1u64)]).unwrap();
        let sigma = polarize(&g, 3).unwrap();
        assert_eq!(sigma.coeffs(), &[1]);
        assert_eq!(poly_from_symmetric(&sigma, 3).unwrap(), g);
    }

    #[test]
    fn chi_of_low_degree_has_full_uk_norm() {
        // ||chi . g||_{U^k} = 1 for deg g <= k - 1, p = 5, n = 1, k <= 3
        let mut rng = SplitMix64::new(0x0FF);
        for k in 1..=3u32 {
            for _ in 0..3 {
                let monos = monomials_up_to(5, 1, k as u64 - 1);
                let terms: Vec<(Vec<u64>, u64)> =
                    monos.iter().map(|e| (e.clone(), rng.residue(5))).collect();
                let g = MonomialPoly::new(5, 1, terms).unwrap();
                let f = g.phase_table().unwrap();
                let u = uk_norm(&f, k).unwrap();
                assert!((u - 1.0).abs() < 1e-9, "k={k}");
            }
        }
    }

    #[test]
    fn correlation_examples() {
        let g = square_poly();
        // f = omega^{-g} correlates perfectly
        let f = g.conj_phase_table().unwrap();
        assert!((phase_correlation(&f, &g).unwrap() - 1.0).abs() < 1e-12);

        // a character against g = 0 is orthogonal
        let space = ProductSpace::new(5, &[1]).unwrap();
        let ch = FunctionTable::phase(space.clone(), |x| x[0]);
        let zero = MonomialPoly::zero(5, 1);
        assert!(phase_correlation(&ch, &zero).unwrap() < 1e-12);

        // random f: matches a direct summation oracle
        let f = FunctionTable::random_disc(space.clone(), 31);
        let got = phase_correlation(&f, &g).unwrap();
        let m = space.modulus();
        let mut acc = num_complex::Complex64::new(0.0, 0.0);
        for x in 0..5u64 {
            acc += f.value_at(x) * m.character(g.eval(&[x]));
        }
        assert!((got - (acc / 5.0).norm()).abs() < 1e-12);
    }

    #[test]
    fn best_correlation_finds_planted_phase() {
        let space = ProductSpace::new(2, &[3]).unwrap();
        let mut rng = SplitMix64::new(0xBE5);
        for _ in 0..5 {
            let monos = monomials_up_to(2, 3, 2);
            let terms: Vec<(Vec<u64>, u64)> =
                monos.iter().map(|e| (e.clone(), rng.residue(2))).collect();
            let g0 = MonomialPoly::new(2, 3, terms).unwrap();
            let f = g0.conj_phase_table().unwrap();
            let (_, val) = best_poly_correlation(&f, 2).unwrap();
            assert!((val - 1.0).abs() < 1e-9);
        }

        let zero = FunctionTable::constant(space, num_complex::Complex64::new(0.0, 0.0));
        let (_, v0) = best_poly_correlation(&zero, 1).unwrap();
        assert!(v0 < 1e-12);
    }

    #[test]
    fn best_correlation_dominates_u2_lower_bound() {
        // best linear-phase correlation^2 >= ||f||_{U^2}^4 via the U^2
        // identity (max_r |f^(r)|^2 >= sum_r |f^|^4)
        let space = ProductSpace::new(2, &[3]).unwrap();
        let f = FunctionTable::random_disc(space, 0xF00D);
        let u2 = uk_norm(&f, 2).unwrap();
        let (_, corr) = best_poly_correlation(&f, 1).unwrap();
        assert!(corr * corr >= u2.powi(4) - 1e-9);
    }

    #[test]
    fn best_agreement_examples() {
        let space = ProductSpace::new(2, &[2]).unwrap();
        let m = space.modulus();
        // polynomial input: agreement |G|
        let g = MonomialPoly::new(2, 2, [(vec![1u64, 0], 1u64), (vec![0u64, 0], 1u64)]).unwrap();
        let f = g.table().unwrap();
        let (polys, agree) = best_poly_agreement(&f, 1).unwrap();
        assert_eq!(agree, 4);
        assert_eq!(polys.len(), 1);

        // corrupt one point: agreement >= |G| - 1
        let mut vals = f.values().to_vec();
        let old = vals[1].coords()[0];
        vals[1] = FpVector::new(m, vec![1 - old]).unwrap();
        let f2 = GroupFunctionH::new(space.clone(), 1, vals).unwrap();
        let (_, agree2) = best_poly_agreement(&f2, 1).unwrap();
        assert!(agree2 >= 3);

        // random f: equals an independent reversed-order scan
        let fr = GroupFunctionH::random(space.clone(), 1, 99).unwrap();
        let (_, got) = best_poly_agreement(&fr, 1).unwrap();
        let monos = monomials_up_to(2, 2, 1);
        let mut best = 0u64;
        for code in (0..(1u64 << monos.len())).rev() {
            let mut digits = vec![0u64; monos.len()];
            let mut rem = code;
            for slot in digits.iter_mut().rev() {
                *slot = rem % 2;
                rem /= 2;
            }
            let poly = MonomialPoly::new(
                2,
                2,
                monos.iter().cloned().zip(digits.iter().copied()),
            )
            .unwrap();
            let agree = (0..4u64)
                .filter(|&x| poly.eval(&space.point_of(x)) == fr.value(x).coords()[0])
                .count() as u64;
            best = best.max(agree);
        }
        assert_eq!(got, best);
    }

    #[test]
    fn frobenius_reduction() {
        // x^5 = x over F_5; x^7 = x^3
        let p1 = MonomialPoly::new(5, 1, [(vec![5u64], 1u64)]).unwrap();
        let p2 = MonomialPoly::new(5, 1, [(vec![1u64], 1u64)]).unwrap();
        assert_eq!(p1, p2);
        let p3 = MonomialPoly::new(5, 1, [(vec![7u64], 2u64)]).unwrap();
        assert_eq!(p3.terms().keys().next().unwrap(), &vec![3u64]);
        for x in 0..5u64 {
            assert_eq!(p1.eval(&[x]), x);
        }
    }

    #[test]
    fn poly_json_roundtrip() {
        let g = MonomialPoly::new(5, 2, [(vec![2u64, 1], 3u64), (vec![0u64, 0], 4u64)]).unwrap();
        let j = PolyJson::of(&g);
        let text = serde_json::to_string(&j).unwrap();
        let back: PolyJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_poly().unwrap(), g);
    }
}
