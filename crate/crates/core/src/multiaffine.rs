//! Multilinear forms, multiaffine maps, varieties and their slices; bias,
//! analytic rank, exhaustive partition rank; quasirandomness checking; and
//! constructive extraction of a multilinear variety inside a multilinear set.
//!
//! Factor subsets I of [k] are bitmasks (bit i = factor i, 0-based
//! internally; the JSON wire format lists factors 1-based).

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::harmonic::FunctionTable;
use crate::rng::SplitMix64;
use crate::space::{Coset, FpVector, ProductSpace};
use crate::{check_budget, Error, Result, TOLERANCE};

/// A form alpha(x_I) = sum_{j_I} coeffs[j_I] prod_{i in I} x_{i, j_i} mod p,
/// linear in each coordinate block of I and independent of the others.
/// The empty support holds a single constant coefficient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultilinearForm {
    space: ProductSpace,
    support: u32,
    coeffs: Vec<u64>,
}

/// Tensor size for the given support mask.
fn tensor_len(space: &ProductSpace, support: u32) -> usize {
    (0..space.k())
        .filter(|i| support >> i & 1 == 1)
        .map(|i| space.dim(i))
        .product()
}

fn full_mask(space: &ProductSpace) -> u32 {
    (1u32 << space.k()) - 1
}

impl MultilinearForm {
    pub fn new(space: ProductSpace, support: u32, coeffs: Vec<u64>) -> Result<Self> {
        if support >= 1 << space.k() {
            return Err(Error::Invalid("support mask out of range".into()));
        }
        if coeffs.len() != tensor_len(&space, support) {
            return Err(Error::dims("coefficient tensor size"));
        }
        if coeffs.iter().any(|&c| c >= space.p()) {
            return Err(Error::Invalid("coefficient out of range".into()));
        }
        Ok(MultilinearForm {
            space,
            support,
            coeffs,
        })
    }

    pub fn zero(space: ProductSpace, support: u32) -> Self {
        let len = tensor_len(&space, support);
        MultilinearForm {
            space,
            support,
            coeffs: vec![0; len],
        }
    }

    pub fn random(space: ProductSpace, support: u32, rng: &mut SplitMix64) -> Self {
        let p = space.p();
        let len = tensor_len(&space, support);
        MultilinearForm {
            space,
            support,
            coeffs: (0..len).map(|_| rng.residue(p)).collect(),
        }
    }

    pub fn space(&self) -> &ProductSpace {
        &self.space
    }

    pub fn support(&self) -> u32 {
        self.support
    }

    pub fn coeffs(&self) -> &[u64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0)
    }

    fn supported_factors(&self) -> Vec<usize> {
        (0..self.space.k())
            .filter(|i| self.support >> i & 1 == 1)
            .collect()
    }

    /// Exact evaluation at a flat point of the whole product space
    /// (coordinates outside the support are ignored).
    pub fn eval(&self, point: &[u64]) -> u64 {
        let m = self.space.modulus();
        let factors = self.supported_factors();
        if factors.is_empty() {
            return self.coeffs[0];
        }
        let shape: Vec<usize> = factors.iter().map(|&f| self.space.dim(f)).collect();
        let starts: Vec<usize> = factors
            .iter()
            .map(|&f| self.space.factor_range(f).start)
            .collect();
        let mut acc = 0u64;
        let mut midx = vec![0usize; factors.len()];
        for &c in &self.coeffs {
            if c != 0 {
                let mut term = c;
                for (slot, &st) in starts.iter().enumerate() {
                    term = m.mul(term, point[st + midx[slot]]);
                    if term == 0 {
                        break;
                    }
                }
                acc = m.add(acc, term);
            }
            for s in (0..midx.len()).rev() {
                midx[s] += 1;
                if midx[s] < shape[s] {
                    break;
                }
                midx[s] = 0;
            }
        }
        acc
    }

    /// Adds `other` coefficient-wise (same space and support).
    pub fn add(&self, other: &MultilinearForm) -> Result<MultilinearForm> {
        if self.space != other.space || self.support != other.support {
            return Err(Error::dims("adding forms with different shapes"));
        }
        let m = self.space.modulus();
        Ok(MultilinearForm {
            space: self.space.clone(),
            support: self.support,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(&a, &b)| m.add(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, lambda: u64) -> MultilinearForm {
        let m = self.space.modulus();
        MultilinearForm {
            space: self.space.clone(),
            support: self.support,
            coeffs: self.coeffs.iter().map(|&c| m.mul(c, lambda)).collect(),
        }
    }

    /// Fixes the block of factor `d` (which must be in the support) to the
    /// given coordinates, producing the contracted form on I \ {d}.
    pub fn slice_at(&self, d: usize, block: &[u64]) -> Result<MultilinearForm> {
        if self.support >> d & 1 != 1 {
            return Err(Error::Invalid(
                "slicing a factor outside the support".into(),
            ));
        }
        if block.len() != self.space.dim(d) {
            return Err(Error::dims("slice block length"));
        }
        let m = self.space.modulus();
        let factors = self.supported_factors();
        let slot = factors.iter().position(|&f| f == d).unwrap();
        let new_support = self.support & !(1 << d);
        let mut out = MultilinearForm::zero(self.space.clone(), new_support);
        let shape: Vec<usize> = factors.iter().map(|&f| self.space.dim(f)).collect();
        let mut midx = vec![0usize; factors.len()];
        for &c in &self.coeffs {
            if c != 0 {
                let contracted = m.mul(c, block[midx[slot]]);
                if contracted != 0 {
                    let mut flat = 0usize;
                    for (s, &ix) in midx.iter().enumerate() {
                        if s != slot {
                            flat = flat * shape[s] + ix;
                        }
                    }
                    out.coeffs[flat] = m.add(out.coeffs[flat], contracted);
                }
            }
            for s in (0..midx.len()).rev() {
                midx[s] += 1;
                if midx[s] < shape[s] {
                    break;
                }
                midx[s] = 0;
            }
        }
        Ok(out)
    }
}

/// A multiaffine map Phi(x) = sum_I Phi_I(x_I) into F_p^h, stored as its
/// multilinear parts (the empty set holding the constant part).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiAffineMap {
    space: ProductSpace,
    h: usize,
    parts: BTreeMap<u32, Vec<MultilinearForm>>,
}

impl MultiAffineMap {
    pub fn new(
        space: ProductSpace,
        h: usize,
        parts: BTreeMap<u32, Vec<MultilinearForm>>,
    ) -> Result<Self> {
        for (&mask, forms) in &parts {
            if forms.len() != h {
                return Err(Error::dims("each part needs h component forms"));
            }
            for f in forms {
                if f.space != space || f.support != mask {
                    return Err(Error::Invalid("part form shape mismatch".into()));
                }
            }
        }
        Ok(MultiAffineMap { space, h, parts })
    }

    pub fn zero(space: ProductSpace, h: usize) -> Self {
        MultiAffineMap {
            space,
            h,
            parts: BTreeMap::new(),
        }
    }

    /// A map whose single part is the given form (h = 1).
    pub fn from_form(form: MultilinearForm) -> Self {
        let space = form.space.clone();
        let mut parts = BTreeMap::new();
        parts.insert(form.support, vec![form]);
        MultiAffineMap { space, h: 1, parts }
    }

    /// Stacks single-form constraints into one map (component j is
    /// forms[j], supported on its own mask). The result is mixed-linear.
    pub fn stack(space: ProductSpace, forms: &[MultilinearForm]) -> Result<Self> {
        let h = forms.len();
        let mut parts: BTreeMap<u32, Vec<MultilinearForm>> = BTreeMap::new();
        for (j, f) in forms.iter().enumerate() {
            if f.space != space {
                return Err(Error::SpaceMismatch);
            }
            let entry = parts
                .entry(f.support)
                .or_insert_with(|| vec![MultilinearForm::zero(space.clone(), f.support); h]);
            entry[j] = f.clone();
        }
        MultiAffineMap::new(space, h, parts)
    }

    /// Uniform random map: every part's coefficient tensor i.i.d. uniform.
    pub fn random(space: ProductSpace, h: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        Self::random_with(space, h, &mut rng)
    }

    pub fn random_with(space: ProductSpace, h: usize, rng: &mut SplitMix64) -> Self {
        let mut parts = BTreeMap::new();
        for mask in 0..(1u32 << space.k()) {
            let forms: Vec<MultilinearForm> = (0..h)
                .map(|_| MultilinearForm::random(space.clone(), mask, rng))
                .collect();
            parts.insert(mask, forms);
        }
        MultiAffineMap { space, h, parts }
    }

    pub fn space(&self) -> &ProductSpace {
        &self.space
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn parts(&self) -> &BTreeMap<u32, Vec<MultilinearForm>> {
        &self.parts
    }

    /// Masks of parts that are not identically zero.
    pub fn nonzero_part_masks(&self) -> Vec<u32> {
        self.parts
            .iter()
            .filter(|(_, forms)| forms.iter().any(|f| !f.is_zero()))
            .map(|(&mask, _)| mask)
            .collect()
    }

    pub fn eval(&self, point: &[u64]) -> FpVector {
        let m = self.space.modulus();
        let mut out = vec![0u64; self.h];
        for forms in self.parts.values() {
            for (j, f) in forms.iter().enumerate() {
                out[j] = m.add(out[j], f.eval(point));
            }
        }
        FpVector::new(m, out).expect("residues in range")
    }

    pub fn eval_component(&self, j: usize, point: &[u64]) -> u64 {
        let m = self.space.modulus();
        self.parts
            .values()
            .fold(0, |acc, forms| m.add(acc, forms[j].eval(point)))
    }

    /// The top multilinear part Phi_{[k]} of component j (zero if absent).
    pub fn top_part(&self, j: usize) -> MultilinearForm {
        let mask = full_mask(&self.space);
        self.parts
            .get(&mask)
            .map(|forms| forms[j].clone())
            .unwrap_or_else(|| MultilinearForm::zero(self.space.clone(), mask))
    }

    /// True iff every nonzero part's index set lies in the down-set.
    pub fn is_supported(&self, family: &DownSet) -> bool {
        self.nonzero_part_masks()
            .iter()
            .all(|&mask| family.contains(mask))
    }

    /// Mixed-linear: every codomain component has at most one nonzero part,
    /// so each component is multilinear on exactly its dependency set.
    pub fn is_mixed_linear(&self) -> bool {
        (0..self.h).all(|j| {
            self.parts
                .values()
                .filter(|forms| !forms[j].is_zero())
                .count()
                <= 1
        })
    }

    /// The unimodular phase table chi(Phi(x)) for h = 1 maps.
    pub fn phase_table(&self) -> Result<FunctionTable> {
        if self.h != 1 {
            return Err(Error::Invalid("phase table needs a form (h = 1)".into()));
        }
        Ok(FunctionTable::phase(self.space.clone(), |x| {
            self.eval_component(0, x)
        }))
    }
}

/// A subset-closed family of index sets I subset [k].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DownSet {
    masks: Vec<u32>,
}

impl DownSet {
    pub fn new(mut masks: Vec<u32>) -> Result<Self> {
        masks.sort_unstable();
        masks.dedup();
        for &m in &masks {
            let mut s = m;
            loop {
                if masks.binary_search(&s).is_err() {
                    return Err(Error::Invalid(format!(
                        "family not closed under subsets: missing {s:#b}"
                    )));
                }
                if s == 0 {
                    break;
                }
                s = (s - 1) & m;
            }
        }
        Ok(DownSet { masks })
    }

    /// The down-set generated by the given sets.
    pub fn generated_by(tops: &[u32]) -> Self {
        let mut masks = Vec::new();
        for &t in tops {
            let mut s = t;
            loop {
                masks.push(s);
                if s == 0 {
                    break;
                }
                s = (s - 1) & t;
            }
        }
        masks.sort_unstable();
        masks.dedup();
        DownSet { masks }
    }

    pub fn contains(&self, mask: u32) -> bool {
        self.masks.binary_search(&mask).is_ok()
    }

    pub fn masks(&self) -> &[u32] {
        &self.masks
    }
}

/// The layer {x : map(x) = target} of a multiaffine map; its codimension is
/// that of the stored defining map.
#[derive(Debug, Clone)]
pub struct Variety {
    map: MultiAffineMap,
    target: FpVector,
}

impl Variety {
    pub fn new(map: MultiAffineMap, target: FpVector) -> Result<Self> {
        if target.dim() != map.h() || target.modulus() != map.space().modulus() {
            return Err(Error::dims("variety target dimension"));
        }
        Ok(Variety { map, target })
    }

    pub fn map(&self) -> &MultiAffineMap {
        &self.map
    }

    pub fn target(&self) -> &FpVector {
        &self.target
    }

    pub fn space(&self) -> &ProductSpace {
        self.map.space()
    }

    pub fn codimension(&self) -> usize {
        self.map.h()
    }

    pub fn contains(&self, point: &[u64]) -> bool {
        self.map.eval(point) == self.target
    }

    /// Exact member enumeration, as canonical indices.
    pub fn members(&self) -> Vec<u64> {
        let space = self.space();
        (0..space.total_size())
            .filter(|&i| self.contains(&space.point_of(i)))
            .collect()
    }

    /// Exact size; a non-empty variety of codimension r satisfies
    /// |B| >= p^{-kr} |G_{[k]}|, which is asserted.
    pub fn size(&self) -> u64 {
        let space = self.space();
        let count = self.members().len() as u64;
        if count > 0 {
            let k = space.k() as u32;
            let r = self.codimension() as u32;
            if let Some(denom) = space.p().checked_pow(k * r) {
                assert!(
                    count.saturating_mul(denom) >= space.total_size(),
                    "variety size bound violated: {} < {} / p^(k r)",
                    count,
                    space.total_size()
                );
            }
        }
        count
    }

    /// Exact slice counts x_{[prefix]} -> |V_{x_{[prefix]}}|, indexed by the
    /// mixed-radix prefix index over the first `prefix` factors. For
    /// prefix = k-1 the nonzero counts take at most codim+1 distinct values,
    /// all of the form |G_k| / p^j (single-direction slices are cosets),
    /// which is asserted.
    pub fn slice_size_profile(&self, prefix: usize) -> Result<Vec<u64>> {
        let space = self.space();
        if prefix == 0 || prefix >= space.k() {
            return Err(Error::Invalid("prefix length must be in [1, k-1]".into()));
        }
        let prefix_size: u64 = (0..prefix).map(|i| space.factor_size(i)).product();
        let suffix_size = space.total_size() / prefix_size;
        let mut counts = vec![0u64; prefix_size as usize];
        for &i in &self.members() {
            counts[(i / suffix_size) as usize] += 1;
        }
        if prefix == space.k() - 1 {
            let mut distinct: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
            distinct.sort_unstable();
            distinct.dedup();
            assert!(
                distinct.len() <= self.codimension() + 1,
                "more than codim+1 distinct slice sizes"
            );
            let qk = space.factor_size(space.k() - 1);
            for &c in &distinct {
                assert!(
                    qk % c == 0 && is_power_of(qk / c, space.p()),
                    "slice size {c} is not |G_k| / p^j"
                );
            }
        }
        Ok(counts)
    }
}

fn is_power_of(mut n: u64, p: u64) -> bool {
    if n == 0 {
        return false;
    }
    while n % p == 0 {
        n /= p;
    }
    n == 1
}

/// bias(Phi) = E_x chi(Phi(x)) for an h = 1 map.
pub fn bias_of_map(map: &MultiAffineMap) -> Result<Complex64> {
    if map.h() != 1 {
        return Err(Error::Invalid("bias needs a form (h = 1)".into()));
    }
    let space = map.space();
    let m = space.modulus();
    let mut acc = Complex64::new(0.0, 0.0);
    for pt in space.points() {
        acc += m.character(map.eval_component(0, &pt));
    }
    Ok(acc / space.total_size() as f64)
}

/// bias of a multilinear form: real and nonnegative, returned clamped, with
/// both properties asserted.
pub fn bias_of_form(form: &MultilinearForm) -> Result<f64> {
    let map = MultiAffineMap::from_form(form.clone());
    let b = bias_of_map(&map)?;
    assert!(
        b.im.abs() <= TOLERANCE && b.re >= -TOLERANCE,
        "multilinear bias must be real nonnegative, got {b}"
    );
    Ok(b.re.max(0.0))
}

/// Analytic rank -log_p bias(alpha); bias at or below tolerance reports
/// positive infinity.
pub fn analytic_rank(form: &MultilinearForm) -> Result<f64> {
    let b = bias_of_form(form)?;
    if b <= TOLERANCE {
        return Ok(f64::INFINITY);
    }
    Ok(-b.ln() / (form.space().p() as f64).ln())
}

/// Count of points with Phi(x) != 0; zero or at least p^{-k} |G_{[k]}|
/// (asserted).
pub fn nonzero_count(map: &MultiAffineMap) -> u64 {
    let space = map.space();
    let count = space.points().filter(|pt| !map.eval(pt).is_zero()).count() as u64;
    let bound = space.total_size() / space.p().pow(space.k() as u32);
    assert!(
        count == 0 || count >= bound,
        "nonzero count {count} below p^-k bound {bound}"
    );
    count
}

/// One term beta(x_I) gamma(x_{[k] \ I}) of a partition-rank decomposition.
#[derive(Debug, Clone)]
pub struct PartitionTerm {
    pub beta: MultilinearForm,
    pub gamma: MultilinearForm,
}

#[derive(Debug, Clone)]
pub struct PartitionDecomposition {
    pub terms: Vec<PartitionTerm>,
}

impl PartitionDecomposition {
    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn eval(&self, point: &[u64], m: crate::space::PrimeModulus) -> u64 {
        self.terms.iter().fold(0, |acc, t| {
            m.add(acc, m.mul(t.beta.eval(point), t.gamma.eval(point)))
        })
    }
}

/// Exhaustive partition-rank search by iterative deepening: the minimum
/// r <= max_rank with alpha = sum_i beta_i(x_{I_i}) gamma_i(x_{[k] \ I_i})
/// over nonempty proper subsets I_i, or `None` when every r <= max_rank
/// fails. Per term, beta candidates on the smaller side are enumerated up
/// to scaling and the gamma side is recovered by linear solving. Hard caps:
/// 2 <= k <= 3, per-factor dimension <= 3, max_rank <= 4. The returned
/// decomposition is re-verified pointwise over the whole space.
pub fn partition_rank_search(
    form: &MultilinearForm,
    max_rank: usize,
) -> Result<Option<PartitionDecomposition>> {
    let space = form.space();
    let k = space.k();
    if form.support != full_mask(space) {
        return Err(Error::pre(
            "partition rank is defined for forms supported on all k factors",
        ));
    }
    if !(2..=3).contains(&k) || max_rank > 4 || space.dims().iter().any(|&n| n > 3) {
        return Err(Error::pre(
            "partition rank search caps: 2 <= k <= 3, dims <= 3, max_rank <= 4",
        ));
    }
    if form.is_zero() {
        return Ok(Some(PartitionDecomposition { terms: vec![] }));
    }

    // Pattern classes: unordered splits {I, I^c}; beta is enumerated over
    // the side with the smaller tensor.
    let full = full_mask(space);
    let mut classes: Vec<(u32, u32)> = Vec::new();
    for i in 1..full {
        let c = full & !i;
        if i < c {
            let (small, big) = if tensor_len(space, i) <= tensor_len(space, c) {
                (i, c)
            } else {
                (c, i)
            };
            classes.push((small, big));
        }
    }

    for r in 1..=max_rank {
        if let Some(dec) = search_rank(form, &classes, r)? {
            let m = space.modulus();
            for pt in space.points() {
                assert_eq!(
                    form.eval(&pt),
                    dec.eval(&pt, m),
                    "partition decomposition failed pointwise check"
                );
            }
            return Ok(Some(dec));
        }
    }
    Ok(None)
}

/// Nonzero projective tensor representatives (first nonzero entry 1) for a
/// given support.
fn projective_candidates(space: &ProductSpace, support: u32) -> Vec<Vec<u64>> {
    let len = tensor_len(space, support);
    let p = space.p();
    let total = p.pow(len as u32);
    let mut out = Vec::new();
    for code in 1..total {
        let mut t = vec![0u64; len];
        let mut c = code;
        for slot in t.iter_mut().rev() {
            *slot = c % p;
            c /= p;
        }
        if t.iter().find(|&&v| v != 0) == Some(&1) {
            out.push(t);
        }
    }
    out
}

fn search_rank(
    form: &MultilinearForm,
    classes: &[(u32, u32)],
    r: usize,
) -> Result<Option<PartitionDecomposition>> {
    // multisets of classes of size r, as non-decreasing class index lists
    let mut pattern = vec![0usize; r];
    loop {
        if let Some(dec) = try_pattern(form, classes, &pattern)? {
            return Ok(Some(dec));
        }
        let mut i = r;
        loop {
            if i == 0 {
                return Ok(None);
            }
            i -= 1;
            if pattern[i] + 1 < classes.len() {
                let v = pattern[i] + 1;
                for slot in pattern.iter_mut().skip(i) {
                    *slot = v;
                }
                break;
            }
        }
    }
}

fn try_pattern(
    form: &MultilinearForm,
    classes: &[(u32, u32)],
    pattern: &[usize],
) -> Result<Option<PartitionDecomposition>> {
    let space = form.space();
    let m = space.modulus();
    let r = pattern.len();
    let beta_sides: Vec<u32> = pattern.iter().map(|&c| classes[c].0).collect();
    let gamma_sides: Vec<u32> = pattern.iter().map(|&c| classes[c].1).collect();
    let candidates: Vec<Vec<Vec<u64>>> = beta_sides
        .iter()
        .map(|&s| projective_candidates(space, s))
        .collect();

    let tuples: u64 = candidates
        .iter()
        .map(|c| c.len() as u64)
        .try_fold(1u64, |a, b| a.checked_mul(b))
        .ok_or(Error::BudgetExceeded {
            needed: u64::MAX,
            budget: space.budget(),
        })?;
    check_budget(tuples, space.budget())?;

    let gamma_lens: Vec<usize> = gamma_sides.iter().map(|&s| tensor_len(space, s)).collect();
    let unknowns: usize = gamma_lens.iter().sum();
    let equations = form.coeffs.len();

    let mut choice = vec![0usize; r];
    loop {
        // Skip permuted duplicates: within runs of equal classes require
        // non-decreasing candidate indices.
        let ordered =
            (1..r).all(|i| pattern[i] != pattern[i - 1] || choice[i] >= choice[i - 1]);
        if ordered {
            let betas: Vec<MultilinearForm> = (0..r)
                .map(|i| {
                    MultilinearForm::new(
                        space.clone(),
                        beta_sides[i],
                        candidates[i][choice[i]].clone(),
                    )
                    .expect("candidate tensor")
                })
                .collect();
            // Linear system over the gamma coefficients: for every full
            // multi-index, sum_i beta_i[restriction] gamma_i[restriction]
            // equals the coefficient of alpha.
            let mut a = vec![vec![0u64; unknowns]; equations];
            let mut b = vec![0u64; equations];
            let mut full_idx = vec![0u64; space.k()];
            for (eq, (row, rhs)) in a.iter_mut().zip(&mut b).enumerate() {
                let mut rem = eq;
                for f in (0..space.k()).rev() {
                    full_idx[f] = (rem % space.dim(f)) as u64;
                    rem /= space.dim(f);
                }
                *rhs = form.coeffs[eq];
                let mut off = 0usize;
                for i in 0..r {
                    let beta_coeff =
                        betas[i].coeffs[tensor_pos(space, beta_sides[i], &full_idx)];
                    if beta_coeff != 0 {
                        let gpos = tensor_pos(space, gamma_sides[i], &full_idx);
                        row[off + gpos] = m.add(row[off + gpos], beta_coeff);
                    }
                    off += gamma_lens[i];
                }
            }
            if let Some(x) = crate::space::solve_linear(&a, &b, m) {
                let mut terms = Vec::with_capacity(r);
                let mut off = 0usize;
                for i in 0..r {
                    let gamma = MultilinearForm::new(
                        space.clone(),
                        gamma_sides[i],
                        x[off..off + gamma_lens[i]].to_vec(),
                    )
                    .expect("solved tensor");
                    off += gamma_lens[i];
                    terms.push(PartitionTerm {
                        beta: betas[i].clone(),
                        gamma,
                    });
                }
                return Ok(Some(PartitionDecomposition { terms }));
            }
        }

        let mut s = r;
        loop {
            if s == 0 {
                return Ok(None);
            }
            s -= 1;
            choice[s] += 1;
            if choice[s] < candidates[s].len() {
                break;
            }
            choice[s] = 0;
        }
    }
}

/// Row-major position of the restriction of a full multi-index (one
/// coordinate index per factor) to the factors in `support`.
fn tensor_pos(space: &ProductSpace, support: u32, full_idx: &[u64]) -> usize {
    let mut pos = 0usize;
    for f in 0..space.k() {
        if support >> f & 1 == 1 {
            pos = pos * space.dim(f) + full_idx[f] as usize;
        }
    }
    pos
}

/// psi_pi(a_{[k]}) = psi(a_{pi(1)}, ..., a_{pi(k)}) for a form on G^k with
/// equal factor dimensions.
pub fn permute_form(form: &MultilinearForm, perm: &[usize]) -> Result<MultilinearForm> {
    let space = form.space();
    let k = space.k();
    if form.support != full_mask(space) {
        return Err(Error::pre("permutation needs a fully supported form"));
    }
    let n = space.dim(0);
    if space.dims().iter().any(|&d| d != n) {
        return Err(Error::dims("all factors must share one dimension"));
    }
    if perm.len() != k {
        return Err(Error::Invalid("permutation length".into()));
    }
    let mut seen = vec![false; k];
    for &i in perm {
        if i >= k || seen[i] {
            return Err(Error::Invalid("not a permutation".into()));
        }
        seen[i] = true;
    }
    let mut out = MultilinearForm::zero(space.clone(), form.support);
    let mut midx = vec![0usize; k];
    for (flat, slot) in out.coeffs.iter_mut().enumerate() {
        let mut rem = flat;
        for f in (0..k).rev() {
            midx[f] = rem % n;
            rem /= n;
        }
        // source index j with j_i = m_{pi(i)}
        let mut src = 0usize;
        for i in 0..k {
            src = src * n + midx[perm[i]];
        }
        *slot = form.coeffs[src];
    }
    Ok(out)
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    heap_permute(&mut cur, k, &mut out);
    out
}

fn heap_permute(cur: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
    if n == 1 {
        out.push(cur.clone());
        return;
    }
    for i in 0..n {
        heap_permute(cur, n - 1, out);
        if n % 2 == 0 {
            cur.swap(i, n - 1);
        } else {
            cur.swap(0, n - 1);
        }
    }
}

/// Theta = (1/k!) sum_pi pi . psi; requires p > k so k! is invertible.
/// The output is symmetric under all transpositions, which is asserted.
pub fn symmetrize(form: &MultilinearForm) -> Result<MultilinearForm> {
    let space = form.space();
    let k = space.k();
    let p = space.p();
    if (p as usize) <= k {
        return Err(Error::pre(format!("symmetrize needs p > k (p={p}, k={k})")));
    }
    let m = space.modulus();
    let mut sum = MultilinearForm::zero(space.clone(), form.support);
    for perm in permutations(k) {
        sum = sum.add(&permute_form(form, &perm)?)?;
    }
    let mut kfact = 1u64;
    for i in 2..=k as u64 {
        kfact = m.mul(kfact, i % p);
    }
    let theta = sum.scale(m.inv(kfact)?);
    for i in 0..k {
        for j in i + 1..k {
            let mut tr: Vec<usize> = (0..k).collect();
            tr.swap(i, j);
            assert_eq!(
                permute_form(&theta, &tr)?.coeffs,
                theta.coeffs,
                "symmetrized form not symmetric"
            );
        }
    }
    Ok(theta)
}

/// Quasirandomness report for a biaffine layer restricted to C_1 x C_2:
/// the modal slice density delta (an exact integer slice size over |C_2|),
/// the failure fractions of the two defining conditions, and eta_min = the
/// least eta for which the quadruple is eta-quasirandom with density delta.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuasirandomReport {
    pub empty: bool,
    pub delta: Option<f64>,
    pub modal_slice: Option<u64>,
    pub column_failure_fraction: f64,
    pub pair_failure_fraction: f64,
    pub eta_min: f64,
}

/// Exact quasirandomness check of {(x, y) : beta(x, y) = lambda} inside
/// C_1 x C_2 for a biaffine map into F_p^r. Densities are compared exactly
/// (slice sizes are integers, candidate densities are powers of p). Modal
/// ties break toward the larger slice size.
pub fn check_quasirandom(
    beta: &MultiAffineMap,
    lambda: &FpVector,
    c1: &Coset,
    c2: &Coset,
) -> Result<QuasirandomReport> {
    let space = beta.space();
    if space.k() != 2 {
        return Err(Error::pre("quasirandomness needs a biaffine map (k = 2)"));
    }
    if lambda.dim() != beta.h() {
        return Err(Error::dims("lambda dimension"));
    }
    if c1.ambient_dim() != space.dim(0) || c2.ambient_dim() != space.dim(1) {
        return Err(Error::dims("coset ambient dimensions"));
    }
    let n1 = c1.size();
    let n2 = c2.size();
    check_budget(
        n1.saturating_mul(n1).saturating_mul(n2.div_ceil(64)),
        space.budget(),
    )?;
    let pts1 = c1.enumerate();
    let pts2 = c2.enumerate();

    let words = (n2 as usize).div_ceil(64);
    let mut slices: Vec<Vec<u64>> = Vec::with_capacity(n1 as usize);
    let mut sizes: Vec<u64> = Vec::with_capacity(n1 as usize);
    let mut point = vec![0u64; space.total_dim()];
    for x in &pts1 {
        point[space.factor_range(0)].copy_from_slice(x.coords());
        let mut bits = vec![0u64; words];
        let mut count = 0u64;
        for (j, y) in pts2.iter().enumerate() {
            point[space.factor_range(1)].copy_from_slice(y.coords());
            if &beta.eval(&point) == lambda {
                bits[j / 64] |= 1 << (j % 64);
                count += 1;
            }
        }
        slices.push(bits);
        sizes.push(count);
    }

    if sizes.iter().all(|&s| s == 0) {
        return Ok(QuasirandomReport {
            empty: true,
            delta: None,
            modal_slice: None,
            column_failure_fraction: 0.0,
            pair_failure_fraction: 0.0,
            eta_min: 0.0,
        });
    }

    let mut freq: BTreeMap<u64, u64> = BTreeMap::new();
    for &s in &sizes {
        *freq.entry(s).or_insert(0) += 1;
    }
    let modal = freq
        .iter()
        .max_by_key(|&(&size, &count)| (count, size))
        .map(|(&size, _)| size)
        .unwrap();

    let column_failures = sizes.iter().filter(|&&s| s != modal).count() as u64;
    // A pair fails unless |V_{x1} cap V_{x2}| = delta^2 |C_2|, i.e.
    // intersection * |C_2| = modal^2 exactly.
    let mut pair_failures = 0u64;
    for a in 0..slices.len() {
        for b in 0..slices.len() {
            let inter: u64 = slices[a]
                .iter()
                .zip(&slices[b])
                .map(|(x, y)| (x & y).count_ones() as u64)
                .sum();
            if inter * n2 != modal * modal {
                pair_failures += 1;
            }
        }
    }
    let column_failure_fraction = column_failures as f64 / n1 as f64;
    let pair_failure_fraction = pair_failures as f64 / (n1 * n1) as f64;
    Ok(QuasirandomReport {
        empty: false,
        delta: Some(modal as f64 / n2 as f64),
        modal_slice: Some(modal),
        column_failure_fraction,
        pair_failure_fraction,
        eta_min: column_failure_fraction.max(pair_failure_fraction),
    })
}

/// Checks that every axis slice of the set given by `member` is a (possibly
/// empty) subspace; precondition of the multilinear-variety extraction.
pub fn is_multilinear_set(space: &ProductSpace, member: &dyn Fn(&[u64]) -> bool) -> Result<bool> {
    check_budget(
        space
            .total_size()
            .saturating_mul(space.k() as u64)
            .saturating_mul(*space.dims().iter().max().unwrap() as u64 + 1),
        space.budget(),
    )?;
    for d in 0..space.k() {
        let q = space.factor_size(d);
        let others = space.total_size() / q;
        let lo: u64 = (d + 1..space.k()).map(|i| space.factor_size(i)).product();
        for o in 0..others {
            let hi = o / lo;
            let rest = o % lo;
            let base_index = |mid: u64| (hi * q + mid) * lo + rest;
            let slice: Vec<u64> = (0..q)
                .filter(|&mid| member(&space.point_of(base_index(mid))))
                .collect();
            if slice.is_empty() {
                continue;
            }
            if !slice.contains(&0) {
                return Ok(false);
            }
            for &a in &slice {
                for &b in &slice {
                    let sum = add_factor_indices(space, d, a, b);
                    if slice.binary_search(&sum).is_err() {
                        return Ok(false);
                    }
                }
            }
        }
    }
    Ok(true)
}

fn add_factor_indices(space: &ProductSpace, d: usize, a: u64, b: u64) -> u64 {
    let pa = space.factor_coords_of(d, a);
    let pb = space.factor_coords_of(d, b);
    let m = space.modulus();
    let sum: Vec<u64> = pa.iter().zip(&pb).map(|(&x, &y)| m.add(x, y)).collect();
    space.factor_index_of(d, &sum)
}

/// Constructive extraction of a nonempty multilinear variety inside a
/// multilinear set M, starting from a nonempty variety B contained in M.
///
/// Follows the inductive construction: split B's defining map into
/// multilinear pieces with values read off a witness point, then direction
/// by direction zero out the values of the pieces meeting the processed
/// directions, slicing at the lexicographically smallest witness each step.
/// Preconditions (B nonempty, B inside M, M a multilinear set) are verified
/// by enumeration, as is the containment of the output.
pub fn multilinear_variety_inside(
    space: &ProductSpace,
    member: &dyn Fn(&[u64]) -> bool,
    b: &Variety,
) -> Result<Variety> {
    if b.space() != space {
        return Err(Error::SpaceMismatch);
    }
    let b_members = b.members();
    if b_members.is_empty() {
        return Err(Error::pre("B is empty"));
    }
    for &i in &b_members {
        if !member(&space.point_of(i)) {
            return Err(Error::pre(format!("B is not contained in M at index {i}")));
        }
    }
    if !is_multilinear_set(space, member)? {
        return Err(Error::pre("M is not a multilinear set"));
    }

    // Canonical index order is lexicographic on points, so the first member
    // is the lexicographically smallest witness.
    let witness = space.point_of(b_members[0]);
    let mut constraints: Vec<(MultilinearForm, u64)> = Vec::new();
    for (&mask, forms) in b.map().parts() {
        if mask == 0 {
            continue;
        }
        for f in forms {
            if !f.is_zero() {
                let val = f.eval(&witness);
                constraints.push((f.clone(), val));
            }
        }
    }

    let satisfies = |constraints: &[(MultilinearForm, u64)], pt: &[u64]| {
        constraints.iter().all(|(f, v)| f.eval(pt) == *v)
    };

    for d in 0..space.k() {
        let y = (0..space.total_size())
            .map(|i| space.point_of(i))
            .find(|pt| satisfies(&constraints, pt))
            .ok_or_else(|| Error::Invalid("intermediate variety became empty".into()))?;
        let y_block = y[space.factor_range(d)].to_vec();
        let mut next: Vec<(MultilinearForm, u64)> = Vec::new();
        for (f, v) in &constraints {
            if f.support >> d & 1 == 0 {
                next.push((f.clone(), *v));
            } else {
                next.push((f.clone(), 0));
                let sliced = f.slice_at(d, &y_block)?;
                if sliced.support != 0 {
                    next.push((sliced, *v));
                } else {
                    debug_assert_eq!(sliced.coeffs[0], *v);
                }
            }
        }
        constraints = next;
    }

    debug_assert!(constraints.iter().all(|(_, v)| *v == 0));
    let forms: Vec<MultilinearForm> = constraints.into_iter().map(|(f, _)| f).collect();
    let h = forms.len();
    let map = MultiAffineMap::stack(space.clone(), &forms)?;
    let out = Variety::new(map, FpVector::zero(space.modulus(), h))?;

    let members = out.members();
    assert!(!members.is_empty(), "extracted variety is empty");
    assert!(out.map().is_mixed_linear());
    for &i in &members {
        assert!(
            member(&space.point_of(i)),
            "extracted variety leaves M at index {i}"
        );
    }
    Ok(out)
}

/// Wire format for multiaffine maps:
/// {"h": int, "parts": [{"I": [factors], "coeffs": [tensor per component]}]}.
/// Factor lists are 1-based; tensors are nested row-major arrays of depth
/// |I| (a bare residue for the constant part).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapJson {
    pub h: usize,
    pub parts: Vec<PartJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartJson {
    #[serde(rename = "I")]
    pub factors: Vec<usize>,
    pub coeffs: Vec<serde_json::Value>,
}

fn tensor_to_json(space: &ProductSpace, factors: &[usize], coeffs: &[u64]) -> serde_json::Value {
    if factors.is_empty() {
        return serde_json::json!(coeffs[0]);
    }
    let head = factors[0];
    let rest = &factors[1..];
    let chunk: usize = rest.iter().map(|&f| space.dim(f)).product();
    let items: Vec<serde_json::Value> = (0..space.dim(head))
        .map(|i| tensor_to_json(space, rest, &coeffs[i * chunk..(i + 1) * chunk]))
        .collect();
    serde_json::Value::Array(items)
}

fn tensor_from_json(
    space: &ProductSpace,
    factors: &[usize],
    v: &serde_json::Value,
    out: &mut Vec<u64>,
) -> Result<()> {
    if factors.is_empty() {
        let r = v
            .as_u64()
            .ok_or_else(|| Error::Invalid("tensor leaf must be a residue".into()))?;
        out.push(r);
        return Ok(());
    }
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Invalid("tensor level must be an array".into()))?;
    if arr.len() != space.dim(factors[0]) {
        return Err(Error::dims("tensor level length"));
    }
    for item in arr {
        tensor_from_json(space, &factors[1..], item, out)?;
    }
    Ok(())
}

impl MapJson {
    pub fn of(map: &MultiAffineMap) -> Self {
        let space = map.space();
        let parts = map
            .parts()
            .iter()
            .filter(|(_, forms)| forms.iter().any(|f| !f.is_zero()))
            .map(|(&mask, forms)| {
                let zero_based: Vec<usize> =
                    (0..space.k()).filter(|i| mask >> i & 1 == 1).collect();
                PartJson {
                    factors: zero_based.iter().map(|&f| f + 1).collect(),
                    coeffs: forms
                        .iter()
                        .map(|f| tensor_to_json(space, &zero_based, &f.coeffs))
                        .collect(),
                }
            })
            .collect();
        MapJson { h: map.h(), parts }
    }

    pub fn to_map(&self, space: &ProductSpace) -> Result<MultiAffineMap> {
        let mut parts: BTreeMap<u32, Vec<MultilinearForm>> = BTreeMap::new();
        for part in &self.parts {
            let mut mask = 0u32;
            let mut zero_based = Vec::new();
            for &f in &part.factors {
                if f == 0 || f > space.k() {
                    return Err(Error::Invalid(format!(
                        "factor {f} out of range (1-based)"
                    )));
                }
                mask |= 1 << (f - 1);
                zero_based.push(f - 1);
            }
            if part.coeffs.len() != self.h {
                return Err(Error::dims("part must carry h tensors"));
            }
            let forms: Result<Vec<MultilinearForm>> = part
                .coeffs
                .iter()
                .map(|t| {
                    let mut coeffs = Vec::new();
                    tensor_from_json(space, &zero_based, t, &mut coeffs)?;
                    MultilinearForm::new(space.clone(), mask, coeffs)
                })
                .collect();
            parts.insert(mask, forms?);
        }
        MultiAffineMap::new(space.clone(), self.h, parts)
    }
}

/// Variety wire format: the map plus {"target": [residues]}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarietyJson {
    #[serde(flatten)]
    pub map: MapJson,
    pub target: Vec<u64>,
}

impl VarietyJson {
    pub fn of(v: &Variety) -> Self {
        VarietyJson {
            map: MapJson::of(v.map()),
            target: v.target().coords().to_vec(),
        }
    }

    pub fn to_variety(&self, space: &ProductSpace) -> Result<Variety> {
        let map = self.map.to_map(space)?;
        let target = FpVector::new(space.modulus(), self.target.clone())?;
        Variety::new(map, target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic;

    fn space22() -> ProductSpace {
        ProductSpace::new(2, &[2, 2]).unwrap()
    }

    fn space11(p: u64) -> ProductSpace {
        ProductSpace::new(p, &[1, 1]).unwrap()
    }

    /// x . y on F_p^n x F_p^n as a bilinear form.
    fn dot_form(space: &ProductSpace) -> MultilinearForm {
        let n = space.dim(0);
        let mut coeffs = vec![0u64; n * n];
        for i in 0..n {
            coeffs[i * n + i] = 1;
        }
        MultilinearForm::new(space.clone(), 0b11, coeffs).unwrap()
    }

    #[test]
    fn eval_zero_and_monomial() {
        let s = space11(2);
        let zero = MultilinearForm::zero(s.clone(), 0b11);
        for pt in s.points() {
            assert_eq!(zero.eval(&pt), 0);
        }
        let xy = dot_form(&s);
        assert_eq!(xy.eval(&[1, 1]), 1);
        assert_eq!(xy.eval(&[1, 0]), 0);
    }

    #[test]
    fn eval_matches_monomial_sum() {
        // random map over p=3 dims (1,1): compare against an independent
        // per-monomial summation
        let s = space11(3);
        let map = MultiAffineMap::random(s.clone(), 2, 99);
        let m = s.modulus();
        for pt in s.points() {
            let got = map.eval(&pt);
            let mut want = vec![0u64; 2];
            for (&mask, forms) in map.parts() {
                let factors: Vec<usize> = (0..2).filter(|i| mask >> i & 1 == 1).collect();
                for (j, f) in forms.iter().enumerate() {
                    let mut acc = 0u64;
                    for (flat, &c) in f.coeffs().iter().enumerate() {
                        let mut term = c;
                        let mut rem = flat;
                        let mut coords = vec![0usize; factors.len()];
                        for (slot, &fac) in factors.iter().enumerate().rev() {
                            coords[slot] = rem % s.dim(fac);
                            rem /= s.dim(fac);
                        }
                        for (slot, &fac) in factors.iter().enumerate() {
                            term = m.mul(term, pt[s.factor_range(fac).start + coords[slot]]);
                        }
                        acc = m.add(acc, term);
                    }
                    want[j] = m.add(want[j], acc);
                }
            }
            assert_eq!(got.coords(), &want[..]);
        }
    }

    #[test]
    fn multiaffine_along_every_axis_line() {
        // x_d -> Phi(.., x_d, ..) respects additive quadruples on every line
        let s = ProductSpace::new(3, &[1, 2]).unwrap();
        let map = MultiAffineMap::random(s.clone(), 1, 5);
        let m = s.modulus();
        for d in 0..2 {
            let q = s.factor_size(d);
            let lo: u64 = (d + 1..2).map(|i| s.factor_size(i)).product();
            let others = s.total_size() / q;
            for o in 0..others {
                let hi = o / lo;
                let rest = o % lo;
                let val = |mid: u64| {
                    let idx = (hi * q + mid) * lo + rest;
                    map.eval(&s.point_of(idx))
                };
                for a in 0..q {
                    for bb in 0..q {
                        for cc in 0..q {
                            // d4 = a + b - c as factor indices
                            let pa = s.factor_coords_of(d, a);
                            let pb = s.factor_coords_of(d, bb);
                            let pc = s.factor_coords_of(d, cc);
                            let coords: Vec<u64> = pa
                                .iter()
                                .zip(&pb)
                                .zip(&pc)
                                .map(|((&x, &y), &z)| m.sub(m.add(x, y), z))
                                .collect();
                            let d4 = s.factor_index_of(d, &coords);
                            let lhs = val(a).add(&val(bb)).unwrap();
                            let rhs = val(cc).add(&val(d4)).unwrap();
                            assert_eq!(lhs, rhs);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn down_sets_and_support() {
        let s = space11(2);
        assert!(DownSet::new(vec![0b00, 0b01, 0b11]).is_err());
        let family = DownSet::new(vec![0b00, 0b01, 0b10]).unwrap();

        let constant = {
            let mut parts = BTreeMap::new();
            parts.insert(
                0u32,
                vec![MultilinearForm::new(s.clone(), 0, vec![1]).unwrap()],
            );
            MultiAffineMap::new(s.clone(), 1, parts).unwrap()
        };
        assert!(constant.is_supported(&DownSet::new(vec![0]).unwrap()));

        let bilinear = MultiAffineMap::from_form(dot_form(&s));
        assert!(!bilinear.is_supported(&family));

        // phi(x1, x2) = (x1)_i + (x2)_i is {0, {1}, {2}}-supported
        let mixed = {
            let mut parts = BTreeMap::new();
            parts.insert(
                0b01u32,
                vec![MultilinearForm::new(s.clone(), 0b01, vec![1]).unwrap()],
            );
            parts.insert(
                0b10u32,
                vec![MultilinearForm::new(s.clone(), 0b10, vec![1]).unwrap()],
            );
            MultiAffineMap::new(s.clone(), 1, parts).unwrap()
        };
        assert!(mixed.is_supported(&family));

        assert!(MultiAffineMap::zero(s.clone(), 1).is_mixed_linear());
        assert!(bilinear.is_mixed_linear());
        let mut both = bilinear.parts().clone();
        both.insert(
            0u32,
            vec![MultilinearForm::new(s.clone(), 0, vec![1]).unwrap()],
        );
        let not_mixed = MultiAffineMap::new(s.clone(), 1, both).unwrap();
        assert!(!not_mixed.is_mixed_linear());
    }

    #[test]
    fn variety_enumeration_examples() {
        // {x . y = 0} on F_2^2 x F_2^2 has 10 of 16 points
        let s = space22();
        let v = Variety::new(
            MultiAffineMap::from_form(dot_form(&s)),
            FpVector::zero(s.modulus(), 1),
        )
        .unwrap();
        assert_eq!(v.size(), 10);

        // {x y = 1} on F_2 x F_2 has exactly the point (1, 1)
        let s1 = space11(2);
        let v1 = Variety::new(
            MultiAffineMap::from_form(dot_form(&s1)),
            FpVector::new(s1.modulus(), vec![1]).unwrap(),
        )
        .unwrap();
        assert_eq!(v1.members(), vec![3]);
        assert_eq!(v1.size(), 1); // 1 >= 2^{-2} * 4

        let whole = Variety::new(
            MultiAffineMap::zero(s.clone(), 1),
            FpVector::zero(s.modulus(), 1),
        )
        .unwrap();
        assert_eq!(whole.size(), 16);
    }

    #[test]
    fn slice_profiles() {
        let s = space22();
        let v = Variety::new(
            MultiAffineMap::from_form(dot_form(&s)),
            FpVector::zero(s.modulus(), 1),
        )
        .unwrap();
        let prof = v.slice_size_profile(1).unwrap();
        assert_eq!(prof[0], 4); // x = 0: all of G_2
        for &c in &prof[1..] {
            assert_eq!(c, 2);
        }
        assert_eq!(prof.iter().sum::<u64>(), v.size());

        let whole = Variety::new(
            MultiAffineMap::zero(s.clone(), 1),
            FpVector::zero(s.modulus(), 1),
        )
        .unwrap();
        assert!(whole
            .slice_size_profile(1)
            .unwrap()
            .iter()
            .all(|&c| c == 4));
    }

    #[test]
    fn bias_and_analytic_rank() {
        let s = space11(2);
        let zero = MultilinearForm::zero(s.clone(), 0b11);
        assert!((bias_of_form(&zero).unwrap() - 1.0).abs() < 1e-12);
        assert!(analytic_rank(&zero).unwrap().abs() < 1e-12);

        let xy = dot_form(&s);
        assert!((bias_of_form(&xy).unwrap() - 0.5).abs() < 1e-12);
        assert!((analytic_rank(&xy).unwrap() - 1.0).abs() < 1e-9);

        let s2 = space22();
        let f2 = dot_form(&s2);
        assert!((bias_of_form(&f2).unwrap() - 0.25).abs() < 1e-12);
        assert!((analytic_rank(&f2).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn bias_domination_by_multilinear_part() {
        let s = space11(3);
        for seed in 0..50 {
            let map = MultiAffineMap::random(s.clone(), 1, 3000 + seed);
            let affine_bias = bias_of_map(&map).unwrap().norm();
            let top = bias_of_form(&map.top_part(0)).unwrap();
            assert!(affine_bias <= top + 1e-9, "seed {seed}");
        }
    }

    #[test]
    fn box_norm_matches_bias_for_multilinear_phase() {
        let s = space22();
        let f2 = dot_form(&s);
        let table = MultiAffineMap::from_form(f2.clone())
            .phase_table()
            .unwrap();
        let bn = harmonic::box_norm(&table).unwrap();
        let b = bias_of_form(&f2).unwrap();
        assert!((bn.powi(4) - b).abs() < 1e-9);
    }

    #[test]
    fn nonzero_count_examples() {
        let s = space11(2);
        assert_eq!(nonzero_count(&MultiAffineMap::zero(s.clone(), 1)), 0);
        assert_eq!(nonzero_count(&MultiAffineMap::from_form(dot_form(&s))), 1);
        let mut parts = BTreeMap::new();
        parts.insert(
            0u32,
            vec![MultilinearForm::new(s.clone(), 0, vec![1]).unwrap()],
        );
        let cst = MultiAffineMap::new(s.clone(), 1, parts).unwrap();
        assert_eq!(nonzero_count(&cst), 4);
    }

    #[test]
    fn partition_rank_small_cases() {
        let s = space11(2);
        let zero = MultilinearForm::zero(s.clone(), 0b11);
        assert_eq!(partition_rank_search(&zero, 2).unwrap().unwrap().rank(), 0);
        let xy = dot_form(&s);
        assert_eq!(partition_rank_search(&xy, 2).unwrap().unwrap().rank(), 1);
    }

    #[test]
    fn partition_rank_equals_matrix_rank_for_bilinear() {
        let s = ProductSpace::new(2, &[3, 3]).unwrap();
        let m2 = s.modulus();
        let mut rng = SplitMix64::new(0xB111);
        for _ in 0..12 {
            let coeffs: Vec<u64> = (0..9).map(|_| rng.residue(2)).collect();
            let form = MultilinearForm::new(s.clone(), 0b11, coeffs.clone()).unwrap();
            let rows: Vec<FpVector> = (0..3)
                .map(|r| FpVector::new(m2, coeffs[3 * r..3 * r + 3].to_vec()).unwrap())
                .collect();
            let mrank = crate::space::rank_fp(&rows).unwrap();
            let prank = partition_rank_search(&form, 3).unwrap().map(|d| d.rank());
            assert_eq!(prank, Some(mrank), "coeffs {coeffs:?}");
        }
    }

    #[test]
    fn partition_rank_trilinear() {
        // x1 y1 z1 has partition rank 1
        let s = ProductSpace::new(2, &[1, 1, 1]).unwrap();
        let form = MultilinearForm::new(s.clone(), 0b111, vec![1]).unwrap();
        let dec = partition_rank_search(&form, 2).unwrap().unwrap();
        assert_eq!(dec.rank(), 1);
    }

    #[test]
    fn permute_and_symmetrize() {
        // psi(x, y) = x1 y2 over F_3, n = 2 per factor
        let s = ProductSpace::new(3, &[2, 2]).unwrap();
        let mut coeffs = vec![0u64; 4];
        coeffs[1] = 1; // entry (j1, j2) = (0, 1): the monomial x_1 y_2
        let psi = MultilinearForm::new(s.clone(), 0b11, coeffs).unwrap();

        let id = permute_form(&psi, &[0, 1]).unwrap();
        assert_eq!(id.coeffs(), psi.coeffs());

        let theta = symmetrize(&psi).unwrap();
        // expected: 2 (x1 y2 + x2 y1) mod 3
        let mut want = vec![0u64; 4];
        want[1] = 2;
        want[2] = 2;
        assert_eq!(theta.coeffs(), &want[..]);

        // symmetric input is a fixed point
        let again = symmetrize(&theta).unwrap();
        assert_eq!(again.coeffs(), theta.coeffs());

        // p <= k refused
        let s2 = space11(2);
        assert!(symmetrize(&dot_form(&s2)).is_err());
    }

    #[test]
    fn quasirandomness_of_dot_variety() {
        // beta(x, y) = x . y over F_2^3 x F_2^3, lambda = 0: delta = 1/2,
        // eta_min = 22/64 (failing pairs are the linearly dependent ones)
        let s = ProductSpace::new(2, &[3, 3]).unwrap();
        let beta = MultiAffineMap::from_form(dot_form(&s));
        let c1 = Coset::full(s.modulus(), 3);
        let c2 = Coset::full(s.modulus(), 3);
        let r = check_quasirandom(&beta, &FpVector::zero(s.modulus(), 1), &c1, &c2).unwrap();
        assert!(!r.empty);
        assert_eq!(r.delta, Some(0.5));
        assert!((r.eta_min - 22.0 / 64.0).abs() < 1e-12);

        let z = MultiAffineMap::zero(s.clone(), 1);
        let full = check_quasirandom(&z, &FpVector::zero(s.modulus(), 1), &c1, &c2).unwrap();
        assert_eq!(full.delta, Some(1.0));
        assert_eq!(full.eta_min, 0.0);
        let empty = check_quasirandom(
            &z,
            &FpVector::new(s.modulus(), vec![1]).unwrap(),
            &c1,
            &c2,
        )
        .unwrap();
        assert!(empty.empty);
    }

    #[test]
    fn quasirandomness_improves_with_dimension() {
        let mut last = f64::INFINITY;
        for n in [2usize, 3, 4] {
            let s = ProductSpace::new(2, &[n, n]).unwrap();
            let beta = MultiAffineMap::from_form(dot_form(&s));
            let c1 = Coset::full(s.modulus(), n);
            let c2 = Coset::full(s.modulus(), n);
            let r = check_quasirandom(&beta, &FpVector::zero(s.modulus(), 1), &c1, &c2).unwrap();
            assert_eq!(r.delta, Some(0.5));
            assert!(r.eta_min < last);
            last = r.eta_min;
        }
    }

    #[test]
    fn multilinear_variety_extraction() {
        let s = space22();
        let b = Variety::new(
            MultiAffineMap::from_form(dot_form(&s)),
            FpVector::zero(s.modulus(), 1),
        )
        .unwrap();
        // M = whole space
        let all = |_: &[u64]| true;
        let out = multilinear_variety_inside(&s, &all, &b).unwrap();
        assert!(!out.members().is_empty());

        // M = {x . y = 0}, itself a multilinear set, B = M as a variety
        let xy = dot_form(&s);
        let member = move |pt: &[u64]| xy.eval(pt) == 0;
        let out = multilinear_variety_inside(&s, &member, &b).unwrap();
        let members = out.members();
        assert!(!members.is_empty());
        for &i in &members {
            assert!(member(&s.point_of(i)));
        }
    }

    #[test]
    fn extraction_rejects_bad_preconditions() {
        let s = space22();
        let b = Variety::new(
            MultiAffineMap::from_form(dot_form(&s)),
            FpVector::zero(s.modulus(), 1),
        )
        .unwrap();
        let shifted = |pt: &[u64]| pt[0] == 1;
        assert!(matches!(
            multilinear_variety_inside(&s, &shifted, &b),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn random_multilinear_set_extraction() {
        // M built as an intersection of multilinear zero sets; B the
        // corresponding variety
        let s = space22();
        for trial in 0..10u64 {
            let mut rng = SplitMix64::derive(0x5EED, trial);
            let f1 = MultilinearForm::random(s.clone(), 0b11, &mut rng);
            let f2 = MultilinearForm::random(s.clone(), 0b01, &mut rng);
            let member = {
                let f1 = f1.clone();
                let f2 = f2.clone();
                move |pt: &[u64]| f1.eval(pt) == 0 && f2.eval(pt) == 0
            };
            let map = MultiAffineMap::stack(s.clone(), &[f1.clone(), f2.clone()]).unwrap();
            let b = Variety::new(map, FpVector::zero(s.modulus(), 2)).unwrap();
            assert!(!b.members().is_empty());
            let out = multilinear_variety_inside(&s, &member, &b).unwrap();
            assert!(!out.members().is_empty());
        }
    }

    #[test]
    fn map_json_roundtrip() {
        let s = ProductSpace::new(3, &[2, 1]).unwrap();
        let map = MultiAffineMap::random(s.clone(), 2, 1234);
        let j = MapJson::of(&map);
        let text = serde_json::to_string(&j).unwrap();
        let back: MapJson = serde_json::from_str(&text).unwrap();
        let map2 = back.to_map(&s).unwrap();
        for pt in s.points() {
            assert_eq!(map.eval(&pt), map2.eval(&pt));
        }
    }
}
