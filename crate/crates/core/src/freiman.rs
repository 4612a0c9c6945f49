//! Partial maps and Freiman (multi-)homomorphism verification, additive
//! quadruple counting, constructive affine extension, exhaustive affine and
//! multiaffine agreement search, arrangements and tri-arrangements, the
//! dependent-random-choice filter, and the respected-arrangement census.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::multiaffine::{MapJson, MultiAffineMap, MultilinearForm};
use crate::rng::SplitMix64;
use crate::space::{AffineMapFp, Coset, FpVector, LinearMapFp, ProductSpace, SpaceJson};
use crate::{check_budget, checked_pow, Error, Result};

/// A map defined on a subset A of a product space, with values in F_p^h.
/// The domain is the key set (canonical indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialMap {
    space: ProductSpace,
    h: usize,
    entries: BTreeMap<u64, FpVector>,
}

impl PartialMap {
    pub fn new(space: ProductSpace, h: usize, entries: BTreeMap<u64, FpVector>) -> Result<Self> {
        for (&i, v) in &entries {
            if i >= space.total_size() {
                return Err(Error::Invalid(format!("index {i} out of range")));
            }
            if v.dim() != h || v.modulus() != space.modulus() {
                return Err(Error::dims("partial map value dimension"));
            }
        }
        Ok(PartialMap { space, h, entries })
    }

    pub fn empty(space: ProductSpace, h: usize) -> Self {
        PartialMap {
            space,
            h,
            entries: BTreeMap::new(),
        }
    }

    /// The restriction of a global multiaffine map to the given indices.
    pub fn restriction_of(map: &MultiAffineMap, domain: impl IntoIterator<Item = u64>) -> Self {
        let space = map.space().clone();
        let entries = domain
            .into_iter()
            .map(|i| (i, map.eval(&space.point_of(i))))
            .collect();
        PartialMap {
            space,
            h: map.h(),
            entries,
        }
    }

    pub fn space(&self) -> &ProductSpace {
        &self.space
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn density(&self) -> f64 {
        self.entries.len() as f64 / self.space.total_size() as f64
    }

    pub fn domain(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.keys().copied()
    }

    pub fn contains(&self, index: u64) -> bool {
        self.entries.contains_key(&index)
    }

    pub fn value(&self, index: u64) -> Option<&FpVector> {
        self.entries.get(&index)
    }

    pub fn insert(&mut self, index: u64, value: FpVector) -> Result<()> {
        if index >= self.space.total_size() {
            return Err(Error::Invalid(format!("index {index} out of range")));
        }
        if value.dim() != self.h || value.modulus() != self.space.modulus() {
            return Err(Error::dims("partial map value dimension"));
        }
        self.entries.insert(index, value);
        Ok(())
    }

    pub fn entries(&self) -> &BTreeMap<u64, FpVector> {
        &self.entries
    }

    /// Keeps each domain point independently with probability `density`.
    pub fn random_restriction_of(
        map: &MultiAffineMap,
        density: f64,
        seed: u64,
    ) -> Self {
        let mut rng = SplitMix64::new(seed);
        let space = map.space().clone();
        let domain: Vec<u64> = (0..space.total_size())
            .filter(|_| rng.unit() < density)
            .collect();
        Self::restriction_of(map, domain)
    }

    /// Replaces the values at a `fraction` of domain points (chosen by the
    /// seeded stream) with uniform random different values.
    pub fn corrupt(&self, fraction: f64, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let p = self.space.p();
        let mut out = self.clone();
        for (&i, v) in &self.entries {
            if rng.unit() < fraction {
                // uniform value distinct from the current one
                loop {
                    let cand = FpVector::new(
                        self.space.modulus(),
                        (0..self.h).map(|_| rng.residue(p)).collect(),
                    )
                    .expect("residues in range");
                    if &cand != v {
                        out.entries.insert(i, cand);
                        break;
                    }
                }
            }
        }
        out
    }
}

/// A violating pair of m-term sums: sum(lhs) = sum(rhs) in the group but the
/// value sums differ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HomViolation {
    pub lhs: Vec<u64>,
    pub rhs: Vec<u64>,
}

/// Exhaustive Freiman m-homomorphism check: whenever a_1 + .. + a_m =
/// b_1 + .. + b_m within the domain, the value sums must agree. Returns the
/// first violating tuple otherwise. Enumerates domain^{2m-1} (the last b is
/// determined), so the domain must be small.
pub fn is_freiman_hom(phi: &PartialMap, m: usize) -> Result<Option<HomViolation>> {
    if m == 0 {
        return Err(Error::Invalid("order must be positive".into()));
    }
    let n = phi.len() as u64;
    let needed = n
        .checked_pow(2 * m as u32 - 1)
        .ok_or(Error::BudgetExceeded {
            needed: u64::MAX,
            budget: phi.space.budget(),
        })?;
    check_budget(needed, phi.space.budget())?;
    let domain: Vec<u64> = phi.domain().collect();
    Ok(freiman_scan(phi, m, &domain))
}

fn freiman_scan(phi: &PartialMap, m: usize, domain: &[u64]) -> Option<HomViolation> {
    let space = &phi.space;
    let n = domain.len();
    if n == 0 {
        return None;
    }
    let zero = FpVector::zero(space.modulus(), phi.h);
    // odometer over (a_1..a_m, b_1..b_{m-1}) as positions into `domain`
    let slots = 2 * m - 1;
    let mut pos = vec![0usize; slots];
    loop {
        // group sum of a's minus first m-1 b's determines b_m
        let mut sum = 0u64; // index-level accumulator
        let mut val = zero.clone();
        for (s, &i) in pos.iter().enumerate() {
            let idx = domain[i];
            if s < m {
                sum = space.index_add(sum, idx);
                val = val.add(phi.value(idx).unwrap()).unwrap();
            } else {
                sum = space.index_sub(sum, idx);
                val = val.sub(phi.value(idx).unwrap()).unwrap();
            }
        }
        let b_m = sum;
        if let Some(vb) = phi.value(b_m) {
            if &val != vb {
                let lhs: Vec<u64> = pos[..m].iter().map(|&i| domain[i]).collect();
                let mut rhs: Vec<u64> = pos[m..].iter().map(|&i| domain[i]).collect();
                rhs.push(b_m);
                return Some(HomViolation { lhs, rhs });
            }
        }
        let mut s = 0;
        loop {
            if s == slots {
                return None;
            }
            pos[s] += 1;
            if pos[s] < n {
                break;
            }
            pos[s] = 0;
            s += 1;
        }
    }
}

/// Seeded sampling variant of the m-homomorphism check.
pub fn is_freiman_hom_sampled(
    phi: &PartialMap,
    m: usize,
    samples: usize,
    seed: u64,
) -> Result<Option<HomViolation>> {
    if m == 0 {
        return Err(Error::Invalid("order must be positive".into()));
    }
    let domain: Vec<u64> = phi.domain().collect();
    if domain.is_empty() {
        return Ok(None);
    }
    let space = &phi.space;
    let mut rng = SplitMix64::new(seed);
    for _ in 0..samples {
        let mut sum = 0u64;
        let mut val = FpVector::zero(space.modulus(), phi.h);
        let mut lhs = Vec::with_capacity(m);
        let mut rhs = Vec::with_capacity(m);
        for s in 0..(2 * m - 1) {
            let idx = domain[rng.index(domain.len() as u64) as usize];
            if s < m {
                sum = space.index_add(sum, idx);
                val = val.add(phi.value(idx).unwrap())?;
                lhs.push(idx);
            } else {
                sum = space.index_sub(sum, idx);
                val = val.sub(phi.value(idx).unwrap())?;
                rhs.push(idx);
            }
        }
        if let Some(vb) = phi.value(sum) {
            if &val != vb {
                rhs.push(sum);
                return Ok(Some(HomViolation { lhs, rhs }));
            }
        }
    }
    Ok(None)
}

/// A multi-homomorphism violation: a violating m-tuple pair on an axis line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiHomViolation {
    pub direction: usize,
    pub violation: HomViolation,
}

/// Checks that for every direction d and every fixing of the remaining
/// coordinates, the slice map is a Freiman m-homomorphism.
pub fn is_multi_hom(phi: &PartialMap, m: usize) -> Result<Option<MultiHomViolation>> {
    let space = &phi.space;
    for d in 0..space.k() {
        let q = space.factor_size(d);
        let lo: u64 = (d + 1..space.k()).map(|i| space.factor_size(i)).product();
        let others = space.total_size() / q;
        for o in 0..others {
            let hi = o / lo;
            let rest = o % lo;
            let global = |mid: u64| (hi * q + mid) * lo + rest;
            // slice as a partial map on the single-factor view
            let fspace = space.factor_space(d);
            let mut entries = BTreeMap::new();
            for mid in 0..q {
                if let Some(v) = phi.value(global(mid)) {
                    entries.insert(mid, v.clone());
                }
            }
            if entries.len() < 2 {
                continue;
            }
            let slice = PartialMap::new(fspace, phi.h, entries)?;
            if let Some(v) = is_freiman_hom(&slice, m)? {
                return Ok(Some(MultiHomViolation {
                    direction: d,
                    violation: HomViolation {
                        lhs: v.lhs.iter().map(|&mid| global(mid)).collect(),
                        rhs: v.rhs.iter().map(|&mid| global(mid)).collect(),
                    },
                }));
            }
        }
    }
    Ok(None)
}

/// Ordered d-additive quadruples (x, y, z, w) within S: the coordinates
/// agree off d and x_d - y_d + z_d - w_d = 0. Degenerate quadruples are
/// counted. When `sigma` is given, also counts the quadruples it respects.
pub fn count_d_additive_quadruples(
    space: &ProductSpace,
    set: &[u64],
    d: usize,
    sigma: Option<&PartialMap>,
) -> Result<(u64, Option<u64>)> {
    space.check_direction(d)?;
    let q = space.factor_size(d);
    let lo: u64 = (d + 1..space.k()).map(|i| space.factor_size(i)).product();
    // group members by their off-d context
    let mut fibers: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for &i in set {
        if i >= space.total_size() {
            return Err(Error::Invalid(format!("index {i} out of range")));
        }
        let mid = (i / lo) % q;
        let key = (i / (lo * q)) * lo + i % lo;
        fibers.entry(key).or_default().push(mid);
    }
    let needed: u64 = fibers.values().map(|f| (f.len() as u64).pow(3)).sum();
    check_budget(needed, space.budget())?;

    let m = space.modulus();
    let mut total = 0u64;
    let mut respected = sigma.map(|_| 0u64);
    for (key, fiber) in &fibers {
        let hi = key / lo;
        let rest = key % lo;
        let global = |mid: u64| (hi * q + mid) * lo + rest;
        let members: std::collections::BTreeSet<u64> = fiber.iter().copied().collect();
        for &x in fiber {
            for &y in fiber {
                for &z in fiber {
                    // w = x - y + z in the d-block
                    let px = space.factor_coords_of(d, x);
                    let py = space.factor_coords_of(d, y);
                    let pz = space.factor_coords_of(d, z);
                    let pw: Vec<u64> = px
                        .iter()
                        .zip(&py)
                        .zip(&pz)
                        .map(|((&a, &b), &c)| m.add(m.sub(a, b), c))
                        .collect();
                    let w = space.factor_index_of(d, &pw);
                    if members.contains(&w) {
                        total += 1;
                        if let (Some(r), Some(s)) = (respected.as_mut(), sigma) {
                            let vx = s.value(global(x)).ok_or_else(|| {
                                Error::pre("sigma not defined on all of S")
                            })?;
                            let vy = s.value(global(y)).unwrap();
                            let vz = s.value(global(z)).unwrap();
                            let vw = s.value(global(w)).unwrap();
                            if vx.sub(vy)?.add(vz)? == *vw {
                                *r += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((total, respected))
}

/// The affine extension of a dense 2-homomorphism on a coset: the values on
/// the whole coset together with the affine representation relative to the
/// coset parametrization.
#[derive(Debug, Clone)]
pub struct AffineExtension {
    /// psi on every point of the coset, keyed by ambient-space index.
    pub values: PartialMap,
    /// psi(u_0).
    pub base_value: FpVector,
    /// psi(u_0 + b_i) - psi(u_0) for each basis vector b_i.
    pub basis_images: Vec<FpVector>,
}

/// Extends phi from a subset of size > (4/5)|C| of a coset C to the unique
/// affine map on C, via psi(x) = phi(a) + phi(b) - phi(c) with a + b - c = x.
///
/// With `strict` set, phi is first checked to respect every additive
/// quadruple in its domain (the first violating quadruple is reported);
/// otherwise the check happens after construction by verifying that the
/// extension is affine and a witness is recovered on failure.
pub fn affine_extension(phi: &PartialMap, coset: &Coset, strict: bool) -> Result<AffineExtension> {
    let space = &phi.space;
    if space.k() != 1 || space.dim(0) != coset.ambient_dim() {
        return Err(Error::dims("extension needs a single-group map on the coset's ambient space"));
    }
    let domain: Vec<u64> = phi.domain().collect();
    for &i in &domain {
        let v = FpVector::new(space.modulus(), space.point_of(i))?;
        if !coset.contains(&v)? {
            return Err(Error::pre(format!("domain point {i} outside the coset")));
        }
    }
    // strictly more than 4/5 of the coset
    if 5 * domain.len() as u64 <= 4 * coset.size() {
        return Err(Error::pre(format!(
            "domain density {}/{} is not greater than 4/5",
            domain.len(),
            coset.size()
        )));
    }
    if strict {
        if let Some(v) = quadruple_violation(phi, &domain) {
            return Err(Error::pre(format!(
                "not a 2-homomorphism: witness {v:?}"
            )));
        }
    }

    let member_idx: std::collections::BTreeSet<u64> = domain.iter().copied().collect();
    let mut values = PartialMap::empty(space.clone(), phi.h);
    for pt in coset.enumerate() {
        let x = space.index_of(pt.coords());
        if let Some(v) = phi.value(x) {
            values.insert(x, v.clone())?;
            continue;
        }
        let a = domain[0];
        let mut found = false;
        for &b in &domain {
            let c = space.index_sub(space.index_add(a, b), x);
            if member_idx.contains(&c) {
                let v = phi
                    .value(a)
                    .unwrap()
                    .add(phi.value(b).unwrap())?
                    .sub(phi.value(c).unwrap())?;
                values.insert(x, v)?;
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::pre(format!(
                "no representation x = a + b - c found for {x}"
            )));
        }
    }

    // affine representation relative to the coset parametrization
    let u0 = coset.base().clone();
    let base_value = values
        .value(space.index_of(u0.coords()))
        .expect("coset covered")
        .clone();
    let basis_images: Vec<FpVector> = coset
        .basis()
        .iter()
        .map(|b| {
            let at = space.index_of(u0.add(b).expect("same space").coords());
            values.value(at).unwrap().sub(&base_value).unwrap()
        })
        .collect();

    // verify affineness: psi(u0 + sum lambda_i b_i) = base + sum lambda_i images
    let m = space.modulus();
    for code in 0..coset.size() {
        let pt = coset.point_at(code);
        let mut want = base_value.clone();
        let mut rem = code;
        let mut lambdas = vec![0u64; coset.subspace_dim()];
        for l in lambdas.iter_mut().rev() {
            *l = rem % m.p();
            rem /= m.p();
        }
        for (l, img) in lambdas.iter().zip(&basis_images) {
            want = want.add(&img.scale(*l))?;
        }
        let got = values.value(space.index_of(pt.coords())).unwrap();
        if got != &want {
            let witness = quadruple_violation(phi, &domain);
            return Err(Error::pre(format!(
                "not a 2-homomorphism: extension is not affine; witness {witness:?}"
            )));
        }
    }

    Ok(AffineExtension {
        values,
        base_value,
        basis_images,
    })
}

/// First additive quadruple in the domain not respected by phi, if any.
fn quadruple_violation(phi: &PartialMap, domain: &[u64]) -> Option<HomViolation> {
    freiman_scan(phi, 2, domain)
}

/// Exhaustive maximization of |{x in domain : alpha(x) = phi(x)}| over all
/// affine maps alpha : F_p^n -> F_p^h. Ties break toward the first map in
/// the canonical coefficient order (offset digits, then matrix digits,
/// most-significant first).
pub fn best_affine_agreement(phi: &PartialMap) -> Result<(AffineMapFp, u64)> {
    let space = &phi.space;
    if space.k() != 1 {
        return Err(Error::pre("affine search needs a single-group map"));
    }
    let n = space.dim(0);
    let h = phi.h;
    let p = space.p();
    let digits = h * (n + 1);
    let candidates = checked_pow(p, digits as u32, space.budget())?;
    check_budget(
        candidates.saturating_mul(phi.len() as u64 + 1),
        space.budget(),
    )?;

    let m = space.modulus();
    let domain: Vec<(u64, &FpVector)> = phi.entries.iter().map(|(&i, v)| (i, v)).collect();
    let mut best: Option<(AffineMapFp, u64)> = None;
    let mut digit_buf = vec![0u64; digits];
    for code in 0..candidates {
        let mut rem = code;
        for slot in digit_buf.iter_mut().rev() {
            *slot = rem % p;
            rem /= p;
        }
        let offset = FpVector::new(m, digit_buf[..h].to_vec())?;
        let linear = LinearMapFp::new(m, h, n, digit_buf[h..].to_vec())?;
        let alpha = AffineMapFp::new(linear, offset)?;
        let mut agree = 0u64;
        for (i, v) in &domain {
            let x = FpVector::new(m, space.point_of(*i))?;
            if &alpha.apply(&x)? == *v {
                agree += 1;
            }
        }
        if best.as_ref().map(|(_, b)| agree > *b).unwrap_or(true) {
            best = Some((alpha, agree));
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// An arrangement: the word lists directions outermost split first, the
/// point list has length 2^r ordered so that the first point corresponds to
/// eps = (1, .., 1), and the stored lengths satisfy the recursive law
/// (re-derived and checked at construction).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arrangement {
    word: Vec<usize>,
    lengths: Vec<u64>,
    points: Vec<Vec<u64>>,
}

impl Arrangement {
    pub fn new(
        space: &ProductSpace,
        word: Vec<usize>,
        lengths: Vec<u64>,
        points: Vec<Vec<u64>>,
    ) -> Result<Self> {
        for &d in &word {
            space.check_direction(d)?;
        }
        if points.len() != 1 << word.len() {
            return Err(Error::dims("arrangement must have 2^r points"));
        }
        let derived = derive_lengths(space, &word, &points)?;
        if derived != lengths {
            return Err(Error::Invalid(
                "stored lengths disagree with the recursive length law".into(),
            ));
        }
        Ok(Arrangement {
            word,
            lengths,
            points,
        })
    }

    /// Builds the arrangement for the given free parameters: slot j
    /// (0-based, outermost split first) takes 2^j factor indices in
    /// G_{word[j]}, packed as in the configuration formula.
    pub fn from_params(
        space: &ProductSpace,
        word: &[usize],
        lengths: &[u64],
        params: &[u64],
    ) -> Result<Self> {
        let r = word.len();
        if params.len() != (1 << r) - 1 {
            return Err(Error::dims("parameter count must be 2^r - 1"));
        }
        let m = space.modulus();
        let slot_offsets: Vec<usize> = (0..=r).map(|j| (1usize << j) - 1).collect();
        let mut positions: Vec<Vec<usize>> = vec![Vec::new(); space.k()];
        for (j, &d) in word.iter().enumerate() {
            positions[d].push(j);
        }
        let mut points = Vec::with_capacity(1 << r);
        for idx in 0..(1u32 << r) {
            // position index -> eps: bit j of eps is 1 iff the (r-1-j)-th
            // bit of idx is 0
            let eps_bit = |j: usize| (idx >> (r - 1 - j)) & 1 == 0;
            let mut point = vec![0u64; space.total_dim()];
            for d in 0..space.k() {
                let range = space.factor_range(d);
                let pos = &positions[d];
                if pos.iter().all(|&j| eps_bit(j)) {
                    point[range.clone()].copy_from_slice(&lengths[range.clone()]);
                }
                for (t, &j) in pos.iter().enumerate() {
                    if pos[t + 1..].iter().all(|&s| eps_bit(s)) {
                        let entry = (0..j)
                            .fold(0usize, |a, b| a | (usize::from(eps_bit(b))) << b);
                        let coords =
                            space.factor_coords_of(d, params[slot_offsets[j] + entry]);
                        for (c, add) in range.clone().zip(&coords) {
                            point[c] = m.add(point[c], *add);
                        }
                    }
                }
            }
            points.push(point);
        }
        Arrangement::new(space, word.to_vec(), lengths.to_vec(), points)
    }

    pub fn word(&self) -> &[usize] {
        &self.word
    }

    pub fn lengths(&self) -> &[u64] {
        &self.lengths
    }

    pub fn points(&self) -> &[Vec<u64>] {
        &self.points
    }
}

/// Recomputes arrangement lengths from the point list, checking the
/// recursive law (the two halves agree off the split direction).
fn derive_lengths(space: &ProductSpace, word: &[usize], points: &[Vec<u64>]) -> Result<Vec<u64>> {
    if word.is_empty() {
        let pt = &points[0];
        if pt.len() != space.total_dim() {
            return Err(Error::dims("arrangement point length"));
        }
        return Ok(pt.clone());
    }
    let d = word[0];
    let half = points.len() / 2;
    let l1 = derive_lengths(space, &word[1..], &points[..half])?;
    let l2 = derive_lengths(space, &word[1..], &points[half..])?;
    let range = space.factor_range(d);
    for (i, (a, b)) in l1.iter().zip(&l2).enumerate() {
        if !range.contains(&i) && a != b {
            return Err(Error::Invalid(
                "arrangement halves disagree off the split direction".into(),
            ));
        }
    }
    let m = space.modulus();
    let mut lengths = l1.clone();
    for i in range {
        lengths[i] = m.sub(l1[i], l2[i]);
    }
    Ok(lengths)
}

/// Number of free parameters (as a count of factor elements) and the total
/// parameter-space size for a word.
pub fn arrangement_param_space(space: &ProductSpace, word: &[usize]) -> Option<u64> {
    let mut total: u64 = 1;
    for (j, &d) in word.iter().enumerate() {
        for _ in 0..(1u64 << j) {
            total = total.checked_mul(space.factor_size(d))?;
        }
    }
    Some(total)
}

/// Exhaustively enumerates every arrangement of the given word and lengths,
/// each exactly once.
pub fn enumerate_arrangements(
    space: &ProductSpace,
    word: &[usize],
    lengths: &[u64],
) -> Result<Vec<Arrangement>> {
    let total = arrangement_param_space(space, word).ok_or(Error::BudgetExceeded {
        needed: u64::MAX,
        budget: space.budget(),
    })?;
    check_budget(total.saturating_mul(1 << word.len()), space.budget())?;
    let r = word.len();
    let n_slots = (1usize << r) - 1;
    let slot_factor: Vec<usize> = (0..n_slots)
        .map(|s| word[(s + 1).ilog2() as usize])
        .collect();
    let mut params = vec![0u64; n_slots];
    let mut out = Vec::with_capacity(total as usize);
    loop {
        out.push(Arrangement::from_params(space, word, lengths, &params)?);
        let mut s = 0;
        loop {
            if s == n_slots {
                return Ok(out);
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

/// Draws one arrangement with uniform free parameters.
pub fn sample_arrangement(
    space: &ProductSpace,
    word: &[usize],
    lengths: &[u64],
    rng: &mut SplitMix64,
) -> Result<Arrangement> {
    let r = word.len();
    let n_slots = (1usize << r) - 1;
    let params: Vec<u64> = (0..n_slots)
        .map(|s| rng.index(space.factor_size(word[(s + 1).ilog2() as usize])))
        .collect();
    Arrangement::from_params(space, word, lengths, &params)
}

/// phi(q) as the signed sum over the split tree: the point at list position
/// j carries sign (-1)^{popcount(j)}. `None` if any point is outside the
/// domain.
pub fn arrangement_value(phi: &PartialMap, q: &Arrangement) -> Option<FpVector> {
    let space = &phi.space;
    let mut acc = FpVector::zero(space.modulus(), phi.h);
    for (j, pt) in q.points.iter().enumerate() {
        let v = phi.value(space.index_of(pt))?;
        acc = if (j.count_ones()) % 2 == 0 {
            acc.add(v).expect("same space")
        } else {
            acc.sub(v).expect("same space")
        };
    }
    Some(acc)
}

/// A tri-arrangement: the word is written (k, k-1, .., i) with the LAST
/// element the outermost split; the point list has length 3^r grouped by
/// the outermost split first, and each split (q1, q2, q3) carries lengths
/// u_i, v_i, w_i with u_i + v_i - w_i = x_i (checked at construction).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriArrangement {
    word: Vec<usize>,
    lengths: Vec<u64>,
    points: Vec<Vec<u64>>,
}

impl TriArrangement {
    pub fn new(
        space: &ProductSpace,
        word: Vec<usize>,
        lengths: Vec<u64>,
        points: Vec<Vec<u64>>,
    ) -> Result<Self> {
        for &d in &word {
            space.check_direction(d)?;
        }
        if points.len() != 3usize.pow(word.len() as u32) {
            return Err(Error::dims("tri-arrangement must have 3^r points"));
        }
        let derived = derive_tri_lengths(space, &word, &points)?;
        if derived != lengths {
            return Err(Error::Invalid(
                "stored lengths disagree with the tri-arrangement law".into(),
            ));
        }
        Ok(TriArrangement {
            word,
            lengths,
            points,
        })
    }

    /// Draws a tri-arrangement with uniform free parameters (two per split).
    pub fn sample(
        space: &ProductSpace,
        word: &[usize],
        lengths: &[u64],
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        let points = sample_tri_points(space, word, lengths, rng);
        TriArrangement::new(space, word.to_vec(), lengths.to_vec(), points)
    }

    pub fn word(&self) -> &[usize] {
        &self.word
    }

    pub fn lengths(&self) -> &[u64] {
        &self.lengths
    }

    pub fn points(&self) -> &[Vec<u64>] {
        &self.points
    }
}

fn sample_tri_points(
    space: &ProductSpace,
    word: &[usize],
    lengths: &[u64],
    rng: &mut SplitMix64,
) -> Vec<Vec<u64>> {
    if word.is_empty() {
        return vec![lengths.to_vec()];
    }
    let d = *word.last().unwrap();
    let rest = &word[..word.len() - 1];
    let m = space.modulus();
    let range = space.factor_range(d);
    let u: Vec<u64> = range.clone().map(|_| rng.residue(space.p())).collect();
    let v: Vec<u64> = range.clone().map(|_| rng.residue(space.p())).collect();
    // w = u + v - x_d so that u + v - w = x_d
    let w: Vec<u64> = u
        .iter()
        .zip(&v)
        .zip(&lengths[range.clone()])
        .map(|((&a, &b), &c)| m.sub(m.add(a, b), c))
        .collect();
    let mut out = Vec::new();
    for block in [&u, &v, &w] {
        let mut l = lengths.to_vec();
        l[range.clone()].copy_from_slice(block);
        out.extend(sample_tri_points(space, rest, &l, rng));
    }
    out
}

fn derive_tri_lengths(
    space: &ProductSpace,
    word: &[usize],
    points: &[Vec<u64>],
) -> Result<Vec<u64>> {
    if word.is_empty() {
        let pt = &points[0];
        if pt.len() != space.total_dim() {
            return Err(Error::dims("tri-arrangement point length"));
        }
        return Ok(pt.clone());
    }
    let d = *word.last().unwrap();
    let rest = &word[..word.len() - 1];
    let third = points.len() / 3;
    let l1 = derive_tri_lengths(space, rest, &points[..third])?;
    let l2 = derive_tri_lengths(space, rest, &points[third..2 * third])?;
    let l3 = derive_tri_lengths(space, rest, &points[2 * third..])?;
    let range = space.factor_range(d);
    for i in 0..l1.len() {
        if !range.contains(&i) && !(l1[i] == l2[i] && l2[i] == l3[i]) {
            return Err(Error::Invalid(
                "tri-arrangement thirds disagree off the split direction".into(),
            ));
        }
    }
    let m = space.modulus();
    let mut lengths = l1.clone();
    for i in range {
        lengths[i] = m.sub(m.add(l1[i], l2[i]), l3[i]);
    }
    Ok(lengths)
}

/// phi(q) with the 3-way recursion phi(q) = phi(q1) + phi(q2) - phi(q3):
/// the point at base-3 position m carries sign (-1)^{number of 2-digits}.
pub fn tri_arrangement_value(phi: &PartialMap, q: &TriArrangement) -> Option<FpVector> {
    let space = &phi.space;
    let mut acc = FpVector::zero(space.modulus(), phi.h);
    for (j, pt) in q.points.iter().enumerate() {
        let v = phi.value(space.index_of(pt))?;
        let mut twos = 0;
        let mut rem = j;
        for _ in 0..q.word.len() {
            if rem % 3 == 2 {
                twos += 1;
            }
            rem /= 3;
        }
        acc = if twos % 2 == 0 {
            acc.add(v).expect("same space")
        } else {
            acc.sub(v).expect("same space")
        };
    }
    Some(acc)
}

/// Dependent-random-choice filter: draws a uniform linear pi : F_p^h ->
/// F_p^t and a uniform multilinear psi : G_{[k]} -> F_p^t (full-support
/// coefficient tensors, i.i.d. uniform) and keeps the points of A where
/// pi(phi(x)) = psi(x). t = 0 returns phi unchanged.
pub fn drc_filter(phi: &PartialMap, t: usize, seed: u64) -> Result<PartialMap> {
    if t == 0 {
        return Ok(phi.clone());
    }
    let space = &phi.space;
    let m = space.modulus();
    let mut rng = SplitMix64::new(seed);
    let pi = LinearMapFp::new(
        m,
        t,
        phi.h,
        (0..t * phi.h).map(|_| rng.residue(m.p())).collect(),
    )?;
    let full = (1u32 << space.k()) - 1;
    let psi_forms: Vec<MultilinearForm> = (0..t)
        .map(|_| MultilinearForm::random(space.clone(), full, &mut rng))
        .collect();
    let mut out = PartialMap::empty(space.clone(), phi.h);
    for (&i, v) in &phi.entries {
        let pt = space.point_of(i);
        let image = pi.apply(v)?;
        let psi_val = FpVector::new(m, psi_forms.iter().map(|f| f.eval(&pt)).collect())?;
        if image == psi_val {
            out.insert(i, v.clone())?;
        }
    }
    Ok(out)
}

/// Census settings: strata over sampled lengths, then sampled tuples of
/// arrangements (one per shape) with those lengths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensusConfig {
    pub lengths_samples: usize,
    pub tuples_per_lengths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LengthsCell {
    pub lengths_index: u64,
    pub sampled: usize,
    /// Tuples whose arrangements all had every point inside the domain.
    pub valid: usize,
    /// Fraction of valid tuples whose phi values all agree; `None` when no
    /// tuple was valid ("no data").
    pub agree_fraction: Option<f64>,
    /// Most frequent common value among agreeing tuples.
    pub modal_value: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensusReport {
    pub cells: Vec<LengthsCell>,
    pub sampled_tuples: usize,
    pub valid_tuples: usize,
    /// Fraction of (i, j) arrangement pairs within valid tuples that have
    /// equal phi values; `None` when nothing was valid.
    pub pairs_equal_fraction: Option<f64>,
}

/// Samples tuples of arrangements with common lengths and reports how often
/// their phi values agree. Strata (one per sampled lengths) use seeds
/// derived from (seed, stratum), so shard order cannot change the result.
pub fn respected_census(
    phi: &PartialMap,
    shapes: &[Vec<usize>],
    cfg: &CensusConfig,
) -> Result<CensusReport> {
    if shapes.is_empty() {
        return Err(Error::Invalid("census needs at least one shape".into()));
    }
    let space = &phi.space;
    let mut cells = Vec::with_capacity(cfg.lengths_samples);
    let mut valid_tuples = 0usize;
    let mut sampled_tuples = 0usize;
    let mut pair_equal = 0u64;
    let mut pair_total = 0u64;
    for stratum in 0..cfg.lengths_samples {
        let mut rng = SplitMix64::derive(cfg.seed, stratum as u64);
        let lengths_index = rng.index(space.total_size());
        let lengths = space.point_of(lengths_index);
        let mut valid = 0usize;
        let mut agree = 0usize;
        let mut value_counts: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
        for _ in 0..cfg.tuples_per_lengths {
            sampled_tuples += 1;
            let mut values = Vec::with_capacity(shapes.len());
            let mut ok = true;
            for shape in shapes {
                let arr = sample_arrangement(space, shape, &lengths, &mut rng)?;
                match arrangement_value(phi, &arr) {
                    Some(v) => values.push(v),
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            valid += 1;
            valid_tuples += 1;
            for i in 0..values.len() {
                for j in i + 1..values.len() {
                    pair_total += 1;
                    if values[i] == values[j] {
                        pair_equal += 1;
                    }
                }
            }
            if values.windows(2).all(|w| w[0] == w[1]) {
                agree += 1;
                *value_counts
                    .entry(values[0].coords().to_vec())
                    .or_insert(0) += 1;
            }
        }
        let modal_value = value_counts
            .iter()
            .max_by_key(|&(v, &c)| (c, std::cmp::Reverse(v.clone())))
            .map(|(v, _)| v.clone());
        cells.push(LengthsCell {
            lengths_index,
            sampled: cfg.tuples_per_lengths,
            valid,
            agree_fraction: if valid > 0 {
                Some(agree as f64 / valid as f64)
            } else {
                None
            },
            modal_value,
        });
    }
    Ok(CensusReport {
        cells,
        sampled_tuples,
        valid_tuples,
        pairs_equal_fraction: if pair_total > 0 {
            Some(pair_equal as f64 / pair_total as f64)
        } else {
            None
        },
    })
}

/// Exhaustive maximization of agreement with phi over ALL global multiaffine
/// maps G_{[k]} -> F_p^h (p^{h prod(n_i + 1)} candidates). Ties break toward
/// the first candidate in the canonical coefficient order.
pub fn multiaffine_inverse_search(phi: &PartialMap) -> Result<(MultiAffineMap, u64)> {
    let space = &phi.space;
    let h = phi.h;
    let p = space.p();
    let digits: usize = h * space.dims().iter().map(|&n| n + 1).product::<usize>();
    let candidates = checked_pow(p, digits as u32, space.budget())?;
    check_budget(
        candidates.saturating_mul(phi.len() as u64 + 1),
        space.budget(),
    )?;

    // per-mask tensor lengths, masks ascending
    let masks: Vec<u32> = (0..(1u32 << space.k())).collect();
    let tensor_lens: Vec<usize> = masks
        .iter()
        .map(|&mask| {
            (0..space.k())
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| space.dim(i))
                .product()
        })
        .collect();

    let mut best: Option<(MultiAffineMap, u64)> = None;
    let mut digit_buf = vec![0u64; digits];
    for code in 0..candidates {
        let mut rem = code;
        for slot in digit_buf.iter_mut().rev() {
            *slot = rem % p;
            rem /= p;
        }
        let mut parts = BTreeMap::new();
        let mut off = 0usize;
        for (mi, &mask) in masks.iter().enumerate() {
            let mut forms = Vec::with_capacity(h);
            for _ in 0..h {
                let t = digit_buf[off..off + tensor_lens[mi]].to_vec();
                off += tensor_lens[mi];
                forms.push(MultilinearForm::new(space.clone(), mask, t)?);
            }
            parts.insert(mask, forms);
        }
        let map = MultiAffineMap::new(space.clone(), h, parts)?;
        let mut agree = 0u64;
        for (&i, v) in &phi.entries {
            if &map.eval(&space.point_of(i)) == v {
                agree += 1;
            }
        }
        if best.as_ref().map(|(_, b)| agree > *b).unwrap_or(true) {
            best = Some((map, agree));
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// PartialMap wire format:
/// {"space": ..., "h": int, "entries": [[index, [residues]], ...]}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartialMapJson {
    pub space: SpaceJson,
    pub h: usize,
    pub entries: Vec<(u64, Vec<u64>)>,
}

impl PartialMapJson {
    pub fn of(pm: &PartialMap) -> Self {
        PartialMapJson {
            space: SpaceJson::of(&pm.space),
            h: pm.h,
            entries: pm
                .entries
                .iter()
                .map(|(&i, v)| (i, v.coords().to_vec()))
                .collect(),
        }
    }

    pub fn to_partial_map(&self) -> Result<PartialMap> {
        let space = self.space.to_space()?;
        let m = space.modulus();
        let entries = self
            .entries
            .iter()
            .map(|(i, coords)| Ok((*i, FpVector::new(m, coords.clone())?)))
            .collect::<Result<BTreeMap<u64, FpVector>>>()?;
        PartialMap::new(space, self.h, entries)
    }
}

/// Arrangement dump: direction word plus ordered point-index list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrangementJson {
    pub word: Vec<usize>,
    pub lengths: u64,
    pub point_indices: Vec<u64>,
}

impl ArrangementJson {
    pub fn of(space: &ProductSpace, a: &Arrangement) -> Self {
        ArrangementJson {
            word: a.word.clone(),
            lengths: space.index_of(&a.lengths),
            point_indices: a.points.iter().map(|p| space.index_of(p)).collect(),
        }
    }
}

/// Re-export used by the CLI for map files.
pub fn map_json_of(map: &MultiAffineMap) -> MapJson {
    MapJson::of(map)
}
