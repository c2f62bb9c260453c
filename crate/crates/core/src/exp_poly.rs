//! Exponential-over-polynomial terms `coeff · exp(−⟨a,λ⟩) / ∏ₙ [Bλ]ₙ`.
//!
//! The Laplace transform of the slice volume is a sum of `N+1` such terms, one per
//! simplex vertex. Coordinate moments add `2N` terms with one repeated row each.
//! Everything here works on the vertex projections `p_i = V_sᵀ s_i`; rows are exact
//! differences of projections, held in double-double.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{orthonormalize_against, Matrix};
use crate::measurement::{MeasurementSystem, Perturbation};
use crate::numeric::{Dd, Wide};
use crate::rng::seeded;

/// Relative tolerance for treating two normalised rows as the same pole.
pub const ROW_EQ_TOL: f64 = 1e-9;
/// Entries below this fraction of a row's largest entry count as zero.
pub const ZERO_ENTRY_TOL: f64 = 1e-12;
/// Vertex projections closer than this (max-norm) collide.
pub const COLLISION_TOL: f64 = 1e-12;

/// Dense row-major double-double matrix.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DdMat {
    rows: usize,
    cols: usize,
    data: Vec<Dd>,
}

impl DdMat {
    pub fn new(rows: usize, cols: usize, data: Vec<Dd>) -> DdMat {
        assert_eq!(rows * cols, data.len());
        DdMat { rows, cols, data }
    }

    pub fn empty(cols: usize) -> DdMat {
        DdMat {
            rows: 0,
            cols,
            data: Vec::new(),
        }
    }

    pub fn from_f64_rows(rows: &[Vec<f64>]) -> DdMat {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut m = DdMat::empty(cols);
        for r in rows {
            assert_eq!(r.len(), cols);
            m.data.extend(r.iter().map(|&x| Dd::from_f64(x)));
            m.rows += 1;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Dd] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[Dd] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Dd {
        self.data[i * self.cols + j]
    }

    pub fn push_row(&mut self, row: &[Dd]) {
        assert_eq!(row.len(), self.cols);
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn to_f64_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x.to_f64()).collect())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoleStructure {
    /// All rows pairwise non-proportional.
    Simple,
    /// Exactly one pair of proportional rows (0-based row indices).
    DoublePole(usize, usize),
    /// Zero rows, several repeated pairs or higher multiplicities.
    Degenerate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpPolyTerm {
    pub a: Vec<Dd>,
    pub b: DdMat,
    pub coeff: Wide,
    pub pole_structure: PoleStructure,
}

impl ExpPolyTerm {
    pub fn new(a: Vec<Dd>, b: DdMat, coeff: Wide) -> ExpPolyTerm {
        assert_eq!(a.len(), b.cols());
        let pole_structure = classify_rows(&b);
        ExpPolyTerm {
            a,
            b,
            coeff,
            pole_structure,
        }
    }

    /// Remaining Laplace dimensions.
    pub fn dims(&self) -> usize {
        self.a.len()
    }

    pub fn a_f64(&self) -> Vec<f64> {
        self.a.iter().map(|x| x.to_f64()).collect()
    }

    /// Value of the term at a Laplace point `λ` (same length as `a`).
    pub fn eval_laplace(&self, lambda: &[f64]) -> f64 {
        let lin: f64 = self.a_f64().iter().zip(lambda).map(|(a, l)| a * l).sum();
        let mut denom = 1.0;
        for i in 0..self.b.rows() {
            denom *= self.b.row(i).iter().zip(lambda).map(|(b, l)| b.to_f64() * l).sum::<f64>();
        }
        self.coeff.to_f64() * (-lin).exp() / denom
    }
}

/// Vertex projections grouped by coincidence (max-norm distance ≤ [`COLLISION_TOL`]).
///
/// Coinciding projections turn the vertex sum into a confluent divided difference;
/// grouping lets the root expansion treat them as one node of higher multiplicity.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexGroups {
    points: Vec<Vec<f64>>,
    members: Vec<Vec<usize>>,
    group_of: Vec<usize>,
}

impl VertexGroups {
    /// Groups from vertex projections `p` (origin last); the first member of each
    /// group supplies its representative point.
    pub fn new(p: &[Vec<f64>]) -> VertexGroups {
        let mut g = VertexGroups {
            points: Vec::new(),
            members: Vec::new(),
            group_of: Vec::with_capacity(p.len()),
        };
        for (i, pi) in p.iter().enumerate() {
            let hit = g.points.iter().position(|q| max_dist(q, pi) <= COLLISION_TOL);
            match hit {
                Some(k) => {
                    g.members[k].push(i);
                    g.group_of.push(k);
                }
                None => {
                    g.points.push(pi.clone());
                    g.members.push(vec![i]);
                    g.group_of.push(g.points.len() - 1);
                }
            }
        }
        g
    }

    /// One group per vertex, even when projections coincide (the literal vertex sums).
    pub fn singletons(p: &[Vec<f64>]) -> VertexGroups {
        VertexGroups {
            points: p.to_vec(),
            members: (0..p.len()).map(|i| vec![i]).collect(),
            group_of: (0..p.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_vertices(&self) -> usize {
        self.group_of.len()
    }

    /// Laplace dimension (length of each projection).
    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    pub fn point(&self, g: usize) -> &[f64] {
        &self.points[g]
    }

    pub fn members(&self, g: usize) -> &[usize] {
        &self.members[g]
    }

    pub fn group_of(&self, vertex: usize) -> usize {
        self.group_of[vertex]
    }

    fn multiplicities(&self) -> Vec<u32> {
        self.members.iter().map(|m| m.len() as u32).collect()
    }

    /// Signed root keys whose inverse transforms sum to the slice volume.
    pub fn volume_roots(&self) -> Vec<(Wide, RootKey)> {
        divided_difference_roots(&self.multiplicities())
    }

    /// Signed root keys for the moment of coordinate `k` (0-based): the vertex sum
    /// with node `k` counted twice.
    pub fn moment_roots(&self, k: usize) -> Vec<(Wide, RootKey)> {
        let mut mult = self.multiplicities();
        mult[self.group_of[k]] += 1;
        divided_difference_roots(&mult)
    }

    /// Unit-coefficient term for `key`: shift `p_G`, rows `p_H − p_G` repeated `exps[H]` times.
    pub fn root_term(&self, key: &RootKey) -> ExpPolyTerm {
        let pg = &self.points[key.shift];
        let mut b = DdMat::empty(pg.len());
        for (h, &e) in key.exps.iter().enumerate() {
            if e == 0 {
                continue;
            }
            let row: Vec<Dd> = self.points[h]
                .iter()
                .zip(pg)
                .map(|(x, y)| exact_diff(*x, *y))
                .collect();
            for _ in 0..e {
                b.push_row(&row);
            }
        }
        let a = pg.iter().map(|&x| Dd::from_f64(x)).collect();
        ExpPolyTerm::new(a, b, Wide::ONE)
    }

    /// [`VertexGroups::root_term`] with the identity rows of the halfspace transform appended.
    pub fn halfspace_term(&self, key: &RootKey) -> ExpPolyTerm {
        let mut term = self.root_term(key);
        let m = self.dim();
        for j in 0..m {
            let row: Vec<Dd> = (0..m).map(|c| if c == j { Dd::ONE } else { Dd::ZERO }).collect();
            term.b.push_row(&row);
        }
        term.pole_structure = classify_rows(&term.b);
        term
    }

    /// Pairs of distinct vertices `(i, j)`, `i < j`, that share a group.
    pub fn colliding_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for m in &self.members {
            for (x, &i) in m.iter().enumerate() {
                for &j in &m[x + 1..] {
                    pairs.push((i, j));
                }
            }
        }
        pairs.sort_unstable();
        pairs
    }
}

fn max_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// A root term of the confluent vertex expansion: shift `p_shift` and row
/// `p_H − p_shift` repeated `exps[H]` times (`exps[shift] = 0`).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RootKey {
    pub shift: usize,
    pub exps: Vec<u32>,
}

/// Root expansion of `(−1)^{K−1} [z_1, …, z_K] e^{−z}` for nodes with multiplicities
/// `mult` (`K = Σ mult`), where `z_G = ⟨p_G, λ⟩`.
///
/// The residue at a node of multiplicity `m_G` is expanded with the Leibniz rule:
/// `q` derivatives on the other factors (distributed as `β`) and `d = m_G − 1 − q`
/// on the exponential. Coefficient: `(−1)^q ∏_H C(m_H+β_H−1, β_H) / d!`.
pub fn divided_difference_roots(mult: &[u32]) -> Vec<(Wide, RootKey)> {
    let mut out = Vec::new();
    for g in 0..mult.len() {
        let mg = mult[g];
        if mg == 0 {
            continue;
        }
        let others: Vec<usize> = (0..mult.len()).filter(|&h| h != g && mult[h] > 0).collect();
        for q in 0..mg {
            let d = mg - 1 - q;
            for_each_composition(q, others.len(), &mut |beta| {
                let mut coeff = crate::numeric::factorial(d).recip();
                if q % 2 == 1 {
                    coeff = -coeff;
                }
                let mut exps = vec![0; mult.len()];
                for (idx, &h) in others.iter().enumerate() {
                    let (mh, bh) = (mult[h], beta[idx]);
                    coeff = coeff * Wide::from_f64(crate::numeric::binomial(mh + bh - 1, bh));
                    exps[h] = mh + bh;
                }
                out.push((coeff, RootKey { shift: g, exps }));
            });
        }
    }
    out
}

/// Calls `f` with every composition of `q` into `parts` nonnegative parts,
/// in lexicographic order (largest first part first).
pub(crate) fn for_each_composition(q: u32, parts: usize, f: &mut impl FnMut(&[u32])) {
    fn rec(rem: u32, idx: usize, cur: &mut Vec<u32>, f: &mut impl FnMut(&[u32])) {
        if idx + 1 == cur.len() {
            cur[idx] = rem;
            f(cur);
            return;
        }
        for v in (0..=rem).rev() {
            cur[idx] = v;
            rec(rem - v, idx + 1, cur, f);
        }
    }
    if parts == 0 {
        if q == 0 {
            f(&[]);
        }
        return;
    }
    let mut cur = vec![0; parts];
    rec(q, 0, &mut cur, f);
}

/// Signed root terms whose inverse transform is the `k`-th coordinate moment.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentTermSet {
    pub k: usize,
    pub keys: Vec<RootKey>,
    pub terms: Vec<ExpPolyTerm>,
}

impl MomentTermSet {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

fn exact_diff(x: f64, y: f64) -> Dd {
    Dd::from_f64(x) - Dd::from_f64(y)
}

fn materialize(groups: &VertexGroups, roots: Vec<(Wide, RootKey)>) -> (Vec<RootKey>, Vec<ExpPolyTerm>) {
    roots
        .into_iter()
        .map(|(c, key)| {
            let mut term = groups.root_term(&key);
            term.coeff = c;
            (key, term)
        })
        .unzip()
}

/// Colliding vertex pairs as an error, for callers that refuse collisions.
pub fn check_configuration(sys: &MeasurementSystem) -> Result<()> {
    let pairs = VertexGroups::new(&sys.vertex_projections()).colliding_pairs();
    if pairs.is_empty() {
        Ok(())
    } else {
        Err(Error::DegenerateConfiguration { pairs })
    }
}

/// The `N+1` vertex terms, one per simplex vertex (origin last). Rows that vanish
/// because two projections coincide make the term [`PoleStructure::Degenerate`].
pub fn root_terms_volume(sys: &MeasurementSystem) -> Result<Vec<ExpPolyTerm>> {
    let groups = VertexGroups::singletons(&sys.vertex_projections());
    Ok(materialize(&groups, groups.volume_roots()).1)
}

/// Moment terms for coordinate `k`, 0-based: the volume term of vertex `k`, `N`
/// positive terms and `N` negative terms with one repeated row each.
pub fn root_terms_moment(sys: &MeasurementSystem, k: usize) -> Result<MomentTermSet> {
    if k >= sys.n() {
        return Err(Error::ShapeError(format!("coordinate {k} out of range for N = {}", sys.n())));
    }
    let groups = VertexGroups::singletons(&sys.vertex_projections());
    let (keys, terms) = materialize(&groups, groups.moment_roots(k));
    Ok(MomentTermSet { k, keys, terms })
}

/// Row scaled so that its first non-negligible entry is 1, or `None` for a zero row.
fn normalized_row(row: &[Dd]) -> Option<Vec<f64>> {
    let scale = row.iter().map(|x| x.to_f64().abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    let lead = row.iter().find(|x| x.to_f64().abs() > ZERO_ENTRY_TOL * scale)?;
    Some(row.iter().map(|x| (*x / *lead).to_f64()).collect())
}

pub(crate) fn rows_match(x: &[f64], y: &[f64]) -> bool {
    let scale = x
        .iter()
        .chain(y)
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    x.iter().zip(y).all(|(a, b)| (a - b).abs() <= ROW_EQ_TOL * scale)
}

pub fn classify_rows(b: &DdMat) -> PoleStructure {
    let mut normalized = Vec::with_capacity(b.rows());
    for i in 0..b.rows() {
        match normalized_row(b.row(i)) {
            Some(r) => normalized.push(r),
            None => return PoleStructure::Degenerate,
        }
    }
    let mut pair = None;
    for i in 0..normalized.len() {
        for j in i + 1..normalized.len() {
            if rows_match(&normalized[i], &normalized[j]) {
                if pair.is_some() {
                    return PoleStructure::Degenerate;
                }
                pair = Some((i, j));
            }
        }
    }
    match pair {
        None => PoleStructure::Simple,
        Some((i, j)) => PoleStructure::DoublePole(i, j),
    }
}

pub fn classify_poles(term: &ExpPolyTerm) -> PoleStructure {
    classify_rows(&term.b)
}

/// Seeded Gaussian perturbation of `V_s` followed by Gram-Schmidt; used to break
/// vertex-projection collisions.
pub fn perturb_basis(sys: &MeasurementSystem, epsilon: f64, seed: u64) -> MeasurementSystem {
    if epsilon <= 0.0 {
        return sys.clone();
    }
    let (n, m) = (sys.n(), sys.m());
    let mut rng = seeded(seed);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    for j in 0..m {
        let mut v: Vec<f64> = sys
            .v_s()
            .column(j)
            .iter()
            .map(|x| {
                let g: f64 = StandardNormal.sample(&mut rng);
                x + epsilon * g
            })
            .collect();
        orthonormalize_against(&mut v, &cols).expect("small perturbation keeps full rank");
        cols.push(v);
    }
    let v_s = Matrix::from_columns(&cols).expect("consistent columns");
    debug_assert_eq!(v_s.rows(), n);
    sys.with_basis(v_s, Perturbation { epsilon, seed })
}

/// Default perturbation scale `1e−7 · max |V_s|`.
pub fn default_perturbation(sys: &MeasurementSystem) -> f64 {
    1e-7 * sys.v_s().max_abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worked() -> MeasurementSystem {
        let a = Matrix::from_rows(&[vec![0.0, 0.0, 1.0], vec![0.5, 0.866, 0.0]]).unwrap();
        MeasurementSystem::decompose(&a).unwrap()
    }

    fn rows(b: &[Vec<f64>]) -> DdMat {
        DdMat::from_f64_rows(b)
    }

    #[test]
    fn worked_example_root_terms() {
        let sys = worked();
        let s = sys.sigma_s()[1];
        let terms = root_terms_volume(&sys).unwrap();
        assert_eq!(terms.len(), 4);
        let a1 = terms[0].a_f64();
        assert!(a1[0].abs() < 1e-15 && (a1[1] - 0.5 / s).abs() < 1e-12);
        assert_eq!(terms[2].a_f64(), vec![1.0, 0.0]);
        assert_eq!(terms[3].a_f64(), vec![0.0, 0.0]);
        let b4 = terms[3].b.to_f64_rows();
        let want = [[0.0, 0.5], [0.0, 0.866], [1.0, 0.0]];
        for (r, w) in b4.iter().zip(want) {
            assert!((r[0] - w[0]).abs() < 1e-3 && (r[1] - w[1]).abs() < 1e-3);
        }
        assert!(terms.iter().all(|t| t.coeff == Wide::ONE));
    }

    #[test]
    fn single_column_root_terms() {
        let v = Matrix::from_columns(&[vec![1.0, 0.0]]).unwrap();
        let sys = MeasurementSystem::from_orthonormal_basis(&v).unwrap();
        let terms = root_terms_volume(&sys).unwrap();
        let shifts: Vec<f64> = terms.iter().map(|t| t.a_f64()[0]).collect();
        assert_eq!(shifts, vec![1.0, 0.0, 0.0]);
        assert!(terms.iter().all(|t| t
            .b
            .to_f64_rows()
            .iter()
            .all(|r| r[0] == 1.0 || r[0] == -1.0 || r[0] == 0.0)));
    }

    #[test]
    fn collisions_are_reported() {
        let v = Matrix::from_columns(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let sys = MeasurementSystem::from_orthonormal_basis(&v).unwrap();
        match check_configuration(&sys) {
            Err(Error::DegenerateConfiguration { pairs }) => {
                assert_eq!(pairs, vec![(1, 2), (1, 3), (2, 3)]);
            }
            other => panic!("expected collision, got {other:?}"),
        }
        let terms = root_terms_volume(&sys).unwrap();
        assert_eq!(terms[1].pole_structure, PoleStructure::Degenerate);
        let groups = VertexGroups::new(&sys.vertex_projections());
        assert_eq!(groups.len(), 2);
        assert_eq!(groups.members(1), &[1, 2, 3]);
    }

    #[test]
    fn perturbation_resolves_collisions() {
        let v = Matrix::from_columns(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let sys = MeasurementSystem::from_orthonormal_basis(&v).unwrap();
        let eps = default_perturbation(&sys);
        let p = perturb_basis(&sys, eps, 11);
        p.validate().unwrap();
        assert!(check_configuration(&p).is_ok());
        assert_eq!(p.perturbation().unwrap().seed, 11);
        let q = perturb_basis(&sys, eps, 11);
        assert_eq!(p.v_s(), q.v_s());
        assert_eq!(perturb_basis(&sys, 0.0, 11).v_s(), sys.v_s());
    }

    #[test]
    fn moment_term_structure() {
        let sys = worked();
        let set = root_terms_moment(&sys, 2).unwrap();
        assert_eq!(set.len(), 7);
        let mut volume_like = 0;
        let mut negative = 0;
        for (key, term) in set.keys.iter().zip(&set.terms) {
            let rows = term.b.rows();
            if rows == 3 {
                // the volume term of vertex 3
                volume_like += 1;
                assert_eq!(key.shift, 2);
                assert_eq!(term.coeff, Wide::ONE);
                assert_eq!(term.pole_structure, PoleStructure::Simple);
                continue;
            }
            assert_eq!(rows, 4);
            // one repeated row, on the pair (vertex 3, shift vertex)
            let dup = key.exps.iter().position(|&e| e == 2).unwrap();
            assert!(key.shift == 2 || dup == 2);
            // rows along the first axis are proportional in this instance, so only
            // a non-simple structure is guaranteed
            assert_ne!(term.pole_structure, PoleStructure::Simple);
            if term.coeff.signum() < 0 {
                negative += 1;
                assert_eq!(key.shift, 2);
            }
        }
        assert_eq!(volume_like, 1);
        assert_eq!(negative, 3);
    }

    #[test]
    fn confluent_roots_reduce_to_vertex_sums() {
        // distinct nodes: one unit term per node
        let roots = divided_difference_roots(&[1, 1, 1]);
        assert_eq!(roots.len(), 3);
        assert!(roots.iter().all(|(c, k)| *c == Wide::ONE && k.exps.iter().sum::<u32>() == 2));
        // a triple node alone: single term with 1/2!
        let roots = divided_difference_roots(&[3]);
        assert_eq!(roots.len(), 1);
        assert_eq!(roots[0].0.to_f64(), 0.5);
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_rows(&rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])), PoleStructure::Simple);
        assert_eq!(
            classify_rows(&rows(&[vec![0.3, 0.4], vec![0.3, 0.4], vec![1.0, 0.0]])),
            PoleStructure::DoublePole(0, 1)
        );
        assert_eq!(
            classify_rows(&rows(&[vec![1.0, 2.0], vec![2.0, 4.0]])),
            PoleStructure::DoublePole(0, 1)
        );
        assert_eq!(
            classify_rows(&rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]])),
            PoleStructure::Degenerate
        );
        assert_eq!(
            classify_rows(&rows(&[vec![0.0, 0.0], vec![1.0, 0.0]])),
            PoleStructure::Degenerate
        );
    }
}
