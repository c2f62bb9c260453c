//! Inverse Laplace recursion over the measurement coordinates.
//!
//! One step inverts the transform in the first remaining variable `λ₁`. Writing each
//! row as `B_{r,1}(λ₁ + ⟨c_r, λ'⟩)`, the poles in `λ₁` sit at `−⟨c_r, λ'⟩`; rows with
//! equal `c_r` form a pole of higher order. The residue at every pole is again an
//! exp-over-poly term in `λ'`, multiplied by a power of `τ = t₁ − a₁` and by the step
//! `1_+(τ)`. Rows with `B_{r,1} = 0` do not depend on `λ₁` and are copied into every
//! child unchanged.
//!
//! [`expand_rows`] computes the `t`-independent part of a step (children's rows,
//! directions, constant factors); it is shared with the network compiler.

use crate::error::{Error, Result};
use std::collections::HashMap;

use crate::exp_poly::{
    for_each_composition, DdMat, ExpPolyTerm, RootKey, VertexGroups, ROW_EQ_TOL, ZERO_ENTRY_TOL,
};
use crate::measurement::MeasurementSystem;
use crate::numeric::{binomial, factorial, Dd, Wide};

/// Half-width of the band around a threshold where the step returns 1/2.
pub const BOUNDARY_TOL: f64 = 1e-12;
/// Absolute floor on the scale used when grouping pole directions.
const GROUP_SCALE_FLOOR: f64 = 1e-4;

/// One residue contribution: `factor · τ^degree · exp(−τ⟨direction, λ'⟩) / ∏ rows·λ'`.
/// The `1/degree!` is part of `factor`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChildSpec {
    pub direction: Vec<Dd>,
    pub rows: DdMat,
    pub factor: Wide,
    pub degree: u32,
}

/// The `t`-independent part of one recursion step.
#[derive(Clone, Debug, PartialEq)]
pub struct Expansion {
    /// `1 / ∏ B_{r,1}` over the rows that depend on `λ₁`.
    pub inv_p: Wide,
    pub children: Vec<ChildSpec>,
}

struct Group {
    c: Vec<Dd>,
    c_f64: Vec<f64>,
    mult: u32,
}

fn diff_row(x: &[Dd], y: &[Dd]) -> Vec<Dd> {
    x.iter().zip(y).map(|(a, b)| *a - *b).collect()
}

/// Expand the rows `b` (at least two columns) in their first column. `layer` is only
/// used for error reporting.
pub fn expand_rows(b: &DdMat, layer: usize) -> Result<Expansion> {
    let m = b.cols();
    assert!(m >= 2, "expansion needs at least two Laplace dimensions");
    let mut carried = DdMat::empty(m - 1);
    let mut p = Wide::ONE;
    let mut groups: Vec<Group> = Vec::new();
    for i in 0..b.rows() {
        let row = b.row(i);
        let scale = row.iter().map(|x| x.hi.abs()).fold(0.0, f64::max);
        let b1 = row[0];
        if b1.hi.abs() <= ZERO_ENTRY_TOL * scale || scale == 0.0 {
            carried.push_row(&row[1..]);
            continue;
        }
        p = p * Wide::from_dd(b1);
        let c: Vec<Dd> = row[1..].iter().map(|x| *x / b1).collect();
        let c_f64: Vec<f64> = c.iter().map(|x| x.to_f64()).collect();
        let found = groups.iter_mut().find(|g| {
            let scale = c_f64
                .iter()
                .chain(&g.c_f64)
                .map(|v| v.abs())
                .fold(GROUP_SCALE_FLOOR, f64::max);
            c_f64
                .iter()
                .zip(&g.c_f64)
                .all(|(x, y)| (x - y).abs() <= ROW_EQ_TOL * scale)
        });
        match found {
            Some(g) => g.mult += 1,
            None => groups.push(Group { c, c_f64, mult: 1 }),
        }
    }
    if groups.is_empty() {
        return Err(Error::UnhandledPoleOrder {
            layer,
            detail: "no denominator row depends on this coordinate".into(),
        });
    }

    let mut children = Vec::new();
    let with_carried = |mut rows: DdMat| {
        for i in 0..carried.rows() {
            rows.push_row(carried.row(i));
        }
        rows
    };

    let doubles: Vec<usize> = (0..groups.len()).filter(|&g| groups[g].mult == 2).collect();
    let exactly_one_double =
        doubles.len() == 1 && groups.iter().all(|g| g.mult <= 2) && groups.len() >= 2;

    if exactly_one_double {
        // Double pole at group `d`, simple poles elsewhere: one ReLU child plus
        // a pair of step children per simple pole.
        let d = doubles[0];
        let c1 = &groups[d].c;
        let simple: Vec<usize> = (0..groups.len()).filter(|&g| g != d).collect();
        let mut relu_rows = DdMat::empty(m - 1);
        for &j in &simple {
            relu_rows.push_row(&diff_row(&groups[j].c, c1));
        }
        children.push(ChildSpec {
            direction: c1.clone(),
            rows: with_carried(relu_rows),
            factor: Wide::ONE,
            degree: 1,
        });
        for &j in &simple {
            let cj = &groups[j].c;
            let mut rows = DdMat::empty(m - 1);
            let r1 = diff_row(c1, cj);
            rows.push_row(&r1);
            rows.push_row(&r1);
            for &k in &simple {
                if k != j {
                    rows.push_row(&diff_row(&groups[k].c, cj));
                }
            }
            let rows = with_carried(rows);
            children.push(ChildSpec {
                direction: cj.clone(),
                rows: rows.clone(),
                factor: Wide::ONE,
                degree: 0,
            });
            children.push(ChildSpec {
                direction: c1.clone(),
                rows,
                factor: -Wide::ONE,
                degree: 0,
            });
        }
    } else {
        // Residue of a pole of order m_G via the Leibniz rule.
        for g in 0..groups.len() {
            let others: Vec<usize> = (0..groups.len()).filter(|&h| h != g).collect();
            let diffs: Vec<Vec<Dd>> = others
                .iter()
                .map(|&h| diff_row(&groups[h].c, &groups[g].c))
                .collect();
            let mg = groups[g].mult;
            for q in 0..mg {
                let degree = mg - 1 - q;
                for_each_composition(q, others.len(), &mut |beta| {
                    let mut factor = factorial(degree).recip();
                    let mut rows = DdMat::empty(m - 1);
                    for (idx, &h) in others.iter().enumerate() {
                        let mh = groups[h].mult;
                        let bh = beta[idx];
                        let mut w = binomial(mh + bh - 1, bh);
                        if bh % 2 == 1 {
                            w = -w;
                        }
                        factor = factor * Wide::from_f64(w);
                        for _ in 0..mh + bh {
                            rows.push_row(&diffs[idx]);
                        }
                    }
                    children.push(ChildSpec {
                        direction: groups[g].c.clone(),
                        rows: with_carried(rows),
                        factor,
                        degree,
                    });
                });
            }
        }
    }
    Ok(Expansion {
        inv_p: p.recip(),
        children,
    })
}

pub fn expand_term(term: &ExpPolyTerm) -> Result<Expansion> {
    expand_rows(&term.b, 1)
}

/// `act_d(τ)`: the step (half value on the boundary band) for `d = 0`, `τ_+^d` otherwise.
#[inline]
pub fn activation(degree: u32, tau: Dd) -> Dd {
    if degree == 0 {
        if tau.hi > BOUNDARY_TOL {
            Dd::ONE
        } else if tau.hi >= -BOUNDARY_TOL {
            Dd::from_f64(0.5)
        } else {
            Dd::ZERO
        }
    } else if tau.hi <= 0.0 {
        Dd::ZERO
    } else {
        tau.powi(degree)
    }
}

/// The inversion closed on the left: `−τ^d·H(−τ)`, so that `act_d(τ) − reflected = τ^d`.
#[inline]
pub fn reflected_activation(degree: u32, tau: Dd) -> Dd {
    let v = activation(degree, -tau);
    if degree % 2 == 0 {
        -v
    } else {
        v
    }
}

/// Which way each layer's one-dimensional inversion is closed; bit `ℓ−1` set means left.
///
/// The transforms of the volume and of the moments are entire, so for every layer the
/// sum over all nodes is the same on either side. Only the rounding differs: close to
/// the top of a coordinate's range the right side is a difference of large terms while
/// the left side has few, small ones.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Sides(pub u32);

impl Sides {
    pub const RIGHT: Sides = Sides(0);

    pub fn is_left(self, layer: usize) -> bool {
        (self.0 >> (layer - 1)) & 1 == 1
    }

    pub fn act(self, layer: usize, degree: u32, tau: Dd) -> Dd {
        if self.is_left(layer) {
            reflected_activation(degree, tau)
        } else {
            activation(degree, tau)
        }
    }

    /// Every branch at this layer vanishes.
    pub fn prunes(self, layer: usize, tau: Dd) -> bool {
        if self.is_left(layer) {
            tau.hi > BOUNDARY_TOL
        } else {
            tau.hi < -BOUNDARY_TOL
        }
    }
}

/// Child shift `a_{2:} + τ c`.
fn child_shift(a: &[Dd], tau: Dd, direction: &[Dd]) -> Vec<Dd> {
    a[1..]
        .iter()
        .zip(direction)
        .map(|(x, c)| *x + tau * *c)
        .collect()
}

/// Children of `term` at `t_cur` together with their activation degree; the
/// coefficients exclude the activation factor and are produced even when the branch
/// is inactive.
pub fn expand_at(term: &ExpPolyTerm, t_cur: f64) -> Result<Vec<(ExpPolyTerm, u32)>> {
    let exp = expand_term(term)?;
    let tau = Dd::from_f64(t_cur) - term.a[0];
    Ok(exp
        .children
        .into_iter()
        .map(|ch| {
            let a = child_shift(&term.a, tau, &ch.direction);
            let coeff = term.coeff * exp.inv_p * ch.factor;
            (ExpPolyTerm::new(a, ch.rows, coeff), ch.degree)
        })
        .collect())
}

/// One recursion step at `t_cur`. Inactive branches (`t_cur < a₁`) yield no children.
pub fn ilt_step(term: &ExpPolyTerm, t_cur: f64) -> Result<Vec<ExpPolyTerm>> {
    if term.dims() < 2 {
        return Err(Error::ShapeError("ilt_step needs two or more Laplace dimensions".into()));
    }
    let tau = Dd::from_f64(t_cur) - term.a[0];
    if tau.hi < -BOUNDARY_TOL {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (mut child, degree) in expand_at(term, t_cur)? {
        let w = activation(degree, tau);
        if w.is_zero() {
            continue;
        }
        child.coeff = child.coeff * Wide::from_dd(w);
        out.push(child);
    }
    Ok(out)
}

fn terminal_value(a1: Dd, b: &DdMat, coeff: Wide, t_last: Dd, sides: Sides, layer: usize) -> Result<Wide> {
    debug_assert_eq!(b.cols(), 1);
    let r = b.rows();
    if r == 0 {
        return Err(Error::UnhandledPoleOrder {
            layer: 0,
            detail: "terminal term without denominator rows".into(),
        });
    }
    let mut prod = Wide::ONE;
    for i in 0..r {
        let x = b.get(i, 0);
        if x.is_zero() {
            return Err(Error::ZeroColumnEntry);
        }
        prod = prod * Wide::from_dd(x);
    }
    let tau = t_last - a1;
    let deg = (r - 1) as u32;
    let act = sides.act(layer, deg, tau);
    if act.is_zero() {
        return Ok(Wide::ZERO);
    }
    Ok(coeff * Wide::from_dd(act) / (factorial(deg) * prod))
}

/// `(t − a₁)_+^{r−1} / ((r−1)! ∏ B_{n,1})`, scaled by the term coefficient.
pub fn terminal_eval(term: &ExpPolyTerm, t_last: f64) -> Result<Wide> {
    if term.dims() != 1 {
        return Err(Error::ShapeError("terminal_eval needs exactly one Laplace dimension".into()));
    }
    terminal_value(term.a[0], &term.b, term.coeff, Dd::from_f64(t_last), Sides::RIGHT, 1)
}

/// Full recursion of one term at the coordinates `t` (length = term dimension).
/// Returns the value and the sum of the absolute leaf contributions.
fn eval_rec(a: &[Dd], b: &DdMat, coeff: Wide, t: &[Dd], layer: usize, sides: Sides) -> Result<(Wide, Wide)> {
    if a.len() == 1 {
        let v = terminal_value(a[0], b, coeff, t[0], sides, layer).map_err(|e| relabel(e, layer))?;
        return Ok((v, v.abs()));
    }
    let tau = t[0] - a[0];
    if sides.prunes(layer, tau) {
        return Ok((Wide::ZERO, Wide::ZERO));
    }
    let exp = expand_rows(b, layer)?;
    let base = coeff * exp.inv_p;
    let mut acc = Wide::ZERO;
    let mut mass = Wide::ZERO;
    for ch in &exp.children {
        let w = sides.act(layer, ch.degree, tau);
        if w.is_zero() {
            continue;
        }
        let shift = child_shift(a, tau, &ch.direction);
        let c = base * ch.factor * Wide::from_dd(w);
        let (v, m) = eval_rec(&shift, &ch.rows, c, &t[1..], layer + 1, sides)?;
        acc += v;
        mass += m;
    }
    Ok((acc, mass))
}

fn relabel(e: Error, layer: usize) -> Error {
    match e {
        Error::UnhandledPoleOrder { detail, .. } => Error::UnhandledPoleOrder { layer, detail },
        other => other,
    }
}

/// Inverse transform of a single term at `t`.
pub fn evaluate_term(term: &ExpPolyTerm, t: &[f64]) -> Result<Wide> {
    evaluate_term_mass(term, t, Sides::RIGHT).map(|(v, _)| v)
}

fn evaluate_term_mass(term: &ExpPolyTerm, t: &[f64], sides: Sides) -> Result<(Wide, Wide)> {
    if t.len() != term.dims() {
        return Err(Error::ShapeError(format!(
            "t has {} entries, term has {} dimensions",
            t.len(),
            term.dims()
        )));
    }
    let td: Vec<Dd> = t.iter().map(|&x| Dd::from_f64(x)).collect();
    eval_rec(&term.a, &term.b, term.coeff, &td, 1, sides)
}

/// Unclamped volume and moments, before any health policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub volume: Wide,
    pub moments: Vec<Wide>,
    /// Largest sum of absolute leaf contributions over the volume and moment sums.
    /// Rounding error in any output is a small multiple of `mass · 2^−104`.
    pub mass: Wide,
}

impl Evaluation {
    /// Bound on the absolute error of `μ / vol` from cancellation in the sums.
    pub fn centroid_error_bound(&self) -> f64 {
        if self.volume.signum() <= 0 {
            return f64::INFINITY;
        }
        (self.mass * Wide::from_f64(2.0 * CANCELLATION_EPS) / self.volume).to_f64()
    }
}

/// Unit roundoff of the double-double sums with a safety factor of 2^4.
pub const CANCELLATION_EPS: f64 = 1.0 / (1u128 << 100) as f64;

fn check_t(p: &[Vec<f64>], t: &[f64]) -> Result<()> {
    let m = p.first().map_or(0, |v| v.len());
    if t.len() != m {
        return Err(Error::ShapeError(format!("t has {} entries, expected {m}", t.len())));
    }
    if t.iter().any(|x| !x.is_finite()) {
        return Err(Error::ShapeError("t contains non-finite entries".into()));
    }
    Ok(())
}

/// Per-coordinate range `[min, max]` of the vertex projections. Outside it the slice
/// is empty, and returning an exact zero avoids summing pure cancellation noise.
pub fn image_box(p: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let m = p.first().map_or(0, |v| v.len());
    (0..m)
        .map(|j| {
            p.iter()
                .fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], v| [lo.min(v[j]), hi.max(v[j])])
        })
        .collect()
}

pub fn outside_box(bx: &[[f64; 2]], t: &[f64]) -> bool {
    bx.iter().zip(t).any(|([lo, hi], x)| x < lo || x > hi)
}

fn zero_evaluation(n: usize) -> Evaluation {
    Evaluation {
        volume: Wide::ZERO,
        moments: vec![Wide::ZERO; n],
        mass: Wide::ZERO,
    }
}

/// Inverts each distinct root term once and combines the signed sums.
struct RootCache<'a> {
    groups: &'a VertexGroups,
    t: &'a [f64],
    sides: Sides,
    values: HashMap<RootKey, (Wide, Wide)>,
}

impl<'a> RootCache<'a> {
    fn new(groups: &'a VertexGroups, t: &'a [f64], sides: Sides) -> Self {
        RootCache {
            groups,
            t,
            sides,
            values: HashMap::new(),
        }
    }

    fn sum(&mut self, roots: &[(Wide, RootKey)]) -> Result<Wide> {
        self.sum_mass(roots).map(|(v, _)| v)
    }

    fn sum_mass(&mut self, roots: &[(Wide, RootKey)]) -> Result<(Wide, Wide)> {
        let mut acc = Wide::ZERO;
        let mut mass = Wide::ZERO;
        for (c, key) in roots {
            let (v, m) = match self.values.get(key) {
                Some(v) => *v,
                None => {
                    let v = evaluate_term_mass(&self.groups.root_term(key), self.t, self.sides)?;
                    self.values.insert(key.clone(), v);
                    v
                }
            };
            acc += *c * v;
            mass += c.abs() * m;
        }
        Ok((acc, mass))
    }
}

/// Volume from raw vertex projections (origin last).
pub fn volume_from_projections(p: &[Vec<f64>], t: &[f64]) -> Result<Wide> {
    check_t(p, t)?;
    if outside_box(&image_box(p), t) {
        return Ok(Wide::ZERO);
    }
    let groups = VertexGroups::new(p);
    RootCache::new(&groups, t, Sides::RIGHT).sum(&groups.volume_roots())
}

/// Volume and all coordinate moments from raw vertex projections (origin last).
/// Each distinct root term is inverted once and shared between the sums using it.
pub fn evaluate_projections(p: &[Vec<f64>], t: &[f64]) -> Result<Evaluation> {
    evaluate_projections_on(p, t, Sides::RIGHT)
}

pub fn evaluate_projections_on(p: &[Vec<f64>], t: &[f64], sides: Sides) -> Result<Evaluation> {
    check_t(p, t)?;
    if outside_box(&image_box(p), t) {
        return Ok(zero_evaluation(p.len() - 1));
    }
    let groups = VertexGroups::new(p);
    let mut cache = RootCache::new(&groups, t, sides);
    let (volume, mut mass) = cache.sum_mass(&groups.volume_roots())?;
    let mut moments = Vec::with_capacity(p.len() - 1);
    for k in 0..p.len() - 1 {
        let (v, m) = cache.sum_mass(&groups.moment_roots(k))?;
        moments.push(v);
        if m > mass {
            mass = m;
        }
    }
    Ok(Evaluation { volume, moments, mass })
}

pub fn evaluate_all(sys: &MeasurementSystem, t: &[f64]) -> Result<Evaluation> {
    evaluate_projections(&sys.vertex_projections(), t)
}

/// `vol(P_t)`, with rounding-level negatives clamped to zero.
pub fn evaluate_volume(sys: &MeasurementSystem, t: &[f64]) -> Result<f64> {
    let v = volume_from_projections(&sys.vertex_projections(), t)?;
    Ok(v.to_f64().max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentValue {
    pub value: f64,
    /// Clamping into `[0, vol]` moved the value by more than `1e−8·vol`.
    pub clamped: bool,
}

pub(crate) fn clamp_moment(mu: f64, vol: f64) -> MomentValue {
    let value = mu.clamp(0.0, vol.max(0.0));
    let clamped = (value - mu).abs() > 1e-8 * vol.abs();
    MomentValue { value, clamped }
}

/// `μ_k(t) = ∫_{P_t} x_k`, for 0-based coordinate `k`.
pub fn evaluate_moment(sys: &MeasurementSystem, t: &[f64], k: usize) -> Result<MomentValue> {
    let p = sys.vertex_projections();
    check_t(&p, t)?;
    if k >= sys.n() {
        return Err(Error::ShapeError(format!("coordinate {k} out of range for N = {}", sys.n())));
    }
    if outside_box(&image_box(&p), t) {
        return Ok(MomentValue {
            value: 0.0,
            clamped: false,
        });
    }
    let groups = VertexGroups::new(&p);
    let mut cache = RootCache::new(&groups, t, Sides::RIGHT);
    let vol = cache.sum(&groups.volume_roots())?;
    let mu = cache.sum(&groups.moment_roots(k))?;
    Ok(clamp_moment(mu.to_f64(), vol.to_f64().max(0.0)))
}

/// Volume of `Δ ∩ {V_sᵀx ≤ t}`.
pub fn evaluate_volume_halfspace(sys: &MeasurementSystem, t: &[f64]) -> Result<f64> {
    let p = sys.vertex_projections();
    check_t(&p, t)?;
    let groups = VertexGroups::new(&p);
    let mut acc = Wide::ZERO;
    for (c, key) in groups.volume_roots() {
        acc += c * evaluate_term(&groups.halfspace_term(&key), t)?;
    }
    Ok(acc.to_f64().max(0.0))
}
