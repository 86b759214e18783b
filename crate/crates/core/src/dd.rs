//! Double description: exact conversion between the two descriptions of a
//! polyhedral cone — intersection of homogeneous halfspaces vs. lineality
//! space plus extreme rays.
//!
//! The lineality space is tracked explicitly: processing starts from the full
//! space (pure lineality, no rays) and each halfspace either cuts the
//! lineality down by one dimension or splits the ray set. Adjacency of rays
//! is decided algebraically: two rays are adjacent iff the normals of the
//! already-processed rows active at both have rank `dim − dim lin − 2`.
//!
//! Everything here is independent of the simplex solver on purpose — cone
//! membership answered through these representations cross-checks LP-based
//! answers rather than restating them.

use crate::linalg;
use crate::rational::{primitive_integer_form, Rational};
use num_traits::{Signed, Zero};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Halfspace {
    /// Constraint reads `normal · x <= 0`, or `= 0` when `equality` is set.
    pub normal: Vec<Rational>,
    pub equality: bool,
}

impl Halfspace {
    pub fn ineq(normal: Vec<Rational>) -> Self {
        Halfspace {
            normal,
            equality: false,
        }
    }

    pub fn equation(normal: Vec<Rational>) -> Self {
        Halfspace {
            normal,
            equality: true,
        }
    }

    pub fn admits(&self, x: &[Rational]) -> bool {
        let v = crate::rational::dot(&self.normal, x);
        if self.equality {
            v.is_zero()
        } else {
            !v.is_positive()
        }
    }
}

/// Canonical cone: `span(lin) + cone(rays)`, lineality basis in reduced row
/// echelon form, rays in primitive integer form sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DdCone {
    pub dim: usize,
    pub lin: Vec<Vec<Rational>>,
    pub rays: Vec<Vec<Rational>>,
}

#[derive(Debug, thiserror::Error)]
pub enum DdError {
    #[error("double description ray budget exceeded ({count} rays in dimension {dim})")]
    Budget { count: usize, dim: usize },
}

/// Intermediate ray counts beyond this abort the conversion; ambient-space
/// callers catch the error and refuse politely instead of thrashing.
const RAY_BUDGET: usize = 100_000;

#[derive(Clone)]
struct ActiveSet(Vec<u64>);

impl ActiveSet {
    fn new(bits: usize) -> Self {
        ActiveSet(vec![0; bits.div_ceil(64)])
    }

    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn intersect(&self, other: &ActiveSet) -> ActiveSet {
        ActiveSet(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a & b)
                .collect(),
        )
    }

    fn ones(&self, limit: usize) -> impl Iterator<Item = usize> + '_ {
        (0..limit).filter(|i| self.0[i / 64] >> (i % 64) & 1 == 1)
    }

    fn count_ones(&self, limit: usize) -> usize {
        self.ones(limit).count()
    }
}

struct Ray {
    v: Vec<Rational>,
    active: ActiveSet,
}

struct Worker {
    dim: usize,
    lin: Vec<Vec<Rational>>,
    rays: Vec<Ray>,
    processed: Vec<Vec<Rational>>,
    total_rows: usize,
}

impl Worker {
    fn new(dim: usize, total_rows: usize) -> Self {
        let lin = (0..dim)
            .map(|i| {
                let mut v = vec![Rational::zero(); dim];
                v[i] = Rational::from_integer(1.into());
                v
            })
            .collect();
        Worker {
            dim,
            lin,
            rays: Vec::new(),
            processed: Vec::new(),
            total_rows,
        }
    }

    fn process(&mut self, h: &Halfspace) -> Result<(), DdError> {
        let idx = self.processed.len();
        let cut = self
            .lin
            .iter()
            .position(|v| !crate::rational::dot(&h.normal, v).is_zero());

        if let Some(i) = cut {
            let mut v0 = self.lin.remove(i);
            let mut hv0 = crate::rational::dot(&h.normal, &v0);
            if hv0.is_positive() {
                v0 = crate::rational::neg_vec(&v0);
                hv0 = -hv0;
            }
            for v in self.lin.iter_mut() {
                let hv = crate::rational::dot(&h.normal, v);
                if !hv.is_zero() {
                    let f = &hv / &hv0;
                    for (x, y) in v.iter_mut().zip(&v0) {
                        *x = &*x - &(&f * y);
                    }
                }
            }
            for r in self.rays.iter_mut() {
                let hr = crate::rational::dot(&h.normal, &r.v);
                if !hr.is_zero() {
                    let f = &hr / &hv0;
                    for (x, y) in r.v.iter_mut().zip(&v0) {
                        *x = &*x - &(&f * y);
                    }
                    r.v = primitive_integer_form(&r.v);
                }
                r.active.set(idx);
            }
            if !h.equality {
                let mut active = ActiveSet::new(self.total_rows);
                for b in 0..idx {
                    active.set(b);
                }
                self.rays.push(Ray {
                    v: primitive_integer_form(&v0),
                    active,
                });
            }
        } else {
            let vals: Vec<Rational> = self
                .rays
                .iter()
                .map(|r| crate::rational::dot(&h.normal, &r.v))
                .collect();
            let mut sat = Vec::new(); // strictly inside
            let mut vio = Vec::new(); // strictly outside
            for (k, v) in vals.iter().enumerate() {
                if v.is_negative() {
                    sat.push(k);
                } else if v.is_positive() {
                    vio.push(k);
                }
            }

            let quotient_dim = self.dim - self.lin.len();
            let mut combos: Vec<Ray> = Vec::new();
            if quotient_dim >= 2 {
                let need = quotient_dim - 2;
                for &s in &sat {
                    for &v in &vio {
                        let both = self.rays[s].active.intersect(&self.rays[v].active);
                        if both.count_ones(idx) < need {
                            continue;
                        }
                        let normals: Vec<Vec<Rational>> = both
                            .ones(idx)
                            .map(|b| self.processed[b].clone())
                            .collect();
                        if linalg::rank(&normals) != need {
                            continue;
                        }
                        let hs = &vals[s];
                        let hv = &vals[v];
                        let w: Vec<Rational> = self.rays[s]
                            .v
                            .iter()
                            .zip(&self.rays[v].v)
                            .map(|(a, b)| hv * a - hs * b)
                            .collect();
                        if crate::rational::is_zero_vec(&w) {
                            continue;
                        }
                        let mut active = both;
                        active.set(idx);
                        combos.push(Ray {
                            v: primitive_integer_form(&w),
                            active,
                        });
                    }
                }
            }

            let keep_strict_inside = !h.equality;
            let mut kept = Vec::new();
            for (k, r) in self.rays.drain(..).enumerate() {
                let mut r = r;
                if vals[k].is_zero() {
                    r.active.set(idx);
                    kept.push(r);
                } else if vals[k].is_negative() && keep_strict_inside {
                    kept.push(r);
                }
            }
            kept.extend(combos);
            self.rays = kept;
        }

        self.processed.push(h.normal.clone());
        if self.rays.len() > RAY_BUDGET {
            return Err(DdError::Budget {
                count: self.rays.len(),
                dim: self.dim,
            });
        }
        Ok(())
    }

    fn finish(self) -> DdCone {
        let mut lin = self.lin;
        linalg::rref(&mut lin);
        let mut rays: Vec<Vec<Rational>> = self.rays.into_iter().map(|r| r.v).collect();
        rays.sort();
        rays.dedup();
        DdCone {
            dim: self.dim,
            lin,
            rays,
        }
    }
}

impl DdCone {
    pub fn full_space(dim: usize) -> Self {
        Worker::new(dim, 0).finish()
    }

    pub fn zero(dim: usize) -> Self {
        DdCone {
            dim,
            lin: Vec::new(),
            rays: Vec::new(),
        }
    }

    pub fn from_halfspaces(dim: usize, rows: &[Halfspace]) -> Result<Self, DdError> {
        let rows: Vec<&Halfspace> = rows
            .iter()
            .filter(|h| !crate::rational::is_zero_vec(&h.normal))
            .collect();
        let mut w = Worker::new(dim, rows.len());
        for h in rows {
            debug_assert_eq!(h.normal.len(), dim);
            w.process(h)?;
        }
        Ok(w.finish())
    }

    /// Canonical form of the cone generated by arbitrary rays and lineality
    /// vectors (two conversion passes; redundancy is eliminated).
    pub fn from_generators(
        dim: usize,
        rays: &[Vec<Rational>],
        lin: &[Vec<Rational>],
    ) -> Result<Self, DdError> {
        let rows: Vec<Halfspace> = rays
            .iter()
            .map(|r| Halfspace::ineq(r.clone()))
            .chain(lin.iter().map(|l| Halfspace::equation(l.clone())))
            .collect();
        DdCone::from_halfspaces(dim, &rows)?.polar()
    }

    /// `{y : y·x <= 0 for all x in the cone}`.
    pub fn polar(&self) -> Result<Self, DdError> {
        let rows: Vec<Halfspace> = self
            .rays
            .iter()
            .map(|r| Halfspace::ineq(r.clone()))
            .chain(self.lin.iter().map(|l| Halfspace::equation(l.clone())))
            .collect();
        DdCone::from_halfspaces(self.dim, &rows)
    }

    /// Halfspace description recovered through the polar.
    pub fn halfspaces(&self) -> Result<Vec<Halfspace>, DdError> {
        let p = self.polar()?;
        Ok(p.rays
            .into_iter()
            .map(Halfspace::ineq)
            .chain(p.lin.into_iter().map(Halfspace::equation))
            .collect())
    }

    pub fn contains(&self, x: &[Rational]) -> Result<bool, DdError> {
        Ok(self.halfspaces()?.iter().all(|h| h.admits(x)))
    }

    pub fn intersect(&self, other: &DdCone) -> Result<Self, DdError> {
        debug_assert_eq!(self.dim, other.dim);
        let mut rows = self.halfspaces()?;
        rows.extend(other.halfspaces()?);
        DdCone::from_halfspaces(self.dim, &rows)
    }

    pub fn minkowski_sum(&self, other: &DdCone) -> Result<Self, DdError> {
        debug_assert_eq!(self.dim, other.dim);
        let rays: Vec<Vec<Rational>> = self.rays.iter().chain(&other.rays).cloned().collect();
        let lin: Vec<Vec<Rational>> = self.lin.iter().chain(&other.lin).cloned().collect();
        DdCone::from_generators(self.dim, &rays, &lin)
    }

    /// Image of the cone under dropping the last coordinate.
    pub fn project_drop_last(&self) -> Result<Self, DdError> {
        assert!(self.dim >= 1);
        let drop = |v: &Vec<Rational>| v[..self.dim - 1].to_vec();
        let rays: Vec<Vec<Rational>> = self.rays.iter().map(drop).collect();
        let lin: Vec<Vec<Rational>> = self.lin.iter().map(drop).collect();
        DdCone::from_generators(self.dim - 1, &rays, &lin)
    }

    pub fn is_zero(&self) -> bool {
        self.lin.is_empty() && self.rays.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.lin.len() == self.dim
    }

    /// The cone is a vector space iff it has no proper rays.
    pub fn is_subspace(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn lineality_dim(&self) -> usize {
        self.lin.len()
    }

    /// Basis of the linear span of the cone.
    pub fn span(&self) -> Vec<Vec<Rational>> {
        let gens: Vec<Vec<Rational>> = self.lin.iter().chain(&self.rays).cloned().collect();
        linalg::span_basis(&gens, self.dim)
    }

    /// Equality rows pinning the linear span of the cone.
    pub fn span_halfspaces(&self) -> Vec<Halfspace> {
        linalg::orthogonal_complement(&self.span(), self.dim)
            .into_iter()
            .map(Halfspace::equation)
            .collect()
    }

    /// All generators (rays plus a lineality basis and its negation).
    pub fn generators(&self) -> Vec<Vec<Rational>> {
        let mut g = self.rays.clone();
        for l in &self.lin {
            g.push(l.clone());
            g.push(crate::rational::neg_vec(l));
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{q, qr};

    fn v2(a: i64, b: i64) -> Vec<Rational> {
        vec![q(a), q(b)]
    }

    fn v3(a: i64, b: i64, c: i64) -> Vec<Rational> {
        vec![q(a), q(b), q(c)]
    }

    #[test]
    fn orthant_and_its_polar() {
        // x >= 0 in R^3
        let rows: Vec<Halfspace> = (0..3)
            .map(|i| {
                let mut n = v3(0, 0, 0);
                n[i] = q(-1);
                Halfspace::ineq(n)
            })
            .collect();
        let c = DdCone::from_halfspaces(3, &rows).unwrap();
        assert!(c.lin.is_empty());
        assert_eq!(c.rays, vec![v3(0, 0, 1), v3(0, 1, 0), v3(1, 0, 0)]);
        let p = c.polar().unwrap();
        assert!(p.lin.is_empty());
        assert_eq!(p.rays, vec![v3(-1, 0, 0), v3(0, -1, 0), v3(0, 0, -1)]);
    }

    #[test]
    fn two_asset_trading_cone_drops_dominated_generators() {
        // generators: exchange legs (1,-2) and (-10,1) plus free disposal
        let c = DdCone::from_generators(
            2,
            &[v2(1, -2), v2(-10, 1), v2(-1, 0), v2(0, -1)],
            &[],
        )
        .unwrap();
        assert!(c.lin.is_empty());
        assert_eq!(c.rays, vec![v2(-10, 1), v2(1, -2)]);
        let p = c.polar().unwrap();
        assert_eq!(p.rays, vec![v2(1, 10), v2(2, 1)]);
    }

    #[test]
    fn halfplane_has_lineality() {
        // x1 + 2 x2 <= 0
        let c = DdCone::from_halfspaces(2, &[Halfspace::ineq(v2(1, 2))]).unwrap();
        assert_eq!(c.lineality_dim(), 1);
        assert!(linalg::in_span(&c.lin, &v2(-2, 1)));
        assert!(linalg::in_span(&c.lin, &v2(2, -1)));
        assert_eq!(c.rays.len(), 1);
        let p = c.polar().unwrap();
        assert!(p.lin.is_empty());
        assert_eq!(p.rays, vec![v2(1, 2)]);
    }

    #[test]
    fn hyperplane_is_pure_lineality() {
        let c = DdCone::from_halfspaces(2, &[Halfspace::equation(v2(1, 2))]).unwrap();
        assert!(c.is_subspace());
        assert_eq!(c.lineality_dim(), 1);
        assert!(c.rays.is_empty());
    }

    #[test]
    fn intersection_of_orthant_and_halfplane_is_zero() {
        let orthant = DdCone::from_generators(2, &[v2(1, 0), v2(0, 1)], &[]).unwrap();
        let half = DdCone::from_halfspaces(2, &[Halfspace::ineq(v2(1, 2))]).unwrap();
        let both = orthant.intersect(&half).unwrap();
        assert!(both.is_zero());
    }

    #[test]
    fn minkowski_sum_creates_lineality() {
        let a = DdCone::from_generators(2, &[v2(1, 0)], &[]).unwrap();
        let b = DdCone::from_generators(2, &[v2(-1, 0)], &[]).unwrap();
        let s = a.minkowski_sum(&b).unwrap();
        assert_eq!(s.lineality_dim(), 1);
        assert!(s.rays.is_empty());
        assert!(linalg::in_span(&s.lin, &v2(1, 0)));
    }

    #[test]
    fn projection_of_upward_wedge_covers_the_line() {
        let c = DdCone::from_generators(2, &[v2(1, 1), v2(-1, 1)], &[]).unwrap();
        let p = c.project_drop_last().unwrap();
        assert!(p.is_full());
        assert_eq!(p.dim, 1);
    }

    #[test]
    fn contains_uses_exact_halfspaces() {
        let c = DdCone::from_halfspaces(2, &[Halfspace::ineq(v2(1, 2))]).unwrap();
        assert!(c.contains(&vec![q(-5), q(2)]).unwrap());
        assert!(c.contains(&vec![q(-2), q(1)]).unwrap());
        assert!(!c.contains(&vec![q(1), q(0)]).unwrap());
        assert!(c.contains(&vec![qr(-1, 2), qr(1, 4)]).unwrap());
    }

    #[test]
    fn double_polar_is_identity_on_canonical_cones() {
        let c = DdCone::from_generators(
            3,
            &[v3(1, 2, 0), v3(0, 1, 1), v3(1, 0, 3)],
            &[v3(1, 1, 1)],
        )
        .unwrap();
        let cc = c.polar().unwrap().polar().unwrap();
        assert_eq!(c, cc);
    }

    #[test]
    fn span_of_wedge_plus_line() {
        let c = DdCone::from_generators(3, &[v3(1, 0, 0)], &[v3(0, 1, 0)]).unwrap();
        let sp = c.span();
        assert_eq!(sp.len(), 2);
        assert!(linalg::in_span(&sp, &v3(3, -4, 0)));
        assert!(!linalg::in_span(&sp, &v3(0, 0, 1)));
    }
}
