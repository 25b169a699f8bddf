//! Regions: unions of grid cells, with per-end tail flags.
//!
//! A region is a cell mask plus one flag per end. A set tail flag means the
//! region continues past the window and owns the entire end; validity then
//! requires the outermost cell layer on that side to be fully inside the
//! mask, so the flagged part really is attached to the window part.

use super::{Domain, EndDescriptor};
use crate::{Error, Result};
use std::collections::VecDeque;

/// Boolean operation selector for `region_algebra`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetOp {
    Union,
    Intersection,
    Difference,
    SymmetricDifference,
}

/// A finite union of grid cells together with end tail flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    fp: u64,
    /// One entry per cell, row-major, axis 0 slowest.
    mask: Vec<bool>,
    /// One entry per domain end, in domain end order.
    tails: Vec<bool>,
}

impl Region {
    pub fn empty(d: &Domain) -> Region {
        Region {
            fp: d.fingerprint(),
            mask: vec![false; d.cell_count()],
            tails: vec![false; d.ends.len()],
        }
    }

    pub fn full(d: &Domain) -> Region {
        Region {
            fp: d.fingerprint(),
            mask: vec![true; d.cell_count()],
            tails: vec![true; d.ends.len()],
        }
    }

    /// Region of all cells whose center satisfies the predicate. Tail flags
    /// start clear; use `with_tail` to extend past the window.
    pub fn from_predicate<F: Fn(&[f64]) -> bool>(d: &Domain, f: F) -> Region {
        let mut r = Region::empty(d);
        for c in 0..d.cell_count() {
            if f(&d.cell_center(c)) {
                r.mask[c] = true;
            }
        }
        r
    }

    /// Axial slab: cells of the end-carrying axis with center in [lo, hi],
    /// full cross-section. Both bounds optional; an open side extends to the
    /// window edge and flags the end on that side.
    pub fn slab(d: &Domain, lo: Option<f64>, hi: Option<f64>) -> Result<Region> {
        let axis = d.kind.noncompact_axis().ok_or_else(|| {
            Error::BadRegion("slab regions need a truncated axis".into())
        })?;
        let mut r = Region::from_predicate(d, |x| {
            lo.map_or(true, |v| x[axis] >= v) && hi.map_or(true, |v| x[axis] <= v)
        });
        for (k, e) in d.ends.iter().enumerate() {
            let open = if e.sign > 0 { hi.is_none() } else { lo.is_none() };
            r.tails[k] = open;
        }
        r.validate(d)?;
        Ok(r)
    }

    pub fn with_tail(mut self, d: &Domain, end_id: &str, on: bool) -> Result<Region> {
        let k = d
            .ends
            .iter()
            .position(|e| e.id == end_id)
            .ok_or_else(|| Error::BadRegion(format!("no end {end_id:?}")))?;
        self.tails[k] = on;
        self.validate(d)?;
        Ok(self)
    }

    pub fn domain_fp(&self) -> u64 {
        self.fp
    }

    pub fn cell(&self, c: usize) -> bool {
        self.mask[c]
    }

    pub fn cells(&self) -> &[bool] {
        &self.mask
    }

    pub fn tail(&self, k: usize) -> bool {
        self.tails[k]
    }

    pub fn tails(&self) -> &[bool] {
        &self.tails
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b) && !self.tails.iter().any(|&b| b)
    }

    pub fn cell_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Smallest set cell index; total order used to sort components.
    pub fn first_cell(&self) -> Option<usize> {
        self.mask.iter().position(|&b| b)
    }

    pub fn complement(&self) -> Region {
        Region {
            fp: self.fp,
            mask: self.mask.iter().map(|&b| !b).collect(),
            tails: self.tails.iter().map(|&b| !b).collect(),
        }
    }

    /// Check mask length, and that each flagged tail is attached: the whole
    /// outermost cell layer toward that end lies in the mask.
    pub fn validate(&self, d: &Domain) -> Result<()> {
        d.expect_fp(self.fp, "region")?;
        if self.mask.len() != d.cell_count() || self.tails.len() != d.ends.len() {
            return Err(Error::BadRegion("mask size disagrees with grid".into()));
        }
        for (k, e) in d.ends.iter().enumerate() {
            if self.tails[k] {
                for &c in outer_layer(d, e).iter() {
                    if !self.mask[c] {
                        return Err(Error::BadRegion(format!(
                            "tail flag for {} set but the window edge layer is not \
                             contained in the region",
                            e.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Face-connected components, each inheriting the tail flags it is
    /// attached to, sorted by smallest cell index.
    pub fn components(&self, d: &Domain) -> Vec<Region> {
        let cells = d.cell_count();
        let mut seen = vec![false; cells];
        let mut out: Vec<Region> = Vec::new();
        for start in 0..cells {
            if !self.mask[start] || seen[start] {
                continue;
            }
            let mut comp = Region::empty(d);
            let mut q = VecDeque::new();
            q.push_back(start);
            seen[start] = true;
            while let Some(c) = q.pop_front() {
                comp.mask[c] = true;
                for n in cell_neighbors(d, c) {
                    if self.mask[n] && !seen[n] {
                        seen[n] = true;
                        q.push_back(n);
                    }
                }
            }
            out.push(comp);
        }
        // Components come out sorted by first cell because the scan above is
        // in ascending order.
        for (k, e) in d.ends.iter().enumerate() {
            if self.tails[k] {
                let marker = outer_layer(d, e)[0];
                for comp in out.iter_mut() {
                    if comp.mask[marker] {
                        comp.tails[k] = true;
                    }
                }
            }
        }
        out
    }
}

/// Cell indices of the outermost layer toward an end.
fn outer_layer(d: &Domain, e: &EndDescriptor) -> Vec<usize> {
    let ax = &d.axes[e.axis];
    let edge = if e.sign > 0 { ax.cells() - 1 } else { 0 };
    match d.ndim() {
        1 => vec![edge],
        _ => {
            let other = 1 - e.axis;
            (0..d.axes[other].cells())
                .map(|j| {
                    let mut ix = [0usize; 2];
                    ix[e.axis] = edge;
                    ix[other] = j;
                    d.cell_idx(&ix)
                })
                .collect()
        }
    }
}

/// Face neighbors of a cell, respecting periodic wrap.
fn cell_neighbors(d: &Domain, c: usize) -> Vec<usize> {
    let ix = d.cell_coords(c);
    let mut out = Vec::with_capacity(4);
    for a in 0..d.ndim() {
        let n = d.axes[a].cells();
        let periodic = d.axes[a].periodic;
        for step in [-1i64, 1] {
            let i = ix[a] as i64 + step;
            let i = if periodic {
                ((i % n as i64) + n as i64) % n as i64
            } else if i < 0 || i >= n as i64 {
                continue;
            } else {
                i
            } as usize;
            let mut jx = ix;
            jx[a] = i;
            out.push(d.cell_idx(&jx));
        }
    }
    out
}

/// Boolean combination of two regions on the same grid. Tail flags follow
/// the same operation.
pub fn region_algebra(d: &Domain, a: &Region, b: &Region, op: SetOp) -> Result<Region> {
    d.expect_fp(a.fp, "left region")?;
    d.expect_fp(b.fp, "right region")?;
    let f = |x: bool, y: bool| match op {
        SetOp::Union => x || y,
        SetOp::Intersection => x && y,
        SetOp::Difference => x && !y,
        SetOp::SymmetricDifference => x != y,
    };
    let r = Region {
        fp: a.fp,
        mask: a.mask.iter().zip(&b.mask).map(|(&x, &y)| f(x, y)).collect(),
        tails: a
            .tails
            .iter()
            .zip(&b.tails)
            .map(|(&x, &y)| f(x, y))
            .collect(),
    };
    Ok(r)
}

/// Ids of the ends a region owns (its set tail flags), in domain end order.
pub fn end_set_of(d: &Domain, r: &Region) -> Result<Vec<String>> {
    d.expect_fp(r.fp, "region")?;
    Ok(d
        .ends
        .iter()
        .zip(r.tails.iter())
        .filter(|(_, &t)| t)
        .map(|(e, _)| e.id.clone())
        .collect())
}

/// Canonical collar representative of a set of ends: for each end, the cells
/// with collar coordinate at or past collar_start (center test), tail
/// flagged. The frontier lands on a grid node by construction.
pub fn representative_region(d: &Domain, end_ids: &[&str]) -> Result<Region> {
    let mut r = Region::empty(d);
    for id in end_ids {
        let e = d.end_by_id(id)?;
        let part = Region::from_predicate(d, |x| {
            e.sign as f64 * x[e.axis] >= e.collar_start
        });
        r = region_algebra(d, &r, &part, SetOp::Union)?;
        let k = d.ends.iter().position(|q| q.id == e.id).unwrap();
        r.tails[k] = true;
    }
    r.validate(d)?;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Kind;

    fn line() -> Domain {
        Domain::new(Kind::Line, &[[-8.0, 8.0]], &[33], Some(8.0), None).unwrap()
    }

    fn cylinder() -> Domain {
        Domain::new(
            Kind::Cylinder,
            &[[0.0, 1.0], [-6.0, 6.0]],
            &[16, 49],
            Some(6.0),
            Some(3.0),
        )
        .unwrap()
    }

    #[test]
    fn complement_splits_into_two_rays_on_line() {
        let d = line();
        let k = Region::slab(&d, Some(-3.0), Some(3.0)).unwrap();
        let comps = k.complement().components(&d);
        assert_eq!(comps.len(), 2);
        // Sorted by smallest cell index: the negative ray first.
        let ends0 = end_set_of(&d, &comps[0]).unwrap();
        let ends1 = end_set_of(&d, &comps[1]).unwrap();
        assert_eq!(ends0, vec!["e-".to_string()]);
        assert_eq!(ends1, vec!["e+".to_string()]);
    }

    #[test]
    fn cylinder_complement_components_wrap_the_circle() {
        let d = cylinder();
        let k = Region::slab(&d, Some(-2.0), Some(2.0)).unwrap();
        let comps = k.complement().components(&d);
        assert_eq!(comps.len(), 2);
        // Each side is one ring, connected through the periodic direction.
        assert_eq!(comps[0].cell_count() % 16, 0);
    }

    #[test]
    fn algebra_laws_hold() {
        let d = line();
        let a = Region::slab(&d, Some(-5.0), Some(1.0)).unwrap();
        let b = Region::slab(&d, Some(-1.0), Some(4.0)).unwrap();
        let union = region_algebra(&d, &a, &b, SetOp::Union).unwrap();
        let inter = region_algebra(&d, &a, &b, SetOp::Intersection).unwrap();
        let sym = region_algebra(&d, &a, &b, SetOp::SymmetricDifference).unwrap();
        let diff_ab = region_algebra(&d, &a, &b, SetOp::Difference).unwrap();
        let diff_ba = region_algebra(&d, &b, &a, SetOp::Difference).unwrap();
        let sym2 = region_algebra(&d, &diff_ab, &diff_ba, SetOp::Union).unwrap();
        assert_eq!(sym, sym2);
        assert_eq!(
            union.cell_count(),
            inter.cell_count() + sym.cell_count()
        );
        // De Morgan.
        let ca = a.complement();
        let cb = b.complement();
        let lhs = union.complement();
        let rhs = region_algebra(&d, &ca, &cb, SetOp::Intersection).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn tail_flag_requires_attachment() {
        let d = line();
        // An interior slab must not claim an end.
        let r = Region::slab(&d, Some(-2.0), Some(2.0))
            .unwrap()
            .with_tail(&d, "e+", true);
        assert!(r.is_err());
        // A slab reaching the window edge may.
        let r = Region::slab(&d, Some(2.0), None).unwrap();
        assert!(r.tail(0));
        assert!(!r.tail(1));
    }

    #[test]
    fn representative_region_carries_its_ends() {
        let d = cylinder();
        let r = representative_region(&d, &["e+"]).unwrap();
        assert_eq!(end_set_of(&d, &r).unwrap(), vec!["e+".to_string()]);
        let both = representative_region(&d, &["e+", "e-"]).unwrap();
        assert_eq!(both.components(&d).len(), 2);
    }

    #[test]
    fn components_inherit_tails() {
        let d = line();
        let k = Region::slab(&d, Some(-3.0), Some(3.0)).unwrap();
        let c = k.complement();
        for comp in c.components(&d) {
            assert_eq!(end_set_of(&d, &comp).unwrap().len(), 1);
        }
    }
}
