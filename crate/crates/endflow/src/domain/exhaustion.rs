//! Exhaustions: nested pairs of axial slabs K_1 in L_1 in K_2 in ... whose
//! complements shrink toward the ends.
//!
//! Shrinking is measured in the end-compactified metric: on the axial
//! coordinate the chart is arctan, so the ray past radius r has diameter
//! pi/2 - arctan(r); on a cylinder the cross circle contributes a chord term
//! 2R cos(arctan r) with R the circle radius. Level k of an exhaustion keeps
//! both complement diameters at or below 2^-k.
//!
//! Radii land on grid nodes so that slab frontiers are node coordinates.

use super::region::Region;
use super::Domain;
use crate::util::solve_monotone;
use crate::{Error, Result};
use std::f64::consts::FRAC_PI_2;

/// One level: K and L slabs with K strictly inside L.
#[derive(Debug, Clone)]
pub struct ExLevel {
    pub k_radius: f64,
    pub l_radius: f64,
    pub k: Region,
    pub l: Region,
    /// Diameter bound of each component of the K complement.
    pub kc_diam: f64,
    /// Same for the L complement.
    pub lc_diam: f64,
}

/// A finite exhaustion of a noncompact domain.
#[derive(Debug, Clone)]
pub struct Exhaustion {
    fp: u64,
    pub levels: Vec<ExLevel>,
}

impl Exhaustion {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn domain_fp(&self) -> u64 {
        self.fp
    }

    /// Interleaved radii [rK1, rL1, rK2, rL2, ...].
    pub fn radii(&self) -> Vec<f64> {
        self.levels
            .iter()
            .flat_map(|lv| [lv.k_radius, lv.l_radius])
            .collect()
    }

    /// The refinement sequence of region pairs (previous, current) walked by
    /// staged constructions: (none, K1), (K1, L1), (L1, K2), (K2, L2), ...
    pub fn refined_pairs(&self) -> Vec<(Option<&Region>, &Region)> {
        let mut out = Vec::new();
        let mut prev: Option<&Region> = None;
        for lv in &self.levels {
            out.push((prev, &lv.k));
            out.push((Some(&lv.k), &lv.l));
            prev = Some(&lv.l);
        }
        out
    }

    /// Check the nesting and connectivity invariants.
    pub fn validate(&self, d: &Domain) -> Result<()> {
        d.expect_fp(self.fp, "exhaustion")?;
        let mut prev: Option<&Region> = None;
        for (i, lv) in self.levels.iter().enumerate() {
            if let Some(p) = prev {
                check_strictly_inside(d, p, &lv.k, &format!("L{} in K{}", i, i + 1))?;
            }
            check_strictly_inside(d, &lv.k, &lv.l, &format!("K{0} in L{0}", i + 1))?;
            for (region, label) in [(&lv.k, "K"), (&lv.l, "L")] {
                for comp in region.complement().components(d) {
                    if comp.tails().iter().all(|&t| !t) {
                        return Err(Error::BadRegion(format!(
                            "{label}{} complement has a compact component",
                            i + 1
                        )));
                    }
                }
            }
            // L meets each complement component of K in one connected piece.
            for comp in lv.k.complement().components(d) {
                let meet = super::region_algebra(
                    d,
                    &lv.l,
                    &comp,
                    super::SetOp::Intersection,
                )?;
                if meet.components(d).len() != 1 {
                    return Err(Error::BadRegion(format!(
                        "L{} meets a complement component of K{} in more than \
                         one piece",
                        i + 1,
                        i + 1
                    )));
                }
            }
            prev = Some(&lv.l);
        }
        Ok(())
    }
}

/// K strictly inside L: every cell of K and each of its face neighbors lies
/// in L, and tail flags agree.
fn check_strictly_inside(d: &Domain, k: &Region, l: &Region, label: &str) -> Result<()> {
    for c in 0..d.cell_count() {
        if !k.cell(c) {
            continue;
        }
        if !l.cell(c) {
            return Err(Error::BadRegion(format!("{label}: not nested")));
        }
        for n in neighbors(d, c) {
            if !l.cell(n) {
                return Err(Error::BadRegion(format!(
                    "{label}: inner region touches the frontier of the outer"
                )));
            }
        }
    }
    Ok(())
}

fn neighbors(d: &Domain, c: usize) -> Vec<usize> {
    // Face neighbors; reuse the component adjacency through a tiny local
    // reimplementation to keep the region internals private.
    let ix = d.cell_coords(c);
    let mut out = Vec::with_capacity(4);
    for a in 0..d.ndim() {
        let n = d.axes[a].cells();
        for step in [-1i64, 1] {
            let i = ix[a] as i64 + step;
            let i = if d.axes[a].periodic {
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

/// Diameter bound of the region past axial radius r (full cross-section plus
/// the end point) in the compactified metric.
pub fn diam_bound(d: &Domain, r: f64) -> f64 {
    let axial = FRAC_PI_2 - r.atan();
    match d.ndim() {
        1 => axial,
        _ => {
            let circumference = d.axes[0].len();
            let big_r = circumference / (2.0 * std::f64::consts::PI);
            let chord = 2.0 * big_r / (1.0 + r * r).sqrt();
            (axial * axial + chord * chord).sqrt()
        }
    }
}

/// Smallest radius whose complement diameter bound is at most delta.
fn required_radius(d: &Domain, delta: f64) -> f64 {
    if d.ndim() == 1 {
        // pi/2 - arctan r = delta  =>  r = cot(delta).
        return 1.0 / delta.tan();
    }
    // diam_bound is strictly decreasing in r; bracket and solve.
    let f = |r: f64| delta - diam_bound(d, r);
    let mut hi = 1.0;
    while f(hi) < 0.0 && hi < 1e9 {
        hi *= 2.0;
    }
    solve_monotone(f, 0.0, hi, f(0.0), f(hi))
}

fn axial(d: &Domain) -> Result<usize> {
    d.kind
        .noncompact_axis()
        .ok_or_else(|| Error::BadDomain("exhaustions need a noncompact domain".into()))
}

/// Snap a radius up to the next node coordinate of the axial axis.
fn snap_up(d: &Domain, axis: usize, r: f64) -> f64 {
    let h = d.axes[axis].spacing();
    let lo = d.axes[axis].lo;
    let i = ((r - lo) / h - 1e-9).ceil();
    lo + i * h
}

fn snap_nearest(d: &Domain, axis: usize, r: f64) -> f64 {
    let h = d.axes[axis].spacing();
    let lo = d.axes[axis].lo;
    lo + ((r - lo) / h).round() * h
}

fn slab_at(d: &Domain, r: f64) -> Result<Region> {
    match d.kind {
        super::Kind::HalfLine => Region::slab(d, None, Some(r)),
        _ => Region::slab(d, Some(-r), Some(r)),
    }
}

fn build(d: &Domain, radii: &[f64]) -> Result<Exhaustion> {
    let ax = axial(d)?;
    let h = d.axes[ax].spacing();
    let t = d.truncation;
    let depth = radii.len() / 2;
    // prev tracks the previously used radius; slabs start nested from 0.
    let mut prev = 0.0;
    let mut levels = Vec::with_capacity(depth);
    for k in 0..depth {
        let rk = radii[2 * k];
        let rl = radii[2 * k + 1];
        for (r, label) in [(rk, "K"), (rl, "L")] {
            if r <= prev + 0.5 * h {
                return Err(Error::ExhaustionTooDeep(format!(
                    "{label}{} radius {r} leaves no cell gap after {prev}",
                    k + 1
                )));
            }
            if r > t - 1.5 * h {
                return Err(Error::ExhaustionTooDeep(format!(
                    "{label}{} radius {r} leaves no room inside the window {t}",
                    k + 1
                )));
            }
            prev = r;
        }
        levels.push(ExLevel {
            k_radius: rk,
            l_radius: rl,
            k: slab_at(d, rk)?,
            l: slab_at(d, rl)?,
            kc_diam: diam_bound(d, rk),
            lc_diam: diam_bound(d, rl),
        });
    }
    let ex = Exhaustion {
        fp: d.fingerprint(),
        levels,
    };
    ex.validate(d)?;
    Ok(ex)
}

/// Exhaustion with automatic radii: level k complements have diameter at
/// most 2^-k, radii land on nodes, and every slab fits strictly inside the
/// window. Fails when the window or grid cannot hold `depth` levels.
pub fn standard_exhaustion(d: &Domain, depth: usize) -> Result<Exhaustion> {
    if depth == 0 {
        return Err(Error::ExhaustionTooDeep("depth must be at least 1".into()));
    }
    let ax = axial(d)?;
    let h = d.axes[ax].spacing();
    let t = d.truncation;
    let edge = t - 2.0 * h;

    let mut rk = Vec::with_capacity(depth);
    let mut prev = 0.0;
    for k in 1..=depth {
        let need = required_radius(d, 0.5f64.powi(k as i32));
        let r = snap_up(d, ax, need.max(prev + 2.0 * h));
        if r > edge {
            return Err(Error::ExhaustionTooDeep(format!(
                "level {k} needs radius {need:.3}, window only reaches {t}"
            )));
        }
        rk.push(r);
        prev = r;
    }
    let mut radii = Vec::with_capacity(2 * depth);
    for k in 0..depth {
        let upper = if k + 1 < depth { rk[k + 1] } else { edge };
        let rl = snap_nearest(d, ax, 0.5 * (rk[k] + upper));
        if rl <= rk[k] + 0.5 * h || rl >= upper - 0.5 * h {
            return Err(Error::ExhaustionTooDeep(format!(
                "no node-aligned separating radius between {} and {}",
                rk[k], upper
            )));
        }
        radii.push(rk[k]);
        radii.push(rl);
    }
    build(d, &radii)
}

/// Exhaustion with caller radii, interleaved [rK1, rL1, rK2, rL2, ...].
/// Radii are snapped to nodes and the nesting invariants are enforced; the
/// diameter-halving schedule of `standard_exhaustion` is not.
pub fn exhaustion_with_radii(d: &Domain, radii: &[f64]) -> Result<Exhaustion> {
    if radii.is_empty() || radii.len() % 2 != 0 {
        return Err(Error::ExhaustionTooDeep(
            "radii must come in (K, L) pairs".into(),
        ));
    }
    let ax = axial(d)?;
    let snapped: Vec<f64> = radii.iter().map(|&r| snap_nearest(d, ax, r)).collect();
    build(d, &snapped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Kind;

    fn line(t: f64, n: usize) -> Domain {
        Domain::new(Kind::Line, &[[-t, t]], &[n], Some(t), None).unwrap()
    }

    #[test]
    fn line_radii_meet_the_cotangent_schedule() {
        let d = line(16.0, 257);
        let ex = standard_exhaustion(&d, 3).unwrap();
        assert_eq!(ex.depth(), 3);
        // Complement of radius r has diameter pi/2 - arctan r; level k needs
        // r >= cot(2^-k). cot(1/2) = 1.830..., cot(1/4) = 3.916...,
        // cot(1/8) = 7.958...
        for (k, lv) in ex.levels.iter().enumerate() {
            let need = 1.0 / 0.5f64.powi(k as i32 + 1).tan();
            assert!(lv.k_radius >= need);
            assert!(lv.kc_diam <= 0.5f64.powi(k as i32 + 1) + 1e-12);
            assert!(lv.lc_diam <= lv.kc_diam);
            assert!(lv.k_radius < lv.l_radius);
        }
        assert!(ex.levels[0].k_radius >= 1.830487721712452);
        assert!(ex.levels[1].k_radius >= 3.91631736464594);
        assert!(ex.levels[2].k_radius >= 7.958289865867011);
        ex.validate(&d).unwrap();
    }

    #[test]
    fn radii_land_on_nodes() {
        let d = line(16.0, 257);
        let h = d.axes[0].spacing();
        for r in standard_exhaustion(&d, 2).unwrap().radii() {
            let steps = (r - d.axes[0].lo) / h;
            assert!((steps - steps.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn depth_that_cannot_fit_is_refused() {
        // Window 4 cannot hold level 2 (needs radius about 3.92 plus margin).
        let d = line(4.0, 65);
        assert!(standard_exhaustion(&d, 1).is_ok());
        assert!(standard_exhaustion(&d, 2).is_err());
    }

    #[test]
    fn cylinder_exhaustion_counts_components() {
        let d = Domain::new(
            Kind::Cylinder,
            &[[0.0, 1.0], [-16.0, 16.0]],
            &[16, 257],
            Some(16.0),
            Some(12.0),
        )
        .unwrap();
        let ex = standard_exhaustion(&d, 2).unwrap();
        for lv in &ex.levels {
            assert_eq!(lv.k.complement().components(&d).len(), 2);
            assert_eq!(lv.l.complement().components(&d).len(), 2);
        }
        // The cross-circle chord term makes cylinder radii at least the line
        // radii for the same schedule.
        assert!(ex.levels[0].k_radius >= 1.83);
        ex.validate(&d).unwrap();
    }

    #[test]
    fn half_line_has_single_complement_component() {
        let d = Domain::new(Kind::HalfLine, &[[0.0, 16.0]], &[257], Some(16.0), None)
            .unwrap();
        let ex = standard_exhaustion(&d, 2).unwrap();
        assert_eq!(ex.levels[0].k.complement().components(&d).len(), 1);
        ex.validate(&d).unwrap();
    }

    #[test]
    fn caller_radii_are_snapped_and_checked() {
        let d = line(16.0, 257);
        let ex = exhaustion_with_radii(&d, &[1.03, 2.11, 3.02, 4.87]).unwrap();
        ex.validate(&d).unwrap();
        let h = d.axes[0].spacing();
        assert!((ex.levels[0].k_radius - 1.0).abs() < h);
        // Non-nested radii are refused.
        assert!(exhaustion_with_radii(&d, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn refined_pairs_walk_the_ladder() {
        let d = line(16.0, 257);
        let ex = standard_exhaustion(&d, 2).unwrap();
        let pairs = ex.refined_pairs();
        assert_eq!(pairs.len(), 4);
        assert!(pairs[0].0.is_none());
        assert_eq!(pairs[1].0.unwrap(), &ex.levels[0].k);
        assert_eq!(pairs[2].0.unwrap(), &ex.levels[0].l);
    }
}
