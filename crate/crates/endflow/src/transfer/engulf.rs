//! One-parameter engulfing families.
//!
//! A family flows the domain along a piecewise linear velocity field on the
//! noncompact axis: zero at the confinement anchors, one on a plateau
//! around the frontier of the engulfed region, linear on the ramps between.
//! The flow has a closed-form time coordinate (logarithmic through the
//! ramps, linear on the plateau), so every member is a genuine
//! diffeomorphism, members compose as a group, and the frontier sweeps the
//! whole open confinement as the time runs over its range. The transferred
//! mass is therefore continuous and strictly increasing in time, which
//! turns any admissible mass target into a scalar root-finding problem.

use std::cell::RefCell;

use crate::domain::{region_algebra, Domain, Region, SetOp};
use crate::err::{Error, Result};
use crate::fields::{j_under_map, DensityField, DiffeoMap, EndBehavior};
use crate::transfer::{axial_extent, band_mass_seen, deep_coord};
use crate::util::{solve_increasing_unbounded, tol};

/// Widest ramp used next to an anchor. Narrow ramps settle to the pure
/// far shift quickly, which keeps the end declarations of large-time
/// members inside the window.
const RAMP_CAP: f64 = 0.25;

/// One-parameter family of frontier-advancing diffeomorphisms.
///
/// Flow coordinates are xi = dir * u with u the axial coordinate and dir
/// chosen so the engulfed region lies above its frontier in xi; positive
/// time flows points across the frontier into it, so the transfer is
/// positive and increasing in time.
#[derive(Debug, Clone)]
pub struct EngulfFamily {
    domain: Domain,
    axis: usize,
    l_region: Region,
    /// Frontier node coordinate in u.
    frontier: f64,
    /// +1 when the engulfed region lies above the frontier in u.
    dir: f64,
    /// Anchors in xi where the velocity vanishes; None on unbounded sides.
    behind: Option<f64>,
    ahead: Option<f64>,
    w_behind: f64,
    w_ahead: f64,
}

/// Family engulfing l within the whole domain. The region and its
/// complement must both be connected, meeting in a single frontier slab;
/// sides bounded by the window (the half line boundary) anchor the flow,
/// sides running into a tail translate outward.
pub fn engulf_family(d: &Domain, l: &Region) -> Result<EngulfFamily> {
    engulf_confined(d, l, &Region::full(d))
}

/// Family engulfing l inside the confinement conf, fixing everything
/// outside conf pointwise. Anchors sit on the bounded faces of conf.
pub(crate) fn engulf_confined(d: &Domain, l: &Region, conf: &Region) -> Result<EngulfFamily> {
    let axis = d
        .kind
        .noncompact_axis()
        .ok_or_else(|| Error::BadDomain("engulfing needs a noncompact direction".into()))?;
    l.validate(d)?;
    conf.validate(d)?;
    if l.is_empty() {
        return Err(Error::BadRegion("engulfed region is empty".into()));
    }
    if l.components(d).len() != 1 {
        return Err(Error::BadRegion("engulfed region is disconnected".into()));
    }
    let rest = region_algebra(d, conf, l, SetOp::Difference)?;
    if rest.is_empty() {
        return Err(Error::BadRegion(
            "engulfed region fills its confinement".into(),
        ));
    }
    if rest.components(d).len() != 1 {
        return Err(Error::BadRegion(
            "engulfed region and its complement must meet in a single frontier".into(),
        ));
    }
    let le = axial_extent(d, l)?;
    let ce = axial_extent(d, conf)?;
    let h = d.axes[axis].spacing();
    let same = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() < 0.5 * h,
        _ => false,
    };
    // The side of l interior to conf is the moving frontier; the other side
    // must lie on the confinement boundary. The flow runs toward l.
    let (frontier, dir) = if same(le.lo, ce.lo) {
        let Some(f) = le.hi else {
            return Err(Error::BadRegion("engulfed region fills its confinement".into()));
        };
        (f, -1.0)
    } else if same(le.hi, ce.hi) {
        let Some(f) = le.lo else {
            return Err(Error::BadRegion("engulfed region fills its confinement".into()));
        };
        (f, 1.0)
    } else {
        return Err(Error::BadRegion(
            "engulfed region does not reach the confinement boundary".into(),
        ));
    };
    let to_xi = |u: f64| dir * u;
    let (behind, ahead) = if dir > 0.0 {
        (ce.lo.map(to_xi), ce.hi.map(to_xi))
    } else {
        (ce.hi.map(to_xi), ce.lo.map(to_xi))
    };
    let fxi = to_xi(frontier);
    let ramp = |span: f64| span.min(2.0 * RAMP_CAP).max(4.0 * h) / 2.0;
    let mut w_behind = behind.map_or(0.0, |b| ramp(fxi - b));
    let mut w_ahead = ahead.map_or(0.0, |a| ramp(a - fxi));
    if let (Some(b), Some(a)) = (behind, ahead) {
        // keep a nonnegative plateau between the ramps
        let cap = (a - b) / 4.0;
        w_behind = w_behind.min(cap);
        w_ahead = w_ahead.min(cap);
    }
    Ok(EngulfFamily {
        domain: d.clone(),
        axis,
        l_region: l.clone(),
        frontier,
        dir,
        behind,
        ahead,
        w_behind,
        w_ahead,
    })
}

impl EngulfFamily {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// The region the family engulfs as time grows.
    pub fn engulfed(&self) -> &Region {
        &self.l_region
    }

    /// Axial coordinate of the moving frontier at time zero.
    pub fn frontier(&self) -> f64 {
        self.frontier
    }

    /// Window coordinates in xi.
    fn xi_window(&self) -> (f64, f64) {
        let ax = &self.domain.axes[self.axis];
        let (a, b) = (self.dir * ax.lo, self.dir * ax.hi);
        (a.min(b), a.max(b))
    }

    /// Admissible time interval. Anchored sides limit the ramp compression
    /// so discrete Jacobians stay well clear of rounding collapse;
    /// unbounded sides limit how far the settled pure-shift zone may
    /// retreat while its declaration must still fit the window.
    pub fn time_range(&self) -> (f64, f64) {
        let (xi_lo_w, xi_hi_w) = self.xi_window();
        let trunc = self.domain.truncation;
        let mut tmin = -1e12_f64;
        let mut tmax = 1e12_f64;
        match self.behind {
            Some(b) => tmin = tmin.max(-(30.0 * self.w_behind + (xi_hi_w - b))),
            None => {
                if let Some(a) = self.ahead {
                    tmax = tmax.min(trunc + (a - self.w_ahead));
                }
            }
        }
        match self.ahead {
            Some(a) => tmax = tmax.min(30.0 * self.w_ahead + (a - xi_lo_w)),
            None => {
                if let Some(b) = self.behind {
                    tmin = tmin.max(-(trunc - (b + self.w_behind)));
                }
            }
        }
        (tmin, tmax)
    }

    /// Time coordinate of the flow: increasing, with the member at time t
    /// acting as s -> s + t in this coordinate. Defined strictly between
    /// the anchors.
    fn time_coord(&self, xi: f64) -> f64 {
        match (self.behind, self.ahead) {
            (None, None) => xi - self.dir * self.frontier,
            (Some(b), None) => {
                let z = b + self.w_behind;
                if xi >= z {
                    xi - z
                } else {
                    self.w_behind * ((xi - b) / self.w_behind).ln()
                }
            }
            (None, Some(a)) => {
                let z = a - self.w_ahead;
                if xi <= z {
                    xi - z
                } else {
                    -self.w_ahead * ((a - xi) / self.w_ahead).ln()
                }
            }
            (Some(b), Some(a)) => {
                let zb = b + self.w_behind;
                let za = a - self.w_ahead;
                if xi < zb {
                    self.w_behind * ((xi - b) / self.w_behind).ln()
                } else if xi <= za {
                    xi - zb
                } else {
                    (za - zb) - self.w_ahead * ((a - xi) / self.w_ahead).ln()
                }
            }
        }
    }

    fn time_coord_inv(&self, s: f64) -> f64 {
        match (self.behind, self.ahead) {
            (None, None) => s + self.dir * self.frontier,
            (Some(b), None) => {
                if s >= 0.0 {
                    b + self.w_behind + s
                } else {
                    b + self.w_behind * (s / self.w_behind).exp()
                }
            }
            (None, Some(a)) => {
                if s <= 0.0 {
                    a - self.w_ahead + s
                } else {
                    a - self.w_ahead * (-s / self.w_ahead).exp()
                }
            }
            (Some(b), Some(a)) => {
                let p = (a - self.w_ahead) - (b + self.w_behind);
                if s < 0.0 {
                    b + self.w_behind * (s / self.w_behind).exp()
                } else if s <= p {
                    b + self.w_behind + s
                } else {
                    a - self.w_ahead * (-(s - p) / self.w_ahead).exp()
                }
            }
        }
    }

    fn end_behaviors(&self, t: f64) -> Vec<EndBehavior> {
        self.domain
            .ends
            .iter()
            .map(|e| {
                let outward_is_ahead = (e.sign > 0) == (self.dir > 0.0);
                if outward_is_ahead {
                    match self.ahead {
                        Some(a) => EndBehavior::Identity {
                            beyond: a.max(e.collar_start),
                        },
                        None => {
                            let raw = match self.behind {
                                Some(b) => b + self.w_behind + (-t).max(0.0),
                                None => e.collar_start,
                            };
                            EndBehavior::Shift {
                                shift: t,
                                beyond: raw.max(e.collar_start),
                            }
                        }
                    }
                } else {
                    match self.behind {
                        Some(b) => EndBehavior::Identity {
                            beyond: (-b).max(e.collar_start),
                        },
                        None => {
                            let raw = match self.ahead {
                                Some(a) => -(a - self.w_ahead) + t.max(0.0),
                                None => e.collar_start,
                            };
                            EndBehavior::Shift {
                                shift: -t,
                                beyond: raw.max(e.collar_start),
                            }
                        }
                    }
                }
            })
            .collect()
    }

    /// The family member at time t. Time zero is the identity bitwise.
    pub fn map_at(&self, t: f64) -> Result<DiffeoMap> {
        let d = &self.domain;
        let (tmin, tmax) = self.time_range();
        if !t.is_finite() || t < tmin || t > tmax {
            return Err(Error::OutOfRange(format!(
                "time {t:.6e} outside the family range [{tmin:.3e}, {tmax:.3e}]"
            )));
        }
        if t == 0.0 {
            return Ok(DiffeoMap::identity(d));
        }
        let ax = &d.axes[self.axis];
        let translation = self.behind.is_none() && self.ahead.is_none();
        let mut axial = vec![0.0; ax.nodes];
        for (i, slot) in axial.iter_mut().enumerate() {
            if translation {
                *slot = self.dir * t;
                continue;
            }
            let u = ax.node(i);
            let xi = self.dir * u;
            if self.behind.is_some_and(|b| xi <= b) || self.ahead.is_some_and(|a| xi >= a) {
                continue;
            }
            let xi2 = self.time_coord_inv(self.time_coord(xi) + t);
            *slot = self.dir * xi2 - u;
        }
        let n = d.node_count();
        let nd = d.ndim();
        let mut disp = vec![vec![0.0; n]; nd];
        for (idx, slot) in disp[self.axis].iter_mut().enumerate() {
            let ai = if nd == 1 {
                idx
            } else if self.axis == 0 {
                idx / d.axes[1].nodes
            } else {
                idx % d.axes[1].nodes
            };
            *slot = axial[ai];
        }
        DiffeoMap::new(d.clone(), disp, self.end_behaviors(t))
    }

    /// Seen masses available on each side of the frontier within the
    /// confinement, as (behind, ahead). Infinite on an unbounded side
    /// whose tail carries infinite mass.
    pub(crate) fn side_masses(
        &self,
        mu: &DensityField,
        premap: Option<&DiffeoMap>,
    ) -> Result<(f64, f64)> {
        let side = |anchor: Option<f64>, outward_sign: f64| -> Result<f64> {
            let bound_u = match anchor {
                Some(xi) => Some(self.dir * xi),
                None => {
                    let sign = (outward_sign * self.dir) as i8;
                    match deep_coord(mu, premap, self.axis, sign)? {
                        Some(u) => Some(u),
                        None => return Ok(f64::INFINITY),
                    }
                }
            };
            let b = bound_u.unwrap();
            let (lo, hi) = if b <= self.frontier {
                (b, self.frontier)
            } else {
                (self.frontier, b)
            };
            band_mass_seen(mu, premap, lo, hi)
        };
        let behind = side(self.behind, -1.0)?;
        let ahead = side(self.ahead, 1.0)?;
        Ok((behind, ahead))
    }
}

/// Mass transferred into the engulfed region by the member at time t:
/// J of the region between the member's inverse image of it and itself.
pub fn lambda_of(mu: &DensityField, fam: &EngulfFamily, t: f64) -> Result<f64> {
    lambda_seen(mu, None, fam, t, 0.0)
}

/// Transfer seen through a premap, measured on the as-built composition so
/// the solved quantity equals the verified one. j0 is the cached transfer
/// of the premap alone.
fn lambda_seen(
    mu: &DensityField,
    premap: Option<&DiffeoMap>,
    fam: &EngulfFamily,
    t: f64,
    j0: f64,
) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    let h = fam.map_at(t)?;
    let total = match premap {
        Some(p) => h.compose(p)?,
        None => h,
    };
    Ok(j_under_map(mu, &total, fam.engulfed())? - j0)
}

/// Time at which the family transfers exactly the mass a.
pub fn transfer_time(mu: &DensityField, a: f64, fam: &EngulfFamily) -> Result<f64> {
    transfer_time_seen(mu, None, a, fam)
}

pub(crate) fn transfer_time_seen(
    mu: &DensityField,
    premap: Option<&DiffeoMap>,
    a: f64,
    fam: &EngulfFamily,
) -> Result<f64> {
    let d = fam.domain();
    d.expect_fp(mu.domain.fingerprint(), "density")?;
    if let Some(p) = premap {
        d.expect_fp(p.domain.fingerprint(), "premap")?;
    }
    if !a.is_finite() {
        return Err(Error::OutOfRange(format!("transfer target {a} is not finite")));
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    // the reservoir behind the frontier bounds the transfer above; the
    // engulfed side's own drainable content bounds it below
    let (behind_mass, ahead_mass) = fam.side_masses(mu, premap)?;
    if ahead_mass.is_finite() && a <= -ahead_mass + tol::FEASIBILITY_MARGIN {
        return Err(Error::OutOfRange(format!(
            "transfer target {a:.6e} at or below the engulfable infimum {:.6e}",
            -ahead_mass
        )));
    }
    if behind_mass.is_finite() && a >= behind_mass - tol::FEASIBILITY_MARGIN {
        return Err(Error::OutOfRange(format!(
            "transfer target {a:.6e} at or above the engulfable supremum {behind_mass:.6e}"
        )));
    }
    let j0 = match premap {
        Some(p) => j_under_map(mu, p, fam.engulfed())?,
        None => 0.0,
    };
    let (tmin, tmax) = fam.time_range();
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let lam = |t: f64| -> f64 {
        if failure.borrow().is_some() {
            return 0.0;
        }
        match lambda_seen(mu, premap, fam, t.clamp(tmin, tmax), j0) {
            Ok(v) => v,
            Err(e) => {
                *failure.borrow_mut() = Some(e);
                0.0
            }
        }
    };
    let sol = solve_increasing_unbounded(&lam, a, 1.0, 60);
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }
    let mut t = sol
        .ok_or_else(|| {
            Error::OutOfRange(format!(
                "transfer target {a:.6e} not reachable within the family range"
            ))
        })?
        .clamp(tmin, tmax);
    // Newton polish: the bracketed solve bounds the time, not the measured
    // transfer, and steep frontiers can leave a residual above tolerance.
    for _ in 0..32 {
        let r = lam(t) - a;
        if failure.borrow().is_some() || r.abs() <= tol::ROOT_ABS {
            break;
        }
        let dt = 1e-6 * t.abs().max(1.0);
        let slope = (lam(t + dt) - lam(t - dt)) / (2.0 * dt);
        if !(slope > 0.0) {
            break;
        }
        t = (t - r / slope).clamp(tmin, tmax);
    }
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }
    Ok(t)
}

/// Diffeomorphism transferring exactly the mass s * a into the engulfed
/// region; s scales the move along the family, s = 1 is the full transfer.
pub fn engulf_transfer(
    mu: &DensityField,
    a: f64,
    fam: &EngulfFamily,
    s: f64,
) -> Result<DiffeoMap> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::OutOfRange(format!(
            "path parameter {s} outside [0, 1]"
        )));
    }
    let target = s * a;
    if target == 0.0 {
        return Ok(DiffeoMap::identity(fam.domain()));
    }
    let t = transfer_time(mu, target, fam)?;
    let h = fam.map_at(t)?;
    let got = j_under_map(mu, &h, fam.engulfed())?;
    if (got - target).abs() > tol::TRANSFER_J_ABS {
        return Err(Error::Numeric(format!(
            "transfer settled at {got:.9e} against target {target:.9e}"
        )));
    }
    Ok(h)
}

/// Balancing move against a premap: returns the composed total, which is
/// bitwise the object the time solve measured.
pub(crate) fn engulf_transfer_seen(
    mu: &DensityField,
    premap: Option<&DiffeoMap>,
    a: f64,
    fam: &EngulfFamily,
) -> Result<DiffeoMap> {
    if a == 0.0 {
        return Ok(match premap {
            Some(p) => p.clone(),
            None => DiffeoMap::identity(fam.domain()),
        });
    }
    let t = transfer_time_seen(mu, premap, a, fam)?;
    let h = fam.map_at(t)?;
    match premap {
        Some(p) => h.compose(p),
        None => Ok(h),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Kind;
    use crate::fields::TailModel;

    fn line(n: usize) -> Domain {
        Domain::new(Kind::Line, &[[-8.0, 8.0]], &[n], Some(8.0), None).unwrap()
    }

    fn half_line(n: usize) -> Domain {
        Domain::new(Kind::HalfLine, &[[0.0, 8.0]], &[n], Some(8.0), None).unwrap()
    }

    fn lebesgue(d: &Domain) -> DensityField {
        let tails = d
            .ends
            .iter()
            .map(|_| TailModel::ConstantRate { density: 1.0 })
            .collect();
        DensityField::new(d.clone(), vec![1.0; d.node_count()], tails).unwrap()
    }

    fn upper_ray(d: &Domain, c: f64) -> Region {
        Region::slab(d, Some(c), None).unwrap()
    }

    #[test]
    fn translation_family_on_the_line_moves_mass_linearly() {
        let d = line(161);
        let mu = lebesgue(&d);
        let fam = engulf_family(&d, &upper_ray(&d, 2.0)).unwrap();
        for t in [-3.0, -1.0, -0.25, 0.0, 0.5, 2.0, 4.0] {
            let lam = lambda_of(&mu, &fam, t).unwrap();
            assert!(
                (lam - t).abs() <= 1e-9,
                "transfer {lam} at time {t} should equal the time"
            );
        }
    }

    #[test]
    fn lambda_is_strictly_increasing() {
        let d = half_line(161);
        let mu = lebesgue(&d);
        let fam = engulf_family(&d, &upper_ray(&d, 3.0)).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..100 {
            let t = -2.0 + 4.0 * (k as f64) / 99.0;
            let lam = lambda_of(&mu, &fam, t).unwrap();
            assert!(lam > prev, "transfer must increase, got {lam} after {prev}");
            prev = lam;
        }
    }

    #[test]
    fn members_nest_the_engulfed_region() {
        let d = line(161);
        let fam = engulf_family(&d, &upper_ray(&d, 1.0)).unwrap();
        let grow = fam.map_at(1.0).unwrap();
        let shrink = fam.map_at(-1.0).unwrap();
        // points at the frontier cross into the engulfed region for t > 0
        let f = fam.frontier();
        assert!(grow.eval(&[f])[0] > f);
        assert!(shrink.eval(&[f])[0] < f);
    }

    #[test]
    fn zero_time_is_the_identity_bitwise() {
        let d = half_line(81);
        let fam = engulf_family(&d, &upper_ray(&d, 2.0)).unwrap();
        assert!(fam.map_at(0.0).unwrap().is_identity());
    }

    #[test]
    fn transfer_time_round_trips_the_target() {
        let d = line(257);
        let mu = lebesgue(&d);
        let fam = engulf_family(&d, &upper_ray(&d, 2.0)).unwrap();
        for a in [-2.5, -0.3, 0.7, 3.0] {
            let t = transfer_time(&mu, a, &fam).unwrap();
            let lam = lambda_of(&mu, &fam, t).unwrap();
            assert!((lam - a).abs() <= tol::ROOT_ABS * 10.0);
        }
    }

    #[test]
    fn boundary_anchored_transfer_respects_the_reservoir() {
        let d = half_line(161);
        let mu = lebesgue(&d);
        let fam = engulf_family(&d, &upper_ray(&d, 3.0)).unwrap();
        // only three units sit between the boundary and the frontier
        let h = engulf_transfer(&mu, 2.5, &fam, 1.0).unwrap();
        let got = j_under_map(&mu, &h, fam.engulfed()).unwrap();
        assert!((got - 2.5).abs() <= tol::TRANSFER_J_ABS);
        assert!(matches!(
            transfer_time(&mu, 3.5, &fam),
            Err(Error::OutOfRange(_))
        ));
        assert!(matches!(
            transfer_time(&mu, 3.0, &fam),
            Err(Error::OutOfRange(_))
        ));
    }

    #[test]
    fn identity_exactly_when_the_target_vanishes() {
        let d = line(81);
        let mu = lebesgue(&d);
        let fam = engulf_family(&d, &upper_ray(&d, 1.0)).unwrap();
        assert!(engulf_transfer(&mu, 0.0, &fam, 1.0).unwrap().is_identity());
        assert!(engulf_transfer(&mu, 1.0, &fam, 0.0).unwrap().is_identity());
        assert!(!engulf_transfer(&mu, 1.0, &fam, 1.0).unwrap().is_identity());
    }

    #[test]
    fn path_parameter_scales_the_transfer() {
        let d = line(161);
        let mu = lebesgue(&d);
        let fam = engulf_family(&d, &upper_ray(&d, 2.0)).unwrap();
        for s in [0.25, 0.5, 1.0] {
            let h = engulf_transfer(&mu, 2.0, &fam, s).unwrap();
            let got = j_under_map(&mu, &h, fam.engulfed()).unwrap();
            assert!((got - 2.0 * s).abs() <= tol::TRANSFER_J_ABS);
        }
    }

    #[test]
    fn confined_move_fixes_the_outside_bitwise() {
        let d = line(161);
        let mu = lebesgue(&d);
        let band = Region::slab(&d, Some(-3.0), Some(3.0)).unwrap();
        let low = Region::slab(&d, Some(-3.0), Some(0.0)).unwrap();
        let fam = engulf_confined(&d, &low, &band).unwrap();
        let m = fam.map_at(1.5).unwrap();
        let disp = m.disp(0);
        for (i, &v) in disp.iter().enumerate() {
            let u = d.axes[0].node(i);
            if !(-3.0..=3.0).contains(&u) {
                assert_eq!(v, 0.0, "node at {u} must stay fixed");
            }
        }
        let t = transfer_time(&mu, -2.0, &fam).unwrap();
        let h = fam.map_at(t).unwrap();
        let got = j_under_map(&mu, &h, &low).unwrap();
        assert!((got + 2.0).abs() <= tol::TRANSFER_J_ABS);
    }

    #[test]
    fn cylinder_families_transfer_across_the_cross_section() {
        let d = Domain::new(
            Kind::Cylinder,
            &[[0.0, 2.0], [-8.0, 8.0]],
            &[33, 161],
            Some(8.0),
            None,
        )
        .unwrap();
        let mu = lebesgue(&d);
        let l = Region::slab(&d, Some(2.0), None).unwrap();
        let fam = engulf_family(&d, &l).unwrap();
        let t = transfer_time(&mu, 1.0, &fam).unwrap();
        // unit transfer spreads over a circumference of two
        assert!((t - 0.5).abs() <= 1e-6);
    }

    #[test]
    fn disconnected_regions_are_rejected() {
        let d = line(81);
        let both = region_algebra(
            &d,
            &Region::slab(&d, None, Some(-4.0)).unwrap(),
            &Region::slab(&d, Some(4.0), None).unwrap(),
            SetOp::Union,
        )
        .unwrap();
        assert!(engulf_family(&d, &both).is_err());
        let band = Region::slab(&d, Some(-2.0), Some(2.0)).unwrap();
        assert!(engulf_family(&d, &band).is_err());
    }
}
