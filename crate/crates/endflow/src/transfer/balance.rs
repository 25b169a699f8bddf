//! Component balancing.
//!
//! One compactly generated diffeomorphism realizing a prescribed transfer
//! on a connected core and on every component of its complement at once.
//! The construction peels components one at a time: a recursive move
//! settles all but the first component against the enlarged core, then a
//! single confined engulfing move corrects the first component without
//! touching the settled ones. Corrections are re-measured against the
//! moves actually built, so the recursion depth does not stack error.

use crate::domain::{region_algebra, Domain, Region, SetOp};
use crate::err::{Error, Result};
use crate::fields::{DensityField, DiffeoMap};
use crate::transfer::engulf::{engulf_confined, engulf_transfer_seen};
use crate::transfer::{axial_extent, band_mass_seen, deep_coord, seen_j};
use crate::util::tol;

/// Seen mass of a slab region: mass of its premap preimage, infinite when
/// it owns a constant-rate tail.
pub(crate) fn seen_mass_of(
    mu: &DensityField,
    premap: Option<&DiffeoMap>,
    r: &Region,
) -> Result<f64> {
    let ext = axial_extent(&mu.domain, r)?;
    let lo = match ext.lo {
        Some(u) => u,
        None => match deep_coord(mu, premap, ext.axis, -1)? {
            Some(u) => u,
            None => return Ok(f64::INFINITY),
        },
    };
    let hi = match ext.hi {
        Some(u) => u,
        None => match deep_coord(mu, premap, ext.axis, 1)? {
            Some(u) => u,
            None => return Ok(f64::INFINITY),
        },
    };
    band_mass_seen(mu, premap, lo, hi)
}

/// Diffeomorphism realizing one mass target per region: targets[0] on the
/// core, targets[i] on parts[i - 1], each as J between the preimage of the
/// region and the region itself. Parts must list exactly the components of
/// the core's complement. Targets must cancel, and each must leave its
/// region positive seen mass. Every target zero returns the identity
/// bitwise.
pub fn balance_components(
    mu: &DensityField,
    core: &Region,
    parts: &[Region],
    targets: &[f64],
) -> Result<DiffeoMap> {
    let d = &mu.domain;
    d.expect_fp(core.domain_fp(), "core region")?;
    core.validate(d)?;
    if core.is_empty() {
        return Err(Error::BadRegion("core region is empty".into()));
    }
    if core.components(d).len() != 1 {
        return Err(Error::BadRegion("core region is disconnected".into()));
    }
    let comps = core.complement().components(d);
    if comps.len() != parts.len() {
        return Err(Error::BadRegion(format!(
            "{} parts listed, the core complement has {} components",
            parts.len(),
            comps.len()
        )));
    }
    for p in parts {
        d.expect_fp(p.domain_fp(), "part region")?;
        if !comps.iter().any(|c| c == p) {
            return Err(Error::BadRegion(
                "parts do not match the complement components".into(),
            ));
        }
    }
    balance_seen(mu, None, core, parts, targets)
}

/// Balance against the measure seen through premap. Returns the total
/// composition (the balancing move applied after premap) exactly as built,
/// so the verification here measures bitwise the maps the solves drove.
pub(crate) fn balance_seen(
    mu: &DensityField,
    premap: Option<&DiffeoMap>,
    core: &Region,
    parts: &[Region],
    targets: &[f64],
) -> Result<DiffeoMap> {
    if targets.len() != parts.len() + 1 {
        return Err(Error::InfeasibleTargets(format!(
            "expected {} targets, got {}",
            parts.len() + 1,
            targets.len()
        )));
    }
    let sum: f64 = targets.iter().sum();
    if sum.abs() > tol::TARGET_SUM_ABS {
        return Err(Error::InfeasibleTargets(format!(
            "targets sum to {sum:.3e}, not zero"
        )));
    }
    if targets.iter().all(|&a| a == 0.0) {
        return Ok(carry(premap, &mu.domain));
    }
    for (i, (r, &a)) in regions(core, parts).zip(targets).enumerate() {
        let m = seen_mass_of(mu, premap, r)?;
        if m.is_finite() && a <= -m + tol::FEASIBILITY_MARGIN {
            return Err(Error::InfeasibleTargets(format!(
                "target {a:.6e} for region {i} drains its available mass {m:.6e}"
            )));
        }
    }
    let total = balance_rec(mu, premap, core, parts, targets)?;
    for (i, (r, &a)) in regions(core, parts).zip(targets).enumerate() {
        let got = seen_j(mu, premap, &total, r)?;
        if (got - a).abs() > tol::BALANCE_J_ABS {
            return Err(Error::Numeric(format!(
                "balance residual {:.3e} on region {i} exceeds {:.0e}",
                (got - a).abs(),
                tol::BALANCE_J_ABS
            )));
        }
    }
    Ok(total)
}

fn regions<'a>(
    core: &'a Region,
    parts: &'a [Region],
) -> impl Iterator<Item = &'a Region> {
    std::iter::once(core).chain(parts.iter())
}

fn carry(premap: Option<&DiffeoMap>, d: &Domain) -> DiffeoMap {
    match premap {
        Some(p) => p.clone(),
        None => DiffeoMap::identity(d),
    }
}

fn balance_rec(
    mu: &DensityField,
    premap: Option<&DiffeoMap>,
    core: &Region,
    parts: &[Region],
    targets: &[f64],
) -> Result<DiffeoMap> {
    let d = &mu.domain;
    match parts.len() {
        // the cancelled sum forces the lone target to vanish
        0 => Ok(carry(premap, d)),
        1 => {
            let conf = region_algebra(d, core, &parts[0], SetOp::Union)?;
            let fam = engulf_confined(d, &parts[0], &conf)?;
            engulf_transfer_seen(mu, premap, targets[1], &fam)
        }
        _ => {
            // settle all but the first part against the enlarged core, then
            // correct the first part inside the enlarged core alone
            let union = region_algebra(d, core, &parts[0], SetOp::Union)?;
            let mut rec_targets = vec![targets[0] + targets[1]];
            rec_targets.extend_from_slice(&targets[2..]);
            let psi = balance_rec(mu, premap, &union, &parts[1..], &rec_targets)?;
            let got1 = seen_j(mu, premap, &psi, &parts[0])?;
            let fam = engulf_confined(d, &parts[0], &union)?;
            engulf_transfer_seen(mu, Some(&psi), targets[1] - got1, &fam)
        }
    }
}
