//! Exhaustion stages.
//!
//! One stage advances a pair of maps so that the allocation functional
//! vanishes one level deeper into the exhaustion. The source map is
//! balanced per component of the previous level's outer complement, with
//! cores cut by the inner region of the level; the target map is then
//! balanced symmetrically one region further out, against the updated
//! source. Components with infinite mass absorb the balancing remainder
//! evenly; when every component carries finite mass, the remainder is
//! residue carried in from the previous stage and is shaved off the last
//! target so the compactly supported move exists.

use crate::domain::{region_algebra, Region, SetOp};
use crate::err::{Error, Result};
use crate::fields::DiffeoMap;
use crate::transfer::balance::balance_seen;
use crate::transfer::functional::{split_against, AllocationFunctional};
use crate::util::tol;

enum Side {
    Source,
    Target,
}

/// Advance the pair (fprev, gprev) across one exhaustion level: k and l
/// are the level's inner and outer region, lprev the outer region of the
/// previous level. On return the functional vanishes, within stage
/// tolerance, on every component of the closed band between lprev and k
/// paired with gprev, and on every component of the closed band between k
/// and l and every finite component beyond l for the new pair.
pub fn stage_balance(
    fprev: &DiffeoMap,
    gprev: &DiffeoMap,
    k: &Region,
    l: &Region,
    lprev: Option<&Region>,
    func: &AllocationFunctional,
) -> Result<(DiffeoMap, DiffeoMap)> {
    let d = &func.field_f().domain;
    d.expect_fp(fprev.domain.fingerprint(), "source map")?;
    d.expect_fp(gprev.domain.fingerprint(), "target map")?;
    d.expect_fp(k.domain_fp(), "inner region")?;
    d.expect_fp(l.domain_fp(), "outer region")?;
    let subset = |a: &Region, b: &Region| -> Result<bool> {
        Ok(region_algebra(d, a, b, SetOp::Difference)?.is_empty())
    };
    if !subset(k, l)? || subset(l, k)? {
        return Err(Error::BadRegion(
            "outer region must strictly contain the inner region".into(),
        ));
    }
    if let Some(lp) = lprev {
        d.expect_fp(lp.domain_fp(), "previous outer region")?;
        if !subset(lp, k)? || subset(k, lp)? {
            return Err(Error::BadRegion(
                "inner region must strictly contain the previous outer region".into(),
            ));
        }
    }

    let fnew = advance(Side::Source, fprev, fprev, gprev, lprev, k, func)?;
    check_bands(func, &fnew, gprev, k, lprev, "source stage")?;
    let gnew = advance(Side::Target, gprev, &fnew, gprev, Some(k), l, func)?;
    check_bands(func, &fnew, &gnew, l, Some(k), "target stage")?;
    Ok((fnew, gnew))
}

/// Balance the moving map over every block of the outer complement. Blocks
/// are handled in component order; the accumulated composition is threaded
/// through each balance so the solves measure the maps actually built.
fn advance(
    side: Side,
    moving: &DiffeoMap,
    ef: &DiffeoMap,
    eg: &DiffeoMap,
    outer: Option<&Region>,
    inner: &Region,
    func: &AllocationFunctional,
) -> Result<DiffeoMap> {
    let field = match side {
        Side::Source => func.field_f(),
        Side::Target => func.field_g(),
    };
    let d = &field.domain;
    let blocks = match outer {
        Some(o) => o.complement().components(d),
        None => vec![Region::full(d)],
    };
    let mut total = moving.clone();
    for b in &blocks {
        let (core, parts) = split_against(d, b, inner)?;
        if core.is_empty() {
            return Err(Error::BadRegion(
                "stage block does not reach the inner region".into(),
            ));
        }
        if core.components(d).len() != 1 {
            return Err(Error::BadRegion("stage core is disconnected".into()));
        }
        let mut targets = vec![0.0; parts.len() + 1];
        let mut infinite = Vec::new();
        targets[0] = func.eval(ef, eg, &core)?;
        let mut sum = targets[0];
        for (i, p) in parts.iter().enumerate() {
            if func.in_class(p)? {
                let v = func.eval(ef, eg, p)?;
                targets[i + 1] = v;
                sum += v;
            } else {
                infinite.push(i + 1);
            }
        }
        if infinite.is_empty() {
            // all components carry finite mass: the remainder is residue
            // carried in from the previous stage
            if sum.abs() > tol::STAGE_F_ABS {
                return Err(Error::InfeasibleTargets(format!(
                    "stage block carries unbalanced allocation {sum:.3e}"
                )));
            }
            let last = targets.len() - 1;
            targets[last] -= sum;
        } else {
            let fill = -sum / infinite.len() as f64;
            for &i in &infinite {
                targets[i] = fill;
            }
        }
        if matches!(side, Side::Target) {
            for t in &mut targets {
                *t = -*t;
            }
        }
        total = balance_seen(field, Some(&total), &core, &parts, &targets)?;
    }
    Ok(total)
}

/// Gate the stage postcondition: the functional vanishes on each component
/// of the closed band between prev and cur, and on each finite component
/// beyond cur.
fn check_bands(
    func: &AllocationFunctional,
    f: &DiffeoMap,
    g: &DiffeoMap,
    cur: &Region,
    prev: Option<&Region>,
    label: &str,
) -> Result<()> {
    let d = &func.field_f().domain;
    let band = match prev {
        Some(p) => region_algebra(d, cur, p, SetOp::Difference)?,
        None => cur.clone(),
    };
    let mut probes = band.components(d);
    for c in cur.complement().components(d) {
        if func.in_class(&c)? {
            probes.push(c);
        }
    }
    for (i, c) in probes.iter().enumerate() {
        let v = func.eval(f, g, c)?;
        if v.abs() > tol::STAGE_F_ABS {
            return Err(Error::Numeric(format!(
                "{label} residual {:.3e} on component {i} exceeds {:.0e}",
                v.abs(),
                tol::STAGE_F_ABS
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{standard_exhaustion, Domain, Kind};
    use crate::ends::EndCharge;
    use crate::fields::{DensityField, TailModel};

    fn line(n: usize) -> Domain {
        Domain::new(Kind::Line, &[[-8.0, 8.0]], &[n], Some(8.0), None).unwrap()
    }

    fn lebesgue(d: &Domain) -> DensityField {
        let tails = d
            .ends
            .iter()
            .map(|_| TailModel::ConstantRate { density: 1.0 })
            .collect();
        DensityField::new(d.clone(), vec![1.0; d.node_count()], tails).unwrap()
    }

    #[test]
    fn charge_stage_reaches_the_stage_tolerance() {
        let d = line(257);
        let mu = lebesgue(&d);
        let a = EndCharge::from_values(&d, &[("e+", 1.0), ("e-", -1.0)]).unwrap();
        let func = AllocationFunctional::charge(&mu, &a).unwrap();
        let ex = standard_exhaustion(&d, 2).unwrap();
        let id = DiffeoMap::identity(&d);
        let lv = &ex.levels[0];
        let (f1, g1) = stage_balance(&id, &id, &lv.k, &lv.l, None, &func).unwrap();
        // the realized transfer toward each end matches the charge at the
        // level frontier
        let upper = Region::slab(&d, Some(lv.l_radius), None).unwrap();
        let v = func.eval(&f1, &g1, &upper).unwrap();
        assert!(v.abs() <= tol::STAGE_F_ABS, "upper residual {v}");
        let lv2 = &ex.levels[1];
        let (f2, g2) = stage_balance(&f1, &g1, &lv2.k, &lv2.l, Some(&lv.l), &func).unwrap();
        let upper2 = Region::slab(&d, Some(lv2.l_radius), None).unwrap();
        let v2 = func.eval(&f2, &g2, &upper2).unwrap();
        assert!(v2.abs() <= tol::STAGE_F_ABS, "deeper residual {v2}");
    }

    #[test]
    fn volume_stage_balances_an_interior_imbalance() {
        let d = line(257);
        let mu = lebesgue(&d);
        // move a little mass from the upper to the lower half, keeping the
        // window total
        let samples: Vec<f64> = (0..d.node_count())
            .map(|i| {
                let u = d.axes[0].node(i);
                1.0 + 0.15 * crate::util::bump((u + 1.5) / 1.2)
                    - 0.15 * crate::util::bump((u - 1.5) / 1.2)
            })
            .collect();
        let tails = d
            .ends
            .iter()
            .map(|_| TailModel::ConstantRate { density: 1.0 })
            .collect();
        let nu = DensityField::new(d.clone(), samples, tails).unwrap();
        let func = AllocationFunctional::volume(&mu, &nu).unwrap();
        let ex = standard_exhaustion(&d, 1).unwrap();
        let id = DiffeoMap::identity(&d);
        let lv = &ex.levels[0];
        let (f1, g1) = stage_balance(&id, &id, &lv.k, &lv.l, None, &func).unwrap();
        for c in lv.l.complement().components(&d) {
            // infinite components are outside the volume class; the stage
            // leaves the band components balanced instead
            assert!(!func.in_class(&c).unwrap());
        }
        let band = region_algebra(&d, &lv.l, &lv.k, SetOp::Difference).unwrap();
        for c in band.components(&d) {
            let v = func.eval(&f1, &g1, &c).unwrap();
            assert!(v.abs() <= tol::STAGE_F_ABS);
        }
    }

    #[test]
    fn zero_allocation_keeps_the_identity_bitwise() {
        let d = line(129);
        let mu = lebesgue(&d);
        let a = EndCharge::zero(&d);
        let func = AllocationFunctional::charge(&mu, &a).unwrap();
        let ex = standard_exhaustion(&d, 1).unwrap();
        let id = DiffeoMap::identity(&d);
        let lv = &ex.levels[0];
        let (f1, g1) = stage_balance(&id, &id, &lv.k, &lv.l, None, &func).unwrap();
        assert!(f1.is_identity());
        assert!(g1.is_identity());
    }

    #[test]
    fn bad_nesting_is_rejected() {
        let d = line(129);
        let mu = lebesgue(&d);
        let a = EndCharge::zero(&d);
        let func = AllocationFunctional::charge(&mu, &a).unwrap();
        let id = DiffeoMap::identity(&d);
        let k = Region::slab(&d, Some(-2.0), Some(2.0)).unwrap();
        assert!(stage_balance(&id, &id, &k, &k, None, &func).is_err());
    }
}
