//! Mass transfer toward ends and the pipelines built on it.
//!
//! The basic mechanism is an engulfing family: a one-parameter group of
//! diffeomorphisms advancing a single frontier along the noncompact axis.
//! The mass it transfers is continuous and strictly increasing in the time
//! parameter and sweeps the exact open interval that the confinement allows,
//! so solving for the time realizes any admissible transfer. Balancing
//! stacks such moves to hit one mass target per complementary component,
//! stages iterate balancing over an exhaustion against an allocation
//! functional, and the pipelines close the remaining compactly supported
//! discrepancy with piecewise equalization.

mod balance;
mod engulf;
mod functional;
mod pipeline;
mod stage;

pub use balance::balance_components;
pub use engulf::{engulf_family, engulf_transfer, lambda_of, transfer_time, EngulfFamily};
pub use functional::{AllocationFunctional, FunctionalTag};
pub use pipeline::{
    match_volume_forms, realize_end_charge, realize_end_charge_scaled, MatchReport,
    RealizeReport, StageResidual,
};
pub use stage::stage_balance;

use crate::domain::{Domain, Region};
use crate::err::{Error, Result};
use crate::fields::{j_under_map, slab_mass_seen, AxialCumulative, DensityField, DiffeoMap};

/// Axial footprint of a transversely full region: the contiguous run of
/// cells it occupies along the noncompact axis. A bound is the node
/// coordinate of the bounding face, or None where the region runs into a
/// tail on that side.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Extent {
    pub axis: usize,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

pub(crate) fn axial_extent(d: &Domain, r: &Region) -> Result<Extent> {
    let axis = d.kind.noncompact_axis().ok_or_else(|| {
        Error::BadDomain("engulfing needs a noncompact direction".into())
    })?;
    d.expect_fp(r.domain_fp(), "region")?;
    let acells = d.axes[axis].cells();
    let mut occupied = vec![false; acells];
    if d.ndim() == 1 {
        for (i, o) in occupied.iter_mut().enumerate() {
            *o = r.cell(i);
        }
    } else {
        let t_axis = 1 - axis;
        let tc = d.axes[t_axis].cells();
        for (i, o) in occupied.iter_mut().enumerate() {
            let mut any = false;
            let mut all = true;
            for j in 0..tc {
                let ix = if axis == 0 { [i, j] } else { [j, i] };
                let c = r.cell(d.cell_idx(&ix));
                any |= c;
                all &= c;
            }
            if any != all {
                return Err(Error::BadRegion(
                    "region is not a full axial slab".into(),
                ));
            }
            *o = any;
        }
    }
    let Some(first) = occupied.iter().position(|&b| b) else {
        return Err(Error::BadRegion("empty region has no axial extent".into()));
    };
    let last = occupied.iter().rposition(|&b| b).unwrap();
    if occupied[first..=last].iter().any(|&b| !b) {
        return Err(Error::BadRegion(
            "region is not axially connected".into(),
        ));
    }
    let mut lo = Some(d.axes[axis].node(first));
    let mut hi = Some(d.axes[axis].node(last + 1));
    for (k, e) in d.ends.iter().enumerate() {
        if e.axis == axis && r.tail(k) {
            if e.sign > 0 {
                hi = None;
            } else {
                lo = None;
            }
        }
    }
    Ok(Extent { axis, lo, hi })
}

/// Largest outward collar excursion the map can produce, over all its
/// composition stages.
pub(crate) fn shift_margin(premap: Option<&DiffeoMap>) -> f64 {
    premap.map_or(0.0, |p| p.shift_margin())
}

/// Band mass of the seen measure: mu of the premap preimage of [a, b].
pub(crate) fn band_mass_seen(
    mu: &DensityField,
    premap: Option<&DiffeoMap>,
    a: f64,
    b: f64,
) -> Result<f64> {
    match premap {
        Some(p) => slab_mass_seen(mu, p, a, b),
        None => Ok(AxialCumulative::new(mu)?.band_mass(a, b)),
    }
}

/// Coordinate deep enough into the given end that all decaying-tail
/// remainders beyond it, of the seen measure, sit below roundoff at unit
/// masses. Errors on a constant-rate tail, whose remainder is infinite.
pub(crate) fn deep_coord(
    mu: &DensityField,
    premap: Option<&DiffeoMap>,
    axis: usize,
    sign: i8,
) -> Result<Option<f64>> {
    let d = &mu.domain;
    for e in &d.ends {
        if e.axis == axis && e.sign == sign {
            let tail = mu.tail_of(&e.id)?;
            return Ok(match tail {
                crate::fields::TailModel::ConstantRate { .. } => None,
                crate::fields::TailModel::Decaying { rate, .. } => {
                    let depth = d.truncation + 45.0 / rate + shift_margin(premap) + 1.0;
                    Some(sign as f64 * depth)
                }
            });
        }
    }
    Err(Error::BadDomain(format!(
        "no end on axis {axis} side {sign}"
    )))
}

/// J of the balancing move alone, measured through the as-built total map:
/// with total = phi composed with premap, this is J of the region between
/// the phi preimage and itself, under the measure seen through premap.
pub(crate) fn seen_j(
    mu: &DensityField,
    premap: Option<&DiffeoMap>,
    total: &DiffeoMap,
    r: &Region,
) -> Result<f64> {
    let j_total = j_under_map(mu, total, r)?;
    let j0 = match premap {
        Some(p) => j_under_map(mu, p, r)?,
        None => 0.0,
    };
    Ok(j_total - j0)
}
