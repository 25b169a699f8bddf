//! End-to-end pipelines.
//!
//! Both pipelines share a spine: advance a pair of maps stage by stage
//! along a standard exhaustion until the allocation functional vanishes
//! through the requested depth, push the source density through one map
//! and the target density through the other, equalize blockwise, and
//! compose. The stages guarantee that the two pushforwards hold equal
//! mass on every bounded block, so the blockwise equalizer applies; past
//! the last level the pushforwards are spliced together and the residual
//! sample discrepancy out there is reported, not hidden. Depth is finite
//! by construction and the per-stage residuals are part of the result.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::domain::{region_algebra, standard_exhaustion, Exhaustion, Region, SetOp};
use crate::ends::{
    end_charge_of, preservation_budget, preservation_residual, validate_charge, EndCharge,
};
use crate::err::{Error, Result};
use crate::fields::{node_coords, DensityField, DiffeoMap, IsotopyPath};
use crate::moser::{max_spacing, moser_flow_solve, piecewise_moser, MoserProblem};
use crate::transfer::functional::AllocationFunctional;
use crate::transfer::stage::stage_balance;
use crate::util::tol;

/// Worst functional residual left after one stage, over the components of
/// the band between the level regions and the finite components beyond.
#[derive(Debug, Clone, Serialize)]
pub struct StageResidual {
    pub level: usize,
    pub residual: f64,
}

/// Result summary for end-charge realization.
#[derive(Debug, Clone, Serialize)]
pub struct RealizeReport {
    pub depth: usize,
    pub stages: Vec<StageResidual>,
    pub charge_target: BTreeMap<String, f64>,
    pub charge_achieved: BTreeMap<String, f64>,
    pub charge_residual: f64,
    pub preservation_residual: f64,
    pub preservation_budget: f64,
    pub repair_passes: usize,
    pub tail_residual: f64,
}

/// Result summary for volume form matching.
#[derive(Debug, Clone, Serialize)]
pub struct MatchReport {
    pub depth: usize,
    pub compact: bool,
    pub stages: Vec<StageResidual>,
    pub sup_residual: f64,
    pub sup_budget: f64,
    pub tail_residual: f64,
}

/// Realize a prescribed end charge by a diffeomorphism preserving omega,
/// together with an isotopy witness through the realizations of the
/// scaled charges.
pub fn realize_end_charge(
    omega: &DensityField,
    a: &EndCharge,
    depth: usize,
) -> Result<(DiffeoMap, IsotopyPath, RealizeReport)> {
    let d = &omega.domain;
    let (h, report) = realize_core(omega, a, depth)?;
    let path = if h.is_identity() {
        IsotopyPath::from_endpoint(&h)
    } else {
        let half = scale_charge(a, 0.5)?;
        let (h_half, _) = realize_core(omega, &half, depth)?;
        let path = IsotopyPath {
            times: vec![0.0, 0.5, 1.0],
            maps: vec![DiffeoMap::identity(d), h_half, h.clone()],
        };
        path.validate(d)?;
        path
    };
    Ok((h, path, report))
}

/// Realize the scaled charge t * a for t in [0, 1]. The realizations form
/// a path from the identity at t = 0 to the full realization at t = 1.
pub fn realize_end_charge_scaled(
    omega: &DensityField,
    a: &EndCharge,
    depth: usize,
    t: f64,
) -> Result<(DiffeoMap, RealizeReport)> {
    if !(0.0..=1.0).contains(&t) || !t.is_finite() {
        return Err(Error::OutOfRange(format!(
            "scale parameter {t} outside [0, 1]"
        )));
    }
    realize_core(omega, &scale_charge(a, t)?, depth)
}

/// Push the first volume form onto the second. Compact domains go through
/// a single global equalization; domains with ends run the staged
/// transfer first so the equalization becomes blockwise feasible.
pub fn match_volume_forms(
    mu: &DensityField,
    nu: &DensityField,
    depth: usize,
) -> Result<(DiffeoMap, MatchReport)> {
    let func = AllocationFunctional::volume(mu, nu)?;
    let d = &mu.domain;
    let budget = tol::solve_budget(max_spacing(d)) * nu.sup().max(mu.sup());
    if mu.samples() == nu.samples() && mu.tails() == nu.tails() {
        return Ok((
            DiffeoMap::identity(d),
            MatchReport {
                depth,
                compact: d.kind.noncompact_axis().is_none(),
                stages: Vec::new(),
                sup_residual: 0.0,
                sup_budget: budget,
                tail_residual: 0.0,
            },
        ));
    }
    if d.kind.noncompact_axis().is_none() {
        let collar = compact_collar(d);
        let problem = MoserProblem::new(mu.clone(), nu.clone(), collar)?;
        let (h, _) = moser_flow_solve(&problem)?;
        let resid = h.pushforward(mu)?.sup_diff(nu)?;
        gate_sup(resid, budget)?;
        return Ok((
            h,
            MatchReport {
                depth,
                compact: true,
                stages: Vec::new(),
                sup_residual: resid,
                sup_budget: budget,
                tail_residual: 0.0,
            },
        ));
    }
    let ex = standard_exhaustion(d, depth)?;
    let (f, g, stages) = run_stages(&func, &ex)?;
    let (h, tail_residual) = splice_and_equalize(mu, nu, &f, &g, &ex)?;
    let resid = h.pushforward(mu)?.sup_diff(nu)?;
    gate_sup(resid, budget)?;
    Ok((
        h,
        MatchReport {
            depth,
            compact: false,
            stages,
            sup_residual: resid,
            sup_budget: budget,
            tail_residual,
        },
    ))
}

fn realize_core(
    omega: &DensityField,
    a: &EndCharge,
    depth: usize,
) -> Result<(DiffeoMap, RealizeReport)> {
    let d = &omega.domain;
    let check = validate_charge(a, omega)?;
    if !check.ok {
        return Err(Error::ChargeInvalid(check.violations.join("; ")));
    }
    let target: BTreeMap<String, f64> = a.entries().map(|(e, v)| (e.to_string(), v)).collect();
    let budget = preservation_budget(omega);
    if a.entries().all(|(_, v)| v == 0.0) {
        let achieved = target.keys().map(|e| (e.clone(), 0.0)).collect();
        return Ok((
            DiffeoMap::identity(d),
            RealizeReport {
                depth,
                stages: Vec::new(),
                charge_target: target,
                charge_achieved: achieved,
                charge_residual: 0.0,
                preservation_residual: 0.0,
                preservation_budget: budget,
                repair_passes: 0,
                tail_residual: 0.0,
            },
        ));
    }
    let ex = standard_exhaustion(d, depth)?;
    let func = AllocationFunctional::charge(omega, a)?;
    let (f, g, stages) = run_stages(&func, &ex)?;
    let (mut h, tail_residual) = splice_and_equalize(omega, omega, &f, &g, &ex)?;

    // repair passes drive the preservation residual toward the grid
    // budget; a failed repair equalization leaves the last good map
    let mut resid = preservation_residual(&h, omega)?;
    let mut passes = 0usize;
    while resid > budget && passes < 3 {
        let pushed = h.pushforward(omega)?;
        let Ok((spliced, _)) = splice_past_last(&pushed, omega, &ex) else {
            break;
        };
        let Ok(repair) = piecewise_moser(&spliced, omega, &ex) else {
            break;
        };
        let candidate = repair.compose(&h)?;
        let cresid = preservation_residual(&candidate, omega)?;
        if cresid >= resid {
            break;
        }
        h = candidate;
        resid = cresid;
        passes += 1;
    }

    let achieved_charge = end_charge_of(&h, omega)?;
    let achieved: BTreeMap<String, f64> = achieved_charge
        .entries()
        .map(|(e, v)| (e.to_string(), v))
        .collect();
    let mut charge_residual = 0.0f64;
    for (e, &want) in &target {
        let got = achieved.get(e).copied().unwrap_or(0.0);
        charge_residual = charge_residual.max((got - want).abs());
    }
    if charge_residual > tol::STAGE_F_ABS {
        return Err(Error::Numeric(format!(
            "realized charge misses the target by {charge_residual:.3e}"
        )));
    }
    if resid > budget {
        return Err(Error::Numeric(format!(
            "preservation residual {resid:.3e} exceeds the budget {budget:.3e}"
        )));
    }
    Ok((
        h,
        RealizeReport {
            depth,
            stages,
            charge_target: target,
            charge_achieved: achieved,
            charge_residual,
            preservation_residual: resid,
            preservation_budget: budget,
            repair_passes: passes,
            tail_residual,
        },
    ))
}

fn scale_charge(a: &EndCharge, t: f64) -> Result<EndCharge> {
    crate::ends::charge_linear(a, a, t, 0.0)
}

fn gate_sup(resid: f64, budget: f64) -> Result<()> {
    if resid > budget {
        return Err(Error::Numeric(format!(
            "equalization residual {resid:.3e} exceeds the budget {budget:.3e}"
        )));
    }
    Ok(())
}

/// Fold the stage advance over the exhaustion levels, recording the worst
/// functional residual left on each level's verification family.
fn run_stages(
    func: &AllocationFunctional,
    ex: &Exhaustion,
) -> Result<(DiffeoMap, DiffeoMap, Vec<StageResidual>)> {
    let d = &func.field_f().domain;
    let mut f = DiffeoMap::identity(d);
    let mut g = f.clone();
    let mut stages = Vec::new();
    let mut lprev: Option<&Region> = None;
    for (i, lv) in ex.levels.iter().enumerate() {
        let (nf, ng) = stage_balance(&f, &g, &lv.k, &lv.l, lprev, func)?;
        f = nf;
        g = ng;
        let band = region_algebra(d, &lv.l, &lv.k, SetOp::Difference)?;
        let mut worst = 0.0f64;
        for c in band.components(d) {
            worst = worst.max(func.eval(&f, &g, &c)?.abs());
        }
        for c in lv.l.complement().components(d) {
            if func.in_class(&c)? {
                worst = worst.max(func.eval(&f, &g, &c)?.abs());
            }
        }
        stages.push(StageResidual {
            level: i + 1,
            residual: worst,
        });
        lprev = Some(&lv.l);
    }
    Ok((f, g, stages))
}

/// Push each density through its map, splice the source pushforward onto
/// the target one past the last level, equalize blockwise, and compose
/// into g^-1 o chi o f.
fn splice_and_equalize(
    src: &DensityField,
    dst: &DensityField,
    f: &DiffeoMap,
    g: &DiffeoMap,
    ex: &Exhaustion,
) -> Result<(DiffeoMap, f64)> {
    let fpush = f.pushforward(src)?;
    let gpush = g.pushforward(dst)?;
    let (spliced, tail_residual) = splice_past_last(&fpush, &gpush, ex)?;
    let chi = piecewise_moser(&spliced, &gpush, ex)?;
    let h = g.invert()?.compose(&chi)?.compose(f)?;
    Ok((h, tail_residual))
}

/// Replace the samples of the first field past the outermost level radius
/// by the second field's, adopting its tails, and report the largest
/// sample discrepancy the splice painted over.
fn splice_past_last(
    a: &DensityField,
    b: &DensityField,
    ex: &Exhaustion,
) -> Result<(DensityField, f64)> {
    let d = &a.domain;
    d.expect_fp(b.domain.fingerprint(), "splice target")?;
    let axis = d
        .kind
        .noncompact_axis()
        .ok_or_else(|| Error::BadDomain("splicing needs a truncated domain".into()))?;
    let ax = &d.axes[axis];
    let h = ax.spacing();
    let r_last = ex
        .levels
        .last()
        .ok_or_else(|| Error::ExhaustionTooDeep("no levels".into()))?
        .l_radius;
    // snap to the grid exactly like the blockwise equalizer does, so the
    // spliced region covers its agreement check
    let snap = ((r_last - ax.lo) / h).round().clamp(0.0, ax.nodes as f64 - 1.0);
    let r_cut = ax.node(snap as usize);
    let mut samples = a.samples().to_vec();
    let mut worst = 0.0f64;
    let mut coords = [0.0f64; 2];
    for idx in 0..d.node_count() {
        node_coords(d, idx, &mut coords);
        if coords[axis].abs() >= r_cut - 0.5 * h {
            let bv = b.samples()[idx];
            worst = worst.max((samples[idx] - bv).abs());
            samples[idx] = bv;
        }
    }
    let spliced = DensityField::from_raw(d.clone(), samples, b.tails().to_vec())?;
    Ok((spliced, worst))
}

/// Collar width for the single global equalization on a compact domain:
/// well inside every non-periodic axis but at least two grid cells wide.
fn compact_collar(d: &crate::domain::Domain) -> f64 {
    let hmax = max_spacing(d);
    let mut c = f64::INFINITY;
    for ax in &d.axes {
        if !ax.periodic {
            c = c.min(0.9 * ax.len() / 6.0);
        }
    }
    if c.is_finite() {
        c.min(2.5 * hmax).max(2.0 * hmax)
    } else {
        2.5 * hmax
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Domain, Kind};
    use crate::fields::TailModel;

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
    fn zero_charge_realizes_as_the_identity() {
        let d = line(129);
        let omega = lebesgue(&d);
        let a = EndCharge::zero(&d);
        let (h, path, rep) = realize_end_charge(&omega, &a, 2).unwrap();
        assert!(h.is_identity());
        assert_eq!(path.times, vec![0.0, 1.0]);
        assert_eq!(rep.charge_residual, 0.0);
        assert_eq!(rep.repair_passes, 0);
    }

    #[test]
    fn line_translation_charge_is_realized() {
        let d = line(257);
        let omega = lebesgue(&d);
        let a = EndCharge::from_values(&d, &[("e+", 1.0), ("e-", -1.0)]).unwrap();
        let (h, path, rep) = realize_end_charge(&omega, &a, 2).unwrap();
        assert!(rep.charge_residual <= tol::STAGE_F_ABS);
        assert!(rep.preservation_residual <= rep.preservation_budget);
        let got = end_charge_of(&h, &omega).unwrap();
        assert!((got.value("e+").unwrap() - 1.0).abs() <= tol::STAGE_F_ABS);
        assert!((got.value("e-").unwrap() + 1.0).abs() <= tol::STAGE_F_ABS);
        path.validate(&d).unwrap();
        assert_eq!(path.times.len(), 3);
        let mid = end_charge_of(&path.maps[1], &omega).unwrap();
        assert!((mid.value("e+").unwrap() - 0.5).abs() <= tol::STAGE_F_ABS);
    }

    #[test]
    fn scaled_realization_halves_the_charge() {
        let d = line(257);
        let omega = lebesgue(&d);
        let a = EndCharge::from_values(&d, &[("e+", 0.8), ("e-", -0.8)]).unwrap();
        let (h, rep) = realize_end_charge_scaled(&omega, &a, 2, 0.25).unwrap();
        assert!(rep.charge_residual <= tol::STAGE_F_ABS);
        let got = end_charge_of(&h, &omega).unwrap();
        assert!((got.value("e+").unwrap() - 0.2).abs() <= tol::STAGE_F_ABS);
        assert!(realize_end_charge_scaled(&omega, &a, 2, 1.5).is_err());
    }

    #[test]
    fn matching_equal_forms_is_the_identity() {
        let d = line(129);
        let mu = lebesgue(&d);
        let (h, rep) = match_volume_forms(&mu, &mu.clone(), 2).unwrap();
        assert!(h.is_identity());
        assert_eq!(rep.sup_residual, 0.0);
    }

    #[test]
    fn compact_matching_runs_the_global_equalizer() {
        let d = Domain::new(Kind::Interval, &[[0.0, 1.0]], &[129], None, None).unwrap();
        // mirror-image bumps: zero net mass, flat near both boundaries
        let samples: Vec<f64> = (0..d.node_count())
            .map(|i| {
                let x = d.axes[0].node(i);
                1.0 + 0.2 * crate::util::bump((x - 0.35) / 0.15)
                    - 0.2 * crate::util::bump((x - 0.65) / 0.15)
            })
            .collect();
        let nu = DensityField::new(d.clone(), samples, vec![]).unwrap();
        let mu = DensityField::new(d.clone(), vec![1.0; d.node_count()], vec![]).unwrap();
        let (hmap, rep) = match_volume_forms(&mu, &nu, 0).unwrap();
        assert!(rep.compact);
        assert!(rep.sup_residual <= rep.sup_budget);
        assert!(!hmap.is_identity());
    }

    #[test]
    fn noncompact_matching_moves_an_interior_bump() {
        let d = line(257);
        let mu = lebesgue(&d);
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
        let (h, rep) = match_volume_forms(&mu, &nu, 2).unwrap();
        assert!(!rep.compact);
        assert!(rep.sup_residual <= rep.sup_budget, "{rep:?}");
        let pushed = h.pushforward(&mu).unwrap();
        assert!(pushed.sup_diff(&nu).unwrap() <= rep.sup_budget);
    }

    #[test]
    fn mismatched_end_sets_are_rejected_up_front() {
        let d = line(129);
        let mu = lebesgue(&d);
        let tails = vec![
            TailModel::Decaying { mass: 1.0, rate: 1.0 },
            TailModel::ConstantRate { density: 1.0 },
        ];
        let mut samples = vec![1.0; d.node_count()];
        samples[d.node_count() - 1] = 1.0;
        let nu = DensityField::new(d.clone(), samples, tails);
        let nu = match nu {
            Ok(f) => f,
            Err(_) => return,
        };
        match match_volume_forms(&mu, &nu, 1) {
            Err(Error::EndSetMismatch(_)) | Err(Error::MassMismatch(_)) => {}
            other => panic!("expected a precondition failure, got {other:?}"),
        }
    }
}
