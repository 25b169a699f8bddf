//! End charges: finitely additive weights on the ends of a domain, and the
//! charge a diffeomorphism carries toward each end.
//!
//! A charge assigns a real value to every end; its value on a clopen set of
//! ends is the sum over members, so finite additivity holds by construction.
//! Relative to a reference density, an admissible charge sums to zero over
//! all ends and vanishes on every end holding finite mass. The charge of a
//! map h against omega measures, per end, the omega-mass the collar
//! representative C of that end gains when pulled back through h.

use std::collections::BTreeMap;

use crate::domain::{representative_region, Domain};
use crate::fields::{j_under_map, DensityField, DiffeoMap};
use crate::util::tol;
use crate::{Error, Result};

/// Signed weight per end id. With finitely many ends the clopen algebra is
/// the power set, so a per-end vector carries the whole measure.
#[derive(Debug, Clone, PartialEq)]
pub struct EndCharge {
    fp: u64,
    values: BTreeMap<String, f64>,
}

impl EndCharge {
    /// The zero charge on d's ends.
    pub fn zero(d: &Domain) -> Self {
        EndCharge {
            fp: d.fingerprint(),
            values: d.ends.iter().map(|e| (e.id.clone(), 0.0)).collect(),
        }
    }

    /// Charge with the given per-end values; ends not named stay zero.
    pub fn from_values(d: &Domain, vals: &[(&str, f64)]) -> Result<Self> {
        let mut c = EndCharge::zero(d);
        for &(id, v) in vals {
            if !v.is_finite() {
                return Err(Error::ChargeInvalid(format!(
                    "value {v} on end {id:?}"
                )));
            }
            match c.values.get_mut(id) {
                Some(slot) => *slot = v,
                None => return Err(Error::ChargeInvalid(format!("no end {id:?}"))),
            }
        }
        Ok(c)
    }

    /// Fingerprint of the domain the charge lives on.
    pub fn domain_fp(&self) -> u64 {
        self.fp
    }

    /// Value on one end; None when the id is unknown.
    pub fn value(&self, end_id: &str) -> Option<f64> {
        self.values.get(end_id).copied()
    }

    /// Value on a clopen set of ends: the sum over members.
    pub fn value_on(&self, end_ids: &[&str]) -> Result<f64> {
        let mut s = 0.0;
        for id in end_ids {
            s += self
                .value(id)
                .ok_or_else(|| Error::ChargeInvalid(format!("no end {id:?}")))?;
        }
        Ok(s)
    }

    /// Value on the full end set.
    pub fn total(&self) -> f64 {
        self.values.values().sum()
    }

    /// Per-end values in id order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.values.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Outcome of an admissibility check, with one line per violation.
#[derive(Debug, Clone)]
pub struct ChargeCheck {
    pub ok: bool,
    pub violations: Vec<String>,
}

/// Checks that c could be the charge of some omega-preserving map: the
/// values must sum to zero, and every end holding finite omega-mass must
/// carry zero charge (nothing can keep flowing toward a finite reservoir).
pub fn validate_charge(c: &EndCharge, omega: &DensityField) -> Result<ChargeCheck> {
    omega.domain.expect_fp(c.fp, "charge")?;
    let mut violations = Vec::new();
    let sum = c.total();
    if sum.abs() > tol::CHARGE_ADMISSIBLE_ABS {
        violations.push(format!("charge sum {sum:.3e} is not zero"));
    }
    for id in omega.finite_ends() {
        let v = c.value(&id).expect("domain end");
        if v.abs() > tol::CHARGE_ADMISSIBLE_ABS {
            violations.push(format!(
                "end {id:?} holds finite mass but carries charge {v:.3e}"
            ));
        }
    }
    Ok(ChargeCheck {
        ok: violations.is_empty(),
        violations,
    })
}

/// The charge h carries toward each end of omega's domain: per end, the
/// omega-mass J(h^-1 C, C) its collar representative C gains under pullback.
/// Admissible maps are identity or a pure shift far out on each end, so the
/// symmetric difference h^-1 C vs C stays compact and every value is finite.
pub fn end_charge_of(h: &DiffeoMap, omega: &DensityField) -> Result<EndCharge> {
    let d = &omega.domain;
    d.expect_fp(h.domain.fingerprint(), "map")?;
    let mut c = EndCharge::zero(d);
    for e in &d.ends {
        let rep = representative_region(d, &[&e.id])?;
        let v = j_under_map(omega, h, &rep)?;
        assert!(v.is_finite(), "charge toward end {} is not finite", e.id);
        *c.values.get_mut(&e.id).expect("domain end") = v;
    }
    Ok(c)
}

/// s*a + t*b per end.
pub fn charge_linear(a: &EndCharge, b: &EndCharge, s: f64, t: f64) -> Result<EndCharge> {
    if a.fp != b.fp {
        return Err(Error::DomainMismatch("charges".into()));
    }
    let mut out = a.clone();
    for (id, v) in out.values.iter_mut() {
        *v = s * *v + t * b.values[id.as_str()];
    }
    Ok(out)
}

/// Sup-norm defect of h as an omega-preserving map, over the window.
pub fn preservation_residual(h: &DiffeoMap, omega: &DensityField) -> Result<f64> {
    h.pushforward(omega)?.sup_diff(omega)
}

/// Budget below which a map counts as omega-preserving on this grid.
pub fn preservation_budget(omega: &DensityField) -> f64 {
    tol::grid_budget(crate::moser::max_spacing(&omega.domain)) * omega.sup()
}

/// Whether h preserves omega to within the grid budget.
pub fn is_preserving(h: &DiffeoMap, omega: &DensityField) -> Result<bool> {
    Ok(preservation_residual(h, omega)? <= preservation_budget(omega))
}
