//! Density fields: strictly positive node-sampled volume forms with analytic
//! tail models past the truncation window.
//!
//! A field on a noncompact domain carries one tail model per end. The model
//! fixes both the mass beyond the window and the pointwise density there, and
//! the window-edge samples must agree with the model's edge value, so the
//! sampled part and the analytic part glue continuously.

mod jmap;
mod map;

pub use jmap::{j_under_map, preimage_mass, slab_mass_seen, AxialCumulative};
pub(crate) use map::node_coords;
pub use map::{DiffeoMap, EndBehavior, IsotopyPath};

use crate::domain::{region_algebra, Domain, Region, SetOp};
use crate::util::{close_rel, tol};
use crate::{Error, Result};

/// Analytic description of a field beyond the window, per end.
#[derive(Debug, Clone, PartialEq)]
pub enum TailModel {
    /// Constant pointwise density; infinite reservoir.
    ConstantRate { density: f64 },
    /// Exponentially decaying tail with the given total mass beyond the
    /// window edge and decay rate per unit collar length.
    Decaying { mass: f64, rate: f64 },
}

impl TailModel {
    pub fn is_finite(&self) -> bool {
        matches!(self, TailModel::Decaying { .. })
    }

    /// Pointwise density at collar coordinate u >= T, for window radius T
    /// and transverse cross-section length `cross`.
    pub fn density_at(&self, u: f64, t: f64, cross: f64) -> f64 {
        match *self {
            TailModel::ConstantRate { density } => density,
            TailModel::Decaying { mass, rate } => {
                mass * rate / cross * (-rate * (u - t)).exp()
            }
        }
    }

    /// Mass per unit collar length at u >= T.
    pub fn linear_density(&self, u: f64, t: f64, cross: f64) -> f64 {
        self.density_at(u, t, cross) * cross
    }

    /// Mass of the tail past collar coordinate u >= T.
    pub fn mass_beyond(&self, u: f64, t: f64) -> f64 {
        match *self {
            TailModel::ConstantRate { .. } => f64::INFINITY,
            TailModel::Decaying { mass, rate } => mass * (-rate * (u - t)).exp(),
        }
    }

    /// Mass between collar coordinates a <= b, both >= T.
    pub fn mass_between(&self, a: f64, b: f64, t: f64, cross: f64) -> f64 {
        match *self {
            TailModel::ConstantRate { density } => density * cross * (b - a),
            TailModel::Decaying { .. } => {
                self.mass_beyond(a, t) - self.mass_beyond(b, t)
            }
        }
    }

    /// Edge value the window samples must take for the glue to be
    /// continuous.
    pub fn edge_density(&self, cross: f64) -> f64 {
        match *self {
            TailModel::ConstantRate { density } => density,
            TailModel::Decaying { mass, rate } => mass * rate / cross,
        }
    }
}

/// A strictly positive sampled density with tail models.
#[derive(Debug, Clone)]
pub struct DensityField {
    pub domain: Domain,
    samples: Vec<f64>,
    tails: Vec<TailModel>,
}

impl DensityField {
    /// Validating constructor: positivity, sizes, admissible tail
    /// parameters, and window-edge consistency with the tail models.
    pub fn new(domain: Domain, samples: Vec<f64>, tails: Vec<TailModel>) -> Result<DensityField> {
        let f = DensityField::from_raw(domain, samples, tails)?;
        f.check_edges()?;
        Ok(f)
    }

    /// Constructor without the edge-consistency check, for fields arising
    /// from resampling, where interior data is authoritative.
    pub(crate) fn from_raw(
        domain: Domain,
        samples: Vec<f64>,
        tails: Vec<TailModel>,
    ) -> Result<DensityField> {
        if samples.len() != domain.node_count() {
            return Err(Error::BadField(format!(
                "expected {} samples, got {}",
                domain.node_count(),
                samples.len()
            )));
        }
        if tails.len() != domain.ends.len() {
            return Err(Error::BadField(format!(
                "expected {} tail models, got {}",
                domain.ends.len(),
                tails.len()
            )));
        }
        for (i, &s) in samples.iter().enumerate() {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::BadField(format!(
                    "sample {i} is {s}; densities must be positive and finite"
                )));
            }
        }
        for (k, tm) in tails.iter().enumerate() {
            let ok = match *tm {
                TailModel::ConstantRate { density } => density.is_finite() && density > 0.0,
                TailModel::Decaying { mass, rate } => {
                    mass.is_finite() && mass > 0.0 && rate.is_finite() && rate > 0.0
                }
            };
            if !ok {
                return Err(Error::BadField(format!(
                    "tail model for end {} has non-positive parameters",
                    domain.ends[k].id
                )));
            }
        }
        Ok(DensityField {
            domain,
            samples,
            tails,
        })
    }

    fn check_edges(&self) -> Result<()> {
        for (k, e) in self.domain.ends.iter().enumerate() {
            let cross = self.domain.cross_section(e.axis);
            let want = self.tails[k].edge_density(cross);
            for idx in edge_nodes(&self.domain, e) {
                let got = self.samples[idx];
                if !close_rel(got, want, tol::EDGE_CONSISTENCY_REL) {
                    return Err(Error::BadField(format!(
                        "window edge sample {got} at end {} disagrees with \
                         the tail edge density {want}",
                        e.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn tails(&self) -> &[TailModel] {
        &self.tails
    }

    pub fn tail_of(&self, end_id: &str) -> Result<&TailModel> {
        let k = self
            .domain
            .ends
            .iter()
            .position(|e| e.id == end_id)
            .ok_or_else(|| Error::BadField(format!("no end {end_id:?}")))?;
        Ok(&self.tails[k])
    }

    /// Ids of ends with finite tail mass.
    pub fn finite_ends(&self) -> Vec<String> {
        self.domain
            .ends
            .iter()
            .zip(&self.tails)
            .filter(|(_, t)| t.is_finite())
            .map(|(e, _)| e.id.clone())
            .collect()
    }

    /// Pointwise density, valid beyond the window through the tail models.
    pub fn density_at(&self, x: &[f64]) -> f64 {
        if let Some(axis) = self.domain.kind.noncompact_axis() {
            let ax = &self.domain.axes[axis];
            for (k, e) in self.domain.ends.iter().enumerate() {
                let u = e.sign as f64 * x[axis];
                let edge = if e.sign > 0 { ax.hi } else { -ax.lo };
                if u > edge {
                    let cross = self.domain.cross_section(axis);
                    return self.tails[k].density_at(u, edge, cross);
                }
            }
        }
        self.domain.interp(&self.samples, x)
    }

    /// Mass of the window part of a region: corner-mean times cell volume,
    /// exact for the multilinear interpolant.
    pub fn window_mass(&self, r: &Region) -> Result<f64> {
        self.domain.expect_fp(r.domain_fp(), "region")?;
        let vol = self.domain.cell_volume();
        let mut total = 0.0;
        for c in 0..self.domain.cell_count() {
            if !r.cell(c) {
                continue;
            }
            let corners = self.domain.cell_corner_nodes(c);
            let mean: f64 =
                corners.iter().map(|&i| self.samples[i]).sum::<f64>() / corners.len() as f64;
            total += mean * vol;
        }
        Ok(total)
    }

    /// Mass of a region including flagged tails. Infinite when a flagged
    /// tail has constant rate.
    pub fn mass(&self, r: &Region) -> Result<f64> {
        let mut total = self.window_mass(r)?;
        for (k, _e) in self.domain.ends.iter().enumerate() {
            if r.tail(k) {
                total += self.tails[k].mass_beyond(self.domain.truncation, self.domain.truncation);
            }
        }
        Ok(total)
    }

    pub fn total_mass(&self) -> f64 {
        self.mass(&Region::full(&self.domain)).unwrap()
    }

    /// Transfer functional J(A, B) = mass(A - B) - mass(B - A). Requires the
    /// symmetric difference to have finite mass.
    pub fn j_transfer(&self, a: &Region, b: &Region) -> Result<f64> {
        let d = &self.domain;
        let sym = region_algebra(d, a, b, SetOp::SymmetricDifference)?;
        for (k, e) in d.ends.iter().enumerate() {
            if sym.tail(k) && !self.tails[k].is_finite() {
                return Err(Error::InfiniteSymmetricDifference(format!(
                    "regions disagree on the infinite-mass end {}",
                    e.id
                )));
            }
        }
        let amb = region_algebra(d, a, b, SetOp::Difference)?;
        let bma = region_algebra(d, b, a, SetOp::Difference)?;
        Ok(self.mass(&amb)? - self.mass(&bma)?)
    }

    /// Sup-norm distance between the window samples of two fields.
    pub fn sup_diff(&self, other: &DensityField) -> Result<f64> {
        self.domain
            .expect_fp(other.domain.fingerprint(), "other field")?;
        Ok(self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Sup of window samples.
    pub fn sup(&self) -> f64 {
        self.samples.iter().cloned().fold(0.0, f64::max)
    }
}

/// Node indices of the window edge layer of an end.
fn edge_nodes(d: &Domain, e: &crate::domain::EndDescriptor) -> Vec<usize> {
    let ax = &d.axes[e.axis];
    let edge = if e.sign > 0 { ax.nodes - 1 } else { 0 };
    match d.ndim() {
        1 => vec![edge],
        _ => {
            let other = 1 - e.axis;
            (0..d.axes[other].nodes)
                .map(|j| {
                    let mut ix = [0usize; 2];
                    ix[e.axis] = edge;
                    ix[other] = j;
                    d.node_idx(&ix)
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Kind;

    fn line(t: f64, n: usize) -> Domain {
        Domain::new(Kind::Line, &[[-t, t]], &[n], Some(t), None).unwrap()
    }

    /// Lebesgue on the line: density 1 everywhere, constant tails.
    fn lebesgue(d: &Domain) -> DensityField {
        DensityField::new(
            d.clone(),
            vec![1.0; d.node_count()],
            vec![
                TailModel::ConstantRate { density: 1.0 },
                TailModel::ConstantRate { density: 1.0 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn slab_mass_is_length_for_lebesgue() {
        let d = line(8.0, 129);
        let mu = lebesgue(&d);
        let r = Region::slab(&d, Some(-2.0), Some(3.0)).unwrap();
        // Cells with centers in [-2, 3]: exactly the cells covering [-2, 3].
        let m = mu.mass(&r).unwrap();
        assert!((m - 5.0).abs() < 1e-12);
    }

    #[test]
    fn flagged_constant_tail_is_infinite() {
        let d = line(8.0, 129);
        let mu = lebesgue(&d);
        let r = Region::slab(&d, Some(0.0), None).unwrap();
        assert_eq!(mu.mass(&r).unwrap(), f64::INFINITY);
        assert!(mu.finite_ends().is_empty());
    }

    #[test]
    fn decaying_tail_mass_frozen_value() {
        let tm = TailModel::Decaying {
            mass: 0.5,
            rate: 2.0,
        };
        // Mass past u = 8.3 is 0.5 * exp(-2 * 0.3) = 0.274405818047...
        let got = tm.mass_beyond(8.3, 8.0);
        assert!((got - 0.2744058180470132).abs() < 1e-15);
        // The tail integrates to its declared mass.
        assert!((tm.mass_beyond(8.0, 8.0) - 0.5).abs() < 1e-15);
        assert_eq!(tm.edge_density(1.0), 1.0);
    }

    #[test]
    fn edge_consistency_is_enforced() {
        let d = line(8.0, 129);
        let mut s = vec![1.0; d.node_count()];
        s[0] = 2.0; // window edge sample off the tail value
        let r = DensityField::new(
            d,
            s,
            vec![
                TailModel::ConstantRate { density: 1.0 },
                TailModel::ConstantRate { density: 1.0 },
            ],
        );
        assert!(r.is_err());
    }

    #[test]
    fn j_transfer_matches_slab_masses() {
        let d = line(8.0, 129);
        let mu = lebesgue(&d);
        let a = Region::slab(&d, Some(-1.0), Some(4.0)).unwrap();
        let b = Region::slab(&d, Some(0.0), Some(3.0)).unwrap();
        // J = |[-1,0]| + |[3,4]| = 2 on one side, 0 on the other.
        let j = mu.j_transfer(&a, &b).unwrap();
        assert!((j - 2.0).abs() < 1e-12);
        assert!((mu.j_transfer(&b, &a).unwrap() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn j_transfer_refuses_infinite_symmetric_difference() {
        let d = line(8.0, 129);
        let mu = lebesgue(&d);
        let a = Region::slab(&d, Some(0.0), None).unwrap();
        let b = Region::slab(&d, Some(-8.0), Some(0.0)).unwrap();
        assert!(matches!(
            mu.j_transfer(&a, &b),
            Err(Error::InfiniteSymmetricDifference(_))
        ));
        // Same end owned by both regions cancels and stays finite.
        let a2 = Region::slab(&d, Some(1.0), None).unwrap();
        let b2 = Region::slab(&d, Some(2.0), None).unwrap();
        let j = mu.j_transfer(&a2, &b2).unwrap();
        assert!((j - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cylinder_mass_includes_cross_section() {
        let d = Domain::new(
            Kind::Cylinder,
            &[[0.0, 2.0], [-4.0, 4.0]],
            &[16, 65],
            Some(4.0),
            None,
        )
        .unwrap();
        let mu = DensityField::new(
            d.clone(),
            vec![3.0; d.node_count()],
            vec![
                TailModel::ConstantRate { density: 3.0 },
                TailModel::ConstantRate { density: 3.0 },
            ],
        )
        .unwrap();
        let r = Region::slab(&d, Some(-1.0), Some(1.0)).unwrap();
        // Volume 2 x 2 = 4 at density 3.
        assert!((mu.mass(&r).unwrap() - 12.0).abs() < 1e-9);
    }

    #[test]
    fn decaying_edge_density_scales_with_cross_section() {
        // On a cylinder with circumference 2, a tail of mass 1 and rate 1
        // must meet the window at pointwise density 1 * 1 / 2 = 0.5.
        let tm = TailModel::Decaying {
            mass: 1.0,
            rate: 1.0,
        };
        assert_eq!(tm.edge_density(2.0), 0.5);
        // And the linear density there is mass * rate = 1.
        assert_eq!(tm.linear_density(4.0, 4.0, 2.0), 1.0);
    }
}
