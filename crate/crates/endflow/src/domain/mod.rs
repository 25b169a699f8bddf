//! Model domains: uniform grids on seven 1D/2D manifolds, with truncation
//! windows and end descriptors for the noncompact ones.
//!
//! A domain is a product of at most two axes. Periodic axes close up (circle,
//! torus, the angular direction of a cylinder); non-periodic axes either carry
//! genuine boundary (interval, rectangle, the origin of a half line) or are
//! truncations of an infinite direction (line, half line, the axial direction
//! of a cylinder). Truncated directions end in "ends", each with an id, an
//! orientation sign, and a collar start radius.
//!
//! Grids are uniform per axis. Non-periodic axes place `nodes` points with
//! spacing (hi-lo)/(nodes-1) including both endpoints; periodic axes place
//! `nodes` points with spacing (hi-lo)/nodes, the last wrapping to the first.
//! Sample vectors are row-major with axis 0 slowest.

mod exhaustion;
mod region;

pub use exhaustion::{standard_exhaustion, exhaustion_with_radii, ExLevel, Exhaustion};
pub use region::{end_set_of, region_algebra, representative_region, Region, SetOp};

use crate::util::{fnv1a64, fnv_push_f64};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Smallest admissible node count per axis.
pub const MIN_NODES: usize = 16;

/// The seven supported manifold kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Interval,
    Circle,
    Rectangle,
    Torus,
    Line,
    HalfLine,
    Cylinder,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Interval => "interval",
            Kind::Circle => "circle",
            Kind::Rectangle => "rectangle",
            Kind::Torus => "torus",
            Kind::Line => "line",
            Kind::HalfLine => "half_line",
            Kind::Cylinder => "cylinder",
        }
    }

    pub fn parse(s: &str) -> Result<Kind> {
        Ok(match s {
            "interval" => Kind::Interval,
            "circle" => Kind::Circle,
            "rectangle" => Kind::Rectangle,
            "torus" => Kind::Torus,
            "line" => Kind::Line,
            "half_line" => Kind::HalfLine,
            "cylinder" => Kind::Cylinder,
            other => {
                return Err(Error::BadDomain(format!("unknown kind {other:?}")));
            }
        })
    }

    /// Number of grid axes.
    pub fn ndim(self) -> usize {
        match self {
            Kind::Interval | Kind::Circle | Kind::Line | Kind::HalfLine => 1,
            Kind::Rectangle | Kind::Torus | Kind::Cylinder => 2,
        }
    }

    /// True when the manifold has no ends.
    pub fn compact(self) -> bool {
        matches!(
            self,
            Kind::Interval | Kind::Circle | Kind::Rectangle | Kind::Torus
        )
    }

    /// Index of the truncated (end-carrying) axis, if any.
    pub fn noncompact_axis(self) -> Option<usize> {
        match self {
            Kind::Line | Kind::HalfLine => Some(0),
            Kind::Cylinder => Some(1),
            _ => None,
        }
    }
}

/// One grid axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
    pub periodic: bool,
}

impl Axis {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn spacing(&self) -> f64 {
        if self.periodic {
            self.len() / self.nodes as f64
        } else {
            self.len() / (self.nodes - 1) as f64
        }
    }

    /// Number of grid cells along this axis.
    pub fn cells(&self) -> usize {
        if self.periodic {
            self.nodes
        } else {
            self.nodes - 1
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.spacing()
    }

    /// Fold a coordinate into [lo, hi) for periodic axes; pass through
    /// otherwise.
    pub fn wrap(&self, x: f64) -> f64 {
        if !self.periodic {
            return x;
        }
        let l = self.len();
        let mut y = (x - self.lo) % l;
        if y < 0.0 {
            y += l;
        }
        self.lo + y
    }

    /// Cell index and in-cell fraction for a coordinate. Non-periodic
    /// coordinates are clamped to the axis range first.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let h = self.spacing();
        if self.periodic {
            let y = self.wrap(x) - self.lo;
            let mut c = (y / h).floor() as usize;
            if c >= self.nodes {
                c = self.nodes - 1;
            }
            (c, (y - c as f64 * h) / h)
        } else {
            let y = (x - self.lo).clamp(0.0, self.len());
            let mut c = (y / h).floor() as usize;
            if c >= self.nodes - 1 {
                c = self.nodes - 2;
            }
            (c, ((y - c as f64 * h) / h).clamp(0.0, 1.0))
        }
    }
}

/// One end of a truncated direction.
#[derive(Debug, Clone, PartialEq)]
pub struct EndDescriptor {
    /// Stable id: "e+" for the positive direction, "e-" for the negative.
    pub id: String,
    /// Axis whose truncation this end closes off.
    pub axis: usize,
    /// +1 when the end lies past hi, -1 when past lo.
    pub sign: i8,
    /// Collar radius: the collar region of the end is sign * coordinate >=
    /// collar_start.
    pub collar_start: f64,
}

/// Serialized form of a domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub kind: String,
    pub bounds: Vec<[f64; 2]>,
    pub nodes: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collar_start: Option<f64>,
}

/// A validated grid domain.
#[derive(Debug, Clone)]
pub struct Domain {
    pub kind: Kind,
    pub axes: Vec<Axis>,
    /// Window radius T of the truncated axis; 0 for compact kinds.
    pub truncation: f64,
    pub ends: Vec<EndDescriptor>,
    fingerprint: u64,
}

impl PartialEq for Domain {
    fn eq(&self, other: &Self) -> bool {
        self.fingerprint == other.fingerprint
            && self.kind == other.kind
            && self.axes == other.axes
    }
}

/// Build and validate a domain from its serialized form.
pub fn build_domain(spec: &DomainSpec) -> Result<Domain> {
    let kind = Kind::parse(&spec.kind)?;
    let nd = kind.ndim();
    if spec.bounds.len() != nd {
        return Err(Error::BadDomain(format!(
            "kind {} needs {} bounds pairs, got {}",
            spec.kind,
            nd,
            spec.bounds.len()
        )));
    }
    if spec.nodes.len() != nd {
        return Err(Error::BadDomain(format!(
            "kind {} needs {} node counts, got {}",
            spec.kind,
            nd,
            spec.nodes.len()
        )));
    }
    for (a, &n) in spec.nodes.iter().enumerate() {
        if n < MIN_NODES {
            return Err(Error::BadDomain(format!(
                "axis {a} has {n} nodes, minimum is {MIN_NODES}"
            )));
        }
    }
    for (a, b) in spec.bounds.iter().enumerate() {
        if !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]) {
            return Err(Error::BadDomain(format!(
                "axis {a} bounds [{}, {}] are not an increasing finite pair",
                b[0], b[1]
            )));
        }
    }

    let compact = kind.compact();
    if compact {
        if spec.truncation.is_some() || spec.collar_start.is_some() {
            return Err(Error::BadDomain(format!(
                "kind {} is compact; truncation and collar_start must be absent",
                spec.kind
            )));
        }
    } else if spec.truncation.is_none() {
        return Err(Error::BadDomain(format!(
            "kind {} requires a truncation radius",
            spec.kind
        )));
    }

    let t = spec.truncation.unwrap_or(0.0);
    if !compact {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::BadDomain(format!(
                "truncation {t} must be positive and finite"
            )));
        }
        let ax = kind.noncompact_axis().unwrap();
        let b = &spec.bounds[ax];
        let want: [f64; 2] = match kind {
            Kind::HalfLine => [0.0, t],
            _ => [-t, t],
        };
        let ok = (b[0] - want[0]).abs() <= 1e-12 * t.max(1.0)
            && (b[1] - want[1]).abs() <= 1e-12 * t.max(1.0);
        if !ok {
            return Err(Error::BadDomain(format!(
                "axis {ax} bounds [{}, {}] disagree with the truncation window [{}, {}]",
                b[0], b[1], want[0], want[1]
            )));
        }
    }

    let collar = match spec.collar_start {
        Some(c) => {
            if !(c > 0.0 && c < t) {
                return Err(Error::BadDomain(format!(
                    "collar_start {c} must lie strictly inside (0, {t})"
                )));
            }
            c
        }
        None => t / 2.0,
    };

    let periodic: Vec<bool> = match kind {
        Kind::Interval | Kind::Line | Kind::HalfLine => vec![false],
        Kind::Circle => vec![true],
        Kind::Rectangle => vec![false, false],
        Kind::Torus => vec![true, true],
        Kind::Cylinder => vec![true, false],
    };
    let axes: Vec<Axis> = (0..nd)
        .map(|a| Axis {
            lo: spec.bounds[a][0],
            hi: spec.bounds[a][1],
            nodes: spec.nodes[a],
            periodic: periodic[a],
        })
        .collect();

    let ends = match kind {
        Kind::Line => vec![
            EndDescriptor { id: "e+".into(), axis: 0, sign: 1, collar_start: collar },
            EndDescriptor { id: "e-".into(), axis: 0, sign: -1, collar_start: collar },
        ],
        Kind::HalfLine => vec![EndDescriptor {
            id: "e+".into(),
            axis: 0,
            sign: 1,
            collar_start: collar,
        }],
        Kind::Cylinder => vec![
            EndDescriptor { id: "e+".into(), axis: 1, sign: 1, collar_start: collar },
            EndDescriptor { id: "e-".into(), axis: 1, sign: -1, collar_start: collar },
        ],
        _ => vec![],
    };

    let mut h = fnv1a64(kind.as_str().as_bytes());
    for ax in &axes {
        fnv_push_f64(&mut h, ax.lo);
        fnv_push_f64(&mut h, ax.hi);
        fnv_push_f64(&mut h, ax.nodes as f64);
    }
    fnv_push_f64(&mut h, t);
    for e in &ends {
        fnv_push_f64(&mut h, e.collar_start);
    }

    Ok(Domain {
        kind,
        axes,
        truncation: t,
        ends,
        fingerprint: h,
    })
}

impl Domain {
    /// Convenience constructor from plain parameters.
    pub fn new(
        kind: Kind,
        bounds: &[[f64; 2]],
        nodes: &[usize],
        truncation: Option<f64>,
        collar_start: Option<f64>,
    ) -> Result<Domain> {
        build_domain(&DomainSpec {
            kind: kind.as_str().into(),
            bounds: bounds.to_vec(),
            nodes: nodes.to_vec(),
            truncation,
            collar_start,
        })
    }

    pub fn to_spec(&self) -> DomainSpec {
        DomainSpec {
            kind: self.kind.as_str().into(),
            bounds: self.axes.iter().map(|a| [a.lo, a.hi]).collect(),
            nodes: self.axes.iter().map(|a| a.nodes).collect(),
            truncation: if self.kind.compact() {
                None
            } else {
                Some(self.truncation)
            },
            collar_start: self.ends.first().map(|e| e.collar_start),
        }
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Total node count.
    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    /// Total cell count.
    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(|a| a.cells()).product()
    }

    /// Product of spacings: the volume of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.spacing()).product()
    }

    /// Largest axis spacing; the h in accuracy budgets.
    pub fn max_spacing(&self) -> f64 {
        self.axes
            .iter()
            .map(|a| a.spacing())
            .fold(0.0, f64::max)
    }

    /// Flatten a node multi-index (axis 0 slowest).
    pub fn node_idx(&self, ix: &[usize]) -> usize {
        match self.ndim() {
            1 => ix[0],
            _ => ix[0] * self.axes[1].nodes + ix[1],
        }
    }

    /// Flatten a cell multi-index (axis 0 slowest).
    pub fn cell_idx(&self, ix: &[usize]) -> usize {
        match self.ndim() {
            1 => ix[0],
            _ => ix[0] * self.axes[1].cells() + ix[1],
        }
    }

    /// Unflatten a cell index.
    pub fn cell_coords(&self, c: usize) -> [usize; 2] {
        match self.ndim() {
            1 => [c, 0],
            _ => [c / self.axes[1].cells(), c % self.axes[1].cells()],
        }
    }

    /// Node indices of the corners of a cell (with periodic wrap).
    pub fn cell_corner_nodes(&self, c: usize) -> Vec<usize> {
        let [c0, c1] = self.cell_coords(c);
        let wrap = |a: usize, i: usize| -> usize {
            let ax = &self.axes[a];
            if ax.periodic {
                (i + 1) % ax.nodes
            } else {
                i + 1
            }
        };
        match self.ndim() {
            1 => vec![self.node_idx(&[c0]), self.node_idx(&[wrap(0, c0)])],
            _ => {
                let c0n = wrap(0, c0);
                let c1n = wrap(1, c1);
                vec![
                    self.node_idx(&[c0, c1]),
                    self.node_idx(&[c0, c1n]),
                    self.node_idx(&[c0n, c1]),
                    self.node_idx(&[c0n, c1n]),
                ]
            }
        }
    }

    /// Center coordinate of a cell.
    pub fn cell_center(&self, c: usize) -> Vec<f64> {
        let ix = self.cell_coords(c);
        (0..self.ndim())
            .map(|a| self.axes[a].node(ix[a]) + 0.5 * self.axes[a].spacing())
            .collect()
    }

    pub fn end_by_id(&self, id: &str) -> Result<&EndDescriptor> {
        self.ends
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::BadDomain(format!("no end with id {id:?}")))
    }

    /// Length of the cross-section transverse to the given axis: 1 in one
    /// dimension, the other axis length in two.
    pub fn cross_section(&self, axis: usize) -> f64 {
        match self.ndim() {
            1 => 1.0,
            _ => self.axes[1 - axis].len(),
        }
    }

    /// Check that another object's stored fingerprint matches this domain.
    pub fn expect_fp(&self, fp: u64, what: &str) -> Result<()> {
        if fp != self.fingerprint {
            return Err(Error::DomainMismatch(format!(
                "{what} was built on a different grid"
            )));
        }
        Ok(())
    }

    /// Multilinear interpolation weights for a point: list of (node index,
    /// weight). Coordinates beyond non-periodic axis ranges are clamped.
    pub fn interp_weights(&self, x: &[f64]) -> Vec<(usize, f64)> {
        match self.ndim() {
            1 => {
                let ax = &self.axes[0];
                let (c, f) = ax.locate(x[0]);
                let n1 = if ax.periodic { (c + 1) % ax.nodes } else { c + 1 };
                vec![(c, 1.0 - f), (n1, f)]
            }
            _ => {
                let ax0 = &self.axes[0];
                let ax1 = &self.axes[1];
                let (c0, f0) = ax0.locate(x[0]);
                let (c1, f1) = ax1.locate(x[1]);
                let c0n = if ax0.periodic { (c0 + 1) % ax0.nodes } else { c0 + 1 };
                let c1n = if ax1.periodic { (c1 + 1) % ax1.nodes } else { c1 + 1 };
                vec![
                    (self.node_idx(&[c0, c1]), (1.0 - f0) * (1.0 - f1)),
                    (self.node_idx(&[c0, c1n]), (1.0 - f0) * f1),
                    (self.node_idx(&[c0n, c1]), f0 * (1.0 - f1)),
                    (self.node_idx(&[c0n, c1n]), f0 * f1),
                ]
            }
        }
    }

    /// Interpolate a node-sample vector at a point.
    pub fn interp(&self, samples: &[f64], x: &[f64]) -> f64 {
        self.interp_weights(x)
            .iter()
            .map(|&(i, w)| samples[i] * w)
            .sum()
    }

    /// Allocation-free interpolation with a fixed-size point; index 1 is
    /// ignored on one-dimensional domains. Hot path for flows and inverses.
    pub fn interp2(&self, samples: &[f64], x: [f64; 2]) -> f64 {
        match self.ndim() {
            1 => {
                let ax = &self.axes[0];
                let (c, f) = ax.locate(x[0]);
                let n1 = if ax.periodic { (c + 1) % ax.nodes } else { c + 1 };
                samples[c] * (1.0 - f) + samples[n1] * f
            }
            _ => {
                let ax0 = &self.axes[0];
                let ax1 = &self.axes[1];
                let (c0, f0) = ax0.locate(x[0]);
                let (c1, f1) = ax1.locate(x[1]);
                let c0n = if ax0.periodic { (c0 + 1) % ax0.nodes } else { c0 + 1 };
                let c1n = if ax1.periodic { (c1 + 1) % ax1.nodes } else { c1 + 1 };
                let n1 = self.axes[1].nodes;
                samples[c0 * n1 + c1] * (1.0 - f0) * (1.0 - f1)
                    + samples[c0 * n1 + c1n] * (1.0 - f0) * f1
                    + samples[c0n * n1 + c1] * f0 * (1.0 - f1)
                    + samples[c0n * n1 + c1n] * f0 * f1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(t: f64, n: usize) -> Domain {
        Domain::new(Kind::Line, &[[-t, t]], &[n], Some(t), None).unwrap()
    }

    #[test]
    fn spacing_conventions() {
        // Non-periodic: endpoints included, spacing (hi-lo)/(n-1).
        let d = line(8.0, 17);
        assert_eq!(d.axes[0].spacing(), 1.0);
        assert_eq!(d.axes[0].node(16), 8.0);
        assert_eq!(d.axes[0].cells(), 16);
        // Periodic: spacing (hi-lo)/n, node n would wrap to node 0.
        let c = Domain::new(Kind::Circle, &[[0.0, 1.0]], &[20], None, None).unwrap();
        assert_eq!(c.axes[0].spacing(), 0.05);
        assert_eq!(c.axes[0].cells(), 20);
    }

    #[test]
    fn cylinder_layout() {
        let d = Domain::new(
            Kind::Cylinder,
            &[[0.0, 1.0], [-4.0, 4.0]],
            &[16, 33],
            Some(4.0),
            Some(2.0),
        )
        .unwrap();
        assert!(d.axes[0].periodic && !d.axes[1].periodic);
        assert_eq!(d.ends.len(), 2);
        assert_eq!(d.ends[0].id, "e+");
        assert_eq!(d.ends[0].axis, 1);
        assert_eq!(d.ends[1].sign, -1);
        assert_eq!(d.cross_section(1), 1.0);
        // Row-major, axis 0 slowest: node (i, j) flattens to i*n1 + j.
        assert_eq!(d.node_idx(&[2, 5]), 2 * 33 + 5);
    }

    #[test]
    fn compact_kinds_reject_truncation() {
        let r = Domain::new(Kind::Interval, &[[0.0, 1.0]], &[16], Some(1.0), None);
        assert!(r.is_err());
    }

    #[test]
    fn window_must_match_truncation() {
        let r = Domain::new(Kind::Line, &[[-3.0, 4.0]], &[32], Some(4.0), None);
        assert!(r.is_err());
        let ok = Domain::new(Kind::HalfLine, &[[0.0, 4.0]], &[32], Some(4.0), None);
        assert!(ok.is_ok());
        assert_eq!(ok.unwrap().ends.len(), 1);
    }

    #[test]
    fn default_collar_is_half_window() {
        let d = line(10.0, 21);
        assert_eq!(d.ends[0].collar_start, 5.0);
    }

    #[test]
    fn node_minimum_enforced() {
        assert!(Domain::new(Kind::Interval, &[[0.0, 1.0]], &[15], None, None).is_err());
    }

    #[test]
    fn fingerprint_separates_grids() {
        assert_ne!(line(8.0, 17).fingerprint(), line(8.0, 33).fingerprint());
        assert_eq!(line(8.0, 17).fingerprint(), line(8.0, 17).fingerprint());
    }

    #[test]
    fn interp_reproduces_linear_functions() {
        let d = line(4.0, 33);
        let s: Vec<f64> = (0..33).map(|i| 3.0 * d.axes[0].node(i) + 1.0).collect();
        assert!((d.interp(&s, &[0.37]) - (3.0 * 0.37 + 1.0)).abs() < 1e-12);
        // Clamped beyond the window edge.
        assert!((d.interp(&s, &[5.0]) - 13.0).abs() < 1e-12);
    }

    #[test]
    fn periodic_wrap_in_interpolation() {
        let c = Domain::new(Kind::Circle, &[[0.0, 1.0]], &[16], None, None).unwrap();
        let s: Vec<f64> = (0..16)
            .map(|i| (2.0 * std::f64::consts::PI * c.axes[0].node(i)).sin())
            .collect();
        // 0.99 sits 84% of the way from node 15 to node 0 (wrapping).
        let v = c.interp(&s, &[0.99]);
        let expect = 0.84 * s[0] + 0.16 * s[15];
        assert!((v - expect).abs() < 1e-12);
    }
}
