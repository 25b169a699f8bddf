//! Equalization of densities by flowing along a primitive of their deficit.
//!
//! The pipeline is discrete end to end: a deficit w = nu - mu sampled at
//! nodes gets a node-sampled primitive whose cell-level exterior derivative
//! reproduces the cell averages of w up to the (tiny) nonzero part of its
//! integral; the time-dependent field V / rho_t is then integrated with RK4
//! to produce a sampled diffeomorphism pushing mu to nu.
//!
//! Support discipline does the geometric work. Primitives are built from
//! cumulative sums weighted so they vanish bitwise outside a declared
//! node-aligned box; nodes outside the box therefore never move, which makes
//! "identity on the collar" an exact statement rather than a tolerance.

pub mod collar;
pub mod flow;
pub mod piecewise;
pub mod primitive;

pub use collar::{collar_normalize, CollarSide};
pub use flow::{cdf_transport_1d, moser_flow_solve};
pub use piecewise::piecewise_moser;
pub use primitive::primitive;

use crate::domain::Domain;
use crate::fields::DensityField;
use crate::util::{close_rel, tol};
use crate::{Error, Result};

/// Node-aligned product box confining a deficit and its transport field.
///
/// Along a non-periodic axis the box must leave at least one node of margin
/// to the window edge; a periodic axis may be covered in full, in which case
/// the profile used by `primitive` degenerates to a constant.
#[derive(Debug, Clone)]
pub struct SupportBox {
    fp: u64,
    /// Inclusive node index range per axis.
    spans: Vec<(usize, usize)>,
    /// Whether the axis is covered in full (periodic axes only).
    full: Vec<bool>,
}

impl SupportBox {
    /// Build a box from per-axis coordinate bounds, snapping to nodes.
    pub fn new(d: &Domain, bounds: &[[f64; 2]]) -> Result<SupportBox> {
        if bounds.len() != d.ndim() {
            return Err(Error::BadRegion(format!(
                "support box needs {} axis bounds, got {}",
                d.ndim(),
                bounds.len()
            )));
        }
        let mut spans = Vec::with_capacity(d.ndim());
        let mut full = Vec::with_capacity(d.ndim());
        for (a, b) in bounds.iter().enumerate() {
            let ax = &d.axes[a];
            let h = ax.spacing();
            if !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]) {
                return Err(Error::BadRegion(format!(
                    "support box bounds {b:?} on axis {a} are not an interval"
                )));
            }
            if ax.periodic && b[0] <= ax.lo + 0.5 * h && b[1] >= ax.hi - 0.5 * h {
                spans.push((0, ax.nodes));
                full.push(true);
                continue;
            }
            let i0 = ((b[0] - ax.lo) / h).round() as i64;
            let i1 = ((b[1] - ax.lo) / h).round() as i64;
            let last = ax.nodes as i64 - 1;
            if i0 < 0 || i1 > last {
                return Err(Error::BadRegion(format!(
                    "support box {b:?} leaves the window on axis {a}"
                )));
            }
            if !ax.periodic && (i0 < 1 || i1 > last - 1) {
                return Err(Error::BadRegion(format!(
                    "support box {b:?} touches the axis {a} boundary; it must \
                     sit strictly inside"
                )));
            }
            if i1 - i0 < 2 {
                return Err(Error::BadRegion(format!(
                    "support box {b:?} on axis {a} holds no interior node"
                )));
            }
            spans.push((i0 as usize, i1 as usize));
            full.push(false);
        }
        Ok(SupportBox {
            fp: d.fingerprint(),
            spans,
            full,
        })
    }

    /// Box covering a whole compact domain except a margin of `inset` on
    /// every non-periodic axis.
    pub fn inset(d: &Domain, inset: f64) -> Result<SupportBox> {
        let bounds: Vec<[f64; 2]> = d
            .axes
            .iter()
            .map(|ax| {
                if ax.periodic {
                    [ax.lo, ax.hi]
                } else {
                    [ax.lo + inset, ax.hi - inset]
                }
            })
            .collect();
        SupportBox::new(d, &bounds)
    }

    pub fn domain_fp(&self) -> u64 {
        self.fp
    }

    pub fn full_axis(&self, a: usize) -> bool {
        self.full[a]
    }

    pub(crate) fn span(&self, a: usize) -> (usize, usize) {
        self.spans[a]
    }

    pub fn lo(&self, d: &Domain, a: usize) -> f64 {
        d.axes[a].node(self.spans[a].0)
    }

    pub fn hi(&self, d: &Domain, a: usize) -> f64 {
        if self.full[a] {
            d.axes[a].hi
        } else {
            d.axes[a].node(self.spans[a].1)
        }
    }

    /// Whether the node with multi-index `ix` lies in the closed box.
    pub(crate) fn holds_node(&self, ix: &[usize]) -> bool {
        ix.iter().enumerate().all(|(a, &i)| {
            self.full[a] || (i >= self.spans[a].0 && i <= self.spans[a].1)
        })
    }
}

/// A node-sampled primitive of a deficit: one component in one dimension
/// (the cumulative function itself), two in two dimensions.
#[derive(Debug, Clone)]
pub struct CoForm {
    fp: u64,
    comps: Vec<Vec<f64>>,
    support: SupportBox,
}

impl CoForm {
    pub(crate) fn from_parts(fp: u64, comps: Vec<Vec<f64>>, support: SupportBox) -> CoForm {
        CoForm { fp, comps, support }
    }

    pub fn domain_fp(&self) -> u64 {
        self.fp
    }

    pub fn comps(&self) -> &[Vec<f64>] {
        &self.comps
    }

    pub fn support(&self) -> &SupportBox {
        &self.support
    }

    /// The transport field V with cellwise div V = -(exterior derivative):
    /// -U in one dimension, (-b1, b0) in two, written per axis.
    pub fn transport_field(&self) -> Vec<Vec<f64>> {
        match self.comps.len() {
            1 => vec![self.comps[0].iter().map(|u| -u).collect()],
            _ => vec![
                self.comps[1].iter().map(|v| -v).collect(),
                self.comps[0].clone(),
            ],
        }
    }

    /// Cell-level exterior derivative: edge means differenced across the
    /// cell. This is the discrete operator the primitive inverts.
    pub fn d_cell(&self, d: &Domain, cell: usize) -> f64 {
        match d.ndim() {
            1 => {
                let ax = &d.axes[0];
                let u = &self.comps[0];
                let i = cell;
                let j = if ax.periodic { (i + 1) % ax.nodes } else { i + 1 };
                (u[j] - u[i]) / ax.spacing()
            }
            _ => {
                let [p, q] = d.cell_coords(cell);
                let n1 = d.axes[1].nodes;
                let p1 = if d.axes[0].periodic {
                    (p + 1) % d.axes[0].nodes
                } else {
                    p + 1
                };
                let q1 = if d.axes[1].periodic { (q + 1) % n1 } else { q + 1 };
                let at = |arr: &[f64], pp: usize, qq: usize| arr[pp * n1 + qq];
                let b0 = &self.comps[0];
                let b1 = &self.comps[1];
                let d0 = (at(b1, p1, q) + at(b1, p1, q1) - at(b1, p, q) - at(b1, p, q1))
                    / (2.0 * d.axes[0].spacing());
                let d1 = (at(b0, p, q1) + at(b0, p1, q1) - at(b0, p, q) - at(b0, p1, q))
                    / (2.0 * d.axes[1].spacing());
                d0 - d1
            }
        }
    }

    /// Largest coefficient magnitude at nodes outside the support box.
    pub fn sup_outside_support(&self, d: &Domain) -> f64 {
        let mut worst = 0.0f64;
        for idx in 0..d.node_count() {
            let ix = node_multi(d, idx);
            if self.support.holds_node(&ix[..d.ndim()]) {
                continue;
            }
            for comp in &self.comps {
                worst = worst.max(comp[idx].abs());
            }
        }
        worst
    }
}

/// A compact equalization problem: two positive densities of equal total
/// mass that already agree on a boundary collar.
#[derive(Debug, Clone)]
pub struct MoserProblem {
    pub mu: DensityField,
    pub nu: DensityField,
    /// Collar depth eps: the maps produced fix the depth-eps boundary zone
    /// exactly, and the inputs must agree samplewise to depth 2 eps.
    pub collar: f64,
}

impl MoserProblem {
    pub fn new(mu: DensityField, nu: DensityField, collar: f64) -> Result<MoserProblem> {
        let d = &mu.domain;
        d.expect_fp(nu.domain.fingerprint(), "second density")?;
        if !d.kind.compact() {
            return Err(Error::BadDomain(
                "equalization problems live on compact domains".into(),
            ));
        }
        let (ma, mb) = (mu.total_mass(), nu.total_mass());
        if (ma - mb).abs() > tol::MASS_BALANCE_REL * ma.abs().max(mb.abs()).max(1.0) {
            return Err(Error::MassMismatch(format!(
                "total masses differ: {ma} vs {mb}"
            )));
        }
        let boundary_axes: Vec<usize> = (0..d.ndim()).filter(|&a| !d.axes[a].periodic).collect();
        if !boundary_axes.is_empty() {
            if !(collar.is_finite() && collar > 0.0) {
                return Err(Error::BadRegion(format!("collar width {collar} must be positive")));
            }
            for &a in &boundary_axes {
                let ax = &d.axes[a];
                if collar < 2.0 * ax.spacing() {
                    return Err(Error::BadRegion(format!(
                        "collar width {collar} is thinner than two cells on axis {a}"
                    )));
                }
                if 3.0 * collar >= 0.5 * ax.len() {
                    return Err(Error::BadRegion(format!(
                        "collar width {collar} leaves no interior on axis {a}"
                    )));
                }
            }
            for idx in 0..d.node_count() {
                if boundary_depth(d, idx) <= 2.0 * collar + 1e-9 * max_spacing(d) {
                    let (x, y) = (mu.samples()[idx], nu.samples()[idx]);
                    if !close_rel(x, y, tol::SAMPLE_EQ_REL) {
                        return Err(Error::CollarMismatch(format!(
                            "densities differ at node {idx} inside the depth-{} \
                             boundary zone: {x} vs {y}",
                            2.0 * collar
                        )));
                    }
                }
            }
        } else if !(collar.is_finite() && collar > 0.0) {
            return Err(Error::BadRegion(format!("collar width {collar} must be positive")));
        }
        Ok(MoserProblem { mu, nu, collar })
    }

    pub fn domain(&self) -> &Domain {
        &self.mu.domain
    }
}

/// Distance from a node to the nearest genuine boundary (non-periodic axis
/// edge). Infinite when every axis is periodic.
pub(crate) fn boundary_depth(d: &Domain, idx: usize) -> f64 {
    let ix = node_multi(d, idx);
    let mut depth = f64::INFINITY;
    for a in 0..d.ndim() {
        let ax = &d.axes[a];
        if ax.periodic {
            continue;
        }
        let x = ax.node(ix[a]);
        depth = depth.min((x - ax.lo).min(ax.hi - x));
    }
    depth
}

pub(crate) fn node_multi(d: &Domain, idx: usize) -> [usize; 2] {
    match d.ndim() {
        1 => [idx, 0],
        _ => [idx / d.axes[1].nodes, idx % d.axes[1].nodes],
    }
}

pub(crate) fn max_spacing(d: &Domain) -> f64 {
    d.axes.iter().map(|a| a.spacing()).fold(0.0, f64::max)
}

/// Corner mean of a node-sampled function over one cell; the quadrature all
/// mass bookkeeping in this module shares.
pub(crate) fn cell_mean(d: &Domain, samples: &[f64], cell: usize) -> f64 {
    let corners = d.cell_corner_nodes(cell);
    let k = corners.len();
    corners.iter().map(|&i| samples[i]).sum::<f64>() / k as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Kind;
    use crate::fields::TailModel;

    fn interval(n: usize) -> Domain {
        Domain::new(Kind::Interval, &[[0.0, 1.0]], &[n], None, None).unwrap()
    }

    fn uniform(d: &Domain, v: f64) -> DensityField {
        DensityField::new(d.clone(), vec![v; d.node_count()], vec![]).unwrap()
    }

    #[test]
    fn support_box_snaps_and_guards_margins() {
        let d = interval(21);
        let sb = SupportBox::new(&d, &[[0.21, 0.79]]).unwrap();
        assert_eq!(sb.span(0), (4, 16));
        assert!((sb.lo(&d, 0) - 0.2).abs() < 1e-12);
        assert!(SupportBox::new(&d, &[[0.0, 0.5]]).is_err());
        assert!(SupportBox::new(&d, &[[0.4, 0.45]]).is_err());
    }

    #[test]
    fn full_periodic_axis_is_allowed() {
        let d = Domain::new(Kind::Circle, &[[0.0, 1.0]], &[16], None, None).unwrap();
        let sb = SupportBox::new(&d, &[[0.0, 1.0]]).unwrap();
        assert!(sb.full_axis(0));
    }

    #[test]
    fn problem_requires_equal_mass_and_collar_agreement() {
        let d = interval(33);
        let mu = uniform(&d, 1.0);
        let nu = uniform(&d, 1.001);
        assert!(matches!(
            MoserProblem::new(mu.clone(), nu, 0.1),
            Err(Error::MassMismatch(_))
        ));
        // Equal masses but a deficit reaching into the collar zone.
        let mut s = vec![1.0; 33];
        s[2] += 0.5;
        s[16] -= 0.5;
        let nu = DensityField::new(d.clone(), s, vec![]).unwrap();
        assert!(matches!(
            MoserProblem::new(mu.clone(), nu, 0.1),
            Err(Error::CollarMismatch(_))
        ));
        assert!(MoserProblem::new(mu.clone(), mu.clone(), 0.1).is_ok());
    }

    #[test]
    fn tail_carrying_fields_are_rejected() {
        let d = Domain::new(Kind::Line, &[[-4.0, 4.0]], &[33], Some(4.0), Some(3.0)).unwrap();
        let tails = vec![
            TailModel::ConstantRate { density: 1.0 },
            TailModel::ConstantRate { density: 1.0 },
        ];
        let mu = DensityField::new(d.clone(), vec![1.0; 33], tails).unwrap();
        assert!(matches!(
            MoserProblem::new(mu.clone(), mu, 0.5),
            Err(Error::BadDomain(_))
        ));
    }
}
