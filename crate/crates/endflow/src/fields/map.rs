//! Sampled diffeomorphisms with declared end behavior.
//!
//! A map is a chain of one or more stages applied in order. Each stage
//! stores per-axis node displacements over the window; beyond a declared
//! collar radius each end of a stage behaves exactly as the identity or as
//! a rigid collar shift. The stage constructor snaps samples in those zones
//! onto the declared formula (after checking they agree to roundoff), so
//! "identity past r" and "shift by s past r" are bitwise facts, not
//! approximations.
//!
//! Composition concatenates stages instead of resampling. Flattening a
//! composition onto the grid would drag every inner kink to an off-grid
//! preimage and smear it across a cell, shifting measured frontier
//! preimages by a first-order amount; keeping the stages separate keeps
//! evaluation and preimage solves exact.
//!
//! Collar shifts are oriented outward: a positive shift at an end moves
//! points toward that end, whichever coordinate direction it lies in.

use super::{DensityField, TailModel};
use crate::domain::Domain;
use crate::util::{close_rel, tol};
use crate::{Error, Result};

/// Behavior of a map past `beyond` (a collar coordinate) at one end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EndBehavior {
    Identity { beyond: f64 },
    Shift { shift: f64, beyond: f64 },
}

impl EndBehavior {
    pub fn beyond(&self) -> f64 {
        match *self {
            EndBehavior::Identity { beyond } => beyond,
            EndBehavior::Shift { beyond, .. } => beyond,
        }
    }

    /// Collar-oriented shift amount (0 for identity).
    pub fn shift(&self) -> f64 {
        match *self {
            EndBehavior::Identity { .. } => 0.0,
            EndBehavior::Shift { shift, .. } => shift,
        }
    }

    fn canonical(self) -> EndBehavior {
        match self {
            EndBehavior::Shift { shift, beyond } if shift == 0.0 => {
                EndBehavior::Identity { beyond }
            }
            other => other,
        }
    }
}

/// One validated stage of a map: displacements plus end declarations.
#[derive(Debug, Clone)]
pub(crate) struct MapStage {
    /// Coordinate displacement per axis per node, row-major.
    disp: Vec<Vec<f64>>,
    /// Declared behavior per domain end.
    ends: Vec<EndBehavior>,
    min_jacobian: f64,
}

impl MapStage {
    fn zero(d: &Domain) -> MapStage {
        let ends = d
            .ends
            .iter()
            .map(|e| EndBehavior::Identity {
                beyond: e.collar_start,
            })
            .collect();
        MapStage {
            disp: vec![vec![0.0; d.node_count()]; d.ndim()],
            ends,
            min_jacobian: 1.0,
        }
    }

    fn is_zero(&self) -> bool {
        self.disp.iter().all(|arr| arr.iter().all(|&v| v == 0.0))
            && self.ends.iter().all(|e| e.shift() == 0.0)
    }

    pub(crate) fn disp(&self, axis: usize) -> &[f64] {
        &self.disp[axis]
    }

    pub(crate) fn eval2(&self, d: &Domain, x: [f64; 2]) -> [f64; 2] {
        if let Some(axis) = d.kind.noncompact_axis() {
            let ax = &d.axes[axis];
            for (k, e) in d.ends.iter().enumerate() {
                let u = e.sign as f64 * x[axis];
                let edge = if e.sign > 0 { ax.hi } else { -ax.lo };
                if u > edge {
                    let mut y = x;
                    y[axis] += e.sign as f64 * self.ends[k].shift();
                    return y;
                }
            }
        }
        let mut y = x;
        for a in 0..d.ndim() {
            y[a] += d.interp2(&self.disp[a], x);
        }
        y
    }

    /// Axial stage values along one transverse line: v_i = u_i + disp. For
    /// 1D domains there is a single line (col = 0).
    pub(crate) fn axial_values(&self, d: &Domain, col: usize) -> Vec<f64> {
        let axis = d.kind.noncompact_axis().unwrap_or(0);
        let n = d.axes[axis].nodes;
        (0..n)
            .map(|i| {
                let idx = match d.ndim() {
                    1 => i,
                    _ => {
                        let mut ix = [0usize; 2];
                        ix[axis] = i;
                        ix[1 - axis] = col;
                        d.node_idx(&ix)
                    }
                };
                d.axes[axis].node(i) + self.disp[axis][idx]
            })
            .collect()
    }

    /// Preimage of axial coordinate y under the axial stage sampled in
    /// `vals` (non-periodic axial axis), extending by the end formulas
    /// beyond the sampled range.
    pub(crate) fn invert_axial_coord(
        &self,
        d: &Domain,
        vals: &[f64],
        axis: usize,
        y: f64,
    ) -> f64 {
        let ax = &d.axes[axis];
        let n = vals.len();
        if y <= vals[0] {
            // Below the sampled range: negative-side end formula (or the
            // fixed boundary, where vals[0] equals the boundary itself).
            let shift = d
                .ends
                .iter()
                .zip(&self.ends)
                .find(|(e, _)| e.axis == axis && e.sign < 0)
                .map(|(e, be)| e.sign as f64 * be.shift())
                .unwrap_or(0.0);
            return (y - shift).min(ax.lo + (y - vals[0]));
        }
        if y >= vals[n - 1] {
            let shift = d
                .ends
                .iter()
                .zip(&self.ends)
                .find(|(e, _)| e.axis == axis && e.sign > 0)
                .map(|(e, be)| e.sign as f64 * be.shift())
                .unwrap_or(0.0);
            return (y - shift).max(ax.hi + (y - vals[n - 1]));
        }
        let mut lo = 0usize;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if vals[mid] <= y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = (y - vals[lo]) / (vals[hi] - vals[lo]);
        ax.node(lo) + t * ax.spacing()
    }

    /// Forward-difference Jacobian of the interpolated stage at a point
    /// (pure shift beyond the window).
    fn jacobian_at(&self, d: &Domain, x: [f64; 2]) -> [f64; 4] {
        let mut jac = [1.0, 0.0, 0.0, 1.0];
        let eps = [
            1e-6 * d.axes[0].spacing().max(1e-9),
            1e-6 * d.axes[1].spacing().max(1e-9),
        ];
        let f0 = self.eval2(d, x);
        for a in 0..2 {
            let mut xp = x;
            xp[a] += eps[a];
            let fp = self.eval2(d, xp);
            jac[a] = (fp[0] - f0[0]) / eps[a];
            jac[2 + a] = (fp[1] - f0[1]) / eps[a];
        }
        jac
    }

    /// Inverse displacement of the axial PL stage, 1D only.
    fn invert_line(&self, d: &Domain) -> Result<Vec<f64>> {
        let ax = &d.axes[0];
        let n = ax.nodes;
        let vals = self.axial_values(d, 0);
        let mut out = vec![0.0; n];
        if ax.periodic {
            let period = ax.len();
            for j in 0..n {
                let y = ax.node(j);
                let x = invert_periodic_pl(&vals, ax.lo, ax.spacing(), period, y);
                out[j] = x - y;
            }
        } else {
            for j in 0..n {
                let y = ax.node(j);
                out[j] = self.invert_axial_coord(d, &vals, 0, y) - y;
            }
        }
        Ok(out)
    }

    /// Inverse displacements by damped Newton per node, 2D.
    fn invert_2d(&self, d: &Domain) -> Result<Vec<Vec<f64>>> {
        let nd = 2;
        let mut disp = vec![vec![0.0; d.node_count()]; nd];
        let mut coords = [0.0; 2];
        let scale = d.axes.iter().map(|a| a.len()).fold(1.0, f64::max);
        for idx in 0..d.node_count() {
            node_coords(d, idx, &mut coords);
            let y = coords;
            // Seed: pull back by the forward displacement at y.
            let mut x = y;
            for a in 0..nd {
                x[a] -= d.interp2(&self.disp[a], y);
            }
            let mut converged = false;
            for _ in 0..60 {
                let fx = self.eval2(d, x);
                let r = [fx[0] - y[0], fx[1] - y[1]];
                let rn = r[0].abs().max(r[1].abs());
                if rn <= tol::NEWTON_ABS * scale {
                    converged = true;
                    break;
                }
                let jac = self.jacobian_at(d, x);
                let det = jac[0] * jac[3] - jac[1] * jac[2];
                if det.abs() < 1e-14 {
                    break;
                }
                let dx = [
                    -(jac[3] * r[0] - jac[1] * r[1]) / det,
                    -(-jac[2] * r[0] + jac[0] * r[1]) / det,
                ];
                // Backtracking keeps the residual decreasing.
                let mut lam = 1.0;
                let mut accepted = false;
                while lam >= 1.0 / 64.0 {
                    let cand = [x[0] + lam * dx[0], x[1] + lam * dx[1]];
                    let fc = self.eval2(d, cand);
                    let rc = (fc[0] - y[0]).abs().max((fc[1] - y[1]).abs());
                    if rc < rn {
                        x = cand;
                        accepted = true;
                        break;
                    }
                    lam *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
            if !converged {
                let fx = self.eval2(d, x);
                let rn = (fx[0] - y[0]).abs().max((fx[1] - y[1]).abs());
                if rn > 1e-9 * scale {
                    return Err(Error::Numeric(format!(
                        "inverse iteration stalled at node {idx} with residual \
                         {rn:.3e}"
                    )));
                }
            }
            for a in 0..nd {
                let mut delta = x[a] - y[a];
                if d.axes[a].periodic {
                    let p = d.axes[a].len();
                    while delta > 0.5 * p {
                        delta -= p;
                    }
                    while delta < -0.5 * p {
                        delta += p;
                    }
                }
                disp[a][idx] = delta;
            }
        }
        Ok(disp)
    }

    /// Raw inverse displacements at nodes. Needs no inverse end
    /// declaration, so it works even when the inverse pure zone would
    /// start past the window edge.
    fn inverse_disp(&self, d: &Domain) -> Result<Vec<Vec<f64>>> {
        match d.ndim() {
            1 => Ok(vec![self.invert_line(d)?]),
            _ => self.invert_2d(d),
        }
    }

    /// Push a density forward through this stage alone.
    fn pushforward(&self, mu: &DensityField) -> Result<DensityField> {
        let inv = self.inverse_disp(&mu.domain)?;
        pushforward_core(&mu.domain, mu, &inv, &self.ends)
    }

    fn invert(&self, d: &Domain) -> Result<MapStage> {
        let mut ends = Vec::with_capacity(d.ends.len());
        for (k, be) in self.ends.iter().enumerate() {
            let inv = match *be {
                EndBehavior::Identity { beyond } => EndBehavior::Identity { beyond },
                EndBehavior::Shift { shift, beyond } => EndBehavior::Shift {
                    shift: -shift,
                    beyond: beyond + shift,
                },
            };
            let b = inv.beyond();
            if !(b > 0.0 && b <= d.truncation) {
                return Err(Error::BadMap(format!(
                    "inverse pure zone at end {} starts at {b}, outside the \
                     window",
                    d.ends[k].id
                )));
            }
            ends.push(inv);
        }
        build_stage(d, self.inverse_disp(d)?, ends)
    }
}

/// A validated sampled diffeomorphism: a chain of stages applied first to
/// last.
#[derive(Debug, Clone)]
pub struct DiffeoMap {
    pub domain: Domain,
    stages: Vec<MapStage>,
}

impl DiffeoMap {
    pub fn identity(d: &Domain) -> DiffeoMap {
        DiffeoMap {
            domain: d.clone(),
            stages: vec![MapStage::zero(d)],
        }
    }

    /// Validating single-stage constructor. Checks sizes, fixed boundaries,
    /// agreement of the beyond-zone samples with the declared end behavior
    /// (then snaps them exactly), per-column monotonicity along the
    /// truncated axis, and a positive discrete Jacobian everywhere.
    pub fn new(domain: Domain, disp: Vec<Vec<f64>>, ends: Vec<EndBehavior>) -> Result<DiffeoMap> {
        let stage = build_stage(&domain, disp, ends)?;
        Ok(DiffeoMap {
            domain,
            stages: vec![stage],
        })
    }

    pub(crate) fn stages(&self) -> &[MapStage] {
        &self.stages
    }

    /// The single stage of an uncomposed map. The displacement and end
    /// views below only exist for such maps; a composed chain has no
    /// faithful single displacement array by design.
    fn single(&self) -> &MapStage {
        assert!(
            self.stages.len() == 1,
            "no single displacement view of a {}-stage composition",
            self.stages.len()
        );
        &self.stages[0]
    }

    pub fn disp(&self, axis: usize) -> &[f64] {
        self.single().disp(axis)
    }

    pub fn ends(&self) -> &[EndBehavior] {
        &self.single().ends
    }

    pub fn end_behavior(&self, id: &str) -> Result<EndBehavior> {
        let k = self
            .domain
            .ends
            .iter()
            .position(|e| e.id == id)
            .ok_or_else(|| Error::BadMap(format!("no end {id:?}")))?;
        Ok(self.single().ends[k])
    }

    /// Net collar shift of the whole chain at end k.
    pub(crate) fn end_shift_total(&self, k: usize) -> f64 {
        self.stages.iter().map(|s| s.ends[k].shift()).sum()
    }

    /// Largest outward collar excursion any point can make across the
    /// chain: per stage the largest shift magnitude over ends, summed.
    pub(crate) fn shift_margin(&self) -> f64 {
        self.stages
            .iter()
            .map(|s| {
                s.ends
                    .iter()
                    .map(|b| b.shift().abs())
                    .fold(0.0, f64::max)
            })
            .sum()
    }

    /// Product of the stage Jacobian minima: a lower bound for the chain.
    pub fn min_jacobian(&self) -> f64 {
        self.stages.iter().map(|s| s.min_jacobian).product()
    }

    /// True when every stage is exactly zero, so the map is the identity
    /// bitwise by construction.
    pub fn is_identity(&self) -> bool {
        self.stages.iter().all(|s| s.is_zero())
    }

    /// Largest displacement magnitude of the chain over nodes and axes.
    pub fn sup_disp(&self) -> f64 {
        if self.stages.len() == 1 {
            return self.stages[0]
                .disp
                .iter()
                .flat_map(|arr| arr.iter())
                .map(|v| v.abs())
                .fold(0.0, f64::max);
        }
        let d = &self.domain;
        let nd = d.ndim();
        let mut coords = [0.0; 2];
        let mut sup = 0.0f64;
        for idx in 0..d.node_count() {
            node_coords(d, idx, &mut coords);
            let y = self.eval2(coords);
            for a in 0..nd {
                let mut delta = y[a] - coords[a];
                if d.axes[a].periodic {
                    let p = d.axes[a].len();
                    while delta > 0.5 * p {
                        delta -= p;
                    }
                    while delta < -0.5 * p {
                        delta += p;
                    }
                }
                sup = sup.max(delta.abs());
            }
        }
        sup
    }

    /// Evaluate the map; valid beyond the window through the end behavior.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut p = [0.0; 2];
        p[..x.len()].copy_from_slice(x);
        let out = self.eval2(p);
        out[..x.len()].to_vec()
    }

    pub(crate) fn eval2(&self, x: [f64; 2]) -> [f64; 2] {
        let d = &self.domain;
        let mut y = x;
        for st in &self.stages {
            y = st.eval2(d, y);
        }
        y
    }

    /// Composition self after inner: x -> self(inner(x)). Exact: the
    /// result chains the stages of both maps in application order.
    pub fn compose(&self, inner: &DiffeoMap) -> Result<DiffeoMap> {
        let d = &self.domain;
        d.expect_fp(inner.domain.fingerprint(), "inner map")?;
        let mut stages: Vec<MapStage> = Vec::with_capacity(
            inner.stages.len() + self.stages.len(),
        );
        for st in inner.stages.iter().chain(self.stages.iter()) {
            if !st.is_zero() {
                stages.push(st.clone());
            }
        }
        if stages.is_empty() {
            stages.push(MapStage::zero(d));
        }
        Ok(DiffeoMap {
            domain: d.clone(),
            stages,
        })
    }

    /// Inverse map: the reversed chain of stage inverses, each sampled on
    /// the grid.
    pub fn invert(&self) -> Result<DiffeoMap> {
        let d = &self.domain;
        let mut stages = Vec::with_capacity(self.stages.len());
        for st in self.stages.iter().rev() {
            stages.push(st.invert(d)?);
        }
        Ok(DiffeoMap {
            domain: d.clone(),
            stages,
        })
    }

    /// Push a density forward through this map: (h mu)(A) = mu(h^-1 A).
    /// Stages push sequentially, each through its own exact node preimages.
    pub fn pushforward(&self, mu: &DensityField) -> Result<DensityField> {
        let d = &self.domain;
        d.expect_fp(mu.domain.fingerprint(), "density")?;
        let mut cur = mu.clone();
        for st in &self.stages {
            cur = st.pushforward(&cur)?;
        }
        Ok(cur)
    }

    /// Pushforward with a caller-supplied inverse. Flow-built maps carry an
    /// inverse integrated from the reversed field, which is better
    /// conditioned than inverting the sampled forward map. Single-stage
    /// maps only.
    pub(crate) fn pushforward_via(
        &self,
        inv: &DiffeoMap,
        mu: &DensityField,
    ) -> Result<DensityField> {
        let d = &self.domain;
        d.expect_fp(mu.domain.fingerprint(), "density")?;
        d.expect_fp(inv.domain.fingerprint(), "inverse map")?;
        pushforward_core(d, mu, &inv.single().disp, &self.single().ends)
    }
}

/// Validate one stage: sizes, finiteness, end declarations, boundary and
/// end-zone snaps, monotonicity, positive Jacobian.
fn build_stage(
    domain: &Domain,
    mut disp: Vec<Vec<f64>>,
    ends: Vec<EndBehavior>,
) -> Result<MapStage> {
    let nd = domain.ndim();
    if disp.len() != nd {
        return Err(Error::BadMap(format!(
            "expected {nd} displacement arrays, got {}",
            disp.len()
        )));
    }
    for (a, arr) in disp.iter().enumerate() {
        if arr.len() != domain.node_count() {
            return Err(Error::BadMap(format!(
                "axis {a} displacement has {} entries, expected {}",
                arr.len(),
                domain.node_count()
            )));
        }
        if let Some(i) = arr.iter().position(|v| !v.is_finite()) {
            return Err(Error::BadMap(format!(
                "axis {a} displacement at node {i} is not finite"
            )));
        }
    }
    if ends.len() != domain.ends.len() {
        return Err(Error::BadMap(format!(
            "expected {} end behaviors, got {}",
            domain.ends.len(),
            ends.len()
        )));
    }
    let ends: Vec<EndBehavior> = ends.into_iter().map(|e| e.canonical()).collect();
    for (k, be) in ends.iter().enumerate() {
        let b = be.beyond();
        if !(b > 0.0 && b <= domain.truncation) {
            return Err(Error::BadMap(format!(
                "end {} declares behavior beyond {b}, outside (0, {}]",
                domain.ends[k].id, domain.truncation
            )));
        }
    }

    snap_boundaries(domain, &mut disp)?;
    snap_end_zones(domain, &mut disp, &ends)?;
    check_axial_monotone(domain, &disp)?;
    let min_jacobian = min_jacobian(domain, &disp);
    if !(min_jacobian > 0.0) {
        return Err(Error::BadMap(format!(
            "discrete Jacobian reaches {min_jacobian}; not orientation \
             preserving"
        )));
    }
    Ok(MapStage {
        disp,
        ends,
        min_jacobian,
    })
}

/// Shared pushforward body: sample the density at the inverse node images
/// scaled by the inverse Jacobian, and push the tails through the forward
/// end behavior.
fn pushforward_core(
    d: &Domain,
    mu: &DensityField,
    inv_disp: &[Vec<f64>],
    fwd_ends: &[EndBehavior],
) -> Result<DensityField> {
    let nd = d.ndim();
    let mut samples = vec![0.0; d.node_count()];
    let mut coords = [0.0; 2];
    for idx in 0..d.node_count() {
        node_coords(d, idx, &mut coords);
        let mut x = coords;
        for a in 0..nd {
            x[a] += inv_disp[a][idx];
        }
        let rho = mu.density_at(&x[..nd]);
        let det = jacobian_det_node(d, inv_disp, idx);
        samples[idx] = rho * det;
    }
    let mut tails = Vec::with_capacity(d.ends.len());
    for (k, e) in d.ends.iter().enumerate() {
        tails.push(shift_tail(mu, k, e, fwd_ends[k])?);
    }
    DensityField::from_raw(d.clone(), samples, tails)
}

/// Node coordinates without allocation.
pub(crate) fn node_coords(d: &Domain, idx: usize, out: &mut [f64; 2]) {
    match d.ndim() {
        1 => {
            out[0] = d.axes[0].node(idx);
        }
        _ => {
            let n1 = d.axes[1].nodes;
            out[0] = d.axes[0].node(idx / n1);
            out[1] = d.axes[1].node(idx % n1);
        }
    }
}

/// Discrete Jacobian determinant of a displacement set at a node: centered
/// differences inside, one-sided at non-periodic edges, wrap at periodic
/// ones.
pub(crate) fn jacobian_det_node(d: &Domain, disp: &[Vec<f64>], idx: usize) -> f64 {
    let nd = d.ndim();
    let mut ix = [0usize; 2];
    match nd {
        1 => ix[0] = idx,
        _ => {
            ix[0] = idx / d.axes[1].nodes;
            ix[1] = idx % d.axes[1].nodes;
        }
    }
    // Derivative of (coordinate a displacement) along axis b.
    let deriv = |arr: &[f64], b: usize| -> f64 {
        let ax = &d.axes[b];
        let n = ax.nodes;
        let h = ax.spacing();
        let i = ix[b];
        let at = |j: usize| -> f64 {
            let mut jx = ix;
            jx[b] = j;
            arr[d.node_idx(&jx[..nd])]
        };
        if ax.periodic {
            (at((i + 1) % n) - at((i + n - 1) % n)) / (2.0 * h)
        } else if i == 0 {
            (at(1) - at(0)) / h
        } else if i == n - 1 {
            (at(n - 1) - at(n - 2)) / h
        } else {
            (at(i + 1) - at(i - 1)) / (2.0 * h)
        }
    };
    match nd {
        1 => 1.0 + deriv(&disp[0], 0),
        _ => {
            let a00 = 1.0 + deriv(&disp[0], 0);
            let a01 = deriv(&disp[0], 1);
            let a10 = deriv(&disp[1], 0);
            let a11 = 1.0 + deriv(&disp[1], 1);
            a00 * a11 - a01 * a10
        }
    }
}

/// Fix the genuine boundaries: non-periodic axes of compact kinds on both
/// sides, the origin side of a half line. Window edges of truncated axes are
/// not boundaries.
fn snap_boundaries(d: &Domain, disp: &mut [Vec<f64>]) -> Result<()> {
    let nd = d.ndim();
    let trunc_axis = d.kind.noncompact_axis();
    for a in 0..nd {
        if d.axes[a].periodic {
            continue;
        }
        let mut fixed_sides: Vec<usize> = Vec::new();
        if Some(a) != trunc_axis {
            fixed_sides.extend([0, d.axes[a].nodes - 1]);
        } else if d.kind == crate::domain::Kind::HalfLine {
            fixed_sides.push(0);
        }
        for side in fixed_sides {
            for idx in axis_layer(d, a, side) {
                for arr in disp.iter_mut() {
                    let v = arr[idx];
                    if !close_rel(v, 0.0, tol::SAMPLE_EQ_REL) {
                        return Err(Error::BadMap(format!(
                            "boundary node moves by {v:.3e}; boundaries must \
                             stay fixed"
                        )));
                    }
                    arr[idx] = 0.0;
                }
            }
        }
    }
    Ok(())
}

/// Check and snap the declared pure zones: beyond each end's radius the
/// axial displacement is exactly the declared shift and the transverse
/// displacement is exactly zero.
fn snap_end_zones(d: &Domain, disp: &mut [Vec<f64>], ends: &[EndBehavior]) -> Result<()> {
    let nd = d.ndim();
    let mut coords = [0.0; 2];
    for (k, e) in d.ends.iter().enumerate() {
        let be = ends[k];
        let want_axial = e.sign as f64 * be.shift();
        let b = be.beyond();
        for idx in 0..d.node_count() {
            node_coords(d, idx, &mut coords);
            let u = e.sign as f64 * coords[e.axis];
            if u < b - 1e-12 {
                continue;
            }
            for a in 0..nd {
                let want = if a == e.axis { want_axial } else { 0.0 };
                let got = disp[a][idx];
                if !close_rel(got, want, tol::SAMPLE_EQ_REL) {
                    return Err(Error::BadMap(format!(
                        "node at collar coordinate {u:.4} of end {} moves by \
                         {got:.6e} on axis {a}, declared {want:.6e}",
                        e.id
                    )));
                }
                disp[a][idx] = want;
            }
        }
    }
    Ok(())
}

/// Strict monotonicity of the axial map along every transverse line.
fn check_axial_monotone(d: &Domain, disp: &[Vec<f64>]) -> Result<()> {
    let nd = d.ndim();
    for a in 0..nd {
        if d.axes[a].periodic && nd == 2 {
            continue;
        }
        let ax = &d.axes[a];
        let cols = if nd == 1 { 1 } else { d.axes[1 - a].nodes };
        for col in 0..cols {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..ax.nodes {
                let idx = match nd {
                    1 => i,
                    _ => {
                        let mut ix = [0usize; 2];
                        ix[a] = i;
                        ix[1 - a] = col;
                        d.node_idx(&ix)
                    }
                };
                let v = ax.node(i) + disp[a][idx];
                if v <= prev {
                    return Err(Error::BadMap(format!(
                        "axis {a} map not strictly increasing at index {i}"
                    )));
                }
                prev = v;
            }
        }
        // 1D periodic: monotone as a lift.
        if nd == 1 && ax.periodic {
            let period = ax.len();
            let v0 = ax.node(0) + disp[0][0];
            let vlast = ax.node(ax.nodes - 1) + disp[0][ax.nodes - 1];
            if vlast >= v0 + period {
                return Err(Error::BadMap(
                    "circle map lift exceeds one period".into(),
                ));
            }
        }
    }
    Ok(())
}

fn min_jacobian(d: &Domain, disp: &[Vec<f64>]) -> f64 {
    (0..d.node_count())
        .map(|idx| jacobian_det_node(d, disp, idx))
        .fold(f64::INFINITY, f64::min)
}

/// Node indices of the layer of axis `a` at node index `side`.
fn axis_layer(d: &Domain, a: usize, side: usize) -> Vec<usize> {
    match d.ndim() {
        1 => vec![side],
        _ => (0..d.axes[1 - a].nodes)
            .map(|j| {
                let mut ix = [0usize; 2];
                ix[a] = side;
                ix[1 - a] = j;
                d.node_idx(&ix)
            })
            .collect(),
    }
}

/// Invert a monotone periodic PL map given node values (lift), for target y.
fn invert_periodic_pl(vals: &[f64], lo: f64, h: f64, period: f64, y: f64) -> f64 {
    let n = vals.len();
    // Bring y into [vals[0], vals[0] + period).
    let mut yy = y;
    let mut turns = 0.0;
    while yy < vals[0] {
        yy += period;
        turns -= period;
    }
    while yy >= vals[0] + period {
        yy -= period;
        turns += period;
    }
    // Extended node values: vals[n] wraps to vals[0] + period.
    let val_at = |i: usize| -> f64 {
        if i < n {
            vals[i]
        } else {
            vals[0] + period
        }
    };
    let mut a = 0usize;
    let mut b = n;
    while b - a > 1 {
        let mid = (a + b) / 2;
        if val_at(mid) <= yy {
            a = mid;
        } else {
            b = mid;
        }
    }
    let t = (yy - val_at(a)) / (val_at(b) - val_at(a));
    lo + (a as f64 + t) * h + turns
}

/// Pushforward of a tail model through an end behavior. For outward shifts
/// the window strip that feeds the tail must already match the model, which
/// is checked against the field samples.
fn shift_tail(
    mu: &DensityField,
    k: usize,
    e: &crate::domain::EndDescriptor,
    be: EndBehavior,
) -> Result<TailModel> {
    let model = mu.tails()[k].clone();
    let s = be.shift();
    if s == 0.0 {
        return Ok(model);
    }
    let d = &mu.domain;
    let cross = d.cross_section(e.axis);
    let t = d.truncation;
    if s > 0.0 {
        // The strip [T-s, T] slides past the edge; its samples must agree
        // with the analytic model for the shifted tail to stay exact.
        let ax = &d.axes[e.axis];
        let h = ax.spacing();
        let n = ax.nodes;
        let strip = ((s / h).ceil() as usize + 1).min(n - 1);
        for step in 0..=strip {
            let i = if e.sign > 0 { n - 1 - step } else { step };
            let u = e.sign as f64 * ax.node(i);
            let want = match model {
                TailModel::ConstantRate { density } => density,
                TailModel::Decaying { mass, rate } => {
                    // Analytic continuation of the tail into the window.
                    mass * rate / cross * (-rate * (u - t)).exp()
                }
            };
            for idx in axis_layer_nodes(d, e.axis, i) {
                let got = mu.samples()[idx];
                if !close_rel(got, want, 1e3 * tol::EDGE_CONSISTENCY_REL) {
                    return Err(Error::Numeric(format!(
                        "cannot shift the {} tail outward by {s:.4}: window \
                         sample {got:.6} at collar {u:.4} does not match the \
                         tail profile {want:.6}",
                        e.id
                    )));
                }
            }
        }
    }
    Ok(match model {
        TailModel::ConstantRate { density } => TailModel::ConstantRate { density },
        TailModel::Decaying { mass, rate } => TailModel::Decaying {
            mass: mass * (rate * s).exp(),
            rate,
        },
    })
}

fn axis_layer_nodes(d: &Domain, axis: usize, i: usize) -> Vec<usize> {
    match d.ndim() {
        1 => vec![i],
        _ => (0..d.axes[1 - axis].nodes)
            .map(|j| {
                let mut ix = [0usize; 2];
                ix[axis] = i;
                ix[1 - axis] = j;
                d.node_idx(&ix)
            })
            .collect(),
    }
}

/// A sampled isotopy: maps at increasing times from 0 to 1, starting at the
/// identity.
#[derive(Debug, Clone)]
pub struct IsotopyPath {
    pub times: Vec<f64>,
    pub maps: Vec<DiffeoMap>,
}

impl IsotopyPath {
    pub fn validate(&self, d: &Domain) -> Result<()> {
        if self.times.len() != self.maps.len() || self.times.is_empty() {
            return Err(Error::BadPath("times and maps must pair up".into()));
        }
        if self.times[0] != 0.0 {
            return Err(Error::BadPath("path must start at time 0".into()));
        }
        if *self.times.last().unwrap() != 1.0 {
            return Err(Error::BadPath("path must end at time 1".into()));
        }
        for w in self.times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::BadPath("times must increase strictly".into()));
            }
        }
        for m in &self.maps {
            d.expect_fp(m.domain.fingerprint(), "path map")?;
        }
        if !self.maps[0].is_identity() {
            return Err(Error::BadPath("path must start at the identity".into()));
        }
        Ok(())
    }

    /// Trivial path sitting at the given map's endpoints: identity at 0,
    /// the map at 1.
    pub fn from_endpoint(map: &DiffeoMap) -> IsotopyPath {
        IsotopyPath {
            times: vec![0.0, 1.0],
            maps: vec![DiffeoMap::identity(&map.domain), map.clone()],
        }
    }
}
