//! Transfer measurement under maps.
//!
//! The transfer functional J(A, B) = mu(A - B) - mu(B - A) becomes exactly
//! computable when A is the preimage of an axial region B under a map: per
//! transverse strip, J reduces to differences of the strip's axial mass
//! cumulative at region frontiers and at their preimages. The cumulative is
//! a trapezoid sum of the strip's linear density, which agrees exactly with
//! the corner-mean cell masses used elsewhere, and continues analytically
//! into the tails on both sides. No resampling of the field is involved, so
//! transfers can be measured through a chain of maps without compounding
//! interpolation error.

use super::{DensityField, DiffeoMap, TailModel};
use crate::domain::{Domain, Region};
use crate::util::{close_rel, tol};
use crate::{Error, Result};

/// Per-strip axial mass cumulatives of a field, with analytic tails.
///
/// A strip is the slice between two adjacent transverse nodes (one strip
/// total on one-dimensional domains). The cumulative is measured from the
/// low edge of the window and is negative below it.
pub struct AxialCumulative {
    axis: usize,
    strip_width: f64,
    cross: f64,
    /// Linear density along the axial axis, per strip.
    lambda: Vec<Vec<f64>>,
    /// Trapezoid cumulative at axial nodes, per strip.
    cum: Vec<Vec<f64>>,
    /// Tail model per domain end (cloned from the field).
    tails: Vec<TailModel>,
    /// Signs of the ends on the axial axis: (has negative end, has positive).
    end_lo: Option<usize>,
    end_hi: Option<usize>,
    lo: f64,
    hi: f64,
    spacing: f64,
}

impl AxialCumulative {
    pub fn new(mu: &DensityField) -> Result<AxialCumulative> {
        let d = &mu.domain;
        let axis = d.kind.noncompact_axis().ok_or_else(|| {
            Error::BadDomain("axial cumulatives need a truncated axis".into())
        })?;
        let ax = &d.axes[axis];
        let n = ax.nodes;
        let (strips, strip_width) = match d.ndim() {
            1 => (1usize, 1.0),
            _ => {
                let t = &d.axes[1 - axis];
                (t.cells(), t.spacing())
            }
        };
        let mut lambda = vec![vec![0.0; n]; strips];
        match d.ndim() {
            1 => lambda[0].copy_from_slice(mu.samples()),
            _ => {
                let nt = d.axes[1 - axis].nodes;
                for j in 0..strips {
                    let j2 = (j + 1) % nt;
                    for i in 0..n {
                        let a = mu.samples()[node_at(d, axis, i, j)];
                        let b = mu.samples()[node_at(d, axis, i, j2)];
                        lambda[j][i] = strip_width * 0.5 * (a + b);
                    }
                }
            }
        }
        let h = ax.spacing();
        let mut cum = vec![vec![0.0; n]; strips];
        for j in 0..strips {
            for i in 1..n {
                cum[j][i] =
                    cum[j][i - 1] + 0.5 * h * (lambda[j][i - 1] + lambda[j][i]);
            }
        }
        let end_lo = d.ends.iter().position(|e| e.axis == axis && e.sign < 0);
        let end_hi = d.ends.iter().position(|e| e.axis == axis && e.sign > 0);
        Ok(AxialCumulative {
            axis,
            strip_width,
            cross: d.cross_section(axis),
            lambda,
            cum,
            tails: mu.tails().to_vec(),
            end_lo,
            end_hi,
            lo: ax.lo,
            hi: ax.hi,
            spacing: h,
        })
    }

    pub fn strip_count(&self) -> usize {
        self.cum.len()
    }

    pub fn axis(&self) -> usize {
        self.axis
    }

    /// Strip mass from the window low edge to u. Quadratic inside cells
    /// (exact for the interpolated density), analytic in the tails; negative
    /// below the window.
    pub fn cum_at(&self, strip: usize, u: f64) -> f64 {
        let n = self.cum[strip].len();
        let share = self.strip_width / self.cross;
        if u >= self.hi {
            let base = self.cum[strip][n - 1];
            return match self.end_hi {
                Some(k) => {
                    base + share
                        * self.tails[k].mass_between(self.hi, u, self.hi, self.cross)
                }
                None => base,
            };
        }
        if u <= self.lo {
            return match self.end_lo {
                Some(k) => {
                    -share * self.tails[k].mass_between(-self.lo, -u, -self.lo, self.cross)
                }
                None => 0.0,
            };
        }
        let t = (u - self.lo) / self.spacing;
        let mut i = t.floor() as usize;
        if i >= n - 1 {
            i = n - 2;
        }
        let delta = u - (self.lo + i as f64 * self.spacing);
        let la = self.lambda[strip][i];
        let lb = self.lambda[strip][i + 1];
        self.cum[strip][i] + la * delta
            + (lb - la) * delta * delta / (2.0 * self.spacing)
    }

    /// Sum of the strip cumulatives at u: full cross-section mass from the
    /// window low edge.
    pub fn total_cum_at(&self, u: f64) -> f64 {
        (0..self.strip_count()).map(|s| self.cum_at(s, u)).sum()
    }

    /// Mass of the full-cross-section axial band [a, b].
    pub fn band_mass(&self, a: f64, b: f64) -> f64 {
        self.total_cum_at(b) - self.total_cum_at(a)
    }
}

fn node_at(d: &Domain, axial: usize, i: usize, j: usize) -> usize {
    let mut ix = [0usize; 2];
    ix[axial] = i;
    ix[1 - axial] = j;
    d.node_idx(&ix)
}

/// Number of transverse quadrature points per strip when a map's axial part
/// varies across the strip. Midpoint rule; the strip linear density itself
/// is already second order in the strip width.
const SUBCOLUMNS: usize = 8;

/// Sum over strips of the cumulative at the preimage of axial coordinate c
/// under the map's axial part. The preimage folds through the composition
/// stages one at a time, outermost first, so each solve runs against a
/// stage whose kinks sit on grid nodes and stays exact. Uses one shared
/// inverse when no stage's axial displacement varies transversely, a
/// midpoint quadrature across each strip otherwise.
fn summed_cum_at_preimage(
    cum: &AxialCumulative,
    h: &DiffeoMap,
    c: f64,
) -> f64 {
    let d = &h.domain;
    let axis = cum.axis;
    if d.ndim() == 1
        || h
            .stages()
            .iter()
            .all(|st| axial_stage_uniform(d, st, axis))
    {
        let mut alpha = c;
        for st in h.stages().iter().rev() {
            let vals = st.axial_values(d, 0);
            alpha = st.invert_axial_coord(d, &vals, axis, alpha);
        }
        return cum.total_cum_at(alpha);
    }
    let n = d.axes[axis].nodes;
    let nt = d.axes[1 - axis].nodes;
    let mut total = 0.0;
    let mut vals = vec![0.0; n];
    for j in 0..cum.strip_count() {
        let j2 = (j + 1) % nt;
        let mut acc = 0.0;
        for k in 0..SUBCOLUMNS {
            let t = (k as f64 + 0.5) / SUBCOLUMNS as f64;
            let mut alpha = c;
            for st in h.stages().iter().rev() {
                let disp = st.disp(axis);
                let col = |jj: usize, i: usize| disp[node_at(d, axis, i, jj)];
                for (i, v) in vals.iter_mut().enumerate() {
                    let blended = (1.0 - t) * col(j, i) + t * col(j2, i);
                    *v = d.axes[axis].node(i) + blended;
                }
                alpha = st.invert_axial_coord(d, &vals, axis, alpha);
            }
            acc += cum.cum_at(j, alpha);
        }
        total += acc / SUBCOLUMNS as f64;
    }
    total
}

/// True when the stage's axial displacement is the same on every transverse
/// column.
fn axial_stage_uniform(d: &Domain, st: &crate::fields::map::MapStage, axis: usize) -> bool {
    if d.ndim() == 1 {
        return true;
    }
    let n = d.axes[axis].nodes;
    let nt = d.axes[1 - axis].nodes;
    let disp = st.disp(axis);
    for j in 1..nt {
        for i in 0..n {
            let a = disp[node_at(d, axis, i, 0)];
            let b = disp[node_at(d, axis, i, j)];
            if !close_rel(a, b, tol::SAMPLE_EQ_REL) {
                return false;
            }
        }
    }
    true
}

/// Axial structure of a region: maximal runs of included axial cells, the
/// same on every transverse row, plus which sides continue into a tail.
struct AxialProfile {
    /// Inclusive cell ranges along the axial axis.
    runs: Vec<(usize, usize)>,
    tail_lo: bool,
    tail_hi: bool,
}

fn axial_profile(d: &Domain, r: &Region) -> Option<AxialProfile> {
    let axis = d.kind.noncompact_axis()?;
    let nc = d.axes[axis].cells();
    let mut included = vec![false; nc];
    match d.ndim() {
        1 => included.copy_from_slice(r.cells()),
        _ => {
            let tc = d.axes[1 - axis].cells();
            for i in 0..nc {
                let mut ix = [0usize; 2];
                ix[axis] = i;
                ix[1 - axis] = 0;
                let first = r.cell(d.cell_idx(&ix));
                for j in 1..tc {
                    ix[1 - axis] = j;
                    if r.cell(d.cell_idx(&ix)) != first {
                        return None;
                    }
                }
                included[i] = first;
            }
        }
    }
    let mut runs = Vec::new();
    let mut start: Option<usize> = None;
    for i in 0..nc {
        match (included[i], start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, nc - 1));
    }
    let mut tail_lo = false;
    let mut tail_hi = false;
    for (k, e) in d.ends.iter().enumerate() {
        if e.axis != axis {
            continue;
        }
        if e.sign > 0 {
            tail_hi = r.tail(k);
        } else {
            tail_lo = r.tail(k);
        }
    }
    Some(AxialProfile {
        runs,
        tail_lo,
        tail_hi,
    })
}

/// Region frontiers as (axial coordinate, sign), where sign +1 marks an
/// upper frontier (region below it) and -1 a lower one. Frontier sides that
/// continue into an owned tail are absent; the symmetric difference against
/// any axial preimage is supported away from them, so they contribute
/// nothing.
fn frontiers(d: &Domain, p: &AxialProfile) -> Vec<(f64, f64)> {
    let axis = d.kind.noncompact_axis().unwrap();
    let ax = &d.axes[axis];
    let nc = ax.cells();
    let mut out = Vec::new();
    for &(clo, chi) in &p.runs {
        if !(clo == 0 && p.tail_lo) {
            out.push((ax.node(clo), -1.0));
        }
        if !(chi == nc - 1 && p.tail_hi) {
            out.push((ax.node(chi + 1), 1.0));
        }
    }
    out
}

/// J(h^-1 B, B) under mu, for an axial region B. Exact frontier form when B
/// is transversely uniform; subcell quadrature fallback otherwise (compact B
/// only). Compact domains always take the quadrature path.
pub fn j_under_map(mu: &DensityField, h: &DiffeoMap, b: &Region) -> Result<f64> {
    let d = &mu.domain;
    d.expect_fp(h.domain.fingerprint(), "map")?;
    d.expect_fp(b.domain_fp(), "region")?;
    if d.kind.compact() {
        return j_by_quadrature(mu, h, b);
    }
    match axial_profile(d, b) {
        Some(p) => {
            let cum = AxialCumulative::new(mu)?;
            let mut j = 0.0;
            for (c, sign) in frontiers(d, &p) {
                let pre = summed_cum_at_preimage(&cum, h, c);
                j += sign * (pre - cum.total_cum_at(c));
            }
            Ok(j)
        }
        None => j_by_quadrature(mu, h, b),
    }
}

fn j_by_quadrature(mu: &DensityField, h: &DiffeoMap, b: &Region) -> Result<f64> {
    if b.tails().iter().any(|&t| t) {
        return Err(Error::BadRegion(
            "transfer against a transversely varying region that owns an end \
             is not supported"
                .into(),
        ));
    }
    Ok(preimage_mass(mu, h, b)? - mu.mass(b)?)
}

/// Mass of the preimage h^-1 B for a compact (tail-free) region B, by
/// midpoint quadrature on subdivided cells. First-order accurate at the
/// region boundary; prefer the frontier form where it applies.
pub fn preimage_mass(mu: &DensityField, h: &DiffeoMap, b: &Region) -> Result<f64> {
    let d = &mu.domain;
    d.expect_fp(h.domain.fingerprint(), "map")?;
    d.expect_fp(b.domain_fp(), "region")?;
    if b.tails().iter().any(|&t| t) {
        return Err(Error::BadRegion(
            "preimage quadrature needs a compact region".into(),
        ));
    }
    if let Some(axis) = d.kind.noncompact_axis() {
        // The preimage must stay inside the window; past the window edge the
        // map is a pure shift, so the check is a coordinate comparison.
        let ax = &d.axes[axis];
        let (mut blo, mut bhi) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in 0..d.cell_count() {
            if b.cell(c) {
                let i = d.cell_coords(c)[axis];
                blo = blo.min(ax.node(i));
                bhi = bhi.max(ax.node(i + 1));
            }
        }
        if blo <= bhi {
            for (k, e) in d.ends.iter().enumerate() {
                let shift_axial = e.sign as f64 * h.end_shift_total(k);
                if e.sign > 0 && bhi - shift_axial > ax.hi + 1e-12 {
                    return Err(Error::Numeric(
                        "preimage of the region leaves the window".into(),
                    ));
                }
                if e.sign < 0 && blo - shift_axial < ax.lo - 1e-12 {
                    return Err(Error::Numeric(
                        "preimage of the region leaves the window".into(),
                    ));
                }
            }
        }
    }
    const Q: usize = 8;
    let nd = d.ndim();
    let vol = d.cell_volume();
    let subvol = vol / (Q as f64).powi(nd as i32);
    let mut total = 0.0;
    for c in 0..d.cell_count() {
        let ix = d.cell_coords(c);
        let base: Vec<f64> = (0..nd).map(|a| d.axes[a].node(ix[a])).collect();
        for s in 0..Q.pow(nd as u32) {
            let mut x = [0.0; 2];
            let mut rem = s;
            for a in 0..nd {
                let q = rem % Q;
                rem /= Q;
                x[a] = base[a] + (q as f64 + 0.5) / Q as f64 * d.axes[a].spacing();
            }
            let y = h.eval2(x);
            if let Some(cy) = cell_of_point(d, y) {
                if b.cell(cy) {
                    total += mu.density_at(&x[..nd]) * subvol;
                }
            }
        }
    }
    Ok(total)
}

/// Cell containing a point, or None outside the window.
fn cell_of_point(d: &Domain, y: [f64; 2]) -> Option<usize> {
    let nd = d.ndim();
    let mut ix = [0usize; 2];
    for a in 0..nd {
        let ax = &d.axes[a];
        if ax.periodic {
            let w = ax.wrap(y[a]) - ax.lo;
            let mut i = (w / ax.spacing()).floor() as usize;
            if i >= ax.cells() {
                i = ax.cells() - 1;
            }
            ix[a] = i;
        } else {
            if y[a] < ax.lo - 1e-12 || y[a] > ax.hi + 1e-12 {
                return None;
            }
            let w = (y[a] - ax.lo).clamp(0.0, ax.len());
            let mut i = (w / ax.spacing()).floor() as usize;
            if i >= ax.cells() {
                i = ax.cells() - 1;
            }
            ix[a] = i;
        }
    }
    Some(d.cell_idx(&ix[..nd]))
}

/// Mass under mu of the preimage of the axial band [a, b] through a map:
/// mu(premap^-1 [a, b]). The band may extend past the window on either side.
/// This measures band masses of the pushforward of mu without resampling.
pub fn slab_mass_seen(
    mu: &DensityField,
    premap: &DiffeoMap,
    a: f64,
    b: f64,
) -> Result<f64> {
    mu.domain
        .expect_fp(premap.domain.fingerprint(), "premap")?;
    if !(a <= b) {
        return Err(Error::OutOfRange(format!(
            "band [{a}, {b}] is empty or reversed"
        )));
    }
    let cum = AxialCumulative::new(mu)?;
    Ok(summed_cum_at_preimage(&cum, premap, b)
        - summed_cum_at_preimage(&cum, premap, a))
}
