//! Node-sampled primitives of zero-integral deficits.
//!
//! In one dimension the primitive is U(x) = cum(x) - A(x) * total, where cum
//! is the trapezoid cumulative of the deficit and A the unit-normalized
//! cumulative of a smooth profile confined to the support box. Differencing
//! over a cell gives back the cell average of the deficit minus the profile
//! cell average times the (near-zero) total, so dU = w holds to the same
//! tolerance the zero-integral precondition grants.
//!
//! Two dimensions iterate the same trick: first along axis 1 within each
//! axis-0 node column, then along axis 0 on the column totals. Cumulatives
//! stop increasing outside the box and the normalized profile cumulative is
//! exactly one there, so both components vanish bitwise beyond the box and
//! nodes outside it generate no motion at all.

use super::{cell_mean, node_multi, CoForm, SupportBox};
use crate::domain::{Axis, Domain};
use crate::util::{bump, tol};
use crate::{Error, Result};

/// Normalized profile along one axis: node densities with unit trapezoid
/// integral over the span, and their cumulative (0 before the span, exactly
/// 1 after it). A fully covered periodic axis gets a constant profile.
fn profile(ax: &Axis, span: (usize, usize), full: bool) -> (Vec<f64>, Vec<f64>) {
    let n = ax.nodes;
    let h = ax.spacing();
    if full {
        let len = ax.len();
        let dens = vec![1.0 / len; n];
        let cum = (0..n).map(|i| (i as f64 * h) / len).collect();
        return (dens, cum);
    }
    let (i0, i1) = span;
    let (lo, hi) = (ax.node(i0), ax.node(i1));
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut raw = vec![0.0; n];
    for i in i0..=i1 {
        raw[i] = bump((ax.node(i) - mid) / half);
    }
    let mut cum = vec![0.0; n];
    let mut c = 0.0;
    for i in 0..n - 1 {
        c += 0.5 * h * (raw[i] + raw[i + 1]);
        cum[i + 1] = c;
    }
    let total = c;
    debug_assert!(total > 0.0);
    for v in &mut raw {
        *v /= total;
    }
    for v in &mut cum {
        *v /= total;
    }
    (raw, cum)
}

/// Signed integral and absolute integral of a deficit, both by the shared
/// corner-mean cell quadrature.
fn integrals(d: &Domain, w: &[f64]) -> (f64, f64) {
    let vol = d.cell_volume();
    let mut signed = 0.0;
    let mut abs = 0.0;
    for cell in 0..d.cell_count() {
        signed += vol * cell_mean(d, w, cell);
        let corners = d.cell_corner_nodes(cell);
        let k = corners.len() as f64;
        abs += vol * corners.iter().map(|&i| w[i].abs()).sum::<f64>() / k;
    }
    (signed, abs)
}

/// Primitive of a deficit within a support box.
///
/// The deficit must vanish outside the box (to 1e-12 of its sup) and have
/// integral at most 1e-9 of its absolute integral; the zero deficit maps to
/// the zero primitive exactly.
pub fn primitive(d: &Domain, w: &[f64], support: &SupportBox) -> Result<CoForm> {
    d.expect_fp(support.domain_fp(), "support box")?;
    if w.len() != d.node_count() {
        return Err(Error::BadField(format!(
            "deficit has {} samples, expected {}",
            w.len(),
            d.node_count()
        )));
    }
    if let Some(i) = w.iter().position(|v| !v.is_finite()) {
        return Err(Error::BadField(format!("deficit sample {i} is not finite")));
    }
    let wsup = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let nd = d.ndim();
    if wsup == 0.0 {
        let comps = vec![vec![0.0; d.node_count()]; if nd == 1 { 1 } else { 2 }];
        return Ok(CoForm::from_parts(d.fingerprint(), comps, support.clone()));
    }
    for idx in 0..d.node_count() {
        let ix = node_multi(d, idx);
        if !support.holds_node(&ix[..nd]) && w[idx].abs() > 1e-12 * wsup {
            return Err(Error::BadRegion(format!(
                "deficit leaks outside the support box at node {idx} \
                 (|{:.3e}| vs sup {:.3e})",
                w[idx], wsup
            )));
        }
    }
    let (signed, abs) = integrals(d, w);
    if signed.abs() > tol::MASS_BALANCE_REL * abs {
        return Err(Error::MassMismatch(format!(
            "deficit integral {signed:.6e} is not zero against absolute \
             integral {abs:.6e}"
        )));
    }
    // Build from a copy with the outside dust zeroed, so cumulatives freeze
    // bitwise beyond the box and nodes there stay exactly pinned.
    let mut wz = w.to_vec();
    for idx in 0..d.node_count() {
        let ix = node_multi(d, idx);
        if !support.holds_node(&ix[..nd]) {
            wz[idx] = 0.0;
        }
    }
    let comps = match nd {
        1 => build_1d(d, &wz, support),
        _ => build_2d(d, &wz, support),
    };
    Ok(CoForm::from_parts(d.fingerprint(), comps, support.clone()))
}

fn build_1d(d: &Domain, w: &[f64], support: &SupportBox) -> Vec<Vec<f64>> {
    let ax = &d.axes[0];
    let n = ax.nodes;
    let h = ax.spacing();
    let mut cum = vec![0.0; n];
    let mut c = 0.0;
    for i in 0..ax.cells() {
        let j = (i + 1) % n;
        c += 0.5 * h * (w[i] + w[j]);
        if i + 1 < n {
            cum[i + 1] = c;
        }
    }
    let total = c;
    let (_, a) = profile(ax, support.span(0), support.full_axis(0));
    let u = (0..n).map(|i| cum[i] - a[i] * total).collect();
    vec![u]
}

fn build_2d(d: &Domain, w: &[f64], support: &SupportBox) -> Vec<Vec<f64>> {
    let (n0, n1) = (d.axes[0].nodes, d.axes[1].nodes);
    let (h0, h1) = (d.axes[0].spacing(), d.axes[1].spacing());

    // Cumulative along each axis-0 node column, plus column totals.
    let mut cumq = vec![0.0; n0 * n1];
    let mut g = vec![0.0; n0];
    for p in 0..n0 {
        let mut c = 0.0;
        for j in 0..d.axes[1].cells() {
            let jn = (j + 1) % n1;
            c += 0.5 * h1 * (w[p * n1 + j] + w[p * n1 + jn]);
            if j + 1 < n1 {
                cumq[p * n1 + j + 1] = c;
            }
        }
        g[p] = c;
    }
    let (e1, a1) = profile(&d.axes[1], support.span(1), support.full_axis(1));

    // Axis-0 component: the in-column primitive, retired by the axis-1
    // profile so each column closes at zero.
    let mut b_p = vec![0.0; n0 * n1];
    for p in 0..n0 {
        for q in 0..n1 {
            b_p[p * n1 + q] = -(cumq[p * n1 + q] - a1[q] * g[p]);
        }
    }

    // Column totals get their own one-dimensional primitive along axis 0.
    let mut cump = vec![0.0; n0];
    let mut c = 0.0;
    for i in 0..d.axes[0].cells() {
        let jn = (i + 1) % n0;
        c += 0.5 * h0 * (g[i] + g[jn]);
        if i + 1 < n0 {
            cump[i + 1] = c;
        }
    }
    let total = c;
    let (_, a0) = profile(&d.axes[0], support.span(0), support.full_axis(0));
    let ug: Vec<f64> = (0..n0).map(|p| cump[p] - a0[p] * total).collect();

    // Axis-1 component spreads those totals over the axis-1 profile.
    let mut b_q = vec![0.0; n0 * n1];
    for p in 0..n0 {
        for q in 0..n1 {
            b_q[p * n1 + q] = ug[p] * e1[q];
        }
    }
    vec![b_p, b_q]
}
