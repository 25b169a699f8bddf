//! Fiberwise normalization on a one-sided collar strip.
//!
//! Given two densities on the same domain and a full-cross-section strip
//! anchored at one of its edges, each fiber of the strip is pushed by the
//! one-dimensional cumulative transport of its restricted densities, then
//! blended to the identity before the far edge. Near the anchored edge the
//! blend is inactive and the transport exact, so the pushforward matches the
//! target there; the certified depth is returned alongside the map.
//!
//! Fibers where the two densities agree bitwise are never touched, and the
//! anchored edge itself is always fixed, so the construction composes with
//! maps acting on the far side of the strip without interference.

use super::flow::invert_cumulative;
use crate::domain::{Domain, Region};
use crate::fields::{DensityField, DiffeoMap, EndBehavior};
use crate::util::{saturate, smoothstep};
use crate::{Error, Result};

/// Which edge of the strip is anchored: the collar extends from that edge in
/// the direction of `sign` along `axis`. Positive sign anchors the low edge,
/// negative the high edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollarSide {
    pub axis: usize,
    pub sign: i8,
}

/// Fraction of the strip width certified when the inputs already agree; the
/// blend starts at half width, so a quarter leaves a symmetric margin.
const QUARTER: f64 = 0.25;

/// Normalize `mu` toward `nu` on the strip: returns a map supported in the
/// strip pushing `mu` to a density that matches `nu` from the anchored edge
/// to the returned depth. Bitwise equal inputs return the exact identity and
/// certify a quarter of the strip width.
pub fn collar_normalize(
    mu: &DensityField,
    nu: &DensityField,
    collar: &Region,
    side: CollarSide,
) -> Result<(DiffeoMap, f64)> {
    let d = &mu.domain;
    d.expect_fp(nu.domain.fingerprint(), "target density")?;
    d.expect_fp(collar.domain_fp(), "collar region")?;
    collar.validate(d)?;
    if side.axis >= d.ndim() {
        return Err(Error::BadRegion(format!(
            "collar side names axis {}, domain has {}",
            side.axis,
            d.ndim()
        )));
    }
    if side.sign != 1 && side.sign != -1 {
        return Err(Error::BadRegion(format!(
            "collar side sign must be +1 or -1, got {}",
            side.sign
        )));
    }
    let f = side.axis;
    if d.axes[f].periodic {
        return Err(Error::BadRegion(
            "collar fibers must run along a non-periodic axis".into(),
        ));
    }
    if collar.tails().iter().any(|&t| t) {
        return Err(Error::BadRegion(
            "collar region must not reach into a tail".into(),
        ));
    }
    let (c_lo, c_hi) = strip_span(d, collar, f)?;
    let cells = c_hi - c_lo + 1;
    if cells < 4 {
        return Err(Error::BadRegion(format!(
            "collar strip holds {cells} cells of depth; need at least 4"
        )));
    }
    let ax = &d.axes[f];
    let h = ax.spacing();
    let w = cells as f64 * h;
    let (n_lo, n_hi) = (c_lo, c_hi + 1);
    let anchor = if side.sign > 0 { n_lo } else { n_hi };
    let m = n_hi - n_lo;
    let knee = w / 6.0;
    let cap = w / 4.0;
    let dir = side.sign as f64;

    let nd = d.ndim();
    let fibers = if nd == 1 { 1 } else { d.axes[1 - f].nodes };
    let node_at = |k: usize, fiber: usize| -> usize {
        let i = if side.sign > 0 { anchor + k } else { anchor - k };
        match nd {
            1 => i,
            _ => {
                let mut ix = [0usize; 2];
                ix[f] = i;
                ix[1 - f] = fiber;
                d.node_idx(&ix)
            }
        }
    };

    let mut disp = vec![vec![0.0; d.node_count()]; nd];
    let mut eps_hat = QUARTER * w;
    let mut any_moved = false;

    for fiber in 0..fibers {
        let idxs: Vec<usize> = (0..=m).map(|k| node_at(k, fiber)).collect();
        let muf: Vec<f64> = idxs.iter().map(|&i| mu.samples()[i]).collect();
        let nuf: Vec<f64> = idxs.iter().map(|&i| nu.samples()[i]).collect();
        if muf == nuf {
            continue;
        }
        any_moved = true;
        let mut fm = vec![0.0; m + 1];
        let mut gm = vec![0.0; m + 1];
        for k in 0..m {
            fm[k + 1] = fm[k] + 0.5 * h * (muf[k] + muf[k + 1]);
            gm[k + 1] = gm[k] + 0.5 * h * (nuf[k] + nuf[k + 1]);
        }
        // Fiber masses need not agree; targets past the far edge are pulled
        // just inside so the inversion stays in range. The blend kills the
        // displacement long before the clamp can matter.
        let cap_target = gm[m] * (1.0 - 1e-12);

        let mut deltas = vec![0.0; m + 1];
        for k in 1..=m {
            let target = fm[k].min(cap_target).max(0.0);
            let (y, _) = invert_cumulative(&gm, &nuf, h, target);
            deltas[k] = y - k as f64 * h;
        }
        // Certified depth: the prefix where the raw transport stays inside
        // the knee (so saturation passes it through unchanged), shortened by
        // one knee so preimages of certified points stay in the prefix.
        let mut khat = 0usize;
        for k in 1..=m {
            if k as f64 * h > 0.5 * w + 1e-12 * w {
                break;
            }
            if deltas[k].abs() <= knee * (1.0 - 1e-9) {
                khat = k;
            } else {
                break;
            }
        }
        eps_hat = eps_hat.min(khat as f64 * h - knee);

        for k in 1..=m {
            let t = k as f64 * h;
            let lam = 1.0 - smoothstep((t - 0.5 * w) / (0.4 * w));
            if lam == 0.0 {
                continue;
            }
            disp[f][idxs[k]] = dir * lam * saturate(deltas[k], knee, cap);
        }
    }

    if eps_hat < h {
        return Err(Error::Numeric(format!(
            "collar densities disagree too close to the anchored edge: \
             certified depth {eps_hat:.3e} is below one cell"
        )));
    }
    let ends: Vec<EndBehavior> = d
        .ends
        .iter()
        .map(|e| {
            let (xlo, xhi) = if e.axis == f {
                (ax.node(n_lo), ax.node(n_hi))
            } else {
                (d.axes[e.axis].lo, d.axes[e.axis].hi)
            };
            let u_far = (e.sign as f64 * xlo).max(e.sign as f64 * xhi);
            let beyond = (u_far + d.axes[e.axis].spacing())
                .max(e.collar_start)
                .min(d.truncation);
            EndBehavior::Identity { beyond }
        })
        .collect();
    let map = DiffeoMap::new(d.clone(), disp, ends)?;
    debug_assert!(any_moved || map.is_identity());
    Ok((map, eps_hat))
}

/// Check the region is a full-cross-section slab of cells along `f` and
/// return its inclusive cell span on that axis.
fn strip_span(d: &Domain, collar: &Region, f: usize) -> Result<(usize, usize)> {
    let mut lo = usize::MAX;
    let mut hi = 0usize;
    for c in 0..d.cell_count() {
        if collar.cell(c) {
            let k = cell_axis_coord(d, c, f);
            lo = lo.min(k);
            hi = hi.max(k);
        }
    }
    if lo == usize::MAX {
        return Err(Error::BadRegion("collar region is empty".into()));
    }
    for c in 0..d.cell_count() {
        let k = cell_axis_coord(d, c, f);
        let want = k >= lo && k <= hi;
        if collar.cell(c) != want {
            return Err(Error::BadRegion(format!(
                "collar region is not a full-cross-section slab along axis \
                 {f}: cell {c} breaks the pattern"
            )));
        }
    }
    Ok((lo, hi))
}

fn cell_axis_coord(d: &Domain, c: usize, f: usize) -> usize {
    match d.ndim() {
        1 => c,
        _ => d.cell_coords(c)[f],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Kind;
    use crate::util::{bump, tol};

    fn interval(n: usize) -> Domain {
        Domain::new(Kind::Interval, &[[0.0, 1.0]], &[n], None, None).unwrap()
    }

    fn strip(d: &Domain, f: usize, lo: f64, hi: f64) -> Region {
        Region::from_predicate(d, |x| x[f] > lo && x[f] < hi)
    }

    #[test]
    fn equal_inputs_give_identity_and_quarter_width() {
        let d = interval(41);
        let mu = DensityField::new(d.clone(), vec![1.3; 41], vec![]).unwrap();
        let r = strip(&d, 0, 0.0, 0.4);
        let side = CollarSide { axis: 0, sign: 1 };
        let (map, eps) = collar_normalize(&mu, &mu, &r, side).unwrap();
        assert!(map.is_identity());
        // A quarter of the 16-cell strip, exactly.
        assert_eq!(eps, 4.0 * d.axes[0].spacing());
    }

    #[test]
    fn anchored_zone_matches_the_target_density() {
        let d = interval(161);
        let h = d.axes[0].spacing();
        let n = 161;
        let mut a = vec![1.0; n];
        let mut b = vec![1.0; n];
        for i in 0..n {
            let x = d.axes[0].node(i);
            a[i] += 0.03 * bump((x - 0.22) / 0.2);
            b[i] += 0.03 * bump((x - 0.26) / 0.2);
        }
        let mu = DensityField::new(d.clone(), a, vec![]).unwrap();
        let nu = DensityField::new(d.clone(), b, vec![]).unwrap();
        let r = strip(&d, 0, 0.0, 0.5);
        let side = CollarSide { axis: 0, sign: 1 };
        let (map, eps) = collar_normalize(&mu, &nu, &r, side).unwrap();
        assert!(eps >= h, "certified depth {eps}");
        let pushed = map.pushforward(&mu).unwrap();
        let mut worst = 0.0f64;
        for i in 0..n {
            let x = d.axes[0].node(i);
            if x <= eps {
                worst = worst.max((pushed.samples()[i] - nu.samples()[i]).abs());
            }
            if x >= 0.5 {
                assert_eq!(map.disp(0)[i], 0.0, "support leaked to node {i}");
            }
        }
        assert!(
            worst <= tol::grid_budget(h) * nu.sup(),
            "anchored zone residual {worst:.3e}"
        );
        assert_eq!(map.disp(0)[0], 0.0);
    }

    #[test]
    fn high_edge_anchor_mirrors_the_low_edge() {
        let d = interval(161);
        let n = 161;
        let mut a = vec![1.0; n];
        let mut b = vec![1.0; n];
        for i in 0..n {
            let x = d.axes[0].node(i);
            a[i] += 0.03 * bump((x - 0.78) / 0.2);
            b[i] += 0.03 * bump((x - 0.74) / 0.2);
        }
        let mu = DensityField::new(d.clone(), a, vec![]).unwrap();
        let nu = DensityField::new(d.clone(), b, vec![]).unwrap();
        let r = strip(&d, 0, 0.5, 1.0);
        let side = CollarSide { axis: 0, sign: -1 };
        let (map, eps) = collar_normalize(&mu, &nu, &r, side).unwrap();
        let h = d.axes[0].spacing();
        assert!(eps >= h);
        let pushed = map.pushforward(&mu).unwrap();
        let mut worst = 0.0f64;
        for i in 0..n {
            let x = d.axes[0].node(i);
            if x >= 1.0 - eps {
                worst = worst.max((pushed.samples()[i] - nu.samples()[i]).abs());
            }
            if x <= 0.5 {
                assert_eq!(map.disp(0)[i], 0.0);
            }
        }
        assert!(worst <= tol::grid_budget(h) * nu.sup());
    }

    #[test]
    fn untouched_fibers_stay_bitwise_fixed() {
        let d = Domain::new(
            Kind::Cylinder,
            &[[0.0, 1.0], [-4.0, 4.0]],
            &[16, 65],
            Some(4.0),
            Some(3.0),
        )
        .unwrap();
        let nodes = d.node_count();
        let n1 = 65;
        let mut a = vec![1.0; nodes];
        let mut b = vec![1.0; nodes];
        // Only the theta = 3 fiber differs.
        for q in 0..n1 {
            let u = d.axes[1].node(q);
            a[3 * n1 + q] += 0.04 * bump((u - 0.9) / 0.6);
            b[3 * n1 + q] += 0.04 * bump((u - 1.1) / 0.6);
        }
        let tails = vec![
            crate::fields::TailModel::ConstantRate { density: 1.0 },
            crate::fields::TailModel::ConstantRate { density: 1.0 },
        ];
        let mu = DensityField::new(d.clone(), a, tails.clone()).unwrap();
        let nu = DensityField::new(d.clone(), b, tails).unwrap();
        let r = Region::from_predicate(&d, |x| x[1] > 0.0 && x[1] < 2.0);
        let side = CollarSide { axis: 1, sign: 1 };
        let (map, eps) = collar_normalize(&mu, &nu, &r, side).unwrap();
        assert!(eps > 0.0);
        assert!(!map.is_identity());
        for p in 0..16 {
            for q in 0..n1 {
                if p != 3 {
                    assert_eq!(map.disp(1)[p * n1 + q], 0.0, "fiber {p} moved");
                }
                assert_eq!(map.disp(0)[p * n1 + q], 0.0);
            }
        }
    }

    #[test]
    fn bad_strips_are_refused() {
        let d = interval(41);
        let mu = DensityField::new(d.clone(), vec![1.0; 41], vec![]).unwrap();
        let side = CollarSide { axis: 0, sign: 1 };
        // Too thin.
        let thin = strip(&d, 0, 0.0, 0.06);
        assert!(matches!(
            collar_normalize(&mu, &mu, &thin, side),
            Err(Error::BadRegion(_))
        ));
        // Bad sign.
        let r = strip(&d, 0, 0.0, 0.4);
        assert!(collar_normalize(&mu, &mu, &r, CollarSide { axis: 0, sign: 0 }).is_err());
        // Periodic fiber axis.
        let dc = Domain::new(Kind::Circle, &[[0.0, 1.0]], &[32], None, None).unwrap();
        let mc = DensityField::new(dc.clone(), vec![1.0; 32], vec![]).unwrap();
        let rc = Region::from_predicate(&dc, |x| x[0] < 0.5);
        assert!(matches!(
            collar_normalize(&mc, &mc, &rc, side),
            Err(Error::BadRegion(_))
        ));
        // Not a slab: poke a hole in the middle.
        let holed = Region::from_predicate(&d, |x| (x[0] < 0.4) && (x[0] < 0.2 || x[0] > 0.25));
        assert!(matches!(
            collar_normalize(&mu, &mu, &holed, side),
            Err(Error::BadRegion(_))
        ));
    }
}
