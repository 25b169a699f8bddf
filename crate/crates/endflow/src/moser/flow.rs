//! Flow solvers: the time-dependent transport flow and the closed-form
//! one-dimensional cumulative transport.
//!
//! The transport field is V / rho_t with rho_t = rho0 + t w linear in time;
//! integrating every node through it with RK4 yields a map pushing rho0 to
//! rho0 + w. The map achieving that is integrated directly; its inverse,
//! needed to measure the pushforward residual, is integrated from the
//! time-reversed field rather than obtained by numerical inversion.

use super::primitive::primitive;
use super::{max_spacing, node_multi, MoserProblem, SupportBox};
use crate::domain::Domain;
use crate::fields::{DensityField, DiffeoMap, IsotopyPath};
use crate::util::tol;
use crate::{Error, Result};

/// Fixed step count of the first integration attempt, and the single
/// fallback when validation or the residual gate rejects it.
pub(crate) const FLOW_STEPS: usize = 64;
pub(crate) const FLOW_STEPS_RETRY: usize = 256;

/// The transport ODE data: field numerators and the density pencil.
pub(crate) struct TransportOde<'a> {
    pub d: &'a Domain,
    /// Per-axis node samples of V; motion vanishes where these do.
    pub v: Vec<Vec<f64>>,
    pub rho0: &'a [f64],
    pub w: &'a [f64],
}

impl TransportOde<'_> {
    fn velocity(&self, t: f64, x: &[f64; 2], out: &mut [f64; 2]) {
        let d = self.d;
        match d.ndim() {
            1 => {
                let p = &x[..1];
                let rho = d.interp(self.rho0, p) + t * d.interp(self.w, p);
                out[0] = d.interp(&self.v[0], p) / rho;
                out[1] = 0.0;
            }
            _ => {
                let rho = d.interp2(self.rho0, *x) + t * d.interp2(self.w, *x);
                out[0] = d.interp2(&self.v[0], *x) / rho;
                out[1] = d.interp2(&self.v[1], *x) / rho;
            }
        }
    }

    /// Smallest endpoint density over nodes; the pencil is linear in t, so
    /// positivity at both endpoints gives positivity throughout.
    pub(crate) fn min_density(&self) -> f64 {
        self.rho0
            .iter()
            .zip(self.w)
            .map(|(&r, &w)| r.min(r + w))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Integrate every node through the flow with RK4 in `steps` fixed steps.
/// `reverse` integrates the time-reversed field, yielding the inverse of the
/// forward map. Returns displacement arrays at each requested step count
/// (ascending; include `steps` for the final map). Nodes where V vanishes
/// exactly are pinned bitwise: every RK4 stage evaluates to zero there.
pub(crate) fn integrate_nodes(
    ode: &TransportOde,
    steps: usize,
    reverse: bool,
    snaps: &[usize],
) -> Vec<Vec<Vec<f64>>> {
    let d = ode.d;
    let nd = d.ndim();
    let n = d.node_count();
    let dt = 1.0 / steps as f64;
    let mut frames = vec![vec![vec![0.0; n]; nd]; snaps.len()];

    let eval = |tt: f64, y: &[f64; 2], out: &mut [f64; 2]| {
        if reverse {
            ode.velocity(1.0 - tt, y, out);
            out[0] = -out[0];
            out[1] = -out[1];
        } else {
            ode.velocity(tt, y, out);
        }
    };

    for idx in 0..n {
        if ode.v.iter().all(|arr| arr[idx] == 0.0) {
            continue;
        }
        let ix = node_multi(d, idx);
        let mut x0 = [0.0f64; 2];
        for a in 0..nd {
            x0[a] = d.axes[a].node(ix[a]);
        }
        let mut y = x0;
        let (mut k1, mut k2, mut k3, mut k4) = ([0.0; 2], [0.0; 2], [0.0; 2], [0.0; 2]);
        let mut stage = [0.0; 2];
        for s in 0..steps {
            let t = s as f64 * dt;
            eval(t, &y, &mut k1);
            for a in 0..nd {
                stage[a] = y[a] + 0.5 * dt * k1[a];
            }
            eval(t + 0.5 * dt, &stage, &mut k2);
            for a in 0..nd {
                stage[a] = y[a] + 0.5 * dt * k2[a];
            }
            eval(t + 0.5 * dt, &stage, &mut k3);
            for a in 0..nd {
                stage[a] = y[a] + dt * k3[a];
            }
            eval(t + dt, &stage, &mut k4);
            for a in 0..nd {
                y[a] += dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
            }
            if let Some(f) = snaps.iter().position(|&m| m == s + 1) {
                for a in 0..nd {
                    frames[f][a][idx] = y[a] - x0[a];
                }
            }
        }
    }
    frames
}

/// Equalize a compact problem: returns a map pushing mu to nu that is the
/// exact identity on the depth-collar boundary zone, together with the flow
/// path that produced it. Bitwise equal inputs return the exact identity.
pub fn moser_flow_solve(p: &MoserProblem) -> Result<(DiffeoMap, IsotopyPath)> {
    let d = p.domain();
    if p.mu.samples() == p.nu.samples() {
        let id = DiffeoMap::identity(d);
        return Ok((id.clone(), IsotopyPath::from_endpoint(&id)));
    }
    let nd = d.ndim();
    let mut w: Vec<f64> = p
        .nu
        .samples()
        .iter()
        .zip(p.mu.samples())
        .map(|(b, a)| b - a)
        .collect();
    // The inputs agree samplewise to depth 2 collar, so insetting the box by
    // 1.5 collar leaves half a collar of slack on each side; whatever dust
    // the samplewise tolerance admitted outside the box is dropped here.
    let sb = if (0..nd).all(|a| d.axes[a].periodic) {
        SupportBox::inset(d, 0.0)?
    } else {
        SupportBox::inset(d, 1.5 * p.collar)?
    };
    for idx in 0..d.node_count() {
        let ix = node_multi(d, idx);
        if !sb.holds_node(&ix[..nd]) {
            w[idx] = 0.0;
        }
    }
    let co = primitive(d, &w, &sb)?;
    let ode = TransportOde {
        d,
        v: co.transport_field(),
        rho0: p.mu.samples(),
        w: &w,
    };
    let scale = p.nu.sup().max(p.mu.sup());
    let budget = tol::solve_budget(max_spacing(d)) * scale;

    let mut last = Error::Numeric("flow produced no map".into());
    for steps in [FLOW_STEPS, FLOW_STEPS_RETRY] {
        let snaps = [steps / 4, steps / 2, 3 * steps / 4, steps];
        let frames = integrate_nodes(&ode, steps, false, &snaps);
        let mut maps = Vec::with_capacity(frames.len());
        let mut ok = true;
        for disp in frames {
            match DiffeoMap::new(d.clone(), disp, vec![]) {
                Ok(m) => maps.push(m),
                Err(e) => {
                    last = e;
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let inv_disp = integrate_nodes(&ode, steps, true, &[steps]).pop().unwrap();
        let inv = match DiffeoMap::new(d.clone(), inv_disp, vec![]) {
            Ok(m) => m,
            Err(e) => {
                last = e;
                continue;
            }
        };
        let fwd = maps.last().unwrap().clone();
        let resid = fwd.pushforward_via(&inv, &p.mu)?.sup_diff(&p.nu)?;
        if resid <= budget {
            let mut path_maps = vec![DiffeoMap::identity(d)];
            path_maps.extend(maps);
            let path = IsotopyPath {
                times: vec![0.0, 0.25, 0.5, 0.75, 1.0],
                maps: path_maps,
            };
            path.validate(d)?;
            return Ok((fwd, path));
        }
        last = Error::Numeric(format!(
            "equalization residual {resid:.3e} exceeds budget {budget:.3e} \
             at {steps} steps"
        ));
    }
    Err(last)
}

/// Monotone transport on a compact one-dimensional domain by matching
/// cumulatives: x maps to the point where nu has accumulated as much mass
/// as mu has up to x. Circles are transported relative to the basepoint at
/// the low edge, which stays fixed.
pub fn cdf_transport_1d(mu: &DensityField, nu: &DensityField) -> Result<DiffeoMap> {
    let d = &mu.domain;
    d.expect_fp(nu.domain.fingerprint(), "target density")?;
    if !(d.ndim() == 1 && d.kind.compact()) {
        return Err(Error::BadDomain(
            "cumulative transport needs a compact one-dimensional domain".into(),
        ));
    }
    let (ma, mb) = (mu.total_mass(), nu.total_mass());
    if (ma - mb).abs() > tol::MASS_BALANCE_REL * ma.abs().max(mb.abs()).max(1.0) {
        return Err(Error::MassMismatch(format!(
            "total masses differ: {ma} vs {mb}"
        )));
    }
    if mu.samples() == nu.samples() {
        return Ok(DiffeoMap::identity(d));
    }
    let ax = &d.axes[0];
    let (n, h) = (ax.nodes, ax.spacing());
    let gdens: Vec<f64> = (0..=ax.cells()).map(|k| nu.samples()[k % n]).collect();
    let cumsum = |s: &[f64]| -> Vec<f64> {
        let mut c = vec![0.0; ax.cells() + 1];
        for i in 0..ax.cells() {
            c[i + 1] = c[i] + 0.5 * h * (s[i] + s[(i + 1) % n]);
        }
        c
    };
    let f = cumsum(mu.samples());
    let g = cumsum(nu.samples());
    let gtot = *g.last().unwrap();
    let scale = gtot.abs().max(1.0);

    let mut disp = vec![0.0; n];
    for i in 0..n {
        if !ax.periodic && (i == 0 || i == n - 1) {
            // Boundary nodes are fixed by construction; solving for them
            // would only surface the admitted total-mass tolerance.
            continue;
        }
        let target = f[i].clamp(0.0, gtot);
        let (y, resid) = invert_cumulative(&g, &gdens, h, target);
        if resid.abs() > tol::ROOT_ABS * scale {
            return Err(Error::Numeric(format!(
                "cumulative inversion stalled at node {i}: residual {resid:.3e}"
            )));
        }
        disp[i] = (ax.lo + y).min(ax.hi) - ax.node(i);
    }
    DiffeoMap::new(d.clone(), vec![disp], vec![])
}

/// Invert a trapezoid cumulative: the depth y with cum(y) = target, plus the
/// residual actually achieved. `dens` holds the node densities the cumulative
/// was built from (positive, so cum increases strictly). Within a cell the
/// cumulative is the quadratic a d^2 + b d; the root is written in the form
/// that stays stable as the linear term dominates, and its discriminant
/// (b + 2 a d)^2 at the cell end keeps it real for any in-cell target.
pub(crate) fn invert_cumulative(cum: &[f64], dens: &[f64], h: f64, target: f64) -> (f64, f64) {
    let cells = cum.len() - 1;
    let j = match cum.binary_search_by(|v| v.partial_cmp(&target).unwrap()) {
        Ok(k) => k.min(cells - 1),
        Err(k) => k.saturating_sub(1).min(cells - 1),
    };
    let s = target - cum[j];
    let b = dens[j];
    let a = (dens[j + 1] - b) / (2.0 * h);
    let delta = if s == 0.0 {
        0.0
    } else {
        2.0 * s / (b + (b * b + 4.0 * a * s).sqrt())
    };
    (j as f64 * h + delta, (a * delta + b) * delta - s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Kind;
    use crate::util::bump;

    fn interval(n: usize) -> Domain {
        Domain::new(Kind::Interval, &[[0.0, 1.0]], &[n], None, None).unwrap()
    }

    /// Uniform plus a bump left of center against uniform plus its mirror
    /// image, masses matched to roundoff by the grid symmetry x -> 1 - x.
    fn bump_pair(d: &Domain, amp: f64, off: f64, r: f64) -> (DensityField, DensityField) {
        let n = d.axes[0].nodes;
        let mut a = vec![1.0; n];
        let mut b = vec![1.0; n];
        for i in 0..n {
            let x = d.axes[0].node(i);
            a[i] += amp * bump((x - 0.5 + off) / r);
            b[i] += amp * bump((x - 0.5 - off) / r);
        }
        (
            DensityField::new(d.clone(), a, vec![]).unwrap(),
            DensityField::new(d.clone(), b, vec![]).unwrap(),
        )
    }

    #[test]
    fn equal_densities_return_the_exact_identity() {
        let d = interval(65);
        let (mu, _) = bump_pair(&d, 0.5, 0.05, 0.12);
        let p = MoserProblem::new(mu.clone(), mu, 0.1).unwrap();
        let (map, path) = moser_flow_solve(&p).unwrap();
        assert!(map.is_identity());
        assert_eq!(path.maps.len(), 2);
    }

    #[test]
    fn interval_flow_pushes_mu_to_nu_and_fixes_the_collar() {
        let d = interval(257);
        let (mu, nu) = bump_pair(&d, 0.2, 0.07, 0.3);
        let eps = 0.06;
        let p = MoserProblem::new(mu.clone(), nu.clone(), eps).unwrap();
        let (map, path) = moser_flow_solve(&p).unwrap();
        let h = d.axes[0].spacing();
        let resid = map.pushforward(&mu).unwrap().sup_diff(&nu).unwrap();
        assert!(
            resid <= tol::solve_budget(h) * nu.sup(),
            "residual {resid:.3e}"
        );
        // Identity is bitwise through depth eps (in fact through 1.5 eps).
        for i in 0..257 {
            let x = d.axes[0].node(i);
            if x <= eps + 1e-12 || x >= 1.0 - eps - 1e-12 {
                assert_eq!(map.disp(0)[i], 0.0, "node {i} moved");
            }
        }
        path.validate(&d).unwrap();
        assert_eq!(path.maps.last().unwrap().disp(0), map.disp(0));
    }

    #[test]
    fn flow_and_cumulative_transport_agree() {
        let d = interval(513);
        let (mu, nu) = bump_pair(&d, 0.25, 0.07, 0.3);
        let p = MoserProblem::new(mu.clone(), nu.clone(), 0.06).unwrap();
        let (flow_map, _) = moser_flow_solve(&p).unwrap();
        let cdf_map = cdf_transport_1d(&mu, &nu).unwrap();
        let worst = flow_map
            .disp(0)
            .iter()
            .zip(cdf_map.disp(0))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst <= 1e-4, "maps differ by {worst:.3e}");
    }

    #[test]
    fn cumulative_transport_hits_the_target_density() {
        let d = interval(513);
        let (mu, nu) = bump_pair(&d, 0.2, 0.1, 0.4);
        let map = cdf_transport_1d(&mu, &nu).unwrap();
        let resid = map.pushforward(&mu).unwrap().sup_diff(&nu).unwrap();
        let h = d.axes[0].spacing();
        assert!(
            resid <= tol::solve_budget(h) * nu.sup(),
            "residual {resid:.3e}"
        );
    }

    #[test]
    fn torus_flow_equalizes_without_boundary() {
        let d = Domain::new(
            Kind::Torus,
            &[[0.0, 1.0], [0.0, 1.0]],
            &[48, 48],
            None,
            None,
        )
        .unwrap();
        let tau = 2.0 * std::f64::consts::PI;
        let mut a = vec![0.0; d.node_count()];
        let mut b = vec![0.0; d.node_count()];
        for p in 0..48 {
            for q in 0..48 {
                let (x, y) = (p as f64 / 48.0, q as f64 / 48.0);
                a[p * 48 + q] = 1.0 + 0.4 * (tau * x).sin() * (tau * y).cos();
                b[p * 48 + q] = 1.0 + 0.4 * (tau * (x - 0.25)).sin() * (tau * y).cos();
            }
        }
        let mu = DensityField::new(d.clone(), a, vec![]).unwrap();
        let nu = DensityField::new(d.clone(), b, vec![]).unwrap();
        let p = MoserProblem::new(mu.clone(), nu.clone(), 0.1).unwrap();
        let (map, _) = moser_flow_solve(&p).unwrap();
        let resid = map.pushforward(&mu).unwrap().sup_diff(&nu).unwrap();
        let h = d.axes[0].spacing();
        assert!(
            resid <= tol::solve_budget(h) * nu.sup(),
            "residual {resid:.3e}"
        );
    }

    #[test]
    fn circle_transport_fixes_the_basepoint() {
        let d = Domain::new(Kind::Circle, &[[0.0, 1.0]], &[129], None, None).unwrap();
        let n = d.axes[0].nodes;
        let mut a = vec![1.0; n];
        let mut b = vec![1.0; n];
        let tau = 2.0 * std::f64::consts::PI;
        for i in 0..n {
            let x = d.axes[0].node(i);
            a[i] += 0.3 * (tau * x).sin();
            b[i] += 0.3 * (tau * (x - 0.1)).sin();
        }
        let mu = DensityField::new(d.clone(), a, vec![]).unwrap();
        let nu = DensityField::new(d.clone(), b, vec![]).unwrap();
        let map = cdf_transport_1d(&mu, &nu).unwrap();
        assert_eq!(map.disp(0)[0], 0.0);
        let resid = map.pushforward(&mu).unwrap().sup_diff(&nu).unwrap();
        let h = d.axes[0].spacing();
        assert!(resid <= tol::solve_budget(h) * nu.sup());
    }
}
