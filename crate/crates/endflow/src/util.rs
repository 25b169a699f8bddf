//! Shared numeric helpers and the central tolerance table.

/// Tolerances used across the library, collected in one place so the
/// relationships between them stay visible.
pub mod tol {
    /// Relative threshold for treating two samples as equal.
    /// Chosen near f64 roundoff so that "exact" branches (identity maps,
    /// fixed collars) trigger only on genuinely identical data.
    pub const SAMPLE_EQ_REL: f64 = 1e-12;

    /// Relative agreement required between a field's window-edge samples and
    /// the value implied by its tail model. Looser than SAMPLE_EQ_REL because
    /// edge samples of resampled fields carry interpolation roundoff.
    pub const EDGE_CONSISTENCY_REL: f64 = 1e-9;

    /// Relative mass-balance tolerance for equalization preconditions.
    /// Quadrature agreement of genuinely equal masses is far below this.
    pub const MASS_BALANCE_REL: f64 = 1e-9;

    /// Relative block-mass floor for the piecewise equalizer. Looser than
    /// MASS_BALANCE_REL: block masses of staged inputs carry the residue of
    /// earlier transfer stages. The equalizer widens this floor by the grid
    /// budget, because pushforward-sampled inputs carry quadrature skew of
    /// that order in every block mass.
    pub const BLOCK_MASS_REL: f64 = 1e-8;

    /// Absolute tolerance for one-dimensional root finding (transfer times,
    /// cumulative inversion). Well below every downstream residual budget.
    pub const ROOT_ABS: f64 = 1e-10;

    /// Absolute accuracy of a single engulfing transfer, |J - a|.
    pub const TRANSFER_J_ABS: f64 = 1e-8;

    /// Absolute accuracy of component balancing residuals. One order looser
    /// than TRANSFER_J_ABS: balancing composes transfers and re-measures
    /// through the composite.
    pub const BALANCE_J_ABS: f64 = 1e-7;

    /// Absolute accuracy of stage outputs under the allocation functional,
    /// and of realized end charges. Another order looser: stages accumulate
    /// several balanced components.
    pub const STAGE_F_ABS: f64 = 1e-6;

    /// Absolute ceiling on |sum of charges| and on charge assigned to a
    /// finite end when validating admissibility.
    pub const CHARGE_ADMISSIBLE_ABS: f64 = 1e-12;

    /// Convergence threshold for Newton iterations when inverting 2D maps.
    pub const NEWTON_ABS: f64 = 1e-12;

    /// Strict margin demanded between a transfer target and the mass of the
    /// part it drains; keeps transfer times finite.
    pub const FEASIBILITY_MARGIN: f64 = 1e-9;

    /// Absolute ceiling on the sum of balancing targets, which must cancel
    /// for a compactly supported move to exist. At ROOT_ABS, since callers
    /// assemble the sum from solved transfers of the same accuracy.
    pub const TARGET_SUM_ABS: f64 = 1e-10;

    /// Absolute tolerance for the sampled functional identities checked when
    /// an allocation functional is built. The identities combine a handful
    /// of exact frontier transfers, so 1e-9 leaves two decades over their
    /// accumulated roundoff at unit masses.
    pub const AXIOM_CHECK_ABS: f64 = 1e-9;

    /// Second-order accuracy budget for single numeric primitives
    /// (primitives, pushforwards, collar equalization) at grid spacing h.
    pub fn grid_budget(h: f64) -> f64 {
        10.0 * h * h
    }

    /// Budget for a full equalization solve at grid spacing h; five grid
    /// budgets, covering the composition of collar fixes and block flows.
    pub fn solve_budget(h: f64) -> f64 {
        50.0 * h * h
    }
}

/// True when a and b agree within `rel` relative to max(1, |a|, |b|).
pub fn close_rel(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * 1f64.max(a.abs()).max(b.abs())
}

/// True when every pair of samples agrees within SAMPLE_EQ_REL.
pub fn samplewise_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(&x, &y)| close_rel(x, y, tol::SAMPLE_EQ_REL))
}

/// Cubic smoothstep: 0 at u<=0, 1 at u>=1, C1, maximum slope 3/2 at u=1/2.
/// The endpoint values are exact, so blends built from it vanish bitwise
/// outside their declared zone.
pub fn smoothstep(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        u * u * (3.0 - 2.0 * u)
    }
}

/// Standard C-infinity bump exp(1 - 1/(1 - u^2)) on (-1, 1), zero outside.
/// Unit height at u = 0; not normalized.
pub fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

/// Odd, monotone, C1 saturation: identity on [-knee, knee], asymptote at
/// +/- cap. Slope is 1 at the knee, so values at or below the knee pass
/// through unchanged (exactly).
pub fn saturate(x: f64, knee: f64, cap: f64) -> f64 {
    debug_assert!(cap > knee && knee > 0.0);
    let k = cap - knee;
    if x.abs() <= knee {
        x
    } else {
        x.signum() * (knee + k * ((x.abs() - knee) / k).tanh())
    }
}

/// FNV-1a 64-bit hash, used for domain fingerprints and report digests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Feed an f64 into an FNV accumulator through its bit pattern.
pub fn fnv_push_f64(h: &mut u64, x: f64) {
    for b in x.to_bits().to_le_bytes() {
        *h ^= b as u64;
        *h = h.wrapping_mul(0x100000001b3);
    }
}

/// Bracketed monotone root solve for increasing f with f(lo) <= 0 <= f(hi).
/// Bisection with a secant refinement each step; converges to ROOT_ABS in x
/// or in |f|.
pub fn solve_monotone<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    mut flo: f64,
    mut fhi: f64,
) -> f64 {
    debug_assert!(lo <= hi && flo <= 0.0 && fhi >= 0.0);
    for _ in 0..200 {
        if hi - lo <= tol::ROOT_ABS {
            break;
        }
        // Secant guess, clamped away from the bracket edges.
        let mut x = if fhi > flo {
            lo + (hi - lo) * (-flo) / (fhi - flo)
        } else {
            0.5 * (lo + hi)
        };
        let mid = 0.5 * (lo + hi);
        if !(x > lo && x < hi) {
            x = mid;
        }
        // Alternate with bisection so the bracket provably shrinks.
        let x = 0.5 * (x + mid);
        let fx = f(x);
        if fx.abs() <= tol::ROOT_ABS {
            return x;
        }
        if fx < 0.0 {
            lo = x;
            flo = fx;
        } else {
            hi = x;
            fhi = fx;
        }
    }
    if fhi.abs() < flo.abs() {
        hi
    } else {
        lo
    }
}

/// Expand a bracket upward/downward by doubling until f crosses target, then
/// solve. f must be increasing. Returns None if the bracket cannot be
/// established within `limit` doublings or f stalls (bounded reservoir).
pub fn solve_increasing_unbounded<F: FnMut(f64) -> f64>(
    mut f: F,
    target: f64,
    step0: f64,
    limit: u32,
) -> Option<f64> {
    let g0 = f(0.0) - target;
    if g0.abs() <= tol::ROOT_ABS {
        return Some(0.0);
    }
    let dir = if g0 < 0.0 { 1.0 } else { -1.0 };
    let mut t = step0 * dir;
    let mut prev = 0.0;
    let mut gprev = g0;
    for _ in 0..limit {
        let gt = f(t) - target;
        if gt == gprev && gt.signum() == g0.signum() {
            // No progress: reservoir on this side is exhausted.
            return None;
        }
        if gt.signum() != g0.signum() || gt == 0.0 {
            let (lo, hi, flo, fhi) = if dir > 0.0 {
                (prev, t, gprev, gt)
            } else {
                (t, prev, gt, gprev)
            };
            return Some(solve_monotone(|x| f(x) - target, lo, hi, flo, fhi));
        }
        prev = t;
        gprev = gt;
        t *= 2.0;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothstep_endpoints_exact() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert_eq!(smoothstep(-3.0), 0.0);
        assert_eq!(smoothstep(7.0), 1.0);
        assert!((smoothstep(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bump_support_and_height() {
        assert_eq!(bump(1.0), 0.0);
        assert_eq!(bump(-1.0), 0.0);
        assert_eq!(bump(2.5), 0.0);
        assert_eq!(bump(0.0), 1.0);
        // exp(1 - 1/0.19) = 0.0140777...
        assert!((bump(0.9) - 0.014077776007559566).abs() < 1e-12);
    }

    #[test]
    fn saturate_identity_below_knee() {
        let x = 0.2;
        assert_eq!(saturate(x, 0.3, 0.5), x);
        assert_eq!(saturate(-x, 0.3, 0.5), -x);
        assert!(saturate(10.0, 0.3, 0.5) <= 0.5);
        let mid = saturate(0.45, 0.3, 0.5);
        assert!(mid > 0.3 && mid < 0.45);
    }

    #[test]
    fn monotone_solver_hits_root() {
        // x^3 - 2 = 0 has root 2^(1/3) = 1.2599210498948732.
        let r = solve_monotone(|x| x * x * x - 2.0, 0.0, 2.0, -2.0, 6.0);
        assert!((r - 1.2599210498948732).abs() < 1e-9);
    }

    #[test]
    fn bracket_doubling_finds_distant_root() {
        let f = |t: f64| t.atan();
        // atan(t) = 1.5 near t = tan(1.5) = 14.101419947171719.
        let t = solve_increasing_unbounded(f, 1.5, 0.5, 60).unwrap();
        assert!((t - 14.101419947171719).abs() < 1e-8);
        // Target beyond the reachable range (atan < pi/2) must be refused.
        assert!(solve_increasing_unbounded(f, 1.8, 0.5, 60).is_none());
    }

    #[test]
    fn fnv_is_stable() {
        // Frozen reference value for the empty string and "a".
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
