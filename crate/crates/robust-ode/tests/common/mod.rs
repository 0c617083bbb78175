//! Shared test oracles, independent of the library's solver path.

/// Exhaustive scan of the probability simplex at a fixed resolution.
/// Enumerates every composition `(c_1, ..., c_k)` of `steps` and evaluates
/// the quadratic form by forward differences over the last two coordinates.
pub struct GridScan {
    /// minimum of `w' A w` over the grid
    pub u_min: f64,
    /// minimum Euclidean norm among grid points with `w' A w <= level`
    pub feasible_min_norm: Option<f64>,
}

pub fn grid_search_simplex(a: &[f64], k: usize, steps: usize, level: f64) -> GridScan {
    assert!(k >= 1);
    let r = 1.0 / steps as f64;
    let mut scan = GridScan {
        u_min: f64::INFINITY,
        feasible_min_norm: None,
    };
    if k == 1 {
        let q = a[0];
        scan.u_min = q;
        if q <= level {
            scan.feasible_min_norm = Some(1.0);
        }
        return scan;
    }
    // prefix state: v (first k-2 coordinates), A v, ||v||^2, q(v, v)
    let mut prefix = vec![0usize; k.saturating_sub(2)];
    let mut av = vec![0.0; k];
    let mut record = |scan: &mut GridScan,
                      av: &[f64],
                      qvv: f64,
                      norm_v: f64,
                      budget: usize| {
        // last two coordinates x and rem - x, x = i * r
        let alpha = k - 2;
        let beta = k - 1;
        let rem = budget as f64 * r;
        let a_aa = a[alpha * k + alpha];
        let a_bb = a[beta * k + beta];
        let a_ab = a[alpha * k + beta];
        let c0 = qvv + 2.0 * rem * av[beta] + rem * rem * a_bb;
        let c1 = 2.0 * (av[alpha] - av[beta]) - 2.0 * rem * a_bb + 2.0 * rem * a_ab;
        let c2 = a_aa + a_bb - 2.0 * a_ab;
        // norm^2 = norm_v + x^2 + (rem - x)^2 = (norm_v + rem^2) - 2 rem x + 2 x^2
        let n0 = norm_v + rem * rem;
        let n1 = -2.0 * rem;
        let n2 = 2.0;
        for i in 0..=budget {
            let x = i as f64 * r;
            let q = c0 + x * (c1 + x * c2);
            if q < scan.u_min {
                scan.u_min = q;
            }
            if q <= level {
                let norm2 = n0 + x * (n1 + x * n2);
                let norm = norm2.sqrt();
                if scan.feasible_min_norm.is_none_or(|m| norm < m) {
                    scan.feasible_min_norm = Some(norm);
                }
            }
        }
    };

    fn walk(
        a: &[f64],
        k: usize,
        r: f64,
        depth: usize,
        budget: usize,
        prefix: &mut [usize],
        av: &mut Vec<f64>,
        qvv: f64,
        norm_v: f64,
        scan: &mut GridScan,
        record: &mut impl FnMut(&mut GridScan, &[f64], f64, f64, usize),
    ) {
        if depth == prefix.len() {
            record(scan, av, qvv, norm_v, budget);
            return;
        }
        for c in 0..=budget {
            let x = c as f64 * r;
            // incremental: v' = v + x e_depth
            let mut av_new = av.clone();
            for j in 0..k {
                av_new[j] += x * a[depth * k + j];
            }
            let q_new = qvv + 2.0 * x * av[depth] + x * x * a[depth * k + depth];
            let norm_new = norm_v + x * x;
            prefix[depth] = c;
            walk(
                a,
                k,
                r,
                depth + 1,
                budget - c,
                prefix,
                &mut av_new,
                q_new,
                norm_new,
                scan,
                record,
            );
        }
    }

    walk(
        a,
        k,
        r,
        0,
        steps,
        &mut prefix,
        &mut av,
        0.0,
        0.0,
        &mut scan,
        &mut record,
    );
    scan
}

/// Random symmetric PSD matrix `B B' / s` scaled to unit spectral norm
/// times `target_norm`.
pub fn random_psd(
    k: usize,
    target_norm: f64,
    rng: &mut impl rand_chacha::rand_core::RngCore,
) -> Vec<f64> {
    let mut b = vec![0.0; k * k];
    for v in &mut b {
        *v = robust_ode::rng::standard_normal(rng);
    }
    let mut a = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let mut s = 0.0;
            for l in 0..k {
                s += b[i * k + l] * b[j * k + l];
            }
            a[i * k + j] = s;
        }
    }
    let norm = robust_ode::linalg::sym_operator_norm(&a, k);
    if norm > 0.0 {
        let scale = target_norm / norm;
        for v in &mut a {
            *v *= scale;
        }
    }
    a
}

#[cfg(test)]
mod self_tests {
    use super::*;

    #[test]
    fn grid_scan_matches_closed_form_on_diagonal() {
        // diag(1, 2): continuum min 2/3 at (2/3, 1/3)
        let scan = grid_search_simplex(&[1.0, 0.0, 0.0, 2.0], 2, 1000, 0.7);
        assert!((scan.u_min - 2.0 / 3.0).abs() < 1e-5, "u {}", scan.u_min);
        let norm = scan.feasible_min_norm.unwrap();
        assert!(norm > 0.7, "{norm}");
    }
}
