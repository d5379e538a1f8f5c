//! Linear optimal-transport subproblems used by the GRAD solver.

use crate::matrix::Dense;
use crate::Scalar;

fn log_sum_exp<T: Scalar>(values: impl Iterator<Item = T> + Clone) -> T {
    let max = values.clone().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<T>().ln()
}

/// Entropic OT in the log domain.
///
/// `f` and `g` are dual potentials, warm-started from their incoming values
/// and updated in place. Returns the coupling and whether the row-marginal
/// error fell below `tol` within `max_iters`.
///
/// Iterations scale a cached kernel multiplicatively and fold the scalings
/// back into the log potentials whenever they leave a safe range, so most
/// iterations need no `exp`.
pub fn sinkhorn_log<T: Scalar>(
    cost: &Dense<T>,
    a: &[T],
    b: &[T],
    epsilon: T,
    max_iters: usize,
    tol: T,
    f: &mut [T],
    g: &mut [T],
) -> (Dense<T>, bool) {
    let (n, m) = (cost.rows(), cost.cols());
    let inv = T::one() / epsilon;
    let neg = cost.map(|c| -c * inv);
    let log_a: Vec<T> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<T> = b.iter().map(|v| v.ln()).collect();
    // potentials divided by epsilon
    let mut fs: Vec<T> = f.iter().map(|&v| v * inv).collect();
    let mut gs: Vec<T> = g.iter().map(|&v| v * inv).collect();
    let hi = T::max_value().sqrt().sqrt();
    let lo = T::one() / hi;
    let in_range = |x: T| x.is_finite() && x > lo && x < hi;

    let mut kernel = Dense::zeros(n, m);
    let mut u = vec![T::one(); n];
    let mut v = vec![T::one(); m];
    let mut kv = vec![T::zero(); n];
    let mut ktu = vec![T::zero(); m];
    let mut stale = true;
    let mut converged = false;
    let mut iters = 0;
    while iters < max_iters {
        iters += 1;
        if stale {
            for i in 0..n {
                let row = neg.row(i);
                fs[i] = log_a[i] - log_sum_exp((0..m).map(|j| gs[j] + row[j]));
            }
            for j in 0..m {
                gs[j] = log_b[j] - log_sum_exp((0..n).map(|i| fs[i] + neg[(i, j)]));
            }
            for i in 0..n {
                let (src, dst) = (neg.row(i), kernel.row_mut(i));
                for j in 0..m {
                    dst[j] = (fs[i] + gs[j] + src[j]).exp();
                }
            }
            u.fill(T::one());
            v.fill(T::one());
            stale = false;
        } else {
            for i in 0..n {
                u[i] = a[i] / kv[i];
            }
            ktu.fill(T::zero());
            for i in 0..n {
                let ui = u[i];
                for (acc, &k) in ktu.iter_mut().zip(kernel.row(i)) {
                    *acc = *acc + k * ui;
                }
            }
            for j in 0..m {
                v[j] = b[j] / ktu[j];
            }
        }
        // columns are exact after the v update; check rows
        let mut err = T::zero();
        for i in 0..n {
            kv[i] = crate::scalar::dot(kernel.row(i), &v);
            err = err + (u[i] * kv[i] - a[i]).abs();
        }
        if err < tol {
            converged = true;
            break;
        }
        let next_ok = (0..n).all(|i| in_range(a[i] / kv[i]));
        if !next_ok || !v.iter().all(|&x| in_range(x)) {
            absorb(&mut fs, &u);
            absorb(&mut gs, &v);
            stale = true;
        }
    }
    if !stale {
        absorb(&mut fs, &u);
        absorb(&mut gs, &v);
    }
    for (dst, &s) in f.iter_mut().zip(&fs) {
        *dst = s * epsilon;
    }
    for (dst, &s) in g.iter_mut().zip(&gs) {
        *dst = s * epsilon;
    }
    let plan = Dense::from_fn(n, m, |i, j| (fs[i] + gs[j] + neg[(i, j)]).exp());
    (plan, converged)
}

fn absorb<T: Scalar>(potential: &mut [T], scaling: &[T]) {
    for (p, &s) in potential.iter_mut().zip(scaling) {
        *p = *p + s.ln();
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Exact optimal coupling between uniform marginals 1/n and 1/m.
///
/// Solved as an integer min-cost flow (each source supplies m/g units, each
/// sink demands n/g units, g = gcd(n, m)) with successive shortest paths and
/// Johnson potentials. When n == m the result is a permutation matrix / n.
pub fn exact_uniform_transport<T: Scalar>(cost: &Dense<T>) -> Dense<T> {
    let (n, m) = (cost.rows(), cost.cols());
    assert!(n > 0 && m > 0, "empty cost matrix");
    let g = gcd(n, m);
    let mut supply = vec![(m / g) as u64; n];
    let mut demand = vec![(n / g) as u64; m];
    let total_units = (n * m / g) as f64;
    let mut flow = vec![0u64; n * m];

    let inf = T::infinity();
    let zero = T::zero();
    let mut pot_s = vec![zero; n];
    let mut pot_t: Vec<T> = (0..m)
        .map(|j| (0..n).map(|i| cost[(i, j)]).fold(inf, T::min))
        .collect();

    let mut dist_s = vec![inf; n];
    let mut dist_t = vec![inf; m];
    // predecessor of a sink is a source; predecessor of a source is a sink
    let mut pred_t = vec![usize::MAX; m];
    let mut pred_s = vec![usize::MAX; n];
    let mut done_s = vec![false; n];
    let mut done_t = vec![false; m];

    while supply.iter().any(|&s| s > 0) {
        dist_s.fill(inf);
        dist_t.fill(inf);
        pred_t.fill(usize::MAX);
        pred_s.fill(usize::MAX);
        done_s.fill(false);
        done_t.fill(false);
        for i in 0..n {
            if supply[i] > 0 {
                dist_s[i] = zero;
            }
        }
        // dense Dijkstra over n sources + m sinks
        loop {
            let mut best: Option<(bool, usize)> = None;
            let mut best_d = inf;
            for i in 0..n {
                if !done_s[i] && dist_s[i] < best_d {
                    best_d = dist_s[i];
                    best = Some((true, i));
                }
            }
            for j in 0..m {
                if !done_t[j] && dist_t[j] < best_d {
                    best_d = dist_t[j];
                    best = Some((false, j));
                }
            }
            let Some((is_source, u)) = best else { break };
            if is_source {
                done_s[u] = true;
                let row = cost.row(u);
                for j in 0..m {
                    if done_t[j] {
                        continue;
                    }
                    let rc = (row[j] + pot_s[u] - pot_t[j]).max(zero);
                    let nd = best_d + rc;
                    if nd < dist_t[j] {
                        dist_t[j] = nd;
                        pred_t[j] = u;
                    }
                }
            } else {
                done_t[u] = true;
                for i in 0..n {
                    if done_s[i] || flow[i * m + u] == 0 {
                        continue;
                    }
                    let rc = (pot_t[u] - cost[(i, u)] - pot_s[i]).max(zero);
                    let nd = best_d + rc;
                    if nd < dist_s[i] {
                        dist_s[i] = nd;
                        pred_s[i] = u;
                    }
                }
            }
        }

        let target = (0..m)
            .filter(|&j| demand[j] > 0 && dist_t[j] < inf)
            .min_by(|&x, &y| dist_t[x].partial_cmp(&dist_t[y]).unwrap().then(x.cmp(&y)))
            .expect("transport problem is always feasible");
        let cap = dist_t[target];

        // bottleneck along the path back to a source with supply
        let mut amount = demand[target];
        let mut j = target;
        let start = loop {
            let i = pred_t[j];
            if pred_s[i] == usize::MAX {
                break i;
            }
            let prev_j = pred_s[i];
            amount = amount.min(flow[i * m + prev_j]);
            j = prev_j;
        };
        amount = amount.min(supply[start]);

        let mut j = target;
        loop {
            let i = pred_t[j];
            flow[i * m + j] += amount;
            if i == start {
                break;
            }
            let prev_j = pred_s[i];
            flow[i * m + prev_j] -= amount;
            j = prev_j;
        }
        supply[start] -= amount;
        demand[target] -= amount;

        for i in 0..n {
            pot_s[i] = pot_s[i] + dist_s[i].min(cap);
        }
        for j in 0..m {
            pot_t[j] = pot_t[j] + dist_t[j].min(cap);
        }
    }

    let scale = T::of(1.0 / total_units);
    Dense::from_fn(n, m, |i, j| T::of(flow[i * m + j] as f64) * scale)
}
