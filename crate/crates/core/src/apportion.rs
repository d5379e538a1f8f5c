//! Largest-remainder apportionment.

/// Splits `total` units across buckets proportionally to integer `weights`.
///
/// Each bucket first gets `floor(total * w / W)`; the leftover units go to the
/// largest fractional remainders, ties broken by larger weight and then by
/// lower index. Remainders are compared exactly as integers.
pub fn largest_remainder(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: u128 = weights.iter().map(|&w| w as u128).sum();
    if weights.is_empty() || sum == 0 {
        return vec![0; weights.len()];
    }
    let mut out = Vec::with_capacity(weights.len());
    let mut rems = Vec::with_capacity(weights.len());
    for (idx, &w) in weights.iter().enumerate() {
        let num = total as u128 * w as u128;
        out.push((num / sum) as usize);
        rems.push((num % sum, w, idx));
    }
    let assigned: usize = out.iter().sum();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    for &(_, _, idx) in rems.iter().take(total - assigned) {
        out[idx] += 1;
    }
    out
}

/// Like [`largest_remainder`], but bucket `k` never receives more than
/// `caps[k]`; overflow is re-apportioned over the buckets still below their
/// cap. The result sums to `min(total, sum(caps))`.
pub fn capped_largest_remainder(total: usize, weights: &[usize], caps: &[usize]) -> Vec<usize> {
    assert_eq!(weights.len(), caps.len(), "weights/caps length mismatch");
    let target = total.min(caps.iter().sum());
    let mut out = vec![0usize; weights.len()];
    let mut open: Vec<usize> = (0..weights.len()).filter(|&k| caps[k] > 0).collect();
    let mut remaining = target;
    while remaining > 0 && !open.is_empty() {
        let w: Vec<usize> = open.iter().map(|&k| weights[k]).collect();
        let share = if w.iter().all(|&x| x == 0) {
            largest_remainder(remaining, &vec![1; open.len()])
        } else {
            largest_remainder(remaining, &w)
        };
        let mut next_open = Vec::new();
        for (slot, &k) in open.iter().enumerate() {
            let room = caps[k] - out[k];
            let give = share[slot].min(room);
            out[k] += give;
            remaining -= give;
            if out[k] < caps[k] {
                next_open.push(k);
            }
        }
        if next_open.len() == open.len() && remaining > 0 {
            // zero-weight buckets received nothing; spread by equal weight
            let share = largest_remainder(remaining, &vec![1; open.len()]);
            for (slot, &k) in open.iter().enumerate() {
                let give = share[slot].min(caps[k] - out[k]);
                out[k] += give;
                remaining -= give;
            }
            next_open.retain(|&k| out[k] < caps[k]);
        }
        open = next_open;
    }
    out
}
