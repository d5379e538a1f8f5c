use std::collections::{BTreeMap, BTreeSet};

use super::EvalError;

/// Mean per-style rank of each method (1 = best). Tied scores share the
/// mean of the ranks they span.
pub fn expected_rank(
    scores: &BTreeMap<String, BTreeMap<String, f64>>,
    higher_better: bool,
) -> Result<BTreeMap<String, f64>, EvalError> {
    let styles: BTreeSet<&String> = scores.values().flat_map(|m| m.keys()).collect();
    for (method, per_style) in scores {
        if let Some(style) = styles.iter().find(|s| !per_style.contains_key(**s)) {
            return Err(EvalError::MissingScore {
                method: method.clone(),
                style: (*style).clone(),
            });
        }
    }
    let mut totals: BTreeMap<String, f64> = scores.keys().map(|m| (m.clone(), 0.0)).collect();
    for style in &styles {
        let mut col: Vec<(&String, f64)> = scores.iter().map(|(m, s)| (m, s[*style])).collect();
        col.sort_by(|a, b| {
            let ord = a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal);
            if higher_better {
                ord.reverse()
            } else {
                ord
            }
        });
        let mut start = 0;
        while start < col.len() {
            let mut end = start + 1;
            while end < col.len() && col[end].1 == col[start].1 {
                end += 1;
            }
            // ranks start+1 ..= end
            let shared = (start + 1 + end) as f64 / 2.0;
            for (m, _) in &col[start..end] {
                *totals.get_mut(*m).expect("known method") += shared;
            }
            start = end;
        }
    }
    let n_styles = styles.len().max(1) as f64;
    Ok(totals.into_iter().map(|(m, t)| (m, t / n_styles)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&str, &[(&str, f64)])]) -> BTreeMap<String, BTreeMap<String, f64>> {
        rows.iter()
            .map(|(m, s)| {
                (
                    m.to_string(),
                    s.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn strict_order() {
        let t = table(&[
            ("a", &[("x", 0.9), ("y", 0.8), ("z", 0.7)]),
            ("b", &[("x", 0.1), ("y", 0.2), ("z", 0.3)]),
        ]);
        let r = expected_rank(&t, true).unwrap();
        assert_eq!((r["a"], r["b"]), (1.0, 2.0));
        let r = expected_rank(&t, false).unwrap();
        assert_eq!((r["a"], r["b"]), (2.0, 1.0));
    }

    #[test]
    fn ties_share_ranks() {
        let t = table(&[
            ("a", &[("x", 0.5), ("y", 0.9)]),
            ("b", &[("x", 0.5), ("y", 0.1)]),
        ]);
        let r = expected_rank(&t, true).unwrap();
        assert_eq!((r["a"], r["b"]), ((1.5 + 1.0) / 2.0, (1.5 + 2.0) / 2.0));
    }

    #[test]
    fn missing_score() {
        let t = table(&[("a", &[("x", 0.5), ("y", 0.9)]), ("b", &[("x", 0.5)])]);
        assert!(matches!(
            expected_rank(&t, true),
            Err(EvalError::MissingScore { .. })
        ));
    }
}
