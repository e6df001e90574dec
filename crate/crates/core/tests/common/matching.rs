/// Maximum one-to-one matching by exhaustive search over reference subsets.
pub fn optimal_matches(reference: &[f64], estimated: &[f64], tol: f64) -> usize {
    let n = reference.len();
    assert!(n <= 12);
    // best[mask] = most matches using exactly the references in `mask`
    // for the estimates seen so far.
    let mut best = vec![None::<usize>; 1 << n];
    best[0] = Some(0);
    for &e in estimated {
        let mut next = best.clone();
        for mask in 0..1usize << n {
            let Some(m) = best[mask] else { continue };
            for (j, &r) in reference.iter().enumerate() {
                if mask & (1 << j) == 0 && (r - e).abs() <= tol {
                    let slot = &mut next[mask | (1 << j)];
                    *slot = Some(slot.map_or(m + 1, |s| s.max(m + 1)));
                }
            }
        }
        best = next;
    }
    best.into_iter().flatten().max().unwrap()
}
