//! Performance profiles over a method × problem matrix of costs.

/// `curves[i][k]` is the fraction of problems on which method `i` is within a
/// factor `taus[k]` of the best method. Failures are `f64::INFINITY`; a
/// problem no method solved counts for nobody.
pub fn performance_profile(times: &[Vec<f64>], taus: &[f64]) -> Vec<Vec<f64>> {
    let q = times.first().map_or(0, Vec::len);
    let best: Vec<f64> = (0..q)
        .map(|j| times.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
        .collect();
    times
        .iter()
        .map(|row| {
            taus.iter()
                .map(|&tau| {
                    if q == 0 {
                        return 0.0;
                    }
                    let hits = (0..q).filter(|&j| row[j].is_finite() && row[j] <= tau * best[j]).count();
                    hits as f64 / q as f64
                })
                .collect()
        })
        .collect()
}

/// CSV with a `tau` column followed by one column per method.
pub fn profile_csv(methods: &[&str], taus: &[f64], curves: &[Vec<f64>]) -> String {
    let mut s = String::from("tau");
    for m in methods {
        s.push(',');
        s.push_str(m);
    }
    s.push('\n');
    for (k, tau) in taus.iter().enumerate() {
        s.push_str(&tau.to_string());
        for c in curves {
            s.push(',');
            s.push_str(&c[k].to_string());
        }
        s.push('\n');
    }
    s
}
