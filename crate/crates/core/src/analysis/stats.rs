use statrs::distribution::{ContinuousCDF, Normal};

use super::AnalysisError;

/// Trailing-window means of per-episode rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct MarSeries {
    pub rewards: Vec<f64>,
    pub n: usize,
    /// `values[k]` averages episodes `k..k+n`.
    pub values: Vec<f64>,
}

/// Moving average reward, updated incrementally: the newest reward enters the
/// window and the oldest leaves it. Every `n`th window is summed afresh so
/// rounding error cannot accumulate (and `n = 1` returns the input exactly).
pub fn mar(rewards: &[f64], n: usize) -> Result<MarSeries, AnalysisError> {
    if n == 0 || n > rewards.len() {
        return Err(AnalysisError::Window {
            n,
            episodes: rewards.len(),
        });
    }
    let mut values = Vec::with_capacity(rewards.len() - n + 1);
    let mut cur = rewards[..n].iter().sum::<f64>() / n as f64;
    values.push(cur);
    for i in n..rewards.len() {
        let start = i + 1 - n;
        if start.is_multiple_of(n) {
            cur = rewards[start..=i].iter().sum::<f64>() / n as f64;
        } else {
            cur += (rewards[i] - rewards[i - n]) / n as f64;
        }
        values.push(cur);
    }
    Ok(MarSeries {
        rewards: rewards.to_vec(),
        n,
        values,
    })
}

/// `(#{a_i > b_j} - #{a_i < b_j}) / (|a| |b|)`
pub fn cliffs_delta(a: &[f64], b: &[f64]) -> Result<f64, AnalysisError> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalysisError::EmptySample);
    }
    let mut sorted = b.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut dominance: i64 = 0;
    for x in a {
        let below = sorted.partition_point(|y| y < x) as i64;
        let not_above = sorted.partition_point(|y| y <= x) as i64;
        let above = sorted.len() as i64 - not_above;
        dominance += below - above;
    }
    Ok(dominance as f64 / (a.len() * b.len()) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonResult {
    /// pairs with a non-zero difference
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p: f64,
    pub exact: bool,
}

/// Largest sample size that uses the exact null distribution.
pub const EXACT_LIMIT: usize = 25;

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped, tied magnitudes share mid-ranks.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::Unpaired(a.len(), b.len()));
    }
    let mut d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            n: 0,
            w_plus: 0.0,
            w_minus: 0.0,
            p: 1.0,
            exact: true,
        });
    }
    if n < 5 {
        return Err(AnalysisError::TooFewPairs(n));
    }
    d.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    // doubled mid-ranks stay integral
    let mut rank2 = vec![0u64; n];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[j + 1].abs() == d[i].abs() {
            j += 1;
        }
        let r2 = (i + 1 + j + 1) as u64;
        for r in &mut rank2[i..=j] {
            *r = r2;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    let w_plus2: u64 = d.iter().zip(&rank2).filter(|(v, _)| **v > 0.0).map(|(_, r)| *r).sum();
    let total2 = (n * (n + 1)) as u64;
    let w_plus = w_plus2 as f64 / 2.0;
    let w_minus = (total2 - w_plus2) as f64 / 2.0;
    let (p, exact) = if n <= EXACT_LIMIT {
        (exact_p(&rank2, w_plus2), true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie: f64 = ties.iter().map(|t| (*t as f64).powi(3) - *t as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie;
        let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::standard();
        (2.0 * (1.0 - normal.cdf(z)), false)
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus,
        p: p.min(1.0),
        exact,
    })
}

/// Two-sided p from the exact null distribution of the doubled-rank sum.
fn exact_p(rank2: &[u64], w2: u64) -> f64 {
    let total: u64 = rank2.iter().sum();
    let mut counts = vec![0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in rank2 {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all: f64 = counts.iter().sum();
    let lower: f64 = counts[..=w2 as usize].iter().sum::<f64>() / all;
    let upper: f64 = counts[w2 as usize..].iter().sum::<f64>() / all;
    (2.0 * lower.min(upper)).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mar_examples() {
        assert_eq!(mar(&[1.0, 2.0, 3.0, 4.0], 2).unwrap().values, vec![1.5, 2.5, 3.5]);
        assert!(mar(&[5.0; 20], 7).unwrap().values.iter().all(|v| *v == 5.0));
        let r: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(mar(&r, 350).unwrap().values.len(), 651);
        assert!(mar(&r[..3], 4).is_err());
        assert!(mar(&r, 0).is_err());
    }

    #[test]
    fn cliffs_examples() {
        assert_eq!(cliffs_delta(&[1.0, 2.0], &[1.0, 3.0]).unwrap(), -0.25);
        assert_eq!(cliffs_delta(&[5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(cliffs_delta(&[3.0, 1.0, 2.0], &[2.0, 3.0, 1.0]).unwrap(), 0.0);
        assert!(cliffs_delta(&[], &[1.0]).is_err());
    }

    #[test]
    fn wilcoxon_identical_and_separated() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(wilcoxon_signed_rank(&a, &a).unwrap().p, 1.0);
        let b: Vec<f64> = a.iter().map(|x| x + 10.0).collect();
        let r = wilcoxon_signed_rank(&b, &a).unwrap();
        assert!(r.p < 0.05);
        assert_eq!(r.w_minus, 0.0);
        // smallest possible two-sided p for n = 6 is 2/64
        assert!((r.p - 2.0 / 64.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_pairs() {
        assert!(wilcoxon_signed_rank(&[1.0, 2.0], &[0.0, 0.0]).is_err());
    }
}
