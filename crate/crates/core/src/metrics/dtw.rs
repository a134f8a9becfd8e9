//! Dynamic time warping under steps (1,0), (0,1), (1,1) with absolute-difference cost.

use super::MetricError;

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// Zero-based index pairs from (0, 0) to (|a|-1, |b|-1), monotone.
    pub path: Vec<(usize, usize)>,
    pub cost: f64,
}

impl Alignment {
    /// `(a[i], b[j])` for every path pair.
    pub fn pairs<'a, T: Copy>(
        &'a self,
        a: &'a [T],
        b: &'a [T],
    ) -> impl Iterator<Item = (T, T)> + 'a {
        self.path.iter().map(move |&(i, j)| (a[i], b[j]))
    }
}

pub fn dtw(a: &[f64], b: &[f64]) -> Result<Alignment, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptySequence);
    }
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    let mut acc = vec![f64::INFINITY; (n + 1) * w];
    acc[0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let best = acc[(i - 1) * w + j - 1]
                .min(acc[(i - 1) * w + j])
                .min(acc[i * w + j - 1]);
            acc[i * w + j] = (a[i - 1] - b[j - 1]).abs() + best;
        }
    }
    let cost = acc[n * w + m];
    let mut path = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n, m);
    loop {
        path.push((i - 1, j - 1));
        if i == 1 && j == 1 {
            break;
        }
        let diag = acc[(i - 1) * w + j - 1];
        let up = acc[(i - 1) * w + j];
        let left = acc[i * w + j - 1];
        // Ties: diagonal first, then advancing in `a`.
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    path.reverse();
    Ok(Alignment { path, cost })
}
