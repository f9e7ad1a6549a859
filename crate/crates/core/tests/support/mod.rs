//! Test-only reference implementations. Nothing here calls into the
//! library's numeric paths; inputs are plain nested vectors.

#![allow(dead_code, clippy::needless_range_loop)]

pub type Matrix = Vec<Vec<f64>>;

/// Naive mobility graph distance, evaluated pair by pair with nested loops.
///
/// `weights` are `(c_mean, c_var, c_unif, c_ss)`; `minmax` selects min-max
/// scaling of each component over all unordered pairs. `times` are bin
/// offsets in seconds; `period` enables circular distance.
pub fn naive_mgd(
    graphs: &[Matrix],
    weights: [f64; 4],
    minmax: bool,
    lambda: f64,
    times: &[i64],
    period: Option<i64>,
) -> Matrix {
    let t_count = graphs.len();
    let n = graphs[0].len();

    let mean_of = |g: &Matrix| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += g[i][j];
            }
        }
        s / (n * n) as f64
    };
    let var_of = |g: &Matrix| {
        let mu = mean_of(g);
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += (g[i][j] - mu) * (g[i][j] - mu);
            }
        }
        s / (n * n) as f64
    };
    let unif_of = |g: &Matrix| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += (g[i][j] - g[j][i]).abs();
            }
        }
        s
    };
    let label = |t: usize, i: usize, j: usize| {
        let mut s = 0.0;
        for g in graphs {
            s += g[i][j];
        }
        let mu = s / t_count as f64;
        graphs[t][i][j] > mu
    };

    let mut pairs = Vec::new();
    for a in 0..t_count {
        for b in (a + 1)..t_count {
            let dm = (mean_of(&graphs[a]) - mean_of(&graphs[b])).abs();
            let dv = (var_of(&graphs[a]) - var_of(&graphs[b])).abs();
            let du = (unif_of(&graphs[a]) - unif_of(&graphs[b])).abs();
            let mut ds = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if label(a, i, j) != label(b, i, j) {
                        ds += 1.0;
                    }
                }
            }
            pairs.push((a, b, [dm, dv, du, ds]));
        }
    }

    let mut lo = [f64::INFINITY; 4];
    let mut hi = [f64::NEG_INFINITY; 4];
    for (_, _, c) in &pairs {
        for k in 0..4 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }

    let dt = |a: usize, b: usize| {
        let raw = (times[a] - times[b]).abs();
        match period {
            Some(p) => {
                let r = raw % p;
                r.min(p - r)
            }
            None => raw,
        }
    };
    let dt_max = match period {
        Some(p) => p as f64 / 2.0,
        None => (times[t_count - 1] - times[0]) as f64,
    };

    let mut out = vec![vec![0.0; t_count]; t_count];
    for (a, b, c) in &pairs {
        let mut s = 0.0;
        for k in 0..4 {
            let v = if minmax {
                if hi[k] > lo[k] {
                    (c[k] - lo[k]) / (hi[k] - lo[k])
                } else {
                    0.0
                }
            } else {
                c[k]
            };
            s += weights[k] * v;
        }
        let z = 1.0 + lambda * dt(*a, *b) as f64 / dt_max;
        out[*a][*b] = z * s;
        out[*b][*a] = z * s;
    }
    out
}

/// Brute-force contingency-table NMI with geometric-mean normalisation.
pub fn brute_nmi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut joint = vec![vec![0.0; kb]; ka];
    for (x, y) in a.iter().zip(b) {
        joint[*x][*y] += 1.0;
    }
    let pa: Vec<f64> = (0..ka).map(|i| joint[i].iter().sum::<f64>() / n).collect();
    let pb: Vec<f64> = (0..kb).map(|j| (0..ka).map(|i| joint[i][j]).sum::<f64>() / n).collect();
    let mut mi = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let p = joint[i][j] / n;
            if p > 0.0 {
                mi += p * (p / (pa[i] * pb[j])).ln();
            }
        }
    }
    let h = |p: &[f64]| -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>();
    mi / (h(&pa) * h(&pb)).sqrt()
}

/// Rand-index-based ARI by explicit enumeration of all point pairs.
pub fn brute_ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b, mut pairs) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            pairs += 1.0;
            if sa && sb {
                both += 1.0;
            }
            if sa {
                only_a += 1.0;
            }
            if sb {
                only_b += 1.0;
            }
        }
    }
    let expected = only_a * only_b / pairs;
    let max = 0.5 * (only_a + only_b);
    (both - expected) / (max - expected)
}
