//! Bounded Nelder-Mead used for the likelihood search over log length-scales.

/// Result of a local search.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Stop once the simplex values spread less than this.
    pub f_tol: f64,
    /// ... and its vertices are this close to the best one.
    pub x_tol: f64,
    /// Initial simplex edge, as a fraction of each box width.
    pub step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self { max_evals: 200, f_tol: 1e-6, x_tol: 1e-4, step: 0.1 }
    }
}

fn clamp(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(l, h);
    }
}

impl NelderMead {
    /// Minimizes `f` over the box `[lo, hi]`; trial points are projected onto
    /// the box. Non-finite values count as `+inf`.
    pub fn minimize<F>(&self, mut f: F, start: &[f64], lo: &[f64], hi: &[f64]) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        let n = start.len();
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };

        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        let mut x0 = start.to_vec();
        clamp(&mut x0, lo, hi);
        simplex.push(x0.clone());
        for k in 0..n {
            let mut x = x0.clone();
            let h = self.step * (hi[k] - lo[k]);
            // step inward when the start sits on the upper face
            x[k] = if x[k] + h <= hi[k] { x[k] + h } else { x[k] - h };
            simplex.push(x);
        }
        let mut values: Vec<f64> = simplex.iter().map(|x| eval(x, &mut evals)).collect();

        while evals < self.max_evals {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let spread = values[n] - values[0];
            let size = simplex[1..]
                .iter()
                .flat_map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if (spread.is_finite() && spread <= self.f_tol && size <= self.x_tol) || size < 1e-12 {
                break;
            }

            let mut centroid = vec![0.0; n];
            for x in &simplex[..n] {
                for (c, v) in centroid.iter_mut().zip(x) {
                    *c += v / n as f64;
                }
            }
            let towards = |t: f64| -> Vec<f64> {
                let mut p: Vec<f64> =
                    centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect();
                clamp(&mut p, lo, hi);
                p
            };

            let reflected = towards(-1.0);
            let fr = eval(&reflected, &mut evals);
            if fr < values[0] {
                let expanded = towards(-2.0);
                let fe = eval(&expanded, &mut evals);
                if fe < fr {
                    simplex[n] = expanded;
                    values[n] = fe;
                } else {
                    simplex[n] = reflected;
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n] = reflected;
                values[n] = fr;
                continue;
            }
            let (contracted, fc) = if fr < values[n] {
                let c = towards(-0.5);
                let v = eval(&c, &mut evals);
                (c, v)
            } else {
                let c = towards(0.5);
                let v = eval(&c, &mut evals);
                (c, v)
            };
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
                continue;
            }
            // shrink towards the best vertex
            for i in 1..=n {
                let p: Vec<f64> =
                    simplex[0].iter().zip(&simplex[i]).map(|(b, x)| b + 0.5 * (x - b)).collect();
                values[i] = eval(&p, &mut evals);
                simplex[i] = p;
            }
        }

        let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).expect("simplex");
        Minimum { x: simplex[best].clone(), value: values[best], evaluations: evals }
    }
}

/// First `count` points of the Halton sequence mapped onto the box.
pub fn halton_points(count: usize, lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>> {
    let primes = first_primes(lo.len());
    (1..=count)
        .map(|i| {
            primes
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&b, (&l, &h))| l + radical_inverse(i as u64, b) * (h - l))
                .collect()
        })
        .collect()
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(n);
    let mut c = 2u64;
    while out.len() < n {
        if out.iter().all(|&p| c % p != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_minimum() {
        let nm = NelderMead { max_evals: 2000, ..Default::default() };
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 0.5).powi(2);
        let m = nm.minimize(f, &[3.0, 3.0], &[-5.0, -5.0], &[5.0, 5.0]);
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] + 0.5).abs() < 1e-3, "{:?}", m.x);
    }

    #[test]
    fn respects_bounds() {
        let nm = NelderMead { max_evals: 1000, ..Default::default() };
        let m = nm.minimize(|x: &[f64]| x[0] + x[1], &[0.0, 0.0], &[-1.0, -2.0], &[1.0, 1.0]);
        assert!((m.x[0] + 1.0).abs() < 1e-6 && (m.x[1] + 2.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn halton_is_in_box_and_distinct() {
        let pts = halton_points(10, &[-1.0, 0.0, 2.0], &[1.0, 1.0, 3.0]);
        assert_eq!(pts.len(), 10);
        for p in &pts {
            assert!(p[0] > -1.0 && p[0] < 1.0 && p[2] > 2.0 && p[2] < 3.0);
        }
        assert_eq!(first_primes(5), vec![2, 3, 5, 7, 11]);
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
    }
}
