//! Finite-difference oracle shared by unit and integration tests.

/// Fornberg's recursion: weights for the `m`-th derivative at 0 from samples
/// at offsets `xs`.
pub fn fornberg_weights(m: usize, xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0];
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i];
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// Derivatives of orders `1..=4` of `f` at `t` using 11-point central
/// stencils of step `h` (eighth-order accurate for every order).
pub fn central_derivatives<F: Fn(f64) -> f64>(f: F, t: f64, h: f64) -> [f64; 4] {
    let offsets: Vec<f64> = (-5..=5).map(|k| k as f64).collect();
    let samples: Vec<f64> = offsets.iter().map(|&x| f(t + x * h)).collect();
    let mut out = [0.0; 4];
    for (m, slot) in out.iter_mut().enumerate() {
        let order = m + 1;
        let w = fornberg_weights(order, &offsets);
        let acc: f64 = w.iter().zip(&samples).map(|(a, b)| a * b).sum();
        *slot = acc / h.powi(order as i32);
    }
    out
}
