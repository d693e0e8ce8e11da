//! One-dimensional cubic B-splines on a clamped knot vector.
//!
//! A strictly increasing list `k_0 < ... < k_{m-1}` is turned into the open
//! uniform vector with each endpoint repeated three extra times, giving
//! `m + 2` cubic basis functions that form a partition of unity on
//! `[k_0, k_{m-1}]`.

use super::BasisError;

const DEGREE: usize = 3;

/// Number of cubic basis functions for a list of distinct knots.
pub fn n_basis_for_knots(n_knots: usize) -> usize {
    n_knots + 2
}

/// The (at most) four nonzero cubic basis values at a point, starting at
/// basis index `first`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalBasis {
    pub first: usize,
    pub values: [f64; 4],
}

fn validate(knots: &[f64]) -> Result<(), BasisError> {
    if knots.len() < 2 {
        return Err(BasisError::TooFewKnots(knots.len()));
    }
    for (i, w) in knots.windows(2).enumerate() {
        if !(w[0].is_finite() && w[1].is_finite() && w[1] > w[0]) {
            return Err(BasisError::InvalidKnots(i + 1));
        }
    }
    Ok(())
}

/// Evaluates the four active basis functions (or their derivative) at `x`.
///
/// Knots are not revalidated here; callers that build many rows validate
/// once up front.
pub fn bspline_1d_local(knots: &[f64], x: f64, derivative_order: usize) -> Result<LocalBasis, BasisError> {
    if derivative_order > 2 {
        return Err(BasisError::InvalidDerivative(derivative_order));
    }
    let m = knots.len();
    let (lo, hi) = (knots[0], knots[m - 1]);
    if !(x >= lo && x <= hi) {
        return Err(BasisError::OutOfDomain { x, lo, hi });
    }
    // interval index i with knots[i] <= x < knots[i+1]; x == hi falls in the last one
    let interval = match knots.partition_point(|&k| k <= x) {
        0 => 0,
        p => (p - 1).min(m - 2),
    };

    // Extended vector t: t[j] = knots[clamp(j - 3, 0, m - 1)]; span mu = interval + 3.
    let t = |j: isize| -> f64 {
        let idx = (j - DEGREE as isize).clamp(0, m as isize - 1);
        knots[idx as usize]
    };
    let span = (interval + DEGREE) as isize;
    let ders = ders_basis_funs(span, x, derivative_order, t);
    Ok(LocalBasis {
        first: interval,
        values: ders[derivative_order],
    })
}

/// Values of all `knots.len() + 2` cubic basis functions, or their first or
/// second derivative, at `x`.
pub fn bspline_1d(knots: &[f64], x: f64, derivative_order: usize) -> Result<Vec<f64>, BasisError> {
    validate(knots)?;
    let local = bspline_1d_local(knots, x, derivative_order)?;
    let mut out = vec![0.0; n_basis_for_knots(knots.len())];
    out[local.first..local.first + 4].copy_from_slice(&local.values);
    Ok(out)
}

/// Nonzero basis functions and derivatives up to order `n` at a point of
/// knot span `span` (the triangular scheme of Piegl & Tiller, A2.3).
fn ders_basis_funs(span: isize, u: f64, n: usize, t: impl Fn(isize) -> f64) -> [[f64; 4]; 3] {
    let p = DEGREE;
    let mut ndu = [[0.0f64; 4]; 4];
    let mut left = [0.0f64; 4];
    let mut right = [0.0f64; 4];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = u - t(span + 1 - j as isize);
        right[j] = t(span + j as isize) - u;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }

    let mut ders = [[0.0f64; 4]; 3];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let mut a = [[0.0f64; 4]; 2];
    for r in 0..=p as isize {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=n as isize {
            let mut d = 0.0;
            let rk = r - k;
            let pk = p as isize - k;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk as usize];
            }
            let j1 = if rk >= -1 { 1 } else { -rk };
            let j2 = if r - 1 <= pk { k - 1 } else { p as isize - r };
            for j in j1..=j2 {
                let (ju, rkj) = (j as usize, (rk + j) as usize);
                a[s2][ju] = (a[s1][ju] - a[s1][ju - 1]) / ndu[(pk + 1) as usize][rkj];
                d += a[s2][ju] * ndu[rkj][pk as usize];
            }
            if r <= pk {
                let ku = k as usize;
                a[s2][ku] = -a[s1][ku - 1] / ndu[(pk + 1) as usize][r as usize];
                d += a[s2][ku] * ndu[r as usize][pk as usize];
            }
            ders[k as usize][r as usize] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = p as f64;
    for k in 1..=n {
        for v in ders[k].iter_mut() {
            *v *= factor;
        }
        factor *= (p - k) as f64;
    }
    ders
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Cox-de Boor recursion on the explicit clamped knot vector, 0/0 := 0.
    fn cox_de_boor(t: &[f64], i: usize, p: usize, x: f64, last: bool) -> f64 {
        if p == 0 {
            let inside = t[i] <= x && x < t[i + 1];
            // right-closed final interval
            let at_end = last && x == t[i + 1] && t[i] < t[i + 1] && t[i + 1] == *t.last().unwrap();
            return if inside || at_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = t[i + p] - t[i];
        if d1 > 0.0 {
            v += (x - t[i]) / d1 * cox_de_boor(t, i, p - 1, x, last);
        }
        let d2 = t[i + p + 1] - t[i + 1];
        if d2 > 0.0 {
            v += (t[i + p + 1] - x) / d2 * cox_de_boor(t, i + 1, p - 1, x, last);
        }
        v
    }

    fn clamped(knots: &[f64]) -> Vec<f64> {
        let mut t = vec![knots[0]; 3];
        t.extend_from_slice(knots);
        t.extend(std::iter::repeat_n(*knots.last().unwrap(), 3));
        t
    }

    fn uniform(n: usize, h: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 * h).collect()
    }

    #[test]
    fn cardinal_values_at_central_knot() {
        let knots = uniform(11, 1.0);
        let v = bspline_1d(&knots, 5.0, 0).unwrap();
        let nz: Vec<f64> = v.iter().copied().filter(|x| *x != 0.0).collect();
        assert_eq!(nz.len(), 3);
        assert!((nz[0] - 1.0 / 6.0).abs() < 1e-15);
        assert!((nz[1] - 4.0 / 6.0).abs() < 1e-15);
        assert!((nz[2] - 1.0 / 6.0).abs() < 1e-15);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matches_cox_de_boor() {
        let knots = [0.0, 0.7, 1.1, 2.0, 3.5, 4.0];
        let t = clamped(&knots);
        for &x in &[0.0, 0.3, 0.7, 1.05, 2.5, 3.9, 4.0] {
            let v = bspline_1d(&knots, x, 0).unwrap();
            for (i, vi) in v.iter().enumerate() {
                let r = cox_de_boor(&t, i, 3, x, true);
                assert!((vi - r).abs() < 1e-13, "x={x} i={i}: {vi} vs {r}");
            }
        }
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        let knots = uniform(8, 1.0);
        let h = 1e-4;
        for &x in &[0.37, 1.5, 2.2, 3.9, 5.01, 6.6] {
            let d2 = bspline_1d(&knots, x, 2).unwrap();
            let f0 = bspline_1d(&knots, x, 0).unwrap();
            let fp = bspline_1d(&knots, x + h, 0).unwrap();
            let fm = bspline_1d(&knots, x - h, 0).unwrap();
            let scale = d2.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            for i in 0..d2.len() {
                let fd = (fp[i] - 2.0 * f0[i] + fm[i]) / (h * h);
                assert!((fd - d2[i]).abs() <= 1e-4 * scale, "x={x} i={i}: {fd} vs {}", d2[i]);
            }
        }
    }

    #[test]
    fn first_derivative_matches_finite_differences() {
        let knots = [0.0, 0.5, 1.3, 2.0, 2.4, 3.0];
        let h = 1e-6;
        for &x in &[0.2, 0.9, 1.7, 2.2, 2.8] {
            let d1 = bspline_1d(&knots, x, 1).unwrap();
            let fp = bspline_1d(&knots, x + h, 0).unwrap();
            let fm = bspline_1d(&knots, x - h, 0).unwrap();
            for i in 0..d1.len() {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - d1[i]).abs() < 1e-7, "x={x} i={i}");
            }
        }
    }

    #[test]
    fn errors() {
        let knots = uniform(5, 1.0);
        assert!(matches!(bspline_1d(&knots, -0.1, 0), Err(BasisError::OutOfDomain { .. })));
        assert!(matches!(bspline_1d(&knots, 4.0001, 0), Err(BasisError::OutOfDomain { .. })));
        assert!(matches!(bspline_1d(&knots, f64::NAN, 0), Err(BasisError::OutOfDomain { .. })));
        assert_eq!(bspline_1d(&knots, 1.0, 3), Err(BasisError::InvalidDerivative(3)));
        assert_eq!(bspline_1d(&[0.0, 1.0, 1.0], 0.5, 0), Err(BasisError::InvalidKnots(2)));
        assert_eq!(bspline_1d(&[0.0], 0.0, 0), Err(BasisError::TooFewKnots(1)));
        // endpoints are inside the closed span
        assert!(bspline_1d(&knots, 0.0, 2).is_ok());
        assert!(bspline_1d(&knots, 4.0, 2).is_ok());
    }

    proptest! {
        #[test]
        fn partition_of_unity(x in 0.0f64..=9.0, h in 0.1f64..3.0) {
            let knots = uniform(10, 1.0).into_iter().map(|k| k * h).collect::<Vec<_>>();
            let v = bspline_1d(&knots, x * h, 0).unwrap();
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(v.iter().filter(|x| **x != 0.0).count() <= 4);
            prop_assert!(v.iter().all(|x| *x >= -1e-15));
            let d1 = bspline_1d(&knots, x * h, 1).unwrap();
            let d2 = bspline_1d(&knots, x * h, 2).unwrap();
            prop_assert!(d1.iter().sum::<f64>().abs() < 1e-9 / h);
            prop_assert!(d2.iter().sum::<f64>().abs() < 1e-8 / (h * h));
        }
    }
}
