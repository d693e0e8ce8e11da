use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{BasisError, Location};

/// Diagonal jitter relative to the amplitude, added before factorization.
pub const GP_JITTER: f64 = 1e-8;

/// Squared-exponential kernel `K(x, x') = α exp(-‖x - x'‖² / ρ²)` with mean μ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpKernelParams {
    pub amplitude: f64,
    pub length_scale: f64,
    pub mean: f64,
}

impl GpKernelParams {
    fn validate(&self) -> Result<(), BasisError> {
        let ok = self.amplitude > 0.0
            && self.amplitude.is_finite()
            && self.length_scale > 0.0
            && self.length_scale.is_finite();
        if ok {
            Ok(())
        } else {
            Err(BasisError::InvalidKernel {
                amplitude: self.amplitude,
                length_scale: self.length_scale,
            })
        }
    }

    pub fn kernel(&self, a: Location, b: Location) -> f64 {
        let d2 = (a.east - b.east).powi(2) + (a.north - b.north).powi(2);
        self.amplitude * (-d2 / (self.length_scale * self.length_scale)).exp()
    }
}

pub fn gp_covariance(params: &GpKernelParams, locations: &[Location]) -> Result<DMatrix<f64>, BasisError> {
    params.validate()?;
    if let Some(i) = locations
        .iter()
        .position(|l| !(l.east.is_finite() && l.north.is_finite()))
    {
        return Err(BasisError::NonFinite(i));
    }
    let n = locations.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.amplitude;
        for j in 0..i {
            let v = params.kernel(locations[i], locations[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Covariance with `GP_JITTER · α` added to the diagonal.
pub fn gp_covariance_jittered(params: &GpKernelParams, locations: &[Location]) -> Result<DMatrix<f64>, BasisError> {
    let mut k = gp_covariance(params, locations)?;
    let jitter = GP_JITTER * params.amplitude;
    for i in 0..locations.len() {
        k[(i, i)] += jitter;
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: GpKernelParams = GpKernelParams {
        amplitude: 1.7,
        length_scale: 0.4,
        mean: 3.0,
    };

    #[test]
    fn diagonal_and_unit_distance() {
        let a = Location::new(0.1, 0.2);
        assert_eq!(P.kernel(a, a), 1.7);
        let b = Location::new(0.1 + 0.4 * 0.6, 0.2 + 0.4 * 0.8);
        assert!((P.kernel(a, b) - 1.7 * (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn matches_elementwise_formula() {
        let locs = [
            Location::new(0.13, 0.77),
            Location::new(0.52, 0.04),
            Location::new(0.91, 0.33),
        ];
        let k = gp_covariance(&P, &locs).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let dx = locs[i].east - locs[j].east;
                let dy = locs[i].north - locs[j].north;
                let want = 1.7 * (-(dx * dx + dy * dy) / 0.16).exp();
                assert!((k[(i, j)] - want).abs() < 1e-12);
                assert_eq!(k[(i, j)], k[(j, i)]);
            }
        }
        let kj = gp_covariance_jittered(&P, &locs).unwrap();
        assert!(kj.cholesky().is_some());
    }

    #[test]
    fn rejects_bad_inputs() {
        let locs = [Location::new(f64::INFINITY, 0.0)];
        assert_eq!(gp_covariance(&P, &locs).unwrap_err(), BasisError::NonFinite(0));
        let bad = GpKernelParams {
            amplitude: 0.0,
            ..P
        };
        assert!(gp_covariance(&bad, &[]).is_err());
    }
}
