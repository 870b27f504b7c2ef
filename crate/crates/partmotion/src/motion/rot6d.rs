//! 6D rotation codec: a rotation matrix is encoded as its first two columns
//! and recovered by Gram-Schmidt orthogonalization. The representation is
//! continuous in the matrix entries, which is why it is preferred over
//! quaternions or Euler angles as a regression target.

use nalgebra::{Matrix3, Rotation3, Vector3};

/// Norm threshold below which Gram-Schmidt normalization is refused.
pub const DEGENERATE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, thiserror::Error)]
pub enum Rot6dError {
    #[error("DEGENERATE_6D: column norm {norm:.3e} below {DEGENERATE_EPS:.0e} during reconstruction")]
    Degenerate { norm: f64 },
}

/// Packs the first two columns of the rotation matrix:
/// `[m00, m10, m20, m01, m11, m21]`.
pub fn encode(r: &Rotation3<f64>) -> [f64; 6] {
    let m = r.matrix();
    [
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]
}

/// Reconstructs a rotation: normalize the first triple, orthogonalize the
/// second against it, complete with the cross product. Any pair of
/// non-parallel nonzero triples decodes; the result is exactly orthonormal
/// with determinant +1.
pub fn decode(v: &[f64; 6]) -> Result<Rotation3<f64>, Rot6dError> {
    let a1 = Vector3::new(v[0], v[1], v[2]);
    let a2 = Vector3::new(v[3], v[4], v[5]);
    let n1 = a1.norm();
    if n1 < DEGENERATE_EPS {
        return Err(Rot6dError::Degenerate { norm: n1 });
    }
    let b1 = a1 / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    if n2 < DEGENERATE_EPS {
        return Err(Rot6dError::Degenerate { norm: n2 });
    }
    let b2 = u2 / n2;
    let b3 = b1.cross(&b2);
    Ok(Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[
        b1, b2, b3,
    ])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_abs_diff(a: &Rotation3<f64>, b: &Rotation3<f64>) -> f64 {
        (a.matrix() - b.matrix()).abs().max()
    }

    #[test]
    fn identity_round_trip() {
        let enc = encode(&Rotation3::identity());
        assert_eq!(enc, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let dec = decode(&enc).unwrap();
        assert!(max_abs_diff(&dec, &Rotation3::identity()) < 1e-15);
    }

    #[test]
    fn quarter_turn_about_z_encodes_to_known_vector() {
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let enc = encode(&r);
        let expected = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for (e, x) in enc.iter().zip(expected) {
            assert!((e - x).abs() < 1e-15, "{enc:?}");
        }
    }

    #[test]
    fn decoding_is_scale_invariant() {
        let dec = decode(&[2.0, 0.0, 0.0, 0.0, 2.0, 0.0]).unwrap();
        assert!(max_abs_diff(&dec, &Rotation3::identity()) < 1e-15);
    }

    #[test]
    fn degenerate_inputs_are_refused() {
        assert!(decode(&[0.0; 6]).is_err());
        // Second triple parallel to the first leaves nothing to orthogonalize.
        assert!(decode(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_recovers_rotation(
            roll in -3.1f64..3.1, pitch in -1.5f64..1.5, yaw in -3.1f64..3.1,
        ) {
            let r = Rotation3::from_euler_angles(roll, pitch, yaw);
            let dec = decode(&encode(&r)).unwrap();
            prop_assert!(max_abs_diff(&dec, &r) < 1e-12);
        }

        #[test]
        fn decode_always_yields_proper_rotation(v in proptest::array::uniform6(-2.0f64..2.0)) {
            if let Ok(r) = decode(&v) {
                let m = r.matrix();
                let gram = m.transpose() * m;
                prop_assert!((gram - nalgebra::Matrix3::identity()).abs().max() < 1e-9);
                prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
            }
        }
    }
}
