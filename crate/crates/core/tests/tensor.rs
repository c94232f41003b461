use incompat::tensor::{check_ellipticity, dot, relative_eigenvalues};
use incompat::{Mat3, Tensor4};
use nalgebra::{DMatrix, Matrix6};
use proptest::prelude::*;

/// Brute-force generalized eigenproblem: `Cξ·η` and `(ξ+ξᵀ)·(η+ηᵀ)` are
/// assembled from the full component array on the non-orthonormal basis
/// `e_i⊗e_j + e_j⊗e_i` of symmetric matrices, then reduced by Cholesky.
fn oracle_extremes(c: &Tensor4) -> (f64, f64) {
    let a = c.components();
    let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    let basis: Vec<[[f64; 3]; 3]> = pairs
        .iter()
        .map(|&(i, j)| {
            let mut m = [[0.0; 3]; 3];
            m[i][j] += 1.0;
            m[j][i] += 1.0;
            m
        })
        .collect();
    let mut k = DMatrix::zeros(6, 6);
    let mut g = DMatrix::zeros(6, 6);
    for p in 0..6 {
        for q in 0..6 {
            let (x, y) = (&basis[p], &basis[q]);
            let mut e = 0.0;
            let mut n = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    n += (x[i][j] + x[j][i]) * (y[i][j] + y[j][i]);
                    for h in 0..3 {
                        for l in 0..3 {
                            e += a[i][j][h][l] * x[h][l] * y[i][j];
                        }
                    }
                }
            }
            k[(p, q)] = e;
            g[(p, q)] = n;
        }
    }
    let l = g.cholesky().unwrap().l();
    let li = l.clone().try_inverse().unwrap();
    let reduced = &li * k * li.transpose();
    let ev = reduced.symmetric_eigen().eigenvalues;
    (ev.min(), ev.max())
}

#[test]
fn isotropic_unit_moduli_interval() {
    let c = Tensor4::isotropic(1.0, 1.0);
    let (lo, hi) = oracle_extremes(&c);
    assert!((lo - 0.5).abs() < 1e-14 && (hi - 1.25).abs() < 1e-14);
    let r = check_ellipticity(&c, 0.25, 1.25).unwrap();
    assert!(r.passes);
    assert!((r.min_relative - 0.5).abs() < 1e-14);
    assert!((r.max_relative - 1.25).abs() < 1e-14);
    assert!(!check_ellipticity(&c, 0.6, 1.25).unwrap().passes);
    assert!(!check_ellipticity(&c, 0.25, 1.2).unwrap().passes);
}

#[test]
fn broken_major_symmetry_is_rejected() {
    let mut a = Tensor4::isotropic(1.0, 1.0).components();
    a[0][0][1][1] += 0.1;
    let err = Tensor4::from_components(&a).unwrap_err();
    assert_eq!(err.kind(), "SymmetryViolation");
}

#[test]
fn zero_tensor_fails() {
    let r = check_ellipticity(&Tensor4::zero(), 0.1, 1.0).unwrap();
    assert!(!r.passes);
}

#[test]
fn apply_examples() {
    let (l, m) = (2.0, 0.5);
    let c = Tensor4::isotropic(l, m);
    let out = c.apply(&Mat3::identity());
    assert!((out - Mat3::identity() * (3.0 * l + 2.0 * m)).amax() < 1e-14);
    assert_eq!(c.apply(&Mat3::zeros()), Mat3::zeros());
}

fn arb_tensor() -> impl Strategy<Value = Tensor4> {
    prop::collection::vec(-1.0f64..1.0, 21).prop_map(|v| {
        let mut m = Matrix6::zeros();
        let mut k = 0;
        for i in 0..6 {
            for j in i..6 {
                m[(i, j)] = v[k];
                m[(j, i)] = v[k];
                k += 1;
            }
        }
        // shift to make it comfortably positive definite
        Tensor4::from_mandel(m + Matrix6::identity() * 3.0)
    })
}

fn arb_mat() -> impl Strategy<Value = Mat3> {
    prop::collection::vec(-2.0f64..2.0, 9).prop_map(|v| Mat3::from_row_slice(&v))
}

proptest! {
    #[test]
    fn major_symmetry(c in arb_tensor(), x in arb_mat(), y in arb_mat()) {
        let a = dot(&c.apply(&x), &y);
        let b = dot(&c.apply(&y), &x);
        prop_assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()) * 8.0);
    }

    #[test]
    fn skew_part_is_annihilated_exactly(c in arb_tensor(), x in arb_mat()) {
        let k = x - x.transpose();
        prop_assert_eq!(c.apply(&k), Mat3::zeros());
    }

    #[test]
    fn extremes_match_brute_force(c in arb_tensor()) {
        let (lo, hi) = oracle_extremes(&c);
        let ev = relative_eigenvalues(&c);
        prop_assert!((ev[0] - lo).abs() < 1e-12);
        prop_assert!((ev[5] - hi).abs() < 1e-12);
    }

    #[test]
    fn ellipticity_is_scale_covariant(c in arb_tensor(), s in 0.01f64..100.0) {
        let a = check_ellipticity(&c, 0.0, 1e9).unwrap();
        let b = check_ellipticity(&c.scale(s), 0.0, 1e9).unwrap();
        prop_assert!((b.min_relative - s * a.min_relative).abs() < 1e-12 * s * a.max_relative);
        prop_assert!((b.max_relative - s * a.max_relative).abs() < 1e-12 * s * a.max_relative);
    }

    #[test]
    fn rayleigh_quotients_stay_inside(c in arb_tensor(), x in arb_mat()) {
        let s = x + x.transpose();
        let q = dot(&c.apply(&s), &s) / dot(&(s + s.transpose()), &(s + s.transpose()));
        let ev = relative_eigenvalues(&c);
        prop_assert!(q >= ev[0] - 1e-12 && q <= ev[5] + 1e-12);
    }
}
