use incompat::fem::SolverOptions;
use incompat::homogenization::{cell_correctors, effective_tensor, homogenize, voigt_reuss_check, UnitCell};
use incompat::material::Microstructure;
use incompat::tensor::mandel_basis;
use incompat::{Mat3, Tensor4};
use nalgebra::{Matrix3, Matrix6, Vector3};

fn soft() -> Tensor4 {
    Tensor4::isotropic(1.0, 1.0)
}

fn stiff() -> Tensor4 {
    Tensor4::isotropic(4.0, 6.0)
}

fn contract(a: &[[[[f64; 3]; 3]; 3]; 3], e: &Mat3) -> Mat3 {
    Mat3::from_fn(|i, j| (0..3).flat_map(|h| (0..3).map(move |k| (h, k))).map(|(h, k)| a[i][j][h][k] * e[(h, k)]).sum())
}

/// Closed-form laminate: in phase `k` the strain is `E + sym(a_k ⊗ n)` with
/// `Σ f_k a_k = 0` and continuous traction `σ_k n`.
fn laminate_oracle(axis: usize, fraction: f64, phases: [Tensor4; 2]) -> Matrix6<f64> {
    let a = [phases[0].components(), phases[1].components()];
    let f = [fraction, 1.0 - fraction];
    let acoustic = |c: &[[[[f64; 3]; 3]; 3]; 3]| Matrix3::from_fn(|i, j| c[i][axis][j][axis]);
    let k = acoustic(&a[0]) + acoustic(&a[1]) * (f[0] / f[1]);
    let k_inv = k.try_inverse().unwrap();
    let mut out = Matrix6::zeros();
    for q in 0..6 {
        let e = mandel_basis(q);
        let jump = (contract(&a[1], &e) - contract(&a[0], &e)).column(axis).into_owned();
        let a1: Vector3<f64> = k_inv * jump;
        let jumps = [a1, -a1 * (f[0] / f[1])];
        let mut mean = Mat3::zeros();
        for p in 0..2 {
            let mut g = Mat3::zeros();
            for i in 0..3 {
                g[(i, axis)] = jumps[p][i];
            }
            let strain = e + (g + g.transpose()) * 0.5;
            mean += contract(&a[p], &strain) * f[p];
        }
        for p in 0..6 {
            out[(p, q)] = mean.component_mul(&mandel_basis(p)).sum();
        }
    }
    out
}

fn laminate(axis: usize, fraction: f64) -> Microstructure {
    Microstructure::Laminate {
        axis,
        fraction,
        phases: [soft(), stiff()],
    }
}

#[test]
fn laminate_matches_closed_form() {
    for (axis, fraction, cells) in [(0, 0.5, [8, 4, 4]), (1, 0.25, [4, 8, 4]), (2, 0.75, [2, 2, 8])] {
        let cell = UnitCell::new(&laminate(axis, fraction), cells).unwrap();
        let (eff, cert, corr) = homogenize(&cell, &SolverOptions::default()).unwrap();
        let oracle = laminate_oracle(axis, fraction, [soft(), stiff()]);
        let err = (eff.tensor.mandel() - oracle).amax();
        assert!(err < 1e-8, "axis {axis}: {err:e}");
        assert!(cert.passes);
        for u in &corr.chi {
            let m = u.integral(cell.mesh());
            assert!(m.iter().all(|v| v.abs() < 1e-12));
        }
    }
}

#[test]
fn laminate_saturates_reuss_on_normal_shears() {
    let cell = UnitCell::new(&laminate(0, 0.5), [8, 2, 2]).unwrap();
    let (eff, cert, _) = homogenize(&cell, &SolverOptions::default()).unwrap();
    let reuss = cell.field().harmonic_mean().unwrap();
    let gap = eff.tensor.mandel() - reuss.mandel();
    let scale = eff.tensor.mandel().amax();
    // Mandel slots 5 and 4 are the 12 and 13 shears, both carrying the normal e1
    for p in [5, 4] {
        assert!(gap.column(p).amax() < 1e-9 * scale, "{:?}", gap.column(p));
    }
    // in-plane shear is strictly above the lower bound
    assert!(gap[(3, 3)] > 1e-3 * scale);
    assert!(cert.lower_spectrum[0].abs() < 1e-9 * scale);
    assert!(cert.lower_spectrum[1].abs() < 1e-9 * scale);
    assert!(cert.upper_gap >= -1e-10);
}

#[test]
fn constant_cell_has_both_gaps_zero() {
    let c = Tensor4::from_voigt_upper(&[
        4.0, 1.2, 0.9, 0.1, 0.0, 0.2, 3.5, 1.1, 0.0, -0.1, 0.0, 3.0, 0.0, 0.0, 0.1, 1.1, 0.05, 0.0, 1.0, 0.0, 1.3,
    ])
    .unwrap();
    let cell = UnitCell::new(&Microstructure::Homogeneous(c), [4, 4, 4]).unwrap();
    let (eff, cert, _) = homogenize(&cell, &SolverOptions::default()).unwrap();
    assert!((eff.tensor.mandel() - c.mandel()).amax() < 1e-12);
    assert!(cert.upper_gap.abs() < 1e-12 && cert.lower_gap.abs() < 1e-12);
}

#[test]
fn phase_swap_with_mirror_leaves_tensor_unchanged() {
    let opts = SolverOptions::default();
    for micro in [
        laminate(0, 0.5),
        Microstructure::Checkerboard {
            axes: [0, 1],
            phases: [soft(), stiff()],
        },
    ] {
        let a = homogenize(&UnitCell::new(&micro, [8, 8, 2]).unwrap(), &opts).unwrap().0;
        let b = homogenize(&UnitCell::new(&micro.with_swapped_phases(), [8, 8, 2]).unwrap(), &opts).unwrap().0;
        let scale = a.tensor.mandel().amax();
        assert!((a.tensor.mandel() - b.tensor.mandel()).amax() < 1e-9 * scale);
    }
}

#[test]
fn random_cells_respect_voigt_reuss() {
    let opts = SolverOptions::default();
    for seed in 0..20u64 {
        let micro = Microstructure::random_two_phase([4, 4, 4], 0.4, [soft(), stiff()], seed);
        let cell = UnitCell::new(&micro, [16, 16, 16]).unwrap();
        let corr = cell_correctors(&cell, &opts).unwrap();
        let eff = effective_tensor(&cell, &corr).unwrap();
        let cert = voigt_reuss_check(&eff, &cell).unwrap();
        assert!(cert.upper_gap >= -1e-10 && cert.lower_gap >= -1e-10, "seed {seed}: {cert:?}");
        assert!(eff.asymmetry <= 1e-8 * eff.tensor.mandel().amax(), "seed {seed}");
        assert!(eff.ellipticity.passes, "seed {seed}");
    }
}

/// Nested meshes resolve the checkerboard exactly, so the cell energies
/// decrease and the increments shrink.
#[test]
fn checkerboard_refinement_is_monotone_and_cauchy() {
    let micro = Microstructure::Checkerboard {
        axes: [0, 1],
        phases: [soft(), stiff()],
    };
    let opts = SolverOptions::default();
    let mut tensors = Vec::new();
    for n in [8, 16, 32] {
        let cell = UnitCell::new(&micro, [n, n, 2]).unwrap();
        let (eff, cert, corr) = homogenize(&cell, &opts).unwrap();
        assert!(cert.passes);
        for u in &corr.chi {
            assert!(u.integral(cell.mesh()).iter().all(|v| v.abs() < 1e-12));
        }
        tensors.push(eff);
    }
    for p in 0..6 {
        let e: Vec<f64> = tensors.iter().map(|t| t.tensor.mandel()[(p, p)]).collect();
        assert!(e[1] <= e[0] * (1.0 + 1e-9) && e[2] <= e[1] * (1.0 + 1e-9), "slot {p}: {e:?}");
    }
    let d1 = (tensors[0].tensor.mandel() - tensors[1].tensor.mandel()).amax();
    let d2 = (tensors[1].tensor.mandel() - tensors[2].tensor.mandel()).amax();
    assert!(d2 < d1, "{d1:e} {d2:e}");
}
