use super::check::{finite_diff_grad, relative_error};
use super::complex::*;
use super::*;
use crate::field::{make_camera_array, make_subsample_mask, NoiseSpec, RealImage};
use rand::Rng;
use std::rc::Rc;

fn random_vec(n: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = crate::rng::seeded_rng(seed);
    (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
}

/// Checks analytic gradients of `build` against central finite differences
/// for every leaf. `build` sees the leaves in the order of `shapes`.
fn fd_check(
    shapes: &[&[usize]],
    seed: u64,
    positive_inputs: bool,
    tol: f64,
    build: impl Fn(&[Var]) -> Var,
) {
    let (lo, hi) = if positive_inputs { (0.4, 1.6) } else { (-1.0, 1.0) };
    let datas: Vec<Vec<f64>> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| random_vec(s.iter().product(), seed + i as u64, lo, hi))
        .collect();

    // Analytic gradients.
    let tape = Tape::new();
    let leaves: Vec<Var> = shapes
        .iter()
        .zip(&datas)
        .map(|(s, d)| tape.leaf(s, d.clone(), true))
        .collect();
    let loss = build(&leaves);
    let grads = loss.backward().expect("backward");

    // Finite differences, one leaf at a time.
    for (k, shape) in shapes.iter().enumerate() {
        let numeric = finite_diff_grad(
            |x| {
                let t = Tape::new();
                let vars: Vec<Var> = shapes
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let d = if i == k { x.to_vec() } else { datas[i].clone() };
                        t.leaf(s, d, false)
                    })
                    .collect();
                build(&vars).scalar()
            },
            &datas[k],
            1e-5,
        );
        let analytic = grads.or_zeros(&leaves[k]);
        let err = relative_error(&analytic, &numeric, 1e-8);
        assert!(
            err < tol,
            "leaf {k} shape {shape:?}: rel err {err} (analytic {:?} vs numeric {:?})",
            &analytic[..analytic.len().min(4)],
            &numeric[..numeric.len().min(4)]
        );
    }
}

/// A non-uniform scalar readout so gradients are not constant.
fn weighted_sum(x: &Var, seed: u64) -> Var {
    let w = Rc::new(random_vec(x.numel(), seed, -1.0, 1.0));
    x.mul_const(w).sum()
}

#[test]
fn sum_gradient_is_ones() {
    let tape = Tape::new();
    let t = tape.leaf(&[3], vec![5.0, -1.0, 2.0], true);
    let loss = t.sum();
    let g = loss.backward().unwrap();
    assert_eq!(g.or_zeros(&t), vec![1.0, 1.0, 1.0]);
}

#[test]
fn sum_squares_gradient_is_2x() {
    let tape = Tape::new();
    let t = tape.leaf(&[2], vec![1.0, 2.0], true);
    let loss = t.sum_squares();
    assert_eq!(loss.scalar(), 5.0);
    let g = loss.backward().unwrap();
    assert_eq!(g.or_zeros(&t), vec![2.0, 4.0]);
}

#[test]
fn relu_values_and_tie_break() {
    let tape = Tape::new();
    let t = tape.leaf(&[3], vec![-1.0, 0.0, 2.0], true);
    let y = t.relu();
    assert_eq!(y.value(), vec![0.0, 0.0, 2.0]);
    let g = y.sum().backward().unwrap();
    // Gradient at exactly zero is zero.
    assert_eq!(g.or_zeros(&t), vec![0.0, 0.0, 1.0]);
}

#[test]
fn gradients_of_unused_tensors_are_zero() {
    let tape = Tape::new();
    let used = tape.leaf(&[2], vec![1.0, 2.0], true);
    let unused = tape.leaf(&[2], vec![3.0, 4.0], true);
    let g = used.sum().backward().unwrap();
    assert!(g.wrt(&unused).is_none());
    assert_eq!(g.or_zeros(&unused), vec![0.0, 0.0]);
}

#[test]
fn backward_on_non_scalar_is_an_error() {
    let tape = Tape::new();
    let t = tape.leaf(&[2], vec![1.0, 2.0], true);
    assert!(matches!(t.backward(), Err(crate::Error::Config(_))));
}

#[test]
fn non_finite_gradient_is_flagged() {
    let tape = Tape::new();
    let t = tape.leaf(&[1], vec![0.0], true);
    // d/dx log(x) at 0 is infinite.
    let loss = t.log().sum();
    assert!(matches!(loss.backward(), Err(crate::Error::NonFinite(_))));
}

#[test]
fn elementwise_primitives_pass_finite_differences() {
    // >= 10 random shapes across the elementwise set.
    for (i, &n) in [1usize, 2, 3, 5, 8, 12, 16, 24, 32, 48, 64].iter().enumerate() {
        let seed = 100 + i as u64;
        let shape: &[usize] = &[n];
        fd_check(&[shape, shape], seed, false, 1e-4, |v| {
            weighted_sum(&v[0].add(&v[1]), seed)
        });
        fd_check(&[shape, shape], seed + 1, false, 1e-4, |v| {
            weighted_sum(&v[0].sub(&v[1]), seed)
        });
        fd_check(&[shape, shape], seed + 2, false, 1e-4, |v| {
            weighted_sum(&v[0].mul(&v[1]), seed)
        });
        fd_check(&[shape], seed + 3, false, 1e-4, |v| {
            weighted_sum(&v[0].neg().scale(1.7), seed)
        });
        fd_check(&[shape], seed + 4, false, 1e-4, |v| {
            weighted_sum(&v[0].relu(), seed)
        });
        fd_check(&[shape], seed + 5, false, 1e-4, |v| {
            weighted_sum(&v[0].leaky_relu(0.2), seed)
        });
        fd_check(&[shape], seed + 6, false, 1e-4, |v| {
            weighted_sum(&v[0].sigmoid(), seed)
        });
        fd_check(&[shape], seed + 7, false, 1e-4, |v| {
            weighted_sum(&v[0].tanh(), seed)
        });
        fd_check(&[shape], seed + 8, false, 1e-4, |v| {
            weighted_sum(&v[0].exp(), seed)
        });
        fd_check(&[shape], seed + 9, true, 1e-4, |v| {
            weighted_sum(&v[0].log(), seed)
        });
        fd_check(&[shape], seed + 10, false, 1e-4, |v| v[0].mean());
        fd_check(&[shape], seed + 11, false, 1e-4, |v| v[0].sum_squares());
    }
}

#[test]
fn matmul_passes_finite_differences() {
    for (i, (m, k, n)) in [(1, 1, 1), (2, 3, 2), (3, 2, 4), (4, 4, 4), (1, 5, 3)]
        .into_iter()
        .enumerate()
    {
        let seed = 300 + i as u64;
        fd_check(&[&[m, k], &[k, n]], seed, false, 1e-4, |v| {
            weighted_sum(&v[0].matmul(&v[1]), seed)
        });
    }
}

#[test]
fn conv2d_of_1x1_kernel_is_scalar_multiplication() {
    let tape = Tape::new();
    let x = tape.leaf(&[1, 4, 4], random_vec(16, 7, -1.0, 1.0), true);
    let w = tape.leaf(&[1, 1, 1, 1], vec![2.5], true);
    let b = tape.leaf(&[1], vec![0.0], true);
    let y = x.conv2d(&w, &b);
    let (xv, yv) = (x.value(), y.value());
    for (a, b) in xv.iter().zip(&yv) {
        assert!((2.5 * a - b).abs() < 1e-15);
    }
}

#[test]
fn conv2d_matches_nested_loop_oracle() {
    // Direct convolution written independently, zero padding, 3x3.
    let (ci, co, h, w) = (2, 3, 5, 5);
    let x = random_vec(ci * h * w, 1, -1.0, 1.0);
    let wt = random_vec(co * ci * 9, 2, -1.0, 1.0);
    let bias = random_vec(co, 3, -1.0, 1.0);
    let tape = Tape::new();
    let xv = tape.leaf(&[ci, h, w], x.clone(), false);
    let wv = tape.leaf(&[co, ci, 3, 3], wt.clone(), false);
    let bv = tape.leaf(&[co], bias.clone(), false);
    let y = xv.conv2d(&wv, &bv).value();
    for o in 0..co {
        for r in 0..h {
            for s in 0..w {
                let mut acc = bias[o];
                for c in 0..ci {
                    for u in 0..3usize {
                        for v in 0..3usize {
                            let (ir, is) = (r as isize + u as isize - 1, s as isize + v as isize - 1);
                            if ir >= 0 && ir < h as isize && is >= 0 && is < w as isize {
                                acc += x[(c * h + ir as usize) * w + is as usize]
                                    * wt[((o * ci + c) * 3 + u) * 3 + v];
                            }
                        }
                    }
                }
                let got = y[(o * h + r) * w + s];
                assert!((got - acc).abs() < 1e-12, "({o},{r},{s}): {got} vs {acc}");
            }
        }
    }
}

#[test]
fn conv2d_passes_finite_differences() {
    for (i, (ci, co, h, w, k)) in
        [(1, 1, 3, 3, 1), (1, 2, 4, 4, 3), (2, 1, 3, 5, 3), (2, 2, 4, 4, 3), (3, 2, 2, 2, 3)]
            .into_iter()
            .enumerate()
    {
        let seed = 400 + i as u64;
        fd_check(
            &[&[ci, h, w], &[co, ci, k, k], &[co]],
            seed,
            false,
            1e-4,
            |v| weighted_sum(&v[0].conv2d(&v[1], &v[2]), seed),
        );
    }
}

#[test]
fn structural_ops_pass_finite_differences() {
    for (i, (c, h, w)) in [(1, 2, 2), (2, 2, 4), (4, 2, 2), (1, 4, 4), (2, 4, 2)]
        .into_iter()
        .enumerate()
    {
        let seed = 500 + i as u64;
        fd_check(&[&[c, h, w]], seed, false, 1e-4, |v| {
            weighted_sum(&v[0].upsample2(), seed)
        });
        fd_check(&[&[c, h, w]], seed + 1, false, 1e-4, |v| {
            weighted_sum(&v[0].reshape(&[c * h * w]), seed)
        });
        if h % 2 == 0 && w % 2 == 0 {
            fd_check(&[&[c, h, w]], seed + 2, false, 1e-4, |v| {
                weighted_sum(&v[0].squeeze2(), seed)
            });
        }
        fd_check(&[&[4 * c, h, w]], seed + 3, false, 1e-4, |v| {
            weighted_sum(&v[0].unsqueeze2(), seed)
        });
        if c >= 2 {
            fd_check(&[&[c, h, w]], seed + 4, false, 1e-4, |v| {
                weighted_sum(&v[0].slice(0, 1, c - 1), seed)
            });
        }
        fd_check(&[&[c, h, w], &[c, h, w]], seed + 5, false, 1e-4, |v| {
            weighted_sum(&concat(&[&v[0], &v[1]], 0), seed)
        });
        let perm: Vec<usize> = (0..4 * c).rev().collect();
        fd_check(&[&[4 * c, h, w]], seed + 6, false, 1e-4, move |v| {
            weighted_sum(&v[0].permute_channels(Rc::new(perm.clone())), seed)
        });
    }
}

#[test]
fn channel_ops_pass_finite_differences() {
    for (i, (c, h, w)) in [(1, 3, 3), (2, 2, 2), (3, 4, 4), (2, 5, 3), (4, 2, 3)]
        .into_iter()
        .enumerate()
    {
        let seed = 600 + i as u64;
        fd_check(&[&[c, h, w], &[c], &[c]], seed, false, 2e-4, |v| {
            weighted_sum(&v[0].channel_norm(&v[1], &v[2]), seed)
        });
        fd_check(&[&[c, h, w], &[c], &[c]], seed + 1, false, 1e-4, |v| {
            weighted_sum(&v[0].channel_affine(&v[1], &v[2]), seed)
        });
    }
}

#[test]
fn channel_norm_normalizes_each_channel() {
    let (c, h, w) = (3, 4, 4);
    let tape = Tape::new();
    let x = tape.leaf(&[c, h, w], random_vec(c * h * w, 9, -2.0, 3.0), false);
    let gamma = tape.constant(&[c], vec![1.0; c]);
    let beta = tape.constant(&[c], vec![0.0; c]);
    let y = x.channel_norm(&gamma, &beta).value();
    for ch in 0..c {
        let plane = &y[ch * h * w..(ch + 1) * h * w];
        let mean: f64 = plane.iter().sum::<f64>() / plane.len() as f64;
        let var: f64 =
            plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-5, "var {var}");
    }
}

#[test]
fn magnitude_of_3_4_is_5_with_expected_gradient() {
    let tape = Tape::new();
    let re = tape.leaf(&[1, 1], vec![3.0], true);
    let im = tape.leaf(&[1, 1], vec![4.0], true);
    let pair = ComplexPair::new(&re, &im);
    let m = magnitude_layer(&pair);
    assert_eq!(m.value(), vec![5.0]);
    let g = m.sum().backward().unwrap();
    assert!((g.or_zeros(&re)[0] - 0.6).abs() < 1e-15);
    assert!((g.or_zeros(&im)[0] - 0.8).abs() < 1e-15);
}

#[test]
fn magnitude_at_zero_has_zero_subgradient() {
    let tape = Tape::new();
    let re = tape.leaf(&[1, 1], vec![0.0], true);
    let im = tape.leaf(&[1, 1], vec![0.0], true);
    let m = magnitude_layer(&ComplexPair::new(&re, &im));
    assert_eq!(m.value(), vec![0.0]);
    let g = m.sum().backward().unwrap();
    assert_eq!(g.or_zeros(&re), vec![0.0]);
    assert_eq!(g.or_zeros(&im), vec![0.0]);
}

#[test]
fn fft_layer_matches_field_fft() {
    let (h, w) = (8, 8);
    let re = random_vec(h * w, 11, -1.0, 1.0);
    let im = random_vec(h * w, 12, -1.0, 1.0);
    let tape = Tape::new();
    let pair = complex_constant(&tape, h, w, re.clone(), im.clone());
    let f = fft_layer(&pair);
    let field = crate::field::ComplexField::new(
        h,
        w,
        re.iter()
            .zip(&im)
            .map(|(&r, &i)| num_complex::Complex64::new(r, i))
            .collect(),
    )
    .unwrap();
    let expected = crate::field::fft2(&field).unwrap();
    let (fre, fim) = (f.re().value(), f.im().value());
    for i in 0..h * w {
        assert!((fre[i] - expected.values()[i].re).abs() < 1e-12);
        assert!((fim[i] - expected.values()[i].im).abs() < 1e-12);
    }
    // And the inverse layer undoes it.
    let back = ifft_layer(&f);
    let (bre, bim) = (back.re().value(), back.im().value());
    for i in 0..h * w {
        assert!((bre[i] - re[i]).abs() < 1e-12);
        assert!((bim[i] - im[i]).abs() < 1e-12);
    }
}

#[test]
fn fft_gradient_is_inverse_transform_of_cotangent() {
    // For loss = Re<c, fft2(x)>, grad_x = ifft2(c), checked analytically.
    let (h, w) = (8, 8);
    let cre = random_vec(h * w, 21, -1.0, 1.0);
    let cim = random_vec(h * w, 22, -1.0, 1.0);
    let tape = Tape::new();
    let re = tape.leaf(&[h, w], random_vec(h * w, 23, -1.0, 1.0), true);
    let im = tape.leaf(&[h, w], random_vec(h * w, 24, -1.0, 1.0), true);
    let f = fft_layer(&ComplexPair::new(&re, &im));
    let mut packed_c = cre.clone();
    packed_c.extend_from_slice(&cim);
    let loss = f.packed().mul_const(Rc::new(packed_c)).sum();
    let grads = loss.backward().unwrap();

    let c_field = crate::field::ComplexField::new(
        h,
        w,
        cre.iter()
            .zip(&cim)
            .map(|(&r, &i)| num_complex::Complex64::new(r, i))
            .collect(),
    )
    .unwrap();
    let expected = crate::field::ifft2(&c_field).unwrap();
    let (gre, gim) = (grads.or_zeros(&re), grads.or_zeros(&im));
    for i in 0..h * w {
        assert!((gre[i] - expected.values()[i].re).abs() < 1e-10);
        assert!((gim[i] - expected.values()[i].im).abs() < 1e-10);
    }
}

/// Builds the measurement loss graph used by the solvers, inline.
fn chain_loss(tape: &Tape, x: &Var, m: &crate::measurement::MeasurementSet) -> Var {
    let mut total: Option<Var> = None;
    for (l, pupil) in m.array().pupils().iter().enumerate() {
        let a = apply_a_layer(x, packed_pupil_const(pupil));
        let mag = magnitude_layer(&a);
        let masked = subsample_layer(&mag, subsample_const(m.masks(), l));
        let y = tape.constant(
            &[m.height(), m.width()],
            m.camera_y(l).values().to_vec(),
        );
        let term = y.sub(&masked).sum_squares();
        total = Some(match total {
            None => term,
            Some(t) => t.add(&term),
        });
    }
    total.expect("at least one camera")
}

#[test]
fn two_camera_chain_matches_finite_differences() {
    // Eq.-(3)-style loss with two hand-built pupils and masks on 8x8.
    let n = 8;
    let pupils = [
        crate::field::PupilMask::new(n, n, (4.0, 3.0), 2.0).unwrap(),
        crate::field::PupilMask::new(n, n, (4.0, 5.0), 2.0).unwrap(),
    ];
    let keep = make_subsample_mask(n, n, 2, 60.0, 3).unwrap();
    let y_data: Vec<Vec<f64>> = (0..2).map(|l| random_vec(n * n, 40 + l as u64, 0.0, 1.0)).collect();

    let build = |tape: &Tape, x: &Var| {
        let mut total: Option<Var> = None;
        for l in 0..2 {
            let a = apply_a_layer(x, packed_pupil_const(&pupils[l]));
            let masked = subsample_layer(&magnitude_layer(&a), subsample_const(&keep, l));
            let y = tape.constant(&[n, n], y_data[l].clone());
            let term = y.sub(&masked).sum_squares();
            total = Some(match total {
                None => term,
                Some(t) => t.add(&term),
            });
        }
        total.unwrap()
    };

    let x0 = random_vec(n * n, 32, 0.1, 0.9);
    let tape = Tape::new();
    let x = tape.leaf(&[n, n], x0.clone(), true);
    let loss = build(&tape, &x);
    let analytic = loss.backward().unwrap().or_zeros(&x);

    let numeric = finite_diff_grad(
        |v| {
            let t = Tape::new();
            let xv = t.leaf(&[n, n], v.to_vec(), false);
            build(&t, &xv).scalar()
        },
        &x0,
        1e-5,
    );
    let err = relative_error(&analytic, &numeric, 1e-10);
    assert!(err < 1e-4, "chain gradient rel err {err}");
}

#[test]
fn chain_loss_agrees_with_reference_implementation() {
    let n = 8;
    let truth = crate::synth::gaussian_blobs(n, n, 2, 31);
    let array = make_camera_array(n, n, 2, 2.0, 2.0).unwrap();
    let masks = make_subsample_mask(n, n, array.num_cameras(), 60.0, 3).unwrap();
    let m = crate::measurement::forward_measure(&truth, &array, &masks, &NoiseSpec::noiseless())
        .unwrap();
    let x0 = random_vec(n * n, 32, 0.1, 0.9);
    let tape = Tape::new();
    let x = tape.leaf(&[n, n], x0.clone(), true);
    let loss = chain_loss(&tape, &x, &m);
    let img = RealImage::new(n, n, x0).unwrap();
    let reference = crate::measurement::measurement_loss(&img, &m).unwrap();
    assert!((loss.scalar() - reference).abs() < 1e-10 * reference.max(1.0));
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let n = 8;
        let tape = Tape::new();
        let x = tape.leaf(&[1, n, n], random_vec(n * n, 77, -1.0, 1.0), true);
        let w = tape.leaf(&[2, 1, 3, 3], random_vec(18, 78, -1.0, 1.0), true);
        let b = tape.leaf(&[2], vec![0.1, -0.2], true);
        let loss = x.conv2d(&w, &b).sigmoid().sum_squares();
        let g = loss.backward().unwrap();
        (g.or_zeros(&x), g.or_zeros(&w), loss.scalar())
    };
    let (a1, b1, l1) = run();
    let (a2, b2, l2) = run();
    assert_eq!(a1, a2);
    assert_eq!(b1, b2);
    assert_eq!(l1, l2);
}
