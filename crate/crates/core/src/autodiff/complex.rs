//! Differentiable complex-valued layers for the measurement chain.
//!
//! Complex tensors are packed as `(2, H, W)` with the real plane first.
//! [`ComplexPair`] is a thin wrapper that keeps that convention in one
//! place; `fft_layer`, `pupil_mask_layer`, `magnitude_layer` and
//! `subsample_layer` mirror the pieces of `M_l(A_l(.))` so the whole
//! measurement loss can be expressed as one differentiable graph.

use super::{Tape, Var};
use crate::field::{PupilMask, SubsampleMask};
use std::rc::Rc;

/// A complex tensor on the tape: real and imaginary planes of equal shape.
#[derive(Clone)]
pub struct ComplexPair {
    packed: Var,
}

impl ComplexPair {
    /// Packs separate real/imaginary planes (each `(H, W)`).
    pub fn new(re: &Var, im: &Var) -> Self {
        let (sr, si) = (re.shape(), im.shape());
        assert_eq!(sr, si, "re/im shapes differ: {sr:?} vs {si:?}");
        assert_eq!(sr.len(), 2, "ComplexPair planes must be (H, W)");
        let re3 = re.reshape(&[1, sr[0], sr[1]]);
        let im3 = im.reshape(&[1, sr[0], sr[1]]);
        Self { packed: super::concat(&[&re3, &im3], 0) }
    }

    /// A real tensor promoted to complex (zero imaginary plane).
    pub fn from_real(x: &Var) -> Self {
        let s = x.shape();
        assert_eq!(s.len(), 2, "from_real expects (H, W)");
        let zeros = x.tape().constant(&s, vec![0.0; x.numel()]);
        Self::new(x, &zeros)
    }

    pub(crate) fn from_packed(packed: Var) -> Self {
        let s = packed.shape();
        assert!(s.len() == 3 && s[0] == 2, "packed complex must be (2, H, W)");
        Self { packed }
    }

    pub fn packed(&self) -> &Var {
        &self.packed
    }

    pub fn re(&self) -> Var {
        let s = self.packed.shape();
        self.packed.slice(0, 0, 1).reshape(&[s[1], s[2]])
    }

    pub fn im(&self) -> Var {
        let s = self.packed.shape();
        self.packed.slice(0, 1, 1).reshape(&[s[1], s[2]])
    }

    pub fn spatial_dims(&self) -> (usize, usize) {
        let s = self.packed.shape();
        (s[1], s[2])
    }
}

/// Unitary DC-centered forward FFT; the reverse-mode rule is the inverse
/// transform of the cotangent (adjoint = inverse for a unitary map).
pub fn fft_layer(x: &ComplexPair) -> ComplexPair {
    ComplexPair::from_packed(super::ops::fft2_packed(x.packed(), false))
}

/// Unitary DC-centered inverse FFT.
pub fn ifft_layer(x: &ComplexPair) -> ComplexPair {
    ComplexPair::from_packed(super::ops::fft2_packed(x.packed(), true))
}

/// Expands an `(H, W)` binary support to the packed `(2, H, W)` constant
/// used by [`pupil_mask_layer`]. Build once per pupil and reuse.
pub fn packed_pupil_const(pupil: &PupilMask) -> Rc<Vec<f64>> {
    let plane: Vec<f64> = pupil.support().iter().map(|&b| b as f64).collect();
    let mut packed = plane.clone();
    packed.extend_from_slice(&plane);
    Rc::new(packed)
}

/// Multiplies both complex planes by the pupil support.
pub fn pupil_mask_layer(x: &ComplexPair, packed_support: Rc<Vec<f64>>) -> ComplexPair {
    ComplexPair::from_packed(x.packed().mul_const(packed_support))
}

/// Pointwise magnitude `sqrt(re^2 + im^2)` with subgradient 0 at exact
/// zeros; output is a real `(H, W)` tensor.
pub fn magnitude_layer(x: &ComplexPair) -> Var {
    super::ops::magnitude_packed(x.packed())
}

/// Retention mask for camera `l` as a reusable constant.
pub fn subsample_const(masks: &SubsampleMask, l: usize) -> Rc<Vec<f64>> {
    Rc::new(masks.camera(l).iter().map(|&b| b as f64).collect())
}

/// Multiplies a real `(H, W)` tensor by a binary retention mask.
pub fn subsample_layer(x: &Var, mask: Rc<Vec<f64>>) -> Var {
    x.mul_const(mask)
}

/// The bandpass operator `A_l` as a graph: `ifft2(P_l . fft2(x))` on a
/// real input image `(H, W)`.
pub fn apply_a_layer(x: &Var, packed_support: Rc<Vec<f64>>) -> ComplexPair {
    let spectrum = fft_layer(&ComplexPair::from_real(x));
    ifft_layer(&pupil_mask_layer(&spectrum, packed_support))
}

/// Convenience: a complex constant on the tape from raw planes.
pub fn complex_constant(tape: &Tape, h: usize, w: usize, re: Vec<f64>, im: Vec<f64>) -> ComplexPair {
    let re = tape.constant(&[h, w], re);
    let im = tape.constant(&[h, w], im);
    ComplexPair::new(&re, &im)
}
