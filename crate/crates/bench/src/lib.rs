//! Shared fixtures for the criterion benches.

use ptych_core::field::{make_camera_array, make_subsample_mask, CameraArray, NoiseSpec, RealImage, SubsampleMask};
use ptych_core::measurement::{forward_measure, MeasurementSet};

pub fn fixture_image(n: usize) -> RealImage {
    ptych_core::synth::chart(n, n)
}

pub fn fixture_geometry(n: usize, grid: usize) -> (CameraArray, SubsampleMask) {
    let radius = ptych_core::field::pupil::default_radius(n);
    let spacing = ptych_core::field::pupil::default_spacing(radius);
    let array = make_camera_array(n, n, grid, radius, spacing).expect("geometry fits");
    let masks =
        make_subsample_mask(n, n, array.num_cameras(), 10.0, 7).expect("valid subsampling");
    (array, masks)
}

pub fn fixture_measurements(n: usize, grid: usize) -> (RealImage, MeasurementSet) {
    let truth = fixture_image(n);
    let (array, masks) = fixture_geometry(n, grid);
    let m = forward_measure(&truth, &array, &masks, &NoiseSpec::new(1.0, 3)).expect("simulate");
    (truth, m)
}
