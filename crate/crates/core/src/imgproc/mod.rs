//! From-scratch image processing primitives used by detection and shape
//! extraction.

mod filters;
mod morph;
mod skeleton;

pub use filters::{
    canny, clahe, correlate3, gaussian_blur, hysteresis_threshold, otsu_threshold, scharr_magnitude, sobel,
};
pub use morph::{
    close, connected_components, dilate, erode, fill_holes, filter_by_area, hole_count, open, Component,
};
pub use skeleton::{boundary_distance, branches, thin, Branch};
