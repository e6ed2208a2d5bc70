//! Minimal dense tensor engine with reverse-mode differentiation.

mod graph;
mod kernels;
mod params;
mod rng;
mod tensor;

pub use graph::{Graph, Var};
pub use params::{ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::Tensor;


/// Default epsilon for root-mean-square layer normalization.
pub const RMS_NORM_EPS: f64 = 1e-6;

/// Central-difference gradient of `f` with respect to every entry of `x`.
pub fn finite_difference<F>(x: &Tensor, h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = x.clone();
    (0..x.numel())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.data_mut()[i] = orig - h;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
