//! Fractional-noise forcing for a spectral primitive-equation model.
//!
//! - [`fraccalc`]: Riemann–Liouville and Weyl operators on uniform grids and
//!   the pathwise generalized Stieltjes integral.
//! - [`fbm`]: fractional Brownian motion by circulant embedding.
//! - [`spectral`]: eigenbasis of the dissipative operator on a box with a
//!   Robin surface condition, with collocation transforms.
//! - [`noise`]: per-mode fractional Ornstein–Uhlenbeck convolutions and the
//!   moment, growth and regularity experiments built on them.
//! - [`pesolver`]: Galerkin solver for the transformed equations.
//! - [`attractor`]: pullback, absorption and contraction diagnostics.
//!
//! Numerical code is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix `f64`.

pub mod attractor;
pub mod error;
pub mod fbm;
pub mod fraccalc;
pub mod io;
pub mod linalg;
pub mod noise;
pub mod pesolver;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod spectral;

pub use error::{Error, Result};

pub type GridFunction = fraccalc::GridFunction<f64>;
pub type FracOrder = fraccalc::FracOrder<f64>;
pub type HurstIndex = fbm::HurstIndex<f64>;
pub type FbmPath = fbm::FbmPath<f64>;
pub type Domain = spectral::Domain<f64>;
pub type SpectralBasis = spectral::SpectralBasis<f64>;
pub type NoiseSpec = noise::NoiseSpec<f64>;
pub type ConvolutionPath = noise::ConvolutionPath<f64>;
pub type Params = pesolver::Params<f64>;
pub type SpectralState = pesolver::SpectralState<f64>;
pub type NoiseRealization = pesolver::NoiseRealization<f64>;
pub type Solver<'a> = pesolver::Solver<'a, f64>;
