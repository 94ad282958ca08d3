//! Bayesian spatial latent Gaussian models with exact change of support.
//!
//! Latent spatial processes are linear combinations of tensor-product
//! B-splines weighted by intrinsic Gaussian Markov random fields. Because
//! B-splines integrate in closed form, the same latent process can be
//! evaluated at points or aggregated over axis-aligned rectangles without
//! approximation, which lets misaligned response and predictor data sources
//! enter one hierarchical model. Inference is by Gibbs sampling with
//! conjugate conditionals; binary responses use probit data augmentation.
//!
//! The crate is organised around the model pipeline:
//!
//! - [`basis`]: knot vectors, tensor-product bases, evaluation,
//!   differentiation, exact integration, and sparse design matrices.
//! - [`gmrf`]: intrinsic GMRF priors on the basis weights.
//! - [`model`]: assembly of the hierarchical model from data sources.
//! - [`sampler`]: the Gibbs sampler.
//! - [`simulate`]: synthetic-scenario generators.
//! - [`predict`]: posterior prediction and summaries.
//! - [`diagnostics`]: effective sample size and R-hat.
//! - [`io`]: file formats (observations, rasters, chain stores, run config).

pub mod basis;
pub mod diagnostics;
pub mod gmrf;
pub mod io;
pub mod linalg;
pub mod model;
pub mod predict;
pub mod sampler;
pub mod simulate;
