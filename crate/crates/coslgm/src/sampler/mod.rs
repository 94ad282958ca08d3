//! Gibbs sampler for the joint posterior of the latent auxiliary variables,
//! basis-weight fields, regression coefficients, predictor intercepts,
//! noise variances, and GMRF scales, using the conjugate conditionals of
//! the hierarchical model.
//!
//! Every basis-weight field lives on the sum-zero subspace of its intrinsic
//! prior (the global level is carried by the intercepts), so each field
//! draw is a banded-Cholesky Gaussian draw followed by an exact
//! conditioning step onto the constraint. One sweep updates, in order:
//! z, delta_w, each delta_v, beta*, each alpha, the noise variances, and
//! the GMRF scales.

pub mod truncnorm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use thiserror::Error;

use crate::linalg::{BandCholesky, LinalgError, SymBandMat};
use crate::model::{Family, ModelSpec};
use crate::predict::{ParamLayout, PosteriorSamples};

#[derive(Error, Debug)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error(
        "factorization of the {field} conditional precision failed at iteration {iteration}: {source}"
    )]
    Factorization {
        field: String,
        iteration: usize,
        source: LinalgError,
    },
}

/// Iteration protocol for one run.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn with_seed(seed: u64) -> Self {
        SamplerConfig {
            n_iter: 10_000,
            burn_in: 2_000,
            thin: 5,
            n_chains: 1,
            seed,
        }
    }

    fn validate(&self) -> Result<(), SamplerError> {
        if self.n_iter <= self.burn_in {
            return Err(SamplerError::InvalidConfig(format!(
                "n_iter ({}) must exceed burn_in ({})",
                self.n_iter, self.burn_in
            )));
        }
        if self.thin < 1 {
            return Err(SamplerError::InvalidConfig("thin must be >= 1".into()));
        }
        if self.n_chains < 1 {
            return Err(SamplerError::InvalidConfig("n_chains must be >= 1".into()));
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

/// One Gibbs state. Gaussian sources keep their observations in `z`
/// permanently; Bernoulli sources refresh `z` every sweep.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub z: Vec<Vec<f64>>,
    pub delta_w: Vec<f64>,
    pub delta_v: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub sigma2_y: Vec<f64>,
    pub sigma2_x: Vec<f64>,
    pub kappa_v: Vec<f64>,
    pub kappa_w: f64,
    pub iteration: usize,
}

impl ChainState {
    /// Deterministic initial state: coefficients and fields at zero,
    /// variances and scales at one (or the fixed residual scale when the
    /// model pins it), auxiliaries at +-0.5 by label.
    pub fn init(spec: &ModelSpec) -> ChainState {
        let z = (0..spec.n_responses())
            .map(|k| match spec.response_family(k) {
                Family::Gaussian => spec.response_values(k).to_vec(),
                Family::BernoulliProbit => spec
                    .response_values(k)
                    .iter()
                    .map(|&y| if y > 0.5 { 0.5 } else { -0.5 })
                    .collect(),
            })
            .collect();
        ChainState {
            z,
            delta_w: vec![0.0; spec.basis_w.len()],
            delta_v: (0..spec.n_predictors())
                .map(|j| vec![0.0; spec.basis_v[j].len()])
                .collect(),
            beta: vec![0.0; spec.beta_dim()],
            alpha: vec![0.0; spec.n_predictors()],
            sigma2_y: vec![1.0; spec.n_responses()],
            sigma2_x: vec![1.0; spec.n_predictors()],
            kappa_v: vec![1.0; spec.n_predictors()],
            kappa_w: spec.prior_w().kappa(),
            iteration: 0,
        }
    }
}

/// The sweep machinery for one chain: the immutable model plus reusable
/// banded workspaces (the precision sparsity pattern never changes across
/// iterations, only the values).
pub struct GibbsSampler<'a> {
    spec: &'a ModelSpec,
    ws_w: SymBandMat,
    ws_v: Vec<SymBandMat>,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(spec: &'a ModelSpec) -> Self {
        let ws_w = SymBandMat::zeros(spec.basis_w.len(), spec.envelope_w());
        let ws_v = (0..spec.n_predictors())
            .map(|j| SymBandMat::zeros(spec.basis_v[j].len(), spec.envelope_v(j)))
            .collect();
        GibbsSampler { spec, ws_w, ws_v }
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    /// V*_k beta* on source k's supports: intercept + source bias +
    /// sum_j beta_j B_j(L_k) delta_vj, optionally with one predictor
    /// term left out (for that field's own conditional).
    fn vstar_beta(&self, state: &ChainState, k: usize, skip_j: Option<usize>) -> Vec<f64> {
        let spec = self.spec;
        let n = spec.response_values(k).len();
        let bias = spec.bias_col(k).map_or(0.0, |c| state.beta[c]);
        let mut out = vec![state.beta[0] + bias; n];
        for j in 0..spec.n_predictors() {
            if skip_j == Some(j) {
                continue;
            }
            let bj = state.beta[spec.beta_col(j)];
            if bj == 0.0 {
                continue;
            }
            let design = spec.design_v_y(k, j);
            for (i, o) in out.iter_mut().enumerate() {
                *o += bj * design.row_dot(i, &state.delta_v[j]);
            }
        }
        out
    }

    /// Conditional mean of z_k: V*_k beta* + B_w delta_w.
    pub fn response_mean(&self, state: &ChainState, k: usize) -> Vec<f64> {
        let mut m = self.vstar_beta(state, k, None);
        let design_w = self.spec.design_w_y(k);
        for (i, o) in m.iter_mut().enumerate() {
            *o += design_w.row_dot(i, &state.delta_w);
        }
        m
    }

    /// Refresh the probit auxiliaries: each z_ki is a one-sided truncated
    /// normal around its conditional mean, on the side its label demands.
    /// Gaussian sources are untouched.
    pub fn step_z<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) {
        for k in 0..self.spec.n_responses() {
            if self.spec.response_family(k) != Family::BernoulliProbit {
                continue;
            }
            let mean = self.response_mean(state, k);
            let d_inv = self.spec.response_d_inv(k);
            let sigma2 = state.sigma2_y[k];
            let y = self.spec.response_values(k);
            for i in 0..mean.len() {
                let sd = (sigma2 / d_inv[i]).sqrt();
                state.z[k][i] = if y[i] > 0.5 {
                    truncnorm::truncnorm_lower(rng, mean[i], sd, 0.0)
                } else {
                    truncnorm::truncnorm_upper(rng, mean[i], sd, 0.0)
                };
            }
        }
    }

    /// Residual-field update: precision sum_k sigma_k^-2 B_wᵀD^-1B_w +
    /// kappa_w P_w, mean from the z-residuals with the coefficient part
    /// removed, drawn on the sum-zero subspace.
    pub fn step_delta_w<R: Rng + ?Sized>(
        &mut self,
        state: &mut ChainState,
        rng: &mut R,
    ) -> Result<(), SamplerError> {
        let spec = self.spec;
        let q = spec.basis_w.len();
        self.ws_w.fill_zero();
        self.ws_w
            .add_scaled(state.kappa_w, spec.prior_w().structure());
        let mut b = vec![0.0; q];
        for k in 0..spec.n_responses() {
            let s_inv = 1.0 / state.sigma2_y[k];
            self.ws_w.add_scaled(s_inv, spec.gram_w_y(k));
            let vb = self.vstar_beta(state, k, None);
            let d_inv = spec.response_d_inv(k);
            let w: Vec<f64> = state.z[k]
                .iter()
                .zip(&vb)
                .zip(d_inv)
                .map(|((z, m), di)| s_inv * di * (z - m))
                .collect();
            let bt = spec.design_w_y(k).t_matvec(&w);
            for (acc, v) in b.iter_mut().zip(bt) {
                *acc += v;
            }
        }
        let chol = self
            .ws_w
            .cholesky()
            .map_err(|e| SamplerError::Factorization {
                field: "delta_w".into(),
                iteration: state.iteration,
                source: e,
            })?;
        state.delta_w = constrained_gaussian_draw(&chol, &b, rng);
        Ok(())
    }

    /// Predictor-field update: the conditional pools the response sources
    /// (scaled by beta_j) with the predictor's own likelihood and prior.
    pub fn step_delta_v<R: Rng + ?Sized>(
        &mut self,
        state: &mut ChainState,
        rng: &mut R,
        j: usize,
    ) -> Result<(), SamplerError> {
        let spec = self.spec;
        let q = spec.basis_v[j].len();
        let bj = state.beta[spec.beta_col(j)];
        let mut b = vec![0.0; q];
        self.ws_v[j].fill_zero();
        self.ws_v[j].add_scaled(state.kappa_v[j], spec.prior_v(j).structure());
        for k in 0..spec.n_responses() {
            if bj == 0.0 {
                break;
            }
            let s_inv = 1.0 / state.sigma2_y[k];
            self.ws_v[j].add_scaled(s_inv * bj * bj, spec.gram_v_y(k, j));
            let partial = self.vstar_beta(state, k, Some(j));
            let d_inv = spec.response_d_inv(k);
            let design_w = spec.design_w_y(k);
            let w: Vec<f64> = (0..partial.len())
                .map(|i| {
                    let resid = state.z[k][i] - partial[i] - design_w.row_dot(i, &state.delta_w);
                    s_inv * bj * d_inv[i] * resid
                })
                .collect();
            let bt = spec.design_v_y(k, j).t_matvec(&w);
            for (acc, v) in b.iter_mut().zip(bt) {
                *acc += v;
            }
        }
        let s_inv_x = 1.0 / state.sigma2_x[j];
        self.ws_v[j].add_scaled(s_inv_x, spec.gram_v_x(j));
        let d_inv_x = spec.predictor_d_inv(j);
        let x = spec.predictor_values(j);
        let w: Vec<f64> = x
            .iter()
            .zip(d_inv_x)
            .map(|(xi, di)| s_inv_x * di * (xi - state.alpha[j]))
            .collect();
        let bt = spec.design_v_x(j).t_matvec(&w);
        for (acc, v) in b.iter_mut().zip(bt) {
            *acc += v;
        }
        let chol = self.ws_v[j]
            .cholesky()
            .map_err(|e| SamplerError::Factorization {
                field: format!("delta_v[{j}]"),
                iteration: state.iteration,
                source: e,
            })?;
        state.delta_v[j] = constrained_gaussian_draw(&chol, &b, rng);
        Ok(())
    }

    /// Dense rows of V*_k = [1 | A_k | V_k] on source k's supports.
    fn vstar_matrix(&self, state: &ChainState, k: usize) -> nalgebra::DMatrix<f64> {
        let spec = self.spec;
        let n = spec.response_values(k).len();
        let d = spec.beta_dim();
        let mut m = nalgebra::DMatrix::zeros(n, d);
        for i in 0..n {
            m[(i, 0)] = 1.0;
        }
        if let Some(c) = spec.bias_col(k) {
            for i in 0..n {
                m[(i, c)] = 1.0;
            }
        }
        for j in 0..spec.n_predictors() {
            let col = spec.beta_col(j);
            let design = spec.design_v_y(k, j);
            for i in 0..n {
                m[(i, col)] = design.row_dot(i, &state.delta_v[j]);
            }
        }
        m
    }

    /// Coefficient update: normal with precision
    /// sum_k sigma_k^-2 V*ᵀD^-1V* + Sigma_beta^-1.
    pub fn step_beta<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) {
        let spec = self.spec;
        let d = spec.beta_dim();
        let mut prec =
            nalgebra::DMatrix::from_diagonal_element(d, d, 1.0 / spec.priors.sigma_beta2);
        let mut rhs = nalgebra::DVector::zeros(d);
        for k in 0..spec.n_responses() {
            let s_inv = 1.0 / state.sigma2_y[k];
            let vstar = self.vstar_matrix(state, k);
            let d_inv = spec.response_d_inv(k);
            let design_w = spec.design_w_y(k);
            let n = d_inv.len();
            let mut weighted = vstar.clone();
            for i in 0..n {
                let w = s_inv * d_inv[i];
                for c in 0..d {
                    weighted[(i, c)] *= w;
                }
            }
            prec += weighted.transpose() * &vstar;
            let resid = nalgebra::DVector::from_iterator(
                n,
                (0..n).map(|i| state.z[k][i] - design_w.row_dot(i, &state.delta_w)),
            );
            rhs += weighted.transpose() * resid;
        }
        state.beta = dense_gaussian_draw(&prec, &rhs, rng);
    }

    /// Predictor intercept update (scalar normal).
    pub fn step_alpha<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R, j: usize) {
        let spec = self.spec;
        let s_inv = 1.0 / state.sigma2_x[j];
        let d_inv = spec.predictor_d_inv(j);
        let x = spec.predictor_values(j);
        let design = spec.design_v_x(j);
        let mut prec = 1.0 / spec.priors.sigma_alpha2;
        let mut rhs = 0.0;
        for i in 0..x.len() {
            prec += s_inv * d_inv[i];
            rhs += s_inv * d_inv[i] * (x[i] - design.row_dot(i, &state.delta_v[j]));
        }
        let var = 1.0 / prec;
        let z: f64 = StandardNormal.sample(rng);
        state.alpha[j] = var * rhs + var.sqrt() * z;
    }

    /// Noise-variance updates: inverse-gamma with shape a + n/2 and rate
    /// b + residᵀ D^-1 resid / 2.
    pub fn step_variances<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) {
        let spec = self.spec;
        for k in 0..spec.n_responses() {
            let mean = self.response_mean(state, k);
            let d_inv = spec.response_d_inv(k);
            let rss: f64 = state.z[k]
                .iter()
                .zip(&mean)
                .zip(d_inv)
                .map(|((z, m), di)| di * (z - m) * (z - m))
                .sum();
            let shape = spec.priors.a_sigma_y + 0.5 * mean.len() as f64;
            let rate = spec.priors.b_sigma_y + 0.5 * rss;
            state.sigma2_y[k] = inverse_gamma_draw(rng, shape, rate);
        }
        for j in 0..spec.n_predictors() {
            let design = spec.design_v_x(j);
            let d_inv = spec.predictor_d_inv(j);
            let x = spec.predictor_values(j);
            let rss: f64 = (0..x.len())
                .map(|i| {
                    let r = x[i] - state.alpha[j] - design.row_dot(i, &state.delta_v[j]);
                    d_inv[i] * r * r
                })
                .sum();
            let shape = spec.priors.a_sigma_x + 0.5 * x.len() as f64;
            let rate = spec.priors.b_sigma_x + 0.5 * rss;
            state.sigma2_x[j] = inverse_gamma_draw(rng, shape, rate);
        }
    }

    /// GMRF-scale updates: gamma with shape a + rank(P)/2 and rate
    /// b + deltaᵀ P delta / 2. The residual-field scale is only sampled
    /// when the model does not fix it.
    pub fn step_kappa<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) {
        let spec = self.spec;
        for j in 0..spec.n_predictors() {
            let prior = spec.prior_v(j);
            let quad = prior.structure_quad_form(&state.delta_v[j]).unwrap();
            let shape = spec.priors.a_kappa + 0.5 * prior.rank() as f64;
            let rate = spec.priors.b_kappa + 0.5 * quad;
            state.kappa_v[j] = gamma_draw(rng, shape, rate);
        }
        if !spec.kappa_w_fixed() {
            let prior = spec.prior_w();
            let quad = prior.structure_quad_form(&state.delta_w).unwrap();
            let shape = spec.priors.a_kappa + 0.5 * prior.rank() as f64;
            let rate = spec.priors.b_kappa + 0.5 * quad;
            state.kappa_w = gamma_draw(rng, shape, rate);
        }
    }

    /// One full sweep in the fixed update order.
    pub fn sweep<R: Rng + ?Sized>(
        &mut self,
        state: &mut ChainState,
        rng: &mut R,
    ) -> Result<(), SamplerError> {
        self.step_z(state, rng);
        self.step_delta_w(state, rng)?;
        for j in 0..self.spec.n_predictors() {
            self.step_delta_v(state, rng, j)?;
        }
        self.step_beta(state, rng);
        for j in 0..self.spec.n_predictors() {
            self.step_alpha(state, rng, j);
        }
        self.step_variances(state, rng);
        self.step_kappa(state, rng);
        state.iteration += 1;
        Ok(())
    }
}

/// Draw from the Gaussian with precision A (factored) and linear term b,
/// conditioned exactly onto the sum-zero subspace: draw the unconstrained
/// x ~ N(A^-1 b, A^-1), then subtract the kriging correction along A^-1 1.
pub fn constrained_gaussian_draw<R: Rng + ?Sized>(
    chol: &BandCholesky,
    b: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    let n = chol.n();
    let mut x = chol.solve(b);
    let mut noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    chol.solve_upper(&mut noise);
    for (xi, ni) in x.iter_mut().zip(&noise) {
        *xi += ni;
    }
    let w = chol.solve(&vec![1.0; n]);
    let w_sum: f64 = w.iter().sum();
    let x_sum: f64 = x.iter().sum();
    let c = x_sum / w_sum;
    for (xi, wi) in x.iter_mut().zip(&w) {
        *xi -= c * wi;
    }
    x
}

/// Mean and covariance of the sum-zero-conditioned Gaussian, dense; used
/// by oracle tests against the sampling path.
pub fn constrained_moments(
    prec: &nalgebra::DMatrix<f64>,
    b: &nalgebra::DVector<f64>,
) -> (nalgebra::DVector<f64>, nalgebra::DMatrix<f64>) {
    let cov = prec.clone().try_inverse().expect("precision invertible");
    let mu = &cov * b;
    let ones = nalgebra::DVector::from_element(prec.nrows(), 1.0);
    let w = &cov * &ones;
    let w_sum = w.sum();
    let mu_c = &mu - &w * (mu.sum() / w_sum);
    let cov_c = &cov - &w * w.transpose() / w_sum;
    (mu_c, cov_c)
}

/// Draw from N(prec^-1 rhs, prec^-1) for small dense systems.
fn dense_gaussian_draw<R: Rng + ?Sized>(
    prec: &nalgebra::DMatrix<f64>,
    rhs: &nalgebra::DVector<f64>,
    rng: &mut R,
) -> Vec<f64> {
    let d = prec.nrows();
    let chol = prec
        .clone()
        .cholesky()
        .expect("coefficient precision is positive definite");
    let mu = chol.solve(rhs);
    let l = chol.l();
    // back-substitution on Lᵀ u = z
    let mut u = nalgebra::DVector::from_iterator(
        d,
        (0..d).map(|_| -> f64 { StandardNormal.sample(rng) }),
    );
    for i in (0..d).rev() {
        let mut s = u[i];
        for jj in (i + 1)..d {
            s -= l[(jj, i)] * u[jj];
        }
        u[i] = s / l[(i, i)];
    }
    (0..d).map(|i| mu[i] + u[i]).collect()
}

fn gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("valid gamma parameters");
    loop {
        let v = g.sample(rng);
        if v > 0.0 && v.is_finite() {
            return v;
        }
    }
}

fn inverse_gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    1.0 / gamma_draw(rng, shape, rate)
}

/// Run the full sampler: `n_chains` chains with seeds derived from the
/// master seed through separate counter streams, each sweeping `n_iter`
/// times and storing every `thin`-th post-burn-in state. Chains run on
/// their own threads (at most `threads` at a time) and share only the
/// immutable model, so results are bit-identical for a given seed
/// regardless of scheduling.
pub fn run(
    spec: &ModelSpec,
    config: &SamplerConfig,
    threads: usize,
) -> Result<PosteriorSamples, SamplerError> {
    config.validate()?;
    let layout = ParamLayout::for_spec(spec);
    let n_chains = config.n_chains;
    let batch = threads.max(1);
    let mut chains: Vec<Option<Result<Vec<Vec<f64>>, SamplerError>>> =
        (0..n_chains).map(|_| None).collect();
    for start in (0..n_chains).step_by(batch) {
        let end = (start + batch).min(n_chains);
        let results: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = (start..end)
                .map(|c| {
                    let layout = &layout;
                    scope.spawn(move || run_chain(spec, config, layout, c as u64))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("chain thread panicked"))
                .collect()
        });
        for (c, r) in (start..end).zip(results) {
            chains[c] = Some(r);
        }
    }
    let mut out_chains = Vec::with_capacity(n_chains);
    for c in chains {
        out_chains.push(c.unwrap()?);
    }
    Ok(PosteriorSamples::new(layout, out_chains, *config))
}

fn run_chain(
    spec: &ModelSpec,
    config: &SamplerConfig,
    layout: &ParamLayout,
    chain_index: u64,
) -> Result<Vec<Vec<f64>>, SamplerError> {
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    rng.set_stream(chain_index + 1);
    let mut sampler = GibbsSampler::new(spec);
    let mut state = ChainState::init(spec);
    let n_params = layout.n_params();
    let mut columns: Vec<Vec<f64>> = (0..n_params)
        .map(|_| Vec::with_capacity(config.draws_per_chain()))
        .collect();
    for it in 1..=config.n_iter {
        sampler.sweep(&mut state, &mut rng)?;
        if it > config.burn_in && (it - config.burn_in) % config.thin == 0 {
            layout.record(&state, &mut columns);
        }
    }
    Ok(columns)
}
