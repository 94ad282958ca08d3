//! Posterior prediction of the latent processes at arbitrary point or
//! rectangle supports, plus posterior summaries and the overprediction
//! probability used to compare models against a known truth.
//!
//! Prediction is a deterministic linear map per retained draw, so draws
//! are processed in blocks against sparse design rows rather than
//! materialising any draws-by-weights matrix.

use thiserror::Error;

use crate::basis::SupportGeometry;
use crate::model::{Family, ModelError, ModelSpec};
use crate::sampler::{ChainState, SamplerConfig};

#[derive(Error, Debug)]
pub enum PredictError {
    #[error("truth vector has {got} entries for {expected} targets")]
    TruthLength { expected: usize, got: usize },
    #[error("sample store does not match the model: {0}")]
    LayoutMismatch(String),
    #[error("prediction needs at least one retained draw")]
    NoDraws,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One named block of sampled parameters (a scalar or a weight field).
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub len: usize,
}

/// The column order of the sample store: beta*, predictor intercepts,
/// noise variances, GMRF scales, then the weight fields.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ParamLayout {
    pub blocks: Vec<ParamBlock>,
}

impl ParamLayout {
    pub fn for_spec(spec: &ModelSpec) -> ParamLayout {
        let mut blocks = Vec::new();
        for label in spec.beta_labels() {
            blocks.push(ParamBlock { name: label, len: 1 });
        }
        for j in 0..spec.n_predictors() {
            blocks.push(ParamBlock {
                name: format!("alpha_{}", spec.predictor_id(j)),
                len: 1,
            });
        }
        for k in 0..spec.n_responses() {
            blocks.push(ParamBlock {
                name: format!("sigma2_y_{}", spec.response_id(k)),
                len: 1,
            });
        }
        for j in 0..spec.n_predictors() {
            blocks.push(ParamBlock {
                name: format!("sigma2_x_{}", spec.predictor_id(j)),
                len: 1,
            });
        }
        for j in 0..spec.n_predictors() {
            blocks.push(ParamBlock {
                name: format!("kappa_v_{}", spec.predictor_id(j)),
                len: 1,
            });
        }
        blocks.push(ParamBlock { name: "kappa_w".into(), len: 1 });
        blocks.push(ParamBlock {
            name: "delta_w".into(),
            len: spec.basis_w.len(),
        });
        for j in 0..spec.n_predictors() {
            blocks.push(ParamBlock {
                name: format!("delta_v_{}", spec.predictor_id(j)),
                len: spec.basis_v[j].len(),
            });
        }
        ParamLayout { blocks }
    }

    pub fn n_params(&self) -> usize {
        self.blocks.iter().map(|b| b.len).sum()
    }

    /// Column range of a named block.
    pub fn block_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut at = 0;
        for b in &self.blocks {
            if b.name == name {
                return Some(at..at + b.len);
            }
            at += b.len;
        }
        None
    }

    /// Flat column name: block name, indexed for fields.
    pub fn column_name(&self, mut idx: usize) -> String {
        for b in &self.blocks {
            if idx < b.len {
                return if b.len == 1 {
                    b.name.clone()
                } else {
                    format!("{}[{idx}]", b.name)
                };
            }
            idx -= b.len;
        }
        panic!("column index out of range");
    }

    /// Append one state to param-major columns.
    pub fn record(&self, state: &ChainState, columns: &mut [Vec<f64>]) {
        let mut at = 0;
        let mut push = |vals: &[f64], at: &mut usize| {
            for &v in vals {
                columns[*at].push(v);
                *at += 1;
            }
        };
        push(&state.beta, &mut at);
        push(&state.alpha, &mut at);
        push(&state.sigma2_y, &mut at);
        push(&state.sigma2_x, &mut at);
        push(&state.kappa_v, &mut at);
        push(&[state.kappa_w], &mut at);
        push(&state.delta_w, &mut at);
        for dv in &state.delta_v {
            push(dv, &mut at);
        }
        debug_assert_eq!(at, columns.len());
    }
}

/// Thinned posterior draws, stored param-major per chain, with the run
/// metadata needed to reuse them.
#[derive(Clone, Debug)]
pub struct PosteriorSamples {
    pub layout: ParamLayout,
    chains: Vec<Vec<Vec<f64>>>,
    pub config: SamplerConfig,
}

impl PosteriorSamples {
    pub fn new(layout: ParamLayout, chains: Vec<Vec<Vec<f64>>>, config: SamplerConfig) -> Self {
        PosteriorSamples {
            layout,
            chains,
            config,
        }
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn draws_per_chain(&self) -> usize {
        self.chains.first().map_or(0, |c| c.first().map_or(0, |p| p.len()))
    }

    pub fn n_draws(&self) -> usize {
        self.chains
            .iter()
            .map(|c| c.first().map_or(0, |p| p.len()))
            .sum()
    }

    pub fn n_params(&self) -> usize {
        self.layout.n_params()
    }

    /// Draws of one column within one chain.
    pub fn column(&self, chain: usize, param: usize) -> &[f64] {
        &self.chains[chain][param]
    }

    /// All chains' draws of one column, concatenated in chain order.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_draws());
        for c in &self.chains {
            out.extend_from_slice(&c[param]);
        }
        out
    }

    /// Pooled draws of a named scalar block.
    pub fn pooled_by_name(&self, name: &str) -> Option<Vec<f64>> {
        let r = self.layout.block_range(name)?;
        Some(self.pooled(r.start))
    }

    /// Value of column `param` at global draw index (chains concatenated).
    fn at(&self, param: usize, draw: usize) -> f64 {
        let mut d = draw;
        for c in &self.chains {
            let n = c[param].len();
            if d < n {
                return c[param][d];
            }
            d -= n;
        }
        panic!("draw index out of range");
    }

    fn gather(&self, range: std::ops::Range<usize>, draw: usize) -> Vec<f64> {
        range.map(|p| self.at(p, draw)).collect()
    }

    pub fn check_matches(&self, spec: &ModelSpec) -> Result<(), PredictError> {
        let expect = ParamLayout::for_spec(spec);
        if expect == self.layout {
            Ok(())
        } else {
            Err(PredictError::LayoutMismatch(format!(
                "store has {} parameters, model wants {}",
                self.layout.n_params(),
                expect.n_params()
            )))
        }
    }
}

/// Which latent component to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    /// The full linear predictor: intercept + regression part + residual.
    Eta,
    /// The residual spatial field alone.
    Residual,
    /// One latent predictor field.
    Predictor(usize),
    /// The regression part sum_j beta_j V_j (the component the observed
    /// predictors explain).
    Regression,
}

/// Posterior draws of a predicted quantity: `n_draws x n_targets`,
/// draw-major.
#[derive(Clone, Debug)]
pub struct DrawMatrix {
    pub n_draws: usize,
    pub n_targets: usize,
    data: Vec<f64>,
}

impl DrawMatrix {
    pub fn at(&self, draw: usize, target: usize) -> f64 {
        self.data[draw * self.n_targets + target]
    }

    pub fn row(&self, draw: usize) -> &[f64] {
        &self.data[draw * self.n_targets..(draw + 1) * self.n_targets]
    }

    /// All draws of one target.
    pub fn target_draws(&self, target: usize) -> Vec<f64> {
        (0..self.n_draws).map(|d| self.at(d, target)).collect()
    }
}

/// Posterior draws of the linear predictor at the targets.
pub fn predict_eta(
    samples: &PosteriorSamples,
    spec: &ModelSpec,
    targets: &[SupportGeometry],
) -> Result<DrawMatrix, PredictError> {
    predict_field(samples, spec, FieldKind::Eta, targets)
}

/// Posterior draws of one latent component at the targets.
pub fn predict_field(
    samples: &PosteriorSamples,
    spec: &ModelSpec,
    field: FieldKind,
    targets: &[SupportGeometry],
) -> Result<DrawMatrix, PredictError> {
    samples.check_matches(spec)?;
    let n_draws = samples.n_draws();
    if n_draws == 0 {
        return Err(PredictError::NoDraws);
    }
    let n_targets = targets.len();
    // sparse design rows per target, per needed field
    let need_w = matches!(field, FieldKind::Eta | FieldKind::Residual);
    let rows_w: Option<Vec<Vec<(u32, f64)>>> = if need_w {
        Some(
            targets
                .iter()
                .map(|s| spec.basis_w.design_row(s))
                .collect::<Result<_, _>>()
                .map_err(ModelError::from)?,
        )
    } else {
        None
    };
    let needed_js: Vec<usize> = match field {
        FieldKind::Eta | FieldKind::Regression => (0..spec.n_predictors()).collect(),
        FieldKind::Predictor(j) => vec![j],
        FieldKind::Residual => vec![],
    };
    let mut rows_v = Vec::new();
    for &j in &needed_js {
        let rows: Vec<Vec<(u32, f64)>> = targets
            .iter()
            .map(|s| spec.basis_v[j].design_row(s))
            .collect::<Result<_, _>>()
            .map_err(ModelError::from)?;
        rows_v.push(rows);
    }

    let range_w = samples.layout.block_range("delta_w").unwrap();
    let ranges_v: Vec<std::ops::Range<usize>> = needed_js
        .iter()
        .map(|&j| {
            samples
                .layout
                .block_range(&format!("delta_v_{}", spec.predictor_id(j)))
                .unwrap()
        })
        .collect();

    let mut data = vec![0.0; n_draws * n_targets];
    for draw in 0..n_draws {
        let out = &mut data[draw * n_targets..(draw + 1) * n_targets];
        if matches!(field, FieldKind::Eta) {
            let beta0 = samples.at(0, draw);
            out.iter_mut().for_each(|o| *o = beta0);
        }
        if let Some(rows) = &rows_w {
            let delta_w = samples.gather(range_w.clone(), draw);
            for (t, row) in rows.iter().enumerate() {
                let mut acc = 0.0;
                for &(c, v) in row {
                    acc += v * delta_w[c as usize];
                }
                out[t] += acc;
            }
        }
        for (pos, &j) in needed_js.iter().enumerate() {
            let scale = match field {
                FieldKind::Predictor(_) => 1.0,
                _ => samples.at(spec.beta_col(j), draw),
            };
            if scale == 0.0 {
                continue;
            }
            let delta = samples.gather(ranges_v[pos].clone(), draw);
            for (t, row) in rows_v[pos].iter().enumerate() {
                let mut acc = 0.0;
                for &(c, v) in row {
                    acc += v * delta[c as usize];
                }
                out[t] += scale * acc;
            }
        }
    }
    Ok(DrawMatrix {
        n_draws,
        n_targets,
        data,
    })
}

/// Posterior probability that the latent surface exceeds the known truth
/// at each target: the fraction of draws above `truth[t]`.
pub fn prob_overprediction(
    samples: &PosteriorSamples,
    spec: &ModelSpec,
    truth: &[f64],
    targets: &[SupportGeometry],
) -> Result<Vec<f64>, PredictError> {
    if truth.len() != targets.len() {
        return Err(PredictError::TruthLength {
            expected: targets.len(),
            got: truth.len(),
        });
    }
    let eta = predict_eta(samples, spec, targets)?;
    let mut p = vec![0.0; targets.len()];
    for draw in 0..eta.n_draws {
        let row = eta.row(draw);
        for (t, &v) in row.iter().enumerate() {
            if v > truth[t] {
                p[t] += 1.0;
            }
        }
    }
    for v in &mut p {
        *v /= eta.n_draws as f64;
    }
    Ok(p)
}

/// Posterior predictive success probability of a Bernoulli model at each
/// target: per draw, the noise integrates to Phi(eta / sigma_y) with the
/// reliable source's noise scale; probabilities average over draws.
pub fn predict_success_prob(
    samples: &PosteriorSamples,
    spec: &ModelSpec,
    targets: &[SupportGeometry],
) -> Result<Vec<f64>, PredictError> {
    use statrs::distribution::ContinuousCDF;
    let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
    let reliable = (0..spec.n_responses())
        .find(|&k| spec.bias_col(k).is_none())
        .expect("one reliable source");
    let sig_range = samples
        .layout
        .block_range(&format!("sigma2_y_{}", spec.response_id(reliable)))
        .unwrap();
    let eta = predict_eta(samples, spec, targets)?;
    let mut p = vec![0.0; targets.len()];
    for draw in 0..eta.n_draws {
        let sd = samples.at(sig_range.start, draw).sqrt();
        for (t, &v) in eta.row(draw).iter().enumerate() {
            p[t] += normal.cdf(v / sd);
        }
    }
    for v in &mut p {
        *v /= eta.n_draws as f64;
    }
    let _ = spec
        .response_family(reliable) == Family::BernoulliProbit;
    Ok(p)
}

/// Posterior summary of one scalar's draws.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
}

/// Linear interpolation of order statistics (the common type-7 rule):
/// index h = (n-1)p on the sorted sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[n - 1]
    }
}

/// Mean, standard deviation, and central quantiles of a draw vector.
pub fn summarize(draws: &[f64]) -> Summary {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = if draws.len() > 1 {
        draws.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Summary {
        mean,
        sd: var.sqrt(),
        q025: quantile(&sorted, 0.025),
        median: quantile(&sorted, 0.5),
        q975: quantile(&sorted, 0.975),
    }
}

/// Per-target summaries of a prediction.
pub fn summarize_targets(draws: &DrawMatrix) -> Vec<Summary> {
    (0..draws.n_targets)
        .map(|t| summarize(&draws.target_draws(t)))
        .collect()
}
