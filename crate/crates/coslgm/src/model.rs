//! Assembly of the three-layer hierarchical model: a latent Gaussian layer
//! (linear predictor built from latent predictor fields and a residual
//! field), a change-of-support layer (design matrices projecting each field
//! onto the observed sampling units), and an observation layer (per-source
//! bias and noise). The built [`ModelSpec`] owns every design matrix and
//! Gram product the Gibbs sweep reuses, and is immutable afterwards.

use thiserror::Error;

use crate::basis::{BasisError, SupportGeometry, TensorBasis};
use crate::gmrf::{GmrfError, GmrfPrior};
use crate::linalg::{SparseRowMat, SymBandMat};

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("model needs at least one response source")]
    NoResponses,
    #[error("no response source is marked reliable (bias fixed to zero)")]
    NoReliableSource,
    #[error("more than one response source is marked reliable")]
    MultipleReliableSources,
    #[error("duplicate source id `{0}`")]
    DuplicateId(String),
    #[error("source `{source_id}`: expected {expected} values for {expected} supports, got {got}")]
    ValueCount {
        source_id: String,
        expected: usize,
        got: usize,
    },
    #[error("source `{source_id}`, row {row}: value {value} is not finite")]
    NonFiniteValue {
        source_id: String,
        row: usize,
        value: f64,
    },
    #[error("source `{source_id}`, row {row}: Bernoulli values must be 0 or 1, got {value}")]
    NotBinary {
        source_id: String,
        row: usize,
        value: f64,
    },
    #[error(
        "source `{source_id}`, row {row}: variance function {vfn:?} needs a rectangle with area > {min_area} (or an explicit area hint for point supports)"
    )]
    VarianceFnArea {
        source_id: String,
        row: usize,
        vfn: VarianceFn,
        min_area: f64,
    },
    #[error("source `{source_id}`: {inner}")]
    SupportOutOfDomain { source_id: String, inner: BasisError },
    #[error("threshold gamma must be 0 in a Bernoulli model, got {0}")]
    GammaNotZero(f64),
    #[error("kappa_w must be fixed (not sampled) in a Bernoulli model")]
    KappaWSampledInBernoulli,
    #[error("hyperparameter {name} must be positive, got {value}")]
    InvalidHyper { name: &'static str, value: f64 },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Gmrf(#[from] GmrfError),
}

/// Observation family of a response source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Gaussian,
    BernoulliProbit,
}

/// Per-unit noise variance multiplier: Var(eps_i) = sigma^2 * D_ii with
/// D_ii = 1, log|c_i|, or 1/|c_i|.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceFn {
    Constant,
    LogArea,
    InverseArea,
}

impl VarianceFn {
    /// D_ii given a unit's area. Point supports must supply the area of the
    /// unit they stand in for (centroid-based model variants).
    fn d(self, area: f64) -> f64 {
        match self {
            VarianceFn::Constant => 1.0,
            VarianceFn::LogArea => area.ln(),
            VarianceFn::InverseArea => 1.0 / area,
        }
    }
}

/// One response data source: sampling units, observed values, and the
/// observation-layer knobs (bias identifiability, noise shape).
#[derive(Clone, Debug)]
pub struct ResponseSource {
    pub id: String,
    pub family: Family,
    pub supports: Vec<SupportGeometry>,
    pub values: Vec<f64>,
    /// The reliable source has its mean bias fixed at zero; all other
    /// sources get a bias column interpreted relative to it.
    pub bias_fixed_zero: bool,
    pub variance_fn: VarianceFn,
    /// Unit areas backing LogArea/InverseArea when `supports` are points
    /// standing in for aggregated units (centroid model variants).
    pub area_hint: Option<Vec<f64>>,
}

impl ResponseSource {
    /// The centroid variant of this source: every rectangle support is
    /// replaced by the point at its centroid, keeping the original areas
    /// as the variance-function hint.
    pub fn with_centroid_supports(&self) -> ResponseSource {
        let areas = self.supports.iter().map(|s| s.area()).collect();
        ResponseSource {
            supports: self.supports.iter().map(|s| s.to_centroid_point()).collect(),
            area_hint: Some(areas),
            ..self.clone()
        }
    }
}

/// One predictor data source observed with noise on its own sampling units.
#[derive(Clone, Debug)]
pub struct PredictorSource {
    pub id: String,
    pub supports: Vec<SupportGeometry>,
    pub values: Vec<f64>,
    pub variance_fn: VarianceFn,
    pub area_hint: Option<Vec<f64>>,
}

/// Basis size for one latent field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FieldConfig {
    pub q1: usize,
    pub q2: usize,
    pub order: usize,
}

impl FieldConfig {
    pub fn q(&self) -> usize {
        self.q1 * self.q2
    }
}

/// How the residual-field scale parameter is handled.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaW {
    /// Sampled with the shared Gamma prior (Gaussian models).
    Sampled,
    /// Fixed at a given value.
    Fixed(f64),
    /// Fixed at the value making the average marginal prior variance of the
    /// residual field approximately one over a probe grid (Bernoulli
    /// identifiability).
    UnitVariance,
}

/// Prior hyperparameters. Variances are inverse-gamma (a, b), GMRF scales
/// are gamma (a, b), coefficient priors are zero-mean normals with the
/// given variances.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct Priors {
    pub sigma_beta2: f64,
    pub sigma_alpha2: f64,
    pub a_sigma_y: f64,
    pub b_sigma_y: f64,
    pub a_sigma_x: f64,
    pub b_sigma_x: f64,
    pub a_kappa: f64,
    pub b_kappa: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            sigma_beta2: 100.0,
            sigma_alpha2: 100.0,
            a_sigma_y: 0.01,
            b_sigma_y: 0.01,
            a_sigma_x: 0.01,
            b_sigma_x: 0.01,
            a_kappa: 0.01,
            b_kappa: 0.01,
        }
    }
}

/// Everything needed to build a [`ModelSpec`] besides the data sources.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub domain: ((f64, f64), (f64, f64)),
    pub field_w: FieldConfig,
    /// Basis for the latent predictor fields; defaults to `field_w`.
    pub field_v: Option<FieldConfig>,
    pub priors: Priors,
    pub kappa_w: KappaW,
    /// Binarisation threshold; identifiability fixes it at zero.
    pub gamma: f64,
}

struct BuiltResponse {
    id: String,
    family: Family,
    supports: Vec<SupportGeometry>,
    y: Vec<f64>,
    bias_col: Option<usize>,
    d_inv: Vec<f64>,
    design_w: SparseRowMat,
    design_v: Vec<SparseRowMat>,
    gram_w: SymBandMat,
    gram_v: Vec<SymBandMat>,
}

struct BuiltPredictor {
    id: String,
    supports: Vec<SupportGeometry>,
    x: Vec<f64>,
    d_inv: Vec<f64>,
    design: SparseRowMat,
    gram: SymBandMat,
}

/// The assembled hierarchical model. Immutable after [`build`]; safe to
/// share across parallel chains.
pub struct ModelSpec {
    pub basis_w: TensorBasis,
    pub basis_v: Vec<TensorBasis>,
    prior_w: GmrfPrior,
    prior_v: Vec<GmrfPrior>,
    kappa_w_fixed: bool,
    responses: Vec<BuiltResponse>,
    predictors: Vec<BuiltPredictor>,
    pub priors: Priors,
    beta_dim: usize,
    env_w: usize,
    env_v: Vec<usize>,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("q_w", &self.basis_w.len())
            .field("n_responses", &self.responses.len())
            .field("n_predictors", &self.predictors.len())
            .field("beta_dim", &self.beta_dim)
            .field("kappa_w_fixed", &self.kappa_w_fixed)
            .finish_non_exhaustive()
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidHyper { name, value })
    }
}

fn d_inv_for(
    id: &str,
    vfn: VarianceFn,
    supports: &[SupportGeometry],
    area_hint: Option<&Vec<f64>>,
) -> Result<Vec<f64>, ModelError> {
    let min_area = match vfn {
        VarianceFn::Constant => return Ok(vec![1.0; supports.len()]),
        VarianceFn::LogArea => 1.0,
        VarianceFn::InverseArea => 0.0,
    };
    supports
        .iter()
        .enumerate()
        .map(|(row, s)| {
            let area = match s {
                SupportGeometry::Rect { .. } => s.area(),
                SupportGeometry::Point { .. } => area_hint
                    .and_then(|h| h.get(row).copied())
                    .unwrap_or(0.0),
            };
            if area > min_area {
                Ok(1.0 / vfn.d(area))
            } else {
                Err(ModelError::VarianceFnArea {
                    source_id: id.to_string(),
                    row,
                    vfn,
                    min_area,
                })
            }
        })
        .collect()
}

fn check_values(
    id: &str,
    family: Option<Family>,
    supports_len: usize,
    values: &[f64],
) -> Result<(), ModelError> {
    if values.len() != supports_len {
        return Err(ModelError::ValueCount {
            source_id: id.to_string(),
            expected: supports_len,
            got: values.len(),
        });
    }
    for (row, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(ModelError::NonFiniteValue {
                source_id: id.to_string(),
                row,
                value: v,
            });
        }
        if family == Some(Family::BernoulliProbit) && v != 0.0 && v != 1.0 {
            return Err(ModelError::NotBinary {
                source_id: id.to_string(),
                row,
                value: v,
            });
        }
    }
    Ok(())
}

/// Build the model: validate sources, construct bases and GMRF priors,
/// and precompute every design matrix and Gram product the sampler needs.
pub fn build(
    config: &ModelConfig,
    responses: &[ResponseSource],
    predictors: &[PredictorSource],
) -> Result<ModelSpec, ModelError> {
    if responses.is_empty() {
        return Err(ModelError::NoResponses);
    }
    let n_reliable = responses.iter().filter(|r| r.bias_fixed_zero).count();
    if n_reliable == 0 {
        return Err(ModelError::NoReliableSource);
    }
    if n_reliable > 1 {
        return Err(ModelError::MultipleReliableSources);
    }
    let mut seen = std::collections::BTreeSet::new();
    for id in responses
        .iter()
        .map(|r| &r.id)
        .chain(predictors.iter().map(|p| &p.id))
    {
        if !seen.insert(id.clone()) {
            return Err(ModelError::DuplicateId(id.clone()));
        }
    }
    let pri = &config.priors;
    check_positive("sigma_beta2", pri.sigma_beta2)?;
    check_positive("sigma_alpha2", pri.sigma_alpha2)?;
    check_positive("a_sigma_y", pri.a_sigma_y)?;
    check_positive("b_sigma_y", pri.b_sigma_y)?;
    check_positive("a_sigma_x", pri.a_sigma_x)?;
    check_positive("b_sigma_x", pri.b_sigma_x)?;
    check_positive("a_kappa", pri.a_kappa)?;
    check_positive("b_kappa", pri.b_kappa)?;

    let has_bernoulli = responses.iter().any(|r| r.family == Family::BernoulliProbit);
    if has_bernoulli {
        if config.gamma != 0.0 {
            return Err(ModelError::GammaNotZero(config.gamma));
        }
        if config.kappa_w == KappaW::Sampled {
            return Err(ModelError::KappaWSampledInBernoulli);
        }
    }

    let make_basis = |fc: &FieldConfig| -> Result<TensorBasis, ModelError> {
        let order1 = fc.order.min(fc.q1);
        let order2 = fc.order.min(fc.q2);
        let b1 = crate::basis::KnotVector::make_clamped_knots(
            config.domain.0,
            fc.q1 - order1,
            order1,
        )?;
        let b2 = crate::basis::KnotVector::make_clamped_knots(
            config.domain.1,
            fc.q2 - order2,
            order2,
        )?;
        Ok(TensorBasis::new(b1, b2))
    };
    let basis_w = make_basis(&config.field_w)?;
    let field_v = config.field_v.unwrap_or(config.field_w);
    let basis_v: Vec<TensorBasis> = (0..predictors.len())
        .map(|_| make_basis(&field_v))
        .collect::<Result<_, _>>()?;

    let kappa_w = match config.kappa_w {
        KappaW::Sampled => 1.0,
        KappaW::Fixed(v) => {
            check_positive("kappa_w", v)?;
            v
        }
        KappaW::UnitVariance => unit_variance_kappa(&basis_w)?,
    };
    let (qw1, qw2) = basis_w.dims();
    let prior_w = GmrfPrior::grid(qw1, qw2, kappa_w)?;
    let prior_v: Vec<GmrfPrior> = basis_v
        .iter()
        .map(|b| {
            let (q1, q2) = b.dims();
            GmrfPrior::grid(q1, q2, 1.0)
        })
        .collect::<Result<_, _>>()?;

    // beta* layout: [beta0 | bias columns for non-reliable sources | beta_j]
    let n_bias = responses.len() - 1;
    let beta_dim = 1 + n_bias + predictors.len();
    let mut next_bias = 1usize;

    let mut built_responses = Vec::with_capacity(responses.len());
    for r in responses {
        check_values(&r.id, Some(r.family), r.supports.len(), &r.values)?;
        let d_inv = d_inv_for(&r.id, r.variance_fn, &r.supports, r.area_hint.as_ref())?;
        let design_w = basis_w.design_matrix(&r.supports).map_err(|e| {
            ModelError::SupportOutOfDomain {
                source_id: r.id.clone(),
                inner: e,
            }
        })?;
        let design_v: Vec<SparseRowMat> = basis_v
            .iter()
            .map(|b| {
                b.design_matrix(&r.supports)
                    .map_err(|e| ModelError::SupportOutOfDomain {
                        source_id: r.id.clone(),
                        inner: e,
                    })
            })
            .collect::<Result<_, _>>()?;
        let gram_w = design_w.gram(&d_inv);
        let gram_v: Vec<SymBandMat> = design_v.iter().map(|b| b.gram(&d_inv)).collect();
        let bias_col = if r.bias_fixed_zero {
            None
        } else {
            let c = next_bias;
            next_bias += 1;
            Some(c)
        };
        built_responses.push(BuiltResponse {
            id: r.id.clone(),
            family: r.family,
            supports: r.supports.clone(),
            y: r.values.clone(),
            bias_col,
            d_inv,
            design_w,
            design_v,
            gram_w,
            gram_v,
        });
    }

    let mut built_predictors = Vec::with_capacity(predictors.len());
    for (j, p) in predictors.iter().enumerate() {
        check_values(&p.id, None, p.supports.len(), &p.values)?;
        let d_inv = d_inv_for(&p.id, p.variance_fn, &p.supports, p.area_hint.as_ref())?;
        let design = basis_v[j].design_matrix(&p.supports).map_err(|e| {
            ModelError::SupportOutOfDomain {
                source_id: p.id.clone(),
                inner: e,
            }
        })?;
        let gram = design.gram(&d_inv);
        built_predictors.push(BuiltPredictor {
            id: p.id.clone(),
            supports: p.supports.clone(),
            x: p.values.clone(),
            d_inv,
            design,
            gram,
        });
    }

    let env_w = built_responses
        .iter()
        .map(|r| r.gram_w.bandwidth())
        .chain(std::iter::once(prior_w.structure().bandwidth()))
        .max()
        .unwrap();
    let env_v: Vec<usize> = (0..predictors.len())
        .map(|j| {
            built_responses
                .iter()
                .map(|r| r.gram_v[j].bandwidth())
                .chain([
                    prior_v[j].structure().bandwidth(),
                    built_predictors[j].gram.bandwidth(),
                ])
                .max()
                .unwrap()
        })
        .collect();

    Ok(ModelSpec {
        basis_w,
        basis_v,
        prior_w,
        prior_v,
        kappa_w_fixed: config.kappa_w != KappaW::Sampled,
        responses: built_responses,
        predictors: built_predictors,
        priors: *pri,
        beta_dim,
        env_w,
        env_v,
    })
}

/// The scale parameter under which the average marginal prior variance of
/// the field over a probe grid of interior points is one. Uses the dense
/// pseudo-inverse of the structure matrix, computed once at build.
pub fn unit_variance_kappa(basis: &TensorBasis) -> Result<f64, ModelError> {
    let (q1, q2) = basis.dims();
    let p = crate::gmrf::structure_matrix_grid(q1, q2)?;
    let pinv = dense_pseudo_inverse(&p);
    let ((lo1, hi1), (lo2, hi2)) = basis.domain();
    let n_probe = 12usize;
    let mut acc = 0.0;
    for a in 0..n_probe {
        for b in 0..n_probe {
            let s1 = lo1 + (hi1 - lo1) * (a as f64 + 0.5) / n_probe as f64;
            let s2 = lo2 + (hi2 - lo2) * (b as f64 + 0.5) / n_probe as f64;
            let row = basis.design_row(&SupportGeometry::point(s1, s2))?;
            let mut v = 0.0;
            for &(ca, va) in &row {
                for &(cb, vb) in &row {
                    v += va * vb * pinv[(ca as usize, cb as usize)];
                }
            }
            acc += v;
        }
    }
    let mean_var = acc / (n_probe * n_probe) as f64;
    if mean_var > 0.0 {
        Ok(mean_var)
    } else {
        // a 1x1 field is a degenerate constant; any positive scale works
        Ok(1.0)
    }
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD banded matrix via a
/// dense eigendecomposition. Build-time calibration and test oracles only.
pub fn dense_pseudo_inverse(m: &SymBandMat) -> nalgebra::DMatrix<f64> {
    let dense = m.to_dense();
    let n = dense.nrows();
    let eig = dense.symmetric_eigen();
    let tol = 1e-9 * eig.eigenvalues.amax().max(1.0);
    let mut out = nalgebra::DMatrix::zeros(n, n);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > tol {
            let v = eig.eigenvectors.column(i);
            out += v * v.transpose() / l;
        }
    }
    out
}

impl ModelSpec {
    pub fn n_responses(&self) -> usize {
        self.responses.len()
    }

    pub fn n_predictors(&self) -> usize {
        self.predictors.len()
    }

    pub fn has_bernoulli(&self) -> bool {
        self.responses
            .iter()
            .any(|r| r.family == Family::BernoulliProbit)
    }

    pub fn kappa_w_fixed(&self) -> bool {
        self.kappa_w_fixed
    }

    pub fn prior_w(&self) -> &GmrfPrior {
        &self.prior_w
    }

    pub fn prior_v(&self, j: usize) -> &GmrfPrior {
        &self.prior_v[j]
    }

    pub fn beta_dim(&self) -> usize {
        self.beta_dim
    }

    /// Column of beta* holding the bias of response source k (None for the
    /// reliable source).
    pub fn bias_col(&self, k: usize) -> Option<usize> {
        self.responses[k].bias_col
    }

    /// Column of beta* holding the regression coefficient of predictor j.
    pub fn beta_col(&self, j: usize) -> usize {
        1 + (self.responses.len() - 1) + j
    }

    pub fn beta_labels(&self) -> Vec<String> {
        let mut labels = vec!["beta0".to_string()];
        for r in &self.responses {
            if r.bias_col.is_some() {
                labels.push(format!("bias_{}", r.id));
            }
        }
        for p in &self.predictors {
            labels.push(format!("beta_{}", p.id));
        }
        labels
    }

    pub fn response_id(&self, k: usize) -> &str {
        &self.responses[k].id
    }

    pub fn predictor_id(&self, j: usize) -> &str {
        &self.predictors[j].id
    }

    pub fn response_family(&self, k: usize) -> Family {
        self.responses[k].family
    }

    pub fn response_values(&self, k: usize) -> &[f64] {
        &self.responses[k].y
    }

    pub fn response_supports(&self, k: usize) -> &[SupportGeometry] {
        &self.responses[k].supports
    }

    pub fn predictor_values(&self, j: usize) -> &[f64] {
        &self.predictors[j].x
    }

    pub fn predictor_supports(&self, j: usize) -> &[SupportGeometry] {
        &self.predictors[j].supports
    }

    pub fn response_d_inv(&self, k: usize) -> &[f64] {
        &self.responses[k].d_inv
    }

    pub fn predictor_d_inv(&self, j: usize) -> &[f64] {
        &self.predictors[j].d_inv
    }

    /// Cached B_w rows on the supports of response source k.
    pub fn design_w_y(&self, k: usize) -> &SparseRowMat {
        &self.responses[k].design_w
    }

    /// Cached B_j rows on the supports of response source k.
    pub fn design_v_y(&self, k: usize, j: usize) -> &SparseRowMat {
        &self.responses[k].design_v[j]
    }

    /// Cached B_j rows on the supports of predictor source j.
    pub fn design_v_x(&self, j: usize) -> &SparseRowMat {
        &self.predictors[j].design
    }

    pub fn gram_w_y(&self, k: usize) -> &SymBandMat {
        &self.responses[k].gram_w
    }

    pub fn gram_v_y(&self, k: usize, j: usize) -> &SymBandMat {
        &self.responses[k].gram_v[j]
    }

    pub fn gram_v_x(&self, j: usize) -> &SymBandMat {
        &self.predictors[j].gram
    }

    /// Band envelope of the residual-field conditional precision.
    pub fn envelope_w(&self) -> usize {
        self.env_w
    }

    /// Band envelope of predictor field j's conditional precision.
    pub fn envelope_v(&self, j: usize) -> usize {
        self.env_v[j]
    }

    /// The linear predictor eta = beta0 + sum_j beta_j B_j(supports) d_vj
    /// + B_w(supports) d_w on arbitrary supports. Source biases are part of
    /// the observation layer, not of eta.
    pub fn latent_eta(
        &self,
        beta: &[f64],
        delta_w: &[f64],
        delta_v: &[Vec<f64>],
        supports: &[SupportGeometry],
    ) -> Result<Vec<f64>, ModelError> {
        assert_eq!(beta.len(), self.beta_dim, "beta* dimension");
        assert_eq!(delta_w.len(), self.basis_w.len(), "delta_w dimension");
        assert_eq!(delta_v.len(), self.predictors.len(), "one field per predictor");
        let mut eta = vec![beta[0]; supports.len()];
        for (i, s) in supports.iter().enumerate() {
            let row_w = self.basis_w.design_row(s)?;
            for &(c, v) in &row_w {
                eta[i] += v * delta_w[c as usize];
            }
            for j in 0..self.predictors.len() {
                assert_eq!(delta_v[j].len(), self.basis_v[j].len());
                let bj = beta[self.beta_col(j)];
                if bj == 0.0 {
                    continue;
                }
                let row = self.basis_v[j].design_row(s)?;
                let mut f = 0.0;
                for &(c, v) in &row {
                    f += v * delta_v[j][c as usize];
                }
                eta[i] += bj * f;
            }
        }
        Ok(eta)
    }
}
