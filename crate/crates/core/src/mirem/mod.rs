//! Multiple imputation of missing categorical predictors by a ridge-penalized
//! EM over a joint model system: one phenotype equation, sequential trinomial
//! genotype equations, and one missingness equation per missing-prone SNP
//! (plus an optional phenotype-missingness equation).

mod em;
mod evaluator;
mod gibbs;
mod louis;
mod structure;
mod tuning;
mod weights;

pub use em::{
    binary_response, design_matrix, e_step, init_theta, m_step, observed_record,
    penalize_columns, penalty_mask, ridge_em, ridge_em_from, system_penalty, EStep, EmConfig,
    EmFit, EmIterationRecord, EmTrace, EquationFitSummary, MStep,
};
pub use evaluator::{loglik_direct, RecordState, SystemEvaluator};
pub use louis::{
    conditional_score_covariance, louis_from_parts, louis_variance, q_hessian, QHessian,
};
pub use gibbs::gibbs_candidates;
pub use structure::{
    design_width, EqId, ModelStructure, ModelSystem, ParamLayout, Predictor,
};
pub use tuning::{
    default_grid, ebic, ebic_penalty, tune_lambda, EbicReading, LambdaPoint,
    TuneConfig, TuneDiagnostics, TuneMethod,
};
pub use weights::{
    compute_weights, enumerate_completions, normalize_log_weights, truncate_weights,
    ObservedRecord,
};
