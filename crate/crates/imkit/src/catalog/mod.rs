//! Built-in models: Gaussian location and location-scale families with their
//! conditional reductions, the corrupted-Brownian-motion model with its full
//! conditioning pipeline, and the coordinate-form corpus used by the
//! regularity classifier.

pub mod brownian;
pub mod classify_corpus;
mod gaussian;

pub use brownian::{
    brownian_closed_form_invariants, brownian_conditional_im, brownian_conditional_im_fast,
    brownian_conditional_im_with_resolution, brownian_conditioning, brownian_eigensystem,
    brownian_marginal_char_field, brownian_marginal_field, brownian_marginal_field_with_lambdas,
    brownian_marginal_fractions, brownian_q_association, brownian_ratio_conditional,
    brownian_ratio_conditional_fast, brownian_simulate_path, brownian_statistics,
    brownian_v_association, brownian_v_field,
    brownian_xi_posterior, sigma_tridiagonal, BrownianConditioning, BrownianModel, XiPosterior,
};
pub use gaussian::{
    gaussian_location_scale_conditional, gaussian_location_scale_model,
    gaussian_mean_conditional, gaussian_mean_model,
};
