//! Shared inputs for the criterion benchmarks.

use jcse_core::encoder::{init_params, EncoderParams};
use jcse_core::synthetic::Domain;

/// A 50-group synthetic domain and a freshly initialised encoder over it.
pub fn domain_fixture(dim: usize) -> (Domain, EncoderParams) {
    let domain = Domain::new(50, 7);
    let params = init_params(domain.vocab(), dim, 7).expect("dim >= 2");
    (domain, params)
}
