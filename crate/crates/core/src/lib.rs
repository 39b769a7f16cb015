//! Online clustering of dueling bandits.
//!
//! Users arrive one at a time, are shown a pair of arms and report which one they
//! prefer under a Bradley-Terry-Luce model. The algorithms here keep a graph over
//! users, prune edges between users whose estimated preference parameters drift
//! apart, and pool the feedback of each connected component:
//!
//! * [`coldb`]: linear preference vectors fit by logistic MLE.
//! * [`condb`]: ReLU networks with neural-tangent features for exploration.
//!
//! [`harness`] runs seeded regret experiments over synthetic or file-backed
//! environments from [`env`].

pub mod coldb;
pub mod condb;
pub mod env;
pub mod error;
pub mod glm;
pub mod graph;
pub mod harness;
pub mod neural;

pub use error::{Error, Result};

/// `mu'(2)`: the link-derivative floor when every reward gap lies in `[-2, 2]`.
pub const DEFAULT_KAPPA_MU: f64 = 0.104_993_585_403_506_52;

#[cfg(test)]
mod tests {
    #[test]
    fn default_kappa_is_the_logistic_floor_at_two() {
        assert!((super::DEFAULT_KAPPA_MU - crate::glm::kappa_mu_bound(2.0)).abs() < 1e-16);
    }
}
