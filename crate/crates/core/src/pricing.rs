//! The cost function and the budget admission gate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Job, PricingParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PricingError {
    #[error("deadline must be positive, got {0}")]
    NonPositiveDeadline(f64),
    #[error("estimate must be positive, got {0}")]
    NonPositiveEstimate(f64),
}

/// Outcome of pricing a job against its budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostQuote {
    pub cost: f64,
    pub accepted: bool,
    /// `cost - budget` when rejected, zero otherwise.
    pub shortfall: f64,
}

/// `alpha * estimate + beta * estimate / deadline`.
///
/// The second term charges for urgency: for a fixed estimate, a longer
/// deadline is cheaper.
pub fn cost(estimate: f64, deadline: f64, params: &PricingParams) -> Result<f64, PricingError> {
    if !(deadline > 0.0) {
        return Err(PricingError::NonPositiveDeadline(deadline));
    }
    if !(estimate > 0.0) {
        return Err(PricingError::NonPositiveEstimate(estimate));
    }
    Ok(params.alpha * estimate + params.beta * (estimate / deadline))
}

/// Prices `job` on a node of `node_capacity` MIPS. A cost equal to the budget
/// is accepted.
pub fn admit_budget(
    job: &Job,
    node_capacity: f64,
    params: &PricingParams,
) -> Result<CostQuote, PricingError> {
    let cost = cost(job.estimate(node_capacity), job.deadline, params)?;
    let accepted = cost <= job.budget;
    Ok(CostQuote {
        cost,
        accepted,
        shortfall: if accepted { 0.0 } else { cost - job.budget },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(alpha: f64, beta: f64) -> PricingParams {
        PricingParams::new(alpha, beta).unwrap()
    }

    #[test]
    fn worked_costs() {
        assert_eq!(cost(10.0, 20.0, &params(1.0, 0.0)).unwrap(), 10.0);
        assert_eq!(cost(10.0, 20.0, &params(1.0, 100.0)).unwrap(), 60.0);
        assert_eq!(cost(50.0, 50.0, &params(0.0, 1.0)).unwrap(), 1.0);
    }

    #[test]
    fn zero_deadline_is_a_domain_error() {
        assert_eq!(
            cost(10.0, 0.0, &params(1.0, 1.0)),
            Err(PricingError::NonPositiveDeadline(0.0))
        );
    }

    // E = 10 s at 100 MIPS.
    fn job_with_budget(budget: f64) -> Job {
        Job::new(0, 0.0, 1000.0, 20.0, budget)
    }

    #[test]
    fn budget_boundary_is_inclusive() {
        let q = admit_budget(&job_with_budget(60.0), 100.0, &params(1.0, 100.0)).unwrap();
        assert!(q.accepted);
        assert_eq!(q.cost, 60.0);
        assert_eq!(q.shortfall, 0.0);
    }

    #[test]
    fn budget_shortfall_reported() {
        let q = admit_budget(&job_with_budget(59.0), 100.0, &params(1.0, 100.0)).unwrap();
        assert!(!q.accepted);
        assert_eq!(q.shortfall, 1.0);
    }

    proptest! {
        #[test]
        fn longer_deadline_is_cheaper(e in 0.1f64..1e4, d in 0.1f64..1e4, a in 0.0f64..10.0, b in 0.01f64..1e3) {
            let p = params(a, b);
            prop_assert!(cost(e, d, &p).unwrap() > cost(e, 2.0 * d, &p).unwrap());
        }

        #[test]
        fn quote_is_consistent(e in 0.1f64..200.0, d in 0.1f64..1e3, budget in 0.0f64..1e4) {
            let job = Job::new(0, 0.0, e * 100.0, d, budget);
            let q = admit_budget(&job, 100.0, &params(1.0, 100.0)).unwrap();
            prop_assert_eq!(q.accepted, q.cost <= budget);
            prop_assert!(q.shortfall >= 0.0);
            prop_assert_eq!(q, admit_budget(&job, 100.0, &params(1.0, 100.0)).unwrap());
        }
    }
}
