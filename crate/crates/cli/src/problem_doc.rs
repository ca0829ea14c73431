//! JSON problem documents.
//!
//! ```json
//! {
//!   "smoothness": 2.0,
//!   "strong_convexity": 0.5,
//!   "initial_point": [0.0, 0.0],
//!   "individuals": [ { "a": [[2.0, 0.0], [0.0, 0.5]], "b": [1.0, 0.0], "c": 0.0 } ]
//! }
//! ```
//!
//! Each individual is `½ wᵀAw − bᵀw + c` with `A` given row by row.
//! Identical entries become shared copies.

use std::collections::BTreeMap;
use std::sync::Arc;

use indexfree::problems::{FiniteSumProblem, QuadraticIndividual};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndividualDoc {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDoc {
    pub smoothness: f64,
    pub strong_convexity: f64,
    pub initial_point: Vec<f64>,
    pub individuals: Vec<IndividualDoc>,
}

impl ProblemDoc {
    pub fn from_problem(problem: &FiniteSumProblem) -> Self {
        let individuals = problem
            .individuals()
            .iter()
            .map(|f| IndividualDoc {
                a: f.hessian().row_iter().map(|r| r.iter().copied().collect()).collect(),
                b: f.linear().iter().copied().collect(),
                c: f.offset(),
            })
            .collect();
        ProblemDoc {
            smoothness: problem.smoothness(),
            strong_convexity: problem.strong_convexity(),
            initial_point: problem.initial_point().iter().copied().collect(),
            individuals,
        }
    }

    pub fn to_problem(&self) -> Result<FiniteSumProblem, CliError> {
        let dim = self.initial_point.len();
        let mut shared: BTreeMap<Vec<u64>, Arc<QuadraticIndividual>> = BTreeMap::new();
        let mut individuals = Vec::with_capacity(self.individuals.len());
        for (i, doc) in self.individuals.iter().enumerate() {
            if doc.b.len() != dim || doc.a.len() != dim || doc.a.iter().any(|row| row.len() != dim) {
                return Err(CliError::Config(format!("individual {i}: expected dimension {dim}")));
            }
            let a = DMatrix::from_fn(dim, dim, |r, c| doc.a[r][c]);
            let f = QuadraticIndividual::new(a, DVector::from_column_slice(&doc.b), doc.c);
            individuals.push(shared.entry(f.parameter_record()).or_insert_with(|| Arc::new(f)).clone());
        }
        FiniteSumProblem::new(
            individuals,
            self.smoothness,
            self.strong_convexity,
            DVector::from_column_slice(&self.initial_point),
        )
        .map_err(|e| CliError::Config(format!("problem document: {e}")))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("problem document: {e}")))
    }
}
