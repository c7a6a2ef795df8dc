//! Self-contained correctness oracles: finite-difference gradient checks,
//! an exact-entropy check of the variational bound on a tiny function
//! space, and environment solvability sweeps.

mod entropy;
mod envs;
mod grads;
#[cfg(test)]
mod tests;

pub use entropy::{
    entropy_oracle, exact_partial_function_entropy, EntropyOracleConfig, EntropyOracleReport, OracleCase,
};
pub use envs::{env_oracle, grid_bfs_len, multiroom_bfs_len, EnvOracleReport};
pub use grads::{gradcheck, GradGroup, GradcheckReport};

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Gradcheck,
    EntropyOracle,
    EnvOracle,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Gradcheck, Suite::EntropyOracle, Suite::EnvOracle];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gradcheck => "gradcheck",
            Self::EntropyOracle => "entropy-oracle",
            Self::EnvOracle => "env-oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Result of one suite as JSON plus its verdict.
#[derive(Clone, Debug)]
pub struct SuiteOutcome {
    pub suite: Suite,
    pub passed: bool,
    pub report: serde_json::Value,
}

pub fn run_suite(suite: Suite, seed: u64) -> SuiteOutcome {
    let (passed, report) = match suite {
        Suite::Gradcheck => {
            let r = gradcheck(seed);
            (r.passed(), serde_json::to_value(&r))
        }
        Suite::EntropyOracle => {
            let r = entropy_oracle(&EntropyOracleConfig::default(), seed);
            (r.passed(), serde_json::to_value(&r))
        }
        Suite::EnvOracle => {
            let r = env_oracle(1000, seed);
            (r.passed(), serde_json::to_value(&r))
        }
    };
    SuiteOutcome {
        suite,
        passed,
        report: report.expect("reports serialize"),
    }
}
