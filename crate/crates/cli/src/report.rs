use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use ascn::network::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub final_loss: f64,
    /// Accuracy in percent, one per test set.
    pub accuracies: Vec<f64>,
}

/// Per-seed, per-test-set accuracies with column means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainReport {
    pub tests: Vec<String>,
    pub seeds: Vec<SeedRow>,
    pub mean: Vec<f64>,
    pub epochs: usize,
    pub model: ModelConfig,
}

impl CrossDomainReport {
    pub fn new(tests: Vec<String>, seeds: Vec<SeedRow>, epochs: usize, model: ModelConfig) -> Self {
        let mean = (0..tests.len())
            .map(|j| seeds.iter().map(|r| r.accuracies[j]).sum::<f64>() / seeds.len().max(1) as f64)
            .collect();
        CrossDomainReport {
            tests,
            seeds,
            mean,
            epochs,
            model,
        }
    }

    /// Accuracies with one decimal, one row per seed plus a mean row.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| seed |");
        for t in &self.tests {
            write!(s, " {t} |").unwrap();
        }
        s.push_str("\n|---:|");
        s.push_str(&"---:|".repeat(self.tests.len()));
        s.push('\n');
        for row in &self.seeds {
            write!(s, "| {} |", row.seed).unwrap();
            for a in &row.accuracies {
                write!(s, " {a:.1} |").unwrap();
            }
            s.push('\n');
        }
        s.push_str("| mean |");
        for a in &self.mean {
            write!(s, " {a:.1} |").unwrap();
        }
        s.push('\n');
        s
    }
}
