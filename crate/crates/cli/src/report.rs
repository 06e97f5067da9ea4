use serde::{Deserialize, Serialize};

use edgeprompt::pretrain::ModelSpec;
use edgeprompt::prompt::EpochStats;

/// Aggregate of one `tune` invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub strategy: String,
    pub task: String,
    pub shots: usize,
    pub backbone: ModelSpec,
    pub checkpoint_digest: String,
    pub config: ConfigEcho,
    pub groups: Vec<AnchorGroup>,
    pub wall_clock_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub dataset: String,
    pub checkpoint: String,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub readout: String,
    pub slope: f64,
    pub anchors: Vec<usize>,
    pub seeds: Vec<u64>,
}

/// All seeds run with one anchor count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorGroup {
    pub anchors: usize,
    pub runs: Vec<SeedRun>,
    pub mean_test_acc: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std_test_acc: f64,
    pub mean_train_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub prompt_file: Option<String>,
    pub history: Vec<EpochStats>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, std)
}

impl AnchorGroup {
    pub fn new(anchors: usize, runs: Vec<SeedRun>) -> Self {
        let test: Vec<f64> = runs.iter().map(|r| r.test_acc).collect();
        let train: Vec<f64> = runs.iter().map(|r| r.train_acc).collect();
        let (mean_test_acc, std_test_acc) = mean_std(&test);
        let (mean_train_acc, _) = mean_std(&train);
        Self { anchors, runs, mean_test_acc, std_test_acc, mean_train_acc }
    }
}

pub const CSV_HEADER: &str = "seed,method,strategy,shots,anchors,train_acc,test_acc,epochs";

impl RunReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for g in &self.groups {
            for r in &g.runs {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    r.seed, self.method, self.strategy, self.shots, g.anchors, r.train_acc, r.test_acc, self.config.epochs
                ));
            }
        }
        out
    }
}
