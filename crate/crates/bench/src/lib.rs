//! Shared workloads for the benchmarks.

use facetrack_core::synth::{synth_scenario, Scenario, ScenarioSpec};
use facetrack_core::{CostMatrix, Detection, GrayImage};

/// The crossing scenario split into per-frame detections and images.
pub struct Workload {
    pub scenario: Scenario,
    pub detections: Vec<Vec<Detection>>,
}

impl Workload {
    pub fn crossing() -> Self {
        let scenario = synth_scenario(&ScenarioSpec::crossing()).expect("built-in scenario is valid");
        let detections = (1..=scenario.spec.frames).map(|f| scenario.frame_detections(f)).collect();
        Self { scenario, detections }
    }

    pub fn frames(&self) -> &[GrayImage] {
        &self.scenario.frames
    }
}

/// Deterministic `n x n` cost matrix with no ties.
pub fn cost_matrix(n: usize) -> CostMatrix {
    let data = (0..n * n)
        .map(|k| ((k as f64 * 0.618_033_988_75).fract() * 1000.0).floor() + k as f64 * 1e-6)
        .collect();
    CostMatrix::new(n, n, data).expect("square matrix")
}
