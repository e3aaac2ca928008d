use serde::{Deserialize, Serialize};

/// Per-position activations of the shared-to-task gate for one input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateTrace {
    pub task: usize,
    pub tokens: Vec<String>,
    /// `T × d` gate values.
    pub activations: Vec<Vec<f64>>,
    /// Neurons ordered by their activation at the last position, largest
    /// first; ties keep index order.
    pub neuron_order: Vec<usize>,
}

impl GateTrace {
    pub fn new(task: usize, tokens: Vec<String>, activations: Vec<Vec<f64>>) -> Self {
        let last = activations.last().cloned().unwrap_or_default();
        let mut neuron_order: Vec<usize> = (0..last.len()).collect();
        neuron_order.sort_by(|&a, &b| last[b].total_cmp(&last[a]));
        GateTrace {
            task,
            tokens,
            activations,
            neuron_order,
        }
    }

    pub fn steps(&self) -> usize {
        self.activations.len()
    }

    pub fn width(&self) -> usize {
        self.activations.first().map_or(0, Vec::len)
    }

    /// Activations with columns permuted into `neuron_order`.
    pub fn sorted_activations(&self) -> Vec<Vec<f64>> {
        self.activations
            .iter()
            .map(|row| self.neuron_order.iter().map(|&k| row[k]).collect())
            .collect()
    }
}
