//! Lagrange multiplier schedule for the relaxed constrained objective.

use std::collections::VecDeque;

/// Projected ascent step on the multiplier: grows while the moving-average
/// episodic cost exceeds the threshold, shrinks (never below zero) otherwise.
pub fn update_lambda(lambda: f64, eta: f64, cost_estimate: f64, epsilon: f64) -> f64 {
    (lambda + eta * (cost_estimate - epsilon)).max(0.0)
}

#[derive(Debug, Clone)]
pub struct LagrangeState {
    lambda: f64,
    eta: f64,
    epsilon: f64,
    window: usize,
    recent_costs: VecDeque<f64>,
}

impl LagrangeState {
    pub fn new(lambda0: f64, eta: f64, epsilon: f64, window: usize) -> LagrangeState {
        assert!(window > 0);
        LagrangeState {
            lambda: lambda0,
            eta,
            epsilon,
            window,
            recent_costs: VecDeque::with_capacity(window),
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Moving average of episodic costs over the configured window.
    pub fn cost_estimate(&self) -> f64 {
        if self.recent_costs.is_empty() {
            0.0
        } else {
            self.recent_costs.iter().sum::<f64>() / self.recent_costs.len() as f64
        }
    }

    /// Record a finished episode's cumulative cost and take one ascent step.
    pub fn record_episode(&mut self, episodic_cost: f64) -> f64 {
        if self.recent_costs.len() == self.window {
            self.recent_costs.pop_front();
        }
        self.recent_costs.push_back(episodic_cost);
        self.lambda = update_lambda(self.lambda, self.eta, self.cost_estimate(), self.epsilon);
        self.lambda
    }
}
