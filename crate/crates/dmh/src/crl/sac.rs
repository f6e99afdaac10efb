//! Discrete soft actor-critic with twin critics over a masked action space.
//!
//! Both the TD target and the actor objective are computed as exact
//! expectations over the masked categorical distribution; a sampled backup
//! is available behind `sampled_backup` for ablation.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crl::mask::masked_softmax_batch;
use crate::crl::replay::Batch;
use crate::neural::{soft_update, AdamState, Mlp};

#[derive(Debug, Clone, Copy)]
pub struct SacConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub tau: f64,
    pub lr: f64,
    /// Use a single sampled next action in the TD backup instead of the
    /// exact expectation over the masked distribution.
    pub sampled_backup: bool,
}

impl Default for SacConfig {
    fn default() -> SacConfig {
        SacConfig {
            gamma: 0.97,
            alpha: 0.1,
            tau: 0.005,
            lr: 1e-3,
            sampled_backup: false,
        }
    }
}

pub struct SacAgent {
    pub policy: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub target_q1: Mlp,
    pub target_q2: Mlp,
    pub config: SacConfig,
    policy_opt: AdamState,
    q1_opt: AdamState,
    q2_opt: AdamState,
    backup_rng: ChaCha8Rng,
}

impl SacAgent {
    /// Fresh agent with `[state_dim, hidden.., action_dim]` networks; targets
    /// start as copies of the online critics.
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        config: SacConfig,
        rng: &mut ChaCha8Rng,
    ) -> SacAgent {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(state_dim);
        dims.extend_from_slice(hidden);
        dims.push(action_dim);
        let policy = Mlp::init(&dims, rng);
        let q1 = Mlp::init(&dims, rng);
        let q2 = Mlp::init(&dims, rng);
        let target_q1 = q1.clone();
        let target_q2 = q2.clone();
        let policy_opt = AdamState::new(&policy, config.lr);
        let q1_opt = AdamState::new(&q1, config.lr);
        let q2_opt = AdamState::new(&q2, config.lr);
        let backup_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        SacAgent {
            policy,
            q1,
            q2,
            target_q1,
            target_q2,
            config,
            policy_opt,
            q1_opt,
            q2_opt,
            backup_rng,
        }
    }

    /// Rebuild an agent around pre-existing networks (artifact loading).
    pub fn from_networks(
        policy: Mlp,
        q1: Mlp,
        q2: Mlp,
        target_q1: Mlp,
        target_q2: Mlp,
        config: SacConfig,
        backup_seed: u64,
    ) -> SacAgent {
        let policy_opt = AdamState::new(&policy, config.lr);
        let q1_opt = AdamState::new(&q1, config.lr);
        let q2_opt = AdamState::new(&q2, config.lr);
        SacAgent {
            policy,
            q1,
            q2,
            target_q1,
            target_q2,
            config,
            policy_opt,
            q1_opt,
            q2_opt,
            backup_rng: ChaCha8Rng::seed_from_u64(backup_seed),
        }
    }

    pub fn action_dim(&self) -> usize {
        self.policy.output_dim()
    }

    /// Penalized TD targets y = r - lambda*c + gamma * soft state value of the
    /// next state; zero bootstrap on terminal rows (their masks are all-zero).
    pub fn td_targets(&mut self, batch: &Batch, lambda: f64) -> Array1<f64> {
        let n = batch.len();
        let logits = self.policy.forward_batch(&batch.next_states);
        let (probs, log_probs) = masked_softmax_batch(&logits, &batch.next_masks);
        let tq1 = self.target_q1.forward_batch(&batch.next_states);
        let tq2 = self.target_q2.forward_batch(&batch.next_states);
        let mut targets = Array1::zeros(n);
        for i in 0..n {
            let v_next = if batch.terminals[i] {
                0.0
            } else if self.config.sampled_backup {
                let a = sample_row(probs.row(i).as_slice().unwrap(), &mut self.backup_rng);
                match a {
                    Some(a) => tq1[[i, a]].min(tq2[[i, a]])
                        - self.config.alpha * log_probs[[i, a]],
                    None => 0.0,
                }
            } else {
                let mut v = 0.0;
                for a in 0..probs.ncols() {
                    let p = probs[[i, a]];
                    if p > 0.0 {
                        let q_min = tq1[[i, a]].min(tq2[[i, a]]);
                        v += p * (q_min - self.config.alpha * log_probs[[i, a]]);
                    }
                }
                v
            };
            targets[i] =
                batch.rewards[i] - lambda * batch.costs[i] + self.config.gamma * v_next;
        }
        targets
    }

    /// One squared-error descent step per critic toward precomputed targets;
    /// returns the mean of the two losses.
    pub fn update_critics(&mut self, batch: &Batch, targets: &Array1<f64>) -> f64 {
        let n = batch.len() as f64;
        let mut total_loss = 0.0;
        for pick in 0..2 {
            let (net, opt) = if pick == 0 {
                (&mut self.q1, &mut self.q1_opt)
            } else {
                (&mut self.q2, &mut self.q2_opt)
            };
            let (cache, q) = net.forward_cached(&batch.states);
            let mut upstream = Array2::zeros(q.dim());
            let mut loss = 0.0;
            for (i, &a) in batch.actions.iter().enumerate() {
                let err = q[[i, a]] - targets[i];
                loss += 0.5 * err * err;
                upstream[[i, a]] = err / n;
            }
            let grads = net.backward(&cache, &upstream);
            opt.apply(net, &grads);
            total_loss += loss / n;
        }
        total_loss / 2.0
    }

    /// One ascent step on the soft objective
    /// J = E_s[ sum_a pi'(a|s) (min_j Q_j(s,a) - alpha log pi'(a|s)) ]
    /// with critics held constant; returns -J as the reported loss.
    pub fn update_actor(&mut self, batch: &Batch) -> f64 {
        let n = batch.len() as f64;
        let (cache, logits) = self.policy.forward_cached(&batch.states);
        let (probs, log_probs) = masked_softmax_batch(&logits, &batch.masks);
        let q1 = self.q1.forward_batch(&batch.states);
        let q2 = self.q2.forward_batch(&batch.states);
        let cols = probs.ncols();
        let mut upstream = Array2::zeros(logits.dim());
        let mut objective = 0.0;
        for i in 0..probs.nrows() {
            // Per-action advantage g_a = minQ - alpha log p; rows with no
            // valid action (shouldn't occur for stored states) contribute 0.
            let mut j_i = 0.0;
            let mut g = vec![0.0; cols];
            for a in 0..cols {
                let p = probs[[i, a]];
                if p > 0.0 {
                    g[a] = q1[[i, a]].min(q2[[i, a]])
                        - self.config.alpha * log_probs[[i, a]];
                    j_i += p * g[a];
                }
            }
            objective += j_i;
            // dJ/dlogit_b = p_b (g_b - J_i); descend on -J.
            for a in 0..cols {
                let p = probs[[i, a]];
                if p > 0.0 {
                    upstream[[i, a]] = -p * (g[a] - j_i) / n;
                }
            }
        }
        let grads = self.policy.backward(&cache, &upstream);
        self.policy_opt.apply(&mut self.policy, &grads);
        -objective / n
    }

    pub fn soft_update_targets(&mut self) {
        soft_update(&mut self.target_q1, &self.q1, self.config.tau);
        soft_update(&mut self.target_q2, &self.q2, self.config.tau);
    }

    /// Greedy action under the masked policy (used for diagnostics).
    pub fn greedy_action(&self, state: &[f64], mask: &[bool]) -> Option<usize> {
        let x = Array2::from_shape_vec((1, state.len()), state.to_vec()).ok()?;
        let logits = self.policy.forward_batch(&x);
        let row = logits.index_axis(Axis(0), 0);
        (0..mask.len())
            .filter(|&a| mask[a])
            .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
    }
}

fn sample_row(probs: &[f64], rng: &mut ChaCha8Rng) -> Option<usize> {
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (a, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = Some(a);
            if u < acc {
                return Some(a);
            }
        }
    }
    last
}
