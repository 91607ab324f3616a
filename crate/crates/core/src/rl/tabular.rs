//! Three-state, two-action MDP for checking the Bellman target rule
//! without a network.

use super::train::bellman_target;

pub const STATES: usize = 3;
pub const ACTIONS: usize = 2;

/// `(next state, reward)` for every state-action pair. No state is
/// terminal.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub transitions: [[(usize, f64); ACTIONS]; STATES],
    pub gamma: f64,
}

pub type QTable = [[f64; ACTIONS]; STATES];

impl Default for TabularMdp {
    fn default() -> Self {
        Self {
            transitions: [[(1, 0.0), (0, 0.1)], [(2, 0.0), (0, 0.5)], [(2, 1.0), (0, 0.0)]],
            gamma: 0.9,
        }
    }
}

impl TabularMdp {
    /// One synchronous application of the Bellman target to every entry.
    pub fn target_iteration(&self, q: &QTable) -> QTable {
        let mut next = [[0.0; ACTIONS]; STATES];
        for (s, row) in next.iter_mut().enumerate() {
            for (a, v) in row.iter_mut().enumerate() {
                let (s2, r) = self.transitions[s][a];
                let max_next = q[s2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                *v = bellman_target(r, false, self.gamma, max_next);
            }
        }
        next
    }

    /// Repeats [`Self::target_iteration`] from zero until successive tables
    /// differ by at most `tol`, or `max_iters` is reached.
    pub fn iterate(&self, tol: f64, max_iters: usize) -> (QTable, usize) {
        let mut q = [[0.0; ACTIONS]; STATES];
        for i in 1..=max_iters {
            let next = self.target_iteration(&q);
            let delta = next
                .iter()
                .flatten()
                .zip(q.iter().flatten())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            q = next;
            if delta <= tol {
                return (q, i);
            }
        }
        (q, max_iters)
    }

    /// Exact Q of a deterministic policy, by solving `(I − γP)V = R`.
    pub fn evaluate_policy(&self, policy: [usize; STATES]) -> QTable {
        let mut m = [[0.0; STATES + 1]; STATES];
        for s in 0..STATES {
            let (s2, r) = self.transitions[s][policy[s]];
            m[s][s] += 1.0;
            m[s][s2] -= self.gamma;
            m[s][STATES] = r;
        }
        for col in 0..STATES {
            let pivot = (col..STATES)
                .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
                .expect("non-empty");
            m.swap(col, pivot);
            for row in 0..STATES {
                if row != col {
                    let f = m[row][col] / m[col][col];
                    for k in col..=STATES {
                        m[row][k] -= f * m[col][k];
                    }
                }
            }
        }
        let v: Vec<f64> = (0..STATES).map(|s| m[s][STATES] / m[s][s]).collect();
        let mut q = [[0.0; ACTIONS]; STATES];
        for s in 0..STATES {
            for a in 0..ACTIONS {
                let (s2, r) = self.transitions[s][a];
                q[s][a] = r + self.gamma * v[s2];
            }
        }
        q
    }

    /// Optimal Q by exhaustive search over deterministic policies.
    pub fn analytic_q(&self) -> QTable {
        let mut best: Option<(f64, QTable)> = None;
        for code in 0..ACTIONS.pow(STATES as u32) {
            let mut policy = [0; STATES];
            for (s, p) in policy.iter_mut().enumerate() {
                *p = (code / ACTIONS.pow(s as u32)) % ACTIONS;
            }
            let q = self.evaluate_policy(policy);
            let value: f64 = (0..STATES).map(|s| q[s][policy[s]]).sum();
            if best.as_ref().map_or(true, |(v, _)| value > *v) {
                best = Some((value, q));
            }
        }
        best.expect("at least one policy").1
    }
}
