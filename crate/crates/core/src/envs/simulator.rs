use rand::Rng as _;

use crate::mdp::TabularMdp;
use crate::rng::Rng;

/// Sampler over a tabular MDP: keeps the sparse support of every transition
/// row so rollouts cost O(support) per step instead of O(S).
#[derive(Debug, Clone)]
pub struct Simulator {
    n_actions: usize,
    rows: Vec<Vec<(usize, f64)>>,
    init: Vec<(usize, f64)>,
    reward: Vec<f64>,
}

impl Simulator {
    pub fn new(mdp: &TabularMdp) -> Self {
        let rows = mdp
            .transition()
            .row_iter()
            .map(|row| cumulative(row.iter().copied()))
            .collect();
        Self {
            n_actions: mdp.n_actions(),
            rows,
            init: cumulative(mdp.init_dist().iter().copied()),
            reward: mdp.reward().iter().copied().collect(),
        }
    }

    pub fn reset(&self, rng: &mut Rng) -> usize {
        draw(&self.init, rng.random())
    }

    /// Returns `(reward, next_state)`.
    pub fn step(&self, s: usize, a: usize, rng: &mut Rng) -> (f64, usize) {
        let row = s * self.n_actions + a;
        (self.reward[row], draw(&self.rows[row], rng.random()))
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }
}

fn cumulative(probs: impl Iterator<Item = f64>) -> Vec<(usize, f64)> {
    let mut acc = 0.0;
    probs
        .enumerate()
        .filter(|(_, p)| *p > 0.0)
        .map(|(i, p)| {
            acc += p;
            (i, acc)
        })
        .collect()
}

fn draw(cdf: &[(usize, f64)], u: f64) -> usize {
    cdf.iter()
        .find(|(_, c)| u < *c)
        .or_else(|| cdf.last())
        .map(|(i, _)| *i)
        .expect("distribution has support")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::random_mdp;
    use crate::rng::rng_for;

    #[test]
    fn empirical_next_state_frequencies_match_row() {
        let mdp = random_mdp(3, 2, 5, 1.0, 0.9);
        let sim = Simulator::new(&mdp);
        let mut rng = rng_for(1, 0);
        let n = 200_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sim.step(1, 1, &mut rng).1] += 1;
        }
        for (t, &c) in counts.iter().enumerate() {
            let p = mdp.transition()[(3, t)];
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() < 5.0 * se);
        }
    }
}
