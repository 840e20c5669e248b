//! Single-slot bandit policies over a fixed arm set, and the [`SlotPolicy`]
//! contract every slot algorithm implements.
//!
//! Selection takes `&self`: choosing a document never mutates the policy.
//! All learning happens in [`SlotPolicy::update`]. A slot whose round is
//! rolled back simply never receives the update, so its state is exactly
//! what it was before the round.

use std::cmp::{Ordering, Reverse};
use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tree::NodeId;

/// Pull count and cumulative reward of one arm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ArmStats {
    pub pulls: u64,
    pub reward: u64,
}

impl ArmStats {
    pub fn mean(&self) -> f64 {
        if self.pulls == 0 {
            0.0
        } else {
            self.reward as f64 / self.pulls as f64
        }
    }

    pub fn record(&mut self, reward: bool) {
        self.pulls += 1;
        self.reward += u64::from(reward);
    }
}

/// Time horizon and the optimistic (`+`) switch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HorizonConfig {
    pub horizon: u64,
    pub optimistic: bool,
}

impl HorizonConfig {
    pub fn new(horizon: u64, optimistic: bool) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::param("horizon must be at least 1"));
        }
        Ok(HorizonConfig { horizon, optimistic })
    }

    fn factor(&self) -> f64 {
        if self.optimistic {
            1.0
        } else {
            4.0 * (self.horizon as f64).ln()
        }
    }
}

/// `sqrt(4 ln T / (1 + n))`, or `sqrt(1 / (1 + n))` when optimistic.
pub fn conf_radius(pulls: u64, cfg: &HorizonConfig) -> f64 {
    (cfg.factor() / (1.0 + pulls as f64)).sqrt()
}

/// Upper confidence index `mean + coefficient * conf_radius`, with the mean
/// taken as 0 for an unplayed arm.
pub fn ucb_index(stats: &ArmStats, cfg: &HorizonConfig, coefficient: f64) -> f64 {
    stats.mean() + coefficient * conf_radius(stats.pulls, cfg)
}

/// Per-slot random streams: one for the policy's own randomization, one for
/// picking a document inside a chosen region.
#[derive(Clone, Debug)]
pub struct SlotRng {
    pub select: ChaCha8Rng,
    pub leaf: ChaCha8Rng,
}

/// One slot's pick for the current round.
#[derive(Clone, Debug, PartialEq)]
pub struct Choice {
    /// The document shown.
    pub doc: NodeId,
    /// Policy-specific handle of the arm that produced `doc`.
    pub arm: usize,
    /// Root of the region `doc` was drawn from.
    pub region: NodeId,
    /// Selection probability of `arm` (1 for deterministic policies).
    pub prob: f64,
}

/// A single-slot learner. `upper` lists the documents already placed in the
/// slots above, for policies that use them as context.
pub trait SlotPolicy: Send {
    fn select(&self, upper: &[NodeId], rng: &mut SlotRng) -> Result<Choice>;

    /// Feeds back the reward of `choice`, which must come from the most
    /// recent [`SlotPolicy::select`] on this state.
    fn update(&mut self, choice: &Choice, upper: &[NodeId], reward: bool) -> Result<()>;

    /// Number of arms (or regions) the policy currently maintains.
    fn active_count(&self) -> usize;

    fn box_clone(&self) -> Box<dyn SlotPolicy>;
}

impl Clone for Box<dyn SlotPolicy> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

/// Totally ordered `f64` for index keys.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Score(pub f64);

impl Eq for Score {}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Arms ordered by descending index, then ascending id.
pub(crate) type IndexOrder<K> = BTreeSet<(Reverse<Score>, K)>;

/// UCB1 over a fixed list of arms, using the `mean + 2 * conf_radius` index.
#[derive(Clone, Debug)]
pub struct Ucb1 {
    arms: Vec<NodeId>,
    stats: Vec<ArmStats>,
    order: IndexOrder<usize>,
    cfg: HorizonConfig,
    coefficient: f64,
}

impl Ucb1 {
    pub fn new(arms: Vec<NodeId>, cfg: HorizonConfig) -> Result<Self> {
        Self::with_coefficient(arms, cfg, 2.0)
    }

    pub fn with_coefficient(arms: Vec<NodeId>, cfg: HorizonConfig, coefficient: f64) -> Result<Self> {
        if arms.is_empty() {
            return Err(Error::param("UCB1 needs at least one arm"));
        }
        let stats = vec![ArmStats::default(); arms.len()];
        let fresh = Score(ucb_index(&ArmStats::default(), &cfg, coefficient));
        let order = (0..arms.len()).map(|i| (Reverse(fresh), i)).collect();
        Ok(Ucb1 {
            arms,
            stats,
            order,
            cfg,
            coefficient,
        })
    }

    pub fn stats(&self) -> &[ArmStats] {
        &self.stats
    }

    pub fn arms(&self) -> &[NodeId] {
        &self.arms
    }

    /// Arm with the largest index; ties go to the lowest arm position.
    pub fn best_arm(&self) -> usize {
        self.order.first().expect("non-empty").1
    }

    pub fn index(&self, arm: usize) -> f64 {
        ucb_index(&self.stats[arm], &self.cfg, self.coefficient)
    }

    pub fn record(&mut self, arm: usize, reward: bool) -> Result<()> {
        if arm >= self.arms.len() {
            return Err(Error::structural(format!("arm {arm} out of range")));
        }
        self.order.remove(&(Reverse(Score(self.index(arm))), arm));
        self.stats[arm].record(reward);
        self.order.insert((Reverse(Score(self.index(arm))), arm));
        Ok(())
    }
}

impl SlotPolicy for Ucb1 {
    fn select(&self, _upper: &[NodeId], _rng: &mut SlotRng) -> Result<Choice> {
        let arm = self.best_arm();
        Ok(Choice {
            doc: self.arms[arm],
            arm,
            region: self.arms[arm],
            prob: 1.0,
        })
    }

    fn update(&mut self, choice: &Choice, _upper: &[NodeId], reward: bool) -> Result<()> {
        self.record(choice.arm, reward)
    }

    fn active_count(&self) -> usize {
        self.arms.len()
    }

    fn box_clone(&self) -> Box<dyn SlotPolicy> {
        Box::new(self.clone())
    }
}

/// `min(1, sqrt(n ln n / ((e - 1) T)))`.
pub fn exp3_default_gamma(arms: usize, horizon: u64) -> f64 {
    let n = arms.max(2) as f64;
    (n * n.ln() / ((std::f64::consts::E - 1.0) * horizon as f64))
        .sqrt()
        .min(1.0)
}

/// `p_i = (1 - γ) w_i / Σw + γ / n`.
pub fn exp3_probabilities(weights: &[f64], gamma: f64) -> Vec<f64> {
    let n = weights.len() as f64;
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| (1.0 - gamma) * w / total + gamma / n).collect()
}

/// Multiplies the chosen arm's weight by `exp(γ (reward / p) / n)`.
pub fn exp3_reweight(weights: &mut [f64], gamma: f64, arm: usize, reward: f64, prob: f64) {
    let n = weights.len() as f64;
    weights[arm] *= (gamma * (reward / prob) / n).exp();
    let max = weights.iter().copied().fold(0.0, f64::max);
    if !(max < 1e200) {
        // rescale to keep the weights finite; probabilities are unchanged
        for w in weights.iter_mut() {
            *w = (*w / max).max(f64::MIN_POSITIVE);
        }
    }
}

/// EXP3 with exponential weights and uniform exploration `γ`.
#[derive(Clone, Debug)]
pub struct Exp3 {
    arms: Vec<NodeId>,
    weights: Vec<f64>,
    gamma: f64,
}

impl Exp3 {
    pub fn new(arms: Vec<NodeId>, gamma: f64) -> Result<Self> {
        if arms.is_empty() {
            return Err(Error::param("EXP3 needs at least one arm"));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::param(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        let weights = vec![1.0; arms.len()];
        Ok(Exp3 { arms, weights, gamma })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        exp3_probabilities(&self.weights, self.gamma)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn arms(&self) -> &[NodeId] {
        &self.arms
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        let probs = self.probabilities();
        let mut u: f64 = rng.gen();
        for (i, &p) in probs.iter().enumerate() {
            if u < p {
                return (i, p);
            }
            u -= p;
        }
        let last = probs.len() - 1;
        (last, probs[last])
    }

    pub fn record(&mut self, arm: usize, prob: f64, reward: bool) -> Result<()> {
        if arm >= self.arms.len() || !(prob > 0.0) {
            return Err(Error::structural(format!("bad EXP3 feedback: arm {arm}, p {prob}")));
        }
        exp3_reweight(&mut self.weights, self.gamma, arm, f64::from(u8::from(reward)), prob);
        Ok(())
    }
}

impl SlotPolicy for Exp3 {
    fn select(&self, _upper: &[NodeId], rng: &mut SlotRng) -> Result<Choice> {
        let (arm, prob) = self.draw(&mut rng.select);
        Ok(Choice {
            doc: self.arms[arm],
            arm,
            region: self.arms[arm],
            prob,
        })
    }

    fn update(&mut self, choice: &Choice, _upper: &[NodeId], reward: bool) -> Result<()> {
        self.record(choice.arm, choice.prob, reward)
    }

    fn active_count(&self) -> usize {
        self.arms.len()
    }

    fn box_clone(&self) -> Box<dyn SlotPolicy> {
        Box::new(self.clone())
    }
}

/// Builds a fresh policy for a given horizon.
pub type PolicyFactory = Arc<dyn Fn(u64) -> Result<Box<dyn SlotPolicy>> + Send + Sync>;

/// Anytime wrapper: phase `i` runs a fresh inner policy with horizon `2^i`
/// for `2^i` rounds.
#[derive(Clone)]
pub struct Doubling {
    factory: PolicyFactory,
    inner: Box<dyn SlotPolicy>,
    phase: u32,
    played_in_phase: u64,
}

/// Phase (0-based) that round `t >= 1` belongs to.
pub fn doubling_phase(round: u64) -> u32 {
    assert!(round >= 1, "rounds are numbered from 1");
    63 - round.leading_zeros()
}

impl Doubling {
    pub fn new(factory: PolicyFactory) -> Result<Self> {
        let inner = factory(1)?;
        Ok(Doubling {
            factory,
            inner,
            phase: 0,
            played_in_phase: 0,
        })
    }

    pub fn phase(&self) -> u32 {
        self.phase
    }
}

impl SlotPolicy for Doubling {
    fn select(&self, upper: &[NodeId], rng: &mut SlotRng) -> Result<Choice> {
        self.inner.select(upper, rng)
    }

    fn update(&mut self, choice: &Choice, upper: &[NodeId], reward: bool) -> Result<()> {
        self.inner.update(choice, upper, reward)?;
        self.played_in_phase += 1;
        if self.played_in_phase == 1u64 << self.phase {
            self.phase += 1;
            self.played_in_phase = 0;
            self.inner = (self.factory)(1u64 << self.phase)?;
        }
        Ok(())
    }

    fn active_count(&self) -> usize {
        self.inner.active_count()
    }

    fn box_clone(&self) -> Box<dyn SlotPolicy> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> SlotRng {
        SlotRng {
            select: ChaCha8Rng::seed_from_u64(seed),
            leaf: ChaCha8Rng::seed_from_u64(seed ^ 0xdead),
        }
    }

    fn arms(n: u32) -> Vec<NodeId> {
        (0..n).map(NodeId).collect()
    }

    #[test]
    fn conf_radius_examples() {
        let e = HorizonConfig::new(1, false).unwrap();
        assert_eq!(conf_radius(0, &e), 0.0);
        let cfg = HorizonConfig {
            horizon: 3,
            optimistic: false,
        };
        assert!((conf_radius(0, &cfg) - (4.0 * 3f64.ln()).sqrt()).abs() < 1e-15);
        let opt = HorizonConfig::new(10, true).unwrap();
        assert_eq!(conf_radius(3, &opt), 0.5);
        assert!(conf_radius(1 << 40, &cfg) < 1e-5);
        assert!(conf_radius(5, &cfg) > conf_radius(6, &cfg));
        assert!(HorizonConfig::new(0, true).is_err());
    }

    #[test]
    fn ucb1_select_examples() {
        let cfg = HorizonConfig::new(1000, false).unwrap();
        let p = Ucb1::new(arms(4), cfg).unwrap();
        assert_eq!(p.select(&[], &mut rng(0)).unwrap().arm, 0);

        let mut p = Ucb1::new(arms(2), cfg).unwrap();
        for i in 0..10 {
            p.record(0, i < 9).unwrap();
            p.record(1, i < 1).unwrap();
        }
        assert_eq!(p.best_arm(), 0);

        let opt = HorizonConfig::new(1000, true).unwrap();
        let mut p = Ucb1::new(arms(2), opt).unwrap();
        for i in 0..100 {
            p.record(0, i % 2 == 0).unwrap();
        }
        p.record(1, false).unwrap();
        assert!((p.index(0) - (0.5 + 2.0 * (1.0f64 / 101.0).sqrt())).abs() < 1e-12);
        assert!((p.index(1) - 2.0 * 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(p.best_arm(), 1);
    }

    #[test]
    fn exp3_examples() {
        let w = [3.0, 3.0, 3.0];
        assert!(exp3_probabilities(&w, 0.3)
            .iter()
            .all(|p| (p - 1.0 / 3.0).abs() < 1e-15));

        let mut w = vec![1.0, 1.0];
        exp3_reweight(&mut w, 0.5, 0, 0.0, 0.5);
        assert_eq!(w, vec![1.0, 1.0]);
        let p = exp3_probabilities(&w, 0.5);
        assert_eq!(p[0], 0.5);
        exp3_reweight(&mut w, 0.5, 0, 1.0, p[0]);
        assert!((w[0] - 0.5f64.exp()).abs() < 1e-15 && w[1] == 1.0);

        assert!(Exp3::new(arms(2), 0.0).is_err());
        assert!((exp3_default_gamma(10, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exp3_weights_stay_finite() {
        let mut p = Exp3::new(arms(3), 1.0).unwrap();
        for _ in 0..100_000 {
            let probs = p.probabilities();
            p.record(0, probs[0], true).unwrap();
        }
        assert!(p.weights().iter().all(|w| w.is_finite() && *w > 0.0));
        let probs = p.probabilities();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_phases() {
        assert_eq!(doubling_phase(1), 0);
        assert_eq!(doubling_phase(2), 1);
        assert_eq!(doubling_phase(3), 1);
        assert_eq!(doubling_phase(4), 2);
        assert_eq!(doubling_phase(7), 2);
        assert_eq!(doubling_phase(8), 3);

        let horizons = Arc::new(std::sync::Mutex::new(Vec::new()));
        let seen = horizons.clone();
        let factory: PolicyFactory = Arc::new(move |t| {
            seen.lock().unwrap().push(t);
            Ok(Box::new(Ucb1::new(arms(2), HorizonConfig::new(t, false)?)?) as Box<dyn SlotPolicy>)
        });
        let mut d = Doubling::new(factory).unwrap();
        let mut r = rng(1);
        for t in 1..=7u64 {
            assert_eq!(d.phase(), doubling_phase(t));
            let c = d.select(&[], &mut r).unwrap();
            d.update(&c, &[], true).unwrap();
        }
        // phases 0, 1, 2 were played; phase 3's instance is ready for round 8
        assert_eq!(*horizons.lock().unwrap(), vec![1, 2, 4, 8]);
    }
}
