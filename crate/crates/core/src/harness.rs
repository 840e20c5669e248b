//! Simulation runs: build a user population, let each algorithm rank for a
//! number of rounds against simulated users, and record how it did.
//!
//! Runs over (algorithm, seed) pairs execute in parallel. Each run draws from
//! its own random streams, derived from the master seed, the algorithm name,
//! the seed index, the slot, and the purpose, so results do not depend on
//! scheduling. All algorithms with the same seed index face the same user
//! population and the same stream of user randomness.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bandit::SlotRng;
use crate::config::{ExperimentConfig, Extension, ScenarioKind, ScenarioSpec};
use crate::error::{Error, Result};
use crate::inference::slate_click_prob;
use crate::ranked::{simulate_click, Ranker};
use crate::tree::{DocTree, NodeId};
use crate::user::{
    crp_peak_value, crp_tables, discussion3_instance, extend_by_average, extend_by_interval, peaked_means, TreeNetwork,
    UserDistribution,
};

/// Stream purposes mixed into derived seeds.
const INSTANCE: u64 = 1;
const USERS: u64 = 2;
const SELECT: u64 = 3;
const LEAF: u64 = 4;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministically mixes `parts` into a seed.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix(master), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// A stable 64-bit key for an algorithm name (FNV-1a).
pub fn name_key(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

fn doc_tree(spec: &ScenarioSpec) -> Result<DocTree> {
    match &spec.tree {
        Some(path) => {
            let file = File::open(path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            DocTree::read_text(BufReader::new(file), &path.display().to_string())
        }
        None => DocTree::balanced(2, spec.docs_log2, spec.epsilon)?.with_scale(spec.scale),
    }
}

fn peak_network(tree: &Arc<DocTree>, peaks: &[(NodeId, f64)], spec: &ScenarioSpec) -> Result<UserDistribution> {
    let leaf_means = peaked_means(tree, peaks, spec.mu0)?;
    let mean = match spec.extension {
        Extension::Average => extend_by_average(tree, &leaf_means)?,
        Extension::Interval => extend_by_interval(tree, &leaf_means)?,
    };
    Ok(UserDistribution::Network(TreeNetwork::new(tree.clone(), mean)?))
}

/// Builds the user population for a scenario; `rng` places random peaks.
pub fn build_population<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<UserDistribution> {
    if spec.kind == ScenarioKind::Discussion3 {
        return Ok(discussion3_instance());
    }
    let tree = Arc::new(doc_tree(spec)?);
    let leaves = tree.leaves();
    match &spec.kind {
        ScenarioKind::Peaks { peaks, random, mixture } => {
            let mut chosen = Vec::new();
            for &(pos, v) in peaks {
                let x = *leaves
                    .get(pos)
                    .ok_or_else(|| Error::param(format!("peak leaf {pos} out of {}", leaves.len())))?;
                chosen.push((x, v));
            }
            if *random > leaves.len() {
                return Err(Error::param(format!("{random} peaks for {} documents", leaves.len())));
            }
            chosen.extend(sample(rng, leaves.len(), *random).into_iter().map(|i| (leaves[i], 0.5)));
            if *mixture {
                let w = 1.0 / chosen.len() as f64;
                let parts = chosen
                    .iter()
                    .map(|p| Ok((w, peak_network(&tree, std::slice::from_ref(p), spec)?)))
                    .collect::<Result<Vec<_>>>()?;
                UserDistribution::mixture(parts)
            } else {
                peak_network(&tree, &chosen, spec)
            }
        }
        ScenarioKind::Crp { n, theta } => {
            let tables = crp_tables(*n, *theta, rng)?;
            let docs = sample(rng, leaves.len(), tables.len().min(leaves.len()));
            let parts = tables
                .iter()
                .zip(docs)
                .map(|(&count, i)| {
                    let peak = (leaves[i], crp_peak_value(count, *n, spec.mu0));
                    Ok((count as f64 / *n as f64, peak_network(&tree, &[peak], spec)?))
                })
                .collect::<Result<Vec<_>>>()?;
            UserDistribution::mixture(parts)
        }
        ScenarioKind::Discussion3 => unreachable!(),
    }
}

/// The population for seed index `seed`.
pub fn population_for(cfg: &ExperimentConfig, seed: u64) -> Result<UserDistribution> {
    let spec = cfg.scenario_spec()?;
    let s = spec
        .seed
        .unwrap_or_else(|| derive_seed(cfg.master_seed, &[INSTANCE, seed]));
    build_population(&spec, &mut ChaCha8Rng::seed_from_u64(s))
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    pub slate: Vec<NodeId>,
    /// 0-based slot of the click.
    pub clicked_slot: Option<usize>,
    pub cum_clicks: u64,
    pub empirical_perf: f64,
    /// Exact click probability of this round's slate.
    pub exact_perf: f64,
    pub active_count: usize,
}

/// One algorithm on one seed.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub algorithm: String,
    pub seed: u64,
    pub records: Vec<RoundRecord>,
    pub rounds: u64,
    pub clicks: u64,
    /// Mean exact click probability over each tenth of the run.
    pub exact_deciles: [f64; 10],
}

impl RunResult {
    pub fn run_id(&self) -> String {
        format!("{}/{}", self.algorithm, self.seed)
    }

    /// Mean exact click probability over the last tenth of the run.
    pub fn final_exact(&self) -> f64 {
        self.exact_deciles[9]
    }

    /// Mean exact click probability over the whole run.
    pub fn mean_exact(&self) -> f64 {
        self.exact_deciles.iter().sum::<f64>() / 10.0
    }

    pub fn empirical_perf(&self) -> f64 {
        self.clicks as f64 / self.rounds as f64
    }
}

/// Runs `algorithm` against `dist` for `cfg.rounds` rounds.
pub fn run_single(cfg: &ExperimentConfig, dist: &UserDistribution, algorithm: &str, seed: u64) -> Result<RunResult> {
    let mut ranker = Ranker::new(algorithm, dist, cfg.slots, &cfg.policy_config())?;
    let key = name_key(algorithm);
    let mut rngs: Vec<SlotRng> = (0..cfg.slots as u64)
        .map(|slot| SlotRng {
            select: ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, &[SELECT, key, seed, slot])),
            leaf: ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, &[LEAF, key, seed, slot])),
        })
        .collect();
    let mut users = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, &[USERS, seed]));

    let rounds = cfg.rounds;
    let decile_of = |t: u64| (((t - 1) * 10) / rounds) as usize;
    let mut decile_sum = [0.0; 10];
    let mut decile_len = [0u64; 10];
    let mut records = Vec::new();
    let mut clicks = 0u64;
    for t in 1..=rounds {
        let choices = ranker.compose(&mut rngs)?;
        let slate: Vec<NodeId> = choices.iter().map(|c| c.doc).collect();
        let relevant = dist.sample_nodes(&slate, &mut users);
        let click = simulate_click(&relevant);
        ranker.route(&choices, click)?;
        clicks += click.is_some() as u64;
        let exact = slate_click_prob(dist, &slate);
        let d = decile_of(t);
        decile_sum[d] += exact;
        decile_len[d] += 1;
        if t % cfg.snapshot == 0 || t == rounds {
            records.push(RoundRecord {
                round: t,
                slate,
                clicked_slot: click,
                cum_clicks: clicks,
                empirical_perf: clicks as f64 / t as f64,
                exact_perf: exact,
                active_count: ranker.active_count(),
            });
        }
    }
    let mut exact_deciles = [0.0; 10];
    for d in 0..10 {
        // with fewer than ten rounds some tenths are empty; reuse the last one
        exact_deciles[d] = if decile_len[d] > 0 {
            decile_sum[d] / decile_len[d] as f64
        } else if d > 0 {
            exact_deciles[d - 1]
        } else {
            0.0
        };
    }
    Ok(RunResult {
        algorithm: algorithm.to_string(),
        seed,
        records,
        rounds,
        clicks,
        exact_deciles,
    })
}

/// Runs every (algorithm, seed) pair, ordered by algorithm then seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let populations = (0..cfg.seeds)
        .into_par_iter()
        .map(|s| population_for(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(&str, u64)> = cfg
        .algorithms
        .iter()
        .flat_map(|a| (0..cfg.seeds).map(move |s| (a.as_str(), s)))
        .collect();
    jobs.into_par_iter()
        .map(|(a, s)| run_single(cfg, &populations[s as usize], a, s))
        .collect()
}

pub const CSV_HEADER: [&str; 9] = [
    "run_id",
    "algorithm",
    "seed",
    "round",
    "clicked_slot",
    "cum_clicks",
    "empirical_perf",
    "exact_perf",
    "active_count",
];

/// Writes the per-round CSV. `clicked_slot` is 1-based and empty when
/// nothing was clicked.
pub fn write_csv<W: Write>(results: &[RunResult], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in results {
        let id = r.run_id();
        for rec in &r.records {
            w.write_record([
                id.clone(),
                r.algorithm.clone(),
                r.seed.to_string(),
                rec.round.to_string(),
                rec.clicked_slot.map(|s| (s + 1).to_string()).unwrap_or_default(),
                rec.cum_clicks.to_string(),
                format!("{:.6}", rec.empirical_perf),
                format!("{:.6}", rec.exact_perf),
                rec.active_count.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// [`write_csv`] into a file.
pub fn emit_csv(results: &[RunResult], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv(results, std::io::BufWriter::new(file)).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

/// The resolved configuration as `key = value` lines, for a metadata file
/// next to the CSV.
pub fn metadata(cfg: &ExperimentConfig) -> Result<String> {
    let spec = cfg.scenario_spec()?;
    let mut m = String::new();
    let mut put = |k: &str, v: String| m.push_str(&format!("{k} = {v}\n"));
    put("scenario", cfg.scenario.to_string());
    put("scenario-spec", format!("{spec:?}"));
    put("slots", cfg.slots.to_string());
    put("rounds", cfg.rounds.to_string());
    put("algos", cfg.algorithms.join(","));
    put("seeds", cfg.seeds.to_string());
    put("seed", cfg.master_seed.to_string());
    put("snapshot", cfg.snapshot.to_string());
    put("dedup", cfg.dedup.to_string());
    put("anytime", cfg.anytime.to_string());
    put("grid-replay", cfg.grid_replay.to_string());
    put("contextual-caps", cfg.contextual_caps.to_string());
    if let Some(g) = cfg.exp3_gamma {
        put("exp3-gamma", g.to_string());
    }
    put(
        "seed-derivation",
        "splitmix64 over (master, purpose, fnv1a(algorithm), seed index, slot)".to_string(),
    );
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Scenario;
    use crate::inference::prob_all_irrelevant;

    #[test]
    fn derived_seeds_differ_by_every_part() {
        let a = derive_seed(1, &[2, 3]);
        assert_eq!(a, derive_seed(1, &[2, 3]));
        assert_ne!(a, derive_seed(0, &[2, 3]));
        assert_ne!(a, derive_seed(1, &[3, 2]));
        assert_ne!(a, derive_seed(1, &[2, 3, 0]));
        assert_ne!(name_key("rankedZooming"), name_key("rankedZooming+"));
    }

    #[test]
    fn two_peak_population() {
        let spec = ScenarioSpec {
            docs_log2: 6,
            ..ScenarioSpec::builtin(&Scenario::TwoPeak).unwrap()
        };
        let d = build_population(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let UserDistribution::Network(n) = &d else {
            panic!("single network expected")
        };
        let t = d.tree();
        let leaf_means: Vec<f64> = t.leaves().iter().map(|&x| n.mean().get(x)).collect();
        assert_eq!(leaf_means.iter().filter(|&&m| m == 0.5).count(), 2);
        assert!(leaf_means.iter().all(|&m| (0.05..=0.5).contains(&m)));
        assert!(leaf_means.contains(&0.05));
        for (&x, &m) in t.leaves().iter().zip(&leaf_means) {
            assert!((1.0 - prob_all_irrelevant(&d, &[x]) - m).abs() < 1e-9);
        }
    }

    #[test]
    fn small_two_peak_is_an_even_mixture() {
        let spec = ScenarioSpec::builtin(&Scenario::SmallTwoPeak).unwrap();
        let d = build_population(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(d.tree().leaves().len(), 128);
        let UserDistribution::Mixture(parts) = &d else {
            panic!("mixture expected")
        };
        assert_eq!(parts.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0.5, 0.5]);
    }

    #[test]
    fn crp_population_weights() {
        let spec = ScenarioSpec {
            docs_log2: 6,
            ..ScenarioSpec::builtin(&Scenario::Crp).unwrap()
        };
        for s in 0..20 {
            let d = build_population(&spec, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
            let UserDistribution::Mixture(parts) = &d else {
                panic!("mixture expected")
            };
            assert!(!parts.is_empty());
            assert!((parts.iter().map(|p| p.0).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_oracle_on_discussion3_is_three_quarters_every_round() {
        let cfg = ExperimentConfig {
            scenario: Scenario::Discussion3,
            slots: 2,
            rounds: 50,
            snapshot: 1,
            algorithms: vec!["greedyOracle".into()],
            ..ExperimentConfig::default()
        };
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r[0].records.len(), 50);
        assert!(r[0].records.iter().all(|rec| (rec.exact_perf - 0.75).abs() < 1e-12));
        assert!(r[0].records.iter().all(|rec| rec.cum_clicks <= rec.round));
    }

    #[test]
    fn header_only_csv_for_no_results() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), CSV_HEADER.join(",") + "\n");
    }
}
