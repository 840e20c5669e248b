//! Plain-text `key = value` configuration for experiments and scenarios.
//!
//! Blank lines and lines starting with `#` are ignored. Keys use the same
//! spelling as the command-line flags, so a file can hold any flag.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ranked::{PolicyConfig, ALGORITHMS};

/// `(line, key, value)` triples in file order.
pub fn parse_kv(text: &str, origin: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            message: format!("expected `key = value`, got {line:?}"),
        })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::param(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::param(format!("{key}: expected true or false, got {value:?}"))),
    }
}

/// Built-in scenarios, or a descriptor file.
#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    /// Two peaks of relevance 1/2 in one network.
    TwoPeak,
    /// Peaks from a Chinese Restaurant Process, one mixture component each.
    Crp,
    /// 128 documents, two peaks, each peak half of the users.
    SmallTwoPeak,
    /// Three independent documents with means (1/2, 1/2, 1/3).
    Discussion3,
    Custom(PathBuf),
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "two-peak" => Scenario::TwoPeak,
            "crp" => Scenario::Crp,
            "small-two-peak" => Scenario::SmallTwoPeak,
            "discussion3" => Scenario::Discussion3,
            other => match other.strip_prefix("file:") {
                Some(p) => Scenario::Custom(PathBuf::from(p)),
                None => {
                    return Err(Error::param(format!(
                        "unknown scenario {other:?} (two-peak, crp, small-two-peak, discussion3, file:<path>)"
                    )))
                }
            },
        })
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::TwoPeak => f.write_str("two-peak"),
            Scenario::Crp => f.write_str("crp"),
            Scenario::SmallTwoPeak => f.write_str("small-two-peak"),
            Scenario::Discussion3 => f.write_str("discussion3"),
            Scenario::Custom(p) => write!(f, "file:{}", p.display()),
        }
    }
}

/// How internal-node means are derived from leaf means.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extension {
    Average,
    Interval,
}

/// Everything needed to build one user population.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub docs_log2: usize,
    pub epsilon: f64,
    pub scale: f64,
    /// Tree file replacing the balanced binary tree.
    pub tree: Option<PathBuf>,
    pub mu0: f64,
    pub extension: Extension,
    /// Fixed instance seed; otherwise derived from the run seed.
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScenarioKind {
    /// Explicit `(leaf position, value)` peaks, or `count` random peaks of
    /// relevance 1/2. With `mixture`, one component per peak, equally weighted.
    Peaks {
        peaks: Vec<(usize, f64)>,
        random: usize,
        mixture: bool,
    },
    Crp {
        n: usize,
        theta: f64,
    },
    Discussion3,
}

impl ScenarioSpec {
    /// The built-in scenario with its default parameters.
    pub fn builtin(s: &Scenario) -> Option<Self> {
        let base = ScenarioSpec {
            kind: ScenarioKind::Discussion3,
            docs_log2: 10,
            epsilon: 0.837,
            scale: 1.0,
            tree: None,
            mu0: 0.05,
            extension: Extension::Average,
            seed: None,
        };
        Some(match s {
            Scenario::TwoPeak => ScenarioSpec {
                kind: ScenarioKind::Peaks {
                    peaks: Vec::new(),
                    random: 2,
                    mixture: false,
                },
                ..base
            },
            Scenario::SmallTwoPeak => ScenarioSpec {
                kind: ScenarioKind::Peaks {
                    peaks: Vec::new(),
                    random: 2,
                    mixture: true,
                },
                docs_log2: 7,
                ..base
            },
            Scenario::Crp => ScenarioSpec {
                kind: ScenarioKind::Crp { n: 20, theta: 2.0 },
                mu0: 0.01,
                ..base
            },
            Scenario::Discussion3 => base,
            Scenario::Custom(_) => return None,
        })
    }

    /// Reads a scenario descriptor. Relative tree paths resolve against the
    /// descriptor's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = read(path)?;
        let origin = path.display().to_string();
        let entries = parse_kv(&text, &origin)?;
        let kind = entries
            .iter()
            .find(|(_, k, _)| k == "kind")
            .map(|(_, _, v)| v.as_str())
            .ok_or_else(|| Error::param(format!("{origin}: missing `kind`")))?;
        let mut spec = match kind {
            "peaks" => ScenarioSpec::builtin(&Scenario::TwoPeak),
            "crp" => ScenarioSpec::builtin(&Scenario::Crp),
            "discussion3" => ScenarioSpec::builtin(&Scenario::Discussion3),
            other => return Err(Error::param(format!("{origin}: unknown kind {other:?}"))),
        }
        .expect("built-in");
        for (line, key, value) in entries {
            let at = |e: Error| Error::Parse {
                path: origin.clone(),
                line,
                message: e.to_string(),
            };
            spec.set(&key, &value, path.parent()).map_err(at)?;
        }
        Ok(spec)
    }

    fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<()> {
        match key {
            "kind" => {}
            "docs-log2" => self.docs_log2 = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "scale" => self.scale = parse(key, value)?,
            "mu0" => self.mu0 = parse(key, value)?,
            "seed" => self.seed = Some(parse(key, value)?),
            "tree" => {
                let p = PathBuf::from(value);
                self.tree = Some(match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p,
                });
            }
            "extend" => {
                self.extension = match value {
                    "average" => Extension::Average,
                    "interval" => Extension::Interval,
                    _ => {
                        return Err(Error::param(format!(
                            "extend: expected average or interval, got {value:?}"
                        )))
                    }
                }
            }
            "peaks" | "random-peaks" | "mixture" => {
                let ScenarioKind::Peaks { peaks, random, mixture } = &mut self.kind else {
                    return Err(Error::param(format!("{key} only applies to kind = peaks")));
                };
                match key {
                    "peaks" => {
                        *peaks = value
                            .split(',')
                            .map(|item| {
                                let (x, v) = item
                                    .trim()
                                    .split_once(':')
                                    .ok_or_else(|| Error::param(format!("peaks: expected leaf:value, got {item:?}")))?;
                                Ok((parse("peaks", x.trim())?, parse("peaks", v.trim())?))
                            })
                            .collect::<Result<_>>()?;
                        *random = 0;
                    }
                    "random-peaks" => *random = parse(key, value)?,
                    _ => *mixture = parse_bool(key, value)?,
                }
            }
            "crp-n" | "crp-theta" => {
                let ScenarioKind::Crp { n, theta } = &mut self.kind else {
                    return Err(Error::param(format!("{key} only applies to kind = crp")));
                };
                if key == "crp-n" {
                    *n = parse(key, value)?;
                } else {
                    *theta = parse(key, value)?;
                }
            }
            _ => return Err(Error::param(format!("unknown scenario key {key:?}"))),
        }
        Ok(())
    }
}

/// A full experiment: one scenario, several algorithms, several seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Overrides applied on top of the scenario's own parameters.
    pub docs_log2: Option<usize>,
    pub epsilon: Option<f64>,
    pub mu0: Option<f64>,
    pub crp_n: Option<usize>,
    pub crp_theta: Option<f64>,
    pub slots: usize,
    pub rounds: u64,
    pub algorithms: Vec<String>,
    /// Number of independent runs per algorithm.
    pub seeds: u64,
    pub master_seed: u64,
    /// A CSV row is written every `snapshot` rounds (and at the last round).
    pub snapshot: u64,
    pub out: Option<PathBuf>,
    pub dedup: bool,
    pub anytime: bool,
    pub grid_replay: bool,
    pub exp3_gamma: Option<f64>,
    pub contextual_caps: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::TwoPeak,
            docs_log2: None,
            epsilon: None,
            mu0: None,
            crp_n: None,
            crp_theta: None,
            slots: 5,
            rounds: 10_000,
            algorithms: vec!["rankedZooming+".into(), "rankedMCZooming+".into()],
            seeds: 1,
            master_seed: 0,
            snapshot: 100,
            out: None,
            dedup: false,
            anytime: false,
            grid_replay: false,
            exp3_gamma: None,
            contextual_caps: true,
        }
    }
}

impl ExperimentConfig {
    /// Keys accepted by [`ExperimentConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "scenario",
        "docs-log2",
        "epsilon",
        "mu0",
        "crp-n",
        "crp-theta",
        "slots",
        "rounds",
        "algos",
        "seeds",
        "seed",
        "snapshot",
        "out",
        "dedup",
        "anytime",
        "grid-replay",
        "exp3-gamma",
        "contextual-caps",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "scenario" => self.scenario = value.parse()?,
            "docs-log2" => self.docs_log2 = Some(parse(key, value)?),
            "epsilon" => self.epsilon = Some(parse(key, value)?),
            "mu0" => self.mu0 = Some(parse(key, value)?),
            "crp-n" => self.crp_n = Some(parse(key, value)?),
            "crp-theta" => self.crp_theta = Some(parse(key, value)?),
            "slots" => self.slots = parse(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "algos" => {
                self.algorithms = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            "seeds" => self.seeds = parse(key, value)?,
            "seed" => self.master_seed = parse(key, value)?,
            "snapshot" => self.snapshot = parse(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "dedup" => self.dedup = parse_bool(key, value)?,
            "anytime" => self.anytime = parse_bool(key, value)?,
            "grid-replay" => self.grid_replay = parse_bool(key, value)?,
            "exp3-gamma" => self.exp3_gamma = Some(parse(key, value)?),
            "contextual-caps" => self.contextual_caps = parse_bool(key, value)?,
            _ => return Err(Error::param(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every entry of a config file, in order.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let origin = path.display().to_string();
        for (line, key, value) in parse_kv(&read(path)?, &origin)? {
            self.set(&key, &value).map_err(|e| Error::Parse {
                path: origin.clone(),
                line,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// The scenario with this config's overrides applied.
    pub fn scenario_spec(&self) -> Result<ScenarioSpec> {
        let mut spec = match &self.scenario {
            Scenario::Custom(p) => ScenarioSpec::from_file(p)?,
            s => ScenarioSpec::builtin(s).expect("built-in"),
        };
        if let Some(d) = self.docs_log2 {
            spec.docs_log2 = d;
        }
        if let Some(e) = self.epsilon {
            spec.epsilon = e;
        }
        if let Some(m) = self.mu0 {
            spec.mu0 = m;
        }
        if let ScenarioKind::Crp { n, theta } = &mut spec.kind {
            *n = self.crp_n.unwrap_or(*n);
            *theta = self.crp_theta.unwrap_or(*theta);
        }
        Ok(spec)
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            horizon: self.rounds,
            exp3_gamma: self.exp3_gamma,
            grid_replay: self.grid_replay,
            dedup: self.dedup,
            anytime: self.anytime,
            contextual_caps: self.contextual_caps,
        }
    }

    /// Every problem with the configuration, reported together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.rounds == 0 {
            problems.push("rounds must be at least 1".to_string());
        }
        if self.slots == 0 {
            problems.push("slots must be at least 1".to_string());
        }
        if self.seeds == 0 {
            problems.push("seeds must be at least 1".to_string());
        }
        if self.snapshot == 0 {
            problems.push("snapshot must be at least 1".to_string());
        }
        if self.algorithms.is_empty() {
            problems.push("no algorithms given".to_string());
        }
        for a in &self.algorithms {
            if !ALGORITHMS.contains(&a.as_str()) {
                problems.push(format!("unknown algorithm {a:?}"));
            }
        }
        if let Some(g) = self.exp3_gamma {
            if !(g > 0.0 && g <= 1.0) {
                problems.push(format!("exp3-gamma must be in (0, 1], got {g}"));
            }
        }
        match self.scenario_spec() {
            Err(e) => problems.push(e.to_string()),
            Ok(spec) => {
                if !(spec.epsilon > 0.0 && spec.epsilon < 1.0) {
                    problems.push(format!("epsilon must be in (0, 1), got {}", spec.epsilon));
                }
                if !(spec.mu0 > 0.0 && spec.mu0 <= 0.5) {
                    problems.push(format!("mu0 must be in (0, 1/2], got {}", spec.mu0));
                }
                if spec.tree.is_none() && spec.kind != ScenarioKind::Discussion3 && spec.docs_log2 > 24 {
                    problems.push(format!("docs-log2 {} is too large", spec.docs_log2));
                }
                if spec.kind == ScenarioKind::Discussion3 && self.slots > 3 {
                    problems.push(format!("discussion3 has 3 documents, got {} slots", self.slots));
                }
                if let ScenarioKind::Crp { n, theta } = spec.kind {
                    if n == 0 || !(theta > 0.0) {
                        problems.push(format!("crp needs n >= 1 and theta > 0, got n={n}, theta={theta}"));
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::param(problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_parsing_skips_comments() {
        let kv = parse_kv("# c\n\nrounds = 5\n slots=2 \n", "x").unwrap();
        assert_eq!(
            kv,
            vec![(3, "rounds".into(), "5".into()), (4, "slots".into(), "2".into())]
        );
        let err = parse_kv("rounds 5", "cfg.txt").unwrap_err().to_string();
        assert!(err.starts_with("cfg.txt:1:"), "{err}");
    }

    #[test]
    fn every_key_is_settable() {
        let values = [
            ("scenario", "crp"),
            ("docs-log2", "6"),
            ("epsilon", "0.5"),
            ("mu0", "0.02"),
            ("crp-n", "10"),
            ("crp-theta", "1.5"),
            ("slots", "3"),
            ("rounds", "50"),
            ("algos", "random, rankedUCB1"),
            ("seeds", "2"),
            ("seed", "9"),
            ("snapshot", "5"),
            ("out", "o.csv"),
            ("dedup", "true"),
            ("anytime", "yes"),
            ("grid-replay", "on"),
            ("exp3-gamma", "0.1"),
            ("contextual-caps", "false"),
        ];
        assert_eq!(values.len(), ExperimentConfig::KEYS.len());
        let mut c = ExperimentConfig::default();
        for (k, v) in values {
            assert!(ExperimentConfig::KEYS.contains(&k));
            c.set(k, v).unwrap();
        }
        assert_eq!(c.algorithms, vec!["random", "rankedUCB1"]);
        c.validate().unwrap();
        let spec = c.scenario_spec().unwrap();
        assert_eq!(spec.kind, ScenarioKind::Crp { n: 10, theta: 1.5 });
        assert_eq!((spec.docs_log2, spec.epsilon, spec.mu0), (6, 0.5, 0.02));
    }

    #[test]
    fn validation_lists_every_problem() {
        let c = ExperimentConfig {
            rounds: 0,
            slots: 0,
            algorithms: vec!["nope".into()],
            ..ExperimentConfig::default()
        };
        let msg = c.validate().unwrap_err().to_string();
        for needle in ["rounds", "slots", "nope"] {
            assert!(msg.contains(needle), "{msg}");
        }
        let d = ExperimentConfig {
            scenario: Scenario::Discussion3,
            slots: 4,
            ..ExperimentConfig::default()
        };
        assert!(d.validate().is_err());
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in ["two-peak", "crp", "small-two-peak", "discussion3", "file:a/b.txt"] {
            assert_eq!(s.parse::<Scenario>().unwrap().to_string(), s);
        }
        assert!("three-peak".parse::<Scenario>().is_err());
    }
}
