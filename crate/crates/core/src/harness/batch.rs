//! Multi-seed runs and aggregate metrics.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{PolicyKind, RunConfig};
use super::episode::Outcome;
use super::run::{run_episode, RunContext};
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub episode_id: String,
    pub outcome: Outcome,
    pub steps: usize,
    pub mean_speed: f64,
    pub lane_changes: usize,
    pub deviations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub policy: PolicyKind,
    pub episodes: usize,
    pub passes: usize,
    pub pass_rate: f64,
    /// Mean over episodes of each episode's mean ego speed, m/s.
    pub mean_speed: f64,
    pub lane_changes_per_episode: f64,
    /// Episodes that ended in an ego collision.
    pub collisions: usize,
    /// Seeds whose episode ended in an error.
    pub errored_seeds: Vec<u64>,
    pub per_episode: Vec<EpisodeSummary>,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum MetricsLine<'a> {
    Episode(&'a EpisodeSummary),
    Summary {
        policy: PolicyKind,
        episodes: usize,
        passes: usize,
        pass_rate: f64,
        mean_speed: f64,
        lane_changes_per_episode: f64,
        collisions: usize,
        errored_seeds: &'a [u64],
    },
}

impl Metrics {
    /// One line per episode (sorted by seed), then a summary line.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), HarnessError> {
        let io = |e: std::io::Error| HarnessError::Io(format!("{}: {e}", path.display()));
        let mut f = std::fs::File::create(path).map_err(io)?;
        for e in &self.per_episode {
            writeln!(
                f,
                "{}",
                serde_json::to_string(&MetricsLine::Episode(e)).expect("serializes")
            )
            .map_err(io)?;
        }
        let summary = MetricsLine::Summary {
            policy: self.policy,
            episodes: self.episodes,
            passes: self.passes,
            pass_rate: self.pass_rate,
            mean_speed: self.mean_speed,
            lane_changes_per_episode: self.lane_changes_per_episode,
            collisions: self.collisions,
            errored_seeds: &self.errored_seeds,
        };
        writeln!(
            f,
            "{}",
            serde_json::to_string(&summary).expect("serializes")
        )
        .map_err(io)?;
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:>6}  {:<10}  {:>5}  {:>10}  {:>12}  {:>10}\n",
            "seed", "outcome", "steps", "mean_speed", "lane_changes", "deviations"
        );
        for e in &self.per_episode {
            s.push_str(&format!(
                "{:>6}  {:<10}  {:>5}  {:>10.2}  {:>12}  {:>10}\n",
                e.seed,
                e.outcome.name(),
                e.steps,
                e.mean_speed,
                e.lane_changes,
                e.deviations
            ));
        }
        s.push_str(&format!(
            "policy {}: {} episodes, pass rate {:.2}, mean speed {:.2} m/s, {:.2} lane changes/episode, {} collisions",
            self.policy.name(),
            self.episodes,
            self.pass_rate,
            self.mean_speed,
            self.lane_changes_per_episode,
            self.collisions
        ));
        if !self.errored_seeds.is_empty() {
            s.push_str(&format!("\nerrored seeds: {:?}", self.errored_seeds));
        }
        s
    }
}

/// Run every seed (up to `jobs` at a time) and aggregate after sorting by
/// seed. Episode errors count as failures; the batch continues. With
/// `episode_dir`, each episode is also recorded there.
pub fn run_batch(
    config: &RunConfig,
    seeds: &[u64],
    jobs: usize,
    ctx: &RunContext,
    episode_dir: Option<&Path>,
) -> Result<Metrics, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::Usage(
            "a batch needs at least one seed".into(),
        ));
    }
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut rows: Vec<EpisodeSummary> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let path = episode_dir.map(|d| {
                    d.join(format!(
                        "{}.jsonl",
                        super::run::episode_id(config.policy, seed)
                    ))
                });
                match run_episode(config, seed, ctx, path.as_deref()) {
                    Ok(r) => {
                        let o = r
                            .outcome
                            .as_ref()
                            .expect("finished episodes carry an outcome");
                        EpisodeSummary {
                            seed,
                            episode_id: r.header.episode_id.clone(),
                            outcome: o.outcome,
                            steps: o.steps,
                            mean_speed: o.mean_speed,
                            lane_changes: o.lane_changes,
                            deviations: r.steps.iter().filter(|s| s.deviation.is_some()).count(),
                            error: o.error.clone(),
                            wall_time_ms: o.wall_time_ms,
                        }
                    }
                    Err(e) => EpisodeSummary {
                        seed,
                        episode_id: super::run::episode_id(config.policy, seed),
                        outcome: Outcome::Error,
                        steps: 0,
                        mean_speed: 0.0,
                        lane_changes: 0,
                        deviations: 0,
                        error: Some(e.to_string()),
                        wall_time_ms: 0,
                    },
                }
            })
            .collect()
    });
    rows.sort_by_key(|r| r.seed);
    let n = rows.len();
    let passes = rows.iter().filter(|r| r.outcome == Outcome::Pass).count();
    Ok(Metrics {
        policy: config.policy,
        episodes: n,
        passes,
        pass_rate: passes as f64 / n as f64,
        mean_speed: rows.iter().map(|r| r.mean_speed).sum::<f64>() / n as f64,
        lane_changes_per_episode: rows.iter().map(|r| r.lane_changes as f64).sum::<f64>()
            / n as f64,
        collisions: rows
            .iter()
            .filter(|r| r.outcome == Outcome::Collision)
            .count(),
        errored_seeds: rows
            .iter()
            .filter(|r| r.outcome == Outcome::Error)
            .map(|r| r.seed)
            .collect(),
        per_episode: rows,
    })
}
