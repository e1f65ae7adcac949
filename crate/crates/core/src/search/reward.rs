//! Reward functions. A reward maps a candidate to a real number and must be
//! pure: the same candidate always gets the same reward.

use std::io::Write;
use std::process::{Command, Stdio};

use super::CandidateArchitecture;
use crate::cost::count_model;
use crate::error::{Error, Result};
use crate::graph::{EdgeKind, BlockId};
use crate::head::ModelWithHead;

pub trait RewardFn: Sync {
    fn name(&self) -> String;
    fn evaluate(&self, c: &CandidateArchitecture) -> std::result::Result<f64, String>;
}

impl<F> RewardFn for F
where
    F: Fn(&CandidateArchitecture) -> std::result::Result<f64, String> + Sync,
{
    fn name(&self) -> String {
        "custom".into()
    }

    fn evaluate(&self, c: &CandidateArchitecture) -> std::result::Result<f64, String> {
        self(c)
    }
}

/// Negated backbone multiply-adds at a fixed input resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NegFlops {
    pub resolution: u32,
}

impl Default for NegFlops {
    fn default() -> Self {
        Self { resolution: 256 }
    }
}

fn backbone_madds(c: &CandidateArchitecture, resolution: u32) -> std::result::Result<u64, String> {
    let m = ModelWithHead::backbone(c.graph.clone()).map_err(|e| e.to_string())?;
    let report = count_model(&m, resolution).map_err(|e| e.to_string())?;
    Ok(report.grand_total.madds)
}

impl RewardFn for NegFlops {
    fn name(&self) -> String {
        format!("builtin:neg-flops@{}", self.resolution)
    }

    fn evaluate(&self, c: &CandidateArchitecture) -> std::result::Result<f64, String> {
        Ok(-(backbone_madds(c, self.resolution)? as f64))
    }
}

/// Synthetic structural score: rewards output blocks that see many scales
/// and long-range connections, penalizes cost. Not a proxy for accuracy;
/// it exists to exercise the search loop with a non-trivial landscape.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GraphScore;

impl RewardFn for GraphScore {
    fn name(&self) -> String {
        "builtin:graph-score".into()
    }

    fn evaluate(&self, c: &CandidateArchitecture) -> std::result::Result<f64, String> {
        let g = &c.graph;
        let idx = g.index();
        let mut blocks: Vec<_> = g.blocks().collect();
        blocks.sort_by_key(|b| b.ordering);
        // Levels visible from each block: its own plus everything upstream.
        let mut seen: std::collections::HashMap<BlockId, u8> = Default::default();
        let mut prev_stem: Option<BlockId> = None;
        for b in &blocks {
            let mut mask = 1u8 << b.level.get();
            if b.is_stem {
                if let Some(p) = prev_stem {
                    mask |= seen[&p];
                }
                prev_stem = Some(b.id);
            }
            for e in g.incoming(b.id) {
                mask |= seen.get(&e.parent).copied().unwrap_or(0);
            }
            seen.insert(b.id, mask);
        }
        let diversity: u32 = g.output_blocks().map(|b| seen[&b.id].count_ones()).sum();
        let long_range = g
            .edges
            .iter()
            .filter(|e| e.kind == EdgeKind::Connection)
            .filter(|e| idx[&e.child].ordering - idx[&e.parent].ordering >= 3)
            .count();
        let gmadds = backbone_madds(c, 256)? as f64 / 1e9;
        Ok(diversity as f64 + 0.5 * long_range as f64 - 4.0 * gmadds.ln_1p())
    }
}

/// External reward: runs `sh -c command`, writes the candidate JSON (one
/// line) to its stdin and reads a single real number from its stdout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecReward {
    pub command: String,
}

impl RewardFn for ExecReward {
    fn name(&self) -> String {
        format!("exec:{}", self.command)
    }

    fn evaluate(&self, c: &CandidateArchitecture) -> std::result::Result<f64, String> {
        let payload = c.to_json().map_err(|e| e.to_string())?;
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| format!("cannot start `{}`: {e}", self.command))?;
        if let Some(mut stdin) = child.stdin.take() {
            // A command that ignores its input may close the pipe early.
            let _ = stdin.write_all(payload.as_bytes()).and_then(|_| stdin.write_all(b"\n"));
        }
        let out = child.wait_with_output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr);
            return Err(format!("`{}` exited with {}: {}", self.command, out.status, stderr.trim()));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        let text = stdout.trim();
        text.parse::<f64>()
            .map_err(|_| format!("`{}` printed `{text}`, expected one number", self.command))
    }
}

/// Parses `builtin:neg-flops[@RES]`, `builtin:graph-score` or `exec:CMD`.
pub fn parse_reward(spec: &str) -> Result<Box<dyn RewardFn>> {
    if let Some(cmd) = spec.strip_prefix("exec:") {
        if cmd.trim().is_empty() {
            return Err(Error::SearchConfig("exec reward needs a command".into()));
        }
        return Ok(Box::new(ExecReward { command: cmd.to_string() }));
    }
    match spec.split_once('@') {
        Some(("builtin:neg-flops", res)) => {
            let resolution = res
                .parse()
                .map_err(|_| Error::SearchConfig(format!("bad resolution in reward `{spec}`")))?;
            Ok(Box::new(NegFlops { resolution }))
        }
        None if spec == "builtin:neg-flops" => Ok(Box::new(NegFlops::default())),
        None if spec == "builtin:graph-score" => Ok(Box::new(GraphScore)),
        _ => Err(Error::SearchConfig(format!(
            "unknown reward `{spec}` (expected builtin:neg-flops, builtin:graph-score or exec:CMD)"
        ))),
    }
}
