//! Normalized advantages.
//!
//! The default mode normalizes each (task type, role) group against its own
//! batch mean and population standard deviation. The global mode uses one
//! baseline for the whole batch; the running mode keeps per-group statistics
//! accumulated across iterations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::{Role, RolloutRecord, TaskType};

/// Standard deviations at or below this are treated as zero.
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvantageMode {
    /// Per (task type, role) group, per batch.
    #[default]
    Trr,
    /// One baseline over the whole batch.
    Global,
    /// Per group, accumulated across batches.
    Running,
}

impl std::str::FromStr for AdvantageMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "trr" => Ok(Self::Trr),
            "global" => Ok(Self::Global),
            "running" => Ok(Self::Running),
            other => Err(format!("unknown advantage mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    /// `None` for the global baseline.
    pub group: Option<(TaskType, Role)>,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn z(r: f64, mean: f64, std: f64) -> f64 {
    if std > EPSILON {
        (r - mean) / std
    } else {
        0.0
    }
}

fn groups(records: &[RolloutRecord]) -> BTreeMap<(TaskType, Role), Vec<usize>> {
    let mut out: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        out.entry(r.group()).or_default().push(i);
    }
    out
}

/// Fills `advantage` per (task type, role) group. Groups whose rewards do not
/// vary get zero advantages.
pub fn compute_trr(records: &mut [RolloutRecord]) -> Vec<BaselineStats> {
    let mut stats = Vec::new();
    for (group, idx) in groups(records) {
        let rewards: Vec<f64> = idx.iter().map(|&i| records[i].reward).collect();
        let (mean, std) = mean_std(&rewards);
        for &i in &idx {
            records[i].advantage = z(records[i].reward, mean, std);
        }
        stats.push(BaselineStats {
            group: Some(group),
            mean,
            std,
            count: idx.len(),
        });
    }
    stats
}

/// Fills `advantage` against a single baseline over the whole batch.
pub fn compute_global(records: &mut [RolloutRecord]) -> Option<BaselineStats> {
    if records.is_empty() {
        return None;
    }
    let rewards: Vec<f64> = records.iter().map(|r| r.reward).collect();
    let (mean, std) = mean_std(&rewards);
    for r in records.iter_mut() {
        r.advantage = z(r.reward, mean, std);
    }
    Some(BaselineStats {
        group: None,
        mean,
        std,
        count: records.len(),
    })
}

/// Welford accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStat {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningStat {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Population standard deviation of everything pushed so far.
    pub fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningEntry {
    pub task_type: TaskType,
    pub role: Role,
    pub stat: RunningStat,
}

/// Per-group statistics that persist across batches.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningBaselines {
    pub entries: Vec<RunningEntry>,
}

impl RunningBaselines {
    fn stat_mut(&mut self, task_type: TaskType, role: Role) -> &mut RunningStat {
        let pos = match self.entries.iter().position(|e| e.task_type == task_type && e.role == role) {
            Some(p) => p,
            None => {
                self.entries.push(RunningEntry {
                    task_type,
                    role,
                    stat: RunningStat::default(),
                });
                self.entries.sort_by_key(|e| (e.task_type, e.role));
                self.entries.iter().position(|e| e.task_type == task_type && e.role == role).expect("just inserted")
            }
        };
        &mut self.entries[pos].stat
    }

    /// Folds the batch into the running statistics, then normalizes it
    /// against them.
    pub fn apply(&mut self, records: &mut [RolloutRecord]) -> Vec<BaselineStats> {
        let mut stats = Vec::new();
        for ((t, role), idx) in groups(records) {
            let stat = self.stat_mut(t, role);
            for &i in &idx {
                stat.push(records[i].reward);
            }
            let (mean, std) = (stat.mean, stat.std());
            for &i in &idx {
                records[i].advantage = z(records[i].reward, mean, std);
            }
            stats.push(BaselineStats {
                group: Some((t, role)),
                mean,
                std,
                count: stat.count as usize,
            });
        }
        stats
    }
}
