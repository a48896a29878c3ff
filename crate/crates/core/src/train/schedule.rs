use serde::{Deserialize, Serialize};

/// One training step in the interleaved schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    /// Local step on object group `g`.
    Local(usize),
    Global,
}

/// Passes of `{for each group: local_block × Local(g), then global_block ×
/// Global}`, truncated after `total` steps. With no groups a pass is
/// `max(global_block, 1)` global steps.
#[derive(Clone, Debug)]
pub struct Schedule {
    pattern: Vec<StepKind>,
    total: u64,
    emitted: u64,
}

impl Schedule {
    pub fn new(n_groups: usize, local_block: u32, global_block: u32, total: u64) -> Self {
        let mut pattern = Vec::new();
        for g in 0..n_groups {
            pattern.extend(std::iter::repeat_n(StepKind::Local(g), local_block as usize));
            pattern.extend(std::iter::repeat_n(StepKind::Global, global_block as usize));
        }
        if pattern.is_empty() {
            pattern.extend(std::iter::repeat_n(StepKind::Global, global_block.max(1) as usize));
        }
        Self { pattern, total, emitted: 0 }
    }

    /// Local-only schedule for a single group, with globals after each block.
    pub fn for_group(group: usize, local_block: u32, global_block: u32, total: u64) -> Self {
        let mut s = Self::new(1, local_block, global_block, total);
        for k in &mut s.pattern {
            if let StepKind::Local(_) = k {
                *k = StepKind::Local(group);
            }
        }
        s
    }

    pub fn pass_len(&self) -> usize {
        self.pattern.len()
    }
}

impl Iterator for Schedule {
    type Item = StepKind;

    fn next(&mut self) -> Option<StepKind> {
        if self.emitted >= self.total {
            return None;
        }
        let k = self.pattern[(self.emitted % self.pattern.len() as u64) as usize];
        self.emitted += 1;
        Some(k)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.total - self.emitted) as usize;
        (left, Some(left))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EventKind {
    Local { object: String },
    Global,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLosses {
    /// L2 norm of the scaled guidance gradient.
    pub guidance_norm: f64,
    /// Weighted shape loss added in this step.
    pub shape: f64,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainEvent {
    pub iter: u64,
    pub kind: EventKind,
    pub losses: EventLosses,
    pub wall_ms: f64,
    #[serde(default)]
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_objects_two_passes() {
        let got: Vec<StepKind> = Schedule::new(3, 10, 5, 90).collect();
        let mut want = Vec::new();
        for _ in 0..2 {
            for g in 0..3 {
                want.extend([StepKind::Local(g); 10]);
                want.extend([StepKind::Global; 5]);
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn truncates_mid_pass() {
        let got: Vec<StepKind> = Schedule::new(2, 10, 5, 33).collect();
        assert_eq!(got.len(), 33);
        assert_eq!(got[30..], [StepKind::Local(0); 3]);
    }

    #[test]
    fn default_global_share() {
        let total = 15_000u64;
        let n_global = Schedule::new(2, 10, 5, total).filter(|k| *k == StepKind::Global).count() as f64;
        assert!((n_global - total as f64 / 3.0).abs() <= 5.0);
    }

    #[test]
    fn empty_scene_runs_globals() {
        assert_eq!(Schedule::new(0, 10, 0, 3).collect::<Vec<_>>(), vec![StepKind::Global; 3]);
    }

    #[test]
    fn event_json_shape() {
        let e = TrainEvent {
            iter: 3,
            kind: EventKind::Local { object: "lamp".into() },
            losses: EventLosses { guidance_norm: 0.5, shape: 0.25 },
            wall_ms: 1.0,
            skipped: false,
            error: None,
        };
        let s = serde_json::to_string(&e).unwrap();
        assert!(s.contains(r#""kind":{"type":"local","object":"lamp"}"#), "{s}");
        assert_eq!(serde_json::from_str::<TrainEvent>(&s).unwrap(), e);
    }
}
