use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bbox::BBox;
use crate::graph::{CONTAIN, PICK_PLACE, ROTATE, SLIDE};

use super::step::StepInput;
use super::{LayoutError, LayoutState, Lgf};

/// Step size of the rule-based model, per frame and axis.
pub const RULE_ALPHA: f64 = 0.1;

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Constant-step linear trajectories: while a moving action is running
/// (`start < t <= end`), its subject steps `alpha` along each axis towards
/// the action's target. Everything else stays put.
#[derive(Clone, Debug)]
pub struct RuleLgf {
    pub alpha: f64,
}

impl Default for RuleLgf {
    fn default() -> Self {
        RuleLgf { alpha: RULE_ALPHA }
    }
}

impl Lgf for RuleLgf {
    fn predict(&mut self, input: &StepInput) -> Result<LayoutState, LayoutError> {
        let mut boxes = input.prev.clone();
        let t = input.frame;
        for e in &input.edges {
            let name = input.vocab.action_name(e.action);
            match name {
                SLIDE | PICK_PLACE | CONTAIN => {
                    if e.start < t && t <= e.end {
                        let b = &mut boxes[e.subject];
                        let from = input.prev[e.subject];
                        b.x += self.alpha * sign(e.target[0] - from.x);
                        b.y += self.alpha * sign(e.target[1] - from.y);
                    }
                }
                ROTATE => {}
                other => log::warn!("rule model has no rule for action `{other}`; keeping boxes"),
            }
        }
        Ok(LayoutState {
            boxes: boxes.into_iter().map(BBox::clamped).collect(),
            descriptors: None,
        })
    }
}

/// Independent uniformly random boxes every frame.
#[derive(Clone, Debug)]
pub struct RandomLgf {
    rng: ChaCha8Rng,
}

impl RandomLgf {
    pub fn new(seed: u64) -> Self {
        RandomLgf {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Lgf for RandomLgf {
    fn predict(&mut self, input: &StepInput) -> Result<LayoutState, LayoutError> {
        let boxes = (0..input.num_objects())
            .map(|_| {
                let w = self.rng.random_range(0.1..=0.24);
                let h = self.rng.random_range(0.1..=0.24);
                let x = self.rng.random_range(w / 2.0..=1.0 - w / 2.0);
                let y = self.rng.random_range(h / 2.0..=1.0 - h / 2.0);
                BBox::new(x, y, w, h)
            })
            .collect();
        Ok(LayoutState {
            boxes,
            descriptors: None,
        })
    }
}
