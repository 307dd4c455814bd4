use crate::numcore::LogProb;
use crate::registry::Registry;

/// Predicate deciding whether a prefix's decoder score is deleted (DCond) or
/// computed (ACond) at the current frame.
pub trait TaCondition: Send + Sync {
    fn name(&self) -> &str;

    /// `beam` is the pruned prefix set of this frame, `post_row` its CTC
    /// posteriors.
    fn check(&self, prefix: &[u32], beam: &[Vec<u32>], post_row: &[LogProb]) -> bool;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Never;

impl TaCondition for Never {
    fn name(&self) -> &str {
        "never"
    }

    fn check(&self, _: &[u32], _: &[Vec<u32>], _: &[LogProb]) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Always;

impl TaCondition for Always {
    fn name(&self) -> &str {
        "always"
    }

    fn check(&self, _: &[u32], _: &[Vec<u32>], _: &[LogProb]) -> bool {
        true
    }
}

/// Registry holding `never` and `always`.
pub fn conditions() -> Registry<dyn TaCondition> {
    let mut r: Registry<dyn TaCondition> = Registry::new("condition");
    r.register("never", |_: &()| Ok(Box::new(Never) as Box<dyn TaCondition>))
        .expect("fresh registry");
    r.register("always", |_: &()| Ok(Box::new(Always) as Box<dyn TaCondition>))
        .expect("fresh registry");
    r
}
