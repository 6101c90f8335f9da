//! Score fusion, max-object selection, the exclusive-object prior, and
//! exclusive-object regrouping.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub type ActionId = u32;

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::validation(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(())
}

/// Final triplet score: product of action, interactiveness, human and object scores.
pub fn fuse_scores(action: f64, interactiveness: f64, human: f64, object: f64) -> Result<f64> {
    check_unit("action score", action)?;
    check_unit("interactiveness score", interactiveness)?;
    check_unit("human score", human)?;
    check_unit("object score", object)?;
    Ok(action * interactiveness * human * object)
}

/// Per-image `humans x objects x actions` scores together with the factors
/// they were fused from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTensor {
    num_humans: usize,
    num_objects: usize,
    num_actions: usize,
    /// `[h][o][a]`, flattened.
    action: Vec<f64>,
    /// `[h][o]`, flattened.
    interactiveness: Vec<f64>,
    human: Vec<f64>,
    object: Vec<f64>,
    fused: Vec<f64>,
}

impl ScoreTensor {
    pub fn from_factors(
        num_actions: usize,
        action: Vec<f64>,
        interactiveness: Vec<f64>,
        human: Vec<f64>,
        object: Vec<f64>,
    ) -> Result<Self> {
        let (nh, no) = (human.len(), object.len());
        if action.len() != nh * no * num_actions || interactiveness.len() != nh * no {
            return Err(Error::Shape(format!(
                "score factors do not match {nh} humans x {no} objects x {num_actions} actions"
            )));
        }
        let mut fused = Vec::with_capacity(action.len());
        for h in 0..nh {
            for o in 0..no {
                for a in 0..num_actions {
                    fused.push(fuse_scores(
                        action[(h * no + o) * num_actions + a],
                        interactiveness[h * no + o],
                        human[h],
                        object[o],
                    )?);
                }
            }
        }
        Ok(ScoreTensor {
            num_humans: nh,
            num_objects: no,
            num_actions,
            action,
            interactiveness,
            human,
            object,
            fused,
        })
    }

    /// Treats `scores[h][o][a]` as already-fused values (other factors set to 1).
    pub fn from_fused(num_humans: usize, num_objects: usize, num_actions: usize, scores: Vec<f64>) -> Result<Self> {
        Self::from_factors(
            num_actions,
            scores,
            vec![1.0; num_humans * num_objects],
            vec![1.0; num_humans],
            vec![1.0; num_objects],
        )
    }

    pub fn num_humans(&self) -> usize {
        self.num_humans
    }
    pub fn num_objects(&self) -> usize {
        self.num_objects
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn get(&self, h: usize, o: usize, a: usize) -> f64 {
        self.fused[(h * self.num_objects + o) * self.num_actions + a]
    }

    /// `(action, interactiveness, human, object)` factors of one entry.
    pub fn factors(&self, h: usize, o: usize, a: usize) -> (f64, f64, f64, f64) {
        (
            self.action[(h * self.num_objects + o) * self.num_actions + a],
            self.interactiveness[h * self.num_objects + o],
            self.human[h],
            self.object[o],
        )
    }
}

/// Final `<human, action, object>` detection.
#[derive(Debug, Clone, PartialEq)]
pub struct HoiTriplet {
    pub image_id: String,
    pub human: BBox,
    pub action: ActionId,
    pub object: Option<BBox>,
    pub score: f64,
}

/// One `(human, action)` decision. `object` is `None` when no object is available.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub human: usize,
    pub action: ActionId,
    pub object: Option<usize>,
    pub score: f64,
}

/// Highest-scoring object for every `(human, action)`; ties go to the lowest
/// object index. Output is ordered by human, then action.
pub fn max_object_select(scores: &ScoreTensor) -> Vec<Assignment> {
    if scores.num_objects == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(scores.num_humans * scores.num_actions);
    for h in 0..scores.num_humans {
        for a in 0..scores.num_actions {
            let mut best = 0;
            for o in 1..scores.num_objects {
                if scores.get(h, o, a) > scores.get(h, best, a) {
                    best = o;
                }
            }
            out.push(Assignment {
                human: h,
                action: a as ActionId,
                object: Some(best),
                score: scores.get(h, best, a),
            });
        }
    }
    out
}

/// Exclusivity statistics of one action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorEntry {
    pub q_e: u64,
    pub q_s: u64,
    pub exclusive: bool,
}

/// Per-action exclusivity prior, serialized as `{action_id: {q_e, q_s, exclusive}}`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExclusivePrior {
    pub actions: BTreeMap<ActionId, PriorEntry>,
}

impl ExclusivePrior {
    pub fn is_exclusive(&self, action: ActionId) -> bool {
        self.actions.get(&action).is_some_and(|e| e.exclusive)
    }

    pub fn exclusive_actions(&self) -> Vec<ActionId> {
        self.actions
            .iter()
            .filter(|(_, e)| e.exclusive)
            .map(|(&a, _)| a)
            .collect()
    }
}

/// A ground-truth pair reduced to what the prior needs: instance identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairInstance<'a> {
    pub image: &'a str,
    pub human: u64,
    pub object: u64,
    pub action: ActionId,
}

/// Counts, per action, pairs whose object is paired with exactly one human in
/// its image (`q_e`) versus more than one (`q_s`), and flags actions with
/// `q_e / (q_e + q_s) > beta`. Duplicate pairs are counted once.
/// Every id in `vocabulary` gets an entry, even with no pairs.
pub fn compute_exclusive_prior<'a>(
    pairs: impl IntoIterator<Item = PairInstance<'a>>,
    vocabulary: &[ActionId],
    beta: f64,
) -> Result<ExclusivePrior> {
    check_unit("beta", beta)?;
    let unique: BTreeSet<(ActionId, &str, u64, u64)> = pairs
        .into_iter()
        .map(|p| (p.action, p.image, p.object, p.human))
        .collect();
    let mut humans_per_object: HashMap<(ActionId, &str, u64), usize> = HashMap::new();
    for &(a, img, obj, _) in &unique {
        *humans_per_object.entry((a, img, obj)).or_default() += 1;
    }
    let mut counts: BTreeMap<ActionId, (u64, u64)> = vocabulary.iter().map(|&a| (a, (0, 0))).collect();
    for &(a, img, obj, _) in &unique {
        let c = counts.entry(a).or_default();
        if humans_per_object[&(a, img, obj)] == 1 {
            c.0 += 1;
        } else {
            c.1 += 1;
        }
    }
    let actions = counts
        .into_iter()
        .map(|(a, (q_e, q_s))| {
            let total = q_e + q_s;
            let exclusive = total > 0 && (q_e as f64 / total as f64) > beta;
            (a, PriorEntry { q_e, q_s, exclusive })
        })
        .collect();
    Ok(ExclusivePrior { actions })
}

/// Regrouping thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegroupConfig {
    /// A conflict is resolved only when its best pair scores above this.
    pub s_min: f64,
    /// Exclusivity ratio threshold used when building the prior.
    pub beta: f64,
}

impl Default for RegroupConfig {
    fn default() -> Self {
        RegroupConfig { s_min: 0.5, beta: 0.95 }
    }
}

impl RegroupConfig {
    pub fn validate(&self) -> Result<()> {
        check_unit("s_min", self.s_min)?;
        check_unit("beta", self.beta)
    }
}

/// Resolves shared objects for exclusive actions.
///
/// For each exclusive action, conflicts (objects held by several unsettled
/// humans) are handled highest best-score first. When the best pair scores
/// above `s_min`, its human keeps the object and is settled; the others, in
/// descending score order, move to their best object not held by a settled
/// human, or drop out when none is left. Conflicts whose best pair is at or
/// below `s_min` stay as they are. Non-exclusive actions pass through.
///
/// `initial` is the output of [`max_object_select`]. Ties break toward the
/// lowest index. The result keeps the `(human, action)` order of `initial`,
/// minus dropped humans.
pub fn exclusive_regroup(
    scores: &ScoreTensor,
    initial: &[Assignment],
    prior: &ExclusivePrior,
    cfg: &RegroupConfig,
) -> Result<Vec<Assignment>> {
    cfg.validate()?;
    let mut by_action: BTreeMap<ActionId, Vec<Assignment>> = BTreeMap::new();
    for asg in initial {
        by_action.entry(asg.action).or_default().push(*asg);
    }
    let mut resolved: HashMap<(usize, ActionId), Assignment> = HashMap::new();
    for (action, group) in by_action {
        let out = if prior.is_exclusive(action) {
            regroup_action(scores, action, &group, cfg.s_min)
        } else {
            group
        };
        resolved.extend(out.into_iter().map(|a| ((a.human, a.action), a)));
    }
    Ok(initial
        .iter()
        .filter_map(|a| resolved.get(&(a.human, a.action)).copied())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Holding { object: usize, score: f64 },
    Dropped,
}

fn regroup_action(scores: &ScoreTensor, action: ActionId, group: &[Assignment], s_min: f64) -> Vec<Assignment> {
    let a = action as usize;
    let mut slots: BTreeMap<usize, Slot> = group
        .iter()
        .map(|g| {
            let slot = match g.object {
                Some(object) => Slot::Holding { object, score: g.score },
                None => Slot::Dropped,
            };
            (g.human, slot)
        })
        .collect();
    let mut settled: BTreeSet<usize> = BTreeSet::new();
    let mut claimed: BTreeSet<usize> = BTreeSet::new();

    loop {
        // Unsettled holders per object.
        let mut holders: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for (&h, slot) in &slots {
            if let Slot::Holding { object, score } = *slot {
                if !settled.contains(&h) {
                    holders.entry(object).or_default().push((h, score));
                }
            }
        }
        let best_of = |hs: &[(usize, f64)]| {
            hs.iter()
                .copied()
                .fold(None::<(usize, f64)>, |acc, (h, s)| match acc {
                    Some((_, bs)) if bs >= s => acc,
                    _ => Some((h, s)),
                })
                .expect("non-empty")
        };
        let mut target: Option<(usize, usize, f64)> = None;
        for (&object, hs) in &holders {
            if hs.len() < 2 {
                continue;
            }
            let (winner, best) = best_of(hs);
            if best <= s_min {
                continue;
            }
            if target.is_none_or(|(_, _, s)| best > s) {
                target = Some((object, winner, best));
            }
        }
        let Some((object, winner, _)) = target else {
            break;
        };

        settled.insert(winner);
        claimed.insert(object);
        let mut losers: Vec<(usize, f64)> = holders[&object].iter().copied().filter(|&(h, _)| h != winner).collect();
        losers.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        for (h, _) in losers {
            let next =
                (0..scores.num_objects())
                    .filter(|o| !claimed.contains(o))
                    .fold(None::<(usize, f64)>, |acc, o| {
                        let s = scores.get(h, o, a);
                        match acc {
                            Some((_, bs)) if bs >= s => acc,
                            _ => Some((o, s)),
                        }
                    });
            let slot = match next {
                Some((object, score)) => Slot::Holding { object, score },
                None => Slot::Dropped,
            };
            slots.insert(h, slot);
        }
    }

    slots
        .into_iter()
        .filter_map(|(h, slot)| match slot {
            Slot::Holding { object, score } => Some(Assignment {
                human: h,
                action,
                object: Some(object),
                score,
            }),
            Slot::Dropped => None,
        })
        .collect()
}
