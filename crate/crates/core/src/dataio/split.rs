use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EpochSet;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Train on the target's first session, test on its second.
    Individual,
    /// Other subjects plus the target's first session.
    Sd,
    /// Other subjects only.
    Si,
    /// `Si` pretraining, then fine-tuning on the target's first session.
    SiFt,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Individual, Scheme::Sd, Scheme::Si, Scheme::SiFt];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Individual => "individual",
            Scheme::Sd => "sd",
            Scheme::Si => "si",
            Scheme::SiFt => "si_ft",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '+'], "_").as_str() {
            "individual" => Ok(Scheme::Individual),
            "sd" => Ok(Scheme::Sd),
            "si" => Ok(Scheme::Si),
            "si_ft" => Ok(Scheme::SiFt),
            other => Err(Error::Lookup(format!("unknown scheme `{other}`"))),
        }
    }
}

/// One trial of one set in a dataset slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrialRef {
    pub set: usize,
    pub trial: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeSplit {
    pub scheme: Scheme,
    pub target_subject: String,
    pub train: Vec<TrialRef>,
    pub val: Vec<TrialRef>,
    pub test: Vec<TrialRef>,
    pub fine_tune: Option<Vec<TrialRef>>,
}

impl SchemeSplit {
    /// Size of the training pool before the validation hold-out.
    pub fn pool_len(&self) -> usize {
        self.train.len() + self.val.len()
    }
}

fn check_compatible(sets: &[EpochSet]) -> Result<()> {
    let Some(first) = sets.first() else {
        return Err(Error::EmptyData("no epoch sets".into()));
    };
    for set in &sets[1..] {
        let who = format!("subject {} session {}", set.subject_id, set.session_id);
        if set.montage.names != first.montage.names {
            return Err(Error::Compatibility(format!("{who} uses a different montage")));
        }
        if set.fs != first.fs {
            return Err(Error::Compatibility(format!("{who} sampled at {} Hz, expected {}", set.fs, first.fs)));
        }
        if set.class_names != first.class_names {
            return Err(Error::Compatibility(format!("{who} has different class names")));
        }
        if set.timepoints() != first.timepoints() {
            return Err(Error::Compatibility(format!("{who} has {} timepoints", set.timepoints())));
        }
    }
    Ok(())
}

fn all_trials(set: usize, sets: &[EpochSet]) -> impl Iterator<Item = TrialRef> + '_ {
    (0..sets[set].trials()).map(move |trial| TrialRef { set, trial })
}

/// Stratified, seeded hold-out of `ceil(fraction * pool)` trials.
///
/// Per-class quotas are `floor(fraction * n_c)` topped up by largest
/// remainder (lowest class first on ties) until the total is reached, so each
/// class deviates from its exact share by less than one.
fn stratified_holdout(
    pool: Vec<TrialRef>,
    sets: &[EpochSet],
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<TrialRef>, Vec<TrialRef>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pos, r) in pool.iter().enumerate() {
        by_class.entry(sets[r.set].labels[r.trial]).or_default().push(pos);
    }
    let total = (fraction * pool.len() as f64 - 1e-9).ceil().max(0.0) as usize;
    let mut quotas: Vec<(usize, usize, f64)> = by_class
        .iter()
        .map(|(&c, members)| {
            let exact = fraction * members.len() as f64;
            (c, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(order.len()) {
        if assigned >= total {
            break;
        }
        quotas[i].1 += 1;
        assigned += 1;
    }
    let mut held = vec![false; pool.len()];
    for (c, quota, _) in quotas {
        let mut members = by_class[&c].clone();
        members.shuffle(rng);
        for &pos in members.iter().take(quota) {
            held[pos] = true;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (r, h) in pool.into_iter().zip(held) {
        if h {
            val.push(r);
        } else {
            train.push(r);
        }
    }
    (train, val)
}

/// Assembles train / validation / test (and fine-tune) trial lists for one
/// target subject. Sessions of a subject are ordered by session id; the
/// target must have exactly two.
pub fn split_scheme(
    sets: &[EpochSet],
    scheme: Scheme,
    target_subject: &str,
    val_fraction: f64,
    seed: u64,
) -> Result<SchemeSplit> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Parameter(format!("val_fraction {val_fraction} outside (0, 1)")));
    }
    check_compatible(sets)?;
    let mut target: Vec<usize> = (0..sets.len()).filter(|&i| sets[i].subject_id == target_subject).collect();
    if target.is_empty() {
        return Err(Error::Lookup(format!("unknown subject `{target_subject}`")));
    }
    target.sort_by(|&a, &b| sets[a].session_id.cmp(&sets[b].session_id));
    let [first, second] = target[..] else {
        return Err(Error::Lookup(format!(
            "subject `{target_subject}` has {} sessions, two are required",
            target.len()
        )));
    };
    let mut others: Vec<usize> = (0..sets.len()).filter(|&i| sets[i].subject_id != target_subject).collect();
    others.sort_by(|&a, &b| {
        (sets[a].subject_id.as_str(), sets[a].session_id.as_str())
            .cmp(&(sets[b].subject_id.as_str(), sets[b].session_id.as_str()))
    });
    let other_pool = || others.iter().flat_map(|&s| all_trials(s, sets)).collect::<Vec<_>>();

    let (pool, fine_tune) = match scheme {
        Scheme::Individual => (all_trials(first, sets).collect(), None),
        Scheme::Si => (other_pool(), None),
        Scheme::Sd => {
            let mut pool = other_pool();
            pool.extend(all_trials(first, sets));
            (pool, None)
        }
        Scheme::SiFt => (other_pool(), Some(all_trials(first, sets).collect())),
    };
    if pool.is_empty() {
        return Err(Error::EmptyData(format!("scheme {scheme} leaves no training trials")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, val) = stratified_holdout(pool, sets, val_fraction, &mut rng);
    Ok(SchemeSplit {
        scheme,
        target_subject: target_subject.to_string(),
        train,
        val,
        test: all_trials(second, sets).collect(),
        fine_tune,
    })
}

/// Splits an arbitrary trial list with the same stratified hold-out rule.
pub(crate) fn holdout(refs: Vec<TrialRef>, sets: &[EpochSet], fraction: f64, seed: u64) -> (Vec<TrialRef>, Vec<TrialRef>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    stratified_holdout(refs, sets, fraction, &mut rng)
}
