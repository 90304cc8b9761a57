//! Balanced per-verb annotation sets with episode-disjoint splits.

use super::{extract_clips, label_clip, ClipRef, OracleConfig, OracleError, Verb};
use crate::rng::derived_rng;
use crate::sim::{Episode, ScriptTag};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

/// Positive share each verb must land in.
pub const POSITIVE_BAND: (f64, f64) = (0.3, 0.6);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Annotation {
    pub clip: ClipRef,
    pub verb: Verb,
    pub label: bool,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationSet {
    pub entries: Vec<Annotation>,
    pub per_verb_count: usize,
    /// Split of every episode in the dataset, annotated or not.
    pub splits: BTreeMap<u64, Split>,
}

impl AnnotationSet {
    pub fn verbs(&self) -> Vec<Verb> {
        let mut v: Vec<Verb> = self.entries.iter().map(|e| e.verb).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn positive_fraction(&self, verb: Verb) -> f64 {
        let (pos, n) = self
            .entries
            .iter()
            .filter(|e| e.verb == verb)
            .fold((0usize, 0usize), |(p, n), e| (p + e.label as usize, n + 1));
        pos as f64 / n.max(1) as f64
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &Annotation> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn episodes_in(&self, split: Split) -> Vec<u64> {
        self.splits.iter().filter(|(_, &s)| s == split).map(|(&k, _)| k).collect()
    }
}

/// Split episodes 70/10/20. Episodes are shuffled within each stratum (the
/// script that generated them) and dealt out so every stratum is spread over
/// the three splits in proportion.
pub fn assign_splits<K: Ord + Copy>(episodes: &[(u64, K)], rng: &mut ChaCha20Rng) -> BTreeMap<u64, Split> {
    let mut order: Vec<(u64, K)> = episodes.to_vec();
    order.sort_unstable_by_key(|e| e.0);
    order.dedup_by_key(|e| e.0);
    order.shuffle(rng);
    order.sort_by_key(|e| e.1);
    let n = order.len();
    let n_train = (0.7 * n as f64).round() as usize;
    let n_dev = (0.1 * n as f64).round() as usize;
    let quotas = [n_train, n_dev, n - n_train - n_dev];
    let mut taken = [0usize; 3];
    let mut out = BTreeMap::new();
    for (i, (seed, _)) in order.into_iter().enumerate() {
        // largest shortfall against the proportional target so far
        let deficit = |k: usize| quotas[k] as f64 * (i + 1) as f64 / n as f64 - taken[k] as f64;
        let k = (0..3)
            .filter(|&k| taken[k] < quotas[k])
            .max_by(|&a, &b| deficit(a).total_cmp(&deficit(b)).then(b.cmp(&a)))
            .expect("quotas sum to n");
        taken[k] += 1;
        out.insert(seed, Split::ALL[k]);
    }
    out
}

struct PoolClip {
    clip: ClipRef,
    split: Split,
    labels: Vec<bool>,
}

/// Sample `per_verb` labelled clips per verb with a positive share inside
/// [`POSITIVE_BAND`], split 70/10/20 by episode.
pub fn build_annotation_set(
    episodes: &[Episode],
    verbs: &[Verb],
    per_verb: usize,
    stride: usize,
    oracle: &OracleConfig,
    seed: u64,
) -> Result<AnnotationSet, OracleError> {
    let strata: Vec<(u64, ScriptTag)> = episodes.iter().map(|e| (e.seed, e.script_tag)).collect();
    let splits = assign_splits(&strata, &mut derived_rng(seed, "splits"));

    let pool: Vec<PoolClip> = episodes
        .par_iter()
        .map(|ep| {
            extract_clips(ep, stride).map(|clips| {
                clips
                    .iter()
                    .map(|c| PoolClip {
                        clip: c.reference,
                        split: splits[&ep.seed],
                        labels: verbs.iter().map(|&v| label_clip(c, v, oracle)).collect(),
                    })
                    .collect::<Vec<_>>()
            })
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();

    let quota_train = (0.7 * per_verb as f64).round() as usize;
    let quota_dev = (0.1 * per_verb as f64).round() as usize;
    let quotas = [quota_train, quota_dev, per_verb - quota_train - quota_dev];

    let mut entries = Vec::with_capacity(per_verb * verbs.len());
    for (vi, &verb) in verbs.iter().enumerate() {
        let mut rng = derived_rng(seed, &format!("verb/{verb}"));
        let target = rng.gen_range(0.35..0.55);
        let unbalanced = |reason: String| OracleError::Unbalanced { verb, reason };

        let mut pos_pool: Vec<Vec<ClipRef>> = vec![Vec::new(); 3];
        let mut neg_pool: Vec<Vec<ClipRef>> = vec![Vec::new(); 3];
        for pc in &pool {
            let si = pc.split as usize;
            if pc.labels[vi] {
                pos_pool[si].push(pc.clip);
            } else {
                neg_pool[si].push(pc.clip);
            }
        }

        let mut take_pos = [0usize; 3];
        for si in 0..3 {
            let q = quotas[si];
            if q == 0 {
                continue;
            }
            let want = ((q as f64 * target).round() as usize).clamp(1, q.saturating_sub(1).max(1));
            take_pos[si] = want.min(pos_pool[si].len());
            if take_pos[si] == 0 {
                return Err(unbalanced(format!("no positive clips in the {} split", Split::ALL[si])));
            }
        }
        // Top up from splits with spare positives if a split ran short.
        let min_pos = (POSITIVE_BAND.0 * per_verb as f64).ceil() as usize;
        for si in [0usize, 2, 1] {
            while take_pos.iter().sum::<usize>() < min_pos
                && take_pos[si] < pos_pool[si].len()
                && take_pos[si] + 1 < quotas[si]
            {
                take_pos[si] += 1;
            }
        }

        for si in 0..3 {
            let need_neg = quotas[si] - take_pos[si];
            if need_neg > neg_pool[si].len() {
                return Err(unbalanced(format!(
                    "{} split needs {need_neg} negatives, pool has {}",
                    Split::ALL[si],
                    neg_pool[si].len()
                )));
            }
            pos_pool[si].shuffle(&mut rng);
            neg_pool[si].shuffle(&mut rng);
            let split = Split::ALL[si];
            entries.extend(pos_pool[si][..take_pos[si]].iter().map(|&clip| Annotation { clip, verb, label: true, split }));
            entries.extend(neg_pool[si][..need_neg].iter().map(|&clip| Annotation { clip, verb, label: false, split }));
        }

        let frac = take_pos.iter().sum::<usize>() as f64 / per_verb as f64;
        if frac < POSITIVE_BAND.0 || frac > POSITIVE_BAND.1 {
            return Err(unbalanced(format!("positive share {frac:.3} outside [0.3, 0.6]")));
        }
    }
    entries.sort_by_key(|e| (e.verb, e.split, e.clip));
    Ok(AnnotationSet { entries, per_verb_count: per_verb, splits })
}

#[derive(Serialize, Deserialize)]
struct Line {
    episode_seed: u64,
    start_frame: u32,
    verb: Verb,
    label: YesNo,
    split: Split,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum YesNo {
    Yes,
    No,
}

/// One JSON object per line: `{episode_seed, start_frame, verb, label, split}`.
pub fn write_annotations<W: Write>(set: &AnnotationSet, mut w: W) -> std::io::Result<()> {
    for e in &set.entries {
        let line = Line {
            episode_seed: e.clip.episode_seed,
            start_frame: e.clip.start_frame,
            verb: e.verb,
            label: if e.label { YesNo::Yes } else { YesNo::No },
            split: e.split,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parse an annotation file. Episode splits are recovered from the entries;
/// `extra_splits` supplies splits of unannotated episodes.
pub fn read_annotations<R: BufRead>(
    r: R,
    extra_splits: BTreeMap<u64, Split>,
) -> Result<AnnotationSet, OracleError> {
    let mut entries = Vec::new();
    let mut splits = extra_splits;
    for (i, line) in r.lines().enumerate() {
        let bad = |reason: String| OracleError::BadLine { line: i + 1, reason };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let l: Line = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if let Some(&prev) = splits.get(&l.episode_seed) {
            if prev != l.split {
                return Err(bad(format!("episode {} appears in {prev} and {}", l.episode_seed, l.split)));
            }
        }
        splits.insert(l.episode_seed, l.split);
        entries.push(Annotation {
            clip: ClipRef { episode_seed: l.episode_seed, start_frame: l.start_frame },
            verb: l.verb,
            label: matches!(l.label, YesNo::Yes),
            split: l.split,
        });
    }
    let mut counts: BTreeMap<Verb, usize> = BTreeMap::new();
    for e in &entries {
        *counts.entry(e.verb).or_default() += 1;
    }
    let per_verb_count = counts.values().copied().max().unwrap_or(0);
    if counts.values().any(|&c| c != per_verb_count) {
        return Err(OracleError::BadLine { line: 0, reason: "verbs have unequal annotation counts".into() });
    }
    Ok(AnnotationSet { entries, per_verb_count, splits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn splits_cover_all_episodes_in_ratio() {
        let eps: Vec<(u64, u8)> = (100..300).map(|s| (s, (s % 7) as u8)).collect();
        let s = assign_splits(&eps, &mut rng_from(5));
        assert_eq!(s.len(), 200);
        let count = |sp| s.values().filter(|&&v| v == sp).count();
        assert_eq!((count(Split::Train), count(Split::Dev), count(Split::Test)), (140, 20, 40));
        assert_eq!(s, assign_splits(&eps, &mut rng_from(5)));
        for k in 0..7u8 {
            let in_split = |sp| eps.iter().filter(|e| e.1 == k && s[&e.0] == sp).count();
            assert!(in_split(Split::Dev) >= 2 && in_split(Split::Test) >= 5, "stratum {k}");
        }
        for n in [1usize, 2, 7, 13, 55] {
            let eps: Vec<(u64, u8)> = (0..n as u64).map(|s| (s, 0)).collect();
            assert_eq!(assign_splits(&eps, &mut rng_from(1)).len(), n);
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let set = AnnotationSet {
            entries: vec![
                Annotation { clip: ClipRef { episode_seed: 9, start_frame: 30 }, verb: Verb::Fall, label: true, split: Split::Dev },
                Annotation { clip: ClipRef { episode_seed: 4, start_frame: 0 }, verb: Verb::Roll, label: false, split: Split::Train },
            ],
            per_verb_count: 1,
            splits: [(9, Split::Dev), (4, Split::Train)].into_iter().collect(),
        };
        let mut buf = Vec::new();
        write_annotations(&set, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"episode_seed":9,"start_frame":30,"verb":"fall","label":"yes","split":"dev"}"#
        );
        assert_eq!(read_annotations(buf.as_slice(), BTreeMap::new()).unwrap(), set);
    }

    #[test]
    fn conflicting_split_is_rejected() {
        let text = "{\"episode_seed\":1,\"start_frame\":0,\"verb\":\"fall\",\"label\":\"yes\",\"split\":\"dev\"}\n\
                    {\"episode_seed\":1,\"start_frame\":30,\"verb\":\"fall\",\"label\":\"no\",\"split\":\"test\"}\n";
        assert!(matches!(
            read_annotations(text.as_bytes(), BTreeMap::new()),
            Err(OracleError::BadLine { line: 2, .. })
        ));
    }
}
