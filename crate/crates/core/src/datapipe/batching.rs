//! P×K identity batches for batch-hard metric learning.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, SampleRecord, Split};
use crate::error::{Error, Result};

/// One batch slot: a record plus the seed that fixes its clip start frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEntry {
    pub record: SampleRecord,
    pub clip_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSpec {
    pub entries: Vec<BatchEntry>,
    pub persons: usize,
    pub clips_per_person: usize,
}

impl BatchSpec {
    pub fn actor_ids(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.record.actor_id).collect()
    }
}

/// One epoch of P×K batches over the train split.
///
/// Actors are visited in a shuffled rotation so every actor appears about
/// equally often; an actor with fewer than `clips_per_person` clips is
/// sampled with replacement. The epoch holds `floor(train_clips / (P·K))`
/// batches (at least one).
pub fn make_batches(
    manifest: &DatasetManifest,
    persons: usize,
    clips_per_person: usize,
    seed: u64,
) -> Result<Vec<BatchSpec>> {
    if persons == 0 || clips_per_person == 0 {
        return Err(Error::InvalidArgument(
            "persons and clips_per_person must be positive".into(),
        ));
    }
    let by_actor = manifest.by_actor(Split::Train);
    if by_actor.len() < persons {
        return Err(Error::Sampler(format!(
            "{} distinct train actors, need {persons} per batch",
            by_actor.len()
        )));
    }
    let total: usize = by_actor.values().map(Vec::len).sum();
    let num_batches = (total / (persons * clips_per_person)).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actors: Vec<u32> = by_actor.keys().copied().collect();
    let mut pools: Vec<VecDeque<&SampleRecord>> = actors.iter().map(|_| VecDeque::new()).collect();
    let mut rotation: VecDeque<usize> = VecDeque::new();

    let mut batches = Vec::with_capacity(num_batches);
    for _ in 0..num_batches {
        let mut picked: Vec<usize> = Vec::with_capacity(persons);
        let mut deferred = Vec::new();
        while picked.len() < persons {
            if rotation.is_empty() {
                let mut order: Vec<usize> = (0..actors.len()).collect();
                order.shuffle(&mut rng);
                rotation.extend(order);
            }
            let a = rotation.pop_front().expect("refilled above");
            if picked.contains(&a) {
                deferred.push(a);
            } else {
                picked.push(a);
            }
        }
        for a in deferred.into_iter().rev() {
            rotation.push_front(a);
        }

        let mut entries = Vec::with_capacity(persons * clips_per_person);
        for &a in &picked {
            let clips = &by_actor[&actors[a]];
            if clips.len() < clips_per_person {
                for _ in 0..clips_per_person {
                    let r = clips[rng.gen_range(0..clips.len())];
                    entries.push(BatchEntry {
                        record: r.clone(),
                        clip_seed: rng.gen(),
                    });
                }
                continue;
            }
            let pool = &mut pools[a];
            if pool.len() < clips_per_person {
                // Top up with a fresh permutation, skipping clips still queued,
                // so the next K pops are distinct.
                let mut order = clips.clone();
                order.shuffle(&mut rng);
                let fresh: Vec<&SampleRecord> = order
                    .into_iter()
                    .filter(|r| !pool.iter().any(|q| q.video_uri == r.video_uri))
                    .collect();
                pool.extend(fresh);
            }
            for _ in 0..clips_per_person {
                let r = pool.pop_front().expect("topped up above");
                entries.push(BatchEntry {
                    record: r.clone(),
                    clip_seed: rng.gen(),
                });
            }
        }
        batches.push(BatchSpec {
            entries,
            persons,
            clips_per_person,
        });
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn manifest(clips_per_actor: &[usize]) -> DatasetManifest {
        let mut records = Vec::new();
        for (a, &n) in clips_per_actor.iter().enumerate() {
            for c in 0..n {
                records.push(SampleRecord {
                    video_uri: format!("a{a}_{c}"),
                    silhouette_uri: None,
                    actor_id: a as u32,
                    activity_id: (c % 4) as u32,
                    view_id: None,
                    split: Split::Train,
                });
            }
        }
        DatasetManifest::new(records).unwrap()
    }

    fn assert_pk(b: &BatchSpec, p: usize, k: usize) {
        assert_eq!(b.entries.len(), p * k);
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for id in b.actor_ids() {
            *counts.entry(id).or_default() += 1;
        }
        assert_eq!(counts.len(), p);
        assert!(counts.values().all(|&c| c == k));
    }

    #[test]
    fn batches_of_32() {
        let m = manifest(&[20; 10]);
        let batches = make_batches(&m, 8, 4, 1).unwrap();
        assert_eq!(batches.len(), 200 / 32);
        for b in &batches {
            assert_pk(b, 8, 4);
        }
    }

    #[test]
    fn too_few_actors() {
        let m = manifest(&[10; 5]);
        assert!(matches!(make_batches(&m, 8, 4, 0), Err(Error::Sampler(_))));
    }

    #[test]
    fn short_actor_sampled_with_replacement() {
        let m = manifest(&[2, 10, 10]);
        let batches = make_batches(&m, 3, 4, 4).unwrap();
        for b in &batches {
            assert_pk(b, 3, 4);
            let uris: Vec<&str> = b
                .entries
                .iter()
                .filter(|e| e.record.actor_id == 0)
                .map(|e| e.record.video_uri.as_str())
                .collect();
            assert_eq!(uris.len(), 4);
            let mut distinct = uris.clone();
            distinct.sort();
            distinct.dedup();
            assert!(distinct.len() < 4);
        }
    }

    #[test]
    fn clips_distinct_per_actor_when_enough() {
        let m = manifest(&[5, 6, 7, 9, 5]);
        for seed in 0..20 {
            for b in make_batches(&m, 4, 4, seed).unwrap() {
                assert_pk(&b, 4, 4);
                for chunk in b.entries.chunks(4) {
                    let mut u: Vec<&str> = chunk.iter().map(|e| e.record.video_uri.as_str()).collect();
                    u.sort();
                    u.dedup();
                    assert_eq!(u.len(), 4);
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let m = manifest(&[7, 8, 9, 10, 11, 12]);
        assert_eq!(make_batches(&m, 4, 2, 42).unwrap(), make_batches(&m, 4, 2, 42).unwrap());
        assert_ne!(make_batches(&m, 4, 2, 42).unwrap(), make_batches(&m, 4, 2, 43).unwrap());
    }
}
