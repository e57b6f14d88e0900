//! Train/valid/test partitioning with unseen listeners, systems and texts,
//! chosen among seeded candidates to keep score distributions close to the
//! full dataset's.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::RatingRecord;
use crate::error::{Error, Result};
use crate::util::rng;

/// Exact 1-Wasserstein distance between two empirical distributions.
///
/// Integrates `|Q_a(u) - Q_b(u)|` over `u` in `[0, 1]`. Both quantile
/// functions are step functions, so the integral is a finite sum over the
/// merged step boundaries, measured in units of `1 / lcm(n, m)`.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument(
            "wasserstein distance of an empty sample".into(),
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "wasserstein input".into(),
        });
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as u64, b.len() as u64);
    let lcm = n / gcd(n, m) * m;
    let (step_a, step_b) = (lcm / n, lcm / m);
    let (mut i, mut j) = (0usize, 0usize);
    let mut at = 0u64;
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i as u64 + 1) * step_a;
        let next_b = (j as u64 + 1) * step_b;
        let next = next_a.min(next_b);
        total += (next - at) as f64 * (a[i] - b[j]).abs();
        at = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    Ok(total / lcm as f64)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ListenerCriteria {
    /// Listeners must have rated fewer distinct samples than this.
    pub max_samples: usize,
    /// Listeners must have submitted fewer HITs than this.
    pub max_hits: usize,
    /// Minimum share of a listener's HITs that are clean. A HIT is clean
    /// when every rating in it is flagged clean.
    pub min_clean_fraction: f64,
}

impl Default for ListenerCriteria {
    fn default() -> Self {
        ListenerCriteria {
            max_samples: 3000,
            max_hits: 50,
            min_clean_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub criteria: ListenerCriteria,
    pub valid_listeners: BTreeMap<String, usize>,
    pub test_listeners: BTreeMap<String, usize>,
    pub unseen_systems: usize,
    pub unseen_texts: usize,
    pub candidates: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        let locales = |us, gb, ca| {
            [
                ("US".to_string(), us),
                ("GB".to_string(), gb),
                ("CA".to_string(), ca),
            ]
            .into()
        };
        SplitSpec {
            train_fraction: 0.70,
            valid_fraction: 0.15,
            test_fraction: 0.15,
            criteria: ListenerCriteria::default(),
            valid_listeners: locales(6, 2, 2),
            test_listeners: locales(4, 4, 2),
            unseen_systems: 10,
            unseen_texts: 50,
            candidates: 1000,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_fraction, self.valid_fraction, self.test_fraction];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f))
            || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "split fractions {fr:?} must be in [0, 1] and sum to 1"
            )));
        }
        if self.candidates == 0 {
            return Err(Error::Config("candidate count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Listener, system and text ids reserved for one held-out set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UnseenSet {
    pub listeners: BTreeSet<String>,
    pub systems: BTreeSet<String>,
    pub texts: BTreeSet<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDistances {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitDistances {
    pub fn objective(&self) -> f64 {
        self.train + self.valid + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub seed: u64,
    pub train: BTreeSet<String>,
    pub valid: BTreeSet<String>,
    pub test: BTreeSet<String>,
    pub unseen_valid: UnseenSet,
    pub unseen_test: UnseenSet,
    pub distances: SplitDistances,
}

impl SplitResult {
    pub fn objective(&self) -> f64 {
        self.distances.objective()
    }

    /// Partition index (0 train, 1 valid, 2 test) of each rating record.
    pub fn assign(&self, records: &[RatingRecord]) -> Vec<usize> {
        records
            .iter()
            .map(|r| {
                if self.valid.contains(&r.utterance_id) {
                    1
                } else if self.test.contains(&r.utterance_id) {
                    2
                } else {
                    0
                }
            })
            .collect()
    }
}

struct ListenerStats {
    locale: String,
    samples: usize,
    hits: usize,
    clean_hits: usize,
}

fn listener_stats(records: &[RatingRecord]) -> Result<BTreeMap<&str, ListenerStats>> {
    let mut samples: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut hits: BTreeMap<&str, BTreeMap<&str, bool>> = BTreeMap::new();
    let mut locale: BTreeMap<&str, &str> = BTreeMap::new();
    for r in records {
        let l = r.listener_id.as_str();
        if let Some(prev) = locale.insert(l, &r.locale) {
            if prev != r.locale {
                return Err(Error::InvalidArgument(format!(
                    "listener {l} has locales {prev} and {}",
                    r.locale
                )));
            }
        }
        samples.entry(l).or_default().insert(&r.utterance_id);
        *hits.entry(l).or_default().entry(&r.hit_id).or_insert(true) &= r.is_clean;
    }
    Ok(samples
        .into_iter()
        .map(|(l, s)| {
            let h = &hits[l];
            let stats = ListenerStats {
                locale: locale[l].to_string(),
                samples: s.len(),
                hits: h.len(),
                clean_hits: h.values().filter(|c| **c).count(),
            };
            (l, stats)
        })
        .collect())
}

fn qualifies(s: &ListenerStats, c: &ListenerCriteria) -> bool {
    s.samples < c.max_samples
        && s.hits < c.max_hits
        && s.clean_hits as f64 >= c.min_clean_fraction * s.hits as f64
}

/// Samples listeners meeting `criteria`, per locale, for the validation and
/// test sets. The two sets are disjoint.
pub fn find_unseen_listeners(
    records: &[RatingRecord],
    criteria: &ListenerCriteria,
    valid_counts: &BTreeMap<String, usize>,
    test_counts: &BTreeMap<String, usize>,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    let stats = listener_stats(records)?;
    let mut pool: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (l, s) in &stats {
        if qualifies(s, criteria) {
            pool.entry(s.locale.as_str()).or_default().push(l);
        }
    }
    let mut r = rng(seed);
    for p in pool.values_mut() {
        p.shuffle(&mut r);
    }
    let mut take = |counts: &BTreeMap<String, usize>, set: &str| -> Result<BTreeSet<String>> {
        let mut out = BTreeSet::new();
        for (loc, &k) in counts {
            let available = pool
                .get_mut(loc.as_str())
                .map_or(&mut Vec::new(), |v| v)
                .len();
            if k > available {
                return Err(Error::Infeasible(format!(
                    "{set} set needs {k} unseen listeners from locale {loc}, only {available} qualify"
                )));
            }
            let p = pool.get_mut(loc.as_str()).unwrap();
            out.extend(p.drain(..k).map(str::to_string));
        }
        Ok(out)
    };
    let valid = take(valid_counts, "validation")?;
    let test = take(test_counts, "test")?;
    Ok((valid, test))
}

fn pick(
    ids: &BTreeSet<&str>,
    k: usize,
    what: &str,
    r: &mut impl rand::Rng,
) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    if 2 * k > ids.len() {
        return Err(Error::Infeasible(format!(
            "{} unseen {what} requested per held-out set, only {} exist",
            k,
            ids.len()
        )));
    }
    let mut v: Vec<&str> = ids.iter().copied().collect();
    v.shuffle(r);
    Ok((
        v[..k].iter().map(|s| s.to_string()).collect(),
        v[k..2 * k].iter().map(|s| s.to_string()).collect(),
    ))
}

/// One random split for `seed`. Samples touching an unseen listener, system
/// or text go to that held-out set; a sample claimed by both held-out sets
/// goes to validation. The rest are shuffled to fill each set to its target.
pub fn make_split_candidate(
    records: &[RatingRecord],
    spec: &SplitSpec,
    seed: u64,
) -> Result<SplitResult> {
    spec.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidArgument("no rating records".into()));
    }
    let (unseen_valid_l, unseen_test_l) = find_unseen_listeners(
        records,
        &spec.criteria,
        &spec.valid_listeners,
        &spec.test_listeners,
        seed,
    )?;
    let mut r = rng(crate::util::mix_seed(&[seed, 1]));
    let systems: BTreeSet<&str> = records.iter().map(|x| x.system_id.as_str()).collect();
    let texts: BTreeSet<&str> = records.iter().map(|x| x.text_id.as_str()).collect();
    let (vs, ts) = pick(&systems, spec.unseen_systems, "systems", &mut r)?;
    let (vt, tt) = pick(&texts, spec.unseen_texts, "texts", &mut r)?;
    let unseen_valid = UnseenSet {
        listeners: unseen_valid_l,
        systems: vs,
        texts: vt,
    };
    let unseen_test = UnseenSet {
        listeners: unseen_test_l,
        systems: ts,
        texts: tt,
    };

    let touches = |u: &UnseenSet, x: &RatingRecord| {
        u.listeners.contains(&x.listener_id)
            || u.systems.contains(&x.system_id)
            || u.texts.contains(&x.text_id)
    };
    let mut forced: BTreeMap<&str, u8> = BTreeMap::new();
    for x in records {
        let slot = forced.entry(&x.utterance_id).or_insert(0);
        if touches(&unseen_valid, x) {
            *slot |= 1;
        }
        if touches(&unseen_test, x) {
            *slot |= 2;
        }
    }
    let n = forced.len();
    let n_valid = (spec.valid_fraction * n as f64).round() as usize;
    let n_test = (spec.test_fraction * n as f64).round() as usize;
    let mut valid = BTreeSet::new();
    let mut test = BTreeSet::new();
    let mut free = Vec::new();
    for (&u, &flag) in &forced {
        match flag {
            0 => free.push(u),
            2 => {
                test.insert(u.to_string());
            }
            _ => {
                valid.insert(u.to_string());
            }
        }
    }
    if valid.len() > n_valid || test.len() > n_test {
        return Err(Error::Infeasible(format!(
            "unseen categories force {} validation and {} test samples, targets are {n_valid} and {n_test}",
            valid.len(),
            test.len()
        )));
    }
    free.shuffle(&mut r);
    let mut free = free.into_iter();
    while valid.len() < n_valid {
        valid.insert(
            free.next()
                .ok_or_else(|| Error::Infeasible("too few samples".into()))?
                .to_string(),
        );
    }
    while test.len() < n_test {
        test.insert(
            free.next()
                .ok_or_else(|| Error::Infeasible("too few samples".into()))?
                .to_string(),
        );
    }
    let train: BTreeSet<String> = free.map(str::to_string).collect();

    let all: Vec<f64> = records.iter().map(|x| x.score).collect();
    let scores = |set: &BTreeSet<String>| -> Vec<f64> {
        records
            .iter()
            .filter(|x| set.contains(&x.utterance_id))
            .map(|x| x.score)
            .collect()
    };
    let dist = |set: &BTreeSet<String>| -> Result<f64> {
        let s = scores(set);
        if s.is_empty() {
            Ok(0.0)
        } else {
            wasserstein_1d(&s, &all)
        }
    };
    let distances = SplitDistances {
        train: dist(&train)?,
        valid: dist(&valid)?,
        test: dist(&test)?,
    };
    Ok(SplitResult {
        seed,
        train,
        valid,
        test,
        unseen_valid,
        unseen_test,
        distances,
    })
}

/// Summary of a best-split search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSearch {
    pub best: SplitResult,
    pub candidates: usize,
    pub infeasible: usize,
}

/// Evaluates seeds `spec.seed .. spec.seed + spec.candidates` and keeps the
/// lowest summed distance, preferring the lowest seed on ties. Infeasible
/// candidates are skipped; the search fails only if every one is.
pub fn select_best_split(records: &[RatingRecord], spec: &SplitSpec) -> Result<SplitSearch> {
    spec.validate()?;
    let results: Vec<Result<SplitResult>> = (0..spec.candidates as u64)
        .into_par_iter()
        .map(|k| make_split_candidate(records, spec, spec.seed.wrapping_add(k)))
        .collect();
    let mut best: Option<SplitResult> = None;
    let mut first_error = None;
    let mut infeasible = 0;
    for res in results {
        match res {
            Ok(c) => {
                if best.as_ref().is_none_or(|b| c.objective() < b.objective()) {
                    best = Some(c);
                }
            }
            Err(e @ Error::Infeasible(_)) => {
                infeasible += 1;
                first_error.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    match best {
        Some(best) => Ok(SplitSearch {
            best,
            candidates: spec.candidates,
            infeasible,
        }),
        None => Err(first_error.expect("at least one candidate")),
    }
}

/// Writes `train.txt`, `valid.txt`, `test.txt` and `diagnostics.json`.
pub fn write_split(dir: &Path, search: &SplitSearch) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let b = &search.best;
    for (name, set) in [
        ("train.txt", &b.train),
        ("valid.txt", &b.valid),
        ("test.txt", &b.test),
    ] {
        let path = dir.join(name);
        let body: String = set.iter().map(|id| format!("{id}\n")).collect();
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    let diagnostics = serde_json::json!({
        "seed": b.seed,
        "objective": b.objective(),
        "distances": b.distances,
        "sizes": { "train": b.train.len(), "valid": b.valid.len(), "test": b.test.len() },
        "unseen": { "valid": b.unseen_valid, "test": b.unseen_test },
        "candidates": search.candidates,
        "infeasible_candidates": search.infeasible,
    });
    let path = dir.join("diagnostics.json");
    let text = serde_json::to_string_pretty(&diagnostics)
        .map_err(|e| Error::format("diagnostics", e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Reads an id-per-line split file.
pub fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthetic_ratings, SyntheticSpec};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn wasserstein_examples() {
        assert_eq!(
            wasserstein_1d(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            0.0
        );
        assert_eq!(wasserstein_1d(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein_1d(&[0.0, 1.0], &[0.0, 3.0]).unwrap(), 1.0);
        assert!((wasserstein_1d(&[0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(wasserstein_1d(&[], &[1.0]).is_err());
    }

    fn listener_table() -> Vec<RatingRecord> {
        // 12 listeners per locale, each rating 4 samples in 2 HITs.
        let mut out = Vec::new();
        for (li, loc) in ["US", "GB", "CA"].iter().enumerate() {
            for k in 0..12 {
                let l = format!("{loc}{k}");
                for s in 0..4 {
                    out.push(RatingRecord {
                        utterance_id: format!("u{}", (li * 12 + k) * 4 + s),
                        system_id: "s".into(),
                        text_id: "t".into(),
                        listener_id: l.clone(),
                        locale: loc.to_string(),
                        score: 3.0,
                        is_clean: k != 0 && !(k == 1 && s == 0),
                        hit_id: format!("{l}-{}", s / 2),
                    });
                }
            }
        }
        out
    }

    #[test]
    fn default_counts_and_criteria() {
        let recs = listener_table();
        let spec = SplitSpec::default();
        let (v, t) = find_unseen_listeners(
            &recs,
            &spec.criteria,
            &spec.valid_listeners,
            &spec.test_listeners,
            1,
        )
        .unwrap();
        assert_eq!(v.len(), 10);
        assert_eq!(t.len(), 10);
        assert!(v.is_disjoint(&t));
        let count = |s: &BTreeSet<String>, p: &str| s.iter().filter(|l| l.starts_with(p)).count();
        assert_eq!(
            (count(&v, "US"), count(&v, "GB"), count(&v, "CA")),
            (6, 2, 2)
        );
        assert_eq!(
            (count(&t, "US"), count(&t, "GB"), count(&t, "CA")),
            (4, 4, 2)
        );
        // Listener 0 of each locale has no clean HIT, listener 1 has one of two.
        for l in v.iter().chain(&t) {
            assert!(!l.ends_with('0') || l.ends_with("10"), "{l}");
        }
    }

    #[test]
    fn zero_max_samples_is_infeasible() {
        let spec = SplitSpec::default();
        let c = ListenerCriteria {
            max_samples: 0,
            ..Default::default()
        };
        let err = find_unseen_listeners(
            &listener_table(),
            &c,
            &spec.valid_listeners,
            &spec.test_listeners,
            0,
        )
        .unwrap_err();
        assert!(
            matches!(&err, Error::Infeasible(m) if m.contains("locale")),
            "{err}"
        );
    }

    fn toy_spec() -> SplitSpec {
        let locales = |us, gb, ca| [("US".into(), us), ("GB".into(), gb), ("CA".into(), ca)].into();
        SplitSpec {
            valid_listeners: locales(2, 1, 1),
            test_listeners: locales(1, 1, 1),
            unseen_systems: 1,
            unseen_texts: 2,
            candidates: 8,
            ..Default::default()
        }
    }

    fn toy_records(seed: u64) -> Vec<RatingRecord> {
        synthetic_ratings(&SyntheticSpec {
            utterances: 200,
            systems: 20,
            texts: 80,
            listeners: 300,
            ratings_per_utterance: 2,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn check_constraints(recs: &[RatingRecord], res: &SplitResult, spec: &SplitSpec) {
        let n = res.train.len() + res.valid.len() + res.test.len();
        let samples: BTreeSet<&String> = recs.iter().map(|r| &r.utterance_id).collect();
        assert_eq!(n, samples.len());
        assert!(
            res.train.is_disjoint(&res.valid)
                && res.train.is_disjoint(&res.test)
                && res.valid.is_disjoint(&res.test)
        );
        assert!((res.valid.len() as f64 - spec.valid_fraction * n as f64).abs() <= 1.0);
        assert!((res.test.len() as f64 - spec.test_fraction * n as f64).abs() <= 1.0);
        for r in recs {
            if res.train.contains(&r.utterance_id) {
                for u in [&res.unseen_valid, &res.unseen_test] {
                    assert!(!u.listeners.contains(&r.listener_id));
                    assert!(!u.systems.contains(&r.system_id));
                    assert!(!u.texts.contains(&r.text_id));
                }
            }
            if res.test.contains(&r.utterance_id) {
                assert!(!res.unseen_valid.listeners.contains(&r.listener_id));
                assert!(!res.unseen_valid.systems.contains(&r.system_id));
                assert!(!res.unseen_valid.texts.contains(&r.text_id));
            }
        }
    }

    #[test]
    fn toy_candidate_hits_targets_and_is_deterministic() {
        let recs = toy_records(1);
        let spec = toy_spec();
        let a = make_split_candidate(&recs, &spec, 42).unwrap();
        check_constraints(&recs, &a, &spec);
        assert_eq!(a, make_split_candidate(&recs, &spec, 42).unwrap());
        assert_ne!(
            a.valid,
            make_split_candidate(&recs, &spec, 43).unwrap().valid
        );
    }

    #[test]
    fn best_split_is_minimal_and_monotone() {
        let recs = toy_records(2);
        let spec = toy_spec();
        let best = select_best_split(&recs, &spec).unwrap();
        for k in 0..spec.candidates as u64 {
            if let Ok(c) = make_split_candidate(&recs, &spec, k) {
                assert!(best.best.objective() <= c.objective());
            }
        }
        let one = select_best_split(
            &recs,
            &SplitSpec {
                candidates: 1,
                ..spec.clone()
            },
        )
        .unwrap();
        assert_eq!(one.best, make_split_candidate(&recs, &spec, 0).unwrap());
        let more = select_best_split(
            &recs,
            &SplitSpec {
                candidates: 16,
                ..spec
            },
        )
        .unwrap();
        assert!(more.best.objective() <= best.best.objective());
    }

    #[test]
    fn split_files_are_written() {
        let recs = toy_records(3);
        let search = select_best_split(
            &recs,
            &SplitSpec {
                candidates: 2,
                ..toy_spec()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_split(dir.path(), &search).unwrap();
        assert_eq!(
            read_id_list(&dir.path().join("valid.txt")).unwrap().len(),
            search.best.valid.len()
        );
        let diag: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("diagnostics.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(diag["seed"], search.best.seed);
    }

    fn grid_oracle(a: &[f64], b: &[f64]) -> f64 {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let g = a.len() * b.len() * 4;
        let q = |s: &[f64], u: f64| s[((u * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        (0..g)
            .map(|k| (k as f64 + 0.5) / g as f64)
            .map(|u| (q(&a, u) - q(&b, u)).abs())
            .sum::<f64>()
            / g as f64
    }

    #[test]
    fn wasserstein_matches_oracles() {
        let mut r = rng(5);
        for _ in 0..200 {
            let n = r.gen_range(1..40);
            let a: Vec<f64> = (0..n).map(|_| r.gen_range(-5.0..5.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| r.gen_range(-5.0..5.0)).collect();
            let (mut sa, mut sb) = (a.clone(), b.clone());
            sa.sort_by(f64::total_cmp);
            sb.sort_by(f64::total_cmp);
            let sorted: f64 =
                sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64;
            assert_eq!(wasserstein_1d(&a, &b).unwrap(), sorted);
            let m = r.gen_range(1..40);
            let c: Vec<f64> = (0..m).map(|_| r.gen_range(-5.0..5.0)).collect();
            assert!((wasserstein_1d(&a, &c).unwrap() - grid_oracle(&a, &c)).abs() < 1e-6);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn every_candidate_satisfies_constraints(data_seed in 0u64..50, seed in 0u64..1000) {
            let recs = toy_records(data_seed);
            let spec = toy_spec();
            if let Ok(c) = make_split_candidate(&recs, &spec, seed) {
                check_constraints(&recs, &c, &spec);
            }
        }

        #[test]
        fn selected_listeners_meet_criteria(seed in 0u64..1000, max_samples in 2usize..8, max_hits in 1usize..5) {
            let recs = synthetic_ratings(&SyntheticSpec {
                utterances: 150, systems: 5, texts: 20, listeners: 60, ratings_per_utterance: 2,
                hit_size: 2, clean_hit_rate: 0.7, seed, ..Default::default()
            }).unwrap();
            let crit = ListenerCriteria { max_samples, max_hits, min_clean_fraction: 0.5 };
            let counts: BTreeMap<String, usize> = [("US".to_string(), 1), ("GB".to_string(), 1)].into();
            if let Ok((v, t)) = find_unseen_listeners(&recs, &crit, &counts, &counts, seed) {
                for l in v.iter().chain(&t) {
                    let mine: Vec<&RatingRecord> = recs.iter().filter(|r| &r.listener_id == l).collect();
                    let samples: BTreeSet<&String> = mine.iter().map(|r| &r.utterance_id).collect();
                    let hits: BTreeSet<&String> = mine.iter().map(|r| &r.hit_id).collect();
                    let clean = hits.iter().filter(|h| mine.iter().filter(|r| &&r.hit_id == *h).all(|r| r.is_clean)).count();
                    prop_assert!(samples.len() < max_samples);
                    prop_assert!(hits.len() < max_hits);
                    prop_assert!(clean * 2 >= hits.len());
                }
            }
        }
    }
}
