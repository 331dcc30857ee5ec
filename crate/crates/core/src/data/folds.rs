//! Stratified nested cross-validation fold plans.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::record::StrainRecord;
use crate::error::{Error, Result};
use crate::rng;

pub const FOLD_PLAN_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OuterFold {
    pub test: Vec<String>,
    /// Inner validation folds partitioning this fold's outer-training set.
    pub inner: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub version: u32,
    pub k_outer: usize,
    pub k_inner: usize,
    pub seed: u64,
    pub outer: Vec<OuterFold>,
}

/// Splits `(id, class)` items into `k` folds. Each class is shuffled and dealt
/// round-robin, continuing the deal position across classes so fold sizes
/// differ by at most one. Classes smaller than `k` are pooled and dealt last.
fn stratified_folds(items: &[(String, String)], k: usize, rng: &mut impl rand::Rng) -> Vec<Vec<String>> {
    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, class) in items {
        by_class.entry(class.as_str()).or_default().push(id.as_str());
    }
    let mut pooled = Vec::new();
    let mut folds = vec![Vec::new(); k];
    let mut cursor = 0;
    for (class, mut ids) in by_class {
        if ids.len() < k {
            log::warn!("class {class} has {} members (< {k}); placed without stratification", ids.len());
            pooled.extend(ids);
            continue;
        }
        ids.shuffle(rng);
        for id in ids {
            folds[cursor % k].push(id.to_string());
            cursor += 1;
        }
    }
    pooled.shuffle(rng);
    for id in pooled {
        folds[cursor % k].push(id.to_string());
        cursor += 1;
    }
    folds
}

/// Plans outer and inner folds over `(strain_id, host_class)` pairs.
pub fn plan_nested_folds_labeled(items: &[(String, String)], k_outer: usize, k_inner: usize, seed: u64) -> Result<FoldPlan> {
    if k_outer < 2 || k_inner < 2 {
        return Err(Error::Config(format!("fold counts must be at least 2 (got {k_outer}, {k_inner})")));
    }
    if items.len() < k_outer * k_inner {
        return Err(Error::Contract(format!(
            "{} records cannot fill {k_outer}x{k_inner} nested folds",
            items.len()
        )));
    }
    let mut seen = HashSet::new();
    for (id, _) in items {
        if !seen.insert(id.as_str()) {
            return Err(Error::Contract(format!("duplicate strain id {id} in fold input")));
        }
    }
    let mut outer_rng = rng::stream(seed, "folds/outer");
    let tests = stratified_folds(items, k_outer, &mut outer_rng);
    let mut outer = Vec::with_capacity(k_outer);
    for (i, test) in tests.iter().enumerate() {
        let held: HashSet<&str> = test.iter().map(String::as_str).collect();
        let train: Vec<(String, String)> = items.iter().filter(|(id, _)| !held.contains(id.as_str())).cloned().collect();
        let mut inner_rng = rng::indexed_stream(seed, "folds/inner", i as u64);
        let inner = stratified_folds(&train, k_inner, &mut inner_rng);
        outer.push(OuterFold { test: test.clone(), inner });
    }
    Ok(FoldPlan {
        version: FOLD_PLAN_VERSION,
        k_outer,
        k_inner,
        seed,
        outer,
    })
}

/// Plans folds stratified by host class.
pub fn plan_nested_folds(records: &[StrainRecord], k_outer: usize, k_inner: usize, seed: u64) -> Result<FoldPlan> {
    let items: Vec<(String, String)> = records.iter().map(|r| (r.strain_id.clone(), r.host_class.clone())).collect();
    plan_nested_folds_labeled(&items, k_outer, k_inner, seed)
}

impl FoldPlan {
    /// Ids of outer fold `i`'s training set, in plan order.
    pub fn outer_train(&self, i: usize) -> Vec<String> {
        self.outer
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.test.iter().cloned())
            .collect()
    }

    /// `(train, val)` ids of inner fold `j` within outer fold `i`.
    pub fn inner_split(&self, i: usize, j: usize) -> (Vec<String>, Vec<String>) {
        let inner = &self.outer[i].inner;
        let train = inner
            .iter()
            .enumerate()
            .filter(|(m, _)| *m != j)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect();
        (train, inner[j].clone())
    }

    /// Exhaustive leakage and partition audit against the full id list.
    /// Returns one message per violation.
    pub fn audit(&self, ids: &[String]) -> Vec<String> {
        let mut violations = Vec::new();
        let all: HashSet<&str> = ids.iter().map(String::as_str).collect();
        let mut covered: HashSet<&str> = HashSet::new();
        for (i, fold) in self.outer.iter().enumerate() {
            for id in &fold.test {
                if !all.contains(id.as_str()) {
                    violations.push(format!("outer {i}: unknown id {id}"));
                }
                if !covered.insert(id.as_str()) {
                    violations.push(format!("outer {i}: id {id} appears in more than one test fold"));
                }
            }
        }
        for id in &all {
            if !covered.contains(id) {
                violations.push(format!("id {id} is in no outer test fold"));
            }
        }
        for (i, fold) in self.outer.iter().enumerate() {
            let test: HashSet<&str> = fold.test.iter().map(String::as_str).collect();
            let train = self.outer_train(i);
            let train_set: HashSet<&str> = train.iter().map(String::as_str).collect();
            for id in &train {
                if test.contains(id.as_str()) {
                    violations.push(format!("outer {i}: test id {id} in outer training set"));
                }
            }
            let mut inner_seen: HashSet<&str> = HashSet::new();
            for (j, val) in fold.inner.iter().enumerate() {
                for id in val {
                    if !train_set.contains(id.as_str()) {
                        violations.push(format!("outer {i} inner {j}: id {id} not in outer training set"));
                    }
                    if !inner_seen.insert(id.as_str()) {
                        violations.push(format!("outer {i} inner {j}: id {id} in more than one inner fold"));
                    }
                }
                let (itrain, ival) = self.inner_split(i, j);
                let ival: HashSet<&str> = ival.iter().map(String::as_str).collect();
                for id in &itrain {
                    if ival.contains(id.as_str()) {
                        violations.push(format!("outer {i} inner {j}: validation id {id} in inner training set"));
                    }
                    if test.contains(id.as_str()) {
                        violations.push(format!("outer {i} inner {j}: test id {id} in inner training set"));
                    }
                }
            }
            if inner_seen.len() != train_set.len() {
                violations.push(format!("outer {i}: inner folds do not cover the outer training set"));
            }
        }
        violations
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fold plan serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let plan: FoldPlan = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if plan.version != FOLD_PLAN_VERSION {
            return Err(Error::Config(format!("unsupported fold plan version {}", plan.version)));
        }
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn items(n: usize, classes: usize) -> Vec<(String, String)> {
        (0..n).map(|i| (format!("s{i}"), format!("c{}", i % classes))).collect()
    }

    fn ids(items: &[(String, String)]) -> Vec<String> {
        items.iter().map(|(id, _)| id.clone()).collect()
    }

    #[test]
    fn twenty_records_make_five_folds_of_four() {
        let it = items(20, 2);
        let plan = plan_nested_folds_labeled(&it, 5, 4, 7).unwrap();
        assert!(plan.outer.iter().all(|f| f.test.len() == 4));
        assert!(plan.outer.iter().all(|f| f.inner.iter().all(|v| v.len() == 4)));
        assert!(plan.audit(&ids(&it)).is_empty());
    }

    #[test]
    fn too_few_records_is_an_error() {
        assert!(matches!(plan_nested_folds_labeled(&items(19, 1), 5, 4, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn folds_are_stratified_when_classes_allow() {
        let it = items(50, 2);
        let plan = plan_nested_folds_labeled(&it, 5, 4, 3).unwrap();
        for f in &plan.outer {
            let c0 = f.test.iter().filter(|id| id[1..].parse::<usize>().unwrap() % 2 == 0).count();
            assert_eq!(c0, 5);
        }
    }

    #[test]
    fn audit_detects_leakage() {
        let it = items(20, 1);
        let mut plan = plan_nested_folds_labeled(&it, 5, 4, 1).unwrap();
        let leaked = plan.outer[0].test[0].clone();
        plan.outer[1].inner[0].push(leaked);
        assert!(!plan.audit(&ids(&it)).is_empty());
    }

    #[test]
    fn plan_is_deterministic_and_round_trips() {
        let it = items(30, 3);
        let a = plan_nested_folds_labeled(&it, 5, 4, 9).unwrap();
        let b = plan_nested_folds_labeled(&it, 5, 4, 9).unwrap();
        assert_eq!(a, b);
        let c = plan_nested_folds_labeled(&it, 5, 4, 10).unwrap();
        assert_ne!(a, c);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plan.json");
        a.save(&p).unwrap();
        assert_eq!(FoldPlan::load(&p).unwrap(), a);
    }

    proptest! {
        #[test]
        fn audit_is_clean_for_any_plan(n in 20usize..80, classes in 1usize..12, seed in any::<u64>()) {
            let it = items(n, classes);
            let plan = plan_nested_folds_labeled(&it, 5, 4, seed).unwrap();
            prop_assert!(plan.audit(&ids(&it)).is_empty());
            let sizes: Vec<usize> = plan.outer.iter().map(|f| f.test.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
