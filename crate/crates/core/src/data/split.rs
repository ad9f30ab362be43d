use std::collections::{BTreeMap, BTreeSet};

use super::sample::Sample;
use crate::error::{Error, Result};

/// Which calendar years feed each split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct YearAssignment {
    pub train: BTreeSet<i32>,
    pub validation: BTreeSet<i32>,
    pub test: BTreeSet<i32>,
}

impl YearAssignment {
    pub fn new(
        train: impl IntoIterator<Item = i32>,
        validation: impl IntoIterator<Item = i32>,
        test: impl IntoIterator<Item = i32>,
    ) -> Self {
        Self {
            train: train.into_iter().collect(),
            validation: validation.into_iter().collect(),
            test: test.into_iter().collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, set) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            if set.is_empty() {
                return Err(Error::contract(format!("{name} year set is empty")));
            }
        }
        let pairs = [
            (&self.train, &self.validation),
            (&self.train, &self.test),
            (&self.validation, &self.test),
        ];
        for (a, b) in pairs {
            if let Some(y) = a.intersection(b).next() {
                return Err(Error::contract(format!("year {y} assigned to two splits")));
            }
        }
        Ok(())
    }

    /// Split name for a year.
    pub fn split_of(&self, year: i32) -> Option<&'static str> {
        if self.train.contains(&year) {
            Some("train")
        } else if self.validation.contains(&year) {
            Some("validation")
        } else if self.test.contains(&year) {
            Some("test")
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
    pub years: YearAssignment,
}

/// Partitions samples by the calendar year of their own timestamp, so a
/// storm that spans New Year contributes to both years' splits.
pub fn split_by_year(samples: Vec<Sample>, years: &YearAssignment) -> Result<DatasetSplit> {
    years.validate()?;
    let missing: BTreeSet<i32> = samples
        .iter()
        .map(Sample::year)
        .filter(|y| years.split_of(*y).is_none())
        .collect();
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(i32::to_string).collect();
        return Err(Error::contract(format!(
            "no split assigned for year(s) {}",
            list.join(", ")
        )));
    }
    let mut buckets: BTreeMap<&str, Vec<Sample>> = BTreeMap::new();
    for s in samples {
        let name = years.split_of(s.year()).expect("checked above");
        buckets.entry(name).or_default().push(s);
    }
    Ok(DatasetSplit {
        train: buckets.remove("train").unwrap_or_default(),
        validation: buckets.remove("validation").unwrap_or_default(),
        test: buckets.remove("test").unwrap_or_default(),
        years: years.clone(),
    })
}
