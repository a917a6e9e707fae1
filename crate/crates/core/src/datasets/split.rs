use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Dataset, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Disjoint subjects per split.
    Subject,
    /// Views 2 and 3 for training and validation, view 1 for testing.
    View,
}

impl Protocol {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "subject" | "x-sub" => Ok(Self::Subject),
            "view" | "view-analog" | "x-view" => Ok(Self::View),
            other => Err(Error::Config(format!("unknown split protocol '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Subject => "subject",
            Self::View => "view",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Protocol(format!("split ratios must be positive, got {r:?}")));
        }
        if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Protocol(format!("split ratios must sum to 1, got {r:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub protocol: Protocol,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Partition a dataset by subject or by view.
///
/// Under the view protocol the test share is fixed by the view key and only
/// the train to validation proportion of the ratios is used.
pub fn split(dataset: &Dataset, protocol: Protocol, ratios: &SplitRatios) -> Result<DatasetSplit> {
    ratios.validate()?;
    let (train, val, test) = match protocol {
        Protocol::Subject => {
            let subjects: Vec<u32> = dataset
                .samples
                .iter()
                .map(|s| s.subject)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let n = subjects.len();
            let n_train = (ratios.train * n as f64).round() as usize;
            let n_val = (ratios.val * n as f64).round() as usize;
            if n < 3 || n_train == 0 || n_val == 0 || n_train + n_val >= n {
                return Err(Error::Protocol(format!(
                    "{n} subjects cannot be divided into train/val/test with ratios {:?}",
                    [ratios.train, ratios.val, ratios.test]
                )));
            }
            let bucket = |s: &Sample| {
                let rank = subjects.binary_search(&s.subject).expect("subject listed");
                if rank < n_train {
                    0
                } else if rank < n_train + n_val {
                    1
                } else {
                    2
                }
            };
            partition(&dataset.samples, bucket)
        }
        Protocol::View => {
            let val_share = ratios.val / (ratios.train + ratios.val);
            let mut seen = vec![0usize; dataset.num_classes];
            let mut assign = Vec::with_capacity(dataset.len());
            for s in &dataset.samples {
                if s.view == 1 {
                    assign.push(2);
                } else {
                    let k = &mut seen[s.label()];
                    let to_val = ((*k + 1) as f64 * val_share).floor() > (*k as f64 * val_share).floor();
                    *k += 1;
                    assign.push(if to_val { 1 } else { 0 });
                }
            }
            let mut it = assign.into_iter();
            partition(&dataset.samples, |_| it.next().expect("one bucket per sample"))
        }
    };
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        let mut present = vec![false; dataset.num_classes];
        for s in part.iter() {
            present[s.label()] = true;
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(Error::Protocol(format!(
                "{} split has no sample of class {missing}",
                name
            )));
        }
    }
    Ok(DatasetSplit {
        protocol,
        train,
        val,
        test,
    })
}

fn partition(samples: &[Sample], mut bucket: impl FnMut(&Sample) -> usize) -> (Vec<Sample>, Vec<Sample>, Vec<Sample>) {
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for s in samples {
        match bucket(s) {
            0 => out.0.push(s.clone()),
            1 => out.1.push(s.clone()),
            _ => out.2.push(s.clone()),
        }
    }
    out
}
