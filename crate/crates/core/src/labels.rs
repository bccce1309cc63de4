//! Diagnostic classes and classification tasks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Diagnosis {
    CN,
    MCI,
    AD,
}

impl Diagnosis {
    pub const ALL: [Diagnosis; 3] = [Diagnosis::CN, Diagnosis::MCI, Diagnosis::AD];

    pub fn as_str(self) -> &'static str {
        match self {
            Diagnosis::CN => "CN",
            Diagnosis::MCI => "MCI",
            Diagnosis::AD => "AD",
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Diagnosis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "CN" => Ok(Diagnosis::CN),
            "MCI" => Ok(Diagnosis::MCI),
            "AD" => Ok(Diagnosis::AD),
            other => Err(Error::contract(format!(
                "unknown label `{other}` (expected CN, MCI or AD)"
            ))),
        }
    }
}

/// Which classes take part in an experiment and how they map to class
/// indices. In binary tasks the second-named class is the positive class
/// (index 1), so AD is positive in AD-vs-CN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "AD-vs-CN")]
    AdVsCn,
    #[serde(rename = "AD-vs-MCI")]
    AdVsMci,
    #[serde(rename = "CN-vs-MCI")]
    CnVsMci,
    #[serde(rename = "3-way")]
    ThreeWay,
}

impl Task {
    pub fn classes(self) -> &'static [Diagnosis] {
        use Diagnosis::*;
        match self {
            Task::AdVsCn => &[CN, AD],
            Task::AdVsMci => &[MCI, AD],
            Task::CnVsMci => &[CN, MCI],
            Task::ThreeWay => &[CN, MCI, AD],
        }
    }

    pub fn n_classes(self) -> usize {
        self.classes().len()
    }

    /// Class index of `d`, or `None` when the task excludes it.
    pub fn class_index(self, d: Diagnosis) -> Option<usize> {
        self.classes().iter().position(|&c| c == d)
    }

    pub fn positive_class(self) -> Option<usize> {
        (self.n_classes() == 2).then_some(1)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::AdVsCn => "AD-vs-CN",
            Task::AdVsMci => "AD-vs-MCI",
            Task::CnVsMci => "CN-vs-MCI",
            Task::ThreeWay => "3-way",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "AD-vs-CN" => Ok(Task::AdVsCn),
            "AD-vs-MCI" => Ok(Task::AdVsMci),
            "CN-vs-MCI" => Ok(Task::CnVsMci),
            "3-way" => Ok(Task::ThreeWay),
            other => Err(Error::contract(format!(
                "unknown task `{other}` (expected AD-vs-CN, AD-vs-MCI, CN-vs-MCI or 3-way)"
            ))),
        }
    }
}
