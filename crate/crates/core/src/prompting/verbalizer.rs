use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entailment label of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Entail,
    Contradict,
}

impl Answer {
    pub fn flip(self) -> Answer {
        match self {
            Answer::Entail => Answer::Contradict,
            Answer::Contradict => Answer::Entail,
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Answer::Entail => "entail",
            Answer::Contradict => "contradict",
        })
    }
}

/// Label → answer word at the mask position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalizer {
    pub entail: String,
    pub contradict: String,
}

impl Default for Verbalizer {
    fn default() -> Self {
        Verbalizer::yes_no()
    }
}

impl Verbalizer {
    pub fn new(entail: impl Into<String>, contradict: impl Into<String>) -> Result<Self> {
        let v = Verbalizer {
            entail: entail.into(),
            contradict: contradict.into(),
        };
        if v.entail == v.contradict {
            return Err(Error::Config(format!(
                "verbalizer words must differ, both are {:?}",
                v.entail
            )));
        }
        if v.entail.split_whitespace().count() != 1 || v.contradict.split_whitespace().count() != 1
        {
            return Err(Error::Config(
                "verbalizer words must be single tokens".into(),
            ));
        }
        Ok(v)
    }

    pub fn yes_no() -> Self {
        Verbalizer::new("yes", "no").unwrap()
    }

    pub fn true_false() -> Self {
        Verbalizer::new("true", "false").unwrap()
    }

    pub fn word(&self, label: Answer) -> &str {
        match label {
            Answer::Entail => &self.entail,
            Answer::Contradict => &self.contradict,
        }
    }
}

impl FromStr for Verbalizer {
    type Err = Error;

    /// `yes-no`, `true-false`, or any `<entail>/<contradict>` pair.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "yes-no" => Ok(Verbalizer::yes_no()),
            "true-false" => Ok(Verbalizer::true_false()),
            other => match other.split_once('/') {
                Some((a, b)) => Verbalizer::new(a, b),
                None => Err(Error::Config(format!("unknown verbalizer {other:?}"))),
            },
        }
    }
}
