//! Oversubscription policies and the textual policy spec grammar.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::env::{Observation, OversubEnv};

/// A frozen decision rule mapping the current state to one rate per agent.
pub trait Policy: Send + Sync {
    fn name(&self) -> String;

    /// Rates in `(0, 1]` for the arrivals of the current hour.
    fn rates(&self, env: &OversubEnv, obs: &Observation) -> Vec<f64>;
}

/// `grid:<rate>` | `ma:<window>` | `sl` | `c2marl:<checkpoint path>`
#[derive(Clone, Debug, PartialEq)]
pub enum PolicySpec {
    Grid(f64),
    MovingAverage(usize),
    SupervisedMax,
    C2marl(PathBuf),
}

#[derive(Debug, thiserror::Error)]
#[error("invalid policy spec '{spec}': {reason}")]
pub struct PolicySpecError {
    pub spec: String,
    pub reason: String,
}

impl FromStr for PolicySpec {
    type Err = PolicySpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fail = |reason: &str| PolicySpecError {
            spec: s.to_string(),
            reason: reason.to_string(),
        };
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        match (kind, arg) {
            ("grid", Some(a)) => {
                let rate: f64 = a.parse().map_err(|_| fail("rate is not a number"))?;
                if !(rate > 0.0 && rate <= 1.0) {
                    return Err(fail("rate must lie in (0, 1]"));
                }
                Ok(PolicySpec::Grid(rate))
            }
            ("ma", Some(a)) => match a.parse::<usize>() {
                Ok(w) if w >= 1 => Ok(PolicySpec::MovingAverage(w)),
                _ => Err(fail("window must be a positive integer")),
            },
            ("sl", None) => Ok(PolicySpec::SupervisedMax),
            ("c2marl", Some(p)) if !p.is_empty() => Ok(PolicySpec::C2marl(PathBuf::from(p))),
            _ => Err(fail("expected grid:<rate>, ma:<window>, sl or c2marl:<path>")),
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Grid(r) => write!(f, "grid:{r}"),
            PolicySpec::MovingAverage(w) => write!(f, "ma:{w}"),
            PolicySpec::SupervisedMax => write!(f, "sl"),
            PolicySpec::C2marl(p) => write!(f, "c2marl:{}", p.display()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_form() {
        assert_eq!("grid:0.4".parse::<PolicySpec>().unwrap(), PolicySpec::Grid(0.4));
        assert_eq!("ma:24".parse::<PolicySpec>().unwrap(), PolicySpec::MovingAverage(24));
        assert_eq!("sl".parse::<PolicySpec>().unwrap(), PolicySpec::SupervisedMax);
        assert_eq!(
            "c2marl:runs/ck.json".parse::<PolicySpec>().unwrap(),
            PolicySpec::C2marl("runs/ck.json".into())
        );
    }

    #[test]
    fn rejects_malformed_specs() {
        for bad in [
            "grid", "grid:0", "grid:1.5", "grid:x", "ma:0", "ma:-1", "sl:3", "c2marl:", "qmix",
        ] {
            assert!(bad.parse::<PolicySpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn display_round_trips() {
        for s in ["grid:0.4", "ma:24", "sl", "c2marl:a/b.json"] {
            assert_eq!(s.parse::<PolicySpec>().unwrap().to_string(), s);
        }
    }
}
