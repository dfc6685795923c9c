//! Generalized pairwise comparison scoring over a hierarchy of outcomes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Binary,
    Continuous,
    Ordinal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    HigherIsBetter,
    LowerIsBetter,
}

/// One level of the outcome hierarchy.
///
/// `threshold` is the minimal clinically relevant difference for continuous
/// outcomes; it must be zero for binary and ordinal levels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorityLevel {
    pub kind: OutcomeKind,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default)]
    pub threshold: f64,
}

impl PriorityLevel {
    pub fn new(kind: OutcomeKind, direction: Direction, threshold: f64) -> Result<Self> {
        let level = PriorityLevel {
            kind,
            direction,
            threshold,
        };
        level.validate()?;
        Ok(level)
    }

    pub fn binary() -> Self {
        PriorityLevel {
            kind: OutcomeKind::Binary,
            direction: Direction::HigherIsBetter,
            threshold: 0.0,
        }
    }

    pub fn ordinal(direction: Direction) -> Self {
        PriorityLevel {
            kind: OutcomeKind::Ordinal,
            direction,
            threshold: 0.0,
        }
    }

    pub fn continuous(direction: Direction, threshold: f64) -> Result<Self> {
        Self::new(OutcomeKind::Continuous, direction, threshold)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.threshold.is_finite() || self.threshold < 0.0 {
            return Err(Error::InvalidValue(format!(
                "threshold must be a finite non-negative number, got {}",
                self.threshold
            )));
        }
        if self.kind != OutcomeKind::Continuous && self.threshold != 0.0 {
            return Err(Error::InvalidValue(format!(
                "threshold is only meaningful for continuous levels ({:?} level has threshold {})",
                self.kind, self.threshold
            )));
        }
        Ok(())
    }
}

/// Ordered outcome hierarchy; index 0 has the highest priority.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PriorityLevel>", into = "Vec<PriorityLevel>")]
pub struct ScoreSpec {
    levels: Vec<PriorityLevel>,
}

impl ScoreSpec {
    pub fn new(levels: Vec<PriorityLevel>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidValue(
                "a score specification needs at least one level".into(),
            ));
        }
        for level in &levels {
            level.validate()?;
        }
        Ok(ScoreSpec { levels })
    }

    pub fn levels(&self) -> &[PriorityLevel] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

impl TryFrom<Vec<PriorityLevel>> for ScoreSpec {
    type Error = Error;

    fn try_from(levels: Vec<PriorityLevel>) -> Result<Self> {
        ScoreSpec::new(levels)
    }
}

impl From<ScoreSpec> for Vec<PriorityLevel> {
    fn from(spec: ScoreSpec) -> Self {
        spec.levels
    }
}

/// Outcome of comparing an experimental-arm outcome against a control-arm one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Score {
    Unfavorable = -1,
    Neutral = 0,
    Favorable = 1,
}

impl Score {
    pub fn value(self) -> i8 {
        self as i8
    }

    pub fn from_sign(x: f64) -> Score {
        if x > 0.0 {
            Score::Favorable
        } else if x < 0.0 {
            Score::Unfavorable
        } else {
            Score::Neutral
        }
    }

    pub fn negate(self) -> Score {
        match self {
            Score::Unfavorable => Score::Favorable,
            Score::Neutral => Score::Neutral,
            Score::Favorable => Score::Unfavorable,
        }
    }

    /// Position in the `[-1, 0, +1]` class ordering.
    pub fn class_index(self) -> usize {
        (self.value() + 1) as usize
    }
}

impl From<Score> for i8 {
    fn from(s: Score) -> i8 {
        s.value()
    }
}

impl TryFrom<i8> for Score {
    type Error = Error;

    fn try_from(v: i8) -> Result<Score> {
        match v {
            -1 => Ok(Score::Unfavorable),
            0 => Ok(Score::Neutral),
            1 => Ok(Score::Favorable),
            other => Err(Error::Domain(format!("score must be -1, 0 or 1, got {other}"))),
        }
    }
}

/// Compares one outcome level. `y` belongs to the control subject and `v`
/// to the experimental subject; `+1` means `v` is better.
pub fn compare_level(level: &PriorityLevel, y: f64, v: f64) -> Result<Score> {
    if !y.is_finite() || !v.is_finite() {
        return Err(Error::InvalidValue(format!(
            "outcomes must be finite, got ({y}, {v})"
        )));
    }
    if level.kind == OutcomeKind::Binary {
        for x in [y, v] {
            if x != 0.0 && x != 1.0 {
                return Err(Error::Domain(format!(
                    "binary outcome must be 0 or 1, got {x}"
                )));
            }
        }
    }
    let (y, v) = match level.direction {
        Direction::HigherIsBetter => (y, v),
        Direction::LowerIsBetter => (-y, -v),
    };
    Ok(match level.kind {
        OutcomeKind::Continuous => {
            if v - y > level.threshold {
                Score::Favorable
            } else if y - v > level.threshold {
                Score::Unfavorable
            } else {
                Score::Neutral
            }
        }
        OutcomeKind::Binary | OutcomeKind::Ordinal => Score::from_sign(v - y),
    })
}

/// Lexicographic score: the first level that separates the two outcome
/// vectors decides, lower levels are only consulted on ties.
pub fn score(spec: &ScoreSpec, y: &[f64], v: &[f64]) -> Result<Score> {
    for found in [y.len(), v.len()] {
        if found != spec.len() {
            return Err(Error::Shape {
                expected: spec.len(),
                found,
            });
        }
    }
    for (level, (&a, &b)) in spec.levels.iter().zip(y.iter().zip(v)) {
        let s = compare_level(level, a, b)?;
        if s != Score::Neutral {
            return Ok(s);
        }
    }
    Ok(Score::Neutral)
}
