//! Periodic masks of the form `period:from-to`, comma separated.
//!
//! A rule masks step `t` when `t mod period` lies in `[from, to)`. With
//! `from > to` the window wraps around, so `24:20-6` masks night hours.

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskRule {
    pub period: usize,
    pub from: usize,
    pub to: usize,
}

impl MaskRule {
    pub fn contains(&self, t: usize) -> bool {
        let phase = t % self.period;
        if self.from <= self.to {
            (self.from..self.to).contains(&phase)
        } else {
            phase >= self.from || phase < self.to
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodicMask(pub Vec<MaskRule>);

impl PeriodicMask {
    pub fn contains(&self, t: usize) -> bool {
        self.0.iter().any(|r| r.contains(t))
    }
}

impl std::str::FromStr for PeriodicMask {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let bad = |why: &str| CliError::Usage(format!("invalid mask '{s}': {why}"));
        let num = |v: &str| v.trim().parse::<usize>().map_err(|_| bad("expected non-negative integers"));
        let mut rules = Vec::new();
        for part in s.split(',') {
            let (period, range) = part.split_once(':').ok_or_else(|| bad("expected period:from-to"))?;
            let (from, to) = range.split_once('-').ok_or_else(|| bad("expected period:from-to"))?;
            let rule = MaskRule {
                period: num(period)?,
                from: num(from)?,
                to: num(to)?,
            };
            if rule.period == 0 || rule.from >= rule.period || rule.to > rule.period {
                return Err(bad("need period >= 1, from < period and to <= period"));
            }
            rules.push(rule);
        }
        Ok(Self(rules))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrapping_night_window() {
        let m: PeriodicMask = "24:20-6".parse().unwrap();
        let masked: Vec<usize> = (0..24).filter(|&t| m.contains(t)).collect();
        assert_eq!(masked, vec![0, 1, 2, 3, 4, 5, 20, 21, 22, 23]);
        assert!(m.contains(24 + 3) && !m.contains(24 + 12));
    }

    #[test]
    fn union_of_rules_and_full_period() {
        let m: PeriodicMask = "10:0-2,10:5-6".parse().unwrap();
        assert_eq!((0..10).filter(|&t| m.contains(t)).count(), 3);
        let all: PeriodicMask = "3:0-3".parse().unwrap();
        assert!((0..30).all(|t| all.contains(t)));
        let none: PeriodicMask = "3:1-1".parse().unwrap();
        assert!((0..30).all(|t| !none.contains(t)));
    }

    #[test]
    fn rejects_malformed() {
        for s in ["", "24", "24:5", "0:0-0", "24:25-3", "a:1-2", "24:1-30"] {
            assert!(s.parse::<PeriodicMask>().is_err(), "{s}");
        }
    }
}
