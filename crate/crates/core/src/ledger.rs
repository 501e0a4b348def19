//! Per-stream budget accounting for w-event privacy.
//!
//! A stream satisfies w-event ε-LDP at the accounting level when every run of
//! `w` consecutive slots spends at most ε in total.

use crate::error::{domain, Error, Result};

/// Slack allowed on window sums for floating-point accumulation.
pub const WINDOW_TOLERANCE: f64 = 1e-12;

/// Append-only record of per-slot spends with an O(1) sliding window sum.
#[derive(Debug, Clone)]
pub struct BudgetLedger {
    w: usize,
    epsilon_total: f64,
    spends: Vec<f64>,
    window_sum: f64,
    first_violation: Option<(usize, f64)>,
}

impl BudgetLedger {
    pub fn new(w: usize, epsilon_total: f64) -> Result<Self> {
        if w == 0 {
            return domain("window size must be at least 1");
        }
        if !(epsilon_total > 0.0 && epsilon_total.is_finite()) {
            return domain(format!("total budget must be positive, got {epsilon_total}"));
        }
        Ok(Self {
            w,
            epsilon_total,
            spends: Vec::new(),
            window_sum: 0.0,
            first_violation: None,
        })
    }

    pub fn window(&self) -> usize {
        self.w
    }

    pub fn epsilon_total(&self) -> f64 {
        self.epsilon_total
    }

    pub fn spends(&self) -> &[f64] {
        &self.spends
    }

    /// Index of the next slot to record.
    pub fn next_slot(&self) -> usize {
        self.spends.len()
    }

    /// Sum over the window ending at the last recorded slot.
    pub fn current_window_sum(&self) -> f64 {
        self.window_sum
    }

    /// Budget the next slot may spend without breaking the window bound.
    pub fn available_next(&self) -> f64 {
        let n = self.spends.len();
        let keep = self.w - 1;
        let recent: f64 = self.spends[n.saturating_sub(keep)..].iter().sum();
        (self.epsilon_total - recent).max(0.0)
    }

    /// Records `amount` at `slot`, which must be the next unrecorded slot.
    pub fn record(&mut self, slot: usize, amount: f64) -> Result<()> {
        if slot != self.spends.len() {
            return Err(Error::Usage(format!(
                "ledger is append-only: expected slot {}, got {slot}",
                self.spends.len()
            )));
        }
        if !(amount >= 0.0 && amount.is_finite()) {
            return domain(format!("spend must be nonnegative and finite, got {amount}"));
        }
        self.spends.push(amount);
        let n = self.spends.len();
        if n.is_multiple_of(self.w) {
            // Resynchronise once per full rotation so drift cannot build up.
            self.window_sum = self.spends[n - self.w..].iter().sum();
        } else {
            self.window_sum += amount;
            if n > self.w {
                self.window_sum -= self.spends[n - 1 - self.w];
            }
        }
        if self.first_violation.is_none() && self.window_sum > self.epsilon_total + WINDOW_TOLERANCE
        {
            self.first_violation = Some((slot, self.window_sum));
        }
        Ok(())
    }

    /// Appends `amount` at the next slot.
    pub fn push(&mut self, amount: f64) -> Result<()> {
        self.record(self.spends.len(), amount)
    }

    /// Ok when every window recorded so far is within budget; otherwise the
    /// first violating window.
    pub fn assert_w_event(&self) -> Result<()> {
        match self.first_violation {
            None => Ok(()),
            Some((slot, sum)) => Err(Error::BudgetViolation {
                slot,
                sum,
                limit: self.epsilon_total,
            }),
        }
    }

    /// Window sums recomputed from scratch, one per recorded slot.
    pub fn window_sums(&self) -> Vec<f64> {
        (0..self.spends.len())
            .map(|t| {
                let lo = (t + 1).saturating_sub(self.w);
                self.spends[lo..=t].iter().sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_split_spends_exactly_epsilon() {
        let (w, eps) = (10, 1.0);
        let mut l = BudgetLedger::new(w, eps).unwrap();
        for _ in 0..100 {
            l.push(eps / w as f64).unwrap();
        }
        assert!(l.assert_w_event().is_ok());
        for s in &l.window_sums()[w - 1..] {
            assert!((s - eps).abs() < 1e-12);
        }
    }

    #[test]
    fn overspend_is_reported_at_its_window() {
        let mut l = BudgetLedger::new(4, 1.0).unwrap();
        for _ in 0..6 {
            l.push(0.25).unwrap();
        }
        l.push(2.0).unwrap();
        l.push(0.0).unwrap();
        match l.assert_w_event() {
            Err(Error::BudgetViolation { slot, sum, .. }) => {
                assert_eq!(slot, 6);
                assert!((sum - 2.75).abs() < 1e-12);
            }
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[test]
    fn zero_spend_leaves_sum_unchanged() {
        let mut l = BudgetLedger::new(3, 1.0).unwrap();
        l.push(0.5).unwrap();
        let before = l.current_window_sum();
        l.push(0.0).unwrap();
        assert_eq!(l.current_window_sum(), before);
        assert!((l.available_next() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_order_and_negative() {
        let mut l = BudgetLedger::new(3, 1.0).unwrap();
        assert!(matches!(l.record(1, 0.1), Err(Error::Usage(_))));
        assert!(l.record(0, -0.1).is_err());
        assert!(BudgetLedger::new(0, 1.0).is_err());
        assert!(BudgetLedger::new(3, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn incremental_sums_match_scratch(
            w in 1usize..20,
            spends in proptest::collection::vec(0.0f64..0.3, 1..300),
        ) {
            let mut l = BudgetLedger::new(w, 1e9).unwrap();
            for (t, s) in spends.iter().enumerate() {
                l.push(*s).unwrap();
                let scratch = l.window_sums()[t];
                prop_assert!((l.current_window_sum() - scratch).abs() < 1e-12);
            }
        }

        #[test]
        fn violation_iff_some_window_exceeds(
            w in 1usize..8,
            spends in proptest::collection::vec(0.0f64..0.5, 1..60),
        ) {
            let mut l = BudgetLedger::new(w, 1.0).unwrap();
            for s in &spends {
                l.push(*s).unwrap();
            }
            let any = l.window_sums().iter().any(|s| *s > 1.0 + WINDOW_TOLERANCE);
            prop_assert_eq!(l.assert_w_event().is_err(), any);
        }
    }
}
