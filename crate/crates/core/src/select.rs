//! Deciding when an oracle query is worth its price.
//!
//! A record's uncertainty is the perplexity of its neighbour-label
//! distribution. The gain from asking the oracle is how much more confident
//! the oracle is expected to be than propagation. A query is admitted when
//! gain per unit cost clears a threshold that rises exponentially with the
//! fraction of budget already spent, and the query still fits the budget.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::LabelDistribution;
use crate::error::{Error, Result};
use crate::oracle::render_prompt;
use crate::records::Record;
use crate::embed::serialize_record;

/// Value-density range assumed by the admission threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityBounds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for DensityBounds {
    fn default() -> Self {
        Self {
            lower: 20.0,
            upper: 1000.0,
        }
    }
}

impl DensityBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower > 0.0 && self.upper > self.lower && self.upper.is_finite()) {
            return Err(Error::Config(format!(
                "density bounds need 0 < L < U, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    /// `ln(U/L) + 1`.
    pub fn competitive_ratio(&self) -> f64 {
        (self.upper / self.lower).ln() + 1.0
    }
}

/// Price per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pricing {
    pub input_per_million: f64,
    pub output_per_million: f64,
}

impl Default for Pricing {
    fn default() -> Self {
        Self {
            input_per_million: 0.25,
            output_per_million: 2.00,
        }
    }
}

impl Pricing {
    pub fn cost(&self, tokens_in: u64, tokens_out: u64) -> f64 {
        tokens_in as f64 / 1e6 * self.input_per_million
            + tokens_out as f64 / 1e6 * self.output_per_million
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    /// Expected oracle confidence.
    pub delta_llm: f64,
    pub bounds: DensityBounds,
    pub pricing: Pricing,
    /// Characters per token for the prompt-size estimate.
    pub chars_per_token: usize,
    /// Output allowance per query (one index or `NONE`).
    pub output_tokens: u64,
    /// Cap on oracle queries per record across the run; `None` is unlimited.
    pub max_queries_per_record: Option<usize>,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            delta_llm: 0.95,
            bounds: DensityBounds::default(),
            pricing: Pricing::default(),
            chars_per_token: 4,
            output_tokens: 4,
            max_queries_per_record: None,
        }
    }
}

impl SelectionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_llm > 0.0 && self.delta_llm <= 1.0) {
            return Err(Error::Config(format!(
                "delta_llm must be in (0, 1], got {}",
                self.delta_llm
            )));
        }
        if self.chars_per_token == 0 {
            return Err(Error::Config("chars_per_token must be >= 1".into()));
        }
        if self.pricing.input_per_million < 0.0 || self.pricing.output_per_million < 0.0 {
            return Err(Error::Config("prices must be non-negative".into()));
        }
        self.bounds.validate()
    }
}

/// Token count estimate: `ceil(chars / chars_per_token)`.
pub fn estimate_tokens(text: &str, chars_per_token: usize) -> u64 {
    text.chars().count().div_ceil(chars_per_token) as u64
}

fn entropy(pi: &LabelDistribution) -> f64 {
    -pi.masses()
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// `exp(entropy)`, in `[1, |labels|]`.
pub fn label_perplexity(pi: &LabelDistribution) -> Result<f64> {
    if pi.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    Ok(entropy(pi).exp().clamp(1.0, pi.len() as f64))
}

/// Confidence of the propagation step: `(1 - log_b ρ) · max π` with
/// `b = max(|labels|, 2)`. Zero for an empty distribution.
pub fn wlp_confidence(pi: &LabelDistribution) -> f64 {
    let Some((_, top)) = pi.argmax() else {
        return 0.0;
    };
    let base = (pi.len().max(2) as f64).ln();
    // log_b ρ = H / ln b
    let normalized = (entropy(pi) / base).clamp(0.0, 1.0);
    ((1.0 - normalized) * top).clamp(0.0, 1.0)
}

pub fn marginal_value_gain(delta_llm: f64, delta_wlp: f64) -> f64 {
    (delta_llm - delta_wlp).max(0.0)
}

/// Estimated tokens and price of one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEstimate {
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub cost: f64,
}

pub fn estimate_prompt_cost(prompt: &str, params: &SelectionParams) -> CostEstimate {
    let tokens_in = estimate_tokens(prompt, params.chars_per_token);
    let tokens_out = params.output_tokens;
    CostEstimate {
        tokens_in,
        tokens_out,
        cost: params.pricing.cost(tokens_in, tokens_out),
    }
}

/// Price of asking about `target` against `candidates`, from the rendered
/// prompt's size.
pub fn estimate_query_cost(target: &Record, candidates: &[&Record], params: &SelectionParams) -> f64 {
    let cands: Vec<String> = candidates.iter().map(|r| serialize_record(r)).collect();
    let prompt = render_prompt(&serialize_record(target), &cands);
    estimate_prompt_cost(&prompt, params).cost
}

/// Minimum gain per unit cost at spent budget `beta` out of `budget`:
/// `(L/e) · (U·e/L)^(beta/budget)`. Infinite when the budget is zero.
pub fn admission_threshold(beta: f64, budget: f64, bounds: &DensityBounds) -> f64 {
    if budget <= 0.0 {
        return f64::INFINITY;
    }
    let z = (beta / budget).clamp(0.0, 1.0);
    let e = std::f64::consts::E;
    bounds.lower / e * (bounds.upper * e / bounds.lower).powf(z)
}

/// One charged oracle query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub record: usize,
    pub iteration: usize,
    pub estimated: f64,
    /// Amount charged; equals the reported cost unless clamped.
    pub actual: f64,
    /// Reported cost above what the budget allowed.
    pub overage: f64,
}

/// Spend tracker for a fixed budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetLedger {
    budget: f64,
    beta: f64,
    entries: Vec<LedgerEntry>,
    violations: usize,
}

impl BudgetLedger {
    pub fn new(budget: f64) -> Self {
        Self {
            budget: budget.max(0.0),
            beta: 0.0,
            entries: Vec::new(),
            violations: 0,
        }
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn spent(&self) -> f64 {
        self.beta
    }

    pub fn remaining(&self) -> f64 {
        (self.budget - self.beta).max(0.0)
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Charges whose reported cost exceeded the remaining budget.
    pub fn violations(&self) -> usize {
        self.violations
    }

    pub fn fits(&self, cost: f64) -> bool {
        self.beta + cost <= self.budget
    }

    /// Record a query. A reported cost that would overshoot the budget is
    /// clamped to what remains and counted as a violation. Returns the amount
    /// charged.
    pub fn charge(&mut self, record: usize, iteration: usize, estimated: f64, actual: f64) -> f64 {
        let actual = actual.max(0.0);
        let mut charged = actual;
        let mut overage = 0.0;
        if self.beta + actual > self.budget {
            charged = self.remaining();
            overage = actual - charged;
            self.violations += 1;
            log::warn!(
                "oracle cost {actual} for record {record} exceeds remaining budget {charged}; clamped"
            );
        }
        self.beta += charged;
        if self.beta > self.budget {
            self.beta = self.budget;
        }
        self.entries.push(LedgerEntry {
            record,
            iteration,
            estimated,
            actual: charged,
            overage,
        });
        charged
    }
}

/// Whether `gain / cost` falls outside the density bounds.
pub fn density_out_of_bounds(gain: f64, cost: f64, bounds: &DensityBounds) -> bool {
    let d = gain / cost;
    d < bounds.lower || d > bounds.upper
}

/// Admit a query of value `gain` and price `cost` given the ledger state.
/// The density is clamped into the bounds before comparison; zero gain is
/// never admitted.
pub fn admit(gain: f64, cost: f64, ledger: &BudgetLedger, bounds: &DensityBounds) -> bool {
    if !(gain > 0.0) || !(cost > 0.0) || !ledger.fits(cost) {
        return false;
    }
    let density = (gain / cost).clamp(bounds.lower, bounds.upper);
    density >= admission_threshold(ledger.spent(), ledger.budget(), bounds)
}

/// Outcome of replaying one online instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimOutcome {
    pub policy_value: f64,
    pub offline_value: f64,
    /// `offline / policy`; infinite when the policy gained nothing but the
    /// optimum did, 1 when both are zero.
    pub ratio: f64,
}

/// Fractional knapsack optimum: take items by descending density until the
/// capacity is full.
pub fn fractional_optimum(items: &[(f64, f64)], capacity: f64) -> f64 {
    let mut sorted: Vec<(f64, f64)> = items.to_vec();
    sorted.sort_by(|a, b| (b.0 / b.1).total_cmp(&(a.0 / a.1)));
    let mut left = capacity;
    let mut value = 0.0;
    for (gain, cost) in sorted {
        if left <= 0.0 {
            break;
        }
        let take = cost.min(left);
        value += gain * take / cost;
        left -= take;
    }
    value
}

/// Replay each `(gain, cost)` sequence through [`admit`] and compare against
/// the fractional offline optimum. Items must be small (`cost <= budget/100`)
/// with densities inside the bounds.
pub fn simulate_threshold_policy(
    instances: &[Vec<(f64, f64)>],
    budget: f64,
    bounds: &DensityBounds,
) -> Result<Vec<SimOutcome>> {
    bounds.validate()?;
    if !(budget > 0.0) {
        return Err(Error::Config("simulation budget must be > 0".into()));
    }
    let tol = 1e-9;
    instances
        .iter()
        .enumerate()
        .map(|(idx, items)| {
            for (k, &(gain, cost)) in items.iter().enumerate() {
                if !(cost > 0.0) || cost > budget / 100.0 * (1.0 + tol) {
                    return Err(Error::Instance {
                        instance: idx,
                        reason: format!("item {k} cost {cost} is not in (0, B/100]"),
                    });
                }
                let d = gain / cost;
                if d < bounds.lower * (1.0 - tol) || d > bounds.upper * (1.0 + tol) {
                    return Err(Error::Instance {
                        instance: idx,
                        reason: format!("item {k} density {d} outside [{}, {}]", bounds.lower, bounds.upper),
                    });
                }
            }
            let mut ledger = BudgetLedger::new(budget);
            let mut policy_value = 0.0;
            for (k, &(gain, cost)) in items.iter().enumerate() {
                if admit(gain, cost, &ledger, bounds) {
                    ledger.charge(k, 0, cost, cost);
                    policy_value += gain;
                }
            }
            let offline_value = fractional_optimum(items, budget);
            let ratio = if policy_value > 0.0 {
                offline_value / policy_value
            } else if offline_value > 0.0 {
                f64::INFINITY
            } else {
                1.0
            };
            Ok(SimOutcome {
                policy_value,
                offline_value,
                ratio,
            })
        })
        .collect()
}

/// Arrival order used by [`generate_instances`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalOrder {
    Random,
    /// Densities rise over time, the hard case for threshold policies.
    Ascending,
    Descending,
}

/// Random small-item instances with densities in the bounds. Orders cycle
/// through random, ascending (truncated at a random top density) and
/// descending arrival.
pub fn generate_instances(
    count: usize,
    budget: f64,
    bounds: &DensityBounds,
    seed: u64,
) -> Vec<Vec<(f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orders = [ArrivalOrder::Random, ArrivalOrder::Ascending, ArrivalOrder::Descending];
    (0..count)
        .map(|idx| {
            let order = orders[idx % orders.len()];
            let max_cost = budget / 100.0;
            let supply = rng.random_range(0.5..8.0) * budget;
            let top = match order {
                ArrivalOrder::Ascending => rng.random_range(bounds.lower..=bounds.upper),
                _ => bounds.upper,
            };
            let mut items = Vec::new();
            let mut total = 0.0;
            while total < supply {
                let cost = rng.random_range(max_cost * 0.01..=max_cost);
                let density = rng.random_range(bounds.lower..=top);
                items.push((density * cost, cost));
                total += cost;
            }
            let density = |it: &(f64, f64)| it.0 / it.1;
            match order {
                ArrivalOrder::Random => items.shuffle(&mut rng),
                ArrivalOrder::Ascending => items.sort_by(|a, b| density(a).total_cmp(&density(b))),
                ArrivalOrder::Descending => items.sort_by(|a, b| density(b).total_cmp(&density(a))),
            }
            items
        })
        .collect()
}

/// CSV `instance,policy_value,offline_value,ratio`.
pub fn write_sim_csv<W: Write>(outcomes: &[SimOutcome], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["instance", "policy_value", "offline_value", "ratio"])?;
    for (i, o) in outcomes.iter().enumerate() {
        w.write_record([
            i.to_string(),
            o.policy_value.to_string(),
            o.offline_value.to_string(),
            o.ratio.to_string(),
        ])?;
    }
    w.flush().map_err(crate::error::io_err("<sim csv>"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Label;
    use proptest::prelude::*;

    fn dist(masses: &[f64]) -> LabelDistribution {
        LabelDistribution::from_masses(masses.iter().enumerate().map(|(i, &p)| (Label(i as u32), p)))
    }

    #[test]
    fn perplexity_cases() {
        assert_eq!(label_perplexity(&dist(&[1.0])).unwrap(), 1.0);
        assert!((label_perplexity(&dist(&[0.25; 4])).unwrap() - 4.0).abs() < 1e-12);
        // exp(0.75 ln(4/3) + 0.25 ln 4)
        let expected = (0.75f64 * (4.0f64 / 3.0).ln() + 0.25 * 4.0f64.ln()).exp();
        assert!((expected - 1.7548).abs() < 1e-4);
        assert!((label_perplexity(&dist(&[0.75, 0.25])).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(
            label_perplexity(&LabelDistribution::default()),
            Err(Error::EmptyDistribution)
        ));
    }

    #[test]
    fn confidence_cases() {
        assert_eq!(wlp_confidence(&dist(&[1.0])), 1.0);
        assert!(wlp_confidence(&dist(&[0.5, 0.5])).abs() < 1e-12);
        for k in 2..=12 {
            let p = 1.0 / k as f64;
            assert!(wlp_confidence(&dist(&vec![p; k])).abs() < 1e-12, "k={k}");
        }
        assert_eq!(wlp_confidence(&LabelDistribution::default()), 0.0);
    }

    #[test]
    fn gain_cases() {
        assert_eq!(marginal_value_gain(0.95, 1.0), 0.0);
        assert_eq!(marginal_value_gain(0.95, 0.0), 0.95);
        assert!((marginal_value_gain(0.95, 0.6) - 0.35).abs() < 1e-12);
    }

    #[test]
    fn pricing_per_million() {
        let p = Pricing::default();
        assert!((p.cost(1_000_000, 0) - 0.25).abs() < 1e-15);
        assert!((p.cost(0, 1_000_000) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_attributes_cost_is_template_baseline() {
        let params = SelectionParams::default();
        let target = Record::new("t");
        let cands = [Record::new("c1"), Record::new("c2")];
        let refs: Vec<&Record> = cands.iter().collect();
        let baseline = render_prompt("", &[String::new(), String::new()]);
        let expected = params
            .pricing
            .cost(baseline.chars().count().div_ceil(4) as u64, 4);
        assert_eq!(estimate_query_cost(&target, &refs, &params), expected);
    }

    #[test]
    fn longer_candidates_cost_more() {
        let params = SelectionParams::default();
        let target = Record::new("t").with("name", "acme corp");
        let short = Record::new("c").with("name", "acme corporation ltd");
        let long = Record::new("c").with("name", "acme corporation ltd".repeat(2));
        let a = estimate_query_cost(&target, &[&short], &params);
        let b = estimate_query_cost(&target, &[&long], &params);
        assert!(b > a);
    }

    #[test]
    fn threshold_endpoints() {
        let b = DensityBounds::default();
        assert!((admission_threshold(1.0, 1.0, &b) - 1000.0).abs() < 1e-9);
        let at0 = admission_threshold(0.0, 1.0, &b);
        assert!((at0 - 7.357588823428847).abs() < 1e-9);
        let half = admission_threshold(0.5, 1.0, &b);
        assert!((half - (at0 * 1000.0).sqrt()).abs() < 1e-9);
        assert!((half - 85.776).abs() < 0.01);
        assert_eq!(admission_threshold(0.0, 0.0, &b), f64::INFINITY);
    }

    #[test]
    fn admission_rules() {
        let b = DensityBounds::default();
        let ledger = BudgetLedger::new(1.0);
        assert!(!admit(0.0, 0.001, &ledger, &b));
        assert!(!admit(0.9, 1.5, &ledger, &b));
        assert!(admit(1000.0 * 0.001, 0.001, &ledger, &b));
        assert!(!admit(1.0, 0.001, &BudgetLedger::new(0.0), &b));
    }

    #[test]
    fn ledger_clamps_overage() {
        let mut l = BudgetLedger::new(1.0);
        l.charge(0, 1, 0.5, 0.6);
        assert_eq!(l.charge(1, 1, 0.3, 0.5), 0.4);
        assert_eq!(l.spent(), 1.0);
        assert_eq!(l.violations(), 1);
        let sum: f64 = l.entries().iter().map(|e| e.actual).sum();
        assert_eq!(sum, l.spent());
    }

    #[test]
    fn sim_single_top_item() {
        let b = DensityBounds::default();
        let out = simulate_threshold_policy(&[vec![(1000.0 * 0.01, 0.01)]], 1.0, &b).unwrap();
        assert_eq!(out[0].ratio, 1.0);
    }

    #[test]
    fn sim_all_at_lower_density() {
        let b = DensityBounds::default();
        let items: Vec<(f64, f64)> = (0..1000).map(|_| (20.0 * 0.005, 0.005)).collect();
        let out = simulate_threshold_policy(&[items], 1.0, &b).unwrap();
        assert!(out[0].ratio <= b.competitive_ratio());
        assert!(out[0].policy_value > 0.0);
    }

    #[test]
    fn sim_rejects_bad_items() {
        let b = DensityBounds::default();
        assert!(simulate_threshold_policy(&[vec![(1.0, 0.1)]], 1.0, &b).is_err());
        assert!(simulate_threshold_policy(&[vec![(5000.0 * 0.001, 0.001)]], 1.0, &b).is_err());
    }

    #[test]
    fn fractional_optimum_fills_capacity() {
        let items = [(10.0, 1.0), (4.0, 2.0), (1.0, 1.0)];
        assert_eq!(fractional_optimum(&items, 2.0), 12.0);
    }

    #[test]
    fn bounds_validation() {
        assert!(DensityBounds::new(20.0, 20.0).is_err());
        assert!(DensityBounds::new(0.0, 1.0).is_err());
        assert!((DensityBounds::default().competitive_ratio() - 4.912023005428146).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn perplexity_within_range(raw in proptest::collection::vec(0.001f64..1.0, 1..12)) {
            let total: f64 = raw.iter().sum();
            let pi = dist(&raw.iter().map(|x| x / total).collect::<Vec<_>>());
            let rho = label_perplexity(&pi).unwrap();
            prop_assert!((1.0..=raw.len() as f64).contains(&rho));
            let c = wlp_confidence(&pi);
            prop_assert!((0.0..=1.0).contains(&c));
        }

        #[test]
        fn admit_is_monotone(gain in 0.0f64..2.0, extra in 0.0f64..1.0, cost in 1e-5f64..0.05, shrink in 0.1f64..1.0, spent in 0.0f64..0.9) {
            let b = DensityBounds::default();
            let mut ledger = BudgetLedger::new(1.0);
            ledger.charge(0, 0, spent, spent);
            if admit(gain, cost, &ledger, &b) {
                prop_assert!(admit(gain + extra, cost, &ledger, &b));
                prop_assert!(admit(gain, cost * shrink, &ledger, &b));
            }
        }

        #[test]
        fn threshold_increasing(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assume!(a < b);
            let bounds = DensityBounds::default();
            prop_assert!(admission_threshold(a, 1.0, &bounds) < admission_threshold(b, 1.0, &bounds));
        }
    }
}
