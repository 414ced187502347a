//! Agent behaviors shared by the simulator and the backtester.
//!
//! A strategy maps an [`Observation`] (plus the agent's own seeded rng) to a
//! list of [`Action`]s. Strategies keep no state between polls; everything
//! they need is in the observation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::accounting::AgentAccount;
use crate::lob::OrderId;
use crate::marketdata::{InstrumentSpec, Side};
use crate::predictor::{OnlinePredictor, PredictorConfig, PredictorError};
use crate::rng::SimRng;
use crate::{Atoms, Lots, Ticks, Ts};

/// One of the agent's live orders, with the escrow backing it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LiveOrder {
    pub id: OrderId,
    pub side: Side,
    pub price: Ticks,
    pub qty: Lots,
    pub reserved: i64,
}

/// Best competitor quotes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TopOfBook {
    pub bid: Option<Ticks>,
    pub ask: Option<Ticks>,
}

impl TopOfBook {
    pub fn mid(&self) -> Option<f64> {
        match (self.bid, self.ask) {
            (Some(b), Some(a)) => Some((b + a) as f64 / 2.0),
            (Some(p), None) | (None, Some(p)) => Some(p as f64),
            (None, None) => None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    pub now_ts: Ts,
    /// Number of earlier polls of this agent.
    pub poll_index: usize,
    /// Fundamental price in the simulator, last trade price in backtests.
    pub reference_price: Ticks,
    /// Latest book view; absent when no snapshot is known yet.
    pub book: Option<TopOfBook>,
    pub account: &'a AgentAccount,
    pub initial_base: Lots,
    pub live_orders: &'a [LiveOrder],
    pub predicted: Option<Ticks>,
    pub spec: &'a InstrumentSpec,
}

impl Observation<'_> {
    pub fn inventory(&self) -> Lots {
        self.account.total_base() - self.initial_base
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "action")]
pub enum Action {
    Cancel { id: OrderId },
    Limit { side: Side, price: Ticks, qty: Lots },
    Market { side: Side, qty: Lots },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Requote {
    /// Cancel every live order, then quote afresh.
    #[default]
    CancelAll,
    /// Leave an order alone when a new quote would have the same side and price.
    KeepIfUnchanged,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MMParams {
    #[serde(default = "one")]
    pub order_size: Lots,
    #[serde(default)]
    pub half_spread: Ticks,
    #[serde(default)]
    pub requote: Requote,
    /// Absolute inventory limit in lots; defaults to ten orders.
    #[serde(default)]
    pub inventory_cap: Option<Lots>,
    #[serde(default = "one")]
    pub improvement: Ticks,
}

fn one() -> i64 {
    1
}

impl Default for MMParams {
    fn default() -> Self {
        Self {
            order_size: 1,
            half_spread: 0,
            requote: Requote::CancelAll,
            inventory_cap: None,
            improvement: 1,
        }
    }
}

impl MMParams {
    pub fn cap(&self) -> Lots {
        self.inventory_cap.unwrap_or(10 * self.order_size)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.order_size < 1 {
            return Err("order_size must be >= 1".into());
        }
        if self.half_spread < 0 {
            return Err("half_spread must be >= 0".into());
        }
        if self.improvement < 0 {
            return Err("improvement must be >= 0".into());
        }
        if self.inventory_cap.is_some_and(|c| c < 0) {
            return Err("inventory_cap must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    /// Probability of trading on a poll.
    pub lambda: f64,
    /// Strength of the pull toward the fundamental, per tick of mispricing.
    #[serde(default)]
    pub kappa: f64,
    /// Success probability of the geometric size draw (mean size `1/size_p`).
    #[serde(default = "half")]
    pub size_p: f64,
    #[serde(default = "ten")]
    pub max_size: Lots,
}

fn half() -> f64 {
    0.5
}

fn ten() -> Lots {
    10
}

impl NoiseParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err("lambda must be in [0, 1]".into());
        }
        if !self.kappa.is_finite() {
            return Err("kappa must be finite".into());
        }
        if !(self.size_p > 0.0 && self.size_p <= 1.0) {
            return Err("size_p must be in (0, 1]".into());
        }
        if self.max_size < 1 {
            return Err("max_size must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum StrategySpec {
    Hodl,
    ZeroSpread {
        #[serde(default)]
        params: MMParams,
    },
    TickBetter {
        #[serde(default)]
        params: MMParams,
        #[serde(default)]
        clamp_to_prediction: bool,
    },
    NoiseTaker {
        params: NoiseParams,
    },
}

impl StrategySpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Hodl => "hodl",
            Self::ZeroSpread { .. } => "zero_spread",
            Self::TickBetter { .. } => "tick_better",
            Self::NoiseTaker { .. } => "noise_taker",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Self::Hodl => Ok(()),
            Self::ZeroSpread { params } | Self::TickBetter { params, .. } => params.validate(),
            Self::NoiseTaker { params } => params.validate(),
        }
    }

    pub fn decide(&self, obs: &Observation, rng: &mut SimRng) -> Vec<Action> {
        match self {
            Self::Hodl => hodl(obs),
            Self::ZeroSpread { params } => zero_spread_mm(obs, params),
            Self::TickBetter {
                params,
                clamp_to_prediction,
            } => tick_better_mm(obs, params, *clamp_to_prediction),
            Self::NoiseTaker { params } => noise_taker(obs, rng, params),
        }
    }
}

/// Buy with the whole quote balance on the first poll, then sit.
pub fn hodl(obs: &Observation) -> Vec<Action> {
    if obs.poll_index > 0 {
        return Vec::new();
    }
    let price = obs.book.and_then(|b| b.ask).unwrap_or(obs.reference_price);
    let qty = obs.spec.lots_affordable(obs.account.quote, price);
    if qty > 0 {
        vec![Action::Market {
            side: Side::Buy,
            qty,
        }]
    } else {
        Vec::new()
    }
}

/// Cancels plus new quotes for a two-sided market maker.
///
/// `targets` holds the wanted `(bid, ask)` prices. A side is skipped when the
/// inventory cap is reached or the full order size cannot be backed by free
/// balance plus the escrow released by this poll's cancels.
fn requote(
    obs: &Observation,
    params: &MMParams,
    bid: Option<Ticks>,
    ask: Option<Ticks>,
) -> Vec<Action> {
    let mut actions = Vec::new();
    let inv = obs.inventory();
    let bid = bid.filter(|&p| p > 0 && inv < params.cap());
    let ask = ask.filter(|&p| p > 0 && inv > -params.cap());

    let mut keep_bid = false;
    let mut keep_ask = false;
    let mut free_quote: Atoms = obs.account.quote;
    let mut free_base: Lots = obs.account.base;
    for o in obs.live_orders {
        let wanted = match o.side {
            Side::Buy => bid,
            Side::Sell => ask,
        };
        let keep = params.requote == Requote::KeepIfUnchanged
            && wanted == Some(o.price)
            && match o.side {
                Side::Buy => !keep_bid,
                Side::Sell => !keep_ask,
            };
        if keep {
            match o.side {
                Side::Buy => keep_bid = true,
                Side::Sell => keep_ask = true,
            }
            continue;
        }
        actions.push(Action::Cancel { id: o.id });
        match o.side {
            Side::Buy => free_quote += o.reserved,
            Side::Sell => free_base += o.reserved,
        }
    }

    let size = params.order_size;
    if let Some(p) = bid.filter(|_| !keep_bid) {
        if obs.spec.notional(size, p) <= free_quote {
            actions.push(Action::Limit {
                side: Side::Buy,
                price: p,
                qty: size,
            });
        } else {
            log::debug!("bid skipped: {} quote atoms free", free_quote);
        }
    }
    if let Some(p) = ask.filter(|_| !keep_ask) {
        if size <= free_base {
            actions.push(Action::Limit {
                side: Side::Sell,
                price: p,
                qty: size,
            });
        } else {
            log::debug!("ask skipped: {} base lots free", free_base);
        }
    }
    actions
}

/// Bid and ask around the predicted price, `half_spread` ticks each way.
pub fn zero_spread_mm(obs: &Observation, params: &MMParams) -> Vec<Action> {
    match obs.predicted {
        Some(p) => requote(
            obs,
            params,
            Some(p - params.half_spread),
            Some(p + params.half_spread),
        ),
        None => requote(obs, params, None, None),
    }
}

/// Quotes one improvement inside the competitors' best prices, falling back
/// to joining them when improving would cross.
pub fn tick_better_prices(
    book: TopOfBook,
    improvement: Ticks,
    clamp: Option<Ticks>,
) -> (Option<Ticks>, Option<Ticks>) {
    let (mut bid, mut ask) = (
        book.bid.map(|b| b + improvement),
        book.ask.map(|a| a - improvement),
    );
    if let (Some(b), Some(a)) = (bid, ask) {
        if b >= a {
            bid = book.bid;
            ask = book.ask;
        }
    }
    if let Some(p) = clamp {
        bid = bid.map(|b| b.min(p));
        ask = ask.map(|a| a.max(p));
    }
    (bid, ask)
}

pub fn tick_better_mm(
    obs: &Observation,
    params: &MMParams,
    clamp_to_prediction: bool,
) -> Vec<Action> {
    let Some(book) = obs.book.filter(|b| b.bid.is_some() || b.ask.is_some()) else {
        return Vec::new();
    };
    let clamp = if clamp_to_prediction {
        obs.predicted
    } else {
        None
    };
    let (bid, ask) = tick_better_prices(book, params.improvement, clamp);
    requote(obs, params, bid, ask)
}

/// Market order with probability `lambda`, leaning toward the fundamental.
pub fn noise_taker(obs: &Observation, rng: &mut SimRng, params: &NoiseParams) -> Vec<Action> {
    if !rng.bernoulli(params.lambda) {
        return Vec::new();
    }
    let fundamental = obs.reference_price as f64;
    let mid = obs.book.and_then(|b| b.mid()).unwrap_or(fundamental);
    let p_buy = 1.0 / (1.0 + libm::exp(-params.kappa * (fundamental - mid)));
    let side = if rng.uniform() < p_buy {
        Side::Buy
    } else {
        Side::Sell
    };
    let drawn = (rng.geometric(params.size_p) as Lots).min(params.max_size);
    let available = match side {
        Side::Buy => {
            let price = obs.book.and_then(|b| b.ask).unwrap_or(obs.reference_price);
            obs.spec.lots_affordable(obs.account.quote, price)
        }
        Side::Sell => obs.account.base,
    };
    let qty = drawn.min(available);
    if qty > 0 {
        vec![Action::Market { side, qty }]
    } else {
        Vec::new()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionKind {
    #[default]
    None,
    Oracle,
    Model,
}

/// Where an agent's price prediction comes from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionSpec {
    #[serde(default)]
    pub kind: PredictionKind,
    #[serde(default = "one_usize")]
    pub horizon: usize,
    /// Required for `kind = "model"`.
    #[serde(default)]
    pub model: Option<PredictorConfig>,
}

fn one_usize() -> usize {
    1
}

impl PredictionSpec {
    pub fn none() -> Self {
        Self {
            kind: PredictionKind::None,
            horizon: 1,
            model: None,
        }
    }

    pub fn oracle(horizon: usize) -> Self {
        Self {
            kind: PredictionKind::Oracle,
            horizon,
            model: None,
        }
    }

    pub fn model(cfg: PredictorConfig, horizon: usize) -> Self {
        Self {
            kind: PredictionKind::Model,
            horizon,
            model: Some(cfg),
        }
    }

    pub fn is_oracle(&self) -> bool {
        self.kind == PredictionKind::Oracle
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            PredictionKind::None => "none",
            PredictionKind::Oracle => "oracle",
            PredictionKind::Model => "model",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.kind != PredictionKind::None && self.horizon < 1 {
            return Err("prediction horizon must be >= 1".into());
        }
        match (self.kind, &self.model) {
            (PredictionKind::Model, None) => Err("model prediction needs a [model] table".into()),
            (PredictionKind::Model, Some(cfg)) => {
                cfg.validate().map_err(|e| e.to_string())?;
                if self.horizon > cfg.batch {
                    return Err(format!(
                        "prediction horizon {} exceeds model batch {}",
                        self.horizon, cfg.batch
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Runtime source over a price grid. `series` is the full grid and is
    /// only read by the oracle.
    pub fn build(&self, series: &Arc<Vec<Ticks>>) -> Result<PredictionSource, PredictorError> {
        Ok(match self.kind {
            PredictionKind::None => PredictionSource::None,
            PredictionKind::Oracle => PredictionSource::Oracle {
                series: Arc::clone(series),
                horizon: self.horizon,
                step: None,
            },
            PredictionKind::Model => {
                let cfg = self
                    .model
                    .clone()
                    .ok_or_else(|| PredictorError::Config("missing model config".into()))?;
                PredictionSource::Model {
                    predictor: Box::new(OnlinePredictor::new(cfg)?),
                    horizon: self.horizon,
                }
            }
        })
    }
}

/// Stateful prediction feed, advanced one grid step at a time.
#[derive(Clone, Debug)]
pub enum PredictionSource {
    None,
    /// Reads the future of the grid; evaluation use only.
    Oracle {
        series: Arc<Vec<Ticks>>,
        horizon: usize,
        step: Option<usize>,
    },
    Model {
        predictor: Box<OnlinePredictor>,
        horizon: usize,
    },
}

impl PredictionSource {
    /// Advances to the next grid step whose price is `price`.
    pub fn observe(&mut self, price: Ticks) {
        match self {
            Self::None => {}
            Self::Oracle { step, .. } => *step = Some(step.map_or(0, |s| s + 1)),
            Self::Model { predictor, .. } => predictor.observe(price),
        }
    }

    /// Predicted price `horizon` grid steps after the current one.
    pub fn predicted_price(&self) -> Option<Ticks> {
        match self {
            Self::None => None,
            Self::Oracle {
                series,
                horizon,
                step,
            } => series.get((*step)? + horizon).copied(),
            Self::Model { predictor, horizon } => predictor.predict(*horizon),
        }
    }

    pub fn is_oracle(&self) -> bool {
        matches!(self, Self::Oracle { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::AgentId;
    use crate::predictor::{ModelKind, Normalization};

    struct Fixture {
        spec: InstrumentSpec,
        account: AgentAccount,
        live: Vec<LiveOrder>,
    }

    impl Fixture {
        fn new(base: Lots, quote: Atoms) -> Self {
            Self {
                spec: InstrumentSpec::unit("X"),
                account: AgentAccount::new(AgentId(0), base, quote),
                live: Vec::new(),
            }
        }

        fn obs(&self, predicted: Option<Ticks>, book: Option<TopOfBook>) -> Observation<'_> {
            Observation {
                now_ts: 0,
                poll_index: 0,
                reference_price: 100,
                book,
                account: &self.account,
                initial_base: 0,
                live_orders: &self.live,
                predicted,
                spec: &self.spec,
            }
        }
    }

    fn book(bid: Ticks, ask: Ticks) -> Option<TopOfBook> {
        Some(TopOfBook {
            bid: Some(bid),
            ask: Some(ask),
        })
    }

    fn limits(actions: &[Action]) -> Vec<(Side, Ticks)> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::Limit { side, price, .. } => Some((*side, *price)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn hodl_first_poll_only() {
        let f = Fixture::new(0, 1000);
        let obs = f.obs(None, None);
        assert_eq!(
            hodl(&obs),
            vec![Action::Market {
                side: Side::Buy,
                qty: 10
            }]
        );
        let later = Observation {
            poll_index: 1,
            ..obs
        };
        assert!(hodl(&later).is_empty());
        let broke = Fixture::new(0, 0);
        assert!(hodl(&broke.obs(None, None)).is_empty());
    }

    #[test]
    fn zero_spread_quotes_both_sides_at_prediction() {
        let f = Fixture::new(5, 10_000);
        let a = zero_spread_mm(&f.obs(Some(100), None), &MMParams::default());
        assert_eq!(limits(&a), vec![(Side::Buy, 100), (Side::Sell, 100)]);
    }

    #[test]
    fn zero_spread_cap_and_balance() {
        let mut f = Fixture::new(10, 10_000);
        // inventory +10 = cap for order_size 1
        let a = zero_spread_mm(&f.obs(Some(100), None), &MMParams::default());
        assert_eq!(limits(&a), vec![(Side::Sell, 100)]);
        f.account.base = 3;
        f.account.quote = 99;
        let a = zero_spread_mm(&f.obs(Some(100), None), &MMParams::default());
        assert_eq!(limits(&a), vec![(Side::Sell, 100)]);
    }

    #[test]
    fn missing_prediction_cancels_stale_quotes() {
        let mut f = Fixture::new(1, 1000);
        f.live.push(LiveOrder {
            id: OrderId(7),
            side: Side::Buy,
            price: 99,
            qty: 1,
            reserved: 99,
        });
        let a = zero_spread_mm(&f.obs(None, None), &MMParams::default());
        assert_eq!(a, vec![Action::Cancel { id: OrderId(7) }]);
    }

    #[test]
    fn keep_if_unchanged_leaves_matching_quote() {
        let mut f = Fixture::new(1, 1000);
        f.live.push(LiveOrder {
            id: OrderId(7),
            side: Side::Buy,
            price: 100,
            qty: 1,
            reserved: 100,
        });
        f.account.quote_reserved = 100;
        let params = MMParams {
            requote: Requote::KeepIfUnchanged,
            ..MMParams::default()
        };
        let a = zero_spread_mm(&f.obs(Some(100), None), &params);
        assert_eq!(limits(&a), vec![(Side::Sell, 100)]);
        assert!(!a.contains(&Action::Cancel { id: OrderId(7) }));
    }

    #[test]
    fn released_escrow_counts_toward_requote() {
        let mut f = Fixture::new(0, 0);
        f.account.quote_reserved = 100;
        f.live.push(LiveOrder {
            id: OrderId(1),
            side: Side::Buy,
            price: 100,
            qty: 1,
            reserved: 100,
        });
        let a = zero_spread_mm(&f.obs(Some(100), None), &MMParams::default());
        assert_eq!(a[0], Action::Cancel { id: OrderId(1) });
        assert_eq!(limits(&a), vec![(Side::Buy, 100)]);
    }

    #[test]
    fn tick_better_examples() {
        assert_eq!(
            tick_better_prices(book(100, 103).unwrap(), 1, None),
            (Some(101), Some(102))
        );
        assert_eq!(
            tick_better_prices(book(100, 101).unwrap(), 1, None),
            (Some(100), Some(101))
        );
        assert_eq!(
            tick_better_prices(book(100, 103).unwrap(), 1, Some(101)),
            (Some(101), Some(102))
        );
        let one_sided = TopOfBook {
            bid: Some(50),
            ask: None,
        };
        assert_eq!(tick_better_prices(one_sided, 1, None), (Some(51), None));
    }

    #[test]
    fn tick_better_without_book_does_nothing() {
        let f = Fixture::new(5, 1000);
        assert!(tick_better_mm(&f.obs(Some(100), None), &MMParams::default(), true).is_empty());
        let a = tick_better_mm(&f.obs(None, book(98, 104)), &MMParams::default(), false);
        assert_eq!(limits(&a), vec![(Side::Buy, 99), (Side::Sell, 103)]);
    }

    #[test]
    fn noise_taker_zero_intensity() {
        let f = Fixture::new(5, 1000);
        let mut rng = SimRng::new(1);
        let p = NoiseParams {
            lambda: 0.0,
            kappa: 1.0,
            size_p: 0.5,
            max_size: 3,
        };
        for _ in 0..100 {
            assert!(noise_taker(&f.obs(None, book(99, 101)), &mut rng, &p).is_empty());
        }
    }

    #[test]
    fn noise_taker_is_seeded() {
        let f = Fixture::new(50, 100_000);
        let p = NoiseParams {
            lambda: 0.5,
            kappa: 0.3,
            size_p: 0.4,
            max_size: 5,
        };
        let run = || {
            let mut rng = SimRng::new(77);
            (0..1000)
                .flat_map(|_| noise_taker(&f.obs(None, book(97, 101)), &mut rng, &p))
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.len() > 400 && a.len() < 600);
        assert!(a
            .iter()
            .all(|x| matches!(x, Action::Market { qty, .. } if (1..=5).contains(qty))));
    }

    #[test]
    fn noise_taker_symmetric_at_mid() {
        // fundamental 100 == mid of (99, 101): buy probability 1/2
        let f = Fixture::new(1000, 1_000_000);
        let p = NoiseParams {
            lambda: 1.0,
            kappa: 5.0,
            size_p: 1.0,
            max_size: 1,
        };
        let mut rng = SimRng::new(5);
        let buys = (0..20_000)
            .filter(|_| {
                noise_taker(&f.obs(None, book(99, 101)), &mut rng, &p)
                    == vec![Action::Market {
                        side: Side::Buy,
                        qty: 1,
                    }]
            })
            .count();
        assert!((buys as f64 / 20_000.0 - 0.5).abs() < 0.015, "{buys}");
    }

    #[test]
    fn prediction_sources() {
        let series = Arc::new(vec![100, 101, 102, 105, 107]);
        let mut oracle = PredictionSpec::oracle(3).build(&series).unwrap();
        oracle.observe(100);
        assert_eq!(oracle.predicted_price(), Some(105));
        oracle.observe(101);
        assert_eq!(oracle.predicted_price(), Some(107));
        oracle.observe(102);
        assert_eq!(oracle.predicted_price(), None);
        assert!(PredictionSpec::none()
            .build(&series)
            .unwrap()
            .predicted_price()
            .is_none());

        let cfg = PredictorConfig::new(ModelKind::Linreg, 20, 5, 4, 2)
            .with_normalization(Normalization::Raw);
        let mut model = PredictionSpec::model(cfg, 1).build(&series).unwrap();
        for p in 85..=104 {
            model.observe(p);
        }
        assert_eq!(model.predicted_price(), Some(105));
    }

    #[test]
    fn strategy_spec_from_toml_like_json() {
        let s: StrategySpec = serde_json::from_str(
            r#"{"strategy":"tick_better","clamp_to_prediction":true,"params":{"order_size":2}}"#,
        )
        .unwrap();
        assert_eq!(s.name(), "tick_better");
        assert!(serde_json::from_str::<StrategySpec>(r#"{"strategy":"martingale"}"#).is_err());
        assert!(serde_json::from_str::<StrategySpec>(
            r#"{"strategy":"zero_spread","params":{"order_sise":2}}"#
        )
        .is_err());
    }
}
