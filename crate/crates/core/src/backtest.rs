//! Historical replay: simulated agents quote against a recorded trade tape.
//!
//! Virtual limit orders never touch the recorded market. An order fills only
//! when a later recorded trade prints at or through its price; market orders
//! execute at the last trade price. Strategies are polled at decision ticks
//! and only see data stamped at or before the tick.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::accounting::{AgentAccount, FeeSchedule, Ledger, Liquidity, Rejection};
use crate::lob::{AgentId, OrderId};
use crate::marketdata::{InstrumentSpec, MarketHistory, Side, Trade};
use crate::rng::SimRng;
use crate::sim::{build_agent_reports, live_orders, AgentReport, AgentSpec, AgentStats, SimError};
use crate::strategies::{Action, Observation, PredictionSource, StrategySpec, TopOfBook};
use crate::{Atoms, Lots, Ticks, Ts};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualOrder {
    pub id: OrderId,
    pub agent: AgentId,
    pub side: Side,
    pub price: Ticks,
    /// Unfilled quantity.
    pub qty: Lots,
    pub placed_ts: Ts,
    /// Last timestamp at which the order may fill.
    pub expires_at: Option<Ts>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualFill {
    /// Time of the matching recorded trade.
    pub ts: Ts,
    pub placed_ts: Ts,
    pub order_id: OrderId,
    pub agent: AgentId,
    pub side: Side,
    pub price: Ticks,
    pub qty: Lots,
    pub trade_index: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPrice {
    /// The virtual order's own limit price.
    #[default]
    Maker,
    /// The recorded trade's price.
    Trade,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FillRule {
    /// Fill only when the trade prints strictly through the limit.
    #[serde(default)]
    pub require_price_improvement: bool,
    /// A trade's quantity is shared across the orders it fills instead of
    /// being available to each of them in full.
    #[serde(default)]
    pub deplete_trade_qty: bool,
    #[serde(default)]
    pub fill_price: FillPrice,
}

/// Fill quantity and price of `order` against `trade`, ignoring depletion.
pub fn try_fill(order: &VirtualOrder, trade: &Trade, rule: &FillRule) -> Option<(Lots, Ticks)> {
    if trade.ts <= order.placed_ts
        || order.qty <= 0
        || order.expires_at.is_some_and(|e| trade.ts > e)
    {
        return None;
    }
    let crosses = match (order.side, rule.require_price_improvement) {
        (Side::Buy, false) => trade.price <= order.price,
        (Side::Buy, true) => trade.price < order.price,
        (Side::Sell, false) => trade.price >= order.price,
        (Side::Sell, true) => trade.price > order.price,
    };
    if !crosses {
        return None;
    }
    let price = match rule.fill_price {
        FillPrice::Maker => order.price,
        FillPrice::Trade => trade.price,
    };
    Some((order.qty.min(trade.qty), price))
}

/// Live virtual orders indexed by price, so a trade only visits the orders
/// it can reach.
#[derive(Clone, Debug, Default)]
pub struct FillEngine {
    orders: BTreeMap<OrderId, VirtualOrder>,
    bids: BTreeMap<Ticks, BTreeSet<OrderId>>,
    asks: BTreeMap<Ticks, BTreeSet<OrderId>>,
}

impl FillEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    pub fn get(&self, id: OrderId) -> Option<&VirtualOrder> {
        self.orders.get(&id)
    }

    pub fn ids(&self) -> Vec<OrderId> {
        self.orders.keys().copied().collect()
    }

    fn side_index(&mut self, side: Side) -> &mut BTreeMap<Ticks, BTreeSet<OrderId>> {
        match side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        }
    }

    pub fn insert(&mut self, order: VirtualOrder) {
        debug_assert!(order.qty > 0);
        self.side_index(order.side)
            .entry(order.price)
            .or_default()
            .insert(order.id);
        self.orders.insert(order.id, order);
    }

    pub fn remove(&mut self, id: OrderId) -> Option<VirtualOrder> {
        let order = self.orders.remove(&id)?;
        let index = self.side_index(order.side);
        if let Some(level) = index.get_mut(&order.price) {
            level.remove(&id);
            if level.is_empty() {
                index.remove(&order.price);
            }
        }
        Some(order)
    }

    /// Removes and returns orders whose expiry is before `ts`.
    pub fn expire_before(&mut self, ts: Ts) -> Vec<VirtualOrder> {
        let expired: Vec<OrderId> = self
            .orders
            .values()
            .filter(|o| o.expires_at.is_some_and(|e| e < ts))
            .map(|o| o.id)
            .collect();
        expired
            .into_iter()
            .filter_map(|id| self.remove(id))
            .collect()
    }

    /// Applies one recorded trade to the live orders, oldest first.
    pub fn on_trade(
        &mut self,
        trade_index: usize,
        trade: &Trade,
        rule: &FillRule,
    ) -> Vec<VirtualFill> {
        let p = trade.price;
        let mut candidates: Vec<(Ts, OrderId)> = Vec::new();
        let reach_bids = if rule.require_price_improvement {
            self.bids.range(p + 1..)
        } else {
            self.bids.range(p..)
        };
        let reach_asks = if rule.require_price_improvement {
            self.asks.range(..p)
        } else {
            self.asks.range(..=p)
        };
        for ids in reach_bids.chain(reach_asks).map(|(_, ids)| ids) {
            for id in ids {
                let o = &self.orders[id];
                if o.placed_ts < trade.ts {
                    candidates.push((o.placed_ts, *id));
                }
            }
        }
        candidates.sort_unstable();
        let mut left = trade.qty;
        let mut fills = Vec::new();
        for (_, id) in candidates {
            if rule.deplete_trade_qty && left == 0 {
                break;
            }
            let order = self.orders[&id];
            let shown = Trade {
                qty: if rule.deplete_trade_qty {
                    left
                } else {
                    trade.qty
                },
                ..*trade
            };
            let Some((qty, price)) = try_fill(&order, &shown, rule) else {
                continue;
            };
            left -= qty;
            fills.push(VirtualFill {
                ts: trade.ts,
                placed_ts: order.placed_ts,
                order_id: id,
                agent: order.agent,
                side: order.side,
                price,
                qty,
                trade_index,
            });
            if qty == order.qty {
                self.remove(id);
            } else {
                self.orders.get_mut(&id).expect("live order").qty -= qty;
            }
        }
        fills
    }
}

/// Replays `trades` against a fixed set of orders, all live from their
/// placement time.
pub fn match_tape(orders: &[VirtualOrder], trades: &[Trade], rule: &FillRule) -> Vec<VirtualFill> {
    let mut engine = FillEngine::new();
    for o in orders {
        engine.insert(*o);
    }
    let mut fills = Vec::new();
    for (i, t) in trades.iter().enumerate() {
        engine.expire_before(t.ts);
        fills.extend(engine.on_trade(i, t, rule));
    }
    fills
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct BacktestOptions {
    /// Poll interval in ms; defaults to the snapshot (or candle) times, or
    /// every distinct trade time when neither is present.
    #[serde(default)]
    pub cadence_ms: Option<i64>,
    #[serde(default)]
    pub fees: FeeSchedule,
    #[serde(default)]
    pub fill: FillRule,
    /// Time to live of virtual orders; they otherwise live until cancelled.
    #[serde(default)]
    pub ttl_ms: Option<i64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub allow_oracle: bool,
    #[serde(default)]
    pub record_fills: bool,
    /// Starting quote of the hodl benchmark; defaults to the first agent's.
    #[serde(default)]
    pub benchmark_quote: Option<Atoms>,
}

#[derive(Clone, Debug)]
pub struct BacktestConfig {
    pub history: MarketHistory,
    pub agents: Vec<AgentSpec>,
    pub options: BacktestOptions,
}

impl BacktestConfig {
    pub fn new(history: MarketHistory, agents: Vec<AgentSpec>) -> Self {
        Self {
            history,
            agents,
            options: BacktestOptions::default(),
        }
    }

    pub fn benchmark_quote(&self) -> Atoms {
        self.options
            .benchmark_quote
            .or_else(|| self.agents.first().map(|a| a.quote))
            .filter(|&q| q > 0)
            .unwrap_or(1_000_000)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BacktestReport {
    pub decision_ticks: usize,
    pub trades_replayed: usize,
    pub final_price: Ticks,
    pub total_fills: usize,
    pub total_volume: Lots,
    pub oracle_used: bool,
    pub fill_rule: FillRule,
    pub agents: Vec<AgentReport>,
    /// Buy-and-hold over the same window with the benchmark capital.
    pub hodl: AgentReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fills: Option<Vec<VirtualFill>>,
}

impl BacktestReport {
    /// Plot rows `strategy,pnl,return,fills`: every non-hodl agent, then the
    /// hodl benchmark (which stands in for any hodl agents).
    pub fn plot_rows(&self) -> Vec<(String, Atoms, f64, usize)> {
        self.agents
            .iter()
            .filter(|a| a.strategy != "hodl")
            .chain(std::iter::once(&self.hodl))
            .map(|a| (a.label.clone(), a.pnl, a.ret, a.fills))
            .collect()
    }

    pub fn plot_csv(&self) -> String {
        let mut s = String::from("strategy,pnl,return,fills\n");
        for (label, pnl, ret, fills) in self.plot_rows() {
            s.push_str(&format!("{label},{pnl},{ret},{fills}\n"));
        }
        s
    }
}

struct Tick {
    ts: Ts,
    reference: Ticks,
    book: Option<TopOfBook>,
}

fn decision_times(history: &MarketHistory, cadence: Option<i64>) -> Result<Vec<Ts>, SimError> {
    let trades = history.trades();
    let snaps = history.snapshots();
    let first = [trades.first().map(|t| t.ts), snaps.first().map(|s| s.ts)]
        .into_iter()
        .flatten()
        .min();
    let last = [trades.last().map(|t| t.ts), snaps.last().map(|s| s.ts)]
        .into_iter()
        .flatten()
        .max();
    let (Some(first), Some(last)) = (first, last) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    match cadence {
        Some(c) if c <= 0 => return Err(SimError::Config("cadence_ms must be > 0".into())),
        Some(c) => {
            let mut t = first.div_euclid(c) * c;
            while t <= last {
                out.push(t);
                t += c;
            }
        }
        None if !snaps.is_empty() => out.extend(snaps.iter().map(|s| s.ts)),
        None if !history.candles().is_empty() => out.extend(history.candles().iter().map(|c| c.ts)),
        None => out.extend(trades.iter().map(|t| t.ts)),
    }
    out.dedup();
    Ok(out)
}

/// Decision ticks with a known reference price, and the book view at each.
fn build_ticks(history: &MarketHistory, cadence: Option<i64>) -> Result<Vec<Tick>, SimError> {
    let times = decision_times(history, cadence)?;
    let trades = history.trades();
    let snaps = history.snapshots();
    let (mut ti, mut si) = (0, 0);
    let mut ticks = Vec::with_capacity(times.len());
    for ts in times {
        while ti < trades.len() && trades[ti].ts <= ts {
            ti += 1;
        }
        while si < snaps.len() && snaps[si].ts <= ts {
            si += 1;
        }
        let snap = si.checked_sub(1).map(|i| &snaps[i]);
        let book = snap.map(|s| TopOfBook {
            bid: s.best_bid(),
            ask: s.best_ask(),
        });
        let reference = match ti.checked_sub(1) {
            Some(i) => Some(trades[i].price),
            None => book.and_then(|b| b.mid()).map(|m| m.round() as Ticks),
        };
        if let Some(reference) = reference {
            ticks.push(Tick {
                ts,
                reference,
                book,
            });
        }
    }
    Ok(ticks)
}

struct Replay<'a> {
    spec: &'a InstrumentSpec,
    ledger: Ledger,
    engine: FillEngine,
    rule: FillRule,
    ttl: Option<i64>,
    next_id: u64,
    stats: Vec<AgentStats>,
    filled_ids: HashSet<OrderId>,
    fills: Vec<VirtualFill>,
    volume: Lots,
}

impl Replay<'_> {
    fn release_expired(&mut self, ts: Ts) {
        for o in self.engine.expire_before(ts) {
            self.ledger.release(o.id);
        }
    }

    fn on_trade(&mut self, index: usize, trade: &Trade) {
        self.release_expired(trade.ts);
        for f in self.engine.on_trade(index, trade, &self.rule) {
            self.ledger
                .settle_escrowed(f.order_id, f.qty, f.price, Liquidity::Maker)
                .expect("virtual order escrow");
            let st = &mut self.stats[f.agent.0 as usize];
            st.fills += 1;
            st.volume += f.qty;
            if self.filled_ids.insert(f.order_id) {
                st.filled_orders += 1;
            }
            self.volume += f.qty;
            self.fills.push(f);
        }
    }

    fn apply(
        &mut self,
        agent: AgentId,
        action: Action,
        ts: Ts,
        reference: Ticks,
    ) -> Result<(), Rejection> {
        match action {
            Action::Cancel { id } => {
                match self.ledger.escrow(id) {
                    Some(e) if e.agent == agent => {}
                    _ => return Err(Rejection::UnknownOrder(id)),
                }
                self.engine.remove(id);
                self.ledger.release(id);
                Ok(())
            }
            Action::Limit { side, price, qty } => {
                let id = OrderId(self.next_id);
                self.ledger.reserve(id, agent, side, price, qty)?;
                self.next_id += 1;
                let st = &mut self.stats[agent.0 as usize];
                st.orders += 1;
                st.limit_orders += 1;
                self.engine.insert(VirtualOrder {
                    id,
                    agent,
                    side,
                    price,
                    qty,
                    placed_ts: ts,
                    expires_at: self.ttl.map(|t| ts + t),
                });
                Ok(())
            }
            Action::Market { side, qty } => {
                if qty <= 0 {
                    return Err(Rejection::InvalidOrder);
                }
                let acct = self.ledger.account(agent);
                let cap = match side {
                    Side::Buy => self.spec.lots_affordable(acct.quote, reference),
                    Side::Sell => acct.base,
                };
                let qty = qty.min(cap);
                if qty == 0 {
                    return Err(match side {
                        Side::Buy => Rejection::InsufficientQuote {
                            need: self.spec.notional(1, reference),
                            have: acct.quote,
                        },
                        Side::Sell => Rejection::InsufficientBase { need: 1, have: 0 },
                    });
                }
                self.ledger
                    .settle_free(agent, side, qty, reference, Liquidity::Taker)?;
                let st = &mut self.stats[agent.0 as usize];
                st.orders += 1;
                st.fills += 1;
                st.volume += qty;
                Ok(())
            }
        }
    }
}

struct Outcome {
    ticks: usize,
    final_price: Ticks,
    agents: Vec<AgentReport>,
    fills: Vec<VirtualFill>,
    volume: Lots,
}

fn replay(
    history: &MarketHistory,
    ticks: &[Tick],
    agents: &[AgentSpec],
    opts: &BacktestOptions,
) -> Result<Outcome, SimError> {
    let spec = history.spec();
    let n = agents.len();
    let grid: Arc<Vec<Ticks>> = Arc::new(ticks.iter().map(|t| t.reference).collect());
    let initial: Vec<AgentAccount> = agents
        .iter()
        .enumerate()
        .map(|(i, a)| AgentAccount::new(AgentId(i as u32), a.base, a.quote))
        .collect();
    let mut sources: Vec<PredictionSource> = agents
        .iter()
        .map(|a| a.prediction.build(&grid))
        .collect::<Result<_, _>>()?;
    let mut rngs: Vec<SimRng> = (0..n)
        .map(|i| SimRng::derive(opts.seed, i as u64 + 1))
        .collect();
    let mut r = Replay {
        spec,
        ledger: Ledger::new(spec.clone(), opts.fees, initial.clone()),
        engine: FillEngine::new(),
        rule: opts.fill,
        ttl: opts.ttl_ms,
        next_id: 1,
        stats: vec![AgentStats::default(); n],
        filled_ids: HashSet::new(),
        fills: Vec::new(),
        volume: 0,
    };

    let trades = history.trades();
    let mut ti = 0;
    for (k, tick) in ticks.iter().enumerate() {
        while ti < trades.len() && trades[ti].ts <= tick.ts {
            r.on_trade(ti, &trades[ti]);
            ti += 1;
        }
        r.release_expired(tick.ts);
        for i in 0..n {
            let agent = AgentId(i as u32);
            sources[i].observe(tick.reference);
            let live = live_orders(&r.ledger, agent);
            let account = r.ledger.account(agent).clone();
            let obs = Observation {
                now_ts: tick.ts,
                poll_index: k,
                reference_price: tick.reference,
                book: tick.book,
                account: &account,
                initial_base: initial[i].base,
                live_orders: &live,
                predicted: sources[i].predicted_price(),
                spec,
            };
            for action in agents[i].strategy.decide(&obs, &mut rngs[i]) {
                if let Err(e) = r.apply(agent, action, tick.ts, tick.reference) {
                    r.stats[i].rejected += 1;
                    log::debug!("tick {k}: agent {i} action {action:?} rejected: {e}");
                }
            }
        }
        debug_assert_eq!(r.ledger.check_invariants(), Ok(()));
    }
    while ti < trades.len() {
        r.on_trade(ti, &trades[ti]);
        ti += 1;
    }
    for id in r.engine.ids() {
        r.engine.remove(id);
        r.ledger.release(id);
    }
    debug_assert_eq!(r.ledger.check_invariants(), Ok(()));

    let final_price = trades
        .last()
        .map(|t| t.price)
        .or_else(|| ticks.last().map(|t| t.reference))
        .unwrap_or(1);
    let finals = r.ledger.into_accounts();
    let mut reports = build_agent_reports(agents, &initial, &finals, &r.stats, final_price, spec);
    for (rep, st) in reports.iter_mut().zip(&r.stats) {
        rep.fill_ratio = Some(if st.limit_orders == 0 {
            0.0
        } else {
            st.filled_orders as f64 / st.limit_orders as f64
        });
    }
    Ok(Outcome {
        ticks: ticks.len(),
        final_price,
        agents: reports,
        fills: r.fills,
        volume: r.volume,
    })
}

/// Runs every agent over the history, plus a standalone hodl benchmark.
pub fn run_backtest(cfg: &BacktestConfig) -> Result<BacktestReport, SimError> {
    let opts = &cfg.options;
    if cfg.history.trades().is_empty() && cfg.history.snapshots().is_empty() {
        return Err(SimError::Config(
            "history has no trades or snapshots".into(),
        ));
    }
    if opts.ttl_ms.is_some_and(|t| t < 0) {
        return Err(SimError::Config("ttl_ms must be >= 0".into()));
    }
    for a in &cfg.agents {
        a.validate(opts.allow_oracle).map_err(SimError::Config)?;
    }
    let ticks = build_ticks(&cfg.history, opts.cadence_ms)?;
    let main = replay(&cfg.history, &ticks, &cfg.agents, opts)?;
    let benchmark =
        [AgentSpec::new(StrategySpec::Hodl, 0, cfg.benchmark_quote()).with_name("hodl")];
    let mut hodl = replay(&cfg.history, &ticks, &benchmark, opts)?;
    let hodl = hodl.agents.remove(0);
    Ok(BacktestReport {
        decision_ticks: main.ticks,
        trades_replayed: cfg.history.trades().len(),
        final_price: main.final_price,
        total_fills: main.fills.len(),
        total_volume: main.volume,
        oracle_used: cfg.agents.iter().any(|a| a.prediction.is_oracle()),
        fill_rule: opts.fill,
        agents: main.agents,
        hodl,
        fills: opts.record_fills.then_some(main.fills),
    })
}
