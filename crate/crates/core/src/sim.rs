//! Stepped multi-agent market over a [`Book`], driven by a fundamental
//! price curve.
//!
//! Each step the agents are polled in a freshly shuffled order; their actions
//! hit the book immediately, backed by escrow in the [`Ledger`]. At the end
//! all resting orders are cancelled and every account is marked at the last
//! fundamental price.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accounting::{mark_to_market, AgentAccount, FeeSchedule, Ledger, Liquidity, Rejection};
use crate::lob::{AgentId, Book, FillEvent, Order, OrderId};
use crate::marketdata::{generate_curve, CurveSpec, InstrumentSpec, MarketDataError, Side};
use crate::predictor::PredictorError;
use crate::rng::SimRng;
use crate::strategies::{
    Action, LiveOrder, Observation, PredictionSource, PredictionSpec, StrategySpec, TopOfBook,
};
use crate::{Atoms, Lots, Ticks, Ts};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    MarketData(#[from] MarketDataError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

/// One agent: a strategy, its prediction feed and starting balances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub strategy: StrategySpec,
    #[serde(default)]
    pub prediction: PredictionSpec,
    #[serde(default)]
    pub base: Lots,
    #[serde(default)]
    pub quote: Atoms,
    #[serde(default)]
    pub income_rate: Atoms,
}

impl AgentSpec {
    pub fn new(strategy: StrategySpec, base: Lots, quote: Atoms) -> Self {
        Self {
            name: None,
            strategy,
            prediction: PredictionSpec::none(),
            base,
            quote,
            income_rate: 0,
        }
    }

    pub fn with_prediction(mut self, prediction: PredictionSpec) -> Self {
        self.prediction = prediction;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn with_income(mut self, rate: Atoms) -> Self {
        self.income_rate = rate;
        self
    }

    /// Display label, e.g. `zero_spread(oracle)`.
    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match self.prediction.label() {
            "none" => self.strategy.name().to_string(),
            p => format!("{}({p})", self.strategy.name()),
        }
    }

    pub fn validate(&self, allow_oracle: bool) -> Result<(), String> {
        if self.base < 0 || self.quote < 0 || self.income_rate < 0 {
            return Err(format!("{}: balances must be >= 0", self.label()));
        }
        self.strategy
            .validate()
            .map_err(|e| format!("{}: {e}", self.label()))?;
        self.prediction
            .validate()
            .map_err(|e| format!("{}: {e}", self.label()))?;
        if self.prediction.is_oracle() && !allow_oracle {
            return Err(format!(
                "{}: oracle prediction requires allow_oracle (evaluation only)",
                self.label()
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub curve: CurveSpec,
    pub steps: usize,
    pub instrument: InstrumentSpec,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fees: FeeSchedule,
    #[serde(default)]
    pub allow_self_match: bool,
    #[serde(default)]
    pub allow_oracle: bool,
    /// Keep every fill in the report.
    #[serde(default)]
    pub record_fills: bool,
}

impl SimConfig {
    pub fn new(curve: CurveSpec, steps: usize, instrument: InstrumentSpec) -> Self {
        Self {
            curve,
            steps,
            instrument,
            agents: Vec::new(),
            seed: 0,
            fees: FeeSchedule::default(),
            allow_self_match: false,
            allow_oracle: false,
            record_fills: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.steps < 1 {
            return bad("steps must be >= 1".into());
        }
        if self.curve.n < self.steps {
            return bad(format!(
                "curve has {} points, steps = {}",
                self.curve.n, self.steps
            ));
        }
        self.instrument.validate()?;
        for a in &self.agents {
            a.validate(self.allow_oracle).map_err(SimError::Config)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgentReport {
    pub agent: u32,
    pub label: String,
    pub strategy: String,
    pub prediction: String,
    pub initial_base: Lots,
    pub initial_quote: Atoms,
    pub final_base: Lots,
    pub final_quote: Atoms,
    pub initial_value: Atoms,
    pub final_value: Atoms,
    pub pnl: Atoms,
    #[serde(rename = "return")]
    pub ret: f64,
    pub fills: usize,
    pub volume: Lots,
    pub orders: usize,
    pub rejected: usize,
    /// Limit orders with at least one fill over limit orders placed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fill_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Conservation {
    pub initial_base: Lots,
    pub initial_quote: Atoms,
    pub final_base: Lots,
    pub final_quote: Atoms,
    pub burned_base: Lots,
    pub burned_quote: Atoms,
    pub income_credited: Atoms,
    /// `final + burned - initial - income`; zero unless the ledger is broken.
    pub residue_base: Lots,
    pub residue_quote: Atoms,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub steps: usize,
    pub final_price: Ticks,
    pub total_trades: usize,
    pub total_volume: Lots,
    pub oracle_used: bool,
    pub conservation: Conservation,
    /// Sum of agent P&L; zero without fees or income up to per-agent
    /// floor rounding of the mark.
    pub pnl_sum: Atoms,
    pub agents: Vec<AgentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fills: Option<Vec<FillEvent>>,
}

impl RunReport {
    pub fn agents_csv(&self) -> String {
        agents_csv(&self.agents)
    }
}

/// Flat per-agent rows: `agent,label,strategy,prediction,initial_value,final_value,pnl,return,fills,volume`.
pub fn agents_csv(agents: &[AgentReport]) -> String {
    let mut s = String::from(
        "agent,label,strategy,prediction,initial_value,final_value,pnl,return,fills,volume\n",
    );
    for a in agents {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            a.agent,
            a.label,
            a.strategy,
            a.prediction,
            a.initial_value,
            a.final_value,
            a.pnl,
            a.ret,
            a.fills,
            a.volume
        ));
    }
    s
}

#[derive(Clone, Debug, Default)]
pub(crate) struct AgentStats {
    pub fills: usize,
    pub volume: Lots,
    pub orders: usize,
    pub limit_orders: usize,
    pub filled_orders: usize,
    pub rejected: usize,
}

pub(crate) fn live_orders(ledger: &Ledger, agent: AgentId) -> Vec<LiveOrder> {
    ledger
        .escrowed_orders()
        .filter(|(_, e)| e.agent == agent)
        .map(|(id, e)| LiveOrder {
            id: *id,
            side: e.side,
            price: e.price,
            qty: e.qty,
            reserved: e.reserved,
        })
        .collect()
}

pub(crate) fn build_agent_reports(
    specs: &[AgentSpec],
    initial: &[AgentAccount],
    finals: &[AgentAccount],
    stats: &[AgentStats],
    price: Ticks,
    spec: &InstrumentSpec,
) -> Vec<AgentReport> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let initial_value = mark_to_market(&initial[i], price, spec);
            let final_value = mark_to_market(&finals[i], price, spec);
            let pnl = final_value - initial_value;
            AgentReport {
                agent: i as u32,
                label: s.label(),
                strategy: s.strategy.name().to_string(),
                prediction: s.prediction.label().to_string(),
                initial_base: initial[i].total_base(),
                initial_quote: initial[i].total_quote(),
                final_base: finals[i].total_base(),
                final_quote: finals[i].total_quote(),
                initial_value,
                final_value,
                pnl,
                ret: if initial_value == 0 {
                    0.0
                } else {
                    pnl as f64 / initial_value as f64
                },
                fills: stats[i].fills,
                volume: stats[i].volume,
                orders: stats[i].orders,
                rejected: stats[i].rejected,
                fill_ratio: None,
            }
        })
        .collect()
}

struct Market {
    book: Book,
    ledger: Ledger,
    next_id: u64,
    allow_self_match: bool,
    stats: Vec<AgentStats>,
    fill_log: Vec<FillEvent>,
    trades: usize,
    volume: Lots,
}

impl Market {
    /// Best competitor prices, skipping `agent`'s own orders.
    fn top_excluding(&self, agent: AgentId) -> TopOfBook {
        let first = |side| {
            self.book
                .priority_iter(side)
                .find(|o| o.agent != agent)
                .map(|o| o.price)
        };
        TopOfBook {
            bid: first(Side::Buy),
            ask: first(Side::Sell),
        }
    }

    fn record(&mut self, fills: &[FillEvent]) {
        for f in fills {
            self.trades += 1;
            self.volume += f.qty;
            for agent in [f.maker_agent, f.taker_agent] {
                let st = &mut self.stats[agent.0 as usize];
                st.fills += 1;
                st.volume += f.qty;
            }
            self.fill_log.push(*f);
        }
    }

    fn apply(&mut self, agent: AgentId, action: Action, ts: Ts) -> Result<(), Rejection> {
        match action {
            Action::Cancel { id } => {
                match self.ledger.escrow(id) {
                    Some(e) if e.agent == agent => {}
                    _ => return Err(Rejection::UnknownOrder(id)),
                }
                self.book.remove(id);
                self.ledger.release(id);
                Ok(())
            }
            Action::Limit { side, price, qty } => {
                if price <= 0 || qty <= 0 {
                    return Err(Rejection::InvalidOrder);
                }
                if !self.allow_self_match && self.book.crosses_own(agent, side, Some(price)) {
                    return Err(Rejection::SelfMatch);
                }
                let id = OrderId(self.next_id);
                self.ledger.reserve(id, agent, side, price, qty)?;
                self.next_id += 1;
                self.stats[agent.0 as usize].orders += 1;
                let fills = match self
                    .book
                    .place_limit(Order::limit(id.0, agent.0, side, price, qty, ts))
                {
                    Ok(f) => f,
                    Err(e) => {
                        self.ledger.release(id);
                        return Err(Rejection::Book(e.to_string()));
                    }
                };
                for f in &fills {
                    self.ledger
                        .settle_escrowed(f.maker_order_id, f.qty, f.price, Liquidity::Maker)
                        .expect("maker escrow");
                    self.ledger
                        .settle_escrowed(f.taker_order_id, f.qty, f.price, Liquidity::Taker)
                        .expect("taker escrow");
                }
                self.record(&fills);
                Ok(())
            }
            Action::Market { side, qty } => {
                if qty <= 0 {
                    return Err(Rejection::InvalidOrder);
                }
                let qty = self.executable_market_qty(agent, side, qty)?;
                if qty == 0 {
                    return Ok(());
                }
                let id = self.next_id;
                self.next_id += 1;
                self.stats[agent.0 as usize].orders += 1;
                let fills = self
                    .book
                    .execute_market(Order::market(id, agent.0, side, qty, ts));
                for f in &fills {
                    self.ledger
                        .settle_escrowed(f.maker_order_id, f.qty, f.price, Liquidity::Maker)
                        .expect("maker escrow");
                    self.ledger
                        .settle_free(agent, side, f.qty, f.price, Liquidity::Taker)
                        .expect("market order capped by balance");
                }
                self.record(&fills);
                Ok(())
            }
        }
    }

    /// Quantity of a market order that the free balance can pay for, walking
    /// the book as the matcher would. Rejects when the walk would reach the
    /// agent's own resting order and self-matching is off.
    fn executable_market_qty(
        &self,
        agent: AgentId,
        side: Side,
        qty: Lots,
    ) -> Result<Lots, Rejection> {
        let acct = self.ledger.account(agent);
        let spec = self.ledger.spec();
        let mut remaining = qty;
        let mut budget = acct.quote;
        let mut base_left = acct.base;
        let mut liquidity = false;
        for o in self.book.priority_iter(side.opposite()) {
            if remaining == 0 {
                break;
            }
            if o.agent == agent && !self.allow_self_match {
                return Err(Rejection::SelfMatch);
            }
            liquidity = true;
            let want = remaining.min(o.qty);
            let q = match side {
                Side::Buy => want.min(spec.lots_affordable(budget, o.price)),
                Side::Sell => want.min(base_left),
            };
            budget -= spec.notional(q, o.price);
            base_left -= q;
            remaining -= q;
            if q < want {
                break;
            }
        }
        let filled = qty - remaining;
        if filled == 0 && liquidity {
            return Err(match side {
                Side::Buy => Rejection::InsufficientQuote {
                    need: spec.notional(1, self.book.best_ask().unwrap_or(1)),
                    have: acct.quote,
                },
                Side::Sell => Rejection::InsufficientBase {
                    need: qty,
                    have: acct.base,
                },
            });
        }
        Ok(filled)
    }
}

/// Runs the simulation to completion. Deterministic in the config.
pub fn run_simulation(cfg: &SimConfig) -> Result<RunReport, SimError> {
    cfg.validate()?;
    let curve = generate_curve(&cfg.curve)?;
    let grid: Arc<Vec<Ticks>> = Arc::new(curve.iter().map(|c| c.close).collect());
    let n = cfg.agents.len();

    let initial: Vec<AgentAccount> = cfg
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut acct = AgentAccount::new(AgentId(i as u32), a.base, a.quote);
            acct.income_rate = a.income_rate;
            acct
        })
        .collect();
    let mut sources: Vec<PredictionSource> = cfg
        .agents
        .iter()
        .map(|a| a.prediction.build(&grid))
        .collect::<Result<_, _>>()?;
    let mut rngs: Vec<SimRng> = (0..n)
        .map(|i| SimRng::derive(cfg.seed, i as u64 + 1))
        .collect();
    let mut order_rng = SimRng::derive(cfg.seed, 0);

    let mut m = Market {
        book: Book::new(),
        ledger: Ledger::new(cfg.instrument.clone(), cfg.fees, initial.clone()),
        next_id: 1,
        allow_self_match: cfg.allow_self_match,
        stats: vec![AgentStats::default(); n],
        fill_log: Vec::new(),
        trades: 0,
        volume: 0,
    };
    let mut income = 0;
    let mut order: Vec<usize> = (0..n).collect();

    for t in 0..cfg.steps {
        let f = grid[t];
        let ts = curve[t].ts;
        for src in &mut sources {
            src.observe(f);
        }
        order_rng.shuffle(&mut order);
        for &i in &order {
            let agent = AgentId(i as u32);
            let live = live_orders(&m.ledger, agent);
            let account = m.ledger.account(agent).clone();
            let obs = Observation {
                now_ts: ts,
                poll_index: t,
                reference_price: f,
                book: Some(m.top_excluding(agent)),
                account: &account,
                initial_base: initial[i].base,
                live_orders: &live,
                predicted: sources[i].predicted_price(),
                spec: &cfg.instrument,
            };
            let actions = cfg.agents[i].strategy.decide(&obs, &mut rngs[i]);
            for action in actions {
                if let Err(e) = m.apply(agent, action, ts) {
                    m.stats[i].rejected += 1;
                    log::debug!("step {t}: agent {i} action {action:?} rejected: {e}");
                }
            }
        }
        for (i, a) in cfg.agents.iter().enumerate() {
            if a.income_rate > 0 {
                m.ledger.credit_quote(AgentId(i as u32), a.income_rate);
                income += a.income_rate;
            }
        }
        debug_assert_eq!(m.ledger.check_invariants(), Ok(()));
    }

    // end of run: pull every resting order
    for o in m.book.resting() {
        m.book.remove(o.id);
        m.ledger.release(o.id);
    }
    debug_assert_eq!(m.ledger.check_invariants(), Ok(()));

    let final_price = grid[cfg.steps - 1];
    let (burned_base, burned_quote) = m.ledger.burned();
    let (final_base, final_quote) = m.ledger.totals();
    let (initial_base, initial_quote) = initial.iter().fold((0, 0), |(b, q), a| {
        (b + a.total_base(), q + a.total_quote())
    });
    let finals = m.ledger.into_accounts();
    let agents = build_agent_reports(
        &cfg.agents,
        &initial,
        &finals,
        &m.stats,
        final_price,
        &cfg.instrument,
    );
    let pnl_sum = agents.iter().map(|a| a.pnl).sum();
    Ok(RunReport {
        steps: cfg.steps,
        final_price,
        total_trades: m.trades,
        total_volume: m.volume,
        oracle_used: cfg.agents.iter().any(|a| a.prediction.is_oracle()),
        conservation: Conservation {
            initial_base,
            initial_quote,
            final_base,
            final_quote,
            burned_base,
            burned_quote,
            income_credited: income,
            residue_base: final_base + burned_base - initial_base,
            residue_quote: final_quote + burned_quote - initial_quote - income,
        },
        pnl_sum,
        agents,
        fills: cfg.record_fills.then_some(m.fill_log),
    })
}
