//! Balances, order escrow and settlement shared by the simulator and the
//! backtester.
//!
//! Buy orders escrow `notional(qty, limit)` quote atoms; sell orders escrow
//! their base lots. A fill releases the escrow slice of the filled quantity
//! and pays the trade notional out of it, so a fill can never draw more than
//! was reserved. Fees, when nonzero, are taken from the currency received
//! and burned.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lob::{AgentId, OrderId};
use crate::marketdata::{InstrumentSpec, Side};
use crate::{Atoms, Lots, Ticks};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAccount {
    pub agent: AgentId,
    /// Free base lots.
    pub base: Lots,
    /// Free quote atoms.
    pub quote: Atoms,
    pub base_reserved: Lots,
    pub quote_reserved: Atoms,
    /// Quote atoms credited per simulation step.
    #[serde(default)]
    pub income_rate: Atoms,
}

impl AgentAccount {
    pub fn new(agent: AgentId, base: Lots, quote: Atoms) -> Self {
        Self {
            agent,
            base,
            quote,
            base_reserved: 0,
            quote_reserved: 0,
            income_rate: 0,
        }
    }

    pub fn total_base(&self) -> Lots {
        self.base + self.base_reserved
    }

    pub fn total_quote(&self) -> Atoms {
        self.quote + self.quote_reserved
    }
}

/// Value in quote atoms with all inventory marked at `price`, floor-rounded.
pub fn mark_to_market(account: &AgentAccount, price: Ticks, spec: &InstrumentSpec) -> Atoms {
    account.total_quote() + spec.notional(account.total_base(), price)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FeeSchedule {
    pub maker_bps: u32,
    pub taker_bps: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Liquidity {
    Maker,
    Taker,
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rejection {
    #[error("insufficient free quote: need {need}, have {have}")]
    InsufficientQuote { need: Atoms, have: Atoms },
    #[error("insufficient free base: need {need}, have {have}")]
    InsufficientBase { need: Lots, have: Lots },
    #[error("nonpositive price or quantity")]
    InvalidOrder,
    #[error("order would trade against the agent's own resting order")]
    SelfMatch,
    #[error("oracle prediction used without allow_oracle")]
    OracleNotAllowed,
    #[error("unknown order {0:?}")]
    UnknownOrder(OrderId),
    #[error("order book rejected the order: {0}")]
    Book(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscrowEntry {
    pub agent: AgentId,
    pub side: Side,
    pub price: Ticks,
    /// Unfilled quantity.
    pub qty: Lots,
    /// Quote atoms (buys) or base lots (sells) held for the remainder.
    pub reserved: i64,
}

#[derive(Clone, Debug)]
pub struct Ledger {
    spec: InstrumentSpec,
    fees: FeeSchedule,
    accounts: Vec<AgentAccount>,
    escrow: BTreeMap<OrderId, EscrowEntry>,
    burned_base: Lots,
    burned_quote: Atoms,
}

impl Ledger {
    /// Accounts are indexed by position; `accounts[i].agent` must be `AgentId(i)`.
    pub fn new(spec: InstrumentSpec, fees: FeeSchedule, accounts: Vec<AgentAccount>) -> Self {
        debug_assert!(accounts
            .iter()
            .enumerate()
            .all(|(i, a)| a.agent.0 as usize == i));
        Self {
            spec,
            fees,
            accounts,
            escrow: BTreeMap::new(),
            burned_base: 0,
            burned_quote: 0,
        }
    }

    pub fn spec(&self) -> &InstrumentSpec {
        &self.spec
    }

    pub fn accounts(&self) -> &[AgentAccount] {
        &self.accounts
    }

    pub fn account(&self, agent: AgentId) -> &AgentAccount {
        &self.accounts[agent.0 as usize]
    }

    fn account_mut(&mut self, agent: AgentId) -> &mut AgentAccount {
        &mut self.accounts[agent.0 as usize]
    }

    pub fn burned(&self) -> (Lots, Atoms) {
        (self.burned_base, self.burned_quote)
    }

    pub fn escrow(&self, id: OrderId) -> Option<&EscrowEntry> {
        self.escrow.get(&id)
    }

    pub fn escrowed_orders(&self) -> impl Iterator<Item = (&OrderId, &EscrowEntry)> {
        self.escrow.iter()
    }

    pub fn credit_quote(&mut self, agent: AgentId, amount: Atoms) {
        self.account_mut(agent).quote += amount;
    }

    /// Moves the backing for a new limit order out of the free balance.
    pub fn reserve(
        &mut self,
        id: OrderId,
        agent: AgentId,
        side: Side,
        price: Ticks,
        qty: Lots,
    ) -> Result<(), Rejection> {
        if price <= 0 || qty <= 0 {
            return Err(Rejection::InvalidOrder);
        }
        let reserved = match side {
            Side::Buy => self.spec.notional(qty, price),
            Side::Sell => qty,
        };
        let acct = self.account_mut(agent);
        match side {
            Side::Buy if acct.quote < reserved => {
                return Err(Rejection::InsufficientQuote {
                    need: reserved,
                    have: acct.quote,
                })
            }
            Side::Sell if acct.base < reserved => {
                return Err(Rejection::InsufficientBase {
                    need: reserved,
                    have: acct.base,
                })
            }
            Side::Buy => {
                acct.quote -= reserved;
                acct.quote_reserved += reserved;
            }
            Side::Sell => {
                acct.base -= reserved;
                acct.base_reserved += reserved;
            }
        }
        self.escrow.insert(
            id,
            EscrowEntry {
                agent,
                side,
                price,
                qty,
                reserved,
            },
        );
        Ok(())
    }

    /// Returns the remaining escrow of `id` to the free balance.
    pub fn release(&mut self, id: OrderId) -> Option<EscrowEntry> {
        let entry = self.escrow.remove(&id)?;
        let acct = self.account_mut(entry.agent);
        match entry.side {
            Side::Buy => {
                acct.quote_reserved -= entry.reserved;
                acct.quote += entry.reserved;
            }
            Side::Sell => {
                acct.base_reserved -= entry.reserved;
                acct.base += entry.reserved;
            }
        }
        Some(entry)
    }

    fn fee_lots(&self, qty: Lots, liq: Liquidity) -> Lots {
        qty * self.bps(liq) as i64 / 10_000
    }

    fn fee_atoms(&self, amount: Atoms, liq: Liquidity) -> Atoms {
        (amount as i128 * self.bps(liq) as i128 / 10_000) as Atoms
    }

    fn bps(&self, liq: Liquidity) -> u32 {
        match liq {
            Liquidity::Maker => self.fees.maker_bps,
            Liquidity::Taker => self.fees.taker_bps,
        }
    }

    /// Settles `qty` of an escrowed order at `fill_price`; the escrow entry
    /// is dropped once fully filled. Returns the quote notional exchanged.
    pub fn settle_escrowed(
        &mut self,
        id: OrderId,
        qty: Lots,
        fill_price: Ticks,
        liq: Liquidity,
    ) -> Result<Atoms, Rejection> {
        let mut entry = *self.escrow.get(&id).ok_or(Rejection::UnknownOrder(id))?;
        debug_assert!(qty > 0 && qty <= entry.qty);
        let notional = self.spec.notional(qty, fill_price);
        entry.qty -= qty;
        match entry.side {
            Side::Buy => {
                debug_assert!(fill_price <= entry.price);
                let keep = self.spec.notional(entry.qty, entry.price);
                let released = entry.reserved - keep;
                debug_assert!(notional <= released, "fill draws more than escrow");
                entry.reserved = keep;
                let fee = self.fee_lots(qty, liq);
                self.burned_base += fee;
                let acct = self.account_mut(entry.agent);
                acct.quote_reserved -= released;
                acct.quote += released - notional;
                acct.base += qty - fee;
            }
            Side::Sell => {
                debug_assert!(fill_price >= entry.price);
                entry.reserved -= qty;
                let fee = self.fee_atoms(notional, liq);
                self.burned_quote += fee;
                let acct = self.account_mut(entry.agent);
                acct.base_reserved -= qty;
                acct.quote += notional - fee;
            }
        }
        if entry.qty == 0 {
            debug_assert!(entry.side == Side::Buy || entry.reserved == 0);
            let leftover = entry.reserved;
            if entry.side == Side::Buy && leftover != 0 {
                let acct = self.account_mut(entry.agent);
                acct.quote_reserved -= leftover;
                acct.quote += leftover;
            }
            self.escrow.remove(&id);
        } else {
            self.escrow.insert(id, entry);
        }
        Ok(notional)
    }

    /// Settles a fill with no escrow behind it (market orders), paying from
    /// or delivering out of the free balance.
    pub fn settle_free(
        &mut self,
        agent: AgentId,
        side: Side,
        qty: Lots,
        fill_price: Ticks,
        liq: Liquidity,
    ) -> Result<Atoms, Rejection> {
        let notional = self.spec.notional(qty, fill_price);
        let fee_base = self.fee_lots(qty, liq);
        let fee_quote = self.fee_atoms(notional, liq);
        let acct = self.account_mut(agent);
        match side {
            Side::Buy => {
                if acct.quote < notional {
                    return Err(Rejection::InsufficientQuote {
                        need: notional,
                        have: acct.quote,
                    });
                }
                acct.quote -= notional;
                acct.base += qty - fee_base;
                self.burned_base += fee_base;
            }
            Side::Sell => {
                if acct.base < qty {
                    return Err(Rejection::InsufficientBase {
                        need: qty,
                        have: acct.base,
                    });
                }
                acct.base -= qty;
                acct.quote += notional - fee_quote;
                self.burned_quote += fee_quote;
            }
        }
        Ok(notional)
    }

    /// Balances nonnegative and reserved totals equal to the escrow book.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut base_res = vec![0i64; self.accounts.len()];
        let mut quote_res = vec![0i64; self.accounts.len()];
        for e in self.escrow.values() {
            match e.side {
                Side::Buy => quote_res[e.agent.0 as usize] += e.reserved,
                Side::Sell => base_res[e.agent.0 as usize] += e.reserved,
            }
        }
        for (i, a) in self.accounts.iter().enumerate() {
            if a.base < 0 || a.quote < 0 || a.base_reserved < 0 || a.quote_reserved < 0 {
                return Err(format!("agent {i} has a negative balance: {a:?}"));
            }
            if a.base_reserved != base_res[i] || a.quote_reserved != quote_res[i] {
                return Err(format!("agent {i} reserved balances disagree with escrow"));
            }
        }
        Ok(())
    }

    pub fn totals(&self) -> (Lots, Atoms) {
        self.accounts.iter().fold((0, 0), |(b, q), a| {
            (b + a.total_base(), q + a.total_quote())
        })
    }

    pub fn into_accounts(self) -> Vec<AgentAccount> {
        self.accounts
    }
}
