//! Price-time priority limit order book.
//!
//! Incoming orders match against the opposite side best price first and,
//! within a level, oldest first (by `placed_ts`, then `id`). Every trade
//! prints at the resting (maker) order's price. Unfilled market order
//! remainders are discarded.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::marketdata::Side;
use crate::{Lots, Ticks, Ts};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OrderId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderKind {
    Limit,
    Market,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Order {
    pub id: OrderId,
    pub agent: AgentId,
    pub side: Side,
    /// Absent for market orders.
    pub price: Option<Ticks>,
    pub qty: Lots,
    pub placed_ts: Ts,
    pub kind: OrderKind,
}

impl Order {
    pub fn limit(id: u64, agent: u32, side: Side, price: Ticks, qty: Lots, placed_ts: Ts) -> Self {
        Self {
            id: OrderId(id),
            agent: AgentId(agent),
            side,
            price: Some(price),
            qty,
            placed_ts,
            kind: OrderKind::Limit,
        }
    }

    pub fn market(id: u64, agent: u32, side: Side, qty: Lots, placed_ts: Ts) -> Self {
        Self {
            id: OrderId(id),
            agent: AgentId(agent),
            side,
            price: None,
            qty,
            placed_ts,
            kind: OrderKind::Market,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillEvent {
    pub ts: Ts,
    pub maker_order_id: OrderId,
    pub taker_order_id: OrderId,
    /// The maker's limit price.
    pub price: Ticks,
    pub qty: Lots,
    pub maker_agent: AgentId,
    pub taker_agent: AgentId,
    pub taker_side: Side,
}

/// An order sitting in the book.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestingOrder {
    pub id: OrderId,
    pub agent: AgentId,
    pub side: Side,
    pub price: Ticks,
    pub qty: Lots,
    pub placed_ts: Ts,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LobError {
    #[error("duplicate order id {0:?}")]
    DuplicateId(OrderId),
    #[error("order {0:?} is not a limit order with a positive price")]
    NotLimit(OrderId),
    #[error("order {0:?} has nonpositive quantity")]
    NonPositiveQty(OrderId),
}

#[derive(Clone, Debug, Default)]
pub struct Book {
    bids: BTreeMap<Ticks, VecDeque<RestingOrder>>,
    asks: BTreeMap<Ticks, VecDeque<RestingOrder>>,
    index: HashMap<OrderId, (Side, Ticks)>,
    seen: HashSet<OrderId>,
}

impl Book {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn best_bid(&self) -> Option<Ticks> {
        self.bids.keys().next_back().copied()
    }

    pub fn best_ask(&self) -> Option<Ticks> {
        self.asks.keys().next().copied()
    }

    /// `(best_bid, best_ask)`, each absent when that side is empty.
    pub fn top_of_book(&self) -> (Option<Ticks>, Option<Ticks>) {
        (self.best_bid(), self.best_ask())
    }

    pub fn get(&self, id: OrderId) -> Option<&RestingOrder> {
        let (side, price) = self.index.get(&id)?;
        self.levels(*side).get(price)?.iter().find(|o| o.id == id)
    }

    fn levels(&self, side: Side) -> &BTreeMap<Ticks, VecDeque<RestingOrder>> {
        match side {
            Side::Buy => &self.bids,
            Side::Sell => &self.asks,
        }
    }

    fn levels_mut(&mut self, side: Side) -> &mut BTreeMap<Ticks, VecDeque<RestingOrder>> {
        match side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        }
    }

    /// Resting orders of `side` in matching priority (best price, then oldest).
    pub fn priority_iter(&self, side: Side) -> Box<dyn Iterator<Item = &RestingOrder> + '_> {
        match side {
            Side::Buy => Box::new(self.bids.values().rev().flatten()),
            Side::Sell => Box::new(self.asks.values().flatten()),
        }
    }

    /// Aggregated `(price, qty)` levels of `side`, best first.
    pub fn depth(&self, side: Side) -> Vec<(Ticks, Lots)> {
        let agg = |(p, q): (&Ticks, &VecDeque<RestingOrder>)| (*p, q.iter().map(|o| o.qty).sum());
        match side {
            Side::Buy => self.bids.iter().rev().map(agg).collect(),
            Side::Sell => self.asks.iter().map(agg).collect(),
        }
    }

    /// Every resting order, bids then asks, each in priority order.
    pub fn resting(&self) -> Vec<RestingOrder> {
        self.priority_iter(Side::Buy)
            .chain(self.priority_iter(Side::Sell))
            .copied()
            .collect()
    }

    /// True when an order of `agent` at `price` on `side` would reach one of
    /// the same agent's resting orders on the other side.
    pub fn crosses_own(&self, agent: AgentId, side: Side, price: Option<Ticks>) -> bool {
        self.priority_iter(side.opposite())
            .take_while(|o| match (side, price) {
                (_, None) => true,
                (Side::Buy, Some(p)) => o.price <= p,
                (Side::Sell, Some(p)) => o.price >= p,
            })
            .any(|o| o.agent == agent)
    }

    pub fn place_limit(&mut self, order: Order) -> Result<Vec<FillEvent>, LobError> {
        let price = match (order.kind, order.price) {
            (OrderKind::Limit, Some(p)) if p > 0 => p,
            _ => return Err(LobError::NotLimit(order.id)),
        };
        if order.qty <= 0 {
            return Err(LobError::NonPositiveQty(order.id));
        }
        if !self.seen.insert(order.id) {
            return Err(LobError::DuplicateId(order.id));
        }
        let mut fills = Vec::new();
        let remaining = self.take_liquidity(&order, Some(price), &mut fills);
        if remaining > 0 {
            let resting = RestingOrder {
                id: order.id,
                agent: order.agent,
                side: order.side,
                price,
                qty: remaining,
                placed_ts: order.placed_ts,
            };
            let queue = self.levels_mut(order.side).entry(price).or_default();
            let at =
                queue.partition_point(|o| (o.placed_ts, o.id) <= (resting.placed_ts, resting.id));
            queue.insert(at, resting);
            self.index.insert(order.id, (order.side, price));
        }
        Ok(fills)
    }

    /// Matches until filled or the opposite side is exhausted; the rest is dropped.
    pub fn execute_market(&mut self, order: Order) -> Vec<FillEvent> {
        let mut fills = Vec::new();
        if order.qty > 0 {
            self.seen.insert(order.id);
            self.take_liquidity(&order, None, &mut fills);
        }
        fills
    }

    fn take_liquidity(
        &mut self,
        order: &Order,
        limit: Option<Ticks>,
        fills: &mut Vec<FillEvent>,
    ) -> Lots {
        let mut remaining = order.qty;
        let opposite = order.side.opposite();
        while remaining > 0 {
            let best = match opposite {
                Side::Sell => self.best_ask(),
                Side::Buy => self.best_bid(),
            };
            let Some(level_price) = best else { break };
            let crosses = match (order.side, limit) {
                (_, None) => true,
                (Side::Buy, Some(p)) => level_price <= p,
                (Side::Sell, Some(p)) => level_price >= p,
            };
            if !crosses {
                break;
            }
            let levels = match opposite {
                Side::Buy => &mut self.bids,
                Side::Sell => &mut self.asks,
            };
            let index = &mut self.index;
            let queue = levels.get_mut(&level_price).expect("best level exists");
            while remaining > 0 {
                let Some(maker) = queue.front_mut() else {
                    break;
                };
                let qty = remaining.min(maker.qty);
                fills.push(FillEvent {
                    ts: order.placed_ts,
                    maker_order_id: maker.id,
                    taker_order_id: order.id,
                    price: level_price,
                    qty,
                    maker_agent: maker.agent,
                    taker_agent: order.agent,
                    taker_side: order.side,
                });
                maker.qty -= qty;
                remaining -= qty;
                if maker.qty == 0 {
                    let done = queue.pop_front().expect("front exists");
                    index.remove(&done.id);
                }
            }
            if queue.is_empty() {
                levels.remove(&level_price);
            }
        }
        remaining
    }

    /// Removes a resting order, returning it.
    pub fn remove(&mut self, id: OrderId) -> Option<RestingOrder> {
        let (side, price) = self.index.remove(&id)?;
        let levels = self.levels_mut(side);
        let queue = levels.get_mut(&price)?;
        let pos = queue.iter().position(|o| o.id == id)?;
        let order = queue.remove(pos);
        if queue.is_empty() {
            levels.remove(&price);
        }
        order
    }

    /// False when the id is unknown or no longer resting.
    pub fn cancel(&mut self, id: OrderId) -> bool {
        self.remove(id).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fills_px_qty(f: &[FillEvent]) -> Vec<(Ticks, Lots)> {
        f.iter().map(|f| (f.price, f.qty)).collect()
    }

    #[test]
    fn resting_on_empty_book() {
        let mut b = Book::new();
        let f = b
            .place_limit(Order::limit(1, 0, Side::Buy, 100, 5, 0))
            .unwrap();
        assert!(f.is_empty());
        assert_eq!(b.depth(Side::Buy), vec![(100, 5)]);
    }

    #[test]
    fn crossing_limit_trades_at_maker_price() {
        let mut b = Book::new();
        b.place_limit(Order::limit(1, 0, Side::Sell, 101, 10, 0))
            .unwrap();
        let f = b
            .place_limit(Order::limit(2, 1, Side::Buy, 102, 4, 1))
            .unwrap();
        assert_eq!(fills_px_qty(&f), vec![(101, 4)]);
        assert_eq!(b.depth(Side::Sell), vec![(101, 6)]);
        assert!(b.depth(Side::Buy).is_empty());
    }

    #[test]
    fn crossing_limit_walks_levels_and_rests() {
        let mut b = Book::new();
        b.place_limit(Order::limit(1, 0, Side::Sell, 101, 2, 0))
            .unwrap();
        b.place_limit(Order::limit(2, 0, Side::Sell, 102, 5, 0))
            .unwrap();
        let f = b
            .place_limit(Order::limit(3, 1, Side::Buy, 102, 4, 1))
            .unwrap();
        assert_eq!(fills_px_qty(&f), vec![(101, 2), (102, 2)]);
        assert_eq!(b.depth(Side::Sell), vec![(102, 3)]);

        let f = b
            .place_limit(Order::limit(4, 1, Side::Buy, 103, 9, 2))
            .unwrap();
        assert_eq!(fills_px_qty(&f), vec![(102, 3)]);
        assert_eq!(b.top_of_book(), (Some(103), None));
    }

    #[test]
    fn market_orders() {
        let mut b = Book::new();
        assert!(b
            .execute_market(Order::market(1, 0, Side::Buy, 5, 0))
            .is_empty());
        b.place_limit(Order::limit(2, 0, Side::Sell, 101, 10, 0))
            .unwrap();
        let f = b.execute_market(Order::market(3, 1, Side::Buy, 5, 1));
        assert_eq!(fills_px_qty(&f), vec![(101, 5)]);

        let mut b = Book::new();
        b.place_limit(Order::limit(1, 0, Side::Sell, 101, 3, 0))
            .unwrap();
        b.place_limit(Order::limit(2, 0, Side::Sell, 102, 3, 0))
            .unwrap();
        let f = b.execute_market(Order::market(3, 1, Side::Buy, 5, 1));
        assert_eq!(fills_px_qty(&f), vec![(101, 3), (102, 2)]);
        // remainder of an oversized market order is discarded, never rests
        let f = b.execute_market(Order::market(4, 1, Side::Buy, 50, 2));
        assert_eq!(fills_px_qty(&f), vec![(102, 1)]);
        assert!(b.is_empty());
    }

    #[test]
    fn cancel_semantics() {
        let mut b = Book::new();
        b.place_limit(Order::limit(1, 0, Side::Buy, 100, 5, 0))
            .unwrap();
        b.place_limit(Order::limit(2, 0, Side::Buy, 100, 3, 0))
            .unwrap();
        assert!(b.cancel(OrderId(1)));
        assert_eq!(b.depth(Side::Buy), vec![(100, 3)]);
        assert!(!b.cancel(OrderId(1)));
        b.execute_market(Order::market(3, 1, Side::Sell, 3, 1));
        assert!(!b.cancel(OrderId(2)));
        assert!(!b.cancel(OrderId(99)));
    }

    #[test]
    fn top_of_book_cases() {
        let mut b = Book::new();
        assert_eq!(b.top_of_book(), (None, None));
        b.place_limit(Order::limit(1, 0, Side::Buy, 100, 1, 0))
            .unwrap();
        assert_eq!(b.top_of_book(), (Some(100), None));
        b.place_limit(Order::limit(2, 0, Side::Sell, 101, 1, 0))
            .unwrap();
        assert_eq!(b.top_of_book(), (Some(100), Some(101)));
    }

    #[test]
    fn fifo_within_level() {
        let mut b = Book::new();
        b.place_limit(Order::limit(7, 0, Side::Sell, 101, 2, 5))
            .unwrap();
        b.place_limit(Order::limit(3, 1, Side::Sell, 101, 2, 5))
            .unwrap();
        b.place_limit(Order::limit(9, 2, Side::Sell, 101, 2, 4))
            .unwrap();
        let f = b.execute_market(Order::market(10, 3, Side::Buy, 6, 6));
        let makers: Vec<u64> = f.iter().map(|f| f.maker_order_id.0).collect();
        assert_eq!(makers, vec![9, 3, 7]);
    }

    #[test]
    fn errors() {
        let mut b = Book::new();
        b.place_limit(Order::limit(1, 0, Side::Buy, 100, 5, 0))
            .unwrap();
        assert_eq!(
            b.place_limit(Order::limit(1, 0, Side::Buy, 99, 5, 0)),
            Err(LobError::DuplicateId(OrderId(1)))
        );
        assert_eq!(
            b.place_limit(Order::market(2, 0, Side::Buy, 5, 0)),
            Err(LobError::NotLimit(OrderId(2)))
        );
        assert_eq!(
            b.place_limit(Order::limit(3, 0, Side::Buy, 100, 0, 0)),
            Err(LobError::NonPositiveQty(OrderId(3)))
        );
    }

    #[test]
    fn self_match_is_allowed_and_detectable() {
        let mut b = Book::new();
        b.place_limit(Order::limit(1, 7, Side::Buy, 100, 5, 0))
            .unwrap();
        assert!(b.crosses_own(AgentId(7), Side::Sell, Some(100)));
        assert!(!b.crosses_own(AgentId(7), Side::Sell, Some(101)));
        assert!(!b.crosses_own(AgentId(8), Side::Sell, Some(100)));
        let f = b
            .place_limit(Order::limit(2, 7, Side::Sell, 100, 2, 1))
            .unwrap();
        assert_eq!(f[0].maker_agent, f[0].taker_agent);
    }
}
