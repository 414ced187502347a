//! Slow, obviously-correct reference implementations used to check the
//! engine. Shared by the core integration tests and the acceptance suite.
#![allow(dead_code, clippy::needless_range_loop)]

use mmlab::backtest::{FillPrice, FillRule, VirtualFill, VirtualOrder};
use mmlab::lob::{AgentId, OrderId};
use mmlab::{Side, Trade};

/// Resting order in the reference book.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RefOrder {
    pub id: u64,
    pub agent: u32,
    pub side: Side,
    pub price: i64,
    pub qty: i64,
    pub ts: i64,
}

/// `(maker_id, taker_id, price, qty)`.
pub type RefFill = (u64, u64, i64, i64);

/// Flat list of resting orders; every match scans the whole list.
#[derive(Clone, Debug, Default)]
pub struct RefBook {
    pub orders: Vec<RefOrder>,
}

impl RefBook {
    fn best_match(&self, side: Side, limit: Option<i64>) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, o) in self.orders.iter().enumerate() {
            if o.side == side {
                continue;
            }
            let ok = match (side, limit) {
                (_, None) => true,
                (Side::Buy, Some(l)) => o.price <= l,
                (Side::Sell, Some(l)) => o.price >= l,
            };
            if !ok {
                continue;
            }
            let better = match best {
                None => true,
                Some(j) => {
                    let b = &self.orders[j];
                    let price_better = match side {
                        Side::Buy => o.price < b.price,
                        Side::Sell => o.price > b.price,
                    };
                    price_better || (o.price == b.price && (o.ts, o.id) < (b.ts, b.id))
                }
            };
            if better {
                best = Some(i);
            }
        }
        best
    }

    fn take(
        &mut self,
        id: u64,
        side: Side,
        mut qty: i64,
        limit: Option<i64>,
    ) -> (Vec<RefFill>, i64) {
        let mut fills = Vec::new();
        while qty > 0 {
            let Some(i) = self.best_match(side, limit) else {
                break;
            };
            let q = qty.min(self.orders[i].qty);
            fills.push((self.orders[i].id, id, self.orders[i].price, q));
            qty -= q;
            self.orders[i].qty -= q;
            if self.orders[i].qty == 0 {
                self.orders.remove(i);
            }
        }
        (fills, qty)
    }

    pub fn limit(&mut self, o: RefOrder) -> Vec<RefFill> {
        let (fills, left) = self.take(o.id, o.side, o.qty, Some(o.price));
        if left > 0 {
            self.orders.push(RefOrder { qty: left, ..o });
        }
        fills
    }

    pub fn market(&mut self, id: u64, side: Side, qty: i64) -> Vec<RefFill> {
        self.take(id, side, qty, None).0
    }

    pub fn cancel(&mut self, id: u64) -> bool {
        match self.orders.iter().position(|o| o.id == id) {
            Some(i) => {
                self.orders.remove(i);
                true
            }
            None => false,
        }
    }

    /// `(side, price, ts, id, qty)` sorted, for comparing residual books.
    pub fn snapshot(&self) -> Vec<(Side, i64, i64, u64, i64)> {
        let mut v: Vec<_> = self
            .orders
            .iter()
            .map(|o| (o.side, o.price, o.ts, o.id, o.qty))
            .collect();
        v.sort_by_key(|&(s, p, t, i, _)| (s == Side::Sell, p, t, i));
        v
    }
}

/// Every trade checked against every order, oldest order first.
pub fn naive_fills(orders: &[VirtualOrder], trades: &[Trade], rule: &FillRule) -> Vec<VirtualFill> {
    let mut sorted: Vec<VirtualOrder> = orders.to_vec();
    sorted.sort_by_key(|o| (o.placed_ts, o.id));
    let mut left: Vec<i64> = sorted.iter().map(|o| o.qty).collect();
    let mut fills = Vec::new();
    for (ti, t) in trades.iter().enumerate() {
        let mut trade_left = t.qty;
        for (k, o) in sorted.iter().enumerate() {
            if left[k] == 0 || t.ts <= o.placed_ts {
                continue;
            }
            if let Some(e) = o.expires_at {
                if t.ts > e {
                    continue;
                }
            }
            let price_ok = match o.side {
                Side::Buy => {
                    t.price < o.price || (!rule.require_price_improvement && t.price == o.price)
                }
                Side::Sell => {
                    t.price > o.price || (!rule.require_price_improvement && t.price == o.price)
                }
            };
            if !price_ok {
                continue;
            }
            let avail = if rule.deplete_trade_qty {
                trade_left
            } else {
                t.qty
            };
            let q = left[k].min(avail);
            if q == 0 {
                continue;
            }
            left[k] -= q;
            trade_left -= q;
            fills.push(VirtualFill {
                ts: t.ts,
                placed_ts: o.placed_ts,
                order_id: o.id,
                agent: o.agent,
                side: o.side,
                price: match rule.fill_price {
                    FillPrice::Maker => o.price,
                    FillPrice::Trade => t.price,
                },
                qty: q,
                trade_index: ti,
            });
        }
    }
    fills
}

pub fn vorder(id: u64, side: Side, price: i64, qty: i64, placed_ts: i64) -> VirtualOrder {
    VirtualOrder {
        id: OrderId(id),
        agent: AgentId(0),
        side,
        price,
        qty,
        placed_ts,
        expires_at: None,
    }
}

/// Least squares with an intercept via the normal equations and Gaussian
/// elimination with partial pivoting. Returns `[intercept, w...]`.
pub fn ols(xs: &[Vec<f64>], y: &[f64], lambda: f64) -> Vec<f64> {
    let p = xs[0].len() + 1;
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, &target) in xs.iter().zip(y) {
        let z: Vec<f64> = std::iter::once(1.0).chain(row.iter().copied()).collect();
        for i in 0..p {
            for j in 0..p {
                a[i][j] += z[i] * z[j];
            }
            a[i][p] += z[i] * target;
        }
    }
    for i in 1..p {
        a[i][i] += lambda;
    }
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for r in 0..p {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=p {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..p).map(|i| a[i][p] / a[i][i]).collect()
}

/// Model and persistence MAE of a direct log-return regression walked over
/// `series`, recomputed from scratch with [`ols`]. Frames use stride `b`.
/// Returns `(mae_model, mae_persistence, count)`.
pub fn brute_force_mae(
    series: &[i64],
    t: usize,
    p: usize,
    h: usize,
    b: usize,
) -> (f64, f64, usize) {
    let span = series.len();
    let ln = |a: i64, base: i64| (a as f64 / base as f64).ln();
    let (mut em, mut ep, mut n) = (0.0, 0.0, 0usize);
    let mut tk = t;
    while tk <= span {
        let window = &series[tk - t..tk];
        // frames: inputs j..j+h, targets j+h..j+h+b
        let mut xs = Vec::new();
        let mut ys: Vec<Vec<f64>> = vec![Vec::new(); b];
        let mut j = 0;
        while j + h + b <= t {
            let last = window[j + h - 1];
            xs.push(
                (0..h - 1)
                    .map(|k| ln(window[j + k], last))
                    .collect::<Vec<_>>(),
            );
            for k in 0..b {
                ys[k].push(ln(window[j + h + k], last));
            }
            j += b;
        }
        let weights: Vec<Vec<f64>> = ys.iter().map(|y| ols(&xs, y, 0.0)).collect();
        let mut s = tk;
        while s < tk + p && s < span {
            let last = series[s - 1];
            let feats: Vec<f64> = (0..h - 1).map(|k| ln(series[s - h + k], last)).collect();
            for (k, w) in weights.iter().enumerate() {
                let target = s + k;
                if target >= span {
                    break;
                }
                let yhat = w[0] + w[1..].iter().zip(&feats).map(|(a, b)| a * b).sum::<f64>();
                let pred = (last as f64 * yhat.exp() + 0.5).floor() as i64;
                em += (pred - series[target]).abs() as f64;
                ep += (last - series[target]).abs() as f64;
                n += 1;
            }
            s += b;
        }
        tk += p;
    }
    (em / n as f64, ep / n as f64, n)
}

/// Final `(base, quote)` of a zero-spread maker with oracle foresight on a
/// one-trade-per-tick tape, settled at trade prices with no fees. Each tick
/// it cancels everything and quotes `order_size` on both sides at the price
/// `horizon` trades ahead, within the inventory cap and its balances.
pub fn brute_force_zero_spread(
    prices: &[i64],
    qtys: &[i64],
    horizon: usize,
    order_size: i64,
    cap: i64,
    base0: i64,
    quote0: i64,
) -> (i64, i64) {
    let (mut base, mut quote) = (base0, quote0);
    for i in 0..prices.len() {
        // decision after trade i, quotes live for trade i + 1
        let Some(&target) = prices.get(i + horizon) else {
            continue;
        };
        let Some(&next) = prices.get(i + 1) else {
            continue;
        };
        let inv = base - base0;
        let bid = inv < cap && quote >= order_size * target;
        let ask = inv > -cap && base >= order_size;
        let q = order_size.min(qtys[i + 1]);
        if bid && next <= target {
            base += q;
            quote -= q * next;
        }
        if ask && next >= target {
            base -= q;
            quote += q * next;
        }
    }
    (base, quote)
}
