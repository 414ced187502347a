//! Deterministic market-making laboratory.
//!
//! The crate is organised around a handful of engines that share one
//! integer fixed-point data model:
//!
//! - [`marketdata`]: instruments, trades, book snapshots, candles, file
//!   ingestion and synthetic "fundamental" price curves.
//! - [`lob`]: a price-time priority limit order book.
//! - [`sim`]: a stepped multi-agent market over the order book with exact
//!   zero-sum accounting.
//! - [`backtest`]: virtual agents quoting against a historical trade tape;
//!   their orders fill only when a real trade reaches their price.
//! - [`strategies`]: hodling, zero-spread and one-tick-better market making
//!   and noise liquidity takers behind one [`strategies::Strategy`] trait.
//! - [`predictor`]: rolling training/prediction schedule with persistence,
//!   linear and ridge regression models.
//! - [`portfolio`]: return, normalized standard deviation, Sharpe and
//!   Modified Sharpe ratios, plus straight and backtest-based asset ranking.
//!
//! Prices are integer ticks, quantities integer lots and balances integer
//! quote atoms (one atom is one `tick_size` of quote currency). No floating
//! point price crosses a module boundary.

pub mod accounting;
pub mod backtest;
pub mod lob;
pub mod marketdata;
pub mod portfolio;
pub mod predictor;
pub mod rng;
pub mod sim;
pub mod strategies;

pub use marketdata::{Candle, InstrumentSpec, LobSnapshot, MarketHistory, Side, Trade};

/// Milliseconds since the Unix epoch.
pub type Ts = i64;
/// Price in instrument ticks.
pub type Ticks = i64;
/// Quantity in instrument lots.
pub type Lots = i64;
/// Quote-currency balance in atoms of one `tick_size`.
pub type Atoms = i64;

/// Engine version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
