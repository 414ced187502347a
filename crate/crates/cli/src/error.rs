use std::fmt;

use mmlab::marketdata::MarketDataError;
use mmlab::portfolio::PortfolioError;
use mmlab::predictor::PredictorError;
use mmlab::sim::SimError;

/// A failed command. Usage errors exit with 2, everything else with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Runtime(_) => 1,
        }
    }

    /// Prefixes the message with some context, keeping the class.
    pub fn context(self, what: impl fmt::Display) -> Self {
        match self {
            Self::Usage(m) => Self::Usage(format!("{what}: {m}")),
            Self::Runtime(m) => Self::Runtime(format!("{what}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) | Self::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<MarketDataError> for CliError {
    fn from(e: MarketDataError) -> Self {
        match e {
            MarketDataError::Io(_) => Self::Runtime(e.to_string()),
            _ => Self::Usage(e.to_string()),
        }
    }
}

impl From<PredictorError> for CliError {
    fn from(e: PredictorError) -> Self {
        match e {
            PredictorError::Singular
            | PredictorError::BlowUp { .. }
            | PredictorError::Format(_) => Self::Runtime(e.to_string()),
            _ => Self::Usage(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(m) => Self::Usage(m),
            SimError::MarketData(e) => e.into(),
            SimError::Predictor(e) => e.into(),
        }
    }
}

impl From<PortfolioError> for CliError {
    fn from(e: PortfolioError) -> Self {
        match e {
            PortfolioError::Backtest { symbol, source } => CliError::from(source).context(symbol),
            _ => Self::Usage(e.to_string()),
        }
    }
}
