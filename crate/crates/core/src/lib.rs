//! Financial relevance scoring of news headlines.
//!
//! A small attention network is trained to predict the next-day movement of
//! a stock index from the set of headlines published on a day. The
//! unnormalized attention logit of each headline depends on that headline
//! alone, so it serves as a corpus-wide relevance score.

pub mod categorizer;
pub mod category;
pub mod commands;
pub mod encoder;
pub mod error;
pub mod ingest;
pub mod manifest;
pub mod nn;
pub mod pipeline;
pub mod ranker;
pub mod seed;
pub mod synthetic;

pub use category::Category;
pub use error::{Error, Result};
