//! LSTM sequence learning with curriculum training regimens.
//!
//! The crate is `no_std` (with `alloc`) and holds every numerical piece of the
//! system: dense linear algebra, the LSTM cell with regression and
//! classification heads, backpropagation through time with RMSprop, the
//! One-Pass / Baby Steps / Sorted / No-CL regimen engine, the Digit Sum task
//! and the hidden-state probing analyses. File formats, configuration files
//! and the command line live in the `curriculum-lstm` crate.
//!
//! ```
//! use curriculum_lstm_core::dataset::{generate_digit_sum, DigitSumConfig};
//!
//! let split = generate_digit_sum(&DigitSumConfig::new(2, 2, 5, 3, 3), 7);
//! assert_eq!(split.train.len(), 8);
//! ```

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod curriculum;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod probe;
pub mod stats;
pub mod sweep;
pub mod train;

pub use error::{Error, Result};
