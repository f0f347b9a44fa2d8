//! Spiking (LIF), vanilla recurrent and LSTM networks on event-camera recordings,
//! trained with hand-derived backpropagation through time.

pub mod analysis;
pub mod cells;
pub mod error;
pub mod event_io;
pub mod experiment;
pub mod gradcheck;
pub mod network;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
