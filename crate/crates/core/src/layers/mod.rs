//! Recurrent encoders and windowed additive attention.

mod attention;
mod lstm;

pub use attention::{
    attend, attend_query, attention, attention_keys, merge, pool, window_range, AttentionParams,
};
pub use lstm::{
    bilstm, bilstm_states, char_encode, lstm_cell, lstm_step, project_input, project_zero_input,
    run_lstm, run_projected, LstmParams, LstmState,
};
