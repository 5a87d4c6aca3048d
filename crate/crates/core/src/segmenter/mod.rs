//! BiLSTM encoder and linear-chain CRF output layer.

pub mod crf;
pub mod lstm;

pub use crf::{
    crf_nll, crf_nll_var, decode, effective_transitions, nll_with_grads, token_marginals, transition_allowed,
    viterbi_decode, CrfMode, Lattice, SegOutput, NUM_STATES, START, STOP,
};
pub use lstm::{lstm_step, run_direction, BiLstm, BiLstmVars, LstmParams, LstmVars};
