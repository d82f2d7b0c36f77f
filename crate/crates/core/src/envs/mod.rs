//! Game environments.

pub mod braess;
pub mod coin;
pub mod grid;
pub mod matrix;
pub mod staghunt;

pub use braess::{braess_rewards, BraessConfig, BraessEnv, BraessObservation, BraessState};
pub use coin::{CoinGameState, Color, PickEvent};
pub use grid::{Move, Observation, Pos};
pub use matrix::{
    classify_dilemma, encode_state, make_nonpositive, DilemmaClass, IteratedMatrixEnv,
    MatrixState, PayoffMatrix, COOPERATE, DEFECT,
};
pub use staghunt::{Layout, StagHuntState};
