//! Hamiltonian prediction from SMILES strings with geometry-aware pre-training.

pub mod alignment;
pub mod basis;
pub mod cli;
pub mod compensation;
pub mod diff;
pub mod encoders;
pub mod hamiltonian;
pub mod nn;
pub mod oracle;
pub mod parallel;
pub mod physics;
pub mod screening;
pub mod smiles;
pub mod training;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Alignment(#[from] alignment::AlignmentError),
    #[error(transparent)]
    Diff(#[from] diff::DiffError),
    #[error(transparent)]
    Encoder(#[from] encoders::EncoderError),
    #[error(transparent)]
    Hamiltonian(#[from] hamiltonian::HamiltonianError),
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
    #[error(transparent)]
    Physics(#[from] physics::PhysicsError),
    #[error(transparent)]
    Screen(#[from] screening::ScreenError),
    #[error(transparent)]
    Smiles(#[from] smiles::SmilesError),
    #[error(transparent)]
    Training(#[from] training::TrainError),
}
