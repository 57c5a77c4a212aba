//! Ensemble MLP for the annual target.

pub mod adamw;
mod ensemble;
mod io;
pub mod mlp;
pub mod train;

pub use adamw::AdamW;
pub use ensemble::{train_ensemble, MlpEnsemble};
pub use io::{load_model, save_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use mlp::{MlpArchitecture, MlpParams, Mode};
pub use train::{train_one, EarlyStopping, Preprocessing, TrainHistory, TrainSpec, TrainedNetwork};
