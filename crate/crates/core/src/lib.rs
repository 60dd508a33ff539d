//! Dummy Risk Minimization (DuRM): train a classifier with extra output
//! classes that never receive labels, and measure what that does to the
//! gradients.
//!
//! The crate covers the numerical core (softmax, cross-entropy, MLP
//! forward/backward), the dummy-class head, a seeded SGD trainer with
//! regularizers, gradient instrumentation (variance, push/pull, Hessian and
//! flatness probes), and numerical checks of the variance and
//! order-statistic arguments in [`theory`].

pub mod data;
pub mod error;
pub mod head;
pub mod instrumentation;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod theory;
pub mod trainer;

pub use data::{gen_blobs, load_csv, train_test_split, Dataset, Provenance, Split};
pub use error::{Error, Result};
pub use head::{count_dummy_predictions, gradient_fraction, pad_label, GradientFraction, HeadConfig};
pub use model::{Activation, Checkpoint, Gradients, Layer, MlpParams};
pub use numerics::Matrix;
pub use trainer::{evaluate, train, Evaluation, TrainConfig, TrainResult};
