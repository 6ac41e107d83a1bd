//! Feed-forward networks whose activation functions are trainable linear
//! combinations of basis functions, `F(x) = Σ αᵢ fᵢ(x)`, learned jointly with
//! the weights by backpropagation.
//!
//! ```
//! use rand::SeedableRng;
//! use vnn::{ActivationMode, Architecture, BasisFamily, Network, Scaling};
//!
//! let arch = Architecture::new(
//!     vec![2, 4, 1],
//!     BasisFamily::fourier(4, 1.0).unwrap(),
//!     ActivationMode::Layer,
//!     Scaling::Identity,
//! );
//! let net = Network::init(&arch, &mut rand_chacha::ChaCha8Rng::seed_from_u64(42)).unwrap();
//! let y = net.predict(ndarray::array![0.0, 1.0].view()).unwrap();
//! assert_eq!(y.len(), 1);
//! ```

pub mod activation;
pub mod backprop;
pub mod baseline;
pub mod basis;
pub mod cli;
pub mod error;
pub mod grad_check;
pub mod io;
pub mod loss;
pub mod network;
pub mod optim;

pub use activation::{ActivationMode, VariationalActivation};
pub use backprop::{backward, batch_backward, GradientSet, LayerGradients};
pub use basis::{BasisFamily, BasisKind};
pub use error::{Result, VnnError};
pub use grad_check::{check_gradients, CheckOptions, CheckReport};
pub use loss::LossKind;
pub use network::{Architecture, ForwardTrace, Network, Scaling};
pub use optim::{sgd_step, train, TrainConfig, TrainHistory};
