//! Reverse-mode automatic differentiation over dense 4-D tensors.
//!
//! Values are recorded on a [`Tape`] as they are computed; each node keeps a
//! closure that maps its output gradient to gradients of its parents.
//! [`Tape::backward`] walks the nodes in reverse insertion order, which is a
//! valid reverse topological order because a node can only reference nodes
//! recorded before it.
//!
//! ```
//! use ecg_cosearch::autodiff::{ConvOpts, Tape, Tensor4};
//!
//! let mut tape = Tape::new();
//! let x = tape.constant(Tensor4::new([1, 1, 1, 1], vec![2.0]).unwrap());
//! let w = tape.leaf(Tensor4::new([1, 1, 1, 1], vec![3.0]).unwrap());
//! let y = tape.conv2d(x, w, None, ConvOpts::new(1, 0)).unwrap();
//! assert_eq!(tape.value(y).item(), 6.0);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(w).unwrap().item(), 2.0);
//! ```

mod adam;
mod gumbel;
mod kernels;
mod params;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use gumbel::{argmax, gumbel_noise, gumbel_softmax, softmax, softmax_tempered};
pub use params::{load_checkpoint, save_checkpoint, ParamId, ParamStore};
pub use tape::{ConvOpts, Gradients, Tape, Var};
pub use tensor::Tensor4;
