//! Two-level mixed quantization for convolution-transformer hybrid networks
//! and a cycle-level model of a heterogeneous multiplier/shifter accelerator.
//!
//! - [`netgraph`]: layer graph, EfficientViT builders, manifests
//! - [`quant`]: uniform / PoT / APoT quantizers and the mixed assignment
//! - [`exec`]: integer and shift-add execution with a float reference
//! - [`accel`]: cycle, schedule and energy model
//! - [`cli`]: the `mixq` command-line front end

pub mod accel;
pub mod cli;
pub mod error;
pub mod exec;
pub mod netgraph;
pub mod quant;

pub use error::{Error, Result};

// Guide chapters, compiled so their examples run under `cargo test --doc`.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/quantization.md")]
    mod quantization {}
    #[doc = include_str!("../../../book/src/execution.md")]
    mod execution {}
    #[doc = include_str!("../../../book/src/accelerator.md")]
    mod accelerator {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
