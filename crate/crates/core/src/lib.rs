#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod estimate;
pub mod exec;
pub mod extensions;
pub mod formula;
pub mod likelihood;
pub mod model;
pub mod nonparam;
pub mod optim;
pub mod simulate;
pub mod special;
pub mod transform;
pub mod tree;

pub use error::{Error, Result};

#[allow(unused_imports)]
mod prelude {
    pub use alloc::borrow::ToOwned;
    pub use alloc::boxed::Box;
    pub use alloc::format;
    pub use alloc::string::{String, ToString};
    pub use alloc::vec;
    pub use alloc::vec::Vec;
    // float math for no_std builds; std's inherent methods win when linked
    pub use num_traits::Float;
}
