//! Action graphs to video.
//!
//! An [`graph::ActionGraph`] lists objects and timed actions between them.
//! Each action edge carries a clock (its progress through its time window);
//! a graph network turns the clocked graph plus the previous layout into the
//! next layout, and a flow-and-refine frame generator turns consecutive
//! layouts into pixels. A procedural 2D world supplies ground truth.

pub mod bbox;
pub mod cli;
pub mod frame;
pub mod graph;
pub mod layout;
pub mod tensor;
pub mod train;
pub mod world;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/world.md")]
    mod world {}
    #[doc = include_str!("../../../book/src/layouts.md")]
    mod layouts {}
    #[doc = include_str!("../../../book/src/frames.md")]
    mod frames {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
