pub mod ground;
pub mod ilp;
pub mod program;
pub mod lclang;
pub mod report;
pub mod schema;
pub mod softlogic;
pub mod synth;
pub mod train;

// Rust snippets in the guide compile and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/declaring.md")]
    mod declaring {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/programs.md")]
    mod programs {}
}
