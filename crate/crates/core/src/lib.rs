//! Joint search over small language models and grammar-generated prompts,
//! trading accuracy against token usage with NSGA-II.

pub mod aggregate;
pub mod campaign;
pub mod eval;
pub mod genome;
pub mod grammar;
pub mod nsga2;
pub mod run;
mod serde_inf;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grammar.md")]
    mod grammar {}
    #[doc = include_str!("../../../book/src/operators.md")]
    mod operators {}
    #[doc = include_str!("../../../book/src/nsga2.md")]
    mod nsga2 {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/aggregation.md")]
    mod aggregation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
