pub mod instance;
pub mod kinematics;
pub mod velocity_graph;
pub mod backend;
pub mod milp;
pub mod headway;
pub mod schedule;
pub mod lazy;
pub mod validator;
pub mod generator;
pub mod bench;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/instances.md")]
    mod instances {}
    #[doc = include_str!("../../../book/src/kinematics.md")]
    mod kinematics {}
    #[doc = include_str!("../../../book/src/velocity-graphs.md")]
    mod velocity_graphs {}
    #[doc = include_str!("../../../book/src/headways.md")]
    mod headways {}
    #[doc = include_str!("../../../book/src/lazy.md")]
    mod lazy {}
    #[doc = include_str!("../../../book/src/validation.md")]
    mod validation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
