// The guide under book/ is compiled here so that `cargo test` runs every
// snippet as a doc-test. One module per chapter keeps failures attributable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/measures.md")]
pub mod measures {}
#[doc = include_str!("../../../book/src/adjoint.md")]
pub mod adjoint {}
#[doc = include_str!("../../../book/src/tail_chains.md")]
pub mod tail_chains {}
#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}
#[doc = include_str!("../../../book/src/diagnostics.md")]
pub mod diagnostics {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
