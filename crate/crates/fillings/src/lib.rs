//! Filling calculus for group presentations.
//!
//! Words over interned generators, derivation sequences and filling
//! expressions with area/radius/height accounting, exact search oracles,
//! height-reducing transformations for subdirect products of free groups,
//! presentation constructors and the Bestvina-Brady relator schemes.

pub mod acceptance;
pub mod bestvina_brady;
pub mod bounds;
pub mod constructors;
pub mod oracle;
pub mod pulldown;
pub mod rewriting;
pub mod words;

pub use rewriting::{Accounting, Expression, Move, Presentation, RealizedScheme, Scheme, SeqBuilder, Sequence, Term};
pub use words::{ChargeMap, HeightVector, Letter, Symbol, Word};
