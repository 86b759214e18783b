//! Exact arbitrage and superhedging analysis for finite markets with
//! proportional transaction costs.
//!
//! Markets are finite scenario trees with bid-ask spreads; portfolios live in
//! asset units, and every question — arbitrage, attainability, consistent
//! pricing, maximality of a payoff, decomposability into efficiently priced
//! legs — reduces to exact rational linear programming and polyhedral cone
//! geometry. All arithmetic is `BigRational`; there is no floating point and
//! no tolerance anywhere.

pub mod rational;
pub mod linalg;
pub mod lp;
pub mod dd;
pub mod market;
pub mod cone;
pub mod pricing;
pub mod subtree;
pub mod maximality;
