//! A recursive-descent parser for the Python 3 grammar, sufficient for
//! static analysis of model-definition scripts. Semantics are not modelled
//! here; see [`crate::miner`].

pub mod ast;
mod lexer;
mod parser;

use thiserror::Error;

pub use ast::{Expr, Module, Stmt, StmtKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

pub fn parse_module(src: &str) -> Result<Module, ParseError> {
    let tokens = lexer::tokenize(src)?;
    parser::Parser::new(tokens).module()
}
