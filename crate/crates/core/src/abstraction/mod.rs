//! Network element model, control-interface operations and the program parser.

pub mod expr;
pub mod parser;
pub mod problem;
pub mod schema;

use thiserror::Error;

pub use expr::{compare, compose, Constraint, ElementPath, Expr, Index, MathOp, PathSeg, Relation};
pub use parser::{parse_program, parse_program_with};
pub use problem::{ControlProblemSpec, Sense, Variable};
pub use schema::{
    build_default_schema, Bounds, DependencyEdge, Element, ElementId, ElementKind, ElementRef,
    EntityType, Layer, NetworkSchema, Scope, VirtualElement,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AbstractionError {
    #[error("unknown element `{0}`")]
    UnknownElement(String),
    #[error("element `{0}` already exists")]
    DuplicateElement(String),
    #[error("invalid edge: {0}")]
    InvalidEdge(String),
    #[error("`{op}` expects at least {expected} argument(s), got {got}")]
    ArityMismatch {
        op: String,
        expected: usize,
        got: usize,
    },
    #[error("`{0}` does not resolve to a parameter of this schema")]
    SchemaMismatch(String),
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid program: {0}")]
    Validation(String),
}
