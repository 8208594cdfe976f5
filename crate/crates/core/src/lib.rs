//! Compiler and simulator for abstract network control programs.

pub mod abstraction;
pub mod instantiation;
pub mod decomposer;
pub mod algogen;
pub mod pps;
pub mod netsim;

use thiserror::Error;

use abstraction::{build_default_schema, parse_program, AbstractionError};
use algogen::{AlgogenError, PlanSet};
use decomposer::{Compilation, DecomposeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error(transparent)]
    Parse(#[from] AbstractionError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Plan(#[from] AlgogenError),
}

/// A program carried through decomposition and plan synthesis.
#[derive(Debug, Clone)]
pub struct CompiledProgram {
    pub compilation: Compilation,
    pub plans: PlanSet,
}

pub fn compile_program(text: &str, seed: u64) -> Result<CompiledProgram, CompileError> {
    let spec = parse_program(text)?;
    let schema = build_default_schema();
    let compilation = decomposer::compile(&spec, &schema, seed)?;
    let plans = algogen::synthesize(&compilation.program)?;
    Ok(CompiledProgram { compilation, plans })
}
