//! Spectral analysis of assembled operators and the kernel, unique-continuation,
//! invertibility and regularity experiments built on it.

mod convergence;
mod invertibility;
mod killing;
mod regularity;
mod spectral;
mod uc;

pub use convergence::{check_nested, convergence_study, convergence_table, ConvergenceRow, ConvergenceStudy, StudyKind};
pub use invertibility::{default_manufactured_field, invertibility_solve, manufactured_convergence, ManufacturedStudy, SolveReport};
pub use killing::{analytic_killing_fields, killing_kernel, principal_angles, symbolic_def_defect, KillingReport};
pub use regularity::{graph_gram, h2_gram, regularity_constant, RegularityOperator, RegularityReport};
pub use spectral::{lowest_spectrum, operator_spectrum, KernelVerdict, SpectralOptions, SpectralReport};
pub use uc::{unique_continuation_test, unique_continuation_with, MassFraction, UcReport};
