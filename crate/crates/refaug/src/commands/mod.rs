//! The subcommands. Each returns its result instead of printing, so tests
//! can drive them directly; `cli` does the printing.

pub mod evaluate;
pub mod preview;
pub mod report;
pub mod selfcheck;
pub mod train;

pub use self::evaluate::{cmd_evaluate, EvaluateArgs, Split};
pub use self::preview::{cmd_preview, PreviewArgs, PreviewEntry};
pub use self::report::{cmd_report, ReportArgs};
pub use self::selfcheck::{run_checks, CheckResult, SelfcheckOptions};
pub use self::train::{cmd_train, seed_dirs, Manifest, TrainArgs};
