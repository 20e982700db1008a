//! Resolving `--model` values: builtin names or parameter files.

use std::path::Path;

use rrhmm::builtin;
use rrhmm::hmm::RrHmmParams;

use crate::CliError;

pub fn resolve_params(spec: &str, m: Option<usize>) -> Result<RrHmmParams, CliError> {
    if builtin::NAMES.contains(&spec) {
        return builtin::by_name(spec, m)
            .ok_or_else(|| CliError::Usage(format!("unknown builtin {spec}")));
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "--model {spec} is neither a builtin ({}) nor an existing file",
            builtin::NAMES.join(", ")
        )));
    }
    RrHmmParams::load(path).map_err(CliError::from)
}
