use std::path::Path;

use clap::Args;
use mssl_core::rng::derive_seed;
use mssl_core::simgen::{gen_truth, simulate_from_truth, SimulationSpec};
use mssl_core::OutcomeKind;
use serde::Serialize;

use super::{resolve_settings, with_threads, CommonArgs};
use crate::config::{parse_regimes, parse_structures, SimulateSettings};
use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, write_kinds, write_matrix};
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct SimulateFlags {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    /// Number of binary outcomes (default q/2).
    #[arg(long)]
    pub q_binary: Option<usize>,
    /// Rows of an independent test set written to `test/`.
    #[arg(long)]
    pub n_test: Option<usize>,
    /// ar1, ar2, block, star, small-world or tree.
    #[arg(long)]
    pub structure: Option<String>,
    /// uniform or disjoint.
    #[arg(long)]
    pub regime: Option<String>,
    /// Fraction of nonzero coefficients.
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long)]
    pub rewire_prob: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub flags: SimulateFlags,
}

/// Continuous outcomes first, then `q_binary` binary ones.
pub fn outcome_kinds(q: usize, q_binary: Option<usize>) -> CliResult<Vec<OutcomeKind>> {
    let qb = q_binary.unwrap_or(q / 2);
    if qb > q {
        return Err(CliError::Usage(format!("q_binary = {qb} exceeds q = {q}")));
    }
    let mut kinds = vec![OutcomeKind::Continuous; q - qb];
    kinds.extend(std::iter::repeat_n(OutcomeKind::Binary, qb));
    Ok(kinds)
}

const TEST_TAG: u64 = 0x7e57;

pub fn simulate_to_dir(s: &SimulateSettings, out: &Path) -> CliResult<()> {
    let structure = parse_structures(&s.structure, s.rewire_prob)?;
    let regime = parse_regimes(&s.regime, s.density)?;
    if structure.len() != 1 || regime.len() != 1 {
        return Err(CliError::Usage("simulate takes exactly one structure and one regime".into()));
    }
    if s.n < 2 || s.p == 0 || s.q == 0 {
        return Err(CliError::Usage(format!("need n >= 2, p >= 1, q >= 1; got n={}, p={}, q={}", s.n, s.p, s.q)));
    }
    let spec = SimulationSpec {
        n: s.n,
        p: s.p,
        structure: structure[0],
        regime: regime[0],
        kinds: outcome_kinds(s.q, s.q_binary)?,
        seed: s.seed,
    };
    let (b, omega, _) = gen_truth(&spec)?;
    let (x, y) = simulate_from_truth(s.n, b.view(), omega.view(), &spec.kinds, s.seed)?;
    ensure_dir(out)?;
    write_matrix(&out.join("X.csv"), x.view())?;
    write_matrix(&out.join("Y.csv"), y.view())?;
    write_matrix(&out.join("truth_B.csv"), b.view())?;
    write_matrix(&out.join("truth_Omega.csv"), omega.view())?;
    write_kinds(&out.join("kinds.csv"), &spec.kinds)?;
    if s.n_test > 0 {
        let test_dir = out.join("test");
        ensure_dir(&test_dir)?;
        let seed = derive_seed(&[s.seed, TEST_TAG]);
        let (xt, yt) = simulate_from_truth(s.n_test, b.view(), omega.view(), &spec.kinds, seed)?;
        write_matrix(&test_dir.join("X.csv"), xt.view())?;
        write_matrix(&test_dir.join("Y.csv"), yt.view())?;
        write_kinds(&test_dir.join("kinds.csv"), &spec.kinds)?;
    }
    RunManifest::new("simulate", s.seed, s).write(out)
}

pub fn execute(args: SimulateArgs) -> CliResult<()> {
    let (settings, _) =
        resolve_settings::<SimulateSettings>(&args.common, "simulate", SimulateSettings::TEXT_KEYS, &args.flags)?;
    with_threads(args.common.threads, || simulate_to_dir(&settings, &args.common.out))?
}
