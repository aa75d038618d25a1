//! The brute-force checks behind `sflsim oracle`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitfed::hydra::{assign_groups, exact_assignment, objective_value, GroupStats};
use splitfed::oracle::{grad_check, metric_check, random_problem};

use crate::error::Result;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const METRIC_TOLERANCE: f64 = 1e-15;

/// A check's verdict and a one-line account of the worst case.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub pass: bool,
    pub detail: String,
}

impl std::fmt::Display for OracleOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{verdict}: {}", self.detail)
    }
}

/// Finite-difference check on `nets` seeded MLPs of at most `max_params`
/// parameters.
pub fn grad_check_nets(nets: usize, seed: u64, max_params: usize, eps: f64) -> Result<OracleOutcome> {
    let mut worst = 0.0f64;
    let mut worst_net = 0;
    let mut params = 0;
    for i in 0..nets {
        let (stack, x, y) = random_problem(seed.wrapping_add(i as u64), max_params)?;
        let check = grad_check(&stack, &x, &y, eps)?;
        params += check.params;
        if check.max_rel_err > worst {
            worst = check.max_rel_err;
            worst_net = i;
        }
    }
    Ok(OracleOutcome {
        pass: worst < GRAD_TOLERANCE,
        detail: format!(
            "{nets} nets, {params} parameters, max relative error {worst:.3e} (net {worst_net})"
        ),
    })
}

/// Random per-group count rows for `clients` clients and `groups` groups.
pub fn random_group_stats(rng: &mut ChaCha8Rng, clients: usize, groups: usize) -> Vec<GroupStats> {
    (0..clients)
        .map(|c| GroupStats {
            client_id: c,
            counts: (0..groups).map(|_| rng.random_range(0..100)).collect(),
        })
        .collect()
}

/// Compares greedy grouping with exhaustive search on random instances.
pub fn group_exact(clients: usize, groups: usize, instances: usize, seed: u64) -> Result<OracleOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pass = true;
    let mut worst_gap = 0.0f64;
    let mut lines = Vec::new();
    for i in 0..instances {
        let stats = random_group_stats(&mut rng, clients, groups);
        let greedy = assign_groups(&stats, groups)?;
        let exact = exact_assignment(&stats, groups)?;
        let g = objective_value(&greedy, &stats)?;
        let e = objective_value(&exact, &stats)?;
        let sizes = greedy.group_sizes();
        let balanced = sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1;
        let one_each = greedy.u().iter().all(|row| row.iter().map(|&b| b as usize).sum::<usize>() == 1)
            && greedy.len() == clients;
        pass &= balanced && one_each && e >= g;
        worst_gap = worst_gap.max(e - g);
        if instances <= 10 {
            lines.push(format!("instance {i}: greedy {g} optimal {e}"));
        }
    }
    lines.push(format!(
        "{instances} instances with C={clients}, G={groups}; largest optimal-minus-greedy gap {worst_gap}"
    ));
    Ok(OracleOutcome {
        pass,
        detail: lines.join("\n"),
    })
}

/// Metric implementations against their double-loop forms.
pub fn metric_check_cases(cases: usize, seed: u64) -> Result<OracleOutcome> {
    let check = metric_check(seed, cases)?;
    let worst = check
        .max_bw_err
        .max(check.max_pg_err)
        .max(check.max_pg_identity_err);
    Ok(OracleOutcome {
        pass: worst <= METRIC_TOLERANCE,
        detail: format!(
            "{cases} matrices, max error: backward transfer {:.1e}, performance gap {:.1e}, gap identity {:.1e}",
            check.max_bw_err, check.max_pg_err, check.max_pg_identity_err
        ),
    })
}
