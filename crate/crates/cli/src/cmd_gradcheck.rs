use clap::Args;
use serde::Serialize;
use va_core::gradsuite::{run_suite, DEFAULT_POINTS};
use va_core::tensor::GradcheckConfig;

use crate::{echo_config, CmdResult, Failure};

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 12)]
    pub seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Random points per op.
    #[arg(long, default_value_t = DEFAULT_POINTS)]
    pub points: usize,
}

#[derive(Serialize)]
struct EffectiveConfig {
    seed: u64,
    tol: f64,
    eps: f64,
    points: usize,
}

pub fn run(a: GradcheckArgs) -> CmdResult {
    if !(a.tol > 0.0 && a.eps > 0.0) || a.points == 0 {
        return Err(Failure::input("tol, eps and points must be positive"));
    }
    echo_config(
        "gradcheck",
        &EffectiveConfig {
            seed: a.seed,
            tol: a.tol,
            eps: a.eps,
            points: a.points,
        },
    );
    let cfg = GradcheckConfig { eps: a.eps, tol: a.tol };
    let checks = run_suite(a.seed, a.points, &cfg)?;
    let mut failed = Vec::new();
    for c in &checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {:<24} points={} max_rel_error={:.3e}", c.op, c.points, c.max_rel_error);
        if !c.passed {
            failed.push(format!("{} ({:.3e})", c.op, c.max_rel_error));
        }
    }
    if failed.is_empty() {
        println!("all {} ops passed at tol {:e}", checks.len(), a.tol);
        Ok(())
    } else {
        Err(Failure::check(format!("gradcheck failed for {}", failed.join(", "))))
    }
}
