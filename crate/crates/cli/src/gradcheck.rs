//! `gradcheck`: finite-difference verification table.

use denomamba::gradsuite::{run_suite, SuiteModule, SuiteOptions, GRADCHECK_TOLERANCE};
use denomamba::Result;

use crate::args::GradcheckArgs;

/// Runs the suite, prints one row per check, and returns whether all passed.
pub fn run(args: &GradcheckArgs) -> Result<bool> {
    let modules: Vec<SuiteModule> = if args.modules.is_empty() {
        SuiteModule::ALL.to_vec()
    } else {
        args.modules.clone()
    };
    let opts = SuiteOptions {
        seed: args.seed,
        fault: args.inject_fault,
        network_coords: args.coords,
    };
    let reports = run_suite(&modules, opts)?;
    println!("{:<9} {:<50} {:>6} {:>12}  result", "module", "check", "coords", "max_rel_err");
    let mut all = true;
    for (m, r) in &reports {
        let pass = r.passes(GRADCHECK_TOLERANCE);
        all &= pass;
        println!(
            "{:<9} {:<50} {:>6} {:>12.3e}  {}",
            m.as_str(),
            r.label,
            r.checked,
            r.max_rel_error,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    for m in &modules {
        let worst = reports
            .iter()
            .filter(|(x, _)| x == m)
            .map(|(_, r)| r.max_rel_error)
            .fold(0.0, f64::max);
        println!("summary {:<9} max_rel_err {:.3e}", m.as_str(), worst);
    }
    println!(
        "gradcheck {} (tolerance {:.0e})",
        if all { "passed" } else { "FAILED" },
        GRADCHECK_TOLERANCE
    );
    Ok(all)
}
