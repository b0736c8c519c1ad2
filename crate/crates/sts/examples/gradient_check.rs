//! Verify every differentiable operator and the composed dual-stream model
//! against central finite differences.
//!
//!     cargo run --release --example gradient_check

use sts::experiment::run_gradcheck;

fn main() -> sts::Result<()> {
    let report = run_gradcheck(13)?;
    for c in &report.checks {
        println!(
            "{:<20} max relative error {:.3e}  [{}]",
            c.name,
            c.max_rel_err,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    if !report.all_passed {
        std::process::exit(1);
    }
    println!("all checks passed");
    Ok(())
}
