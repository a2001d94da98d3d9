//! Runs the finite-difference gradient suite and prints one line per check.

use denoise_kd::gradsuite::run_suite;
use denoise_kd::Result;

fn main() -> Result<()> {
    for r in run_suite(0)? {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<40} {:>5} elements  max rel err {:.2e}  {verdict}", r.name, r.elements, r.max_rel_error);
    }
    Ok(())
}
