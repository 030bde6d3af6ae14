//! Finite-difference validation of every operator's analytic gradient.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

fn main() -> nightdepth::Result<()> {
    let t0 = std::time::Instant::now();
    let cases = nightdepth::check::operator_sweep()?;
    for case in &cases {
        let ok = case.max_rel_error <= nightdepth::check::SWEEP_TOLERANCE;
        println!(
            "{} {:40} max rel err {:.3e}",
            if ok { "PASS" } else { "FAIL" },
            case.name,
            case.max_rel_error
        );
    }
    println!("{} cases in {:.1}s", cases.len(), t0.elapsed().as_secs_f64());
    Ok(())
}
