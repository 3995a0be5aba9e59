//! Runs a registered experiment with an override, then prints the
//! consolidated report. Artifacts go to a temporary directory unless a path
//! is given as the first argument.

use taskmpc::experiments::{self, ExperimentSpec};

fn main() -> taskmpc::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("taskmpc-example"), Into::into);
    for name in experiments::NAMES {
        println!("{name:<18} {}", experiments::describe(name).unwrap_or_default());
    }
    let spec = ExperimentSpec::new("figC_horizons", &out).with_override("horizons", "2,40");
    for p in spec.params()?.iter() {
        println!("  {:<16} {:?} ({:?}) {}", p.key, p.value, p.origin, p.note);
    }
    let rep = experiments::run(&spec)?;
    println!("\n{} -> {}", if rep.pass { "PASS" } else { "FAIL" }, out.display());
    print!("{}", experiments::report(&out)?);
    Ok(())
}
