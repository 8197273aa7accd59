//! The command-line workflow driven in-process: simulate, calibrate, scan
//! stability, analyse residuals and tabulate the Lifshitz shift.

use sphereplane::cli::run_with;

fn call(args: &[&str]) -> sphereplane::Result<String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_with(
        std::iter::once("sphereplane").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    if code != 0 {
        return Err(sphereplane::Error::Config(format!(
            "`{}` exited with {code}: {}",
            args.join(" "),
            String::from_utf8_lossy(&err)
        )));
    }
    Ok(String::from_utf8_lossy(&out).into_owned())
}

pub fn run_example() -> sphereplane::Result<()> {
    let dir = std::env::temp_dir().join("sphereplane-cli-example");
    let path = |name: &str| dir.join(name).display().to_string();
    let (run, cal, report) = (path("run.csv"), path("cal.csv"), path("report"));

    print!("{}", call(&["simulate", "--seed", "7", "--out", &run])?);
    call(&["calibrate", "--input", &run, "--out", &cal])?;
    let stability = call(&["stability", "--input", &cal, "--mode", "free"])?;
    println!(
        "stability table: {} data rows",
        stability.lines().filter(|l| l.ends_with(",ok")).count()
    );
    print!(
        "{}",
        call(&[
            "residuals",
            "--input",
            &run,
            "--out-dir",
            &report,
            "--form",
            "exponential"
        ])?
    );
    let table = call(&[
        "lifshitz", "--x-min", "50nm", "--x-max", "3um", "--points", "5",
    ])?;
    print!("{table}");
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
