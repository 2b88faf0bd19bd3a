//! Drives the command-line front end in process and lists what it wrote.

fn main() {
    let out = std::env::temp_dir().join("qstoch-example-cli");
    let out = out.to_string_lossy().into_owned();
    for args in [
        vec!["table1"],
        vec!["verify"],
        vec!["--seed", "1", "trajectory", "--terms", "32", "--steps", "128", "--count", "2"],
    ] {
        let mut argv = vec!["qstoch", "--out", &out];
        argv.extend(args);
        println!("exit {}", qstoch::cli::run(argv));
    }
    for e in std::fs::read_dir(&out).expect("output directory") {
        println!("{}", e.expect("entry").path().display());
    }
}
