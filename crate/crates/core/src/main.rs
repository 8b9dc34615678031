use std::io::Write;

fn main() {
    let (code, stdout, stderr) = miqp_hybrid::cli::execute(std::env::args_os());
    std::io::stdout().write_all(&stdout).expect("stdout");
    eprint!("{stderr}");
    std::process::exit(code);
}
