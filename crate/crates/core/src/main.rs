fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(vmcmc::cli::cli_main(&argv));
}
