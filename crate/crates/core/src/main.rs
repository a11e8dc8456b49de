fn main() {
    wavenet::runtime::retain_freed_memory();
    let code = wavenet::cli::run(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
