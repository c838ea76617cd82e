fn main() {
    rotunroll::tune_allocator();
    let code = rotunroll::cli::main_with(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
