fn main() {
    std::process::exit(ppkrige::cli::run(std::env::args_os()));
}
