fn main() {
    std::process::exit(tfv_salience::cli::run(std::env::args_os()));
}
