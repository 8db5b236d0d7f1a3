fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(langnav_cli::run(&argv));
}
