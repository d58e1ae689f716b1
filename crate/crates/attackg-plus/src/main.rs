fn main() {
    // Die quietly on closed pipes (`attackg-plus ... | head`) instead of
    // panicking in println!.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(attackg_plus::cli::run());
}
