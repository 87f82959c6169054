//! The `corefkit` command line. Each subcommand loads its inputs, calls the
//! matching library operation and writes the result.

use std::ffi::OsString;

pub mod args;
pub mod commands;
pub mod io;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;

/// Exit status for a failed run: I/O failures anywhere in the chain give
/// [`EXIT_IO`], everything else [`EXIT_INVALID`].
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<io::Invalid>()) {
        return EXIT_INVALID;
    }
    if err.chain().any(|e| e.is::<std::io::Error>()) {
        EXIT_IO
    } else {
        EXIT_INVALID
    }
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match args::parse(argv) {
        Ok(cli) => cli,
        Err(args::ArgsError::Clap(e)) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
        Err(e @ args::ArgsError::ConfigIo { .. }) => {
            eprintln!("error: {e}");
            return EXIT_IO;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    match commands::execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
