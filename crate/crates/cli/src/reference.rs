//! Markdown reference page generated from the argument definitions.

use std::fmt::Write;

use clap::CommandFactory;

use crate::cli::Cli;
use crate::config::{AppConfig, ENV_PREFIX, ENV_VARS};

fn flag_line(out: &mut String, arg: &clap::Arg) {
    let Some(long) = arg.get_long() else { return };
    let mut name = format!("--{long}");
    if arg.get_action().takes_values() {
        let value = arg
            .get_value_names()
            .and_then(|v| v.first())
            .map_or_else(|| arg.get_id().as_str().to_uppercase(), |v| v.to_string());
        write!(name, " <{value}>").unwrap();
    }
    let help = arg.get_help().map(|h| h.to_string()).unwrap_or_default();
    let defaults: Vec<String> = arg
        .get_default_values()
        .iter()
        .map(|v| v.to_string_lossy().into_owned())
        .collect();
    let mut line = format!("| `{name}` | {help}");
    if !defaults.is_empty() {
        write!(line, " (default: `{}`)", defaults.join(",")).unwrap();
    }
    if arg.is_required_set() {
        line.push_str(" (required)");
    }
    writeln!(out, "{line} |").unwrap();
}

fn command_section(out: &mut String, path: &str, cmd: &clap::Command) {
    writeln!(out, "### `ragforge {path}`\n").unwrap();
    if let Some(about) = cmd.get_about() {
        writeln!(out, "{about}\n").unwrap();
    }
    let args: Vec<_> = cmd
        .get_arguments()
        .filter(|a| !a.is_global_set() && a.get_long().is_some() && !matches!(a.get_id().as_str(), "help" | "version"))
        .collect();
    if !args.is_empty() {
        out.push_str("| Flag | Meaning |\n|---|---|\n");
        for a in args {
            flag_line(out, a);
        }
        out.push('\n');
    }
    for sub in cmd.get_subcommands().filter(|s| s.get_name() != "help") {
        command_section(out, &format!("{path} {}", sub.get_name()), sub);
    }
}

pub fn render() -> String {
    let root = Cli::command();
    let mut out = String::from("# ragforge command-line reference\n\n");
    out.push_str("Generated by `ragforge reference`.\n\n");

    out.push_str("## Global flags\n\nAccepted before or after the subcommand.\n\n| Flag | Meaning |\n|---|---|\n");
    for a in root.get_arguments().filter(|a| !matches!(a.get_id().as_str(), "help" | "version")) {
        flag_line(&mut out, a);
    }

    out.push_str("\n## Subcommands\n\n");
    for sub in root.get_subcommands().filter(|s| s.get_name() != "help") {
        command_section(&mut out, sub.get_name(), sub);
    }

    out.push_str("## Configuration\n\n");
    out.push_str("Each setting is taken from the first layer that sets it: command-line flag, environment variable, config file, built-in default.\n\n");
    out.push_str("| Variable | Meaning |\n|---|---|\n");
    for (name, help) in ENV_VARS {
        writeln!(out, "| `{ENV_PREFIX}{name}` | {help} |").unwrap();
    }
    out.push_str("\nConfig file with every default:\n\n```toml\n");
    out.push_str(&toml::to_string(&AppConfig::default()).expect("config serializes"));
    out.push_str("```\n\n");
    out.push_str("`run.seed` and `run.jobs` are unset by default. Commands that sample (`mine`, `synth`, `train-toy`) draw a seed when none is set and record it in their output.\n\n");

    out.push_str("## Output\n\n");
    out.push_str("With `--json`, stdout carries one JSON object with `command`, `config` (the effective configuration) and `result`. Without it, stdout carries a text summary and stderr a `config:` line. Commands that write files also write `<output>.run.json` beside the main output.\n\n");
    out.push_str("## Exit codes\n\n| Code | Meaning |\n|---|---|\n| 0 | success |\n| 1 | runtime error, including an unreadable config file |\n| 2 | usage error: unknown subcommand or flag, bad flag value |\n");
    out
}
