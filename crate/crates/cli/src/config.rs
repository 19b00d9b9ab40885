//! Key-value config files folded into the command line.
//!
//! Every key names a long flag of the chosen subcommand (or a global flag).
//! File values are inserted directly after the subcommand name, so flags
//! given on the command line come later and win.

use std::fs;
use std::path::PathBuf;

use clap::CommandFactory;

use crate::args::Cli;
use crate::config_error;

fn config_path(argv: &[String]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn render(key: &str, value: &toml::Value) -> anyhow::Result<Vec<String>> {
    let flag = format!("--{key}");
    Ok(match value {
        toml::Value::Boolean(true) => vec![flag],
        toml::Value::Boolean(false) => vec![],
        toml::Value::String(s) => vec![flag, s.clone()],
        toml::Value::Integer(i) => vec![flag, i.to_string()],
        toml::Value::Float(f) => vec![flag, f.to_string()],
        toml::Value::Array(items) => {
            let parts = items
                .iter()
                .map(|v| match v {
                    toml::Value::String(s) => Ok(s.clone()),
                    toml::Value::Integer(i) => Ok(i.to_string()),
                    toml::Value::Float(f) => Ok(f.to_string()),
                    other => Err(config_error(format!("key '{key}': unsupported list item {other}"))),
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            vec![flag, parts.join(",")]
        }
        other => return Err(config_error(format!("key '{key}': unsupported value {other}"))),
    })
}

/// Returns `argv` with the config file's entries spliced in.
pub fn merge(argv: Vec<String>) -> anyhow::Result<Vec<String>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| config_error(format!("{}: {e}", path.display())))?;

    let cmd = Cli::command();
    let Some(pos) = argv
        .iter()
        .position(|a| cmd.get_subcommands().any(|s| s.get_name() == a))
    else {
        // Let clap report the missing subcommand.
        return Ok(argv);
    };
    let sub = cmd
        .find_subcommand(&argv[pos])
        .expect("position matched a subcommand");
    let known = |key: &str| {
        sub.get_arguments()
            .chain(cmd.get_arguments())
            .any(|a| a.get_long() == Some(key))
    };

    let mut extra = Vec::new();
    for (raw_key, value) in &table {
        let key = raw_key.replace('_', "-");
        if key == "config" {
            return Err(config_error("config files cannot include other config files"));
        }
        if !known(&key) {
            return Err(config_error(format!(
                "unknown key '{raw_key}' for subcommand '{}'",
                argv[pos]
            )));
        }
        extra.extend(render(&key, value)?);
    }
    let mut out = argv[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn splices_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        fs::write(&cfg, "max_epochs = 3\nno-block5 = true\npatch-schedule = [16, 20]\n").unwrap();
        let a = argv(&format!("blurfield --config {} train --manifest m.json --max-epochs 5", cfg.display()));
        let merged = merge(a).unwrap();
        let tail: Vec<&str> = merged[4..].iter().map(String::as_str).collect();
        assert_eq!(
            tail,
            vec![
                "--max-epochs", "3", "--no-block5", "--patch-schedule", "16,20", "--manifest", "m.json", "--max-epochs", "5"
            ]
        );
    }

    #[test]
    fn rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        fs::write(&cfg, "bogus = 1\n").unwrap();
        assert!(merge(argv(&format!("blurfield --config {} train", cfg.display()))).is_err());
    }

    #[test]
    fn no_config_is_identity() {
        let a = argv("blurfield kernels --r 1 --phi 0");
        assert_eq!(merge(a.clone()).unwrap(), a);
    }
}
