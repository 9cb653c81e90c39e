//! `key = value` config files merged under the command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Command};

/// Parses a config file. Blank lines and `#` comments are skipped.
pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{}:{}: expected `key = value`", path.display(), n + 1);
        };
        let key = k.trim().replace('_', "-");
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            bail!("{}:{}: duplicate key {key}", path.display(), n + 1);
        }
    }
    Ok(out)
}

/// Locates the subcommand name and an optional `--config` path in raw arguments.
fn scan(args: &[OsString], cmd: &Command) -> (Option<(usize, String)>, Option<OsString>) {
    let mut sub = None;
    let mut config = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--config" {
            config = args.get(i + 1).cloned();
            i += 2;
            continue;
        }
        if let Some(v) = a.strip_prefix("--config=") {
            config = Some(v.into());
        } else if a == "--threads" && sub.is_none() {
            i += 2;
            continue;
        } else if sub.is_none() && !a.starts_with('-') && cmd.find_subcommand(a.as_ref()).is_some() {
            sub = Some((i, a.to_string()));
        }
        i += 1;
    }
    (sub, config)
}

/// Returns `args` with config values appended for every flag the command
/// line leaves unset. Unknown keys are rejected.
pub fn merge_config(args: Vec<OsString>, cmd: &Command) -> Result<Vec<OsString>> {
    let (sub, config) = scan(&args, cmd);
    let Some(path) = config else {
        return Ok(args);
    };
    let Some((_, sub_name)) = sub else {
        bail!("--config needs a subcommand");
    };
    let sub_cmd = cmd.find_subcommand(&sub_name).expect("scanned");
    let values = read_config(Path::new(&path))?;
    let given: Vec<String> = args
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut out = args.clone();
    for (key, value) in values {
        let arg = sub_cmd
            .get_arguments()
            .chain(cmd.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()));
        let Some(arg) = arg else {
            bail!("unknown config key `{key}` for `{sub_name}`");
        };
        if key == "config" || given.contains(&key) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" => out.push(format!("--{key}").into()),
                "false" => {}
                _ => bail!("config key `{key}` expects true or false, got {value}"),
            },
            _ => out.push(format!("--{key}={value}").into()),
        }
    }
    Ok(out)
}

/// Every argument of the subcommand with its resolved value, one `key = value` per line.
pub fn resolved(sub: &Command, matches: &clap::ArgMatches, extra: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in extra {
        s.push_str(&format!("{k} = {v}\n"));
    }
    for arg in sub.get_arguments() {
        let id = arg.get_id().as_str();
        let Some(long) = arg.get_long() else { continue };
        if long == "config" || long == "help" {
            continue;
        }
        let value = match arg.get_action() {
            ArgAction::SetTrue => matches.get_flag(id).to_string(),
            _ => match matches.get_raw(id) {
                Some(vals) => vals.map(|v| v.to_string_lossy().into_owned()).collect::<Vec<_>>().join(","),
                None => continue,
            },
        };
        s.push_str(&format!("{long} = {value}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::{Arg, Command};

    fn cmd() -> Command {
        Command::new("t").arg(Arg::new("threads").long("threads")).subcommand(
            Command::new("run")
                .arg(Arg::new("alpha").long("alpha"))
                .arg(Arg::new("fast").long("fast").action(ArgAction::SetTrue))
                .arg(Arg::new("config").long("config")),
        )
    }

    #[test]
    fn flags_win_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, "alpha = 3\n# note\nfast = true\n").unwrap();
        let args: Vec<OsString> = ["t", "run", "--alpha", "5", "--config", p.to_str().unwrap()].iter().map(Into::into).collect();
        let merged = merge_config(args, &cmd()).unwrap();
        let m = cmd().get_matches_from(merged);
        let sub = m.subcommand_matches("run").unwrap();
        assert_eq!(sub.get_one::<String>("alpha").unwrap(), "5");
        assert!(sub.get_flag("fast"));

        std::fs::write(&p, "beta = 3\n").unwrap();
        let args: Vec<OsString> = ["t", "run", "--config", p.to_str().unwrap()].iter().map(Into::into).collect();
        let err = merge_config(args, &cmd()).unwrap_err().to_string();
        assert!(err.contains("beta"), "{err}");
    }

    #[test]
    fn resolved_lists_defaults() {
        let c = Command::new("run").arg(Arg::new("alpha").long("alpha").default_value("1e-2"));
        let m = c.clone().get_matches_from(["run"]);
        assert_eq!(resolved(&c, &m, &[("command", "run".into())]), "command = run\nalpha = 1e-2\n");
    }
}
