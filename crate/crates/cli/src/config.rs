//! `--config <path>`: each `key = value` line acts as `--key=value` unless the
//! flag was given on the command line.

use sml_core::io::parse_config;
use sml_core::{Error, Result};

const ALIASES: [(&str, &str); 2] = [("T", "horizons"), ("epsilon", "eps")];

fn canonical(key: &str) -> &str {
    ALIASES.iter().find(|(alias, _)| *alias == key).map_or(key, |(_, name)| name)
}

fn flag_name(arg: &str) -> Option<&str> {
    let name = arg.strip_prefix("--")?;
    Some(canonical(name.split('=').next().unwrap_or(name)))
}

pub fn merge_config_file(argv: Vec<String>) -> Result<Vec<String>> {
    let path = argv.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            argv.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    });
    let Some(path) = path else { return Ok(argv) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Usage(format!("cannot read config file {path}: {e}")))?;
    let entries = parse_config(&text)?;
    let given: Vec<&str> = argv.iter().filter_map(|a| flag_name(a)).collect();
    let extra: Vec<String> = entries
        .iter()
        .filter(|(k, _)| *k != "config" && !given.contains(&canonical(k)))
        .map(|(k, v)| format!("--{}={v}", canonical(k)))
        .collect();
    let at = argv.len().min(2);
    let mut merged = argv[..at].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&argv[at..]);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_line_wins_over_file() {
        let dir = std::env::temp_dir().join(format!("sml-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.conf");
        std::fs::write(&path, "# defaults\nn = 50\nseed = 3\nT = 8,16\n").unwrap();
        let argv: Vec<String> = ["sml", "clt-sweep", "--seed", "9", "--config", path.to_str().unwrap()]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let merged = merge_config_file(argv).unwrap();
        assert!(merged.contains(&"--n=50".to_string()));
        assert!(merged.contains(&"--horizons=8,16".to_string()));
        assert!(!merged.iter().any(|a| a == "--seed=3"));
        assert_eq!(&merged[..2], &["sml", "clt-sweep"]);
    }
}
