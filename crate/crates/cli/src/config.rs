//! Flag > config file > built-in default.

use std::path::Path;

use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// A problem with the configuration rather than with the run itself.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

pub fn load_file(path: &Path) -> Result<Map<String, Value>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(ConfigError(format!("{}: expected a JSON object", path.display()))),
        Err(e) => Err(ConfigError(format!("{}: {e}", path.display()))),
    }
}

fn from_command_line(matches: &ArgMatches, id: &str) -> bool {
    matches.try_get_raw(id).is_ok() && matches.value_source(id) == Some(ValueSource::CommandLine)
}

/// Overlays `file` onto the parsed arguments wherever the flag was not
/// given on the command line. Keys must name existing options.
pub fn resolve<T: Serialize + DeserializeOwned>(
    parsed: &T,
    matches: &ArgMatches,
    file: Option<&Map<String, Value>>,
    section: &str,
) -> Result<T, ConfigError> {
    let mut value = serde_json::to_value(parsed).map_err(|e| ConfigError(e.to_string()))?;
    let obj = value.as_object_mut().expect("arguments serialize to an object");
    if let Some(file) = file {
        for (key, v) in file {
            if !obj.contains_key(key) {
                return Err(ConfigError(format!("unknown option '{key}' in config section '{section}'")));
            }
            if !from_command_line(matches, key) {
                obj.insert(key.clone(), v.clone());
            }
        }
    }
    serde_json::from_value(value).map_err(|e| ConfigError(format!("config section '{section}': {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::{Args, Command, FromArgMatches};
    use serde::Deserialize;
    use serde_json::json;

    #[derive(Args, Debug, PartialEq, Serialize, Deserialize)]
    struct Opts {
        #[arg(long, default_value_t = 1)]
        a: u32,
        #[arg(long, default_value_t = 2)]
        b: u32,
    }

    fn parse(argv: &[&str]) -> (Opts, ArgMatches) {
        let m = Opts::augment_args(Command::new("t")).get_matches_from(argv);
        (Opts::from_arg_matches(&m).unwrap(), m)
    }

    fn file(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn flag_wins_over_file_and_file_over_default() {
        let (opts, m) = parse(&["t", "--a", "7"]);
        let f = file(json!({"a": 5, "b": 9}));
        assert_eq!(resolve(&opts, &m, Some(&f), "s").unwrap(), Opts { a: 7, b: 9 });
        assert_eq!(resolve(&opts, &m, None, "s").unwrap(), Opts { a: 7, b: 2 });
    }

    #[test]
    fn rejects_unknown_and_mistyped_keys() {
        let (opts, m) = parse(&["t"]);
        let e = resolve(&opts, &m, Some(&file(json!({"c": 1}))), "s").unwrap_err();
        assert!(e.0.contains("'c'"), "{e}");
        assert!(resolve(&opts, &m, Some(&file(json!({"a": "x"}))), "s").is_err());
    }

    #[test]
    fn file_must_hold_an_object() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, "[1]").unwrap();
        assert!(load_file(&p).is_err());
        assert!(load_file(&dir.path().join("missing.json")).is_err());
        std::fs::write(&p, r#"{"seed": 3}"#).unwrap();
        assert_eq!(load_file(&p).unwrap()["seed"], 3);
    }
}
