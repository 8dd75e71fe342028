use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::Path;

/// Flags that take no value.
const SWITCHES: &[&str] = &["keep-noise", "simulate"];

#[derive(Debug)]
pub struct ConfigError(pub String);

/// Parses a flat `key = value` file; `#` starts a comment. Keys may use
/// `-` or `_`.
pub fn parse(text: &str, origin: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("{origin}:{}: expected key = value", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(ConfigError(format!(
                "{origin}:{}: invalid key `{}`",
                i + 1,
                k.trim()
            )));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn to_flags(entries: &[(String, String)]) -> Result<Vec<OsString>, ConfigError> {
    let mut out = Vec::new();
    for (key, value) in entries {
        if SWITCHES.contains(&key.as_str()) {
            match value.as_str() {
                "true" | "1" | "yes" => out.push(format!("--{key}").into()),
                "false" | "0" | "no" => {}
                _ => {
                    return Err(ConfigError(format!(
                        "`{key}` expects true or false, got `{value}`"
                    )))
                }
            }
        } else {
            out.push(format!("--{key}").into());
            out.push(value.into());
        }
    }
    Ok(out)
}

/// Removes `--config FILE` from argv and splices the file's entries in
/// right after the subcommand, so later command-line flags override them.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, ConfigError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut file = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.to_str() {
            Some("--config") => {
                let path = it
                    .next()
                    .ok_or_else(|| ConfigError("--config needs a file path".into()))?;
                file = Some(path);
            }
            Some(s) if s.starts_with("--config=") => file = Some(s["--config=".len()..].into()),
            _ => rest.push(a),
        }
    }
    let Some(file) = file else {
        return Ok(rest);
    };
    let path = Path::new(&file);
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    let flags = to_flags(&parse(&text, &path.display().to_string())?)?;
    // program name, then subcommand, then config flags, then the remaining flags
    let split = rest.len().min(2);
    let mut out: Vec<OsString> = rest[..split].to_vec();
    out.extend(flags);
    out.extend(rest.drain(split..));
    Ok(out)
}

/// Resolved settings, echoed to `config.txt` in the output directory.
#[derive(Debug)]
pub struct Echo {
    command: &'static str,
    entries: BTreeMap<&'static str, String>,
}

impl Echo {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            entries: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, key: &'static str, value: impl ToString) -> &mut Self {
        self.entries.insert(key, value.to_string());
        self
    }

    pub fn render(&self) -> String {
        let body: String = self
            .entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        format!("# tar-threshold {}\n{body}", self.command)
    }
}
