//! Flat `key = value` run configuration with flag overrides.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context};

use crate::exit::{Failure, Kind};

/// One command's settings: declared keys with defaults, then the file, then
/// `--set` overrides. Unknown keys are rejected.
#[derive(Clone, Debug)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    root: PathBuf,
}

pub fn parse_text(text: &str, origin: &str) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Failure::new(
                Kind::ConfigParse,
                anyhow!("{origin}:{}: expected `key = value`, got {raw:?}", n + 1),
            )
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn resolve(
        defaults: &[(&str, &str)],
        root: &Path,
        file: Option<&Path>,
        overrides: &[String],
    ) -> Result<Self, Failure> {
        let mut values: BTreeMap<String, String> = defaults
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let mut set = |k: String, v: String, origin: &str| -> Result<(), Failure> {
            if !values.contains_key(&k) {
                return Err(Failure::new(
                    Kind::ConfigParse,
                    anyhow!("{origin}: unknown key {k:?}"),
                ));
            }
            values.insert(k, v);
            Ok(())
        };
        if let Some(file) = file {
            let path = root.join(file);
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(|e| Failure::new(Kind::MissingInput, e))?;
            for (k, v) in parse_text(&text, &path.display().to_string())? {
                set(k, v, &path.display().to_string())?;
            }
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| {
                Failure::new(
                    Kind::ConfigParse,
                    anyhow!("--set expects key=value, got {o:?}"),
                )
            })?;
            set(k.trim().to_string(), v.trim().to_string(), "--set")?;
        }
        Ok(RunConfig {
            values,
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key {key} is not declared for this command"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, Failure>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| {
            Failure::new(
                Kind::ConfigParse,
                anyhow!("bad value for {key} ({raw:?}): {e}"),
            )
        })
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: Display,
    {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    /// Comma-separated list; empty value is an empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, Failure>
    where
        T::Err: Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e| {
                    Failure::new(Kind::ConfigParse, anyhow!("bad item {s:?} in {key}: {e}"))
                })
            })
            .collect()
    }

    /// A path under the workspace root; the key must be set.
    pub fn path(&self, key: &str) -> Result<PathBuf, Failure> {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Err(Failure::new(
                Kind::ConfigParse,
                anyhow!("{key} is required"),
            ));
        }
        Ok(self.root.join(raw))
    }

    /// Like [`RunConfig::path`] but the file must already exist.
    pub fn input(&self, key: &str) -> Result<PathBuf, Failure> {
        let p = self.path(key)?;
        if !p.exists() {
            return Err(Failure::new(
                Kind::MissingInput,
                anyhow!("{key}: {} does not exist", p.display()),
            ));
        }
        Ok(p)
    }

    pub fn optional_input(&self, key: &str) -> Result<Option<PathBuf>, Failure> {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.input(key).map(Some)
        }
    }

    /// Every resolved key, sorted, one `key = value` per line.
    pub fn snapshot(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
