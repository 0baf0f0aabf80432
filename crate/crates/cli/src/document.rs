//! The run document: a TOML file with training settings at the top level,
//! an optional `store` path and an optional `[world]` table, patched by
//! `--set key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use jedi_core::synth::{generate_world, WorldSpec};
use jedi_core::train::TrainConfig;
use jedi_core::{Error, store::EmbeddingStore};
use toml::{Table, Value};

#[derive(Clone, Debug)]
pub struct RunDocument {
    pub train: TrainConfig,
    pub store: Option<PathBuf>,
    pub world: WorldSpec,
}

fn config_err(msg: String) -> anyhow::Error {
    Error::Config(msg).into()
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("override `{assignment}` has an empty key")));
    }
    let (last, parents) = path.split_last().unwrap();
    let mut cursor = table;
    for part in parents {
        let entry = cursor.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("override `{key}`: `{part}` is not a table")))?;
    }
    cursor.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunDocument {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str::<Table>(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(mut table: Table) -> Result<Self> {
        let store = match table.remove("store") {
            Some(Value::String(s)) => Some(PathBuf::from(s)),
            Some(other) => return Err(config_err(format!("store must be a path string, got {other}"))),
            None => None,
        };
        let mut world_table = match table.remove("world") {
            Some(Value::Table(t)) => t,
            Some(other) => return Err(config_err(format!("world must be a table, got {other}"))),
            None => Table::new(),
        };
        let train: TrainConfig = table.try_into().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        train.validate()?;
        if !world_table.contains_key("seed") {
            world_table.insert("seed".into(), Value::Integer(train.seed as i64));
        }
        let world: WorldSpec = world_table
            .try_into()
            .map_err(|e: toml::de::Error| config_err(format!("world: {e}")))?;
        world.validate()?;
        Ok(Self { train, store, world })
    }

    /// The store named by `--store`, else by the document, else a freshly
    /// generated world.
    pub fn open_store(&self, flag: Option<&Path>) -> Result<(EmbeddingStore, bool)> {
        match flag.or(self.store.as_deref()) {
            Some(dir) => Ok((EmbeddingStore::read(dir)?, false)),
            None => Ok((generate_world(&self.world)?, true)),
        }
    }

    /// The fully resolved document, with the world table only when the run
    /// generated its data.
    pub fn resolved(&self, train: &TrainConfig, store: Option<&Path>, generated: bool) -> Result<String> {
        let mut table = Table::try_from(train)?;
        if let Some(dir) = store {
            table.insert("store".into(), Value::String(dir.display().to_string()));
        }
        if generated {
            table.insert("world".into(), Value::Table(Table::try_from(&self.world)?));
        }
        Ok(toml::to_string(&table)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_tables() {
        let mut t = Table::new();
        apply_override(&mut t, "loss.gamma=0.25").unwrap();
        apply_override(&mut t, "distill_scenario = none").unwrap();
        apply_override(&mut t, "world.jitter=1").unwrap();
        apply_override(&mut t, "epochs=7").unwrap();
        apply_override(&mut t, "burn_in_epochs=3").unwrap();
        let doc = RunDocument::from_table(t).unwrap();
        assert_eq!(doc.train.loss.gamma, 0.25);
        assert_eq!(doc.train.epochs, 7);
        assert_eq!(doc.world.jitter, 1.0);
        assert_eq!(doc.train.distill_scenario.name(), "none");
    }

    #[test]
    fn world_seed_follows_the_training_seed() {
        let mut t = Table::new();
        apply_override(&mut t, "seed=9").unwrap();
        assert_eq!(RunDocument::from_table(t.clone()).unwrap().world.seed, 9);
        apply_override(&mut t, "world.seed=2").unwrap();
        assert_eq!(RunDocument::from_table(t).unwrap().world.seed, 2);
    }

    #[test]
    fn bad_documents_are_config_errors() {
        for o in ["nonsense", "=3", "learning_rate=1", "loss.gamma=-1", "epochs=3", "world.cross_signal_strength=2"] {
            let mut t = Table::new();
            let err = apply_override(&mut t, o).and_then(|_| RunDocument::from_table(t).map(|_| ()));
            let err = err.unwrap_err();
            let core = err.downcast_ref::<Error>().unwrap_or_else(|| panic!("{o}: {err}"));
            assert!(core.is_config(), "{o}: {core}");
        }
    }

    #[test]
    fn resolved_documents_reload_identically() {
        let doc = RunDocument::from_table(Table::new()).unwrap();
        let text = doc.resolved(&doc.train, None, true).unwrap();
        let again = RunDocument::from_table(toml::from_str(&text).unwrap()).unwrap();
        assert_eq!(again.train, doc.train);
        assert_eq!(again.world, doc.world);
    }
}
