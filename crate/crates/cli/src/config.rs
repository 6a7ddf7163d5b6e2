//! Strict JSON config loading. Errors name the file and the offending key.

use std::fs;
use std::path::Path;

use loopsched_core::{ArchSpec, Error, LayerSpec, SpatialUnrolling};
use serde::de::DeserializeOwned;

use crate::error::{CliError, CliResult};

pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(path, &text)
}

pub fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let key = if key == "." {
            "<root>".to_string()
        } else {
            key
        };
        CliError::config(path, key, e.into_inner().to_string())
    })
}

pub fn load_layer(path: &Path) -> CliResult<LayerSpec> {
    let layer: LayerSpec = load(path)?;
    check_layer(path, &layer, None)?;
    Ok(layer)
}

pub fn load_network(path: &Path) -> CliResult<Vec<LayerSpec>> {
    let layers: Vec<LayerSpec> = load(path)?;
    for (i, layer) in layers.iter().enumerate() {
        check_layer(path, layer, Some(i))?;
    }
    Ok(layers)
}

fn check_layer(path: &Path, layer: &LayerSpec, index: Option<usize>) -> CliResult<()> {
    layer.validate().map_err(|e| {
        let prefix = index.map(|i| format!("[{i}].")).unwrap_or_default();
        match e {
            Error::InvalidLayer { field, .. } => {
                CliError::config(path, format!("{prefix}{field}"), e.to_string())
            }
            other => CliError::config(path, format!("{prefix}name"), other.to_string()),
        }
    })
}

pub fn load_arch(path: &Path) -> CliResult<ArchSpec> {
    let arch: ArchSpec = load(path)?;
    if let Some(issue) = loopsched_core::validate_arch(&arch).first() {
        // Issue messages start with the key they refer to.
        let text = issue.to_string();
        let (key, message) = text.split_once(": ").unwrap_or(("levels", text.as_str()));
        return Err(CliError::config(path, key, message));
    }
    Ok(arch)
}

/// Loads a spatial unrolling, or the empty one when no file is given.
pub fn load_spatial(path: Option<&Path>, arch: &ArchSpec) -> CliResult<SpatialUnrolling> {
    let Some(path) = path else {
        return Ok(SpatialUnrolling::none());
    };
    let spatial: SpatialUnrolling = load(path)?;
    spatial
        .validate(arch)
        .map_err(|e| CliError::config(path, "factor", e.to_string()))?;
    Ok(spatial)
}
