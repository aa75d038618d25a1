use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::LayerStack;
use crate::error::{Error, Result};

const FORMAT: &str = "splitfed-stack";
const MODEL_FORMAT: &str = "splitfed-model";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    stack: LayerStack,
}

pub fn to_json(stack: &LayerStack) -> Result<String> {
    Ok(serde_json::to_string(&Checkpoint {
        format: FORMAT.into(),
        version: VERSION,
        stack: stack.clone(),
    })?)
}

pub fn from_json(text: &str) -> Result<LayerStack> {
    let ck: Checkpoint = serde_json::from_str(text)?;
    if ck.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", ck.format)));
    }
    if ck.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
    }
    Ok(ck.stack)
}

pub fn save(stack: &LayerStack, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(stack)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<LayerStack> {
    from_json(&std::fs::read_to_string(path)?)
}

#[derive(Serialize, Deserialize)]
struct NamedPart {
    name: String,
    stack: LayerStack,
}

#[derive(Serialize, Deserialize)]
struct ModelCheckpoint {
    format: String,
    version: u32,
    parts: Vec<NamedPart>,
}

/// Several named stacks in one document, in the given order.
pub fn parts_to_json(parts: &[(String, LayerStack)]) -> Result<String> {
    Ok(serde_json::to_string(&ModelCheckpoint {
        format: MODEL_FORMAT.into(),
        version: VERSION,
        parts: parts
            .iter()
            .map(|(name, stack)| NamedPart {
                name: name.clone(),
                stack: stack.clone(),
            })
            .collect(),
    })?)
}

pub fn parts_from_json(text: &str) -> Result<Vec<(String, LayerStack)>> {
    let ck: ModelCheckpoint = serde_json::from_str(text)?;
    if ck.format != MODEL_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", ck.format)));
    }
    if ck.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
    }
    Ok(ck.parts.into_iter().map(|p| (p.name, p.stack)).collect())
}
