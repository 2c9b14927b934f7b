use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde_json::Value;

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    ReproductionFailed,
}

/// A command's result in both renderings.
pub struct Report {
    pub json: Value,
    pub text: String,
    pub status: Status,
}

impl Report {
    pub fn ok(json: Value, text: String) -> Self {
        Self { json, text, status: Status::Ok }
    }
}

pub fn emit(report: &Report, format: Format, path: Option<&Path>) -> Result<()> {
    let mut body = match format {
        Format::Json => serde_json::to_string_pretty(&report.json)?,
        Format::Text => report.text.clone(),
    };
    if !body.ends_with('\n') {
        body.push('\n');
    }
    match path {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(body.as_bytes())?;
            Ok(())
        }
    }
}
