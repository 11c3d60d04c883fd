//! Vocabulary files: one `token<TAB>id` line per token, ids in order from 0.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mocosa_core::tokenizer::Tokenizer;

use crate::error::{CliError, Result};

pub fn write_vocab(path: &Path, tokenizer: &Tokenizer) -> Result<()> {
    let mut out = String::new();
    for (i, t) in tokenizer.tokens().iter().enumerate() {
        let _ = writeln!(out, "{t}\t{i}");
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

pub fn read_vocab(path: &Path) -> Result<Tokenizer> {
    if !path.is_file() {
        return Err(CliError::Missing {
            artifact: "vocabulary file",
            path: path.to_path_buf(),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let bad = |line: usize, message: String| CliError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut tokens = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (tok, id) = line
            .rsplit_once('\t')
            .ok_or_else(|| bad(i + 1, "expected token<TAB>id".into()))?;
        if id.trim().parse::<usize>().ok() != Some(tokens.len()) {
            return Err(bad(i + 1, format!("expected id {}, found {id:?}", tokens.len())));
        }
        tokens.push(tok.to_string());
    }
    Tokenizer::from_tokens(tokens).map_err(|e| bad(0, e.to_string()))
}
