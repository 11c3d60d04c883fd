//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   "MOCOSACK"
//! version    u32       FORMAT_VERSION
//! header     11 × u32  entities, relations, struct_dim, layers, hidden,
//!                      heads, max_len, vocab_size, ffn, ase code, flags
//!                      (bit 0 use_ase, bit 1 shared_encoders)
//! tau_init   f64
//! vocab      u32 count, then per token: u32 byte length, UTF-8 bytes
//! params     u32 count, then per parameter in registration order:
//!            u32 name length, name, u32 rows, u32 cols, rows·cols × f64
//! checksum   32 bytes  SHA-256 of everything above
//! ```
//!
//! Only the online model is stored. The momentum encoder, its queue and the
//! optimizer moments are training state and are not persisted.

use std::fs;
use std::path::{Path, PathBuf};

use mocosa_core::text::TextEncoderConfig;
use mocosa_core::tokenizer::Tokenizer;
use mocosa_core::{AseKind, Model, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"MOCOSACK";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

const FLAG_USE_ASE: u32 = 1;
const FLAG_SHARED: u32 = 2;

/// Everything needed to rebuild a model.
pub struct Checkpoint {
    pub model: Model,
    pub tokenizer: Tokenizer,
    pub num_entities: usize,
    pub num_relations: usize,
}

pub fn encode(model: &Model, tokenizer: &Tokenizer, num_entities: usize, num_relations: usize) -> Vec<u8> {
    let c = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let u32s = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    u32s(&mut out, FORMAT_VERSION as usize);
    let flags = if c.use_ase { FLAG_USE_ASE } else { 0 } | if c.shared_encoders { FLAG_SHARED } else { 0 };
    for v in [
        num_entities,
        num_relations,
        c.struct_dim,
        c.text.layers,
        c.text.hidden,
        c.text.heads,
        c.text.max_len,
        c.text.vocab_size,
        c.text.ffn,
        c.ase.code() as usize,
        flags as usize,
    ] {
        u32s(&mut out, v);
    }
    out.extend_from_slice(&c.tau_init.to_le_bytes());
    u32s(&mut out, tokenizer.len());
    for t in tokenizer.tokens() {
        u32s(&mut out, t.len());
        out.extend_from_slice(t.as_bytes());
    }
    let store = model.store();
    u32s(&mut out, store.len());
    for (name, t) in store.iter() {
        u32s(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        u32s(&mut out, t.rows());
        u32s(&mut out, t.cols());
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Hex SHA-256 of a whole checkpoint file, as printed by `train`.
pub fn file_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save(
    path: &Path,
    model: &Model,
    tokenizer: &Tokenizer,
    num_entities: usize,
    num_relations: usize,
) -> Result<String> {
    let bytes = encode(model, tokenizer, num_entities, num_relations);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, &bytes).map_err(|e| CliError::io(path, e))?;
    Ok(file_digest(&bytes))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(CliError::Missing {
            artifact: "checkpoint",
            path: path.to_path_buf(),
        });
    }
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|message| CliError::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| "unexpected end of data".to_string())?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid UTF-8 string".to_string())
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
        return Err(format!("checksum error: file is truncated ({} bytes)", bytes.len()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err("checksum error: SHA-256 does not match the contents (truncated or corrupted)".into());
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        ));
    }
    let mut h = [0usize; 11];
    for v in &mut h {
        *v = r.u32()?;
    }
    let [num_entities, num_relations, struct_dim, layers, hidden, heads, max_len, vocab_size, ffn, ase, flags] = h;
    let ase = AseKind::from_code(ase as u32).ok_or_else(|| format!("unknown ASE code {ase}"))?;
    let tau_init = r.f64()?;
    let config = ModelConfig {
        struct_dim,
        ase,
        text: TextEncoderConfig {
            layers,
            hidden,
            heads,
            max_len,
            vocab_size,
            ffn,
        },
        use_ase: flags as u32 & FLAG_USE_ASE != 0,
        shared_encoders: flags as u32 & FLAG_SHARED != 0,
        tau_init,
    };
    let n_tokens = r.u32()?;
    let tokens = (0..n_tokens)
        .map(|_| r.string())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let tokenizer = Tokenizer::from_tokens(tokens).map_err(|e| e.to_string())?;
    if tokenizer.len() != vocab_size {
        return Err(format!(
            "vocabulary has {} tokens, header says {vocab_size}",
            tokenizer.len()
        ));
    }
    // the initializer only fixes shapes and order; every value is overwritten
    let mut model = Model::new(config, num_entities, num_relations, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| e.to_string())?;
    let n_params = r.u32()?;
    let ids: Vec<_> = model.store().ids().collect();
    if n_params != ids.len() {
        return Err(format!("{n_params} parameter blocks, model expects {}", ids.len()));
    }
    for id in ids {
        let name = r.string()?;
        let (rows, cols) = (r.u32()?, r.u32()?);
        let expected = model.store().name(id).to_string();
        let t = model.store().get(id);
        if name != expected || rows != t.rows() || cols != t.cols() {
            return Err(format!(
                "parameter {name:?} {rows}x{cols} does not match {expected:?} {}x{}",
                t.rows(),
                t.cols()
            ));
        }
        let raw = r.take(rows * cols * 8)?;
        let dst = model.store_mut().get_mut(id);
        for (x, chunk) in dst.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *x = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.pos != body.len() {
        return Err(format!("{} trailing bytes after the parameters", body.len() - r.pos));
    }
    Ok(Checkpoint {
        model,
        tokenizer,
        num_entities,
        num_relations,
    })
}

/// Checks a loaded checkpoint against the dataset and the run config,
/// naming both values on any mismatch.
pub fn check_compatible(
    path: &Path,
    ck: &Checkpoint,
    expected: &ModelConfig,
    num_entities: usize,
    num_relations: usize,
) -> Result<()> {
    let c = ck.model.config();
    let pairs = [
        ("entities", ck.num_entities, num_entities),
        ("relations", ck.num_relations, num_relations),
        ("struct_dim", c.struct_dim, expected.struct_dim),
        ("layers", c.text.layers, expected.text.layers),
        ("hidden", c.text.hidden, expected.text.hidden),
        ("heads", c.text.heads, expected.text.heads),
        ("max_len", c.text.max_len, expected.text.max_len),
        ("ffn", c.text.ffn, expected.text.ffn),
    ];
    for (what, found, want) in pairs {
        if found != want {
            return Err(dimension_error(path, what, found, want));
        }
    }
    if c.ase != expected.ase {
        return Err(CliError::Checkpoint {
            path: path.to_path_buf(),
            message: format!(
                "dimension mismatch: ase is {} in the checkpoint but {} in the config",
                c.ase.as_str(),
                expected.ase.as_str()
            ),
        });
    }
    Ok(())
}

fn dimension_error(path: &Path, what: &str, found: usize, want: usize) -> CliError {
    CliError::Checkpoint {
        path: PathBuf::from(path),
        message: format!("dimension mismatch: {what} is {found} in the checkpoint but {want} in the config"),
    }
}
