//! One JSON object per line: `{"text", "label", "source", "spurious_tag"}`.
//!
//! Text is whitespace-tokenized on load and joined with single spaces on
//! save. Corpus-level seed and metadata go to a `<path>.meta.json` sidecar
//! when present.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusMeta, Example, Source, SpuriousTag};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Line {
    text: String,
    label: u8,
    source: Source,
    spurious_tag: SpuriousTag,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    seed: u64,
    meta: CorpusMeta,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn to_jsonl_string(corpus: &Corpus) -> String {
    let mut out = String::new();
    for ex in &corpus.examples {
        let line = Line {
            text: ex.text(),
            label: ex.label,
            source: ex.source,
            spurious_tag: ex.spurious_tag,
        };
        out.push_str(&serde_json::to_string(&line).expect("plain struct serializes"));
        out.push('\n');
    }
    out
}

pub fn save_jsonl(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(to_jsonl_string(corpus).as_bytes())
        .map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&Sidecar {
        seed: corpus.seed,
        meta: corpus.meta.clone(),
    })?;
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let line: Line = serde_json::from_str(raw).map_err(|e| parse_err(e.to_string()))?;
        if line.label > 1 {
            return Err(parse_err(format!("label {} is not 0 or 1", line.label)));
        }
        let tokens: Vec<String> = line.text.split_whitespace().map(String::from).collect();
        if tokens.is_empty() {
            return Err(parse_err("empty text".into()));
        }
        examples.push(Example {
            tokens,
            label: line.label,
            source: line.source,
            spurious_tag: line.spurious_tag,
        });
    }
    let side = sidecar_path(path);
    let (seed, meta) = if side.exists() {
        let s = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sc: Sidecar = serde_json::from_str(&s)?;
        (sc.seed, sc.meta)
    } else {
        (0, CorpusMeta::default())
    };
    Ok(Corpus { examples, seed, meta })
}
