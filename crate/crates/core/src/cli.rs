//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or parse error, 4 numerical failure.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bpe::{corpus_word_freqs, encode_word, learn_bpe, load_merges, parse_merges_header, save_merges, MergeTable, VocabSize};
use crate::error::{CheckpointError, Error, Result};
use crate::eval::{eval_mlm, export_embeddings};
use crate::frontend::{g2p, load_lexicon, normalize_text, Lexicon};
use crate::masking::{MaskMode, MaskPolicy};
use crate::model::{load_checkpoint, save_checkpoint, EncoderParams, ModelConfig, Preset};
use crate::train::{loss_csv, train, PreparedCorpus, TrainConfig};
use crate::vocab::PhonemeVocab;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "mpbert", version, about = "Mixed phoneme / sup-phoneme BERT toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn sup-phoneme merge rules from a text corpus.
    LearnBpe {
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// 3000, 30000, tiny, or an exact token count.
        #[arg(long, default_value = "3000")]
        vocab_size: VocabSize,
        /// Keep ARPAbet stress digits as distinct phonemes.
        #[arg(long)]
        keep_stress: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print sup-phoneme tokens and spans as JSON lines.
    Encode {
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        merges: PathBuf,
        #[arg(long, required_unless_present = "corpus")]
        text: Option<String>,
        #[arg(long, conflicts_with = "text")]
        corpus: Option<PathBuf>,
    },
    /// Pre-train an encoder and write a checkpoint plus loss curve.
    Pretrain {
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        merges: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss curve path; defaults to `<out>.loss.csv`.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[arg(long, default_value = "tiny")]
        preset: Preset,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 5e-4)]
        lr: f64,
        #[command(flatten)]
        mask: MaskArgs,
    },
    /// Masked-token accuracy of a checkpoint on a corpus.
    EvalMlm {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        merges: PathBuf,
        /// Report path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Require the checkpoint to match this preset.
        #[arg(long)]
        preset: Option<Preset>,
        /// Score the held-out split only.
        #[arg(long)]
        held_out: bool,
        #[command(flatten)]
        mask: MaskArgs,
    },
    /// Unmasked hidden states for one sentence.
    Export {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        merges: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        preset: Option<Preset>,
    },
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long, default_value_t = 0.15)]
    pub mask_ratio: f64,
    /// Whole-word masking (default).
    #[arg(long, overrides_with = "no_wwm")]
    pub wwm: bool,
    #[arg(long, overrides_with = "wwm")]
    pub no_wwm: bool,
    #[arg(long, default_value = "mixed")]
    pub mask_mode: MaskMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl MaskArgs {
    pub fn policy(&self) -> MaskPolicy {
        MaskPolicy {
            ratio: self.mask_ratio,
            whole_word: !self.no_wwm,
            mode: self.mask_mode,
            seed: self.seed,
            ..Default::default()
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        _ if e.is_numerical() => EXIT_NUMERICAL,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    open(path)?.lines().map(|l| l.map_err(Error::from)).collect()
}

/// Loads a merges file, taking the phoneme inventory from its header.
fn read_merges(path: &Path) -> Result<MergeTable> {
    let text = fs::read_to_string(path)?;
    let first = text.lines().next().unwrap_or_default();
    let header = parse_merges_header(first)?;
    load_merges(text.as_bytes(), &PhonemeVocab::arpabet(header.strip_stress))
}

fn read_lexicon(path: &Path, vocab: &PhonemeVocab) -> Result<Lexicon> {
    load_lexicon(open(path)?, vocab)
}

fn read_checkpoint(path: &Path, preset: Option<Preset>, table: &MergeTable) -> Result<(EncoderParams, ModelConfig)> {
    let bytes = fs::read(path)?;
    let expected = preset.map(ModelConfig::preset);
    let (params, cfg) = load_checkpoint(&bytes, expected.as_ref())?;
    if params.phoneme_vocab() != table.phoneme_vocab().len() || params.sup_vocab() != table.len() {
        return Err(CheckpointError::Config(format!(
            "checkpoint vocabularies ({}, {}) do not match the merges file ({}, {})",
            params.phoneme_vocab(),
            params.sup_vocab(),
            table.phoneme_vocab().len(),
            table.len()
        ))
        .into());
    }
    Ok((params, cfg))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EncodedWord<'a> {
    word: &'a str,
    tokens: Vec<String>,
    spans: Vec<(usize, usize)>,
}

#[derive(Serialize)]
struct EncodedLine<'a> {
    text: &'a str,
    tokens: Vec<String>,
    words: Vec<EncodedWord<'a>>,
}

/// Per word tokens; spans are positions in the BOS-prefixed phoneme stream.
fn encode_line(out: &mut dyn Write, text: &str, lexicon: &Lexicon, table: &MergeTable) -> Result<()> {
    let norm = normalize_text(text)?;
    let prons = g2p(&norm, lexicon, table.phoneme_vocab());
    let mut pos = 1;
    let mut words = Vec::with_capacity(prons.len());
    for p in &prons {
        let mut w = EncodedWord {
            word: &p.surface,
            tokens: Vec::new(),
            spans: Vec::new(),
        };
        if p.is_oov {
            w.tokens.push(table.surface(crate::vocab::SupId::UNK).unwrap_or_default());
            w.spans.push((pos, pos + 1));
            pos += 1;
        } else {
            for tok in encode_word(&p.phonemes, table) {
                w.tokens.push(table.surface(tok.id).unwrap_or_default());
                w.spans.push((pos, pos + tok.span_len));
                pos += tok.span_len;
            }
        }
        words.push(w);
    }
    let line = EncodedLine {
        text,
        tokens: words.iter().flat_map(|w| w.tokens.iter().cloned()).collect(),
        words,
    };
    writeln!(out, "{}", serde_json::to_string(&line).expect("serializable"))?;
    Ok(())
}

fn execute(cmd: Command, stdout: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::LearnBpe {
            lexicon,
            corpus,
            vocab_size,
            keep_stress,
            out,
        } => {
            let vocab = PhonemeVocab::arpabet(!keep_stress);
            let lex = read_lexicon(&lexicon, &vocab)?;
            let lines = read_lines(&corpus)?;
            let freqs = corpus_word_freqs(lines.iter().map(String::as_str), &lex, &vocab);
            if freqs.is_empty() {
                return Err(Error::EmptyInput);
            }
            let target = vocab_size.resolve(vocab.len());
            let table = learn_bpe(&freqs, vocab, target)?;
            let mut buf = Vec::new();
            save_merges(&table, &mut buf)?;
            write_file(&out, &buf)
        }
        Command::Encode {
            lexicon,
            merges,
            text,
            corpus,
        } => {
            let table = read_merges(&merges)?;
            let lex = read_lexicon(&lexicon, table.phoneme_vocab())?;
            match (text, corpus) {
                (Some(t), _) => encode_line(stdout, &t, &lex, &table),
                (None, Some(path)) => {
                    for line in read_lines(&path)? {
                        if !line.trim().is_empty() {
                            encode_line(stdout, &line, &lex, &table)?;
                        }
                    }
                    Ok(())
                }
                (None, None) => unreachable!("clap requires --text or --corpus"),
            }
        }
        Command::Pretrain {
            lexicon,
            corpus,
            merges,
            out,
            loss_csv: csv_path,
            preset,
            steps,
            batch_size,
            lr,
            mask,
        } => {
            let table = read_merges(&merges)?;
            let lex = read_lexicon(&lexicon, table.phoneme_vocab())?;
            let cfg = ModelConfig::preset(preset);
            let lines = read_lines(&corpus)?;
            let prepared = PreparedCorpus::from_lines(lines.iter().map(String::as_str), &lex, &table, cfg.max_len)?;
            let mut tc = TrainConfig::with_steps(steps);
            tc.batch_size = batch_size;
            tc.peak_lr = lr;
            tc.seed = mask.seed;
            let outcome = train(&prepared, &table, &cfg, &tc, &mask.policy())?;
            let mut buf = Vec::new();
            save_checkpoint(&outcome.params, &cfg, &mut buf)?;
            write_file(&out, &buf)?;
            let csv_path = csv_path.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".loss.csv");
                p.into()
            });
            write_file(&csv_path, loss_csv(&outcome.curve).as_bytes())
        }
        Command::EvalMlm {
            ckpt,
            lexicon,
            corpus,
            merges,
            out,
            preset,
            held_out,
            mask,
        } => {
            let table = read_merges(&merges)?;
            let lex = read_lexicon(&lexicon, table.phoneme_vocab())?;
            let (params, cfg) = read_checkpoint(&ckpt, preset, &table)?;
            let lines = read_lines(&corpus)?;
            let prepared = PreparedCorpus::from_lines(lines.iter().map(String::as_str), &lex, &table, cfg.max_len)?;
            let seqs = if held_out {
                prepared.held_out
            } else {
                let mut all = prepared.train;
                all.extend(prepared.held_out);
                all
            };
            let report = eval_mlm(&params, &cfg, &seqs, &table, &mask.policy())?;
            let mut json = report.to_json();
            json.push('\n');
            match out {
                Some(path) => write_file(&path, json.as_bytes()),
                None => Ok(stdout.write_all(json.as_bytes())?),
            }
        }
        Command::Export {
            ckpt,
            lexicon,
            merges,
            text,
            out,
            preset,
        } => {
            let table = read_merges(&merges)?;
            let lex = read_lexicon(&lexicon, table.phoneme_vocab())?;
            let (params, cfg) = read_checkpoint(&ckpt, preset, &table)?;
            let export = export_embeddings(&params, &cfg, &text, &lex, &table)?;
            let mut json = serde_json::to_string(&export).expect("serializable");
            json.push('\n');
            write_file(&out, json.as_bytes())
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(rendered.as_bytes())
            } else {
                stdout.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}
