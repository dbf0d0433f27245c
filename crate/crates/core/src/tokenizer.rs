//! Tokenizer abstraction used by packing, dedup statistics and evaluation.

use std::ops::Range;

use crate::error::{Error, Result};

pub type TokenId = u32;

/// The subset of tokenizer behaviour the pipeline depends on.
///
/// `encode_with_offsets` must return, for each token, the byte range of the
/// input text it was produced from. Ranges are ordered and non-overlapping.
pub trait Tokenizer: Send + Sync {
    fn encode_with_offsets(&self, text: &str) -> Result<Vec<(TokenId, Range<usize>)>>;

    fn decode(&self, tokens: &[TokenId]) -> Result<String>;

    fn eos_id(&self) -> TokenId;

    fn vocab_size(&self) -> usize;

    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        Ok(self.encode_with_offsets(text)?.into_iter().map(|(id, _)| id).collect())
    }

    /// Decodes what can be decoded; used on free-running model output.
    fn decode_lossy(&self, tokens: &[TokenId]) -> String {
        self.decode(tokens).unwrap_or_default()
    }

    fn name(&self) -> &str;
}

/// Byte-level tokenizer: one token per UTF-8 byte, eos = 256.
///
/// Lossless on any valid UTF-8 string, which makes it the reference tokenizer
/// for tests and the CLI default.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub const EOS: TokenId = 256;
}

impl Tokenizer for ByteTokenizer {
    fn encode_with_offsets(&self, text: &str) -> Result<Vec<(TokenId, Range<usize>)>> {
        Ok(text
            .bytes()
            .enumerate()
            .map(|(i, b)| (TokenId::from(b), i..i + 1))
            .collect())
    }

    fn decode(&self, tokens: &[TokenId]) -> Result<String> {
        let bytes = tokens
            .iter()
            .map(|&t| {
                u8::try_from(t).map_err(|_| Error::Tokenizer {
                    context: "byte decode".into(),
                    message: format!("token {t} is not a byte"),
                })
            })
            .collect::<Result<Vec<u8>>>()?;
        String::from_utf8(bytes).map_err(|e| Error::Tokenizer {
            context: "byte decode".into(),
            message: e.to_string(),
        })
    }

    fn decode_lossy(&self, tokens: &[TokenId]) -> String {
        let bytes: Vec<u8> = tokens.iter().filter_map(|&t| u8::try_from(t).ok()).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }

    fn eos_id(&self) -> TokenId {
        Self::EOS
    }

    fn vocab_size(&self) -> usize {
        257
    }

    fn name(&self) -> &str {
        "byte"
    }
}

/// Builds a tokenizer from its CLI spec string. Only `byte` is built in.
pub fn tokenizer_from_spec(spec: &str) -> Result<Box<dyn Tokenizer>> {
    match spec {
        "byte" => Ok(Box::new(ByteTokenizer)),
        other => Err(Error::Config(format!("unknown tokenizer `{other}`"))),
    }
}
