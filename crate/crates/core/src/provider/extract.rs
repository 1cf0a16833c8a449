use crate::language::Language;

/// A fenced block from a markdown response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FencedBlock {
    pub info: String,
    pub code: String,
}

/// Collects every terminated fenced block in `text`, in order.
///
/// Fences are runs of three or more backticks or tildes at the start of a
/// line; a block closes on a line holding only a fence of the same character
/// at least as long as the opener. An unterminated trailing block is dropped.
pub fn fenced_blocks(text: &str) -> Vec<FencedBlock> {
    let mut blocks = Vec::new();
    let mut open: Option<(char, usize, String, Vec<&str>)> = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        let fence_char = trimmed.chars().next().filter(|c| *c == '`' || *c == '~');
        let run = fence_char
            .map(|fc| trimmed.chars().take_while(|c| *c == fc).count())
            .unwrap_or(0);
        match open.as_mut() {
            None => {
                if run >= 3 {
                    let info = trimmed[run..].trim().to_string();
                    open = Some((fence_char.unwrap(), run, info, Vec::new()));
                }
            }
            Some((fc, len, _, body)) => {
                let closes = fence_char == Some(*fc) && run >= *len && trimmed[run..].trim().is_empty();
                if closes {
                    let (_, _, info, body) = open.take().unwrap();
                    blocks.push(FencedBlock {
                        info,
                        code: body.join("\n"),
                    });
                } else {
                    body.push(line);
                }
            }
        }
    }
    blocks
}

fn info_language(info: &str) -> Option<Language> {
    info.split(|c: char| c.is_whitespace() || c == ',' || c == '{')
        .next()
        .and_then(|tag| tag.parse().ok())
}

/// First block tagged with `language`, else the first block of any language.
pub fn extract_code_block(text: &str, language: Language) -> Option<String> {
    let blocks = fenced_blocks(text);
    let pick = blocks
        .iter()
        .find(|b| info_language(&b.info) == Some(language))
        .or_else(|| blocks.first())?;
    let code = pick.code.trim_end().to_string();
    if code.trim().is_empty() {
        None
    } else {
        Some(code)
    }
}

/// Alias used by ingestion where dataset answers wrap code in prose.
pub fn extract_code_block_any(text: &str, language: Language) -> Option<String> {
    extract_code_block(text, language)
}
