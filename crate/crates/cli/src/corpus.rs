use std::fs;
use std::path::Path;

use sqd_core::{SourceSentence, TokenId, Vocab};

use crate::error::{CliError, CliResult};

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read corpus {}: {e}", path.display())))
}

fn parse_sentence(vocab: &Vocab, text: &str, path: &Path, line_no: usize) -> CliResult<Vec<TokenId>> {
    vocab.parse_line(text).map_err(|e| CliError::input(format!("{}:{line_no}: {e}", path.display())))
}

fn source(tokens: Vec<TokenId>, path: &Path, line_no: usize) -> CliResult<SourceSentence> {
    SourceSentence::new(tokens).map_err(|_| CliError::input(format!("{}:{line_no}: empty sentence", path.display())))
}

/// One source sentence per line, tokens as strings or ids.
pub fn read_sources(path: &Path, vocab: &Vocab) -> CliResult<Vec<SourceSentence>> {
    read(path)?
        .lines()
        .enumerate()
        .map(|(i, line)| source(parse_sentence(vocab, line, path, i + 1)?, path, i + 1))
        .collect()
}

/// Tab-separated source and reference per line.
pub fn read_parallel(path: &Path, vocab: &Vocab) -> CliResult<Vec<(SourceSentence, Vec<TokenId>)>> {
    read(path)?
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let (src, tgt) = line.split_once('\t').ok_or_else(|| {
                CliError::input(format!("{}:{}: expected `source<TAB>target`", path.display(), i + 1))
            })?;
            let src = source(parse_sentence(vocab, src, path, i + 1)?, path, i + 1)?;
            Ok((src, parse_sentence(vocab, tgt, path, i + 1)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        fs::write(&path, text).unwrap();
        (dir, path)
    }

    #[test]
    fn mixed_ids_and_strings() {
        let vocab = Vocab::synthetic(5).unwrap();
        let (_d, path) = write("w2 3\n4\n");
        let s = read_sources(&path, &vocab).unwrap();
        assert_eq!(s[0].tokens(), &[2, 3]);
        assert_eq!(s[1].tokens(), &[4]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let vocab = Vocab::synthetic(5).unwrap();
        let (_d, path) = write("2\nbogus\n");
        let err = read_sources(&path, &vocab).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("bogus"), "{err}");
        let (_d, path) = write("2\n\n");
        assert!(read_sources(&path, &vocab).unwrap_err().to_string().contains(":2: empty"));
    }

    #[test]
    fn parallel_needs_tab() {
        let vocab = Vocab::synthetic(5).unwrap();
        let (_d, path) = write("2 3\t4 4\n");
        let p = read_parallel(&path, &vocab).unwrap();
        assert_eq!(p[0].1, vec![4, 4]);
        let (_d, path) = write("2 3 4\n");
        assert!(read_parallel(&path, &vocab).is_err());
    }
}
