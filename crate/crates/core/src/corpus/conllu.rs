//! CoNLL-U reading and writing with coreference annotations carried in
//! document-level comment lines:
//!
//! ```text
//! # newdoc id = d1
//! # mentions = [[sent,start,end,head],...]
//! # chains = [[m_id,...],...]
//! ```
//!
//! Mention ids are list positions in `# mentions`; token indices there are
//! 0-based. Chains omitting a mention get it as a singleton.

use std::fmt::Write as _;

use super::{
    validate_document, ChainSet, CorpusError, Document, Location, Mention, ParseTree, Token,
};

const NEWDOC: &str = "# newdoc id =";
const MENTIONS: &str = "# mentions =";
const CHAINS: &str = "# chains =";

struct PendingToken {
    token: Token,
    line: usize,
}

#[derive(Default)]
struct DocBuilder {
    id: String,
    sentences: Vec<Vec<Token>>,
    trees: Vec<ParseTree>,
    mentions: Option<(String, usize)>,
    chains: Option<(String, usize)>,
    touched: bool,
}

impl DocBuilder {
    fn new(id: String) -> Self {
        Self {
            id,
            ..Self::default()
        }
    }

    fn close_sentence(&mut self, pending: &mut Vec<PendingToken>) -> Result<(), CorpusError> {
        if pending.is_empty() {
            return Ok(());
        }
        let si = self.sentences.len();
        let lines: Vec<usize> = pending.iter().map(|p| p.line).collect();
        let tokens: Vec<Token> = pending.drain(..).map(|p| p.token).collect();
        let tree =
            ParseTree::from_tokens(&self.id, si, &tokens).map_err(|e| attach_line(e, &lines))?;
        self.sentences.push(tokens);
        self.trees.push(tree);
        Ok(())
    }

    fn finish(self) -> Result<Document, CorpusError> {
        let mut mentions = Vec::new();
        if let Some((payload, line)) = &self.mentions {
            let spans: Vec<[usize; 4]> =
                serde_json::from_str(payload).map_err(|e| CorpusError::MalformedLine {
                    loc: Location::doc(&self.id).at_line(Some(*line)),
                    detail: format!("mentions payload: {e}"),
                })?;
            for (id, [sentence_index, start, end, head_token]) in spans.into_iter().enumerate() {
                let m = Mention {
                    id,
                    sentence_index,
                    start,
                    end,
                    head_token,
                };
                let len = self.sentences.get(sentence_index).map(Vec::len);
                let ok = len.is_some_and(|len| {
                    start <= end && end < len && (start..=end).contains(&head_token)
                });
                if !ok {
                    return Err(CorpusError::BadMentionSpan {
                        loc: Location {
                            doc_id: self.id.clone(),
                            sentence: Some(sentence_index),
                            line: Some(*line),
                        },
                        mention: id,
                    });
                }
                mentions.push(m);
            }
        }
        let gold_chains = match &self.chains {
            None => None,
            Some((payload, line)) => {
                let chains: Vec<Vec<usize>> =
                    serde_json::from_str(payload).map_err(|e| CorpusError::MalformedLine {
                        loc: Location::doc(&self.id).at_line(Some(*line)),
                        detail: format!("chains payload: {e}"),
                    })?;
                // Reject overlap before singleton filling can mask it.
                let raw = ChainSet { chains };
                let mut seen = std::collections::HashSet::new();
                for &m in raw.chains.iter().flatten() {
                    if m >= mentions.len() {
                        return Err(CorpusError::UnknownChainMention {
                            loc: Location::doc(&self.id).at_line(Some(*line)),
                            mention: m,
                        });
                    }
                    if !seen.insert(m) {
                        return Err(CorpusError::OverlappingChains {
                            loc: Location::doc(&self.id).at_line(Some(*line)),
                            mention: m,
                        });
                    }
                }
                Some(raw.with_singletons(0..mentions.len()))
            }
        };
        let doc = Document {
            id: self.id,
            sentences: self.sentences,
            trees: self.trees,
            mentions,
            gold_chains,
        };
        validate_document(&doc)?;
        Ok(doc)
    }
}

fn attach_line(err: CorpusError, lines: &[usize]) -> CorpusError {
    use CorpusError::*;
    let line_of = |t: usize| lines.get(t).copied();
    match err {
        DanglingHead { loc, token, head } => DanglingHead {
            loc: loc.at_line(line_of(token)),
            token,
            head,
        },
        SelfHead { loc, token } => SelfHead {
            loc: loc.at_line(line_of(token)),
            token,
        },
        CycleInTree { loc, token } => CycleInTree {
            loc: loc.at_line(line_of(token)),
            token,
        },
        EmptyDeprel { loc, token } => EmptyDeprel {
            loc: loc.at_line(line_of(token)),
            token,
        },
        MultipleRoots { loc } => MultipleRoots {
            loc: loc.at_line(lines.first().copied()),
        },
        MissingRoot { loc } => MissingRoot {
            loc: loc.at_line(lines.first().copied()),
        },
        other => other,
    }
}

fn comment_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.strip_prefix(key).map(str::trim)
}

/// Parses CoNLL-U text into validated documents.
///
/// HEAD values are converted to 0-based indices with `0` mapped to the root
/// sentinel. Multiword-token ranges (`1-2`) and empty nodes (`1.1`) are
/// skipped.
pub fn parse_conllu(text: &str) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut cur: Option<DocBuilder> = None;
    let mut pending: Vec<PendingToken> = Vec::new();

    let implicit_id = |n: usize| format!("doc{}", n + 1);

    for (ln0, raw) in text.lines().enumerate() {
        let line_no = ln0 + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if let Some(b) = cur.as_mut() {
                b.close_sentence(&mut pending)?;
            }
            continue;
        }
        if let Some(id) = comment_value(line, NEWDOC) {
            if let Some(mut b) = cur.take() {
                b.close_sentence(&mut pending)?;
                docs.push(b.finish()?);
            }
            cur = Some(DocBuilder::new(id.to_string()));
            continue;
        }
        let b = cur.get_or_insert_with(|| DocBuilder::new(implicit_id(docs.len())));
        b.touched = true;
        if line.starts_with('#') {
            let slot = if let Some(v) = comment_value(line, MENTIONS) {
                Some((&mut b.mentions, v))
            } else {
                comment_value(line, CHAINS).map(|v| (&mut b.chains, v))
            };
            if let Some((slot, v)) = slot {
                if slot.is_some() {
                    return Err(CorpusError::MalformedLine {
                        loc: Location::doc(&b.id).at_line(Some(line_no)),
                        detail: "duplicate coreference comment".into(),
                    });
                }
                *slot = Some((v.to_string(), line_no));
            }
            continue;
        }
        let sentence = b.sentences.len();
        let loc = || Location {
            doc_id: b.id.clone(),
            sentence: Some(sentence),
            line: Some(line_no),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(CorpusError::MalformedLine {
                loc: loc(),
                detail: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| CorpusError::MalformedLine {
            loc: loc(),
            detail: format!("bad token id {:?}", cols[0]),
        })?;
        if id != pending.len() + 1 {
            return Err(CorpusError::MalformedLine {
                loc: loc(),
                detail: format!("token id {id} out of sequence"),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| CorpusError::MalformedLine {
            loc: loc(),
            detail: format!("bad head {:?}", cols[6]),
        })?;
        let deprel = cols[7];
        if deprel.is_empty() || deprel == "_" {
            return Err(CorpusError::EmptyDeprel {
                loc: loc(),
                token: id - 1,
            });
        }
        let role = cols[9]
            .split('|')
            .find_map(|kv| kv.strip_prefix("Role="))
            .map(str::to_string);
        pending.push(PendingToken {
            token: Token {
                index: id - 1,
                surface: cols[1].to_string(),
                upos: cols[3].to_string(),
                head: head.checked_sub(1),
                deprel: deprel.to_string(),
                role,
            },
            line: line_no,
        });
    }
    if let Some(mut b) = cur.take() {
        b.close_sentence(&mut pending)?;
        if b.touched || !b.id.is_empty() {
            docs.push(b.finish()?);
        }
    }
    Ok(docs)
}

/// Writes a mention list in the `# mentions` payload layout.
pub(crate) fn mentions_payload(mentions: &[Mention]) -> String {
    let mut ms = mentions.to_vec();
    ms.sort_by_key(|m| m.id);
    let spans: Vec<[usize; 4]> = ms
        .iter()
        .map(|m| [m.sentence_index, m.start, m.end, m.head_token])
        .collect();
    serde_json::to_string(&spans).expect("infallible")
}

pub(crate) fn chains_payload(chains: &ChainSet) -> String {
    serde_json::to_string(&chains.chains).expect("infallible")
}

/// Serializes documents as CoNLL-U. `parse_conllu` of the result yields the
/// same documents, provided mention ids are `0..n` (the file format assigns
/// ids by position).
pub fn write_conllu(docs: &[Document]) -> String {
    let mut out = String::new();
    for doc in docs {
        let _ = writeln!(out, "{NEWDOC} {}", doc.id);
        let _ = writeln!(out, "{MENTIONS} {}", mentions_payload(&doc.mentions));
        if let Some(chains) = &doc.gold_chains {
            let _ = writeln!(out, "{CHAINS} {}", chains_payload(chains));
        }
        for sentence in &doc.sentences {
            for t in sentence {
                let head = t.head.map_or(0, |h| h + 1);
                let misc = t
                    .role
                    .as_ref()
                    .map_or_else(|| "_".to_string(), |r| format!("Role={r}"));
                let _ = writeln!(
                    out,
                    "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t{}",
                    t.index + 1,
                    t.surface,
                    t.upos,
                    head,
                    t.deprel,
                    misc
                );
            }
            out.push('\n');
        }
        if doc.sentences.is_empty() {
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAT: &str = "# newdoc id = cat\n\
# mentions = [[0,0,1,1]]\n\
1\tThe\tthe\tDET\t_\t_\t2\tdet\t_\t_\n\
2\tcat\tcat\tNOUN\t_\t_\t3\tnsubj\t_\tRole=ARG0\n\
3\tslept\tsleep\tVERB\t_\t_\t0\troot\t_\t_\n\
4\t.\t.\tPUNCT\t_\t_\t3\tpunct\t_\t_\n\n";

    #[test]
    fn empty_input() {
        assert!(parse_conllu("").unwrap().is_empty());
    }

    #[test]
    fn single_sentence_heads_are_zero_based() {
        let docs = parse_conllu(CAT).unwrap();
        assert_eq!(docs.len(), 1);
        let d = &docs[0];
        assert_eq!(d.id, "cat");
        assert_eq!(d.trees[0].root, 2);
        assert_eq!(d.sentences[0][0].head, Some(1));
        assert_eq!(d.sentences[0][2].head, None);
        assert_eq!(d.sentences[0][1].role.as_deref(), Some("ARG0"));
        assert_eq!(
            d.mentions[0],
            Mention {
                id: 0,
                sentence_index: 0,
                start: 0,
                end: 1,
                head_token: 1
            }
        );
        assert_eq!(d.gold_chains, None);
    }

    #[test]
    fn nine_columns_is_malformed() {
        let text = "# newdoc id = x\n1\ta\ta\tX\t_\t_\t0\troot\t_\n";
        match parse_conllu(text) {
            Err(CorpusError::MalformedLine { loc, .. }) => {
                assert_eq!(loc.line, Some(2));
                assert_eq!(loc.doc_id, "x");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tree_errors_carry_line_numbers() {
        let text = "# newdoc id = x\n\
1\ta\ta\tX\t_\t_\t0\troot\t_\t_\n\
2\tb\tb\tX\t_\t_\t9\tdep\t_\t_\n\n";
        match parse_conllu(text) {
            Err(CorpusError::DanglingHead { loc, token, head }) => {
                assert_eq!((loc.line, token, head), (Some(3), 1, 8));
                assert_eq!(loc.sentence, Some(0));
            }
            other => panic!("unexpected {other:?}"),
        }
        let cyc = "# newdoc id = y\n\
1\ta\ta\tX\t_\t_\t2\tdep\t_\t_\n\
2\tb\tb\tX\t_\t_\t1\tdep\t_\t_\n\
3\tc\tc\tX\t_\t_\t0\troot\t_\t_\n";
        assert!(matches!(
            parse_conllu(cyc),
            Err(CorpusError::CycleInTree { .. })
        ));
        let roots = "1\ta\ta\tX\t_\t_\t0\troot\t_\t_\n2\tb\tb\tX\t_\t_\t0\troot\t_\t_\n";
        assert!(matches!(
            parse_conllu(roots),
            Err(CorpusError::MultipleRoots { .. })
        ));
    }

    #[test]
    fn bad_mention_span_reports_comment_line() {
        let text = CAT.replace("[[0,0,1,1]]", "[[0,2,1,1]]");
        match parse_conllu(&text) {
            Err(CorpusError::BadMentionSpan { loc, mention }) => {
                assert_eq!((loc.line, mention), (Some(2), 0));
            }
            other => panic!("unexpected {other:?}"),
        }
        let cross = CAT.replace("[[0,0,1,1]]", "[[1,0,0,0]]");
        assert!(matches!(
            parse_conllu(&cross),
            Err(CorpusError::BadMentionSpan { .. })
        ));
    }

    #[test]
    fn chains_fill_singletons_and_reject_overlap() {
        let text = CAT.replace(
            "[[0,0,1,1]]",
            "[[0,0,1,1],[0,2,2,2],[0,3,3,3]]\n# chains = [[0,2]]",
        );
        let d = &parse_conllu(&text).unwrap()[0];
        assert_eq!(
            d.gold_chains.as_ref().unwrap().chains,
            vec![vec![0, 2], vec![1]]
        );
        let bad = CAT.replace(
            "[[0,0,1,1]]",
            "[[0,0,1,1],[0,2,2,2]]\n# chains = [[0,1],[1]]",
        );
        assert!(matches!(
            parse_conllu(&bad),
            Err(CorpusError::OverlappingChains { mention: 1, .. })
        ));
    }

    #[test]
    fn implicit_documents_and_multiword_lines() {
        let text = "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n1\tdo\tdo\tAUX\t_\t_\t0\troot\t_\t_\n2\tn't\tnot\tPART\t_\t_\t1\tadvmod\t_\t_\n";
        let docs = parse_conllu(text).unwrap();
        assert_eq!(docs[0].id, "doc1");
        assert_eq!(docs[0].sentences[0].len(), 2);
    }

    #[test]
    fn writer_round_trips() {
        let docs = parse_conllu(CAT).unwrap();
        let again = parse_conllu(&write_conllu(&docs)).unwrap();
        assert_eq!(docs, again);
    }
}
