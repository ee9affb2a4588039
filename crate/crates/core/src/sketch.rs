//! Annotated proof sketches.
//!
//! Marker grammar:
//!
//! ```text
//! -- EVOLVE-BLOCK-START          (full line; trailing/leading blanks allowed)
//! ...editable lines...
//! -- EVOLVE-BLOCK-END
//! frozen text /- EVOLVE-VALUE -/ expr /- END-EVOLVE-VALUE -/ frozen text
//! ```
//!
//! Marker lines and inline marker comments belong to the surrounding frozen
//! regions, so concatenating region texts reproduces the input byte for byte.
//! At most one `EVOLVE-VALUE` pair is allowed per line and values may not
//! appear inside a block.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::digest::Digest;
use crate::lexical;

pub const BLOCK_START: &str = "-- EVOLVE-BLOCK-START";
pub const BLOCK_END: &str = "-- EVOLVE-BLOCK-END";
pub const VALUE_OPEN: &str = "/- EVOLVE-VALUE -/";
pub const VALUE_CLOSE: &str = "/- END-EVOLVE-VALUE -/";

/// Placeholder token used when none is configured.
pub const DEFAULT_PLACEHOLDER: &str = "sorry";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SketchError {
    #[error("unbalanced markers at line {line}: {detail}")]
    UnbalancedMarkers { line: usize, detail: String },
    #[error("nested markers at line {line}")]
    NestedMarkers { line: usize },
    #[error("more than one EVOLVE-VALUE marker pair on line {line}")]
    MultipleValuesOnLine { line: usize },
    #[error("search string is empty")]
    EmptySearch,
    #[error("search string not found in any editable region")]
    SearchNotFound,
    #[error("search string occurs {count} times in editable regions")]
    AmbiguousSearch { count: usize },
    #[error("search string only occurs in (or across) frozen text")]
    FrozenRegionTouched,
    #[error("cannot modify region {region}: {reason}")]
    SpliceOutsideEditable { region: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Frozen,
    EvolveBlock,
    EvolveValue,
}

impl RegionKind {
    pub fn is_editable(self) -> bool {
        !matches!(self, RegionKind::Frozen)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub kind: RegionKind,
    pub text: String,
}

/// A search-and-replace edit. The search string is never empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchReplaceEdit {
    search: String,
    replace: String,
}

impl SearchReplaceEdit {
    pub fn new(search: impl Into<String>, replace: impl Into<String>) -> Result<Self, SketchError> {
        let search = search.into();
        if search.is_empty() {
            return Err(SketchError::EmptySearch);
        }
        Ok(SearchReplaceEdit {
            search,
            replace: replace.into(),
        })
    }

    pub fn search(&self) -> &str {
        &self.search
    }

    pub fn replace(&self) -> &str {
        &self.replace
    }
}

/// Position of a placeholder token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SorrySite {
    pub region_index: usize,
    /// Byte offset within the region text.
    pub offset: usize,
    /// Byte offset within the rendered sketch.
    pub global_offset: usize,
}

/// A parsed sketch: ordered frozen and editable regions.
#[derive(Clone, PartialEq, Eq)]
pub struct ProofSketch {
    regions: Vec<Region>,
    source_digest: Digest,
}

impl fmt::Debug for ProofSketch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProofSketch")
            .field("regions", &self.regions.len())
            .field("source_digest", &self.source_digest)
            .finish()
    }
}

impl fmt::Display for ProofSketch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for region in &self.regions {
            f.write_str(&region.text)?;
        }
        Ok(())
    }
}

pub fn parse_sketch(text: &str) -> Result<ProofSketch, SketchError> {
    let mut regions = Vec::new();
    let mut frozen = String::new();
    let mut block: Option<(usize, String)> = None;

    for (idx, line) in text.split_inclusive('\n').enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed == BLOCK_START {
            if block.is_some() {
                return Err(SketchError::NestedMarkers { line: line_no });
            }
            frozen.push_str(line);
            regions.push(Region {
                kind: RegionKind::Frozen,
                text: std::mem::take(&mut frozen),
            });
            block = Some((line_no, String::new()));
            continue;
        }
        if trimmed == BLOCK_END {
            let Some((_, body)) = block.take() else {
                return Err(SketchError::UnbalancedMarkers {
                    line: line_no,
                    detail: "EVOLVE-BLOCK-END without a matching start".into(),
                });
            };
            regions.push(Region {
                kind: RegionKind::EvolveBlock,
                text: body,
            });
            frozen.push_str(line);
            continue;
        }
        let opens = line.matches(VALUE_OPEN).count();
        let closes = line.matches(VALUE_CLOSE).count();
        if let Some((_, body)) = block.as_mut() {
            if opens > 0 || closes > 0 {
                return Err(SketchError::NestedMarkers { line: line_no });
            }
            body.push_str(line);
            continue;
        }
        match (opens, closes) {
            (0, 0) => frozen.push_str(line),
            (1, 1) => {
                let open = line.find(VALUE_OPEN).unwrap();
                let close = line.find(VALUE_CLOSE).unwrap();
                let value_start = open + VALUE_OPEN.len();
                if close < value_start {
                    return Err(SketchError::UnbalancedMarkers {
                        line: line_no,
                        detail: "END-EVOLVE-VALUE before EVOLVE-VALUE".into(),
                    });
                }
                frozen.push_str(&line[..value_start]);
                regions.push(Region {
                    kind: RegionKind::Frozen,
                    text: std::mem::take(&mut frozen),
                });
                regions.push(Region {
                    kind: RegionKind::EvolveValue,
                    text: line[value_start..close].to_string(),
                });
                frozen.push_str(&line[close..]);
            }
            (o, c) if o > 1 || c > 1 => return Err(SketchError::MultipleValuesOnLine { line: line_no }),
            _ => {
                return Err(SketchError::UnbalancedMarkers {
                    line: line_no,
                    detail: "EVOLVE-VALUE markers must open and close on the same line".into(),
                })
            }
        }
    }
    if let Some((start_line, _)) = block {
        return Err(SketchError::UnbalancedMarkers {
            line: start_line,
            detail: "EVOLVE-BLOCK-START without a matching end".into(),
        });
    }
    regions.push(Region {
        kind: RegionKind::Frozen,
        text: frozen,
    });
    Ok(ProofSketch::from_regions(regions))
}

impl ProofSketch {
    fn from_regions(regions: Vec<Region>) -> Self {
        let source_digest = Digest::of_parts(regions.iter().map(|r| r.text.as_bytes()));
        ProofSketch { regions, source_digest }
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn source_digest(&self) -> Digest {
        self.source_digest
    }

    pub fn render(&self) -> String {
        self.to_string()
    }

    /// Byte range of each region within the rendered text.
    pub fn region_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.regions
            .iter()
            .map(|r| {
                let range = start..start + r.text.len();
                start = range.end;
                range
            })
            .collect()
    }

    pub fn editable_count(&self) -> usize {
        self.regions.iter().filter(|r| r.kind.is_editable()).count()
    }

    /// Concatenated frozen bytes.
    pub fn frozen_bytes(&self) -> Vec<u8> {
        self.regions
            .iter()
            .filter(|r| r.kind == RegionKind::Frozen)
            .flat_map(|r| r.text.bytes())
            .collect()
    }

    pub fn apply_edit(&self, edit: &SearchReplaceEdit) -> Result<ProofSketch, SketchError> {
        let rendered = self.render();
        let ranges = self.region_ranges();
        let needle = edit.search();

        let mut editable_hits: Vec<(usize, usize)> = Vec::new();
        let mut frozen_touches = 0usize;
        for start in overlapping_matches(&rendered, needle) {
            let end = start + needle.len();
            let region = ranges
                .iter()
                .position(|r| r.start <= start && start < r.end)
                .expect("match start lies inside some region");
            let inside = self.regions[region].kind.is_editable() && end <= ranges[region].end;
            if inside {
                editable_hits.push((region, start - ranges[region].start));
            } else {
                frozen_touches += 1;
            }
        }

        match editable_hits.as_slice() {
            [] if frozen_touches > 0 => Err(SketchError::FrozenRegionTouched),
            [] => Err(SketchError::SearchNotFound),
            [(region, offset)] => {
                let range = *offset..*offset + needle.len();
                self.replace_span(*region, range, edit.replace())
            }
            hits => Err(SketchError::AmbiguousSearch { count: hits.len() }),
        }
    }

    /// Replaces `range` (bytes, relative to the region) of an editable region.
    pub fn replace_span(
        &self,
        region: usize,
        range: Range<usize>,
        replacement: &str,
    ) -> Result<ProofSketch, SketchError> {
        let Some(target) = self.regions.get(region) else {
            return Err(SketchError::SpliceOutsideEditable {
                region,
                reason: "no such region".into(),
            });
        };
        if !target.kind.is_editable() {
            return Err(SketchError::SpliceOutsideEditable {
                region,
                reason: "region is frozen".into(),
            });
        }
        if target.kind == RegionKind::EvolveValue && replacement.contains('\n') {
            return Err(SketchError::SpliceOutsideEditable {
                region,
                reason: "EVOLVE-VALUE regions are single-line".into(),
            });
        }
        if let Some(marker) = [BLOCK_START, BLOCK_END, VALUE_OPEN, VALUE_CLOSE]
            .into_iter()
            .find(|m| replacement.contains(m))
        {
            return Err(SketchError::SpliceOutsideEditable {
                region,
                reason: format!("replacement contains the marker `{marker}`"),
            });
        }
        let mut regions = self.regions.clone();
        let text = &mut regions[region].text;
        text.replace_range(range, replacement);
        // keep the closing block marker on its own line
        if target.kind == RegionKind::EvolveBlock && !text.is_empty() && !text.ends_with('\n') {
            text.push('\n');
        }
        Ok(ProofSketch::from_regions(regions))
    }

    /// Inserts `text` at the start of the first `EVOLVE-BLOCK`. Returns `None`
    /// when the sketch has no block.
    pub fn prepend_to_first_block(&self, text: &str) -> Option<ProofSketch> {
        let idx = self.regions.iter().position(|r| r.kind == RegionKind::EvolveBlock)?;
        let mut regions = self.regions.clone();
        regions[idx].text.insert_str(0, text);
        Some(ProofSketch::from_regions(regions))
    }

    pub fn find_sorries(&self) -> Vec<SorrySite> {
        self.find_placeholders(DEFAULT_PLACEHOLDER)
    }

    /// Standalone occurrences of `token` in code (comments and strings are
    /// skipped), in document order.
    pub fn find_placeholders(&self, token: &str) -> Vec<SorrySite> {
        let rendered = self.render();
        let ranges = self.region_ranges();
        lexical::find_code_tokens(&rendered, token)
            .into_iter()
            .map(|global| {
                let region_index = ranges
                    .iter()
                    .position(|r| r.start <= global && global < r.end)
                    .expect("token lies inside some region");
                SorrySite {
                    region_index,
                    offset: global - ranges[region_index].start,
                    global_offset: global,
                }
            })
            .collect()
    }

    /// Digest over the frozen bytes only.
    pub fn protected_digest(&self) -> Digest {
        Digest::of_parts(
            self.regions
                .iter()
                .filter(|r| r.kind == RegionKind::Frozen)
                .map(|r| r.text.as_bytes()),
        )
    }
}

fn overlapping_matches(haystack: &str, needle: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(rel) = haystack[from..].find(needle) {
        let at = from + rel;
        out.push(at);
        from = at + haystack[at..].chars().next().map_or(1, char::len_utf8);
    }
    out
}

impl Serialize for ProofSketch {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for ProofSketch {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_sketch(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG1_LIKE: &str = "import Toy\n\
-- EVOLVE-BLOCK-START\n\
lemma helper : 1+1 = 2 := sorry\n\
-- EVOLVE-BLOCK-END\n\
def step := /- EVOLVE-VALUE -/ 3 /- END-EVOLVE-VALUE -/\n\
lemma target : 2+2 = 4 := sorry\n";

    #[test]
    fn no_markers_is_single_frozen_region() {
        let s = parse_sketch("lemma a : 1 = 1 := eval\n").unwrap();
        assert_eq!(s.regions().len(), 1);
        assert_eq!(s.regions()[0].kind, RegionKind::Frozen);
    }

    #[test]
    fn block_and_value_give_five_regions() {
        let s = parse_sketch(FIG1_LIKE).unwrap();
        let kinds: Vec<_> = s.regions().iter().map(|r| r.kind).collect();
        assert_eq!(
            kinds,
            vec![
                RegionKind::Frozen,
                RegionKind::EvolveBlock,
                RegionKind::Frozen,
                RegionKind::EvolveValue,
                RegionKind::Frozen
            ]
        );
        assert_eq!(s.regions()[1].text, "lemma helper : 1+1 = 2 := sorry\n");
        assert_eq!(s.regions()[3].text, " 3 ");
        assert_eq!(s.render(), FIG1_LIKE);
    }

    #[test]
    fn marker_errors() {
        assert!(matches!(
            parse_sketch("-- EVOLVE-BLOCK-START\nx\n"),
            Err(SketchError::UnbalancedMarkers { line: 1, .. })
        ));
        assert!(matches!(
            parse_sketch("-- EVOLVE-BLOCK-END\n"),
            Err(SketchError::UnbalancedMarkers { .. })
        ));
        assert!(matches!(
            parse_sketch("-- EVOLVE-BLOCK-START\n-- EVOLVE-BLOCK-START\n-- EVOLVE-BLOCK-END\n"),
            Err(SketchError::NestedMarkers { line: 2 })
        ));
        assert!(matches!(
            parse_sketch("-- EVOLVE-BLOCK-START\nx /- EVOLVE-VALUE -/ 1 /- END-EVOLVE-VALUE -/\n-- EVOLVE-BLOCK-END\n"),
            Err(SketchError::NestedMarkers { line: 2 })
        ));
        assert!(matches!(
            parse_sketch("a /- EVOLVE-VALUE -/ 1\n"),
            Err(SketchError::UnbalancedMarkers { .. })
        ));
        assert!(matches!(
            parse_sketch("a /- END-EVOLVE-VALUE -/ 1 /- EVOLVE-VALUE -/\n"),
            Err(SketchError::UnbalancedMarkers { .. })
        ));
        assert!(matches!(
            parse_sketch("/- EVOLVE-VALUE -/ 1 /- END-EVOLVE-VALUE -/ /- EVOLVE-VALUE -/ 2 /- END-EVOLVE-VALUE -/\n"),
            Err(SketchError::MultipleValuesOnLine { line: 1 })
        ));
    }

    #[test]
    fn edit_inside_block_keeps_frozen_bytes() {
        let s = parse_sketch(FIG1_LIKE).unwrap();
        let edit = SearchReplaceEdit::new("2 := sorry\n", "2 := eval\n").unwrap();
        let out = s.apply_edit(&edit).unwrap();
        assert_eq!(out.frozen_bytes(), s.frozen_bytes());
        assert!(out.render().contains("lemma helper : 1+1 = 2 := eval"));
    }

    #[test]
    fn edit_errors() {
        let s = parse_sketch(FIG1_LIKE).unwrap();
        let target = SearchReplaceEdit::new("target", "t2").unwrap();
        assert_eq!(s.apply_edit(&target), Err(SketchError::FrozenRegionTouched));
        let missing = SearchReplaceEdit::new("nothing here", "x").unwrap();
        assert_eq!(s.apply_edit(&missing), Err(SketchError::SearchNotFound));
        assert_eq!(SearchReplaceEdit::new("", "x"), Err(SketchError::EmptySearch));

        let two = parse_sketch(
            "-- EVOLVE-BLOCK-START\nfoo\n-- EVOLVE-BLOCK-END\n-- EVOLVE-BLOCK-START\nfoo\n-- EVOLVE-BLOCK-END\n",
        )
        .unwrap();
        let foo = SearchReplaceEdit::new("foo", "bar").unwrap();
        assert_eq!(two.apply_edit(&foo), Err(SketchError::AmbiguousSearch { count: 2 }));
    }

    #[test]
    fn edit_spanning_a_marker_is_frozen() {
        let s = parse_sketch(FIG1_LIKE).unwrap();
        let across = SearchReplaceEdit::new("sorry\n-- EVOLVE", "x").unwrap();
        assert_eq!(s.apply_edit(&across), Err(SketchError::FrozenRegionTouched));
    }

    #[test]
    fn sorry_sites() {
        let s = parse_sketch("lemma a : 1 = 1 := sorry\n").unwrap();
        assert_eq!(s.find_sorries().len(), 1);
        let s = parse_sketch("lemma a : 1 = 1 := sorryAx\n").unwrap();
        assert!(s.find_sorries().is_empty());
        let s = parse_sketch(FIG1_LIKE).unwrap();
        let sites = s.find_sorries();
        assert_eq!(sites.len(), 2);
        assert_eq!(sites[0].region_index, 1);
        assert_eq!(sites[1].region_index, 4);
        let text = s.render();
        for site in sites {
            assert_eq!(&text[site.global_offset..site.global_offset + 5], "sorry");
            assert_eq!(
                &s.regions()[site.region_index].text[site.offset..site.offset + 5],
                "sorry"
            );
        }
    }

    #[test]
    fn three_helpers_three_sites() {
        let body: String = (0..3).map(|i| format!("lemma h{i} : {i} = {i} := sorry\n")).collect();
        let text = format!("-- head\n{BLOCK_START}\n{body}{BLOCK_END}\n");
        let s = parse_sketch(&text).unwrap();
        let sites = s.find_sorries();
        // independent scan: count lines ending with ":= sorry"
        let expected = text.lines().filter(|l| l.ends_with(":= sorry")).count();
        assert_eq!(sites.len(), expected);
        assert!(sites.windows(2).all(|w| w[0].global_offset < w[1].global_offset));
    }

    #[test]
    fn protected_digest_ignores_editable_text() {
        let s = parse_sketch(FIG1_LIKE).unwrap();
        let edited = s
            .apply_edit(&SearchReplaceEdit::new("helper", "helper2").unwrap())
            .unwrap();
        assert_eq!(s.protected_digest(), edited.protected_digest());
        assert_ne!(s.source_digest(), edited.source_digest());

        let tweaked = parse_sketch(&FIG1_LIKE.replace("import Toy", "import Toz")).unwrap();
        assert_ne!(s.protected_digest(), tweaked.protected_digest());

        let empty = parse_sketch("").unwrap();
        assert_eq!(empty.protected_digest(), Digest::of(b""));
    }

    #[test]
    fn lesson_goes_into_first_block() {
        let s = parse_sketch(FIG1_LIKE).unwrap();
        let with = s.prepend_to_first_block("-- LESSON: x\n").unwrap();
        assert_eq!(with.frozen_bytes(), s.frozen_bytes());
        assert!(with.regions()[1].text.starts_with("-- LESSON: x\n"));
        assert!(parse_sketch("plain\n").unwrap().prepend_to_first_block("x").is_none());
    }
}
