//! Character embedding space: per-symbol nearest-neighbor substitution
//! tables used by the character-level attacks.
//!
//! The default table maps ASCII letters, digits and a few punctuation
//! marks to visually confusable codepoints. A learned space can be
//! loaded from a file instead; both are capped at 20 neighbors per
//! symbol.

use crate::alphabet::{Alphabet, SymbolId};
use crate::error::{Error, Result};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Hard cap on the neighbor list length.
pub const MAX_NEIGHBORS: usize = 20;

/// Neighbor lists keyed by character, before binding to an alphabet.
#[derive(Debug, Clone)]
pub struct CesTable {
    entries: Vec<(char, Vec<(char, f32)>)>,
}

impl CesTable {
    /// Validates invariants: no self-neighbor, descending scores, and
    /// truncates anything longer than [`MAX_NEIGHBORS`].
    pub fn new(mut entries: Vec<(char, Vec<(char, f32)>)>) -> Result<Self> {
        for (sym, neighbors) in &mut entries {
            if neighbors.iter().any(|(n, _)| n == sym) {
                return Err(Error::validation(format!(
                    "symbol {sym:?} lists itself as a neighbor"
                )));
            }
            if neighbors.windows(2).any(|w| w[0].1 < w[1].1) {
                return Err(Error::validation(format!(
                    "neighbor list for {sym:?} not sorted by descending similarity"
                )));
            }
            neighbors.truncate(MAX_NEIGHBORS);
        }
        Ok(CesTable { entries })
    }

    pub fn entries(&self) -> &[(char, Vec<(char, f32)>)] {
        &self.entries
    }

    /// Every character mentioned anywhere in the table (for alphabet
    /// construction).
    pub fn all_chars(&self) -> impl Iterator<Item = char> + '_ {
        self.entries
            .iter()
            .flat_map(|(s, ns)| std::iter::once(*s).chain(ns.iter().map(|(n, _)| *n)))
    }

    /// Loads `symbol<TAB>n1,s1;n2,s2;...` lines (UTF-8).
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let reader = BufReader::new(file);
        let mut entries = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg,
            };
            let (sym_str, rest) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("missing tab separator".into()))?;
            let mut sym_chars = sym_str.chars();
            let sym = sym_chars
                .next()
                .ok_or_else(|| parse_err("empty symbol".into()))?;
            if sym_chars.next().is_some() {
                return Err(parse_err(format!("symbol {sym_str:?} is not a single char")));
            }
            let mut neighbors = Vec::new();
            for item in rest.split(';').filter(|s| !s.is_empty()) {
                let (n_str, score_str) = item
                    .split_once(',')
                    .ok_or_else(|| parse_err(format!("bad neighbor entry {item:?}")))?;
                let mut n_chars = n_str.chars();
                let n = n_chars
                    .next()
                    .ok_or_else(|| parse_err("empty neighbor".into()))?;
                if n_chars.next().is_some() {
                    return Err(parse_err(format!("neighbor {n_str:?} is not a single char")));
                }
                let score: f32 = score_str
                    .parse()
                    .map_err(|_| parse_err(format!("bad score {score_str:?}")))?;
                neighbors.push((n, score));
            }
            entries.push((sym, neighbors));
        }
        CesTable::new(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (sym, neighbors) in &self.entries {
            out.push(*sym);
            out.push('\t');
            for (i, (n, s)) in neighbors.iter().enumerate() {
                if i > 0 {
                    out.push(';');
                }
                out.push(*n);
                out.push(',');
                out.push_str(&format!("{s}"));
            }
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(out.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// The shipped visual-confusable table.
///
/// Scores are synthetic descending ranks; a learned space can replace
/// this via [`CesTable::load`].
pub fn default_table() -> CesTable {
    fn row(sym: char, neighbors: &str) -> (char, Vec<(char, f32)>) {
        let ns = neighbors
            .chars()
            .enumerate()
            .map(|(i, c)| (c, 0.98 - 0.03 * i as f32))
            .collect();
        (sym, ns)
    }
    let entries = vec![
        row('a', "àáâãäåɑǎ"),
        row('b', "ḃḅɓƅ"),
        row('c', "çćĉċč"),
        row('d', "ďđḋɗ"),
        row('e', "èéêëēėę"),
        row('f', "ƒḟ"),
        row('g', "ĝğġģ"),
        row('h', "ĥħḣḥ"),
        row('i', "ìíîïīı"),
        row('j', "ĵǰɉ"),
        row('k', "ķƙḳ"),
        row('l', "1ĺļľłɫ"),
        row('m', "ḿṁṃɱ"),
        row('n', "ñńņňṅ"),
        row('o', "0òóôõöøȯ"),
        row('p', "ƥṕṗ"),
        row('q', "ʠɋ"),
        row('r', "ŕŗřṙ"),
        row('s', "śŝşšṡ"),
        row('t', "ţťŧṫ"),
        row('u', "ùúûüūůű"),
        row('v', "ṽṿⱱ"),
        row('w', "ŵẁẃẅ"),
        row('x', "ẋẍ"),
        row('y', "ýÿŷẏ"),
        row('z', "źżž"),
        row('0', "oòö"),
        row('1', "lìí"),
        row('2', "ƨ"),
        row('3', "ʒз"),
        row('5', "ƽ"),
        row('6', "б"),
        row('8', "ȣ"),
        row('9', "ɡ"),
        row('!', "ǃ¡"),
        row('?', "¿ʔ"),
        row('#', "♯"),
        row('$', "Ꞩ"),
        row('%', "‰"),
    ];
    CesTable::new(entries).expect("default table satisfies invariants")
}

/// A CES bound to a concrete alphabet: neighbor lists over symbol ids.
#[derive(Debug, Clone)]
pub struct Ces {
    neighbors: Vec<Vec<(SymbolId, f32)>>,
}

impl Ces {
    /// Binds a char-level table to an alphabet. Table rows whose symbol
    /// is absent from the alphabet are dropped; a neighbor absent from
    /// the alphabet is an error (the alphabet must cover the space).
    pub fn bind(table: &CesTable, alphabet: &Alphabet) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); alphabet.len()];
        for (sym, ns) in table.entries() {
            let Ok(sid) = alphabet.id_of(*sym) else {
                continue;
            };
            let mut bound = Vec::with_capacity(ns.len());
            for (n, score) in ns {
                let nid = alphabet.id_of(*n)?;
                bound.push((nid, *score));
            }
            neighbors[sid as usize] = bound;
        }
        Ok(Ces { neighbors })
    }

    pub fn neighbors(&self, sym: SymbolId) -> &[(SymbolId, f32)] {
        self.neighbors
            .get(sym as usize)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn has_neighbors(&self, sym: SymbolId) -> bool {
        !self.neighbors(sym).is_empty()
    }

    /// True when `replacement` is a listed neighbor of `original`.
    pub fn is_neighbor(&self, original: SymbolId, replacement: SymbolId) -> bool {
        self.neighbors(original)
            .iter()
            .any(|&(n, _)| n == replacement)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_invariants() {
        let t = default_table();
        for (sym, ns) in t.entries() {
            assert!(!ns.is_empty(), "{sym:?} has no neighbors");
            assert!(ns.len() <= MAX_NEIGHBORS);
            assert!(ns.iter().all(|(n, _)| n != sym));
            assert!(ns.windows(2).all(|w| w[0].1 >= w[1].1));
        }
    }

    #[test]
    fn self_neighbor_rejected() {
        let r = CesTable::new(vec![('a', vec![('a', 0.9)])]);
        assert!(r.is_err());
    }

    #[test]
    fn unsorted_rejected_and_long_lists_truncated() {
        assert!(CesTable::new(vec![('a', vec![('b', 0.1), ('c', 0.9)])]).is_err());
        let long: Vec<(char, f32)> = (0..30)
            .map(|i| (char::from_u32(0x100 + i).unwrap(), 1.0 - i as f32 * 0.01))
            .collect();
        let t = CesTable::new(vec![('a', long)]).unwrap();
        assert_eq!(t.entries()[0].1.len(), MAX_NEIGHBORS);
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join("mmrdet_ces_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ces.tsv");
        let t = default_table();
        t.save(&path).unwrap();
        let loaded = CesTable::load(&path).unwrap();
        assert_eq!(t.entries().len(), loaded.entries().len());
        for ((s1, n1), (s2, n2)) in t.entries().iter().zip(loaded.entries()) {
            assert_eq!(s1, s2);
            assert_eq!(n1.len(), n2.len());
            for ((c1, v1), (c2, v2)) in n1.iter().zip(n2) {
                assert_eq!(c1, c2);
                assert!((v1 - v2).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn binding_covers_default_alphabet() {
        let t = default_table();
        let a = Alphabet::ascii_with_extensions(t.all_chars());
        let ces = Ces::bind(&t, &a).unwrap();
        let a_id = a.id_of('a').unwrap();
        assert!(ces.has_neighbors(a_id));
        let first = ces.neighbors(a_id)[0].0;
        assert_eq!(a.char_of(first), Some('à'));
        assert!(ces.is_neighbor(a_id, first));
        assert!(!ces.is_neighbor(first, a_id)); // asymmetric by table
    }

    #[test]
    fn load_rejects_malformed_line_with_line_number() {
        let dir = std::env::temp_dir().join("mmrdet_ces_test2");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.tsv");
        std::fs::write(&path, "a\tb,0.9\nno-tab-here\n").unwrap();
        match CesTable::load(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
