use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One pixel in each of three images, reference first.
pub type MatchTriple = [[f64; 2]; 3];

/// Matches between a reference image and two others.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchBlock {
    pub names: [String; 3],
    pub matches: Vec<MatchTriple>,
}

/// Reads blocks of the form
///
/// ```text
/// triplet ref.png i.png j.png
/// ref_x ref_y i_x i_y j_x j_y
/// ...
/// ```
///
/// `dims` gives the size of a named image; coordinates must lie in
/// `[0, w-1] x [0, h-1]`.
pub fn read_matches(path: &Path, dims: impl Fn(&str) -> Option<(usize, usize)>) -> Result<Vec<MatchBlock>> {
    let text = std::fs::read_to_string(path)?;
    parse_matches(&text, path, dims)
}

pub fn parse_matches(text: &str, path: &Path, dims: impl Fn(&str) -> Option<(usize, usize)>) -> Result<Vec<MatchBlock>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut blocks: Vec<MatchBlock> = Vec::new();
    let mut sizes = [(0usize, 0usize); 3];
    for (i, raw) in text.lines().enumerate() {
        let no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        if line.starts_with("triplet") {
            fields.next();
            let names: Vec<&str> = fields.collect();
            if names.len() != 3 {
                return Err(err(no, format!("triplet header needs 3 image names, found {}", names.len())));
            }
            for (k, n) in names.iter().enumerate() {
                sizes[k] = dims(n).ok_or_else(|| err(no, format!("unknown image {n:?}")))?;
            }
            blocks.push(MatchBlock {
                names: [names[0].to_string(), names[1].to_string(), names[2].to_string()],
                matches: Vec::new(),
            });
            continue;
        }
        let Some(block) = blocks.last_mut() else {
            return Err(err(no, "match line before any triplet header".into()));
        };
        let vals: Vec<f64> = fields
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(no, format!("{e}")))?;
        if vals.len() != 6 {
            return Err(err(no, format!("expected 6 numbers, found {}", vals.len())));
        }
        let mut t = [[0.0; 2]; 3];
        for k in 0..3 {
            let (x, y) = (vals[2 * k], vals[2 * k + 1]);
            let (w, h) = sizes[k];
            if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
                return Err(err(no, format!("({x}, {y}) is outside {} ({w}x{h})", block.names[k])));
            }
            t[k] = [x, y];
        }
        block.matches.push(t);
    }
    Ok(blocks)
}

pub fn write_matches(path: &Path, blocks: &[MatchBlock]) -> Result<()> {
    let mut s = String::new();
    for b in blocks {
        writeln!(s, "triplet {} {} {}", b.names[0], b.names[1], b.names[2]).unwrap();
        for t in &b.matches {
            writeln!(s, "{} {} {} {} {} {}", t[0][0], t[0][1], t[1][0], t[1][1], t[2][0], t[2][1]).unwrap();
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}
