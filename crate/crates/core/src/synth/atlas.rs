//! Procedurally drawn glyph bitmaps standing in for font characters.
//!
//! Three structural kinds are produced: square-ish connected glyphs,
//! square-ish glyphs made of two separate components (mostly side by side,
//! with blank columns between them, as in many CJK characters) and narrow
//! latin-like glyphs.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster::count_components;

pub const FAMILY_CJK: &str = "cjk-like";
pub const FAMILY_LATIN: &str = "latin-like";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glyph {
    pub id: u32,
    pub width: usize,
    pub height: usize,
    /// `height × width`, row-major, 0/1.
    pub bitmap: Vec<u8>,
    pub family: String,
}

impl Glyph {
    pub fn components(&self) -> usize {
        count_components(&self.bitmap, self.height, self.width)
    }

    pub fn is_disconnected(&self) -> bool {
        self.components() >= 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlyphAtlas {
    pub line_height: usize,
    pub glyphs: Vec<Glyph>,
}

impl GlyphAtlas {
    pub fn glyph(&self, id: u32) -> Option<&Glyph> {
        self.glyphs.iter().find(|g| g.id == id)
    }

    pub fn ids(&self) -> Vec<u32> {
        self.glyphs.iter().map(|g| g.id).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for g in &self.glyphs {
            if !ids.insert(g.id) {
                return Err(Error::Data(format!("duplicate glyph id {}", g.id)));
            }
            if g.width == 0 || g.height == 0 || g.height > self.line_height {
                return Err(Error::Data(format!(
                    "glyph {} is {}x{}, line height {}",
                    g.id, g.height, g.width, self.line_height
                )));
            }
            if g.bitmap.len() != g.width * g.height || !g.bitmap.iter().any(|&v| v != 0) {
                return Err(Error::Data(format!("glyph {} has an invalid bitmap", g.id)));
            }
        }
        Ok(())
    }

    /// Text serialization (`GLYPHATLAS 1 <H>` header, then one block per
    /// glyph).
    pub fn to_text(&self) -> String {
        let mut s = format!("GLYPHATLAS 1 {}\n", self.line_height);
        for g in &self.glyphs {
            let _ = writeln!(s, "glyph {} {} {} {}", g.id, g.width, g.height, g.family);
            for row in g.bitmap.chunks(g.width) {
                s.extend(row.iter().map(|&v| if v != 0 { '1' } else { '0' }));
                s.push('\n');
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, m: String| Error::Data(format!("atlas line {line}: {m}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (ln, header) = lines.next().ok_or_else(|| bad(1, "empty atlas".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let line_height = match parts.as_slice() {
            ["GLYPHATLAS", "1", h] => h.parse().map_err(|_| bad(ln, format!("bad height {h:?}")))?,
            _ => return Err(bad(ln, "expected `GLYPHATLAS 1 <H>`".into())),
        };
        let mut glyphs = Vec::new();
        while let Some((ln, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let (id, width, height, family) = match f.as_slice() {
                ["glyph", id, w, h, fam] => {
                    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(ln, format!("bad number {s:?}")));
                    (num(id)? as u32, num(w)?, num(h)?, fam.to_string())
                }
                _ => return Err(bad(ln, "expected `glyph <id> <width> <height> <family>`".into())),
            };
            let mut bitmap = Vec::with_capacity(width * height);
            for _ in 0..height {
                let (ln, row) = lines
                    .next()
                    .ok_or_else(|| bad(ln, format!("glyph {id} is missing rows")))?;
                let row = row.trim();
                if row.len() != width || row.bytes().any(|b| b != b'0' && b != b'1') {
                    return Err(bad(ln, format!("glyph {id} row must be {width} 0/1 characters")));
                }
                bitmap.extend(row.bytes().map(|b| b - b'0'));
            }
            glyphs.push(Glyph {
                id,
                width,
                height,
                bitmap,
                family,
            });
        }
        let atlas = Self { line_height, glyphs };
        atlas.validate()?;
        Ok(atlas)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Hex SHA-256 of the text serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A working canvas for drawing strokes.
struct Canvas {
    h: usize,
    w: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn new(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            px: vec![0; h * w],
        }
    }

    fn fill(&mut self, y0: usize, y1: usize, x0: usize, x1: usize) {
        for y in y0..=y1.min(self.h - 1) {
            for x in x0..=x1.min(self.w - 1) {
                self.px[y * self.w + x] = 1;
            }
        }
    }

    /// Crops to the ink bounding box.
    fn crop(self) -> (usize, usize, Vec<u8>) {
        let rows: Vec<usize> = (0..self.h)
            .filter(|&y| self.px[y * self.w..(y + 1) * self.w].iter().any(|&v| v != 0))
            .collect();
        let cols: Vec<usize> = (0..self.w)
            .filter(|&x| (0..self.h).any(|y| self.px[y * self.w + x] != 0))
            .collect();
        let (y0, y1) = (rows[0], *rows.last().unwrap());
        let (x0, x1) = (cols[0], *cols.last().unwrap());
        let mut out = Vec::with_capacity((y1 - y0 + 1) * (x1 - x0 + 1));
        for y in y0..=y1 {
            out.extend_from_slice(&self.px[y * self.w + x0..=y * self.w + x1]);
        }
        (y1 - y0 + 1, x1 - x0 + 1, out)
    }
}

/// One connected shape: a vertical stem, bars crossing it, and optional
/// secondary stems hanging off a bar. Every stroke touches an earlier one.
fn connected_shape(h: usize, w: usize, rng: &mut ChaCha8Rng) -> (usize, usize, Vec<u8>) {
    // strokes of 4+ px survive one erosion followed by the heaviest blur
    let t = if w >= 10 && h >= 12 {
        rng.random_range(4..=5)
    } else {
        4.min(w)
    };
    let mut c = Canvas::new(h, w);
    let stem_x = rng.random_range(0..=w - t);
    let top = rng.random_range(0..=h / 5);
    let bottom = rng.random_range(h - 1 - h / 5..h);
    c.fill(top, bottom, stem_x, stem_x + t - 1);

    let n_bars = rng.random_range(1..=3usize);
    let mut bars = Vec::new();
    for i in 0..n_bars {
        let y = rng.random_range(top..=bottom + 1 - t);
        // the first bar spans the full width so the glyph keeps its size
        let (x0, x1) = if i == 0 {
            (0, w - 1)
        } else {
            (rng.random_range(0..=stem_x), rng.random_range(stem_x + t - 1..w))
        };
        c.fill(y, y + t - 1, x0, x1);
        bars.push((y, x0, x1));
    }
    let extra = if w >= 12 { rng.random_range(0..=2) } else { 0 };
    for _ in 0..extra {
        let (by, bx0, bx1) = bars[rng.random_range(0..bars.len())];
        if bx1 + 1 < bx0 + t {
            continue;
        }
        let x = rng.random_range(bx0..=bx1 + 1 - t);
        let (y0, y1) = if rng.random_bool(0.5) {
            (rng.random_range(top..=by), by + t - 1)
        } else {
            (by, rng.random_range(by..=bottom))
        };
        c.fill(y0, y1, x, x + t - 1);
    }
    c.crop()
}

fn place(dst: &mut Canvas, y0: usize, x0: usize, (h, w, px): &(usize, usize, Vec<u8>)) {
    for y in 0..*h {
        for x in 0..*w {
            if px[y * w + x] != 0 {
                dst.px[(y0 + y) * dst.w + x0 + x] = 1;
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Kind {
    Square,
    SideBySide,
    Stacked,
    Narrow,
}

fn draw(kind: Kind, rng: &mut ChaCha8Rng, line_height: usize) -> (usize, usize, Vec<u8>, &'static str) {
    // glyph sizes scale with the line height (48 px lines)
    let s = |v: usize| (v * line_height / 48).max(2);
    match kind {
        Kind::Square => {
            let h = rng.random_range(s(22)..=s(30));
            let w = rng.random_range(s(18)..=s(28));
            let (h, w, px) = connected_shape(h, w, rng);
            (h, w, px, FAMILY_CJK)
        }
        Kind::SideBySide => {
            let h = rng.random_range(s(22)..=s(30));
            let gap = rng.random_range(3..=5);
            let wl = rng.random_range(s(6)..=s(11));
            let wr = rng.random_range(s(8)..=s(14));
            let left = connected_shape(rng.random_range(h * 2 / 3..=h), wl, rng);
            let right = connected_shape(rng.random_range(h * 2 / 3..=h), wr, rng);
            let mut c = Canvas::new(h, left.1 + gap + right.1);
            place(&mut c, rng.random_range(0..=h - left.0), 0, &left);
            place(&mut c, rng.random_range(0..=h - right.0), left.1 + gap, &right);
            let (h, w, px) = c.crop();
            (h, w, px, FAMILY_CJK)
        }
        Kind::Stacked => {
            let w = rng.random_range(s(18)..=s(26));
            let gap = rng.random_range(3..=4);
            let top = connected_shape(rng.random_range(s(8)..=s(12)), rng.random_range(w / 2..=w), rng);
            let bottom = connected_shape(rng.random_range(s(10)..=s(15)), w, rng);
            let mut c = Canvas::new(top.0 + gap + bottom.0, w);
            place(&mut c, 0, rng.random_range(0..=w - top.1), &top);
            place(&mut c, top.0 + gap, 0, &bottom);
            let (h, w, px) = c.crop();
            (h, w, px, FAMILY_CJK)
        }
        Kind::Narrow => {
            let h = rng.random_range(s(16)..=s(30));
            let w = rng.random_range(6..=(line_height / 3).clamp(6, 14));
            let (h, w, px) = connected_shape(h, w, rng);
            (h, w, px, FAMILY_LATIN)
        }
    }
}

/// Generates `glyph_count` distinct glyphs for a `line_height`-pixel line:
/// 40% disconnected (three in four of them side by side), 30% narrow, the
/// rest square-ish.
pub fn make_toy_atlas(seed: u64, glyph_count: usize, line_height: usize) -> Result<GlyphAtlas> {
    if glyph_count < 8 {
        return Err(Error::Config(format!(
            "atlas needs at least 8 glyphs, asked for {glyph_count}"
        )));
    }
    if line_height < 24 {
        return Err(Error::Config(format!(
            "line height {line_height} too small for the atlas"
        )));
    }
    let n_disc = (glyph_count * 2).div_ceil(5);
    let n_narrow = (glyph_count * 3).div_ceil(10);
    let mut kinds = Vec::with_capacity(glyph_count);
    for i in 0..n_disc {
        kinds.push(if i % 4 == 3 { Kind::Stacked } else { Kind::SideBySide });
    }
    kinds.extend(std::iter::repeat_n(Kind::Narrow, n_narrow));
    kinds.extend(std::iter::repeat_n(Kind::Square, glyph_count - n_disc - n_narrow));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut glyphs = Vec::with_capacity(glyph_count);
    // interleave kinds so ids do not encode structure
    let order = {
        let mut o: Vec<usize> = (0..glyph_count).collect();
        rand::seq::SliceRandom::shuffle(o.as_mut_slice(), &mut rng);
        o
    };
    for (id, &k) in order.iter().enumerate() {
        let kind = kinds[k];
        let glyph = loop {
            let (height, width, bitmap, family) = draw(kind, &mut rng, line_height);
            let disconnected = count_components(&bitmap, height, width) >= 2;
            let wanted = matches!(kind, Kind::SideBySide | Kind::Stacked);
            if disconnected != wanted || !seen.insert((height, width, bitmap.clone())) {
                continue;
            }
            break Glyph {
                id: id as u32,
                width,
                height,
                bitmap,
                family: family.to_string(),
            };
        };
        glyphs.push(glyph);
    }
    let atlas = GlyphAtlas { line_height, glyphs };
    atlas.validate()?;
    Ok(atlas)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atlas_is_deterministic() {
        let a = make_toy_atlas(5, 16, 48).unwrap();
        let b = make_toy_atlas(5, 16, 48).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        assert_ne!(a.to_text(), make_toy_atlas(6, 16, 48).unwrap().to_text());
    }

    #[test]
    fn atlas_structure_quotas() {
        let atlas = make_toy_atlas(11, 32, 48).unwrap();
        let narrow = atlas
            .glyphs
            .iter()
            .filter(|g| g.width <= 16 && g.family == FAMILY_LATIN)
            .count();
        let disc = atlas.glyphs.iter().filter(|g| g.is_disconnected()).count();
        assert!(narrow >= 8, "{narrow}");
        assert!(disc >= 8, "{disc}");
        assert!(atlas.glyphs.iter().all(|g| g.height <= 48 && g.width >= 4));
        let distinct: HashSet<_> = atlas
            .glyphs
            .iter()
            .map(|g| (g.width, g.height, g.bitmap.clone()))
            .collect();
        assert_eq!(distinct.len(), 32);
    }

    #[test]
    fn glyph_bitmaps_are_tight() {
        let atlas = make_toy_atlas(3, 20, 48).unwrap();
        for g in &atlas.glyphs {
            let col = |x: usize| (0..g.height).any(|y| g.bitmap[y * g.width + x] != 0);
            let row = |y: usize| g.bitmap[y * g.width..(y + 1) * g.width].iter().any(|&v| v != 0);
            assert!(
                col(0) && col(g.width - 1) && row(0) && row(g.height - 1),
                "glyph {}",
                g.id
            );
        }
    }

    #[test]
    fn too_few_glyphs_is_a_config_error() {
        assert!(matches!(make_toy_atlas(0, 7, 48), Err(Error::Config(_))));
    }

    #[test]
    fn text_round_trip_and_errors() {
        let atlas = make_toy_atlas(2, 8, 48).unwrap();
        let back = GlyphAtlas::from_text(&atlas.to_text()).unwrap();
        assert_eq!(back, atlas);
        assert_eq!(back.hash(), atlas.hash());
        assert!(GlyphAtlas::from_text("GLYPHATLAS 2 48\n").is_err());
        assert!(GlyphAtlas::from_text("GLYPHATLAS 1 48\nglyph 0 2 1 x\n1\n").is_err());
        assert!(GlyphAtlas::from_text("GLYPHATLAS 1 48\nglyph 0 1 1 x\n1\nglyph 0 1 1 x\n1\n").is_err());
    }
}
