//! Reading and writing label grids.
//!
//! The text `catgrid` format is a header line followed by the payload:
//!
//! ```text
//! <ndim> <extent>... <k> [<value_0> ... <value_{k-1}>]
//! <payload: ndim-major whitespace-separated integers, -1 = masked>
//! ```
//!
//! Without an alphabet the payload holds labels `0..k` directly. With one,
//! payload values are looked up in it and `value_i` becomes label `i`.
//! Lines starting with `#` are ignored. Files are written with one grid row
//! per line and a blank line between the planes of a volume.
//!
//! PNG input is 8-bit grayscale or 8-bit palette (indices are used as
//! values). Distinct values are re-indexed densely in ascending order unless
//! an alphabet is given. A companion `<name>.mask.png` (nonzero = valid) is
//! picked up when present.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::LabelGrid;

pub const MASKED: i64 = -1;

/// A grid together with the file value of each label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedGrid {
    pub grid: LabelGrid,
    /// `alphabet[label]` is the value used in the file.
    pub alphabet: Vec<i64>,
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

/// Whitespace-separated tokens with 1-based line and column.
fn tokens(text: &str) -> impl Iterator<Item = (usize, usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with('#'))
        .flat_map(|(ln, line)| {
            let mut out = Vec::new();
            let mut start = None;
            for (i, ch) in line
                .char_indices()
                .chain(std::iter::once((line.len(), ' ')))
            {
                match (ch.is_whitespace(), start) {
                    (false, None) => start = Some(i),
                    (true, Some(s)) => {
                        out.push((ln + 1, s + 1, &line[s..i]));
                        start = None;
                    }
                    _ => {}
                }
            }
            out
        })
}

fn int(tok: (usize, usize, &str)) -> Result<i64> {
    tok.2.parse::<i64>().map_err(|_| {
        parse_err(
            tok.0,
            tok.1,
            format!("expected an integer, found `{}`", tok.2),
        )
    })
}

pub fn parse_catgrid(text: &str) -> Result<LoadedGrid> {
    let header_line = text
        .lines()
        .enumerate()
        .find(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, _)| i + 1)
        .ok_or_else(|| parse_err(1, 1, "missing header"))?;
    let mut header = Vec::new();
    let mut payload = Vec::new();
    for tok in tokens(text) {
        if tok.0 == header_line {
            header.push(tok);
        } else {
            payload.push(tok);
        }
    }

    let ndim = int(header[0])?;
    if ndim != 2 && ndim != 3 {
        return Err(parse_err(
            header[0].0,
            header[0].1,
            format!("axis count must be 2 or 3, got {ndim}"),
        ));
    }
    let ndim = ndim as usize;
    if header.len() < ndim + 2 {
        let last = header.last().unwrap();
        return Err(parse_err(
            last.0,
            last.1 + last.2.len(),
            "header needs extents and k",
        ));
    }
    let mut dims = Vec::with_capacity(ndim);
    for &tok in &header[1..=ndim] {
        let d = int(tok)?;
        if d < 1 {
            return Err(parse_err(
                tok.0,
                tok.1,
                format!("extent must be >= 1, got {d}"),
            ));
        }
        dims.push(d as usize);
    }
    let k_tok = header[ndim + 1];
    let k = int(k_tok)?;
    if !(2..=u32::MAX as i64).contains(&k) {
        return Err(parse_err(
            k_tok.0,
            k_tok.1,
            format!("class count must be >= 2, got {k}"),
        ));
    }
    let alpha_toks = &header[ndim + 2..];
    let alphabet: Vec<i64> = if alpha_toks.is_empty() {
        (0..k).collect()
    } else {
        if alpha_toks.len() as i64 != k {
            return Err(Error::Alphabet(format!(
                "header declares k = {k} but lists {} alphabet values",
                alpha_toks.len()
            )));
        }
        let a = alpha_toks
            .iter()
            .map(|&t| int(t))
            .collect::<Result<Vec<_>>>()?;
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != a.len() || sorted[0] < 0 {
            return Err(Error::Alphabet(format!(
                "alphabet {a:?} must be distinct non-negative values"
            )));
        }
        a
    };

    let n: usize = dims.iter().product();
    if payload.len() != n {
        return Err(Error::Shape(format!(
            "payload has {} values, extents {dims:?} need {n}",
            payload.len()
        )));
    }
    let mut labels = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for tok in payload {
        let v = int(tok)?;
        if v == MASKED {
            labels.push(0);
            mask.push(false);
            continue;
        }
        let label = alphabet.iter().position(|&a| a == v).ok_or_else(|| {
            Error::Alphabet(format!(
                "value {v} at line {}, column {} is not in the alphabet",
                tok.0, tok.1
            ))
        })?;
        labels.push(label as u32);
        mask.push(true);
    }
    let grid = LabelGrid::with_mask(dims, labels, mask, k as u32)?;
    Ok(LoadedGrid { grid, alphabet })
}

pub fn load_catgrid(path: impl AsRef<Path>) -> Result<LoadedGrid> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_catgrid(&text)
}

/// Canonical text encoding; `alphabet` maps labels to written values.
pub fn format_catgrid(g: &LabelGrid, alphabet: Option<&[i64]>) -> Result<String> {
    if let Some(a) = alphabet {
        if a.len() != g.k() as usize {
            return Err(Error::Alphabet(format!(
                "{} alphabet values for k = {}",
                a.len(),
                g.k()
            )));
        }
    }
    let mut out = String::new();
    let mut header: Vec<String> = vec![g.ndim().to_string()];
    header.extend(g.dims().iter().map(|d| d.to_string()));
    header.push(g.k().to_string());
    if let Some(a) = alphabet {
        header.extend(a.iter().map(|v| v.to_string()));
    }
    out.push_str(&header.join(" "));
    out.push('\n');
    let [planes, rows, cols] = g.shape3();
    for p in 0..planes {
        if p > 0 {
            out.push('\n');
        }
        for r in 0..rows {
            let row: Vec<String> = (0..cols)
                .map(|c| {
                    let i = (p * rows + r) * cols + c;
                    if !g.is_valid(i) {
                        MASKED.to_string()
                    } else {
                        let l = g.labels()[i];
                        alphabet.map_or(l as i64, |a| a[l as usize]).to_string()
                    }
                })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn save_catgrid(g: &LabelGrid, path: impl AsRef<Path>) -> Result<()> {
    save_catgrid_with_alphabet(g, None, path)
}

pub fn save_catgrid_with_alphabet(
    g: &LabelGrid,
    alphabet: Option<&[i64]>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let text = format_catgrid(g, alphabet)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Re-express several grids over the sorted union of their alphabets, so
/// equal file values get equal labels and every grid has the same `k`.
pub fn unify_alphabets(grids: Vec<LoadedGrid>) -> Result<Vec<LoadedGrid>> {
    let mut union: Vec<i64> = grids
        .iter()
        .flat_map(|g| g.alphabet.iter().copied())
        .collect();
    union.sort_unstable();
    union.dedup();
    let k = union.len() as u32;
    grids
        .into_iter()
        .map(|g| {
            let map: Vec<u32> = g
                .alphabet
                .iter()
                .map(|v| union.binary_search(v).unwrap() as u32)
                .collect();
            let labels = g.grid.labels().iter().map(|&l| map[l as usize]).collect();
            let grid = match g.grid.mask() {
                Some(m) => LabelGrid::with_mask(g.grid.dims().to_vec(), labels, m.to_vec(), k)?,
                None => LabelGrid::new(g.grid.dims().to_vec(), labels, k)?,
            };
            Ok(LoadedGrid {
                grid,
                alphabet: union.clone(),
            })
        })
        .collect()
}

/// `<dir>/<stem>.mask.png` for `<dir>/<stem>.png`.
pub fn mask_path_for(path: &Path) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.mask.png"))
}

struct Gray8 {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

fn read_gray8(path: &Path) -> Result<Gray8> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let bad = |e: png::DecodingError| Error::UnsupportedFormat(format!("{}: {e}", path.display()));
    let mut reader = decoder.read_info().map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::UnsupportedFormat(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    if info.bit_depth != png::BitDepth::Eight
        || !matches!(
            info.color_type,
            png::ColorType::Grayscale | png::ColorType::Indexed
        )
    {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {:?} at {:?} bits; expected 8-bit grayscale or palette",
            path.display(),
            info.color_type,
            info.bit_depth
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut pixels = Vec::with_capacity(width * height);
    for row in buf.chunks(info.line_size).take(height) {
        pixels.extend_from_slice(&row[..width]);
    }
    Ok(Gray8 {
        width,
        height,
        pixels,
    })
}

/// Load a 2D label image, with its companion mask if one exists.
pub fn load_png_labels(path: impl AsRef<Path>, alphabet: Option<&[u8]>) -> Result<LoadedGrid> {
    let path = path.as_ref();
    let mask = mask_path_for(path);
    load_png_labels_with_mask(path, mask.exists().then_some(mask.as_path()), alphabet)
}

pub fn load_png_labels_with_mask(
    path: impl AsRef<Path>,
    mask_path: Option<&Path>,
    alphabet: Option<&[u8]>,
) -> Result<LoadedGrid> {
    let img = read_gray8(path.as_ref())?;
    let mask = match mask_path {
        Some(mp) => {
            let m = read_gray8(mp)?;
            if (m.width, m.height) != (img.width, img.height) {
                return Err(Error::Shape(format!(
                    "mask is {}×{}, image is {}×{}",
                    m.height, m.width, img.height, img.width
                )));
            }
            Some(m.pixels.iter().map(|&v| v != 0).collect::<Vec<bool>>())
        }
        None => None,
    };
    let valid = |i: usize| mask.as_ref().is_none_or(|m| m[i]);

    let alphabet: Vec<u8> = match alphabet {
        Some(a) => {
            let mut s = a.to_vec();
            s.sort_unstable();
            s.dedup();
            if s.len() != a.len() || a.len() < 2 {
                return Err(Error::Alphabet(format!(
                    "alphabet {a:?} needs at least 2 distinct values"
                )));
            }
            a.to_vec()
        }
        None => {
            let mut seen = [false; 256];
            for (i, &v) in img.pixels.iter().enumerate() {
                if valid(i) {
                    seen[v as usize] = true;
                }
            }
            let mut a: Vec<u8> = (0..=255u8).filter(|&v| seen[v as usize]).collect();
            // a single-valued image still needs two classes
            if a.len() < 2 {
                let extra = if a.first() == Some(&0) { 255 } else { 0 };
                a.push(extra);
                a.sort_unstable();
            }
            a
        }
    };
    let mut lut = [u32::MAX; 256];
    for (label, &v) in alphabet.iter().enumerate() {
        lut[v as usize] = label as u32;
    }
    let mut labels = Vec::with_capacity(img.pixels.len());
    for (i, &v) in img.pixels.iter().enumerate() {
        if !valid(i) {
            labels.push(0);
        } else if lut[v as usize] == u32::MAX {
            return Err(Error::Alphabet(format!(
                "pixel value {v} is not in the alphabet {alphabet:?}"
            )));
        } else {
            labels.push(lut[v as usize]);
        }
    }
    let dims = vec![img.height, img.width];
    let k = alphabet.len() as u32;
    let grid = match mask {
        Some(m) => LabelGrid::with_mask(dims, labels, m, k)?,
        None => LabelGrid::new(dims, labels, k)?,
    };
    Ok(LoadedGrid {
        grid,
        alphabet: alphabet.into_iter().map(i64::from).collect(),
    })
}

fn write_gray8(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let bad = |e: png::EncodingError| Error::UnsupportedFormat(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(bad)?;
    writer.write_image_data(pixels).map_err(bad)?;
    writer.finish().map_err(bad)
}

/// Write a 2D grid as 8-bit grayscale; masked grids also get `<name>.mask.png`.
///
/// Labels are written as `alphabet[label]` (the label itself by default).
pub fn save_png_labels(
    g: &LabelGrid,
    path: impl AsRef<Path>,
    alphabet: Option<&[u8]>,
) -> Result<()> {
    let path = path.as_ref();
    if g.ndim() != 2 {
        return Err(Error::UnsupportedFormat("PNG holds 2D grids only".into()));
    }
    let identity: Vec<u8>;
    let alphabet = match alphabet {
        Some(a) => a,
        None => {
            if g.k() > 256 {
                return Err(Error::Alphabet(format!(
                    "k = {} does not fit 8-bit pixels",
                    g.k()
                )));
            }
            identity = (0..g.k()).map(|v| v as u8).collect();
            &identity
        }
    };
    if alphabet.len() != g.k() as usize {
        return Err(Error::Alphabet(format!(
            "{} alphabet values for k = {}",
            alphabet.len(),
            g.k()
        )));
    }
    let pixels: Vec<u8> = g.labels().iter().map(|&l| alphabet[l as usize]).collect();
    let (h, w) = (g.dims()[0], g.dims()[1]);
    write_gray8(path, w, h, &pixels)?;
    let mask_path = mask_path_for(path);
    match g.mask() {
        Some(m) => {
            let mp: Vec<u8> = m.iter().map(|&v| if v { 255 } else { 0 }).collect();
            write_gray8(&mask_path, w, h, &mp)
        }
        None => {
            if mask_path.exists() {
                std::fs::remove_file(&mask_path).map_err(|e| Error::io(&mask_path, e))?;
            }
            Ok(())
        }
    }
}

/// Three numeric columns read from a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreColumns {
    pub names: [String; 3],
    pub columns: [Vec<f64>; 3],
}

/// Read three columns of a CSV file. `select` picks columns by header name
/// or 0-based index; the first three columns are used by default. A first
/// row that does not parse as numbers is taken as the header.
pub fn read_score_columns(
    path: impl AsRef<Path>,
    select: Option<&[String]>,
) -> Result<ScoreColumns> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(BufReader::new(file));
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push(rec);
    }
    let header = match rows.first() {
        Some(first) if first.iter().any(|f| f.parse::<f64>().is_err()) => {
            Some(first.iter().map(str::to_string).collect::<Vec<_>>())
        }
        _ => None,
    };
    let data = &rows[header.is_some() as usize..];
    let width = rows.first().map_or(0, |r| r.len());
    let pick = |sel: &str| -> Result<usize> {
        if let Some(h) = &header {
            if let Some(i) = h.iter().position(|n| n == sel) {
                return Ok(i);
            }
        }
        sel.parse::<usize>()
            .ok()
            .filter(|&i| i < width)
            .ok_or_else(|| Error::InvalidInput(format!("no column `{sel}`")))
    };
    let idx: [usize; 3] = match select {
        Some(s) if s.len() == 3 => [pick(&s[0])?, pick(&s[1])?, pick(&s[2])?],
        Some(s) => {
            return Err(Error::InvalidInput(format!(
                "select 3 columns, got {}",
                s.len()
            )))
        }
        None if width >= 3 => [0, 1, 2],
        None => {
            return Err(Error::InvalidInput(format!(
                "need 3 columns, found {width}"
            )))
        }
    };
    let mut columns: [Vec<f64>; 3] = Default::default();
    for (r, rec) in data.iter().enumerate() {
        let line = r + 1 + header.is_some() as usize;
        for (col, &i) in columns.iter_mut().zip(&idx) {
            let field = rec
                .get(i)
                .ok_or_else(|| parse_err(line, i + 1, "missing field"))?;
            let v = field.parse::<f64>().map_err(|_| {
                parse_err(line, i + 1, format!("expected a number, found `{field}`"))
            })?;
            col.push(v);
        }
    }
    let names = idx.map(|i| {
        header
            .as_ref()
            .and_then(|h| h.get(i).cloned())
            .unwrap_or_else(|| format!("col{i}"))
    });
    Ok(ScoreColumns { names, columns })
}
