//! Payload codecs: raw bit strings, 8-bit text and 1-bit bitmaps (PBM P1).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Codec {
    #[default]
    RawBits,
    Text8,
    Bitmap1 { width: usize, height: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bitstream {
    bits: Vec<bool>,
    codec: Codec,
}

impl Bitstream {
    pub fn raw(bits: Vec<bool>) -> Self {
        Self {
            bits,
            codec: Codec::RawBits,
        }
    }

    pub fn with_codec(bits: Vec<bool>, codec: Codec) -> Result<Self> {
        if let Codec::Bitmap1 { width, height } = codec {
            if bits.len() != width * height {
                return Err(Error::Framing(format!(
                    "{} bits cannot fill a {width}x{height} bitmap",
                    bits.len()
                )));
            }
        }
        Ok(Self { bits, codec })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<bool> {
        self.bits
    }

    pub fn codec(&self) -> Codec {
        self.codec
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// `'0'`/`'1'` characters, one per bit.
    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

/// Parses a string of `0`/`1` characters, ignoring whitespace, commas and
/// square brackets (so both `11010` and `[1, 1, 0, 1, 0]` are accepted).
pub fn parse_bits(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .filter(|c| !c.is_whitespace() && !matches!(c, ',' | '[' | ']'))
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::Framing(format!("unexpected character `{other}` in bit string"))),
        })
        .collect()
}

/// Eight bits per character, most significant first. Characters above
/// U+00FF are rejected.
pub fn encode_text(text: &str) -> Result<Bitstream> {
    let mut bits = Vec::with_capacity(text.len() * 8);
    for c in text.chars() {
        let code = c as u32;
        if code > 0xFF {
            return Err(Error::Framing(format!(
                "character {c:?} (U+{code:04X}) is not 8-bit representable"
            )));
        }
        bits.extend((0..8).rev().map(|k| (code >> k) & 1 == 1));
    }
    Ok(Bitstream {
        bits,
        codec: Codec::Text8,
    })
}

pub fn decode_text(bits: &Bitstream) -> Result<String> {
    if bits.len() % 8 != 0 {
        return Err(Error::Framing(format!(
            "{} bits is not a whole number of bytes",
            bits.len()
        )));
    }
    Ok(bits
        .bits
        .chunks(8)
        .map(|byte| {
            let code = byte.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
            char::from_u32(code).expect("codes below 256 are valid chars")
        })
        .collect())
}

/// A 1-bit image, row-major, `true` = black (PBM convention).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitmap {
    width: usize,
    height: usize,
    pixels: Vec<bool>,
}

impl Bitmap {
    pub fn new(width: usize, height: usize, pixels: Vec<bool>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Framing(format!(
                "{} pixels given for a {width}x{height} bitmap",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Framing("bitmap rows differ in length".into()));
        }
        Self::new(width, height, rows.concat())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x]
    }
}

pub fn encode_bitmap(image: &Bitmap) -> Bitstream {
    Bitstream {
        bits: image.pixels.clone(),
        codec: Codec::Bitmap1 {
            width: image.width,
            height: image.height,
        },
    }
}

pub fn decode_bitmap(bits: &Bitstream, width: usize, height: usize) -> Result<Bitmap> {
    Bitmap::new(width, height, bits.bits.clone())
}

/// Parses plain PBM (`P1`). Comments run from `#` to end of line; pixel
/// digits may or may not be separated by whitespace.
pub fn read_pbm(text: &str) -> Result<Bitmap> {
    let mut tokens = String::with_capacity(text.len());
    for line in text.lines() {
        let content = line.split('#').next().unwrap_or("");
        tokens.push_str(content);
        tokens.push('\n');
    }
    let mut header = tokens.split_whitespace();
    if header.next() != Some("P1") {
        return Err(Error::Framing("PBM data must start with magic `P1`".into()));
    }
    let mut dim = || -> Result<usize> {
        header
            .next()
            .ok_or_else(|| Error::Framing("PBM header truncated".into()))?
            .parse()
            .map_err(|_| Error::Framing("PBM dimensions must be integers".into()))
    };
    let width = dim()?;
    let height = dim()?;
    let rest: String = header.collect();
    let pixels = rest
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::Framing(format!("unexpected PBM pixel `{other}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Bitmap::new(width, height, pixels)
}

/// Writes plain PBM with lines no longer than 70 characters.
pub fn write_pbm(image: &Bitmap) -> String {
    let mut out = format!("P1\n{} {}\n", image.width, image.height);
    for row in image.pixels.chunks(image.width.max(1)) {
        for chunk in row.chunks(35) {
            let line: Vec<&str> = chunk.iter().map(|&b| if b { "1" } else { "0" }).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
    out
}

/// Positions where the two streams differ, counting any length mismatch as
/// errors.
pub fn hamming_distance(sent: &[bool], received: &[bool]) -> usize {
    let common = sent.iter().zip(received).filter(|(a, b)| a != b).count();
    common + sent.len().abs_diff(received.len())
}

/// Hamming distance over the sent length; 0 for an empty payload.
pub fn bit_error_rate(sent: &[bool], received: &[bool]) -> f64 {
    if sent.is_empty() {
        return if received.is_empty() { 0.0 } else { 1.0 };
    }
    (hamming_distance(sent, received) as f64 / sent.len() as f64).min(1.0)
}
