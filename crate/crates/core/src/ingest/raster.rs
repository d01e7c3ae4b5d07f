//! Lossless raster (PNG) decoding and encoding for images and label masks.

use std::io::Cursor;

use sha2::{Digest, Sha256};

/// Decoded image pixels, row-major, interleaved channels.
///
/// 16-bit samples are stored big-endian as PNG delivers them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub bit_depth: u8,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn gray8(width: u32, height: u32, data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len(), (width * height) as usize);
        Raster {
            width,
            height,
            channels: 1,
            bit_depth: 8,
            data,
        }
    }

    /// SHA-256 over geometry, sample layout and decoded pixel bytes.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        h.update([self.channels, self.bit_depth]);
        h.update(&self.data);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn color_for(channels: u8) -> Option<png::ColorType> {
    Some(match channels {
        1 => png::ColorType::Grayscale,
        2 => png::ColorType::GrayscaleAlpha,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        _ => return None,
    })
}

fn channels_of(c: png::ColorType) -> u8 {
    match c {
        png::ColorType::Grayscale | png::ColorType::Indexed => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
    }
}

fn depth_of(d: png::BitDepth) -> u8 {
    match d {
        png::BitDepth::One => 1,
        png::BitDepth::Two => 2,
        png::BitDepth::Four => 4,
        png::BitDepth::Eight => 8,
        png::BitDepth::Sixteen => 16,
    }
}

fn decode(bytes: &[u8], transform: png::Transformations) -> Result<(png::OutputInfo, Vec<u8>), String> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(transform);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| "image too large".to_string())?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

/// Decode a PNG image, expanding palettes and sub-byte grayscale to 8 bits.
pub fn decode_image(bytes: &[u8]) -> Result<Raster, String> {
    let (info, data) = decode(bytes, png::Transformations::EXPAND)?;
    Ok(Raster {
        width: info.width,
        height: info.height,
        channels: channels_of(info.color_type),
        bit_depth: depth_of(info.bit_depth),
        data,
    })
}

pub fn encode_image(r: &Raster) -> Result<Vec<u8>, String> {
    let color = color_for(r.channels).ok_or_else(|| format!("{} channels", r.channels))?;
    let depth = match r.bit_depth {
        8 => png::BitDepth::Eight,
        16 => png::BitDepth::Sixteen,
        d => return Err(format!("unsupported bit depth {d}")),
    };
    write_png(r.width, r.height, color, depth, &r.data)
}

fn write_png(
    width: u32,
    height: u32,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(color);
        enc.set_depth(depth);
        enc.set_compression(png::Compression::Fast);
        let mut w = enc.write_header().map_err(|e| e.to_string())?;
        w.write_image_data(data).map_err(|e| e.to_string())?;
        w.finish().map_err(|e| e.to_string())?;
    }
    Ok(out)
}

/// Single-channel integer label grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRaster {
    pub width: u32,
    pub height: u32,
    pub values: Vec<u16>,
}

/// Decode an 8/16-bit grayscale or 8-bit indexed PNG as raw label values.
pub fn decode_mask_raster(bytes: &[u8]) -> Result<MaskRaster, String> {
    let (info, data) = decode(bytes, png::Transformations::IDENTITY)?;
    let values = match (info.color_type, info.bit_depth) {
        (png::ColorType::Grayscale | png::ColorType::Indexed, png::BitDepth::Eight) => {
            data.iter().map(|&v| v as u16).collect()
        }
        (png::ColorType::Grayscale, png::BitDepth::Sixteen) => data
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect(),
        (c, d) => {
            return Err(format!(
                "mask must be 8/16-bit single-channel, got {c:?} at {} bits",
                depth_of(d)
            ))
        }
    };
    Ok(MaskRaster {
        width: info.width,
        height: info.height,
        values,
    })
}

/// Encode label values as 8-bit grayscale when they fit, else 16-bit.
pub fn encode_mask_raster(m: &MaskRaster) -> Result<Vec<u8>, String> {
    if m.values.iter().all(|&v| v <= u8::MAX as u16) {
        let data: Vec<u8> = m.values.iter().map(|&v| v as u8).collect();
        write_png(m.width, m.height, png::ColorType::Grayscale, png::BitDepth::Eight, &data)
    } else {
        let data: Vec<u8> = m.values.iter().flat_map(|v| v.to_be_bytes()).collect();
        write_png(m.width, m.height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &data)
    }
}
