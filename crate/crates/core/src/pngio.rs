//! Minimal PNG reading and writing for RGB frames and 16-bit ID masks.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::InstanceMask;
use crate::synthdata::Frame;

fn encode(path: &Path, width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let fmt = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(fmt)?;
    writer.write_image_data(data).map_err(fmt)?;
    writer.finish().map_err(fmt)
}

fn decode(path: &Path, color: png::ColorType, depth: png::BitDepth) -> Result<(usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::IDENTITY);
    let fmt = |e: png::DecodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut reader = dec.read_info().map_err(fmt)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    if info.color_type != color || info.bit_depth != depth {
        return Err(Error::Format(format!(
            "{}: expected {color:?} {depth:?}, found {:?} {:?}",
            path.display(),
            info.color_type,
            info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}

pub fn write_rgb(path: &Path, frame: &Frame) -> Result<()> {
    encode(path, frame.width, frame.height, png::ColorType::Rgb, png::BitDepth::Eight, &frame.data)
}

pub fn read_rgb(path: &Path) -> Result<Frame> {
    let (width, height, data) = decode(path, png::ColorType::Rgb, png::BitDepth::Eight)?;
    Ok(Frame { height, width, data })
}

pub fn write_ids(path: &Path, mask: &InstanceMask) -> Result<()> {
    let bytes: Vec<u8> = mask.ids.iter().flat_map(|v| v.to_be_bytes()).collect();
    encode(path, mask.width, mask.height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

pub fn read_ids(path: &Path) -> Result<InstanceMask> {
    let (width, height, data) = decode(path, png::ColorType::Grayscale, png::BitDepth::Sixteen)?;
    let ids = data.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect();
    Ok(InstanceMask { height, width, ids })
}
