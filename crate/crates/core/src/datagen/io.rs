use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::meta::MetaRecord;
use crate::attrs::{Attrs, Color, Position, Shape};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const VDIM_MAGIC: &[u8; 4] = b"VDIM";
pub const VDIM_VERSION: u32 = 1;
/// Magic, version, then C, H, W.
pub const VDIM_HEADER_LEN: usize = 20;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const IMAGE_DIR: &str = "images";
pub const MANIFEST_HEADER: &str =
    "id\tcaption\tclip_sim\tnsfw\twatermark\taspect\tarea\tattr_shape\tattr_color\tattr_pos";

/// `[C, H, W]` grid as little-endian f32 after a fixed header.
pub fn encode_vdim(t: &Tensor) -> Result<Vec<u8>> {
    let &[c, h, w] = t.shape() else {
        return Err(Error::dim(format!("image grid must be [C, H, W], got {:?}", t.shape())));
    };
    let mut out = Vec::with_capacity(VDIM_HEADER_LEN + 4 * t.numel());
    out.extend_from_slice(VDIM_MAGIC);
    for v in [VDIM_VERSION, c as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_vdim(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < VDIM_HEADER_LEN || &bytes[..4] != VDIM_MAGIC {
        return Err(Error::Format("not a VDIM image".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let version = word(0) as u32;
    if version != VDIM_VERSION {
        return Err(Error::Format(format!("unsupported VDIM version {version}")));
    }
    let shape = [word(1), word(2), word(3)];
    let n: usize = shape.iter().product();
    let body = &bytes[VDIM_HEADER_LEN..];
    if body.len() != 4 * n {
        return Err(Error::Format(format!("VDIM payload is {} bytes, expected {}", body.len(), 4 * n)));
    }
    let data = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64).collect();
    Tensor::new(&shape, data)
}

pub fn write_vdim(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode_vdim(t)?)?;
    Ok(())
}

pub fn read_vdim(path: &Path) -> Result<Tensor> {
    decode_vdim(&fs::read(path)?)
}

/// Binary PPM of the first three channels, clamped to `[0, 1]` and
/// enlarged `scale` times.
pub fn encode_ppm(t: &Tensor, scale: usize) -> Result<Vec<u8>> {
    let &[c, h, w] = t.shape() else {
        return Err(Error::dim(format!("image grid must be [C, H, W], got {:?}", t.shape())));
    };
    if c < 3 || scale == 0 {
        return Err(Error::arg("PPM export needs three colour channels and a positive scale"));
    }
    let mut out = format!("P6\n{} {}\n255\n", w * scale, h * scale).into_bytes();
    let d = t.data();
    for y in 0..h * scale {
        for x in 0..w * scale {
            let at = (y / scale) * w + x / scale;
            for ch in 0..3 {
                out.push((d[ch * h * w + at].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub id: usize,
    pub caption: String,
    pub meta: MetaRecord,
    pub attrs: Attrs,
}

pub fn image_file(id: usize) -> String {
    format!("{id:06}.vdim")
}

impl ManifestRow {
    pub fn to_line(&self) -> String {
        let caption: String =
            self.caption.chars().map(|c| if c == '\t' || c == '\n' || c == '\r' { ' ' } else { c }).collect();
        let m = &self.meta;
        format!(
            "{:06}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.id,
            caption,
            m.clip_sim,
            m.nsfw,
            m.watermark,
            m.aspect,
            m.area,
            self.attrs.shape,
            self.attrs.color,
            self.attrs.position
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 10 {
            return Err(Error::Format(format!("manifest line has {} fields, expected 10", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number '{s}'")));
        Ok(Self {
            id: f[0].parse().map_err(|_| Error::Format(format!("bad id '{}'", f[0])))?,
            caption: f[1].to_string(),
            meta: MetaRecord {
                clip_sim: num(f[2])?,
                nsfw: num(f[3])?,
                watermark: num(f[4])?,
                aspect: num(f[5])?,
                area: f[6].parse().map_err(|_| Error::Format(format!("bad area '{}'", f[6])))?,
            },
            attrs: Attrs::new(f[7].parse::<Shape>()?, f[8].parse::<Color>()?, f[9].parse::<Position>()?),
        })
    }
}

pub fn render_manifest(rows: &[ManifestRow]) -> String {
    let mut s = String::from(MANIFEST_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == MANIFEST_HEADER => {}
        _ => return Err(Error::Format("manifest header missing".into())),
    }
    lines.filter(|l| !l.is_empty()).map(ManifestRow::parse_line).collect()
}

/// Writes `manifest.tsv` and `images/<id>.vdim` under `dir`.
pub fn write_dataset_files(dir: &Path, rows: &[ManifestRow], images: &[Tensor]) -> Result<()> {
    if rows.len() != images.len() {
        return Err(Error::arg("one image per manifest row"));
    }
    let img_dir = dir.join(IMAGE_DIR);
    fs::create_dir_all(&img_dir)?;
    for (r, img) in rows.iter().zip(images) {
        write_vdim(&img_dir.join(image_file(r.id)), img)?;
    }
    let mut f = fs::File::create(dir.join(MANIFEST_FILE))?;
    f.write_all(render_manifest(rows).as_bytes())?;
    Ok(())
}

pub fn read_dataset_files(dir: &Path) -> Result<(Vec<ManifestRow>, Vec<Tensor>)> {
    let rows = parse_manifest(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let images = rows.iter().map(|r| read_vdim(&image_path(dir, r.id))).collect::<Result<Vec<_>>>()?;
    Ok((rows, images))
}

pub fn image_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(IMAGE_DIR).join(image_file(id))
}
