//! File formats: `WRZF` patch features, `WRZL` layer-difference stacks, and
//! 8-bit PNG masks and images.
//!
//! Binary layouts (all integers u32 little-endian, all values f32 little-endian):
//!
//! ```text
//! WRZF: "WRZF" version=1 h w d  then h*w*d values, row-major channel-last
//! WRZL: "WRZL" version=1 n      then per layer: H W and H*W values
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::grabcut::{Trimap, TrimapLabel};
use crate::grid::{BinaryMask, Grid, ImageGrid, PatchFeatureMap, SoftMask};
use crate::metrics::LayerDiffStack;

pub const FEATURE_MAGIC: &[u8; 4] = b"WRZF";
pub const LAYER_MAGIC: &[u8; 4] = b"WRZL";
pub const FORMAT_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn img_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| match source {
        image::ImageError::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(self.fail(format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(self.fail(format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = count.checked_mul(4).ok_or_else(|| self.fail("value count overflows"))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.fail(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::dim(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_features(map: &PatchFeatureMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + map.data().len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    put_u32(&mut out, FORMAT_VERSION as usize)?;
    put_u32(&mut out, map.grid_height())?;
    put_u32(&mut out, map.grid_width())?;
    put_u32(&mut out, map.dim())?;
    for v in map.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<PatchFeatureMap> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        path,
    };
    r.header(FEATURE_MAGIC)?;
    let (h, w, d) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let count = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(d))
        .ok_or_else(|| r.fail("dimensions overflow"))?;
    let data = r.f32s(count)?;
    r.finish()?;
    PatchFeatureMap::new(h, w, d, data).map_err(|e| r.fail(e.to_string()))
}

pub fn write_features(path: &Path, map: &PatchFeatureMap) -> Result<()> {
    fs::write(path, encode_features(map)?).map_err(io_err(path))
}

pub fn read_features(path: &Path) -> Result<PatchFeatureMap> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_features(&bytes, path)
}

pub fn encode_layers(stack: &LayerDiffStack) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(LAYER_MAGIC);
    put_u32(&mut out, FORMAT_VERSION as usize)?;
    put_u32(&mut out, stack.layers().len())?;
    for layer in stack.layers() {
        put_u32(&mut out, layer.height())?;
        put_u32(&mut out, layer.width())?;
        for v in layer.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_layers(bytes: &[u8], path: &Path) -> Result<LayerDiffStack> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        path,
    };
    r.header(LAYER_MAGIC)?;
    let n = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let (h, w) = (r.u32()? as usize, r.u32()? as usize);
        let count = h.checked_mul(w).ok_or_else(|| r.fail("dimensions overflow"))?;
        let data = r.f32s(count)?;
        layers.push(Grid::new(h, w, data)?);
    }
    r.finish()?;
    LayerDiffStack::new(layers).map_err(|e| r.fail(e.to_string()))
}

pub fn write_layers(path: &Path, stack: &LayerDiffStack) -> Result<()> {
    fs::write(path, encode_layers(stack)?).map_err(io_err(path))
}

pub fn read_layers(path: &Path) -> Result<LayerDiffStack> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_layers(&bytes, path)
}

/// Reads an 8-bit mask PNG; any value `>= 128` is foreground.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path).map_err(img_err(path))?.into_luma8();
    let (w, h) = img.dimensions();
    Grid::new(h as usize, w as usize, img.pixels().map(|p| p.0[0] >= 128).collect())
}

/// Reads a grayscale PNG as a soft mask with values `level / 255`.
pub fn read_soft_mask(path: &Path) -> Result<SoftMask> {
    let img = image::open(path).map_err(img_err(path))?.into_luma8();
    let (w, h) = img.dimensions();
    SoftMask::new(Grid::new(
        h as usize,
        w as usize,
        img.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect(),
    )?)
}

/// Reads a trimap PNG using the 0/85/170/255 level convention.
pub fn read_trimap(path: &Path) -> Result<Trimap> {
    let img = image::open(path).map_err(img_err(path))?.into_luma8();
    let (w, h) = img.dimensions();
    Grid::new(
        h as usize,
        w as usize,
        img.pixels().map(|p| TrimapLabel::from_level(p.0[0])).collect(),
    )
}

pub fn write_trimap(path: &Path, trimap: &Trimap) -> Result<()> {
    let data = trimap.data().iter().map(|l| l.to_level()).collect();
    GrayImage::from_raw(trimap.width() as u32, trimap.height() as u32, data)
        .expect("buffer matches dimensions")
        .save(path)
        .map_err(img_err(path))
}

/// Writes a mask as 8-bit grayscale PNG, 255 = foreground.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let (h, w) = mask.shape();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([if *mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    img.save(path).map_err(img_err(path))
}

/// Reads an image PNG as RGB with intensities `/255`.
pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let img = image::open(path).map_err(img_err(path))?.into_rgb8();
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
    ImageGrid::new(h as usize, w as usize, 3, data)
}

pub fn to_rgb8(img: &ImageGrid) -> RgbImage {
    RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let c = img.rgb(y as usize, x as usize);
        Rgb(c.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
    })
}

/// Writes an image as 8-bit RGB PNG (values rounded to the nearest level).
pub fn write_image(path: &Path, img: &ImageGrid) -> Result<()> {
    to_rgb8(img).save(path).map_err(img_err(path))
}

/// Files in `dir` with extension `ext`, keyed by file stem, sorted.
pub fn list_by_stem(dir: &Path, ext: &str) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let matches = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case(ext));
        if path.is_file() && matches {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

/// Pairs frames across directories by file stem. Every directory must hold
/// exactly the same stems; otherwise the error lists the difference.
pub fn pair_frames(dirs: &[(&Path, &str)]) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let listings = dirs
        .iter()
        .map(|(d, ext)| list_by_stem(d, ext))
        .collect::<Result<Vec<_>>>()?;
    let Some(first) = listings.first() else {
        return Ok(Vec::new());
    };
    for (listing, (dir, _)) in listings.iter().zip(dirs).skip(1) {
        let missing: Vec<_> = first.keys().filter(|k| !listing.contains_key(*k)).collect();
        let extra: Vec<_> = listing.keys().filter(|k| !first.contains_key(*k)).collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::arg(format!(
                "frame sets differ in {}: missing {missing:?}, unexpected {extra:?}",
                dir.display()
            )));
        }
    }
    Ok(first
        .keys()
        .map(|stem| {
            let paths = listings.iter().map(|l| l[stem].clone()).collect();
            (stem.clone(), paths)
        })
        .collect())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn feature_header_layout() {
        let map = PatchFeatureMap::new(1, 2, 1, vec![1.0, -2.5]).unwrap();
        let bytes = encode_features(&map).unwrap();
        assert_eq!(&bytes[..4], b"WRZF");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..20], &[1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 28);
    }

    #[test]
    fn rejects_corrupt_files() {
        let p = Path::new("x.wrzf");
        let map = PatchFeatureMap::new(2, 2, 3, vec![0.5; 12]).unwrap();
        let mut bytes = encode_features(&map).unwrap();
        assert!(decode_features(&bytes[..bytes.len() - 1], p).is_err());
        bytes.push(0);
        assert!(decode_features(&bytes, p).is_err());
        bytes.pop();
        bytes[0] = b'X';
        assert!(matches!(decode_features(&bytes, p), Err(Error::Format { .. })));
        let stack = LayerDiffStack::new(vec![Grid::filled(2, 2, 0.1)]).unwrap();
        let mut bytes = encode_layers(&stack).unwrap();
        bytes[4] = 7;
        assert!(decode_layers(&bytes, p).is_err());
    }

    #[test]
    fn png_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let mask = Grid::from_fn(5, 7, |y, x| (x + 2 * y) % 3 == 0);
        let mp = dir.path().join("m.png");
        write_mask(&mp, &mask).unwrap();
        assert_eq!(read_mask(&mp).unwrap(), mask);

        let data: Vec<f64> = (0..4 * 3 * 3).map(|i| f64::from((i * 7 % 256) as u8) / 255.0).collect();
        let img = ImageGrid::new(4, 3, 3, data).unwrap();
        let ip = dir.path().join("i.png");
        write_image(&ip, &img).unwrap();
        assert_eq!(read_image(&ip).unwrap(), img);
    }

    #[test]
    fn trimap_and_soft_mask_files() {
        let dir = tempfile::tempdir().unwrap();
        let labels = [
            TrimapLabel::Background,
            TrimapLabel::ProbableBackground,
            TrimapLabel::ProbableForeground,
            TrimapLabel::Foreground,
        ];
        let t = Grid::from_fn(3, 4, |y, x| labels[(x + y) % 4]);
        let p = dir.path().join("t.png");
        write_trimap(&p, &t).unwrap();
        assert_eq!(read_trimap(&p).unwrap(), t);

        GrayImage::from_raw(2, 1, vec![0, 51]).unwrap().save(&p).unwrap();
        assert_eq!(read_soft_mask(&p).unwrap().grid().data(), &[0.0, 0.2]);
    }

    #[test]
    fn mask_reads_threshold_at_128() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        GrayImage::from_raw(3, 1, vec![127, 128, 200])
            .unwrap()
            .save(&p)
            .unwrap();
        assert_eq!(read_mask(&p).unwrap().data(), &[false, true, true]);
    }

    #[test]
    fn pairing_reports_mismatch() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for n in ["f0", "f1"] {
            fs::write(a.path().join(format!("{n}.png")), b"").unwrap();
        }
        fs::write(b.path().join("f0.wrzf"), b"").unwrap();
        let err = pair_frames(&[(a.path(), "png"), (b.path(), "wrzf")]).unwrap_err();
        assert!(err.to_string().contains("f1"));
        fs::write(b.path().join("f1.wrzf"), b"").unwrap();
        let pairs = pair_frames(&[(a.path(), "png"), (b.path(), "wrzf")]).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].0, "f0");
    }

    proptest! {
        #[test]
        fn feature_roundtrip_is_bit_exact(h in 1usize..5, w in 1usize..5, d in 1usize..6, seed in any::<u64>()) {
            let data: Vec<f32> = (0..h * w * d)
                .map(|i| f32::from_bits((seed.wrapping_mul(i as u64 + 1) >> 20) as u32 & 0x7f7f_ffff))
                .collect();
            let map = PatchFeatureMap::new(h, w, d, data).unwrap();
            let back = decode_features(&encode_features(&map).unwrap(), Path::new("p")).unwrap();
            prop_assert!(back.data().iter().zip(map.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(back, map);
        }

        #[test]
        fn layer_roundtrip_is_bit_exact(sizes in proptest::collection::vec((1usize..6, 1usize..6), 0..4), v in 0.0f32..3.0) {
            let layers = sizes.iter().enumerate()
                .map(|(i, &(h, w))| Grid::from_fn(h, w, |y, x| v * (1 + i + y * w + x) as f32 / 7.0))
                .collect();
            let stack = LayerDiffStack::new(layers).unwrap();
            let back = decode_layers(&encode_layers(&stack).unwrap(), Path::new("p")).unwrap();
            prop_assert_eq!(back, stack);
        }
    }
}
