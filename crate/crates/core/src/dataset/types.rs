use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RGB raster with channel values in `[0, 1]`, stored row-major, interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Empty("image with zero extent"));
        }
        if data.len() != height * width * 3 {
            return Err(Error::DimensionMismatch {
                what: "rgb buffer length",
                expected: (height * width * 3, 1),
                found: (data.len(), 1),
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Config(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data).expect("filled image with in-range colour")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Writes a pixel, clamping each channel into `[0, 1]`.
    pub fn set(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        for c in 0..3 {
            self.data[i + c] = rgb[c].clamp(0.0, 1.0);
        }
    }

    /// Snaps every channel to the nearest 8-bit level so that a PNG round trip is exact.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = (*v * 255.0).round() / 255.0;
        }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    /// ITU-R BT.601 luma on the 8-bit scale `[0, 255]`.
    pub fn luma_255(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 255.0 * (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]))
            .collect()
    }
}

/// Binary raster mask.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "BinaryMask({}x{}, {} set)",
            self.height,
            self.width,
            self.count()
        )
    }
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch {
                what: "mask buffer length",
                expected: (height * width, 1),
                found: (data.len(), 1),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                what: "binary masks",
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect();
        BinaryMask::new(self.height, self.width, data)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect();
        BinaryMask::new(self.height, self.width, data)
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }
}

/// Facial components that make up the face-region set used for prompt selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaceComponent {
    Skin,
    Eyebrows,
    Eyes,
    Nose,
    Mouth,
    Lip,
}

impl FaceComponent {
    /// Maps a label name to a face component. Accepts the CelebAMask-HQ
    /// spellings (`l_brow`, `u_lip`, ...) as well as the plain names.
    pub fn from_label_name(name: &str) -> Option<Self> {
        let n = name.trim().to_ascii_lowercase();
        Some(match n.as_str() {
            "skin" | "face" => FaceComponent::Skin,
            "eyebrows" | "eyebrow" | "brow" | "brows" | "l_brow" | "r_brow" => {
                FaceComponent::Eyebrows
            }
            "eyes" | "eye" | "l_eye" | "r_eye" => FaceComponent::Eyes,
            "nose" => FaceComponent::Nose,
            "mouth" | "inner_mouth" => FaceComponent::Mouth,
            "lip" | "lips" | "u_lip" | "l_lip" | "upper_lip" | "lower_lip" => FaceComponent::Lip,
            _ => return None,
        })
    }
}

/// Mapping from parsing-mask label id to component name.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LabelTable {
    names: BTreeMap<u8, String>,
}

impl LabelTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (u8, S)>) -> Self {
        Self {
            names: pairs.into_iter().map(|(id, n)| (id, n.into())).collect(),
        }
    }

    pub fn insert(&mut self, id: u8, name: impl Into<String>) {
        self.names.insert(id, name.into());
    }

    pub fn name(&self, id: u8) -> Option<&str> {
        self.names.get(&id).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        self.names
            .iter()
            .find(|(_, n)| n.as_str() == name)
            .map(|(id, _)| *id)
    }

    pub fn contains(&self, id: u8) -> bool {
        self.names.contains_key(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u8, &str)> {
        self.names.iter().map(|(id, n)| (*id, n.as_str()))
    }

    /// Lookup table indexed by label id: `true` when the label belongs to the face-region set.
    pub fn face_lut(&self) -> [bool; 256] {
        let mut lut = [false; 256];
        for (id, name) in &self.names {
            lut[*id as usize] = FaceComponent::from_label_name(name).is_some();
        }
        lut
    }

    /// Serializes as one `id name` pair per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, name) in &self.names {
            out.push_str(&format!("{id} {name}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut table = LabelTable::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, name) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| format!("line {}: expected `id name`", lineno + 1))?;
            let id: u8 = id
                .parse()
                .map_err(|e| format!("line {}: bad id {id:?}: {e}", lineno + 1))?;
            table.insert(id, name.trim());
        }
        if table.names.is_empty() {
            return Err("label table is empty".into());
        }
        Ok(table)
    }
}

/// Per-pixel facial-component labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsingMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
    table: LabelTable,
}

impl ParsingMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>, table: LabelTable) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::DimensionMismatch {
                what: "parsing buffer length",
                expected: (height * width, 1),
                found: (labels.len(), 1),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&id| !table.contains(id)) {
            return Err(Error::UnknownLabel(bad));
        }
        Ok(Self {
            height,
            width,
            labels,
            table,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn label(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn table(&self) -> &LabelTable {
        &self.table
    }

    /// Pixel-level face-region mask: pixels whose label is in the face-region set.
    pub fn face_region(&self) -> BinaryMask {
        let lut = self.table.face_lut();
        let data = self.labels.iter().map(|&id| lut[id as usize]).collect();
        BinaryMask::new(self.height, self.width, data).expect("same extent")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Val => "val",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_rejects_out_of_range() {
        assert!(RgbImage::new(1, 1, vec![0.0, 0.5, 1.5]).is_err());
        assert!(RgbImage::new(1, 1, vec![0.0, f64::NAN, 1.0]).is_err());
        assert!(RgbImage::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn label_table_text_round_trip() {
        let t = LabelTable::from_pairs([(0, "background"), (1, "skin"), (13, "u_lip")]);
        let back = LabelTable::parse(&t.to_text()).unwrap();
        assert_eq!(t, back);
        let lut = back.face_lut();
        assert!(!lut[0] && lut[1] && lut[13]);
    }

    #[test]
    fn parsing_rejects_unknown_ids() {
        let t = LabelTable::from_pairs([(0, "background")]);
        assert!(matches!(
            ParsingMask::new(1, 2, vec![0, 7], t),
            Err(Error::UnknownLabel(7))
        ));
    }

    #[test]
    fn celeba_names_map_to_face_set() {
        for n in ["l_brow", "r_eye", "l_lip", "nose", "skin", "mouth"] {
            assert!(FaceComponent::from_label_name(n).is_some(), "{n}");
        }
        for n in ["hair", "neck", "background", "hat", "cloth", "l_ear"] {
            assert!(FaceComponent::from_label_name(n).is_none(), "{n}");
        }
    }
}
