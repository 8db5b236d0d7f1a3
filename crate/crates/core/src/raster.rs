//! Class-labelled image grids.
//!
//! The same container carries front-camera views (class ids from
//! [`SemanticClass`]), binary masks (values restricted to `{0, 255}`) and
//! top-view context maps.

use serde::{Deserialize, Serialize};

/// Value written into set pixels of a binary mask.
pub const MASK_ON: u8 = 255;

/// Stable class palette shared by the renderer, the dataset files and the
/// annotation console.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum SemanticClass {
    Void = 0,
    Road = 1,
    LaneMarking = 2,
    Sidewalk = 3,
    Vehicle = 4,
    Pedestrian = 5,
    BusStop = 6,
    TrafficLight = 7,
    Building = 8,
}

/// Number of classes in the palette.
pub const NUM_CLASSES: usize = 9;

impl SemanticClass {
    pub const ALL: [SemanticClass; NUM_CLASSES] = [
        SemanticClass::Void,
        SemanticClass::Road,
        SemanticClass::LaneMarking,
        SemanticClass::Sidewalk,
        SemanticClass::Vehicle,
        SemanticClass::Pedestrian,
        SemanticClass::BusStop,
        SemanticClass::TrafficLight,
        SemanticClass::Building,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    /// Display color used by plots and the annotation console.
    pub fn rgb(self) -> [u8; 3] {
        match self {
            SemanticClass::Void => [0, 0, 0],
            SemanticClass::Road => [128, 128, 128],
            SemanticClass::LaneMarking => [255, 255, 255],
            SemanticClass::Sidewalk => [190, 170, 140],
            SemanticClass::Vehicle => [0, 0, 200],
            SemanticClass::Pedestrian => [220, 20, 60],
            SemanticClass::BusStop => [255, 165, 0],
            SemanticClass::TrafficLight => [250, 230, 30],
            SemanticClass::Building => [70, 70, 70],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticRaster {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl SemanticRaster {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    /// Wraps a row-major buffer. Returns `None` when the length does not match.
    pub fn from_data(width: usize, height: usize, data: Vec<u8>) -> Option<Self> {
        (data.len() == width * height).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, value: u8) {
        self.data[row * self.width + col] = value;
    }

    /// Sets a pixel given signed coordinates, ignoring anything out of bounds.
    pub fn set_clipped(&mut self, col: i64, row: i64, value: u8) {
        if col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height {
            self.set(col as usize, row as usize, value);
        }
    }

    pub fn is_binary_mask(&self) -> bool {
        self.data.iter().all(|&v| v == 0 || v == MASK_ON)
    }

    /// Number of set (non-zero) pixels.
    pub fn count_on(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn fraction_on(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count_on() as f64 / self.data.len() as f64
        }
    }

    /// Intersection over union of the set pixels of two masks of equal shape.
    /// Two empty masks have IoU 1.
    pub fn iou(&self, other: &SemanticRaster) -> f64 {
        assert_eq!(
            (self.width, self.height),
            (other.width, other.height),
            "iou on mismatched shapes"
        );
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            let (a, b) = (a != 0, b != 0);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Mean of the (col + 0.5, row + 0.5) pixel centres of all set pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut n = 0usize;
        let (mut su, mut sv) = (0.0, 0.0);
        for row in 0..self.height {
            for col in 0..self.width {
                if self.get(col, row) != 0 {
                    n += 1;
                    su += col as f64 + 0.5;
                    sv += row as f64 + 0.5;
                }
            }
        }
        (n > 0).then(|| (su / n as f64, sv / n as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_ids_are_stable() {
        for (i, c) in SemanticClass::ALL.iter().enumerate() {
            assert_eq!(c.id() as usize, i);
            assert_eq!(SemanticClass::from_id(i as u8), Some(*c));
        }
        assert_eq!(SemanticClass::from_id(9), None);
    }

    #[test]
    fn iou_and_centroid() {
        let mut a = SemanticRaster::new(4, 4);
        let mut b = SemanticRaster::new(4, 4);
        a.set(0, 0, MASK_ON);
        a.set(1, 0, MASK_ON);
        b.set(1, 0, MASK_ON);
        assert!((a.iou(&b) - 0.5).abs() < 1e-12);
        assert_eq!(a.centroid(), Some((1.0, 0.5)));
        assert_eq!(SemanticRaster::new(2, 2).centroid(), None);
        assert!(a.is_binary_mask());
        a.set(3, 3, 37);
        assert!(!a.is_binary_mask());
    }

    #[test]
    fn from_data_checks_length() {
        assert!(SemanticRaster::from_data(2, 2, vec![0; 3]).is_none());
        assert!(SemanticRaster::from_data(2, 2, vec![0; 4]).is_some());
    }
}
