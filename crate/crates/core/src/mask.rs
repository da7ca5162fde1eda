use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{ensure, Result};
use crate::pgm;
use crate::tensor::Tensor;

/// Per-pixel class indices, row-major; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        ensure(data.len() == height * width, || {
            format!("mask {height}x{width} needs {} labels, got {}", height * width, data.len())
        })?;
        Ok(LabelMask { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        LabelMask { height, width, data: vec![0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, label: u8) {
        self.data[y * self.width + x] = label;
    }

    /// Number of pixels carrying `label`.
    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }

    pub fn object_pixels(&self) -> usize {
        self.data.iter().filter(|&&l| l != 0).count()
    }

    pub fn is_background(&self) -> bool {
        self.data.iter().all(|&l| l == 0)
    }

    pub fn labels(&self) -> BTreeSet<u8> {
        self.data.iter().copied().collect()
    }

    /// Per-pixel argmax of item `n` of an `N x C x H x W` probability map.
    pub fn from_probabilities(probs: &Tensor, n: usize) -> Result<Self> {
        let (_, c, h, w) = probs.dims4()?;
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let mut best = 0;
                for k in 1..c {
                    if probs.at4(n, k, y, x) > probs.at4(n, best, y, x) {
                        best = k;
                    }
                }
                data.push(best as u8);
            }
        }
        LabelMask::new(h, w, data)
    }

    /// PGM with pixel value = class index.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        pgm::write(path, self.width, self.height, &self.data)
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let (w, h, data) = pgm::read(path)?;
        LabelMask::new(h, w, data)
    }
}

/// Binary per-pixel map (occluders).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMap {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMap {
    pub fn new(height: usize, width: usize) -> Self {
        BinaryMap { height, width, data: vec![false; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    /// Sets every pixel in `[x0, x1) x [y0, y1)`, clipped to the map.
    pub fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize) {
        for y in y0.min(self.height)..y1.min(self.height) {
            for x in x0.min(self.width)..x1.min(self.width) {
                self.data[y * self.width + x] = true;
            }
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}
