//! Interleaved float images.

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, value: &[f64]) -> Self {
        let channels = value.len();
        let mut data = Vec::with_capacity(width * height * channels);
        for _ in 0..width * height {
            data.extend_from_slice(value);
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = self.index(x, y);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// 8-bit encoding with clamping and round-to-nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), width * height * channels, "byte length does not match image shape");
        Self {
            width,
            height,
            channels,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }

    /// Snaps every value to the nearest 8-bit level, as a save/load would.
    pub fn quantized(&self) -> Self {
        let bytes = self.to_u8();
        Self::from_u8(self.width, self.height, self.channels, &bytes)
    }

    /// Copy of the window `[x0, x0+w) × [y0, y0+h)`.
    pub fn window(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        let mut out = Image::new(w, h, self.channels);
        for y in 0..h {
            for x in 0..w {
                let src = self.index(x0 + x, y0 + y);
                let dst = out.index(x, y);
                out.data[dst..dst + self.channels].copy_from_slice(&self.data[src..src + self.channels]);
            }
        }
        out
    }
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
