//! Screen-space primitives shared by the action grammar, rewards and metrics.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Absolute pixel coordinate on a screenshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    /// Maps a point between two coordinate frames, rounding to the nearest pixel.
    ///
    /// Used to align with models that emit coordinates on a fixed 0..1000 grid.
    /// Nothing in the engine calls this implicitly.
    pub fn rescale(self, from: ScreenResolution, to: ScreenResolution) -> Point {
        let sx = f64::from(to.width) / f64::from(from.width);
        let sy = f64::from(to.height) / f64::from(from.height);
        Point {
            x: (f64::from(self.x) * sx).round() as u32,
            y: (f64::from(self.y) * sy).round() as u32,
        }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum GeomError {
    #[error("resolution must be at least 1x1, got {width}x{height}")]
    EmptyResolution { width: u32, height: u32 },
    #[error("bounding box is inverted: ({x_min},{y_min})-({x_max},{y_max})")]
    InvertedBox {
        x_min: u32,
        y_min: u32,
        x_max: u32,
        y_max: u32,
    },
    #[error("bounding box ({x_max},{y_max}) exceeds screen {width}x{height}")]
    BoxOutsideScreen {
        x_max: u32,
        y_max: u32,
        width: u32,
        height: u32,
    },
}

/// Screen size in pixels. Both sides are at least one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawResolution", into = "RawResolution")]
pub struct ScreenResolution {
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
struct RawResolution {
    width: u32,
    height: u32,
}

impl TryFrom<RawResolution> for ScreenResolution {
    type Error = GeomError;
    fn try_from(r: RawResolution) -> Result<Self, Self::Error> {
        ScreenResolution::new(r.width, r.height)
    }
}

impl From<ScreenResolution> for RawResolution {
    fn from(r: ScreenResolution) -> Self {
        RawResolution {
            width: r.width,
            height: r.height,
        }
    }
}

impl ScreenResolution {
    pub fn new(width: u32, height: u32) -> Result<Self, GeomError> {
        if width == 0 || height == 0 {
            return Err(GeomError::EmptyResolution { width, height });
        }
        Ok(Self { width, height })
    }

    /// The 0..1000 grid some baselines emit coordinates on.
    pub const THOUSANDTHS: ScreenResolution = ScreenResolution {
        width: 1000,
        height: 1000,
    };

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Point divided component-wise by the screen size.
    pub fn normalize(&self, p: Point) -> (f64, f64) {
        (
            f64::from(p.x) / f64::from(self.width),
            f64::from(p.y) / f64::from(self.height),
        )
    }
}

/// Axis-aligned box in pixels; boundaries are inclusive.
///
/// Serialized as `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl TryFrom<[u32; 4]> for BBox {
    type Error = GeomError;
    fn try_from(v: [u32; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl BBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self, GeomError> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.check_ordered()?;
        Ok(b)
    }

    pub fn check_ordered(&self) -> Result<(), GeomError> {
        if self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(GeomError::InvertedBox {
                x_min: self.x_min,
                y_min: self.y_min,
                x_max: self.x_max,
                y_max: self.y_max,
            });
        }
        Ok(())
    }

    /// Ordered and inside `0..=width`, `0..=height`.
    pub fn check_within(&self, res: ScreenResolution) -> Result<(), GeomError> {
        self.check_ordered()?;
        if self.x_max > res.width() || self.y_max > res.height() {
            return Err(GeomError::BoxOutsideScreen {
                x_max: self.x_max,
                y_max: self.y_max,
                width: res.width(),
                height: res.height(),
            });
        }
        Ok(())
    }

    pub fn contains(&self, p: Point) -> bool {
        (self.x_min..=self.x_max).contains(&p.x) && (self.y_min..=self.y_max).contains(&p.y)
    }

    pub fn center(&self) -> Point {
        Point::new(
            self.x_min + (self.x_max - self.x_min) / 2,
            self.y_min + (self.y_max - self.y_min) / 2,
        )
    }
}
