use serde::{Deserialize, Serialize};

/// Axis-aligned box in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
}

impl Rect {
    pub fn new(x0: f32, y0: f32, x1: f32, y1: f32) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f32 {
        (self.x1 - self.x0).max(0.0)
    }

    pub fn height(&self) -> f32 {
        (self.y1 - self.y0).max(0.0)
    }

    pub fn area(&self) -> f32 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: f32, y: f32) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let r = Rect {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        };
        if r.x1 > r.x0 && r.y1 > r.y0 {
            Some(r)
        } else {
            None
        }
    }

    pub fn inflate(&self, margin: f32) -> Rect {
        Rect {
            x0: self.x0 - margin,
            y0: self.y0 - margin,
            x1: self.x1 + margin,
            y1: self.y1 + margin,
        }
    }
}

/// One decoded keypoint. `score == 0` marks an undetected keypoint; `size`
/// is the estimated joint extent in pixels and is positive whenever the
/// keypoint is detected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub score: f32,
    pub size: f32,
}

impl Keypoint {
    pub fn undetected() -> Self {
        Keypoint {
            x: 0.0,
            y: 0.0,
            score: 0.0,
            size: 0.0,
        }
    }

    pub fn is_detected(&self) -> bool {
        self.score > 0.0
    }
}

// Serialized as the compact [x, y, score, size] quadruple.
impl Serialize for Keypoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y, self.score, self.size].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Keypoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y, score, size] = <[f32; 4]>::deserialize(d)?;
        Ok(Keypoint { x, y, score, size })
    }
}

/// A decoded pose instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    #[serde(rename = "score")]
    pub instance_score: f32,
    pub keypoints: Vec<Keypoint>,
}

impl Pose {
    pub fn empty(n_keypoints: usize) -> Self {
        Pose {
            instance_score: 0.0,
            keypoints: vec![Keypoint::undetected(); n_keypoints],
        }
    }

    pub fn detected_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.is_detected()).count()
    }

    /// Bounding box over detected keypoints; `None` when nothing is detected.
    pub fn bbox(&self) -> Option<Rect> {
        let mut it = self.keypoints.iter().filter(|k| k.is_detected());
        let first = it.next()?;
        let mut r = Rect::new(first.x, first.y, first.x, first.y);
        for k in it {
            r.x0 = r.x0.min(k.x);
            r.y0 = r.y0.min(k.y);
            r.x1 = r.x1.max(k.x);
            r.y1 = r.y1.max(k.y);
        }
        Some(r)
    }
}

/// Annotation visibility, following the usual 0/1/2 convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    Absent,
    Hidden,
    Visible,
}

impl Visibility {
    pub fn from_flag(v: u8) -> Visibility {
        match v {
            0 => Visibility::Absent,
            1 => Visibility::Hidden,
            _ => Visibility::Visible,
        }
    }

    pub fn flag(&self) -> u8 {
        match self {
            Visibility::Absent => 0,
            Visibility::Hidden => 1,
            Visibility::Visible => 2,
        }
    }
}

/// One annotated keypoint: location, visibility and joint size in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtKeypoint {
    pub x: f32,
    pub y: f32,
    pub visibility: Visibility,
    pub size: f32,
}

impl GtKeypoint {
    pub fn absent() -> Self {
        GtKeypoint {
            x: 0.0,
            y: 0.0,
            visibility: Visibility::Absent,
            size: 0.0,
        }
    }

    pub fn is_labeled(&self) -> bool {
        self.visibility != Visibility::Absent
    }
}

// Serialized as [x, y, visibility_flag, size].
impl Serialize for GtKeypoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y, self.visibility.flag() as f32, self.size].serialize(s)
    }
}

impl<'de> Deserialize<'de> for GtKeypoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y, v, size] = <[f32; 4]>::deserialize(d)?;
        Ok(GtKeypoint {
            x,
            y,
            visibility: Visibility::from_flag(v as u8),
            size,
        })
    }
}

/// A ground-truth pose annotation plus any crowd regions where confidence
/// supervision is masked out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthAnnotation {
    pub keypoints: Vec<GtKeypoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub crowd_regions: Vec<Rect>,
}

impl GroundTruthAnnotation {
    pub fn new(keypoints: Vec<GtKeypoint>) -> Self {
        GroundTruthAnnotation {
            keypoints,
            crowd_regions: Vec::new(),
        }
    }

    pub fn labeled_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.is_labeled()).count()
    }

    /// Bounding box over labeled keypoints.
    pub fn bbox(&self) -> Option<Rect> {
        let mut it = self.keypoints.iter().filter(|k| k.is_labeled());
        let first = it.next()?;
        let mut r = Rect::new(first.x, first.y, first.x, first.y);
        for k in it {
            r.x0 = r.x0.min(k.x);
            r.y0 = r.y0.min(k.y);
            r.x1 = r.x1.max(k.x);
            r.y1 = r.y1.max(k.y);
        }
        Some(r)
    }
}
