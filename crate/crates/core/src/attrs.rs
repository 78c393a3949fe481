//! Discrete attributes of the synthetic shapes world.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

macro_rules! attr_enum {
    ($name:ident { $($variant:ident => $word:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: [$name; 3] = [$($name::$variant),+];

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }

            pub fn word(self) -> &'static str {
                match self {
                    $($name::$variant => $word),+
                }
            }

            fn from_word(w: &str) -> Option<Self> {
                match w {
                    $($word => Some($name::$variant),)+
                    _ => None,
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.word())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                Self::from_word(&s.trim().to_ascii_lowercase())
                    .ok_or_else(|| Error::arg(format!("unknown {} '{}'", stringify!($name).to_lowercase(), s)))
            }
        }
    };
}

attr_enum!(Shape { Circle => "circle", Square => "square", Triangle => "triangle" });
attr_enum!(Color { Red => "red", Green => "green", Blue => "blue" });
attr_enum!(Position { Left => "left", Center => "center", Right => "right" });

impl Color {
    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
        }
    }
}

/// Number of attribute slots and values per slot.
pub const SLOTS: usize = 3;
pub const VALUES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Attrs {
    pub shape: Shape,
    pub color: Color,
    pub position: Position,
}

impl Attrs {
    pub const COUNT: usize = 27;

    pub fn new(shape: Shape, color: Color, position: Position) -> Self {
        Self { shape, color, position }
    }

    /// All 27 tuples in index order.
    pub fn all() -> Vec<Attrs> {
        (0..Self::COUNT).map(Self::from_index).collect()
    }

    pub fn index(self) -> usize {
        (self.shape.index() * VALUES + self.color.index()) * VALUES + self.position.index()
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < Self::COUNT, "attribute index {i} out of range");
        Self { shape: Shape::ALL[i / 9], color: Color::ALL[(i / 3) % 3], position: Position::ALL[i % 3] }
    }

    /// Values per slot in (shape, color, position) order.
    pub fn slots(self) -> [usize; SLOTS] {
        [self.shape.index(), self.color.index(), self.position.index()]
    }

    pub fn caption(self) -> String {
        let place = match self.position {
            Position::Left => "on the left",
            Position::Center => "in the center",
            Position::Right => "on the right",
        };
        format!("a {} {} {}", self.color, self.shape, place)
    }

    pub fn prompt(self) -> AttrPrompt {
        AttrPrompt { shape: Some(self.shape), color: Some(self.color), position: Some(self.position) }
    }
}

impl fmt::Display for Attrs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.color, self.shape, self.position)
    }
}

impl FromStr for Attrs {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let p: AttrPrompt = s.parse()?;
        p.complete().ok_or_else(|| Error::arg(format!("'{s}' does not name shape, color and position")))
    }
}

/// A possibly partial attribute description, the toy stand-in for a text prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AttrPrompt {
    pub shape: Option<Shape>,
    pub color: Option<Color>,
    pub position: Option<Position>,
}

impl AttrPrompt {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_none() && self.color.is_none() && self.position.is_none()
    }

    pub fn complete(&self) -> Option<Attrs> {
        Some(Attrs::new(self.shape?, self.color?, self.position?))
    }

    /// Attribute words found in free text; everything else is ignored and a
    /// later word overrides an earlier one of the same slot.
    pub fn from_caption(text: &str) -> Self {
        let mut p = AttrPrompt::default();
        for word in text.split(|c: char| !c.is_ascii_alphabetic()).filter(|w| !w.is_empty()) {
            let word = word.to_ascii_lowercase();
            if let Some(v) = Shape::from_word(&word) {
                p.shape = Some(v);
            } else if let Some(v) = Color::from_word(&word) {
                p.color = Some(v);
            } else if let Some(v) = Position::from_word(&word) {
                p.position = Some(v);
            }
        }
        p
    }

    /// Per-slot value, `None` where unspecified.
    pub fn slots(&self) -> [Option<usize>; SLOTS] {
        [self.shape.map(Shape::index), self.color.map(Color::index), self.position.map(Position::index)]
    }
}

impl FromStr for AttrPrompt {
    type Err = Error;

    /// Accepts words such as `red circle left` or `color=red,shape=circle`.
    fn from_str(s: &str) -> Result<Self> {
        let mut p = AttrPrompt::default();
        for raw in s.split(|c: char| c.is_whitespace() || c == ',').filter(|w| !w.is_empty()) {
            let word = raw.rsplit('=').next().unwrap_or(raw).to_ascii_lowercase();
            if let Some(v) = Shape::from_word(&word) {
                p.shape = Some(v);
            } else if let Some(v) = Color::from_word(&word) {
                p.color = Some(v);
            } else if let Some(v) = Position::from_word(&word) {
                p.position = Some(v);
            } else {
                return Err(Error::arg(format!("unknown attribute word '{raw}'")));
            }
        }
        Ok(p)
    }
}

impl fmt::Display for AttrPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let words: Vec<&str> =
            [self.color.map(Color::word), self.shape.map(Shape::word), self.position.map(Position::word)]
                .into_iter()
                .flatten()
                .collect();
        f.write_str(&words.join(" "))
    }
}
