use serde::{Deserialize, Serialize};

/// Ground truth of a video or sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Natural,
    Manipulated,
}

impl Label {
    /// CSV code: 0 = natural, 1 = manipulated.
    pub fn code(self) -> u8 {
        match self {
            Label::Natural => 0,
            Label::Manipulated => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Label> {
        match code {
            0 => Some(Label::Natural),
            1 => Some(Label::Manipulated),
            _ => None,
        }
    }

    pub fn is_manipulated(self) -> bool {
        self == Label::Manipulated
    }
}
