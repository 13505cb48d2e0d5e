//! The 21-keypoint hand layout shared by annotations, metrics and losses.
//!
//! Order: wrist, then thumb, index, middle, ring and pinky, each listed from
//! the finger base to the tip.
//!
//! | index | keypoint   | index | keypoint   |
//! |-------|------------|-------|------------|
//! | 0     | wrist      | 11    | middle_dip |
//! | 1     | thumb_cmc  | 12    | middle_tip |
//! | 2     | thumb_mcp  | 13    | ring_mcp   |
//! | 3     | thumb_ip   | 14    | ring_pip   |
//! | 4     | thumb_tip  | 15    | ring_dip   |
//! | 5     | index_mcp  | 16    | ring_tip   |
//! | 6     | index_pip  | 17    | pinky_mcp  |
//! | 7     | index_dip  | 18    | pinky_pip  |
//! | 8     | index_tip  | 19    | pinky_dip  |
//! | 9     | middle_mcp | 20    | pinky_tip  |
//! | 10    | middle_pip |       |            |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const NUM_KEYPOINTS: usize = 21;
pub const WRIST: usize = 0;
pub const MIDDLE_MCP: usize = 9;

pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "wrist",
    "thumb_cmc",
    "thumb_mcp",
    "thumb_ip",
    "thumb_tip",
    "index_mcp",
    "index_pip",
    "index_dip",
    "index_tip",
    "middle_mcp",
    "middle_pip",
    "middle_dip",
    "middle_tip",
    "ring_mcp",
    "ring_pip",
    "ring_dip",
    "ring_tip",
    "pinky_mcp",
    "pinky_pip",
    "pinky_dip",
    "pinky_tip",
];

/// One annotated 2D keypoint. `occluded` is only meaningful when `exists`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointLabel<T> {
    pub u: T,
    pub v: T,
    pub exists: bool,
    pub occluded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    All,
    Visible,
    Occluded,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::All, Split::Visible, Split::Occluded];

    /// Whether an existing keypoint with the given occlusion flag belongs
    /// to this split.
    pub fn admits(self, occluded: bool) -> bool {
        match self {
            Split::All => true,
            Split::Visible => !occluded,
            Split::Occluded => occluded,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::All => "all",
            Split::Visible => "visible",
            Split::Occluded => "occluded",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" => Ok(Split::All),
            "visible" => Ok(Split::Visible),
            "occluded" => Ok(Split::Occluded),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}
