//! Dyadic hierarchical-B GOP structure.

use serde::{Deserialize, Serialize};

use super::EncoderError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameKind {
    #[serde(rename = "KEY")]
    Key,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GopEntry {
    pub index: usize,
    pub level: u32,
    pub kind: FrameKind,
    pub forward: Option<usize>,
    pub backward: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GopSchedule {
    pub gop_size: usize,
    pub max_level: u32,
    pub entries: Vec<GopEntry>,
}

/// Key pictures sit at multiples of `gop_size`; the frame at offset `o`
/// inside a GOP gets level `log2(gop_size) - trailing_zeros(o)`. A trailing
/// partial GOP is closed by turning the last frame into a key picture.
pub fn build_gop_schedule(gop_size: usize, num_frames: usize) -> Result<GopSchedule, EncoderError> {
    if !gop_size.is_power_of_two() || gop_size > 32 {
        return Err(EncoderError::InvalidGop(gop_size));
    }
    if num_frames == 0 {
        return Err(EncoderError::EmptySource);
    }
    let max_level = gop_size.trailing_zeros();
    let level_of = |i: usize| -> u32 {
        let o = i % gop_size;
        if o == 0 || i == num_frames - 1 {
            0
        } else {
            max_level - o.trailing_zeros()
        }
    };
    let levels: Vec<u32> = (0..num_frames).map(level_of).collect();
    let entries = (0..num_frames)
        .map(|i| {
            let level = levels[i];
            if level == 0 {
                return GopEntry {
                    index: i,
                    level,
                    kind: FrameKind::Key,
                    forward: None,
                    backward: None,
                };
            }
            let forward = (0..i).rev().find(|&j| levels[j] < level);
            let backward = (i + 1..num_frames).find(|&j| levels[j] < level);
            GopEntry {
                index: i,
                level,
                kind: FrameKind::B,
                forward,
                backward,
            }
        })
        .collect();
    Ok(GopSchedule {
        gop_size,
        max_level,
        entries,
    })
}

impl GopSchedule {
    /// GOP by GOP: the closing key picture, then its B pictures by
    /// ascending level.
    pub fn decode_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.entries.len());
        let mut start = 0;
        while start < self.entries.len() {
            if start == 0 {
                order.push(0);
            }
            let end = (start + 1..self.entries.len())
                .find(|&j| self.entries[j].kind == FrameKind::Key)
                .unwrap_or(self.entries.len() - 1);
            if end == start {
                break;
            }
            order.push(end);
            let mut inner: Vec<&GopEntry> = self.entries[start + 1..end].iter().collect();
            inner.sort_by_key(|e| (e.level, e.index));
            order.extend(inner.iter().map(|e| e.index));
            start = end;
        }
        order
    }

    /// Frame indices grouped by temporal level. Frames within a group only
    /// reference earlier groups.
    pub fn by_level(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.max_level as usize + 1];
        for e in &self.entries {
            groups[e.level as usize].push(e.index);
        }
        groups
    }

    /// Keeps temporal levels `0..=max_level` only.
    pub fn truncate_levels(&self, max_level: u32) -> GopSchedule {
        GopSchedule {
            gop_size: self.gop_size,
            max_level: self.max_level.min(max_level),
            entries: self.entries.iter().filter(|e| e.level <= max_level).copied().collect(),
        }
    }

    pub fn entry(&self, index: usize) -> Option<&GopEntry> {
        self.entries.iter().find(|e| e.index == index)
    }

    /// Every B picture has both references present and strictly below it.
    pub fn is_valid(&self) -> bool {
        self.entries.iter().all(|e| match e.kind {
            FrameKind::Key => e.level == 0,
            FrameKind::B => [e.forward, e.backward].iter().all(|r| {
                r.and_then(|j| self.entry(j)).is_some_and(|rf| rf.level < e.level)
            }),
        })
    }
}
