use crate::error::{Error, Result};
use crate::rng::{uniform_index, Rng};

/// Draws fixed-length episodes uniformly over every valid start position of
/// every clip, so longer clips contribute proportionally more episodes.
#[derive(Clone, Debug)]
pub struct EpisodeSampler {
    /// Cumulative count of valid starts, one entry per clip.
    cumulative: Vec<usize>,
    episode_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Episode {
    pub clip: usize,
    pub start: usize,
    pub len: usize,
}

impl EpisodeSampler {
    /// `clip_lengths` are frame counts; clips shorter than `episode_len`
    /// contribute no starts.
    pub fn new(clip_lengths: &[usize], episode_len: usize) -> Result<Self> {
        if episode_len == 0 {
            return Err(Error::input("episode length must be positive"));
        }
        let mut total = 0;
        let cumulative = clip_lengths
            .iter()
            .map(|&n| {
                total += (n + 1).saturating_sub(episode_len);
                total
            })
            .collect();
        if total == 0 {
            return Err(Error::input(format!(
                "no clip is long enough for episodes of {episode_len} frames"
            )));
        }
        Ok(Self {
            cumulative,
            episode_len,
        })
    }

    pub fn valid_starts(&self) -> usize {
        *self.cumulative.last().unwrap_or(&0)
    }

    pub fn episode_len(&self) -> usize {
        self.episode_len
    }

    /// Maps a flat start index to its episode.
    pub fn episode(&self, index: usize) -> Episode {
        let clip = self.cumulative.partition_point(|&c| c <= index);
        let before = if clip == 0 { 0 } else { self.cumulative[clip - 1] };
        Episode {
            clip,
            start: index - before,
            len: self.episode_len,
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Episode {
        self.episode(uniform_index(rng, self.valid_starts()))
    }
}
