//! Temporal per-pixel mixture background subtraction.
//!
//! Each pixel keeps up to `max_components` Gaussians over its grayscale
//! history. A sample within `match_sigmas` standard deviations of a
//! component updates it; otherwise the weakest component is replaced by one
//! centered at the sample. A pixel is background when the component it
//! matched belongs to the heaviest-first prefix of components whose weights
//! reach `background_ratio`.

use serde::{Deserialize, Serialize};

use super::gmm::Component;
use super::SegmentationError;
use crate::imaging::{gray_plane, ImageBuffer};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundParams<T> {
    pub max_components: usize,
    pub learning_rate: T,
    pub match_sigmas: T,
    pub background_ratio: T,
    /// Variance given to freshly created components.
    pub initial_variance: T,
    pub min_variance: T,
}

impl<T: Real> Default for BackgroundParams<T> {
    fn default() -> Self {
        Self {
            max_components: 3,
            learning_rate: T::lit(0.05),
            match_sigmas: T::lit(2.5),
            background_ratio: T::lit(0.6),
            initial_variance: T::lit(225.0),
            min_variance: T::lit(4.0),
        }
    }
}

/// Binary foreground mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    pub width: u32,
    pub height: u32,
    pub mask: Vec<bool>,
}

impl ForegroundMask {
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.mask[y as usize * self.width as usize + x as usize]
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Stateful model; frames must be applied in order by a single owner.
#[derive(Debug, Clone)]
pub struct BackgroundModel<T> {
    params: BackgroundParams<T>,
    dims: Option<(u32, u32)>,
    /// `max_components` slots per pixel, heaviest first.
    slots: Vec<Component<T>>,
    counts: Vec<u8>,
}

impl<T: Real> BackgroundModel<T> {
    pub fn new(params: BackgroundParams<T>) -> Self {
        assert!(params.max_components >= 1 && params.max_components <= 255);
        Self {
            params,
            dims: None,
            slots: Vec::new(),
            counts: Vec::new(),
        }
    }

    pub fn params(&self) -> &BackgroundParams<T> {
        &self.params
    }

    pub fn dimensions(&self) -> Option<(u32, u32)> {
        self.dims
    }

    /// Components currently held for pixel `(x, y)`, heaviest first.
    pub fn pixel_components(&self, x: u32, y: u32) -> &[Component<T>] {
        let (w, _) = self.dims.expect("model not seeded");
        let i = y as usize * w as usize + x as usize;
        let m = self.params.max_components;
        &self.slots[i * m..i * m + self.counts[i] as usize]
    }

    fn seed(&mut self, gray: &[u8], dims: (u32, u32)) {
        let m = self.params.max_components;
        self.dims = Some(dims);
        self.slots = vec![
            Component {
                weight: T::zero(),
                mean: T::zero(),
                variance: self.params.initial_variance,
            };
            gray.len() * m
        ];
        self.counts = vec![1; gray.len()];
        for (i, &g) in gray.iter().enumerate() {
            self.slots[i * m] = Component {
                weight: T::one(),
                mean: T::from_u8(g).unwrap(),
                variance: self.params.initial_variance,
            };
        }
    }

    /// Feed the next frame; returns its foreground mask. The first frame
    /// seeds the model and is reported as all background.
    pub fn update(&mut self, frame: &ImageBuffer) -> Result<ForegroundMask, SegmentationError> {
        let dims = frame.dimensions();
        let gray = gray_plane(frame);
        let mask = match self.dims {
            None => {
                self.seed(&gray, dims);
                vec![false; gray.len()]
            }
            Some(expected) if expected != dims => {
                return Err(SegmentationError::DimensionMismatch { expected, actual: dims })
            }
            Some(_) => {
                let m = self.params.max_components;
                let p = self.params;
                gray.iter()
                    .enumerate()
                    .map(|(i, &g)| {
                        let n = &mut self.counts[i];
                        update_pixel(&p, &mut self.slots[i * m..(i + 1) * m], n, T::from_u8(g).unwrap())
                    })
                    .collect()
            }
        };
        Ok(ForegroundMask {
            width: dims.0,
            height: dims.1,
            mask,
        })
    }
}

/// Returns true when the sample is foreground.
fn update_pixel<T: Real>(p: &BackgroundParams<T>, slots: &mut [Component<T>], count: &mut u8, x: T) -> bool {
    let n = *count as usize;
    let alpha = p.learning_rate;

    let mut matched: Option<usize> = None;
    let mut best_rank = T::neg_infinity();
    for (j, c) in slots[..n].iter().enumerate() {
        let d = x - c.mean;
        if d * d <= p.match_sigmas * p.match_sigmas * c.variance {
            let rank = c.weight / c.variance.sqrt();
            if rank > best_rank {
                best_rank = rank;
                matched = Some(j);
            }
        }
    }

    for (j, c) in slots[..n].iter_mut().enumerate() {
        let hit = if Some(j) == matched { alpha } else { T::zero() };
        c.weight = (T::one() - alpha) * c.weight + hit;
    }

    let active = match matched {
        Some(j) => {
            let c = &mut slots[j];
            c.mean = (T::one() - alpha) * c.mean + alpha * x;
            let d = x - c.mean;
            c.variance = ((T::one() - alpha) * c.variance + alpha * d * d).max(p.min_variance);
            j
        }
        None => {
            let fresh = Component {
                weight: alpha,
                mean: x,
                variance: p.initial_variance,
            };
            if n < slots.len() {
                slots[n] = fresh;
                *count += 1;
                n
            } else {
                // slots are kept heaviest first
                slots[n - 1] = fresh;
                n - 1
            }
        }
    };

    let n = *count as usize;
    let total = slots[..n].iter().fold(T::zero(), |a, c| a + c.weight);
    for c in &mut slots[..n] {
        c.weight = c.weight / total;
    }

    // stable insertion sort by weight, tracking the active slot
    let mut active = active;
    for i in 1..n {
        let mut j = i;
        while j > 0 && slots[j].weight > slots[j - 1].weight {
            slots.swap(j, j - 1);
            if active == j {
                active = j - 1;
            } else if active == j - 1 {
                active = j;
            }
            j -= 1;
        }
    }

    if matched.is_none() {
        return true;
    }
    let mut cumulative = T::zero();
    for (j, c) in slots[..n].iter().enumerate() {
        if j == active {
            return false;
        }
        cumulative = cumulative + c.weight;
        if cumulative >= p.background_ratio {
            break;
        }
    }
    true
}
