use rand::Rng;

use crate::diffcore::DropoutMask;
use crate::error::{Error, Result};

/// `M` dropout masks drawn once and frozen; component `w` uses mask `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    masks: Vec<DropoutMask>,
    fingerprint: u64,
}

fn fnv1a(masks: &[DropoutMask]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for m in masks {
        for byte in m.keep_prob().to_le_bytes() {
            eat(byte);
        }
        for layer in m.layers() {
            eat(0xff);
            for &bit in layer {
                eat(bit as u8);
            }
        }
    }
    h
}

impl MaskSet {
    /// Draws `m` pairwise-distinct masks, redrawing any duplicate.
    pub fn generate<R: Rng + ?Sized>(m: usize, widths: &[usize], keep_prob: f64, rng: &mut R) -> Result<Self> {
        if m == 0 {
            return Err(Error::Usage("mask set needs at least one mask".into()));
        }
        if keep_prob >= 1.0 && m > 1 {
            return Err(Error::Usage("keep_prob 1 cannot give distinct masks".into()));
        }
        let mut masks: Vec<DropoutMask> = Vec::with_capacity(m);
        let mut attempts = 0;
        while masks.len() < m {
            let cand = DropoutMask::generate(widths, keep_prob, rng)?;
            if masks.contains(&cand) {
                attempts += 1;
                if attempts > 1000 {
                    return Err(Error::Usage(format!(
                        "could not draw {m} distinct masks over widths {widths:?}"
                    )));
                }
                continue;
            }
            masks.push(cand);
        }
        Self::from_masks(masks)
    }

    pub fn from_masks(masks: Vec<DropoutMask>) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::Usage("mask set needs at least one mask".into()));
        }
        let fingerprint = fnv1a(&masks);
        Ok(Self { masks, fingerprint })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn get(&self, w: usize) -> Result<&DropoutMask> {
        self.masks.get(w).ok_or(Error::ComponentIndex {
            index: w,
            count: self.masks.len(),
        })
    }

    pub fn masks(&self) -> &[DropoutMask] {
        &self.masks
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Recomputes the fingerprint recorded at construction.
    pub fn verify(&self) -> Result<()> {
        if fnv1a(&self.masks) != self.fingerprint {
            return Err(Error::State("mask set changed after construction".into()));
        }
        Ok(())
    }
}
