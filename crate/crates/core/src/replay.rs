//! Anti-replay sliding windows over 32-bit sequence numbers.
//!
//! Both strategies implement the same acceptance rule: a sequence number is
//! accepted iff it has not been accepted before and lies within `W` of the
//! highest accepted one, i.e. `seq + W > highest`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("replay window size {0} is not a positive multiple of 32")]
pub struct WindowSizeError(pub usize);

pub const DEFAULT_WINDOW: usize = 1024;

pub trait ReplayWindow: Send + fmt::Debug {
    /// Registered strategy name.
    fn name(&self) -> &'static str;

    fn size(&self) -> usize;

    /// Whether `seq` would be accepted, without recording it.
    fn check(&self, seq: u32) -> bool;

    /// Accepts and records `seq`, or rejects it leaving the window unchanged.
    fn update(&mut self, seq: u32) -> bool;

    fn highest(&self) -> Option<u32>;
}

fn validate(w: usize) -> Result<usize, WindowSizeError> {
    if w == 0 || w % 32 != 0 {
        Err(WindowSizeError(w))
    } else {
        Ok(w)
    }
}

/// Block bitmap in the style of RFC 6479.
///
/// The ring holds `W/32 + 1` blocks so that a full `W` numbers behind the
/// highest remain addressable after the block holding `highest` is reused.
/// Advancing clears whole blocks instead of shifting bits.
#[derive(Debug, Clone)]
pub struct BitmapWindow {
    w: u64,
    highest: Option<u64>,
    blocks: Vec<u32>,
}

impl BitmapWindow {
    pub fn new(w: usize) -> Result<Self, WindowSizeError> {
        let w = validate(w)?;
        Ok(BitmapWindow { w: w as u64, highest: None, blocks: vec![0; w / 32 + 1] })
    }

    fn slot(&self, seq: u64) -> (usize, u32) {
        (((seq >> 5) % self.blocks.len() as u64) as usize, 1u32 << (seq & 31))
    }
}

impl ReplayWindow for BitmapWindow {
    fn name(&self) -> &'static str {
        "rfc6479"
    }

    fn size(&self) -> usize {
        self.w as usize
    }

    fn check(&self, seq: u32) -> bool {
        let seq = seq as u64;
        match self.highest {
            None => true,
            Some(h) if seq > h => true,
            Some(h) if h - seq >= self.w => false,
            Some(_) => {
                let (block, bit) = self.slot(seq);
                self.blocks[block] & bit == 0
            }
        }
    }

    fn update(&mut self, seq: u32) -> bool {
        if !self.check(seq) {
            return false;
        }
        let seq = seq as u64;
        match self.highest {
            None => {
                self.blocks.iter_mut().for_each(|b| *b = 0);
                self.highest = Some(seq);
            }
            Some(h) if seq > h => {
                let n = self.blocks.len() as u64;
                let advance = ((seq >> 5) - (h >> 5)).min(n);
                for i in 1..=advance {
                    let idx = (((h >> 5) + i) % n) as usize;
                    self.blocks[idx] = 0;
                }
                self.highest = Some(seq);
            }
            Some(_) => {}
        }
        let (block, bit) = self.slot(seq);
        self.blocks[block] |= bit;
        true
    }

    fn highest(&self) -> Option<u32> {
        self.highest.map(|h| h as u32)
    }
}

/// Shifting bitmap in the style of RFC 2401 appendix C, generalized to `W`
/// bits. Bit `i` of the bitmap records `highest - i`.
#[derive(Debug, Clone)]
pub struct ShiftWindow {
    w: usize,
    highest: Option<u32>,
    words: Vec<u64>,
}

impl ShiftWindow {
    pub fn new(w: usize) -> Result<Self, WindowSizeError> {
        let w = validate(w)?;
        Ok(ShiftWindow { w, highest: None, words: vec![0; w.div_ceil(64)] })
    }

    fn bit(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    fn shift_left(&mut self, by: usize) {
        if by >= self.w {
            self.words.iter_mut().for_each(|x| *x = 0);
            return;
        }
        let (word_shift, bit_shift) = (by / 64, by % 64);
        for i in (0..self.words.len()).rev() {
            let hi = i.checked_sub(word_shift).map_or(0, |j| self.words[j]);
            let lo = i.checked_sub(word_shift + 1).map_or(0, |j| self.words[j]);
            self.words[i] =
                if bit_shift == 0 { hi } else { (hi << bit_shift) | (lo >> (64 - bit_shift)) };
        }
        // Bits at positions >= w are never read, but keep them clear.
        let tail = self.words.len() * 64 - self.w;
        if tail > 0 {
            let last = self.words.len() - 1;
            self.words[last] &= u64::MAX >> tail;
        }
    }
}

impl ReplayWindow for ShiftWindow {
    fn name(&self) -> &'static str {
        "rfc2401"
    }

    fn size(&self) -> usize {
        self.w
    }

    fn check(&self, seq: u32) -> bool {
        match self.highest {
            None => true,
            Some(h) if seq > h => true,
            Some(h) => {
                let diff = (h - seq) as usize;
                diff < self.w && !self.bit(diff)
            }
        }
    }

    fn update(&mut self, seq: u32) -> bool {
        if !self.check(seq) {
            return false;
        }
        match self.highest {
            None => {
                self.words.iter_mut().for_each(|x| *x = 0);
                self.highest = Some(seq);
                self.set(0);
            }
            Some(h) if seq > h => {
                self.shift_left((seq - h) as usize);
                self.highest = Some(seq);
                self.set(0);
            }
            Some(h) => self.set((h - seq) as usize),
        }
        true
    }

    fn highest(&self) -> Option<u32> {
        self.highest
    }
}
