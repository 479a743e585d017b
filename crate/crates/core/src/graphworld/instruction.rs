//! Templated route descriptions.
//!
//! Every hop contributes a turn word and a landmark word. Turn words come in
//! two synonyms chosen by the instruction seed; the landmark is the index of
//! the largest latent component of the node the hop arrives at.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NavGraph, INITIAL_HEADING};
use crate::error::{Error, Result};
use crate::math::{argmax, wrap_angle};

pub mod vocab {
    pub const SIZE: usize = 64;
    pub const MAX_LEN: usize = 40;
    pub const PAD: u32 = 0;
    pub const BOS: u32 = 1;
    pub const EOS: u32 = 2;
    pub const STOP_WORD: u32 = 3;
    /// Two synonyms per [`super::Direction`].
    pub const DIRECTION_BASE: u32 = 4;
    pub const LANDMARK_BASE: u32 = 16;
    pub const NUM_LANDMARKS: u32 = 32;
}

/// Quantized turn relative to the current heading.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Straight,
    Left,
    Right,
    Around,
    Up,
    Down,
}

impl Direction {
    /// Planar worlds only produce the first four; `Up`/`Down` keep their
    /// vocabulary slots for worlds with elevation changes.
    pub fn from_turn(turn: f64) -> Self {
        let t = wrap_angle(turn);
        let a = libm::fabs(t);
        if a <= PI / 6.0 {
            Direction::Straight
        } else if a > 5.0 * PI / 6.0 {
            Direction::Around
        } else if t > 0.0 {
            Direction::Left
        } else {
            Direction::Right
        }
    }

    pub fn index(self) -> u32 {
        self as u32
    }

    pub fn token(self, synonym: u32) -> u32 {
        vocab::DIRECTION_BASE + 2 * self.index() + (synonym & 1)
    }
}

/// Token sequence `w_0 .. w_l`, framed by BOS and EOS.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub tokens: Vec<u32>,
}

impl Instruction {
    pub fn new(tokens: Vec<u32>) -> Self {
        Self { tokens }
    }

    /// `l`, the index of the last token.
    pub fn len(&self) -> usize {
        self.tokens.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Empty("instruction"));
        }
        match self.tokens.iter().find(|&&t| t as usize >= vocab_size) {
            Some(&token) => Err(Error::OutOfVocabulary {
                token,
                vocab: vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// Full structural check: vocabulary, framing and length bound.
    pub fn validate(&self, vocab_size: usize, max_len: usize) -> Result<()> {
        self.check_vocab(vocab_size)?;
        if self.tokens.len() < 2 || self.tokens.len() > max_len {
            return Err(Error::InvalidArgument("instruction length out of range".into()));
        }
        if self.tokens[0] != vocab::BOS || *self.tokens.last().unwrap() != vocab::EOS {
            return Err(Error::InvalidArgument("instruction must be BOS .. EOS".into()));
        }
        Ok(())
    }
}

pub fn landmark_token(graph: &NavGraph, node: usize) -> u32 {
    let idx = argmax(&graph.nodes()[node].latent) as u32;
    vocab::LANDMARK_BASE + idx % vocab::NUM_LANDMARKS
}

pub fn synth_instruction(path: &[usize], graph: &NavGraph, seed: u64) -> Result<Instruction> {
    if path.is_empty() {
        return Err(Error::Empty("path"));
    }
    for &n in path {
        graph.node(n)?;
    }
    if path.len() == 1 {
        return Ok(Instruction::new([vocab::BOS, vocab::STOP_WORD, vocab::EOS].into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens = Vec::with_capacity(2 * path.len() + 2);
    tokens.push(vocab::BOS);
    let mut heading = INITIAL_HEADING;
    for hop in path.windows(2) {
        let bearing = graph.bearing(hop[0], hop[1]);
        let dir = Direction::from_turn(bearing - heading);
        tokens.push(dir.token(rng.random::<u32>()));
        tokens.push(landmark_token(graph, hop[1]));
        heading = graph.heading_after(hop[0], hop[1]);
    }
    tokens.push(vocab::EOS);
    Ok(Instruction::new(tokens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphworld::generate_world;

    #[test]
    fn single_node_path_is_stop() {
        let g = generate_world(1, 6, 2.0).unwrap();
        let i = synth_instruction(&[3], &g, 0).unwrap();
        assert_eq!(i.tokens, vec![vocab::BOS, vocab::STOP_WORD, vocab::EOS]);
        assert!(synth_instruction(&[], &g, 0).is_err());
    }

    #[test]
    fn instructions_are_deterministic() {
        let g = generate_world(1, 10, 3.0).unwrap();
        let path = g.shortest_path(0, 7).unwrap();
        assert_eq!(
            synth_instruction(&path, &g, 42).unwrap(),
            synth_instruction(&path, &g, 42).unwrap()
        );
    }

    #[test]
    fn three_hop_path_matches_quantization_oracle() {
        // Hand-built zig-zag: east, then north (left turn), then west (left).
        let mut nodes = alloc::vec::Vec::new();
        for (i, p) in [[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]].into_iter().enumerate() {
            let mut latent = alloc::vec![0.0; 32];
            latent[i * 3] = 1.0;
            nodes.push(super::super::NodeRecord { id: i, pos: p, latent });
        }
        let g = NavGraph::from_parts(0, nodes, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let path = [0, 1, 2, 3];
        let ins = synth_instruction(&path, &g, 9).unwrap();
        assert_eq!(ins.tokens.len(), 2 + 2 * 3);
        assert_eq!(ins.tokens[0], vocab::BOS);
        assert_eq!(*ins.tokens.last().unwrap(), vocab::EOS);

        let mut heading = 0.0f64;
        for (k, hop) in path.windows(2).enumerate() {
            let (a, b) = (g.node(hop[0]).unwrap().pos, g.node(hop[1]).unwrap().pos);
            let bearing = (b[1] - a[1]).atan2(b[0] - a[0]);
            let mut turn = (bearing - heading).to_degrees();
            while turn > 180.0 {
                turn -= 360.0;
            }
            while turn <= -180.0 {
                turn += 360.0;
            }
            let expected = if turn.abs() <= 30.0 {
                0
            } else if turn.abs() > 150.0 {
                3
            } else if turn > 0.0 {
                1
            } else {
                2
            };
            let dir_tok = ins.tokens[1 + 2 * k];
            assert_eq!((dir_tok - vocab::DIRECTION_BASE) / 2, expected);
            assert_eq!(ins.tokens[2 + 2 * k], vocab::LANDMARK_BASE + 3 * hop[1] as u32);
            heading = bearing;
        }
    }

    #[test]
    fn validation_catches_bad_sequences() {
        assert!(Instruction::new(alloc::vec![1, 70, 2]).check_vocab(64).is_err());
        assert!(Instruction::new(alloc::vec![]).check_vocab(64).is_err());
        assert!(Instruction::new(alloc::vec![1, 5, 2]).validate(64, 40).is_ok());
        assert!(Instruction::new(alloc::vec![5, 2]).validate(64, 40).is_err());
    }
}
