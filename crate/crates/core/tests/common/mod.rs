#![allow(dead_code)]

pub mod protocol;
pub mod synth;
