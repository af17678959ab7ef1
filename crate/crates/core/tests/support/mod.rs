#![allow(dead_code)]

pub mod bt_suite;
pub mod fixtures;
pub mod kernels;
pub mod runs;
pub mod spatial;
