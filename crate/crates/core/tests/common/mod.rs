#![allow(dead_code)]

pub mod http;
pub mod live;
pub mod oracle;
pub mod protocol;
pub mod repair;
