pub mod dcf;
pub mod gadgets;
pub mod prg;
