pub mod evaluate;
pub mod generate;
pub mod review;
pub mod score;
pub mod select;
pub mod train;
