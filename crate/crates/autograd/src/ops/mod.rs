mod elementwise;
mod linalg;
mod nn;
mod reduce;
mod shape;
