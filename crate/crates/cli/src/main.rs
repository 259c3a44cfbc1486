fn main() { println!("{}", pdet_core::tensor::probe()); }
