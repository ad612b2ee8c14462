//! Regenerates `data/corpus.smi`.
use molham::oracle::{generate_corpus, CORPUS_SEED, CORPUS_SIZE};

fn main() {
    let corpus = generate_corpus(CORPUS_SIZE, CORPUS_SEED);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/corpus.smi");
    std::fs::write(path, corpus.join("\n") + "\n").expect("write corpus");
    println!("{} molecules -> {path}", corpus.len());
}
