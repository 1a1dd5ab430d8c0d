//! Generate the synthetic benchmark, write it to disk and build training
//! examples with sampled negatives.
//!
//! `cargo run --example synthetic_dataset -- [out-dir]`

use structret::corpus::{build_training_set, make_synthetic_corpus};
use structret::structml::render_untagged;

fn main() -> structret::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("structret-synthetic"));
    let synthetic = make_synthetic_corpus(50, 9, 42)?;
    synthetic.write_to(&out)?;
    println!("wrote {} docs, {} queries to {}", synthetic.documents.len(), synthetic.queries.len(), out.display());

    let corpus = synthetic.corpus()?;
    let query = &synthetic.queries[0];
    let relevant = synthetic.qrels.relevant(&query.query_id).unwrap();
    println!("\nquery {}: {}", query.query_id, query.text);
    for doc in &corpus.docs()[..2] {
        let mark = if relevant.contains(&doc.doc_id) { "relevant" } else { "twin" };
        println!("[{mark}] {}", doc.doc_id);
        for e in &doc.elements[..3] {
            println!("    <{}> {}", e.tag, e.text);
        }
    }
    // both pages hold the same words; only their placement differs
    let mut a: Vec<_> = render_untagged(&corpus.docs()[0]).split(' ').map(String::from).collect();
    let mut b: Vec<_> = render_untagged(&corpus.docs()[1]).split(' ').map(String::from).collect();
    a.sort();
    b.sort();
    println!("same bag of words: {}", a == b);

    let examples = build_training_set(&corpus, &synthetic.queries, &synthetic.qrels, 8, 42)?;
    let first = &examples[0];
    println!(
        "\n{} training examples; first: {} -> {} with negatives {:?}",
        examples.len(),
        first.query_id,
        first.pos_doc_id,
        &first.neg_doc_ids[..3]
    );
    Ok(())
}
