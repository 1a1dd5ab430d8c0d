//! Max-over-chunks scoring of the untagged stream next to whole-document
//! vectors.

use structret::corpus::make_synthetic_corpus;
use structret::encoder::{EncoderConfig, EncoderModel};
use structret::metrics::evaluate_run;
use structret::retrieval::{build_index, chunk_scores, search_all, search_all_chunked, DEFAULT_CHUNK_LEN};
use structret::Variant;

fn main() -> structret::Result<()> {
    let synthetic = make_synthetic_corpus(30, 9, 5)?;
    let corpus = synthetic.corpus()?;
    let model = EncoderModel::random(&EncoderConfig::default(), 3)?;

    let q = model.embed_text(&synthetic.queries[0].text, 32);
    let doc = &corpus.docs()[0];
    println!("chunk scores of {} at length 16: {:?}", doc.doc_id, chunk_scores(&q, doc, &model, 16));

    let index = build_index(&corpus, &model, Variant::Untagged)?;
    let full = search_all(&synthetic.queries, &index, &model, 10)?;
    println!("\nwhole document (untrained)");
    print!("{}", evaluate_run(&full, &synthetic.qrels, &[10], false)?.to_table());
    for len in [DEFAULT_CHUNK_LEN, 16, 4] {
        let run = search_all_chunked(&synthetic.queries, &corpus, &model, len, 10)?;
        println!("chunks of {len}");
        print!("{}", evaluate_run(&run, &synthetic.qrels, &[10], false)?.to_table());
    }
    Ok(())
}
