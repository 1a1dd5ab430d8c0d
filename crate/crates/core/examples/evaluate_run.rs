//! Score a TREC run against qrels.

use structret::metrics::{evaluate_run, Metric};
use structret::trec::{parse_qrels, parse_run};

const QRELS: &str = "\
q1 0 a 1
q1 0 c 1
q2 0 z 1
q3 0 m 0
q4 0 x 1
";

const RUN: &str = "\
q1 Q0 a 1 9.1 demo
q1 Q0 b 2 8.7 demo
q1 Q0 c 3 8.2 demo
q2 Q0 y 1 4.0 demo
q2 Q0 z 2 3.5 demo
";

fn main() -> structret::Result<()> {
    let qrels = parse_qrels(QRELS, "qrels")?;
    let run = parse_run(RUN, "run")?;
    // q3 has no relevant documents and is skipped; q4 is missing from the run
    // and scores zero
    let report = evaluate_run(&run, &qrels, &[1, 3, 5, 10], true)?;
    print!("{}", report.to_table());
    println!("ndcg@3 = {:.6}", report.get(Metric::Ndcg, 3).unwrap());
    println!("{}", report.to_json());
    Ok(())
}
