//! Element masking: how many tags a ratio removes, and that every draw is
//! reproducible from (seed, document, draw id).

use structret::corpus::{mask_count, plan_mask, MaskPlan};
use structret::structml::render_masked;
use structret::{Element, StructuredDocument};

fn main() -> structret::Result<()> {
    println!("elements  1%  5%  10%  30%  50%");
    for n in [1, 4, 10, 17, 40, 200] {
        let counts: Vec<String> = [0.01, 0.05, 0.1, 0.3, 0.5]
            .iter()
            .map(|&r| format!("{:>3}", mask_count(r, n)))
            .collect();
        println!("{n:>8} {}", counts.join(" "));
    }

    let doc = StructuredDocument::new(
        "guide",
        vec![
            Element::new("VS Code setup", "title"),
            Element::new("Configure Jupyter", "h1"),
            Element::new("Install the extension", "h2"),
            Element::new("Pick a kernel then run a cell", "p"),
            Element::new("Restart if the kernel hangs", "li"),
        ],
    );
    let plan = MaskPlan::new(42, 0.3)?;
    println!();
    for draw in 0..4 {
        let mask = plan_mask(&doc, &plan, draw);
        println!("draw {draw} masks {:?}", mask.masked_indices);
        println!("  {}", render_masked(&doc, &mask)?);
    }
    assert_eq!(plan_mask(&doc, &plan, 2), plan_mask(&doc, &plan, 2));
    Ok(())
}
