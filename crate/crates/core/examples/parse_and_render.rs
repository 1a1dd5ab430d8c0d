//! Sanitize a messy HTML page down to structural tags, parse it into
//! elements and print the three renderings the trainer sees.

use structret::structml::{parse_html, render_masked, render_tagged, render_untagged, sanitize_html};
use structret::MaskedDocument;

const PAGE: &str = r#"<!DOCTYPE html>
<html><head><title> Install   Jupyter in VS Code </title>
<script>track("<p>not text</p>")</script></head>
<body>
  <nav class="menu"><a href="/">Home</a></nav>
  <h1 id="top">Configure Jupyter</h1>
  <!-- ad slot -->
  <p>Open the <b>Extensions</b> view and search for <code>jupyter</code>.</p>
  <ul><li>Pick a kernel</li><li>Run a cell</li></ul>
  <div>Stray text outside any structural tag</div>
</body></html>"#;

fn main() -> structret::Result<()> {
    let clean = sanitize_html(PAGE);
    println!("sanitized:\n{clean}\n");

    let doc = parse_html("jupyter-guide", &clean)?;
    for (i, e) in doc.elements.iter().enumerate() {
        println!("{i:>2} {:<6} {}", e.tag, e.text);
    }

    println!("\ntagged:   {}", render_tagged(&doc));
    println!("untagged: {}", render_untagged(&doc));
    let masked = MaskedDocument::new(doc.doc_id.clone(), [0, 2]);
    println!("masked:   {}", render_masked(&doc, &masked)?);

    match parse_html("broken", "<h1>never closed") {
        Err(e) => println!("\nunclosed tag: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
